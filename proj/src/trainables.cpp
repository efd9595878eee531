#include "benchkit/trainables.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <mutex>
#include <numeric>

extern char **environ;

namespace benchkit {

std::string_view to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::naive_bayes: return "naive_bayes";
        case EncoderKind::softmax_regression: return "softmax_regression";
        case EncoderKind::mlp: return "mlp";
        case EncoderKind::external: return "external";
    }
    return "?";
}

std::optional<EncoderKind> encoder_kind_from_string(std::string_view s) {
    if (s == "naive_bayes") return EncoderKind::naive_bayes;
    if (s == "softmax_regression") return EncoderKind::softmax_regression;
    if (s == "mlp") return EncoderKind::mlp;
    if (s == "external") return EncoderKind::external;
    return std::nullopt;
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

std::optional<OptimizerKind> optimizer_kind_from_string(std::string_view s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

void adam_update(TrainState &state, std::span<const Tensor> grads, double lr, const AdamSettings &settings) {
    if (grads.size() != state.weights.size() || state.m.size() != state.weights.size() ||
        state.v.size() != state.weights.size()) {
        throw Error("adam: gradient/moment count does not match weights");
    }
    ++state.step;
    const auto t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(settings.beta1, t);
    const double c2 = 1.0 - std::pow(settings.beta2, t);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto &w = state.weights[i].data;
        auto &m = state.m[i].data;
        auto &v = state.v[i].data;
        const auto &g = grads[i].data;
        if (g.size() != w.size()) {
            throw Error("adam: gradient shape mismatch");
        }
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = settings.beta1 * m[j] + (1.0 - settings.beta1) * g[j];
            v[j] = settings.beta2 * v[j] + (1.0 - settings.beta2) * g[j] * g[j];
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            w[j] -= lr * m_hat / (std::sqrt(v_hat) + settings.eps);
        }
    }
}

void sgd_update(TrainState &state, std::span<const Tensor> grads, double lr) {
    if (grads.size() != state.weights.size()) {
        throw Error("sgd: gradient count does not match weights");
    }
    ++state.step;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto &w = state.weights[i].data;
        const auto &g = grads[i].data;
        for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] -= lr * g[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Trainable base
// ---------------------------------------------------------------------------

std::vector<Prediction> Trainable::predict_proba(std::span<const SparseVector> xs) const {
    std::vector<Prediction> out;
    out.reserve(xs.size());
    for (const auto &x : xs) {
        out.push_back(predict_proba(x));
    }
    return out;
}

std::string Trainable::metadata() const {
    return json{{"kind", std::string(to_string(kind()))}, {"feature_dim", feature_dim_}, {"n_classes", n_classes_}}.dump();
}

std::size_t Trainable::param_bytes() const {
    std::size_t n = 0;
    for (const auto &w : state_.weights) {
        n += w.size();
    }
    return n * sizeof(double) + metadata().size();
}

void Trainable::check_dim(const SparseVector &x) const {
    if (!x.empty() && x.back().index >= feature_dim_) {
        throw Error(fmt::format("feature index {} out of range for dimension {}", x.back().index, feature_dim_));
    }
}

namespace {

Tensor xavier(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out, Rng &rng) {
    Tensor t(rows, cols);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double &w : t.data) {
        w = rng.uniform(-a, a);
    }
    return t;
}

double log_softmax_at(std::span<const double> z, std::size_t k) {
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (const double v : z) {
        s += std::exp(v - mx);
    }
    return z[k] - mx - std::log(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Naive Bayes
// ---------------------------------------------------------------------------

NaiveBayes::NaiveBayes(std::size_t feature_dim, std::size_t n_classes) : Trainable(feature_dim, n_classes) {
    state_.weights.emplace_back(feature_dim, n_classes);
    state_.weights.emplace_back(1, n_classes);
}

EpochStats NaiveBayes::fit_epoch(std::span<const SparseVector> x, std::span<const int> y, const EpochOptions &opts) {
    if (x.empty() || x.size() != y.size()) {
        throw TrialFailure("naive bayes needs a non-empty training split");
    }
    const std::size_t batches = (x.size() + opts.batch_size - 1) / opts.batch_size;
    if (state_.epochs_done == 0) {
        auto &counts = state_.weights[0];
        auto &priors = state_.weights[1];
        for (std::size_t i = 0; i < x.size(); ++i) {
            check_dim(x[i]);
            const auto c = static_cast<std::size_t>(y[i]);
            priors.data[c] += 1.0;
            for (const auto &e : x[i]) {
                counts.at(e.index, c) += e.value;
            }
        }
        cached_loss_ = mean_cross_entropy(predict_proba(x), y);
    }
    ++state_.epochs_done;
    return {*cached_loss_, batches};
}

Prediction NaiveBayes::predict_proba(const SparseVector &x) const {
    check_dim(x);
    const auto &counts = state_.weights[0];
    const auto &priors = state_.weights[1];
    const double n_docs = std::accumulate(priors.data.begin(), priors.data.end(), 0.0);
    const auto c = static_cast<double>(n_classes_);
    const auto d = static_cast<double>(feature_dim_);
    std::vector<double> logp(n_classes_);
    for (std::size_t k = 0; k < n_classes_; ++k) {
        double total = 0.0;
        for (std::size_t f = 0; f < feature_dim_; ++f) {
            total += counts.at(f, k);
        }
        double lp = std::log((priors.data[k] + 1.0) / (n_docs + c));
        for (const auto &e : x) {
            lp += e.value * std::log((counts.at(e.index, k) + 1.0) / (total + d));
        }
        logp[k] = lp;
    }
    return Prediction::from_logits(logp);
}

// ---------------------------------------------------------------------------
// Gradient models
// ---------------------------------------------------------------------------

void GradientModel::init_moments() {
    state_.m.clear();
    state_.v.clear();
    for (const auto &w : state_.weights) {
        state_.m.emplace_back(w.rows, w.cols);
        state_.v.emplace_back(w.rows, w.cols);
    }
}

EpochStats GradientModel::fit_epoch(std::span<const SparseVector> x, std::span<const int> y, const EpochOptions &opts) {
    if (x.empty() || x.size() != y.size()) {
        throw TrialFailure("training needs a non-empty training split");
    }
    if (opts.batch_size == 0) {
        throw TrialFailure("batch_size must be >= 1");
    }
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    if (opts.shuffle) {
        Rng rng(state_.seed ^ splitmix64(state_.epochs_done + 1));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.index(i)]);
        }
    }
    std::vector<Tensor> grads;
    grads.reserve(state_.weights.size());
    for (const auto &w : state_.weights) {
        grads.emplace_back(w.rows, w.cols);
    }
    std::vector<SparseVector> bx;
    std::vector<int> by;
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < x.size(); start += opts.batch_size) {
        const std::size_t end = std::min(x.size(), start + opts.batch_size);
        double loss = 0.0;
        if (opts.shuffle) {
            bx.clear();
            by.clear();
            for (std::size_t i = start; i < end; ++i) {
                bx.push_back(x[order[i]]);
                by.push_back(y[order[i]]);
            }
            loss = loss_and_gradient(bx, by, &grads);
        } else {
            loss = loss_and_gradient(x.subspan(start, end - start), y.subspan(start, end - start), &grads);
        }
        if (!std::isfinite(loss)) {
            throw TrialFailure(fmt::format("non-finite training loss at step {}", state_.step + 1));
        }
        if (opts.optimizer == OptimizerKind::adam) {
            adam_update(state_, grads, opts.learning_rate);
        } else {
            sgd_update(state_, grads, opts.learning_rate);
        }
        total += loss * static_cast<double>(end - start);
        ++batches;
    }
    ++state_.epochs_done;
    return {total / static_cast<double>(x.size()), batches};
}

namespace {

// Resizes `grads` to match `weights` and clears it.
void zero_like(const std::vector<Tensor> &weights, std::vector<Tensor> &grads) {
    grads.resize(weights.size());
    for (std::size_t t = 0; t < weights.size(); ++t) {
        if (grads[t].rows != weights[t].rows || grads[t].cols != weights[t].cols) {
            grads[t] = Tensor(weights[t].rows, weights[t].cols);
        } else {
            grads[t].fill(0.0);
        }
    }
}

}  // namespace

SoftmaxRegression::SoftmaxRegression(std::size_t feature_dim, std::size_t n_classes, std::uint64_t seed)
    : GradientModel(feature_dim, n_classes) {
    Rng rng(seed);
    state_.seed = seed;
    state_.weights.push_back(xavier(feature_dim, n_classes, feature_dim, n_classes, rng));
    state_.weights.emplace_back(1, n_classes);
    init_moments();
}

void SoftmaxRegression::logits(const SparseVector &x, std::span<double> out) const {
    const auto &w = state_.weights[0];
    const auto &b = state_.weights[1];
    std::copy(b.data.begin(), b.data.end(), out.begin());
    for (const auto &e : x) {
        const double *row = &w.data[e.index * n_classes_];
        for (std::size_t k = 0; k < n_classes_; ++k) {
            out[k] += e.value * row[k];
        }
    }
}

Prediction SoftmaxRegression::predict_proba(const SparseVector &x) const {
    check_dim(x);
    std::vector<double> z(n_classes_);
    logits(x, z);
    return Prediction::from_logits(z);
}

double SoftmaxRegression::loss_and_gradient(std::span<const SparseVector> x, std::span<const int> y,
                                            std::vector<Tensor> *grads) const {
    if (grads != nullptr) {
        zero_like(state_.weights, *grads);
    }
    std::vector<double> z(n_classes_);
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        check_dim(x[i]);
        logits(x[i], z);
        const auto yi = static_cast<std::size_t>(y[i]);
        loss -= log_softmax_at(z, yi);
        if (grads == nullptr) {
            continue;
        }
        const Prediction p = Prediction::from_logits(z);
        auto &gw = (*grads)[0];
        auto &gb = (*grads)[1];
        for (std::size_t k = 0; k < n_classes_; ++k) {
            const double g = p.class_probs[k] - (k == yi ? 1.0 : 0.0);
            gb.data[k] += g;
            for (const auto &e : x[i]) {
                gw.data[e.index * n_classes_ + k] += e.value * g;
            }
        }
    }
    const auto n = static_cast<double>(x.size());
    if (grads != nullptr) {
        for (auto &g : *grads) {
            for (double &v : g.data) {
                v /= n;
            }
        }
    }
    return loss / n;
}

Mlp::Mlp(std::size_t feature_dim, std::size_t hidden, std::size_t n_classes, std::uint64_t seed)
    : GradientModel(feature_dim, n_classes), hidden_(hidden) {
    Rng rng(seed);
    state_.seed = seed;
    state_.weights.push_back(xavier(feature_dim, hidden, feature_dim, hidden, rng));
    state_.weights.emplace_back(1, hidden);
    state_.weights.push_back(xavier(hidden, n_classes, hidden, n_classes, rng));
    state_.weights.emplace_back(1, n_classes);
    init_moments();
}

std::string Mlp::metadata() const {
    return json{{"kind", "mlp"}, {"feature_dim", feature_dim_}, {"hidden", hidden_}, {"n_classes", n_classes_}}.dump();
}

void Mlp::forward(const SparseVector &x, std::span<double> hidden_act, std::span<double> logits) const {
    const auto &w1 = state_.weights[0];
    const auto &b1 = state_.weights[1];
    const auto &w2 = state_.weights[2];
    const auto &b2 = state_.weights[3];
    std::copy(b1.data.begin(), b1.data.end(), hidden_act.begin());
    for (const auto &e : x) {
        const double *row = &w1.data[e.index * hidden_];
        for (std::size_t j = 0; j < hidden_; ++j) {
            hidden_act[j] += e.value * row[j];
        }
    }
    for (double &h : hidden_act) {
        h = std::tanh(h);
    }
    std::copy(b2.data.begin(), b2.data.end(), logits.begin());
    for (std::size_t j = 0; j < hidden_; ++j) {
        const double *row = &w2.data[j * n_classes_];
        for (std::size_t k = 0; k < n_classes_; ++k) {
            logits[k] += hidden_act[j] * row[k];
        }
    }
}

Prediction Mlp::predict_proba(const SparseVector &x) const {
    check_dim(x);
    std::vector<double> h(hidden_);
    std::vector<double> z(n_classes_);
    forward(x, h, z);
    return Prediction::from_logits(z);
}

double Mlp::loss_and_gradient(std::span<const SparseVector> x, std::span<const int> y,
                              std::vector<Tensor> *grads) const {
    if (grads != nullptr) {
        zero_like(state_.weights, *grads);
    }
    const auto &w2 = state_.weights[2];
    std::vector<double> h(hidden_);
    std::vector<double> z(n_classes_);
    std::vector<double> gz(n_classes_);
    std::vector<double> ga(hidden_);
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        check_dim(x[i]);
        forward(x[i], h, z);
        const auto yi = static_cast<std::size_t>(y[i]);
        loss -= log_softmax_at(z, yi);
        if (grads == nullptr) {
            continue;
        }
        const Prediction p = Prediction::from_logits(z);
        for (std::size_t k = 0; k < n_classes_; ++k) {
            gz[k] = p.class_probs[k] - (k == yi ? 1.0 : 0.0);
        }
        auto &gw1 = (*grads)[0];
        auto &gb1 = (*grads)[1];
        auto &gw2 = (*grads)[2];
        auto &gb2 = (*grads)[3];
        for (std::size_t k = 0; k < n_classes_; ++k) {
            gb2.data[k] += gz[k];
        }
        for (std::size_t j = 0; j < hidden_; ++j) {
            double back = 0.0;
            for (std::size_t k = 0; k < n_classes_; ++k) {
                gw2.data[j * n_classes_ + k] += h[j] * gz[k];
                back += w2.data[j * n_classes_ + k] * gz[k];
            }
            ga[j] = back * (1.0 - h[j] * h[j]);
            gb1.data[j] += ga[j];
        }
        for (const auto &e : x[i]) {
            double *row = &gw1.data[e.index * hidden_];
            for (std::size_t j = 0; j < hidden_; ++j) {
                row[j] += e.value * ga[j];
            }
        }
    }
    const auto n = static_cast<double>(x.size());
    if (grads != nullptr) {
        for (auto &g : *grads) {
            for (double &v : g.data) {
                v /= n;
            }
        }
    }
    return loss / n;
}

// ---------------------------------------------------------------------------
// Factory
// ---------------------------------------------------------------------------

std::vector<std::string> model_parameter_names(EncoderKind kind) {
    if (kind == EncoderKind::mlp) {
        return {"hidden"};
    }
    return {};
}

std::vector<std::string> training_override_names() { return {"batch_size", "epochs", "learning_rate"}; }

std::unique_ptr<Trainable> create_trainable(EncoderKind kind, const ParamSet &params, std::size_t feature_dim,
                                            std::size_t n_classes, std::uint64_t seed) {
    if (kind == EncoderKind::external) {
        throw Error("external models are driven through the external trial adapter");
    }
    if (feature_dim == 0 || n_classes < 2) {
        throw Error(fmt::format("dimension mismatch: feature_dim={}, n_classes={}", feature_dim, n_classes));
    }
    const auto allowed_model = model_parameter_names(kind);
    const auto allowed_training = training_override_names();
    for (const auto &[name, value] : params) {
        const bool known = std::find(allowed_model.begin(), allowed_model.end(), name) != allowed_model.end() ||
                           std::find(allowed_training.begin(), allowed_training.end(), name) != allowed_training.end();
        if (!known) {
            throw Error(fmt::format("unknown parameter '{}' for {}", name, to_string(kind)));
        }
    }
    switch (kind) {
        case EncoderKind::naive_bayes:
            return std::make_unique<NaiveBayes>(feature_dim, n_classes);
        case EncoderKind::softmax_regression:
            return std::make_unique<SoftmaxRegression>(feature_dim, n_classes, seed);
        case EncoderKind::mlp: {
            const auto it = params.find("hidden");
            if (it == params.end()) {
                throw Error("mlp: missing required parameter 'hidden'");
            }
            const auto hidden = param_as_int(it->second);
            if (!hidden || *hidden < 1) {
                throw Error("mlp: 'hidden' must be an integer >= 1");
            }
            return std::make_unique<Mlp>(feature_dim, static_cast<std::size_t>(*hidden), n_classes, seed);
        }
        case EncoderKind::external:
            break;
    }
    throw Error("unknown encoder kind");
}

// ---------------------------------------------------------------------------
// External adapter
// ---------------------------------------------------------------------------

json external_request_to_json(const ExternalTrialRequest &req) {
    return {{"featurize", req.featurize},   {"train_path", req.train_path},
            {"val_path", req.val_path},     {"test_path", req.test_path},
            {"params", params_to_json(req.params)},
            {"seed", req.seed},             {"epochs", req.epochs},
            {"n_classes", req.n_classes},   {"goal_metric", req.goal_metric}};
}

ExternalTrialResponse parse_external_response(std::string_view line, const ExternalTrialRequest &req,
                                              std::optional<std::size_t> expected_test_rows) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception &e) {
        throw Error(fmt::format("malformed external response: {}", e.what()));
    }
    if (!j.is_object()) {
        throw Error("external response must be an object");
    }
    ExternalTrialResponse r;
    try {
        r.val_metric = j.at("val_metric").get<std::vector<double>>();
        for (const auto &row : j.at("test_predictions")) {
            r.test_predictions.push_back(Prediction::from_probs(row.get<std::vector<double>>()));
        }
        r.param_bytes = j.at("param_bytes").get<std::uint64_t>();
        if (j.contains("inference_latency_s")) {
            r.inference_latency_s = j.at("inference_latency_s").get<double>();
        }
    } catch (const json::exception &e) {
        throw Error(fmt::format("invalid external response: {}", e.what()));
    }
    if (r.val_metric.empty() || r.val_metric.size() > static_cast<std::size_t>(req.epochs)) {
        throw Error(fmt::format("external response reports {} epochs for {} requested", r.val_metric.size(), req.epochs));
    }
    for (const double v : r.val_metric) {
        if (!std::isfinite(v)) {
            throw Error("external response has a non-finite validation metric");
        }
    }
    for (const auto &p : r.test_predictions) {
        if (p.class_probs.size() != static_cast<std::size_t>(req.n_classes)) {
            throw Error("external prediction has the wrong number of classes");
        }
    }
    if (expected_test_rows && r.test_predictions.size() != *expected_test_rows) {
        throw Error(fmt::format("external response has {} test predictions, expected {}", r.test_predictions.size(),
                                *expected_test_rows));
    }
    return r;
}

namespace {

void set_nonblocking(int fd) { fcntl(fd, F_SETFL, fcntl(fd, F_GETFL) | O_NONBLOCK); }

}  // namespace

ProcessResult run_process(const std::string &command, std::string_view input, double timeout_s) {
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { std::signal(SIGPIPE, SIG_IGN); });

    int in_pipe[2];
    int out_pipe[2];
    int err_pipe[2];
    if (pipe2(in_pipe, O_CLOEXEC) != 0 || pipe2(out_pipe, O_CLOEXEC) != 0 || pipe2(err_pipe, O_CLOEXEC) != 0) {
        throw Error(fmt::format("pipe: {}", std::strerror(errno)));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], 0);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], 1);
    posix_spawn_file_actions_adddup2(&actions, err_pipe[1], 2);

    std::string sh = "/bin/sh";
    std::string dash_c = "-c";
    std::string cmd = command;
    char *argv[] = {sh.data(), dash_c.data(), cmd.data(), nullptr};
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
    posix_spawn_file_actions_destroy(&actions);
    close(in_pipe[0]);
    close(out_pipe[1]);
    close(err_pipe[1]);
    if (rc != 0) {
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(err_pipe[0]);
        throw Error(fmt::format("spawn failed: {}", std::strerror(rc)));
    }
    set_nonblocking(in_pipe[1]);
    set_nonblocking(out_pipe[0]);
    set_nonblocking(err_pipe[0]);

    ProcessResult result;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    int fd_in = in_pipe[1];
    int fd_out = out_pipe[0];
    int fd_err = err_pipe[0];
    std::size_t written = 0;
    if (input.empty()) {
        close(fd_in);
        fd_in = -1;
    }
    char buf[8192];
    while (fd_out >= 0 || fd_err >= 0) {
        const auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            result.timed_out = true;
            break;
        }
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
        pollfd fds[3];
        nfds_t n = 0;
        if (fd_in >= 0) fds[n++] = {fd_in, POLLOUT, 0};
        if (fd_out >= 0) fds[n++] = {fd_out, POLLIN, 0};
        if (fd_err >= 0) fds[n++] = {fd_err, POLLIN, 0};
        const int ready = poll(fds, n, static_cast<int>(std::max<long long>(1, remaining)));
        if (ready < 0 && errno != EINTR) {
            break;
        }
        for (nfds_t i = 0; i < n && ready > 0; ++i) {
            if (fds[i].revents == 0) {
                continue;
            }
            if (fds[i].fd == fd_in) {
                const ssize_t w = write(fd_in, input.data() + written, input.size() - written);
                if (w > 0) {
                    written += static_cast<std::size_t>(w);
                }
                if (w < 0 && errno != EAGAIN) {
                    written = input.size();  // child closed stdin
                }
                if (written >= input.size()) {
                    close(fd_in);
                    fd_in = -1;
                }
            } else {
                int &fd = fds[i].fd == fd_out ? fd_out : fd_err;
                std::string &sink = fds[i].fd == fd_out ? result.stdout_text : result.stderr_text;
                const ssize_t r = read(fd, buf, sizeof(buf));
                if (r > 0) {
                    sink.append(buf, static_cast<std::size_t>(r));
                } else if (r == 0 || errno != EAGAIN) {
                    close(fd);
                    fd = -1;
                }
            }
        }
    }
    for (int fd : {fd_in, fd_out, fd_err}) {
        if (fd >= 0) {
            close(fd);
        }
    }
    int status = 0;
    if (!result.timed_out) {
        // output closed; give the child until the deadline to exit
        while (waitpid(pid, &status, WNOHANG) == 0) {
            if (std::chrono::steady_clock::now() >= deadline) {
                result.timed_out = true;
                break;
            }
            usleep(1000);
        }
    }
    if (result.timed_out) {
        kill(pid, SIGKILL);
        waitpid(pid, &status, 0);
        result.exit_code = -1;
        return result;
    }
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    return result;
}

ExternalTrialResponse run_external_trial(const std::string &command, const ExternalTrialRequest &req, double timeout_s,
                                         std::optional<std::size_t> expected_test_rows) {
    const std::string request_line = external_request_to_json(req).dump() + "\n";
    ProcessResult pr;
    try {
        pr = run_process(command, request_line, timeout_s);
    } catch (const Error &e) {
        throw TrialFailure(fmt::format("external trainable could not start: {}", e.what()));
    }
    if (pr.timed_out) {
        throw TrialFailure(fmt::format("external trainable timed out after {} s", timeout_s), pr.stderr_text);
    }
    if (pr.exit_code != 0) {
        throw TrialFailure(fmt::format("external trainable exited with status {}", pr.exit_code), pr.stderr_text);
    }
    // last non-empty stdout line carries the response
    std::string_view out = pr.stdout_text;
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r' || out.back() == ' ')) {
        out.remove_suffix(1);
    }
    const auto nl = out.rfind('\n');
    const std::string_view line = nl == std::string_view::npos ? out : out.substr(nl + 1);
    try {
        return parse_external_response(line, req, expected_test_rows);
    } catch (const Error &e) {
        throw TrialFailure(e.what(), pr.stderr_text);
    }
}

}  // namespace benchkit
