#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "benchkit/common.hpp"
#include "benchkit/datagen.hpp"
#include "benchkit/metrics.hpp"

namespace benchkit {

enum class EncoderKind { naive_bayes, softmax_regression, mlp, external };
enum class OptimizerKind { adam, sgd };

std::string_view to_string(EncoderKind k);
std::optional<EncoderKind> encoder_kind_from_string(std::string_view s);
std::string_view to_string(OptimizerKind k);
std::optional<OptimizerKind> optimizer_kind_from_string(std::string_view s);

/// A failed trial: reported in results, never fatal to a study.
class TrialFailure : public Error {
  public:
    explicit TrialFailure(const std::string &reason, std::string captured_stderr = {})
        : Error(reason), stderr_(std::move(captured_stderr)) {}
    [[nodiscard]] const std::string &captured_stderr() const noexcept { return stderr_; }

  private:
    std::string stderr_;
};

/// Dense row-major matrix of 64-bit reals.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double &at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool operator==(const Tensor &) const = default;
};

/// Weights plus optimizer moments; moments are shaped like the weights.
struct TrainState {
    std::vector<Tensor> weights;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::uint64_t epochs_done = 0;

    bool operator==(const TrainState &) const = default;
};

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam step with bias correction. Increments `state.step`.
void adam_update(TrainState &state, std::span<const Tensor> grads, double lr, const AdamSettings &settings = {});
void sgd_update(TrainState &state, std::span<const Tensor> grads, double lr);

struct EpochOptions {
    std::size_t batch_size = 32;
    double learning_rate = 1e-4;
    OptimizerKind optimizer = OptimizerKind::adam;
    bool shuffle = false;
};

struct EpochStats {
    double train_loss = 0.0;
    std::size_t batches = 0;
};

class Trainable {
  public:
    virtual ~Trainable() = default;

    [[nodiscard]] virtual EncoderKind kind() const noexcept = 0;
    [[nodiscard]] std::size_t feature_dim() const noexcept { return feature_dim_; }
    [[nodiscard]] std::size_t n_classes() const noexcept { return n_classes_; }

    /// One pass over the rows in the given order (or a seeded shuffle of it).
    /// Throws TrialFailure on a non-finite loss.
    virtual EpochStats fit_epoch(std::span<const SparseVector> x, std::span<const int> y, const EpochOptions &opts) = 0;

    [[nodiscard]] virtual Prediction predict_proba(const SparseVector &x) const = 0;
    [[nodiscard]] std::vector<Prediction> predict_proba(std::span<const SparseVector> xs) const;

    /// Stored parameters x 8 bytes plus the serialized metadata length.
    [[nodiscard]] std::size_t param_bytes() const;
    [[nodiscard]] virtual std::string metadata() const;

    [[nodiscard]] virtual std::unique_ptr<Trainable> clone() const = 0;
    [[nodiscard]] const TrainState &state() const noexcept { return state_; }
    TrainState &mutable_state() noexcept { return state_; }

  protected:
    Trainable(std::size_t feature_dim, std::size_t n_classes) : feature_dim_(feature_dim), n_classes_(n_classes) {}
    void check_dim(const SparseVector &x) const;

    std::size_t feature_dim_;
    std::size_t n_classes_;
    TrainState state_;
};

/// Multinomial naive Bayes with add-one smoothing. Weights: [0] feature counts (dim x classes), [1] class counts (1 x classes).
class NaiveBayes final : public Trainable {
  public:
    NaiveBayes(std::size_t feature_dim, std::size_t n_classes);

    [[nodiscard]] EncoderKind kind() const noexcept override { return EncoderKind::naive_bayes; }
    EpochStats fit_epoch(std::span<const SparseVector> x, std::span<const int> y, const EpochOptions &opts) override;
    [[nodiscard]] Prediction predict_proba(const SparseVector &x) const override;
    using Trainable::predict_proba;
    [[nodiscard]] std::unique_ptr<Trainable> clone() const override { return std::make_unique<NaiveBayes>(*this); }

  private:
    std::optional<double> cached_loss_;
};

/// Models trained by gradient descent on mean cross-entropy.
class GradientModel : public Trainable {
  public:
    EpochStats fit_epoch(std::span<const SparseVector> x, std::span<const int> y, const EpochOptions &opts) override;

    /// Mean cross-entropy over the rows; fills `grads` (shaped like the weights) when non-null.
    virtual double loss_and_gradient(std::span<const SparseVector> x, std::span<const int> y,
                                     std::vector<Tensor> *grads) const = 0;

  protected:
    using Trainable::Trainable;
    void init_moments();
};

/// Linear softmax classifier. Weights: [0] W (dim x classes), [1] b (1 x classes).
class SoftmaxRegression final : public GradientModel {
  public:
    SoftmaxRegression(std::size_t feature_dim, std::size_t n_classes, std::uint64_t seed);

    [[nodiscard]] EncoderKind kind() const noexcept override { return EncoderKind::softmax_regression; }
    [[nodiscard]] Prediction predict_proba(const SparseVector &x) const override;
    using Trainable::predict_proba;
    double loss_and_gradient(std::span<const SparseVector> x, std::span<const int> y,
                             std::vector<Tensor> *grads) const override;
    [[nodiscard]] std::unique_ptr<Trainable> clone() const override {
        return std::make_unique<SoftmaxRegression>(*this);
    }

  private:
    void logits(const SparseVector &x, std::span<double> out) const;
};

/// One tanh hidden layer. Weights: [0] W1 (dim x hidden), [1] b1, [2] W2 (hidden x classes), [3] b2.
class Mlp final : public GradientModel {
  public:
    Mlp(std::size_t feature_dim, std::size_t hidden, std::size_t n_classes, std::uint64_t seed);

    [[nodiscard]] EncoderKind kind() const noexcept override { return EncoderKind::mlp; }
    [[nodiscard]] Prediction predict_proba(const SparseVector &x) const override;
    using Trainable::predict_proba;
    double loss_and_gradient(std::span<const SparseVector> x, std::span<const int> y,
                             std::vector<Tensor> *grads) const override;
    [[nodiscard]] std::string metadata() const override;
    [[nodiscard]] std::unique_ptr<Trainable> clone() const override { return std::make_unique<Mlp>(*this); }
    [[nodiscard]] std::size_t hidden() const noexcept { return hidden_; }

  private:
    void forward(const SparseVector &x, std::span<double> hidden_act, std::span<double> logits) const;
    std::size_t hidden_;
};

/// Parameter names a native model accepts beyond the training overrides.
std::vector<std::string> model_parameter_names(EncoderKind kind);
/// Names that override the task's training params when present in a ParamSet.
std::vector<std::string> training_override_names();

/// Deterministic construction from seed. Xavier-uniform weights, zero biases.
std::unique_ptr<Trainable> create_trainable(EncoderKind kind, const ParamSet &params, std::size_t feature_dim,
                                            std::size_t n_classes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// External trainables: one child process per trial, one JSON line each way
// ---------------------------------------------------------------------------

struct ExternalTrialRequest {
    bool featurize = false;
    std::string train_path;
    std::string val_path;
    std::string test_path;
    ParamSet params;
    std::uint64_t seed = 0;
    int epochs = 1;
    int n_classes = 2;
    std::string goal_metric;
};

struct ExternalTrialResponse {
    std::vector<double> val_metric;  // one per completed epoch
    std::vector<Prediction> test_predictions;
    std::uint64_t param_bytes = 0;
    std::optional<double> inference_latency_s;
};

json external_request_to_json(const ExternalTrialRequest &req);
/// Throws Error on malformed or invalid responses.
ExternalTrialResponse parse_external_response(std::string_view line, const ExternalTrialRequest &req,
                                              std::optional<std::size_t> expected_test_rows = std::nullopt);

struct ProcessResult {
    int exit_code = -1;
    bool timed_out = false;
    std::string stdout_text;
    std::string stderr_text;
};

/// Runs `command` through /bin/sh with `input` on stdin. Kills the child after `timeout_s`.
ProcessResult run_process(const std::string &command, std::string_view input, double timeout_s);

/// Throws TrialFailure (with captured stderr) on nonzero exit, timeout, or a bad response.
ExternalTrialResponse run_external_trial(const std::string &command, const ExternalTrialRequest &req, double timeout_s,
                                         std::optional<std::size_t> expected_test_rows = std::nullopt);

}  // namespace benchkit
