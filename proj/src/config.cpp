#include "benchkit/config.hpp"

#include "strict_yaml.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <yaml-cpp/eventhandler.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <regex>
#include <set>
#include <sstream>

namespace benchkit {

SourceLocation SourceMap::at(const std::string &path) const {
    const auto it = entries.find(path);
    if (it != entries.end()) {
        return it->second;
    }
    return {file, 0, 0};
}

std::vector<std::string> training_param_names() {
    return {"batch_size", "early_stop_patience", "epochs", "learning_rate", "optimizer", "shuffle"};
}

std::string_view to_string(SamplerKind s) {
    switch (s) {
        case SamplerKind::grid: return "grid";
        case SamplerKind::random: return "random";
        case SamplerKind::tpe: return "tpe";
    }
    return "?";
}

std::optional<SamplerKind> sampler_kind_from_string(std::string_view s) {
    if (s == "grid") return SamplerKind::grid;
    if (s == "random") return SamplerKind::random;
    if (s == "tpe") return SamplerKind::tpe;
    return std::nullopt;
}

void PublishTarget::validate() const {
    static const std::regex url_re(R"(^https?://[^/\s?#]+(/[^\s]*)?$)");
    if (!std::regex_match(base_url, url_re)) {
        throw Error(fmt::format("base_url '{}' is not a well-formed http(s) URL", base_url));
    }
    if (index.empty() || index.find('/') != std::string::npos) {
        throw Error("index must be a non-empty name without '/'");
    }
    if (retry_count < 0 || retry_count > 5) {
        throw Error("retry_count must be between 0 and 5");
    }
    if (!(timeout_s > 0.0) || !std::isfinite(timeout_s)) {
        throw Error("timeout_s must be > 0");
    }
    if (auth_env && auth_env->empty()) {
        throw Error("auth_env must name an environment variable");
    }
}

namespace {

// ---------------------------------------------------------------------------
// Strict YAML loading
// ---------------------------------------------------------------------------

SourceLocation mark_location(const std::string &file, const YAML::Mark &m) {
    if (m.is_null()) {
        return {file, 0, 0};
    }
    return {file, m.line + 1, m.column + 1};
}

// Rejects anchors, aliases, explicit tags, complex keys, duplicate keys and multiple documents.
class StrictChecker final : public YAML::EventHandler {
  public:
    explicit StrictChecker(std::string file) : file_(std::move(file)) {}

    void OnDocumentStart(const YAML::Mark &mark) override {
        if (++documents_ > 1) {
            fail(mark, "multiple documents are not supported");
        }
    }
    void OnDocumentEnd() override {}
    void OnNull(const YAML::Mark &mark, YAML::anchor_t anchor) override { node_start(mark, anchor, "~"); }
    void OnAlias(const YAML::Mark &mark, YAML::anchor_t) override { fail(mark, "anchors and aliases are not supported"); }
    void OnScalar(const YAML::Mark &mark, const std::string &tag, YAML::anchor_t anchor,
                  const std::string &value) override {
        check_tag(mark, tag);
        node_start(mark, anchor, value);
    }
    void OnSequenceStart(const YAML::Mark &mark, const std::string &tag, YAML::anchor_t anchor,
                         YAML::EmitterStyle::value) override {
        check_tag(mark, tag);
        node_start(mark, anchor, std::nullopt);
        frames_.push_back({false, true, {}});
    }
    void OnSequenceEnd() override { frames_.pop_back(); }
    void OnMapStart(const YAML::Mark &mark, const std::string &tag, YAML::anchor_t anchor,
                    YAML::EmitterStyle::value) override {
        check_tag(mark, tag);
        node_start(mark, anchor, std::nullopt);
        frames_.push_back({true, true, {}});
    }
    void OnMapEnd() override { frames_.pop_back(); }
    void OnAnchor(const YAML::Mark &mark, const std::string &) override {
        fail(mark, "anchors and aliases are not supported");
    }

  private:
    struct Frame {
        bool is_map;
        bool expect_key;
        std::set<std::string> keys;
    };

    [[noreturn]] void fail(const YAML::Mark &mark, const std::string &msg) const {
        throw ConfigError(mark_location(file_, mark), msg);
    }

    void check_tag(const YAML::Mark &mark, const std::string &tag) const {
        if (!tag.empty() && tag != "?" && tag != "!") {
            fail(mark, fmt::format("tag '{}' is not supported", tag));
        }
    }

    void node_start(const YAML::Mark &mark, YAML::anchor_t anchor, const std::optional<std::string> &scalar) {
        if (anchor != YAML::NullAnchor) {
            fail(mark, "anchors and aliases are not supported");
        }
        if (frames_.empty() || !frames_.back().is_map) {
            return;
        }
        Frame &f = frames_.back();
        if (f.expect_key) {
            if (!scalar) {
                fail(mark, "complex mapping keys are not supported");
            }
            if (!f.keys.insert(*scalar).second) {
                fail(mark, fmt::format("duplicate key '{}'", *scalar));
            }
        }
        f.expect_key = !f.expect_key;
    }

    std::string file_;
    int documents_ = 0;
    std::vector<Frame> frames_;
};

YAML::Node load_strict(std::string_view text, const std::string &file) {
    const std::string doc(text);
    try {
        std::istringstream in(doc);
        YAML::Parser parser(in);
        StrictChecker checker(file);
        while (parser.HandleNextDocument(checker)) {
        }
        return YAML::Load(doc);
    } catch (const YAML::Exception &e) {
        throw ConfigError(mark_location(file, e.mark), e.msg);
    }
}

// ---------------------------------------------------------------------------
// Typed field access
// ---------------------------------------------------------------------------

class Reader {
  public:
    Reader(std::string file, SourceMap *map) : file_(std::move(file)), map_(map) {
        if (map_ != nullptr) {
            map_->file = file_;
        }
    }

    [[nodiscard]] SourceLocation loc(const YAML::Node &n) const { return mark_location(file_, n.Mark()); }
    [[noreturn]] void fail(const YAML::Node &n, const std::string &msg) const { throw ConfigError(loc(n), msg); }
    [[noreturn]] void fail_at(const SourceLocation &l, const std::string &msg) const { throw ConfigError(l, msg); }

    void note(const std::string &path, const YAML::Node &n) {
        if (map_ != nullptr) {
            map_->entries[path] = loc(n);
        }
    }

    /// Null documents count as empty maps.
    void expect_map(const YAML::Node &n, std::string_view what) const {
        if (!n.IsMap() && !n.IsNull()) {
            fail(n, fmt::format("type mismatch: {} must be a mapping", what));
        }
    }

    void check_keys(const YAML::Node &n, std::initializer_list<std::string_view> allowed, std::string_view what) const {
        if (!n.IsMap()) {
            return;
        }
        for (auto it = n.begin(); it != n.end(); ++it) {
            const auto key = it->first.Scalar();
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
                fail(it->first, fmt::format("unknown key '{}' in {}", key, what));
            }
        }
    }

    [[nodiscard]] YAML::Node get(const YAML::Node &parent, const char *key) const {
        if (!parent.IsMap()) {
            return YAML::Node(YAML::NodeType::Undefined);
        }
        return parent[key];
    }

    [[nodiscard]] YAML::Node require(const YAML::Node &parent, const char *key, std::string_view what) const {
        YAML::Node n = get(parent, key);
        if (!n.IsDefined()) {
            auto l = loc(parent);
            if (l.line == 0) {
                l = {file_, 1, 1};  // empty document
            }
            fail_at(l, fmt::format("missing required field '{}' in {}", key, what));
        }
        return n;
    }

    [[nodiscard]] std::string str(const YAML::Node &n, std::string_view name) const {
        if (!n.IsScalar()) {
            fail(n, fmt::format("type mismatch: '{}' must be a string", name));
        }
        return n.Scalar();
    }

    [[nodiscard]] std::int64_t integer(const YAML::Node &n, std::string_view name) const {
        if (n.IsScalar() && n.Tag() != "!") {
            const std::string &s = n.Scalar();
            std::int64_t v = 0;
            const char *first = s.data();
            if (!s.empty() && *first == '+') {
                ++first;
            }
            const auto res = std::from_chars(first, s.data() + s.size(), v);
            if (res.ec == std::errc{} && res.ptr == s.data() + s.size() && !s.empty()) {
                return v;
            }
        }
        fail(n, fmt::format("type mismatch: '{}' must be an integer", name));
    }

    [[nodiscard]] std::uint64_t unsigned64(const YAML::Node &n, std::string_view name) const {
        if (n.IsScalar() && n.Tag() != "!") {
            const std::string &s = n.Scalar();
            std::uint64_t v = 0;
            const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec == std::errc{} && res.ptr == s.data() + s.size() && !s.empty()) {
                return v;
            }
        }
        fail(n, fmt::format("type mismatch: '{}' must be an unsigned integer", name));
    }

    [[nodiscard]] double real(const YAML::Node &n, std::string_view name) const {
        if (n.IsScalar() && n.Tag() != "!") {
            const ParamValue v = infer_param(n.Scalar());
            if (const auto r = param_as_real(v)) {
                return *r;
            }
        }
        fail(n, fmt::format("type mismatch: '{}' must be a number", name));
    }

    [[nodiscard]] bool boolean(const YAML::Node &n, std::string_view name) const {
        if (n.IsScalar() && n.Tag() != "!") {
            if (n.Scalar() == "true") return true;
            if (n.Scalar() == "false") return false;
        }
        fail(n, fmt::format("type mismatch: '{}' must be true or false", name));
    }

    [[nodiscard]] int small_int(const YAML::Node &n, std::string_view name) const {
        const auto v = integer(n, name);
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
            fail(n, fmt::format("'{}' is out of range", name));
        }
        return static_cast<int>(v);
    }

    [[nodiscard]] std::vector<std::string> string_list(const YAML::Node &n, std::string_view name,
                                                       const std::string &path, std::string_view dup_what) {
        if (!n.IsSequence()) {
            fail(n, fmt::format("type mismatch: '{}' must be a list", name));
        }
        std::vector<std::string> out;
        std::set<std::string> seen;
        for (std::size_t i = 0; i < n.size(); ++i) {
            const auto s = str(n[i], name);
            if (s.empty()) {
                fail(n[i], fmt::format("'{}' entries must be non-empty", name));
            }
            if (!seen.insert(s).second) {
                fail(n[i], fmt::format("duplicate {} '{}'", dup_what, s));
            }
            note(fmt::format("{}[{}]", path, i), n[i]);
            out.push_back(s);
        }
        return out;
    }

    [[nodiscard]] ParamValue param(const YAML::Node &n, std::string_view name) const {
        if (!n.IsScalar()) {
            fail(n, fmt::format("type mismatch: '{}' must be a scalar", name));
        }
        if (n.Tag() == "!") {
            return n.Scalar();
        }
        return infer_param(n.Scalar());
    }

    [[nodiscard]] const std::string &file() const noexcept { return file_; }

  private:
    std::string file_;
    SourceMap *map_;
};

bool is_identifier(std::string_view s) {
    static const std::regex re("^[A-Za-z0-9_][A-Za-z0-9_.-]*$");
    return std::regex_match(s.begin(), s.end(), re);
}

bool is_param_name(std::string_view s) {
    static const std::regex re("^[A-Za-z_][A-Za-z0-9_]*$");
    return std::regex_match(s.begin(), s.end(), re);
}

// ---------------------------------------------------------------------------
// Node-level parsers (shared with snapshots)
// ---------------------------------------------------------------------------

TrainingParams parse_training(const YAML::Node &n, Reader &r) {
    TrainingParams t;
    r.expect_map(n, "training");
    r.check_keys(n,
                 {"optimizer", "learning_rate", "epochs", "batch_size", "early_stop_patience", "held_constant",
                  "shuffle"},
                 "training");
    if (auto v = r.get(n, "optimizer"); v.IsDefined()) {
        const auto s = r.str(v, "optimizer");
        const auto k = optimizer_kind_from_string(s);
        if (!k) {
            r.fail(v, fmt::format("unknown optimizer '{}' (expected adam or sgd)", s));
        }
        t.optimizer = *k;
    }
    if (auto v = r.get(n, "learning_rate"); v.IsDefined()) {
        t.learning_rate = r.real(v, "learning_rate");
        if (!(t.learning_rate > 0.0) || !std::isfinite(t.learning_rate)) {
            r.fail(v, "learning_rate must be > 0");
        }
    }
    if (auto v = r.get(n, "epochs"); v.IsDefined()) {
        t.epochs = r.small_int(v, "epochs");
        if (t.epochs < 1) {
            r.fail(v, "epochs must be >= 1");
        }
    }
    if (auto v = r.get(n, "batch_size"); v.IsDefined()) {
        t.batch_size = r.small_int(v, "batch_size");
        if (t.batch_size < 1) {
            r.fail(v, "batch_size must be >= 1");
        }
    }
    if (auto v = r.get(n, "early_stop_patience"); v.IsDefined()) {
        t.early_stop_patience = r.small_int(v, "early_stop_patience");
        if (*t.early_stop_patience < 0) {
            r.fail(v, "early_stop_patience must be >= 0");
        }
    }
    if (auto v = r.get(n, "held_constant"); v.IsDefined()) {
        t.held_constant = r.string_list(v, "held_constant", "training.held_constant", "held_constant name");
        std::sort(t.held_constant.begin(), t.held_constant.end());
    }
    if (auto v = r.get(n, "shuffle"); v.IsDefined()) {
        t.shuffle = r.boolean(v, "shuffle");
    }
    return t;
}

PreprocessParams parse_preprocess(const YAML::Node &n, Reader &r) {
    PreprocessParams p;
    r.expect_map(n, "preprocess");
    r.check_keys(n, {"lowercase", "token_pattern", "ngram_max", "min_token_freq", "max_vocab", "weighting"},
                 "preprocess");
    if (auto v = r.get(n, "lowercase"); v.IsDefined()) {
        p.lowercase = r.boolean(v, "lowercase");
    }
    if (auto v = r.get(n, "token_pattern"); v.IsDefined()) {
        const auto s = r.str(v, "token_pattern");
        if (s == "unicode_word") {
            p.token_pattern = TokenPattern::unicode_word;
        } else if (s == "whitespace") {
            p.token_pattern = TokenPattern::whitespace;
        } else {
            r.fail(v, fmt::format("unknown token_pattern '{}'", s));
        }
    }
    if (auto v = r.get(n, "ngram_max"); v.IsDefined()) {
        p.ngram_max = r.small_int(v, "ngram_max");
    }
    if (auto v = r.get(n, "min_token_freq"); v.IsDefined()) {
        p.min_token_freq = r.small_int(v, "min_token_freq");
    }
    if (auto v = r.get(n, "max_vocab"); v.IsDefined()) {
        p.max_vocab = r.small_int(v, "max_vocab");
    }
    if (auto v = r.get(n, "weighting"); v.IsDefined()) {
        const auto s = r.str(v, "weighting");
        if (s == "count") {
            p.weighting = Weighting::count;
        } else if (s == "tfidf") {
            p.weighting = Weighting::tfidf;
        } else {
            r.fail(v, fmt::format("unknown weighting '{}'", s));
        }
    }
    try {
        p.validate();
    } catch (const ConfigError &) {
        throw;
    } catch (const Error &e) {
        r.fail(n, e.what());
    }
    return p;
}

AccountingConfig parse_accounting(const YAML::Node &n, Reader &r) {
    AccountingConfig a;
    r.expect_map(n, "accounting");
    r.check_keys(n, {"hourly_rate_usd", "pue", "carbon_intensity_kg_per_kwh", "latency_samples", "devices"},
                 "accounting");
    if (auto v = r.get(n, "hourly_rate_usd"); v.IsDefined()) {
        a.cost.hourly_rate_usd = r.real(v, "hourly_rate_usd");
        if (!(a.cost.hourly_rate_usd >= 0.0)) {
            r.fail(v, "hourly_rate_usd must be >= 0");
        }
    }
    if (auto v = r.get(n, "pue"); v.IsDefined()) {
        a.power.pue = r.real(v, "pue");
    }
    if (auto v = r.get(n, "carbon_intensity_kg_per_kwh"); v.IsDefined()) {
        a.power.carbon_intensity_kg_per_kwh = r.real(v, "carbon_intensity_kg_per_kwh");
    }
    if (auto v = r.get(n, "latency_samples"); v.IsDefined()) {
        a.latency_samples = r.small_int(v, "latency_samples");
        if (a.latency_samples < 1) {
            r.fail(v, "latency_samples must be >= 1");
        }
    }
    if (auto v = r.get(n, "devices"); v.IsDefined()) {
        if (!v.IsSequence()) {
            r.fail(v, "type mismatch: 'devices' must be a list");
        }
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto d = v[i];
            if (!d.IsMap()) {
                r.fail(d, "type mismatch: each device must be a mapping");
            }
            r.check_keys(d, {"name", "watts", "utilization"}, "device");
            PowerDevice dev;
            dev.name = r.str(r.require(d, "name", "device"), "name");
            dev.watts = r.real(r.require(d, "watts", "device"), "watts");
            if (auto u = r.get(d, "utilization"); u.IsDefined()) {
                dev.utilization = r.real(u, "utilization");
            }
            a.power.devices.push_back(std::move(dev));
        }
    }
    try {
        a.power.validate();
    } catch (const ConfigError &) {
        throw;
    } catch (const Error &e) {
        r.fail(n, e.what());
    }
    return a;
}

// Fills `t` in place so positions noted by `r` land in the returned object.
void parse_task_node(const YAML::Node &root, Reader &r, TaskConfig &t) {
    r.expect_map(root, "task config");
    r.check_keys(root,
                 {"task_kind", "datasets", "output_feature", "study_id", "training", "metrics", "preprocess", "split",
                  "accounting", "user_datasets"},
                 "task config");
    {
        const auto v = r.require(root, "task_kind", "task config");
        t.task_kind = r.str(v, "task_kind");
        if (t.task_kind != "text_classification") {
            r.fail(v, fmt::format("unsupported task_kind '{}' (expected text_classification)", t.task_kind));
        }
    }
    {
        const auto v = r.require(root, "datasets", "task config");
        t.dataset_ids = r.string_list(v, "datasets", "datasets", "dataset");
        if (t.dataset_ids.empty()) {
            r.fail(v, "datasets must list at least one dataset");
        }
    }
    t.output_feature = r.str(r.require(root, "output_feature", "task config"), "output_feature");
    if (t.output_feature.empty()) {
        r.fail(root["output_feature"], "output_feature must be non-empty");
    }
    if (auto v = r.get(root, "study_id"); v.IsDefined()) {
        t.study_id = r.str(v, "study_id");
        if (!is_identifier(*t.study_id)) {
            r.fail(v, "study_id may contain only letters, digits, '_', '.', '-'");
        }
    }
    if (auto v = r.get(root, "training"); v.IsDefined()) {
        t.training = parse_training(v, r);
    }
    if (auto v = r.get(root, "metrics"); v.IsDefined()) {
        t.metrics = r.string_list(v, "metrics", "metrics", "metric");
        if (t.metrics.empty()) {
            r.fail(v, "metrics must list at least one metric");
        }
    }
    if (auto v = r.get(root, "preprocess"); v.IsDefined()) {
        t.preprocess = parse_preprocess(v, r);
    }
    if (auto v = r.get(root, "split"); v.IsDefined()) {
        r.expect_map(v, "split");
        r.check_keys(v, {"train", "val", "test", "seed"}, "split");
        if (auto x = r.get(v, "train"); x.IsDefined()) t.split.train = r.real(x, "train");
        if (auto x = r.get(v, "val"); x.IsDefined()) t.split.val = r.real(x, "val");
        if (auto x = r.get(v, "test"); x.IsDefined()) t.split.test = r.real(x, "test");
        if (auto x = r.get(v, "seed"); x.IsDefined()) t.split_seed = r.unsigned64(x, "seed");
        try {
            t.split.validate();
        } catch (const Error &e) {
            r.fail(v, e.what());
        }
    }
    if (auto v = r.get(root, "accounting"); v.IsDefined()) {
        t.accounting = parse_accounting(v, r);
    }
    if (auto v = r.get(root, "user_datasets"); v.IsDefined()) {
        if (!v.IsSequence()) {
            r.fail(v, "type mismatch: 'user_datasets' must be a list");
        }
        std::set<std::string> ids;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto d = v[i];
            if (!d.IsMap()) {
                r.fail(d, "type mismatch: each user dataset must be a mapping");
            }
            r.check_keys(d, {"id", "path", "text_column", "label_column"}, "user dataset");
            DatasetDescriptor desc;
            desc.id = r.str(r.require(d, "id", "user dataset"), "id");
            desc.path = r.str(r.require(d, "path", "user dataset"), "path");
            desc.label_column = t.output_feature;
            if (auto x = r.get(d, "text_column"); x.IsDefined()) desc.text_column = r.str(x, "text_column");
            if (auto x = r.get(d, "label_column"); x.IsDefined()) desc.label_column = r.str(x, "label_column");
            if (desc.id.empty() || !ids.insert(desc.id).second) {
                r.fail(d, fmt::format("duplicate or empty user dataset id '{}'", desc.id));
            }
            r.note(fmt::format("user_datasets[{}]", i), d);
            t.user_datasets.push_back(std::move(desc));
        }
    }
    return;
}

SearchDimension parse_dimension(const YAML::Node &n, Reader &r) {
    if (!n.IsMap()) {
        r.fail(n, "type mismatch: each search dimension must be a mapping");
    }
    r.check_keys(n, {"name", "kind", "values", "low", "high"}, "search dimension");
    SearchDimension d;
    d.name = r.str(r.require(n, "name", "search dimension"), "name");
    if (!is_param_name(d.name)) {
        r.fail(n["name"], fmt::format("'{}' is not a valid parameter name", d.name));
    }
    const auto kind_node = r.require(n, "kind", "search dimension");
    const auto kind = dimension_kind_from_string(r.str(kind_node, "kind"));
    if (!kind) {
        r.fail(kind_node, fmt::format("unknown dimension kind '{}'", kind_node.Scalar()));
    }
    d.kind = *kind;
    if (d.kind == DimensionKind::choice) {
        if (r.get(n, "low").IsDefined() || r.get(n, "high").IsDefined()) {
            r.fail(n, fmt::format("choice dimension '{}' takes values, not low/high", d.name));
        }
        const auto vals = r.require(n, "values", "choice dimension");
        if (!vals.IsSequence()) {
            r.fail(vals, "type mismatch: 'values' must be a list");
        }
        for (std::size_t i = 0; i < vals.size(); ++i) {
            auto v = r.param(vals[i], "values");
            if (std::find(d.values.begin(), d.values.end(), v) != d.values.end()) {
                r.fail(vals[i], fmt::format("duplicate value in choice dimension '{}'", d.name));
            }
            d.values.push_back(std::move(v));
        }
    } else {
        if (r.get(n, "values").IsDefined()) {
            r.fail(n, fmt::format("range dimension '{}' takes low/high, not values", d.name));
        }
        d.low = r.real(r.require(n, "low", "range dimension"), "low");
        d.high = r.real(r.require(n, "high", "range dimension"), "high");
    }
    try {
        d.validate();
    } catch (const Error &e) {
        r.fail(n, e.what());
    }
    return d;
}

// Fills `m` in place so positions noted by `r` land in the returned object.
void parse_model_node(const YAML::Node &root, Reader &r, ModelSpec &m) {
    r.expect_map(root, "model config");
    r.check_keys(root,
                 {"model_id", "encoder_kind", "fixed_params", "search_space", "external_command", "external_featurize"},
                 "model config");
    {
        const auto v = r.require(root, "model_id", "model config");
        m.model_id = r.str(v, "model_id");
        if (!is_identifier(m.model_id)) {
            r.fail(v, "model_id may contain only letters, digits, '_', '.', '-'");
        }
        r.note("model_id", v);
    }
    {
        const auto v = r.require(root, "encoder_kind", "model config");
        const auto k = encoder_kind_from_string(r.str(v, "encoder_kind"));
        if (!k) {
            r.fail(v, fmt::format("unknown encoder_kind '{}'", v.Scalar()));
        }
        m.encoder_kind = *k;
    }
    if (auto v = r.get(root, "fixed_params"); v.IsDefined() && !v.IsNull()) {
        if (!v.IsMap()) {
            r.fail(v, "type mismatch: 'fixed_params' must be a mapping");
        }
        for (auto it = v.begin(); it != v.end(); ++it) {
            const auto name = it->first.Scalar();
            if (!is_param_name(name)) {
                r.fail(it->first, fmt::format("'{}' is not a valid parameter name", name));
            }
            r.note("fixed_params." + name, it->first);
            m.fixed_params.emplace(name, r.param(it->second, name));
        }
    }
    if (auto v = r.get(root, "search_space"); v.IsDefined() && !v.IsNull()) {
        if (!v.IsSequence()) {
            r.fail(v, "type mismatch: 'search_space' must be a list");
        }
        std::set<std::string> names;
        for (std::size_t i = 0; i < v.size(); ++i) {
            auto d = parse_dimension(v[i], r);
            if (!names.insert(d.name).second) {
                r.fail(v[i], fmt::format("duplicate search dimension '{}'", d.name));
            }
            if (m.fixed_params.count(d.name) != 0) {
                r.fail(v[i], fmt::format("parameter '{}' is both fixed and searched", d.name));
            }
            r.note("search_space." + d.name, v[i]);
            m.search_space.push_back(std::move(d));
        }
    }
    if (auto v = r.get(root, "external_command"); v.IsDefined()) {
        m.external_command = r.str(v, "external_command");
        if (m.external_command->empty()) {
            r.fail(v, "external_command must be non-empty");
        }
    }
    if (auto v = r.get(root, "external_featurize"); v.IsDefined()) {
        m.external_featurize = r.boolean(v, "external_featurize");
    }
    if (m.encoder_kind == EncoderKind::external && !m.external_command) {
        r.fail(root, "external model requires external_command");
    }
    if (m.encoder_kind != EncoderKind::external && m.external_command) {
        r.fail(root["external_command"], "external_command is only valid with encoder_kind external");
    }
    return;
}

PublishTarget parse_publish_node(const YAML::Node &n, Reader &r) {
    r.expect_map(n, "publish config");
    r.check_keys(n, {"base_url", "index", "auth_env", "timeout_s", "retry_count"}, "publish config");
    PublishTarget p;
    p.base_url = r.str(r.require(n, "base_url", "publish config"), "base_url");
    if (auto v = r.get(n, "index"); v.IsDefined()) p.index = r.str(v, "index");
    if (auto v = r.get(n, "auth_env"); v.IsDefined()) p.auth_env = r.str(v, "auth_env");
    if (auto v = r.get(n, "timeout_s"); v.IsDefined()) p.timeout_s = r.real(v, "timeout_s");
    if (auto v = r.get(n, "retry_count"); v.IsDefined()) p.retry_count = r.small_int(v, "retry_count");
    try {
        p.validate();
    } catch (const Error &e) {
        r.fail(n, e.what());
    }
    return p;
}

// Fills `h` in place so positions noted by `r` land in the returned object.
void parse_hyperopt_node(const YAML::Node &root, Reader &r, HyperoptConfig &h) {
    r.expect_map(root, "hyperopt config");
    r.check_keys(root,
                 {"goal_metric", "direction", "sampler", "num_samples", "seed", "max_parallel_trials",
                  "grid_points_per_range", "grid_cap", "tpe", "publish"},
                 "hyperopt config");
    if (auto v = r.get(root, "goal_metric"); v.IsDefined()) {
        h.goal_metric = r.str(v, "goal_metric");
        if (h.goal_metric.empty()) {
            r.fail(v, "goal_metric must be non-empty");
        }
        r.note("goal_metric", v);
    }
    if (auto v = r.get(root, "direction"); v.IsDefined()) {
        const auto d = direction_from_string(r.str(v, "direction"));
        if (!d) {
            r.fail(v, fmt::format("unknown direction '{}' (expected maximize or minimize)", v.Scalar()));
        }
        h.direction = *d;
    }
    if (auto v = r.get(root, "sampler"); v.IsDefined()) {
        const auto s = sampler_kind_from_string(r.str(v, "sampler"));
        if (!s) {
            r.fail(v, fmt::format("unknown sampler '{}' (expected grid, random or tpe)", v.Scalar()));
        }
        h.sampler = *s;
    }
    if (auto v = r.get(root, "num_samples"); v.IsDefined()) {
        h.num_samples = r.small_int(v, "num_samples");
        if (h.num_samples < 1) {
            r.fail(v, "num_samples must be >= 1");
        }
    }
    if (auto v = r.get(root, "seed"); v.IsDefined()) {
        h.seed = r.unsigned64(v, "seed");
    }
    if (auto v = r.get(root, "max_parallel_trials"); v.IsDefined()) {
        h.max_parallel_trials = r.small_int(v, "max_parallel_trials");
        if (h.max_parallel_trials < 1) {
            r.fail(v, "max_parallel_trials must be >= 1");
        }
    }
    if (auto v = r.get(root, "grid_points_per_range"); v.IsDefined()) {
        h.grid_points_per_range = r.small_int(v, "grid_points_per_range");
        if (h.grid_points_per_range < 1) {
            r.fail(v, "grid_points_per_range must be >= 1");
        }
    }
    if (auto v = r.get(root, "grid_cap"); v.IsDefined()) {
        const auto cap = r.integer(v, "grid_cap");
        if (cap < 1) {
            r.fail(v, "grid_cap must be >= 1");
        }
        h.grid_cap = static_cast<std::size_t>(cap);
    }
    if (auto v = r.get(root, "tpe"); v.IsDefined()) {
        r.expect_map(v, "tpe");
        r.check_keys(v, {"gamma", "n_candidates", "n_startup", "bandwidth_factor"}, "tpe");
        if (auto x = r.get(v, "gamma"); x.IsDefined()) h.tpe.gamma = r.real(x, "gamma");
        if (auto x = r.get(v, "n_candidates"); x.IsDefined()) h.tpe.n_candidates = r.small_int(x, "n_candidates");
        if (auto x = r.get(v, "n_startup"); x.IsDefined()) h.tpe.n_startup = r.small_int(x, "n_startup");
        if (auto x = r.get(v, "bandwidth_factor"); x.IsDefined()) {
            h.tpe.bandwidth_factor = r.real(x, "bandwidth_factor");
        }
        try {
            h.tpe.validate();
        } catch (const Error &e) {
            r.fail(v, e.what());
        }
    }
    if (auto v = r.get(root, "publish"); v.IsDefined()) {
        h.publish = parse_publish_node(v, r);
    }
    return;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

void emit_str(YAML::Emitter &e, const std::string &s) { e << YAML::DoubleQuoted << s; }
void emit_real(YAML::Emitter &e, double v) { e << format_real(v); }

void emit_param(YAML::Emitter &e, const ParamValue &v) {
    if (const auto *s = std::get_if<std::string>(&v)) {
        emit_str(e, *s);
    } else {
        e << format_param(v);
    }
}

void emit_string_list(YAML::Emitter &e, const std::vector<std::string> &xs) {
    e << YAML::Flow << YAML::BeginSeq;
    for (const auto &x : xs) {
        emit_str(e, x);
    }
    e << YAML::EndSeq;
}

void emit_task(YAML::Emitter &e, const TaskConfig &t) {
    e << YAML::BeginMap;
    e << YAML::Key << "task_kind" << YAML::Value;
    emit_str(e, t.task_kind);
    e << YAML::Key << "datasets" << YAML::Value;
    emit_string_list(e, t.dataset_ids);
    e << YAML::Key << "output_feature" << YAML::Value;
    emit_str(e, t.output_feature);
    if (t.study_id) {
        e << YAML::Key << "study_id" << YAML::Value;
        emit_str(e, *t.study_id);
    }
    e << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "optimizer" << YAML::Value << std::string(to_string(t.training.optimizer));
    e << YAML::Key << "learning_rate" << YAML::Value;
    emit_real(e, t.training.learning_rate);
    e << YAML::Key << "epochs" << YAML::Value << t.training.epochs;
    e << YAML::Key << "batch_size" << YAML::Value << t.training.batch_size;
    if (t.training.early_stop_patience) {
        e << YAML::Key << "early_stop_patience" << YAML::Value << *t.training.early_stop_patience;
    }
    e << YAML::Key << "held_constant" << YAML::Value;
    emit_string_list(e, t.training.held_constant);
    e << YAML::Key << "shuffle" << YAML::Value << (t.training.shuffle ? "true" : "false");
    e << YAML::EndMap;
    e << YAML::Key << "metrics" << YAML::Value;
    emit_string_list(e, t.metrics);
    const auto &p = t.preprocess;
    e << YAML::Key << "preprocess" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "lowercase" << YAML::Value << (p.lowercase ? "true" : "false");
    e << YAML::Key << "token_pattern" << YAML::Value << std::string(to_string(p.token_pattern));
    e << YAML::Key << "ngram_max" << YAML::Value << p.ngram_max;
    e << YAML::Key << "min_token_freq" << YAML::Value << p.min_token_freq;
    e << YAML::Key << "max_vocab" << YAML::Value << p.max_vocab;
    e << YAML::Key << "weighting" << YAML::Value << std::string(to_string(p.weighting));
    e << YAML::EndMap;
    e << YAML::Key << "split" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "train" << YAML::Value;
    emit_real(e, t.split.train);
    e << YAML::Key << "val" << YAML::Value;
    emit_real(e, t.split.val);
    e << YAML::Key << "test" << YAML::Value;
    emit_real(e, t.split.test);
    e << YAML::Key << "seed" << YAML::Value << std::to_string(t.split_seed);
    e << YAML::EndMap;
    const auto &a = t.accounting;
    e << YAML::Key << "accounting" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "hourly_rate_usd" << YAML::Value;
    emit_real(e, a.cost.hourly_rate_usd);
    e << YAML::Key << "pue" << YAML::Value;
    emit_real(e, a.power.pue);
    e << YAML::Key << "carbon_intensity_kg_per_kwh" << YAML::Value;
    emit_real(e, a.power.carbon_intensity_kg_per_kwh);
    e << YAML::Key << "latency_samples" << YAML::Value << a.latency_samples;
    e << YAML::Key << "devices" << YAML::Value << YAML::BeginSeq;
    for (const auto &d : a.power.devices) {
        e << YAML::BeginMap << YAML::Key << "name" << YAML::Value;
        emit_str(e, d.name);
        e << YAML::Key << "watts" << YAML::Value;
        emit_real(e, d.watts);
        e << YAML::Key << "utilization" << YAML::Value;
        emit_real(e, d.utilization);
        e << YAML::EndMap;
    }
    e << YAML::EndSeq << YAML::EndMap;
    e << YAML::Key << "user_datasets" << YAML::Value << YAML::BeginSeq;
    for (const auto &d : t.user_datasets) {
        e << YAML::BeginMap;
        e << YAML::Key << "id" << YAML::Value;
        emit_str(e, d.id);
        e << YAML::Key << "path" << YAML::Value;
        emit_str(e, d.path);
        e << YAML::Key << "text_column" << YAML::Value;
        emit_str(e, d.text_column);
        e << YAML::Key << "label_column" << YAML::Value;
        emit_str(e, d.label_column);
        e << YAML::EndMap;
    }
    e << YAML::EndSeq;
    e << YAML::EndMap;
}

void emit_model(YAML::Emitter &e, const ModelSpec &m) {
    e << YAML::BeginMap;
    e << YAML::Key << "model_id" << YAML::Value;
    emit_str(e, m.model_id);
    e << YAML::Key << "encoder_kind" << YAML::Value << std::string(to_string(m.encoder_kind));
    e << YAML::Key << "fixed_params" << YAML::Value << YAML::BeginMap;
    for (const auto &[k, v] : m.fixed_params) {
        e << YAML::Key << k << YAML::Value;
        emit_param(e, v);
    }
    e << YAML::EndMap;
    e << YAML::Key << "search_space" << YAML::Value << YAML::BeginSeq;
    for (const auto &d : m.search_space) {
        e << YAML::BeginMap;
        e << YAML::Key << "name" << YAML::Value << d.name;
        e << YAML::Key << "kind" << YAML::Value << std::string(to_string(d.kind));
        if (d.kind == DimensionKind::choice) {
            e << YAML::Key << "values" << YAML::Value << YAML::Flow << YAML::BeginSeq;
            for (const auto &v : d.values) {
                emit_param(e, v);
            }
            e << YAML::EndSeq;
        } else if (d.kind == DimensionKind::int_uniform) {
            e << YAML::Key << "low" << YAML::Value << std::to_string(static_cast<std::int64_t>(d.low));
            e << YAML::Key << "high" << YAML::Value << std::to_string(static_cast<std::int64_t>(d.high));
        } else {
            e << YAML::Key << "low" << YAML::Value;
            emit_real(e, d.low);
            e << YAML::Key << "high" << YAML::Value;
            emit_real(e, d.high);
        }
        e << YAML::EndMap;
    }
    e << YAML::EndSeq;
    if (m.external_command) {
        e << YAML::Key << "external_command" << YAML::Value;
        emit_str(e, *m.external_command);
    }
    e << YAML::Key << "external_featurize" << YAML::Value << (m.external_featurize ? "true" : "false");
    e << YAML::EndMap;
}

void emit_hyperopt(YAML::Emitter &e, const HyperoptConfig &h) {
    e << YAML::BeginMap;
    e << YAML::Key << "goal_metric" << YAML::Value;
    emit_str(e, h.goal_metric);
    e << YAML::Key << "direction" << YAML::Value << std::string(to_string(h.direction));
    e << YAML::Key << "sampler" << YAML::Value << std::string(to_string(h.sampler));
    e << YAML::Key << "num_samples" << YAML::Value << h.num_samples;
    e << YAML::Key << "seed" << YAML::Value << std::to_string(h.seed);
    e << YAML::Key << "max_parallel_trials" << YAML::Value << h.max_parallel_trials;
    e << YAML::Key << "grid_points_per_range" << YAML::Value << h.grid_points_per_range;
    e << YAML::Key << "grid_cap" << YAML::Value << std::to_string(h.grid_cap);
    e << YAML::Key << "tpe" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "gamma" << YAML::Value;
    emit_real(e, h.tpe.gamma);
    e << YAML::Key << "n_candidates" << YAML::Value << h.tpe.n_candidates;
    e << YAML::Key << "n_startup" << YAML::Value << h.tpe.n_startup;
    e << YAML::Key << "bandwidth_factor" << YAML::Value;
    emit_real(e, h.tpe.bandwidth_factor);
    e << YAML::EndMap;
    if (h.publish) {
        const auto &p = *h.publish;
        e << YAML::Key << "publish" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "base_url" << YAML::Value;
        emit_str(e, p.base_url);
        e << YAML::Key << "index" << YAML::Value;
        emit_str(e, p.index);
        if (p.auth_env) {
            e << YAML::Key << "auth_env" << YAML::Value;
            emit_str(e, *p.auth_env);
        }
        e << YAML::Key << "timeout_s" << YAML::Value;
        emit_real(e, p.timeout_s);
        e << YAML::Key << "retry_count" << YAML::Value << p.retry_count;
        e << YAML::EndMap;
    }
    e << YAML::EndMap;
}

template <typename F>
std::string emit_document(F &&body) {
    YAML::Emitter e;
    body(e);
    if (!e.good()) {
        throw Error("yaml emitter: " + e.GetLastError());
    }
    return std::string(e.c_str()) + "\n";
}

}  // namespace

YAML::Node detail::load_strict_yaml(std::string_view text, const std::string &file) { return load_strict(text, file); }

SourceLocation detail::yaml_location(const std::string &file, const YAML::Mark &mark) {
    return mark_location(file, mark);
}

// ---------------------------------------------------------------------------
// Public parse / serialize
// ---------------------------------------------------------------------------

TaskConfig parse_task_config(std::string_view text, const std::string &file) {
    TaskConfig t;
    Reader r(file, &t.source);
    parse_task_node(load_strict(text, file), r, t);
    return t;
}

ModelSpec parse_model_config(std::string_view text, const std::string &file) {
    ModelSpec m;
    Reader r(file, &m.source);
    parse_model_node(load_strict(text, file), r, m);
    return m;
}

HyperoptConfig parse_hyperopt_config(std::string_view text, const std::string &file) {
    HyperoptConfig h;
    Reader r(file, &h.source);
    parse_hyperopt_node(load_strict(text, file), r, h);
    return h;
}

PublishTarget parse_publish_config(std::string_view text, const std::string &file) {
    Reader r(file, nullptr);
    return parse_publish_node(load_strict(text, file), r);
}

std::string task_to_yaml(const TaskConfig &t) {
    return emit_document([&](YAML::Emitter &e) { emit_task(e, t); });
}

std::string model_to_yaml(const ModelSpec &m) {
    return emit_document([&](YAML::Emitter &e) { emit_model(e, m); });
}

std::string hyperopt_to_yaml(const HyperoptConfig &h) {
    return emit_document([&](YAML::Emitter &e) { emit_hyperopt(e, h); });
}

json task_to_json(const TaskConfig &t) {
    json devices = json::array();
    for (const auto &d : t.accounting.power.devices) {
        devices.push_back({{"name", d.name}, {"watts", d.watts}, {"utilization", d.utilization}});
    }
    json users = json::array();
    for (const auto &d : t.user_datasets) {
        users.push_back(
            {{"id", d.id}, {"path", d.path}, {"text_column", d.text_column}, {"label_column", d.label_column}});
    }
    const auto &p = t.preprocess;
    json training = {{"optimizer", std::string(to_string(t.training.optimizer))},
                     {"learning_rate", t.training.learning_rate},
                     {"epochs", t.training.epochs},
                     {"batch_size", t.training.batch_size},
                     {"held_constant", t.training.held_constant},
                     {"shuffle", t.training.shuffle}};
    training["early_stop_patience"] =
        t.training.early_stop_patience ? json(*t.training.early_stop_patience) : json(nullptr);
    return {{"task_kind", t.task_kind},
            {"datasets", t.dataset_ids},
            {"output_feature", t.output_feature},
            {"study_id", t.study_id ? json(*t.study_id) : json(nullptr)},
            {"training", training},
            {"metrics", t.metrics},
            {"preprocess",
             {{"lowercase", p.lowercase},
              {"token_pattern", std::string(to_string(p.token_pattern))},
              {"ngram_max", p.ngram_max},
              {"min_token_freq", p.min_token_freq},
              {"max_vocab", p.max_vocab},
              {"weighting", std::string(to_string(p.weighting))}}},
            {"split", {{"train", t.split.train}, {"val", t.split.val}, {"test", t.split.test}, {"seed", t.split_seed}}},
            {"accounting",
             {{"hourly_rate_usd", t.accounting.cost.hourly_rate_usd},
              {"pue", t.accounting.power.pue},
              {"carbon_intensity_kg_per_kwh", t.accounting.power.carbon_intensity_kg_per_kwh},
              {"latency_samples", t.accounting.latency_samples},
              {"devices", devices}}},
            {"user_datasets", users}};
}

json model_to_json(const ModelSpec &m) {
    json space = json::array();
    for (const auto &d : m.search_space) {
        space.push_back(dimension_to_json(d));
    }
    return {{"model_id", m.model_id},
            {"encoder_kind", std::string(to_string(m.encoder_kind))},
            {"fixed_params", params_to_json(m.fixed_params)},
            {"search_space", space},
            {"external_command", m.external_command ? json(*m.external_command) : json(nullptr)},
            {"external_featurize", m.external_featurize}};
}

json hyperopt_to_json(const HyperoptConfig &h) {
    json j = {{"goal_metric", h.goal_metric},
              {"direction", std::string(to_string(h.direction))},
              {"sampler", std::string(to_string(h.sampler))},
              {"num_samples", h.num_samples},
              {"seed", h.seed},
              {"max_parallel_trials", h.max_parallel_trials},
              {"grid_points_per_range", h.grid_points_per_range},
              {"grid_cap", h.grid_cap},
              {"tpe",
               {{"gamma", h.tpe.gamma},
                {"n_candidates", h.tpe.n_candidates},
                {"n_startup", h.tpe.n_startup},
                {"bandwidth_factor", h.tpe.bandwidth_factor}}},
              {"publish", nullptr}};
    if (h.publish) {
        j["publish"] = {{"base_url", h.publish->base_url},
                        {"index", h.publish->index},
                        {"auth_env", h.publish->auth_env ? json(*h.publish->auth_env) : json(nullptr)},
                        {"timeout_s", h.publish->timeout_s},
                        {"retry_count", h.publish->retry_count}};
    }
    return j;
}

// ---------------------------------------------------------------------------
// Study plans
// ---------------------------------------------------------------------------

std::string ExperimentPlan::experiment_id() const { return model.model_id + "__" + dataset_id; }

std::string compute_config_hash(const TaskConfig &task, const std::vector<ModelSpec> &models,
                                const HyperoptConfig &hopt) {
    json t = task_to_json(task);
    auto ds = task.dataset_ids;
    std::sort(ds.begin(), ds.end());
    t["datasets"] = ds;
    auto users = t["user_datasets"];
    std::sort(users.begin(), users.end(), [](const json &a, const json &b) { return a["id"] < b["id"]; });
    t["user_datasets"] = users;
    std::vector<const ModelSpec *> sorted;
    for (const auto &m : models) {
        sorted.push_back(&m);
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto *a, const auto *b) { return a->model_id < b->model_id; });
    json ms = json::array();
    for (const auto *m : sorted) {
        ms.push_back(model_to_json(*m));
    }
    const json canonical = {{"task", t}, {"models", ms}, {"hyperopt", hyperopt_to_json(hopt)}};
    return sha256_hex(canonical.dump());
}

DatasetRegistry registry_for_task(const TaskConfig &task, const std::string &data_dir) {
    DatasetRegistry reg(data_dir);
    for (std::size_t i = 0; i < task.user_datasets.size(); ++i) {
        try {
            reg.register_dataset(task.user_datasets[i]);
        } catch (const ConfigError &) {
            throw;
        } catch (const Error &e) {
            throw ConfigError(task.source.at(fmt::format("user_datasets[{}]", i)), e.what());
        }
    }
    return reg;
}

StudyPlan validate_study(const TaskConfig &task, std::vector<ModelSpec> models, const HyperoptConfig &hopt,
                         const DatasetRegistry &datasets, const MetricRegistry &metrics) {
    if (models.empty()) {
        throw ConfigError({task.source.file, 0, 0}, "study needs at least one model");
    }
    std::sort(models.begin(), models.end(),
              [](const ModelSpec &a, const ModelSpec &b) { return a.model_id < b.model_id; });
    for (std::size_t i = 1; i < models.size(); ++i) {
        if (models[i].model_id == models[i - 1].model_id) {
            throw ConfigError(models[i].source.at("model_id"),
                              fmt::format("duplicate model_id '{}'", models[i].model_id));
        }
    }
    for (std::size_t i = 0; i < task.dataset_ids.size(); ++i) {
        const auto &id = task.dataset_ids[i];
        bool ok = datasets.resolves(id);
        std::string detail;
        if (ok && id.starts_with(kSyntheticPrefix)) {
            try {
                SyntheticParams::from_id(id).validate();
            } catch (const Error &e) {
                ok = false;
                detail = fmt::format(": {}", e.what());
            }
        }
        if (!ok) {
            const auto ids = datasets.list_ids();
            throw ConfigError(task.source.at(fmt::format("datasets[{}]", i)),
                              fmt::format("unknown dataset '{}'{}; registered datasets: {}", id, detail,
                                          ids.empty() ? std::string("(none)") : fmt::format("{}", fmt::join(ids, ", "))));
        }
    }
    for (std::size_t i = 0; i < task.metrics.size(); ++i) {
        if (!metrics.contains(task.metrics[i])) {
            throw ConfigError(task.source.at(fmt::format("metrics[{}]", i)),
                              fmt::format("unknown metric '{}'; available: {}", task.metrics[i],
                                          fmt::join(metrics.names(), ", ")));
        }
    }
    {
        const auto base = strip_val_prefix(hopt.goal_metric);
        if (base == "per_class" || !metrics.contains(base)) {
            throw ConfigError(hopt.source.at("goal_metric"),
                              fmt::format("goal_metric '{}' does not name a scalar metric", hopt.goal_metric));
        }
    }
    const auto training_names = training_param_names();
    const auto overrides = training_override_names();
    for (const auto &m : models) {
        if (m.encoder_kind == EncoderKind::external) {
            continue;
        }
        const auto allowed = model_parameter_names(m.encoder_kind);
        auto check_name = [&](const std::string &name, const SourceLocation &loc) {
            if (std::find(allowed.begin(), allowed.end(), name) == allowed.end() &&
                std::find(overrides.begin(), overrides.end(), name) == overrides.end()) {
                throw ConfigError(loc, fmt::format("model '{}' ({}) has no parameter '{}'", m.model_id,
                                                   to_string(m.encoder_kind), name));
            }
        };
        for (const auto &[name, value] : m.fixed_params) {
            check_name(name, m.source.at("fixed_params." + name));
        }
        for (const auto &d : m.search_space) {
            check_name(d.name, m.source.at("search_space." + d.name));
        }
        if (m.encoder_kind == EncoderKind::mlp) {
            const bool has_hidden = m.fixed_params.count("hidden") != 0 ||
                                    std::any_of(m.search_space.begin(), m.search_space.end(),
                                                [](const SearchDimension &d) { return d.name == "hidden"; });
            if (!has_hidden) {
                throw ConfigError(m.source.at("model_id"),
                                  fmt::format("mlp model '{}' needs a 'hidden' parameter", m.model_id));
            }
        }
        if (hopt.sampler == SamplerKind::grid) {
            try {
                (void)sample_grid(m.search_space, hopt.grid_points_per_range, hopt.grid_cap);
            } catch (const Error &e) {
                throw ConfigError(m.source.at("model_id"), fmt::format("model '{}': {}", m.model_id, e.what()));
            }
        }
    }
    for (std::size_t i = 0; i < task.training.held_constant.size(); ++i) {
        const auto &name = task.training.held_constant[i];
        const bool is_training = std::find(training_names.begin(), training_names.end(), name) != training_names.end();
        const bool is_fixed = std::any_of(models.begin(), models.end(),
                                          [&](const ModelSpec &m) { return m.fixed_params.count(name) != 0; });
        const auto loc = task.source.at(fmt::format("training.held_constant[{}]", i));
        if (!is_training && !is_fixed) {
            throw ConfigError(loc, fmt::format("held_constant name '{}' is not a training or model parameter", name));
        }
        for (const auto &m : models) {
            for (const auto &d : m.search_space) {
                if (d.name == name) {
                    throw ConfigError(loc, fmt::format("'{}' is held constant but searched by model '{}'", name,
                                                       m.model_id));
                }
            }
        }
    }

    StudyPlan plan;
    plan.config_hash = compute_config_hash(task, models, hopt);
    plan.study_id = task.study_id ? *task.study_id : "study-" + plan.config_hash.substr(0, 12);
    plan.task = task;
    plan.models = std::move(models);
    plan.hyperopt = hopt;
    return plan;
}

std::vector<ExperimentPlan> expand_matrix(const StudyPlan &plan) {
    auto ds = plan.task.dataset_ids;
    std::sort(ds.begin(), ds.end());
    auto models = plan.models;
    std::sort(models.begin(), models.end(),
              [](const ModelSpec &a, const ModelSpec &b) { return a.model_id < b.model_id; });
    std::vector<ExperimentPlan> out;
    out.reserve(models.size() * ds.size());
    for (const auto &m : models) {
        for (const auto &d : ds) {
            out.push_back({plan.study_id, plan.task, m, d, plan.hyperopt, plan.config_hash});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

ExperimentPlan ExperimentSnapshot::plan() const { return {study_id, task, model, dataset_id, hyperopt, config_hash}; }

ExperimentSnapshot snapshot_experiment(const ExperimentPlan &exp, std::vector<TrialSpec> trials,
                                       std::string suggestion_mode) {
    ExperimentSnapshot s;
    s.study_id = exp.study_id;
    s.model_id = exp.model.model_id;
    s.dataset_id = exp.dataset_id;
    s.config_hash = exp.config_hash;
    s.suggestion_mode = std::move(suggestion_mode);
    s.task = exp.task;
    s.model = exp.model;
    s.hyperopt = exp.hyperopt;
    s.trials = std::move(trials);
    return s;
}

namespace {
constexpr int kSnapshotFormat = 1;
}  // namespace

std::string snapshot_to_yaml(const ExperimentSnapshot &s) {
    return emit_document([&](YAML::Emitter &e) {
        e << YAML::BeginMap;
        e << YAML::Key << "snapshot_format" << YAML::Value << kSnapshotFormat;
        e << YAML::Key << "toolkit_version" << YAML::Value;
        emit_str(e, s.toolkit_version);
        e << YAML::Key << "study_id" << YAML::Value;
        emit_str(e, s.study_id);
        e << YAML::Key << "model_id" << YAML::Value;
        emit_str(e, s.model_id);
        e << YAML::Key << "dataset_id" << YAML::Value;
        emit_str(e, s.dataset_id);
        e << YAML::Key << "config_hash" << YAML::Value;
        emit_str(e, s.config_hash);
        e << YAML::Key << "suggestion_mode" << YAML::Value << s.suggestion_mode;
        e << YAML::Key << "task" << YAML::Value;
        emit_task(e, s.task);
        e << YAML::Key << "model" << YAML::Value;
        emit_model(e, s.model);
        e << YAML::Key << "hyperopt" << YAML::Value;
        emit_hyperopt(e, s.hyperopt);
        e << YAML::Key << "trials" << YAML::Value << YAML::BeginSeq;
        for (const auto &t : s.trials) {
            e << YAML::BeginMap;
            e << YAML::Key << "trial_index" << YAML::Value << std::to_string(t.trial_index);
            e << YAML::Key << "seed" << YAML::Value << std::to_string(t.seed);
            e << YAML::Key << "params" << YAML::Value << YAML::BeginMap;
            for (const auto &[k, v] : t.params) {
                e << YAML::Key << k << YAML::Value;
                emit_param(e, v);
            }
            e << YAML::EndMap << YAML::EndMap;
        }
        e << YAML::EndSeq;
        e << YAML::EndMap;
    });
}

LoadedSnapshot parse_snapshot(std::string_view text, const std::string &file) {
    const YAML::Node root = load_strict(text, file);
    Reader r(file, nullptr);
    if (!root.IsMap()) {
        r.fail(root, "snapshot must be a mapping");
    }
    r.check_keys(root,
                 {"snapshot_format", "toolkit_version", "study_id", "model_id", "dataset_id", "config_hash",
                  "suggestion_mode", "task", "model", "hyperopt", "trials"},
                 "snapshot");
    LoadedSnapshot out;
    auto &s = out.snapshot;
    const auto format = r.integer(r.require(root, "snapshot_format", "snapshot"), "snapshot_format");
    if (format != kSnapshotFormat) {
        r.fail(root["snapshot_format"], fmt::format("unsupported snapshot_format {}", format));
    }
    s.toolkit_version = r.str(r.require(root, "toolkit_version", "snapshot"), "toolkit_version");
    if (s.toolkit_version != kToolkitVersion) {
        out.warnings.push_back(fmt::format("snapshot was written by toolkit version {}; this is version {}",
                                           s.toolkit_version, kToolkitVersion));
    }
    s.study_id = r.str(r.require(root, "study_id", "snapshot"), "study_id");
    s.model_id = r.str(r.require(root, "model_id", "snapshot"), "model_id");
    s.dataset_id = r.str(r.require(root, "dataset_id", "snapshot"), "dataset_id");
    s.config_hash = r.str(r.require(root, "config_hash", "snapshot"), "config_hash");
    if (auto v = r.get(root, "suggestion_mode"); v.IsDefined()) {
        s.suggestion_mode = r.str(v, "suggestion_mode");
    }
    {
        TaskConfig t;
        Reader tr(file, &t.source);
        parse_task_node(r.require(root, "task", "snapshot"), tr, t);
        s.task = std::move(t);
    }
    {
        ModelSpec m;
        Reader mr(file, &m.source);
        parse_model_node(r.require(root, "model", "snapshot"), mr, m);
        s.model = std::move(m);
    }
    {
        HyperoptConfig h;
        Reader hr(file, &h.source);
        parse_hyperopt_node(r.require(root, "hyperopt", "snapshot"), hr, h);
        s.hyperopt = std::move(h);
    }
    if (s.model.model_id != s.model_id) {
        r.fail(root["model"], "snapshot model section does not match model_id");
    }
    const auto trials = r.require(root, "trials", "snapshot");
    if (!trials.IsSequence()) {
        r.fail(trials, "type mismatch: 'trials' must be a list");
    }
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto t = trials[i];
        if (!t.IsMap()) {
            r.fail(t, "type mismatch: each trial must be a mapping");
        }
        r.check_keys(t, {"trial_index", "seed", "params"}, "trial");
        TrialSpec spec;
        spec.trial_index = static_cast<std::size_t>(r.unsigned64(r.require(t, "trial_index", "trial"), "trial_index"));
        spec.seed = r.unsigned64(r.require(t, "seed", "trial"), "seed");
        const auto params = r.require(t, "params", "trial");
        if (!params.IsMap() && !params.IsNull()) {
            r.fail(params, "type mismatch: 'params' must be a mapping");
        }
        if (params.IsMap()) {
            for (auto it = params.begin(); it != params.end(); ++it) {
                spec.params.emplace(it->first.Scalar(), r.param(it->second, it->first.Scalar()));
            }
        }
        s.trials.push_back(std::move(spec));
    }
    return out;
}

LoadedSnapshot load_snapshot(const std::string &path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error &e) {
        throw ConfigError({path, 0, 0}, e.what());
    }
    return parse_snapshot(text, path);
}

std::string snapshot_path(const std::string &out_dir, const ExperimentSnapshot &s) {
    namespace fs = std::filesystem;
    const fs::path p = fs::path(out_dir) / "results" / safe_file_stem(s.study_id) /
                       (safe_file_stem(s.model_id) + "__" + safe_file_stem(s.dataset_id) + ".snapshot.yaml");
    return p.string();
}

void write_snapshot(const std::string &path, const ExperimentSnapshot &s) { write_file_atomic(path, snapshot_to_yaml(s)); }

}  // namespace benchkit
