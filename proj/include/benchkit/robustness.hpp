#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "benchkit/datagen.hpp"
#include "benchkit/metrics.hpp"
#include "benchkit/trainables.hpp"

namespace benchkit {

/// Black-box text classifier. Every call to predict counts as one query.
class TextClassifier {
  public:
    virtual ~TextClassifier() = default;
    Prediction predict(std::string_view text) {
        ++queries_;
        return predict_text(text);
    }
    [[nodiscard]] std::size_t queries() const noexcept { return queries_; }

  protected:
    virtual Prediction predict_text(std::string_view text) = 0;

  private:
    std::size_t queries_ = 0;
};

/// Featurize, then ask a trained model.
class ModelClassifier final : public TextClassifier {
  public:
    ModelClassifier(const Trainable &model, const Featurizer &featurizer) : model_(model), featurizer_(featurizer) {}

  protected:
    Prediction predict_text(std::string_view text) override { return model_.predict_proba(featurizer_.transform(text)); }

  private:
    const Trainable &model_;
    const Featurizer &featurizer_;
};

/// Attacks edit whitespace-separated words and rejoin them with single spaces.
std::string join_tokens(const std::vector<std::string> &tokens);

struct ImportanceResult {
    Prediction base;
    std::vector<double> importance;      // P(label | text) - P(label | text without token i)
    std::vector<Prediction> without;     // prediction with token i removed
};

/// Exactly tokens.size() + 1 queries. Throws Error on empty input.
ImportanceResult token_importance(TextClassifier &clf, const std::vector<std::string> &tokens, int label);

struct AttackOutcome {
    std::string attack;
    std::string uid;
    std::string original;
    std::string perturbed;
    int label = 0;
    int pred_before = 0;
    int pred_after = 0;
    std::size_t edits_used = 0;
    std::size_t model_queries = 0;
    bool success = false;
};

AttackOutcome attack_deepwordbug(TextClassifier &clf, const Example &ex, std::size_t budget = 3,
                                 std::uint64_t seed = 0);

/// Word -> synonyms; lookups are case-folded.
class Thesaurus {
  public:
    /// Lines `word<TAB>syn1,syn2,...`; blank lines and `#` comments are ignored.
    static Thesaurus parse(std::string_view text);
    static Thesaurus load(const std::string &path);

    void add(std::string word, const std::vector<std::string> &synonyms);
    [[nodiscard]] const std::vector<std::string> &synonyms(std::string_view word) const;
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

  private:
    std::map<std::string, std::vector<std::string>, std::less<>> entries_;
};

AttackOutcome attack_pwws(TextClassifier &clf, const Example &ex, const Thesaurus &th, std::size_t budget = 5);

inline constexpr double kDefaultReductionTheta = 0.5;

AttackOutcome attack_input_reduction(TextClassifier &clf, const Example &ex, double theta = kDefaultReductionTheta);

/// successes / |outcomes|; throws Error on an empty list.
double attack_success_rate(std::span<const AttackOutcome> outcomes);

enum class AttackKind { deepwordbug, pwws, input_reduction };
std::string_view to_string(AttackKind k);
std::optional<AttackKind> attack_kind_from_string(std::string_view s);

struct AttackSettings {
    std::size_t deepwordbug_budget = 3;
    std::size_t pwws_budget = 5;
    double reduction_theta = kDefaultReductionTheta;
    std::uint64_t seed = 0;
    std::size_t max_examples = 0;  // 0: all
};

/// Runs `kind` on each example in order; per-example seeds derive from (seed, uid).
std::vector<AttackOutcome> run_attack(const Trainable &model, const Featurizer &featurizer,
                                      const std::vector<Example> &examples, AttackKind kind, const Thesaurus &th,
                                      const AttackSettings &settings);

struct AttackReportRow {
    std::string model_id;
    std::string dataset_id;
    AttackOutcome outcome;
};

std::string attack_report_csv(const std::vector<AttackReportRow> &rows);

struct AttackRate {
    std::string model_id;
    std::string attack;
    std::map<std::string, double> per_dataset;
    double mean_rate = 0.0;  // unweighted over datasets
};

/// One entry per (model, attack), sorted.
std::vector<AttackRate> aggregate_attack_rates(const std::vector<AttackReportRow> &rows);

// ---------------------------------------------------------------------------
// Slices
// ---------------------------------------------------------------------------

struct SlicePredicate {
    enum class Kind { contains_any, length_between, label_is, regex };

    std::string name;
    Kind kind = Kind::contains_any;
    std::vector<std::string> words;  // contains_any, case-folded
    std::size_t lo = 0;              // length_between, inclusive whitespace-token counts
    std::size_t hi = 0;
    std::string label;               // label_is: label name or class index
    std::string pattern;             // regex (ECMAScript, searched in the raw text)

    /// Throws Error on empty word lists, lo > hi or an invalid pattern.
    void validate() const;
    [[nodiscard]] bool matches(const Example &ex, const std::vector<std::string> &label_names) const;
};

/// `slices:` list; each entry has `name` plus exactly one predicate key.
std::vector<SlicePredicate> parse_slice_config(std::string_view text, const std::string &file = "<slices>");

/// Members of `uids` (in the given order) whose examples satisfy the predicate.
std::vector<std::string> apply_slice(const Dataset &ds, const std::vector<std::string> &uids, const SlicePredicate &p);

struct SliceReportRow {
    std::string slice;
    std::size_t n_examples = 0;
    std::optional<double> accuracy;          // absent when the slice is empty
    std::optional<double> delta_vs_overall;
};

/// Overall test-set row first, then one row per slice.
std::vector<SliceReportRow> slice_report(const Trainable &model, const Dataset &ds, const FeaturizedDataset &fd,
                                         const std::vector<SlicePredicate> &slices);

std::string slice_report_csv(const std::vector<SliceReportRow> &rows);

}  // namespace benchkit
