#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "benchkit/common.hpp"

namespace benchkit {

// ---------------------------------------------------------------------------
// CSV (RFC 4180 style: quoted fields, doubled quotes, CRLF or LF)
// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::string csv_field(std::string_view field);
std::string csv_row(const std::vector<std::string> &fields);

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Example {
    std::string uid;
    std::string text;
    int label = 0;
    bool operator==(const Example &) const = default;
};

enum class Provenance { bundled, user_csv, synthetic };
std::string_view to_string(Provenance p);

struct Dataset {
    std::string dataset_id;
    std::vector<Example> examples;
    std::vector<std::string> label_names;
    Provenance provenance = Provenance::bundled;
    std::size_t dropped_rows = 0;  // blank-text rows skipped while loading

    [[nodiscard]] std::size_t n_classes() const noexcept { return label_names.size(); }
};

/// A user CSV. Columns are header names, or zero-based indices when no header matches.
struct DatasetDescriptor {
    std::string id;
    std::string path;
    std::string text_column = "text";
    std::string label_column = "label";
    bool operator==(const DatasetDescriptor &) const = default;
};

/// Builds a dataset from CSV text. uids are digests of (occurrence number of the text, text);
/// labels become dense indices in first-appearance order.
Dataset dataset_from_csv(std::string_view csv_text, const std::string &dataset_id, const std::string &text_column,
                         const std::string &label_column, Provenance provenance);

struct SyntheticParams {
    std::int64_t n_samples = 1000;
    std::int64_t n_classes = 2;
    std::int64_t vocab_size = 200;
    double mean_len = 20.0;
    double len_dispersion = 5.0;
    double signal_prob = 0.3;  // p
    double label_noise = 0.0;  // epsilon
    std::uint64_t seed = 0;
    bool operator==(const SyntheticParams &) const = default;

    void validate() const;
    /// `synthetic:n=..,classes=..,vocab=..,mean_len=..,dispersion=..,p=..,noise=..,seed=..`
    [[nodiscard]] std::string to_id() const;
    static SyntheticParams from_id(std::string_view id);
};

inline constexpr std::string_view kSyntheticPrefix = "synthetic:";

/// Pseudo-word for vocabulary index i (bijective, lowercase ASCII).
std::string synthetic_word(std::size_t i);
/// Number of signal words reserved for each class.
std::size_t synthetic_signal_words_per_class(const SyntheticParams &p);

Dataset generate_synthetic(const SyntheticParams &params);

/// Bundled corpora under a data directory plus user-registered CSVs.
class DatasetRegistry {
  public:
    explicit DatasetRegistry(std::string bundled_dir = default_data_dir());

    /// Directory from BENCHKIT_DATA_DIR, falling back to the build-time location.
    static std::string default_data_dir();

    void register_dataset(DatasetDescriptor desc);
    [[nodiscard]] bool resolves(std::string_view id) const;
    [[nodiscard]] std::vector<std::string> bundled_ids() const;
    [[nodiscard]] std::vector<std::string> registered_ids() const;
    /// Bundled then registered ids, each group sorted.
    [[nodiscard]] std::vector<std::string> list_ids() const;
    [[nodiscard]] const std::map<std::string, DatasetDescriptor> &registered() const noexcept { return registered_; }

    [[nodiscard]] Dataset load(std::string_view id) const;

  private:
    std::string bundled_dir_;
    std::map<std::string, DatasetDescriptor> registered_;
};

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
    bool operator==(const SplitRatios &) const = default;

    void validate() const;
};

struct SplitAssignment {
    std::vector<std::string> train;  // sorted uids
    std::vector<std::string> val;
    std::vector<std::string> test;
    SplitRatios ratios;
    std::uint64_t split_seed = 0;
    std::vector<std::string> warnings;
};

/// Bucket of uid u is decided by a digest of (split_seed, u) against the cumulative ratios.
SplitAssignment split(const Dataset &ds, const SplitRatios &ratios, std::uint64_t split_seed);

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

enum class TokenPattern { unicode_word, whitespace };
enum class Weighting { count, tfidf };

struct PreprocessParams {
    bool lowercase = true;
    TokenPattern token_pattern = TokenPattern::unicode_word;
    int ngram_max = 1;
    int min_token_freq = 1;
    int max_vocab = 20000;
    Weighting weighting = Weighting::count;
    bool operator==(const PreprocessParams &) const = default;

    void validate() const;
};

std::string_view to_string(TokenPattern t);
std::string_view to_string(Weighting w);

/// Unigrams, plus space-joined bigrams when ngram_max is 2.
std::vector<std::string> tokenize(std::string_view text, const PreprocessParams &pp);
/// ASCII whitespace split, used for sentence length and for attack edit units.
std::vector<std::string> whitespace_tokens(std::string_view text);

struct SparseEntry {
    std::uint32_t index = 0;
    double value = 0.0;
    bool operator==(const SparseEntry &) const = default;
};
using SparseVector = std::vector<SparseEntry>;  // sorted by index

/// Fitted vocabulary and weighting; maps any text to a feature vector.
class Featurizer {
  public:
    Featurizer() = default;
    /// Vocabulary from the given documents only, truncated by (frequency desc, token asc).
    static Featurizer fit(const std::vector<std::string_view> &train_texts, const PreprocessParams &pp);

    [[nodiscard]] SparseVector transform(std::string_view text) const;
    [[nodiscard]] std::size_t feature_dim() const noexcept { return tokens_.size(); }
    [[nodiscard]] const std::map<std::string, std::uint32_t> &vocab() const noexcept { return vocab_; }
    [[nodiscard]] const std::vector<std::string> &tokens() const noexcept { return tokens_; }
    [[nodiscard]] const std::vector<double> &idf() const noexcept { return idf_; }
    [[nodiscard]] const PreprocessParams &params() const noexcept { return pp_; }

  private:
    PreprocessParams pp_;
    std::map<std::string, std::uint32_t> vocab_;
    std::vector<std::string> tokens_;
    std::vector<double> idf_;
};

struct FeaturizedDataset {
    Featurizer featurizer;
    std::size_t feature_dim = 0;
    std::size_t n_classes = 0;
    std::vector<std::string> uids;  // dataset order
    std::vector<SparseVector> vectors;
    std::vector<int> labels;
    // indices into the vectors above, ordered by uid
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::vector<std::size_t> test_idx;
};

FeaturizedDataset featurize(const Dataset &ds, const SplitAssignment &split, const PreprocessParams &pp);

struct DatasetAttributes {
    std::size_t size = 0;
    double avg_sentence_length = 0.0;  // mean whitespace-token count
    std::size_t n_classes = 0;
};

DatasetAttributes dataset_attributes(const Dataset &ds);

}  // namespace benchkit
