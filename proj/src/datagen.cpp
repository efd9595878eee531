#include "benchkit/datagen.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <set>
#include <unordered_map>

#ifndef BENCHKIT_DATA_DIR
#define BENCHKIT_DATA_DIR "data"
#endif

namespace benchkit {

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    // strip UTF-8 BOM
    if (text.starts_with("\xEF\xBB\xBF")) {
        i = 3;
    }
    auto end_row = [&]() {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
        if (!(row.size() == 1 && row.front().empty())) {
            rows.push_back(std::move(row));
        }
        row.clear();
    };
    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            field_started = false;
        } else if (c == '\n') {
            end_row();
        } else if (c == '\r') {
            if (i + 1 < text.size() && text[i + 1] == '\n') {
                ++i;
            }
            end_row();
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) {
        throw DataError("unterminated quoted CSV field");
    }
    if (field_started || !row.empty()) {
        end_row();
    }
    return rows;
}

std::string csv_field(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"') {
            out += "\"\"";
        } else {
            out.push_back(c);
        }
    }
    out.push_back('"');
    return out;
}

std::string csv_row(const std::vector<std::string> &fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            out.push_back(',');
        }
        out += csv_field(fields[i]);
    }
    out.push_back('\n');
    return out;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::bundled: return "bundled";
        case Provenance::user_csv: return "user_csv";
        case Provenance::synthetic: return "synthetic";
    }
    return "?";
}

namespace {

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::size_t resolve_column(const std::vector<std::string> &header, const std::string &column, std::string_view role,
                           const std::string &dataset_id) {
    if (const auto it = std::find(header.begin(), header.end(), column); it != header.end()) {
        return static_cast<std::size_t>(it - header.begin());
    }
    std::size_t idx = 0;
    const auto res = std::from_chars(column.data(), column.data() + column.size(), idx);
    if (res.ec == std::errc{} && res.ptr == column.data() + column.size() && idx < header.size()) {
        return idx;
    }
    throw DataError(fmt::format("dataset '{}': missing {} column '{}'", dataset_id, role, column));
}

/// Assigns digest uids; identical texts are told apart by their occurrence number.
void assign_uids(std::vector<Example> &examples) {
    std::unordered_map<std::string, std::size_t> seen;
    for (auto &ex : examples) {
        const std::size_t occurrence = seen[ex.text]++;
        ex.uid = sha256_hex(fmt::format("{}\x1f{}", occurrence, ex.text)).substr(0, 16);
    }
}

}  // namespace

Dataset dataset_from_csv(std::string_view csv_text, const std::string &dataset_id, const std::string &text_column,
                         const std::string &label_column, Provenance provenance) {
    const auto rows = parse_csv(csv_text);
    if (rows.size() < 2) {
        throw DataError(fmt::format("dataset '{}' is empty", dataset_id));
    }
    const auto &header = rows.front();
    const std::size_t text_idx = resolve_column(header, text_column, "text", dataset_id);
    const std::size_t label_idx = resolve_column(header, label_column, "label", dataset_id);

    Dataset ds;
    ds.dataset_id = dataset_id;
    ds.provenance = provenance;
    std::map<std::string, int> label_index;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto &row = rows[r];
        if (text_idx >= row.size() || label_idx >= row.size()) {
            throw DataError(fmt::format("dataset '{}': row {} has {} fields", dataset_id, r + 1, row.size()));
        }
        if (is_blank(row[text_idx]) || is_blank(row[label_idx])) {
            ++ds.dropped_rows;
            continue;
        }
        auto [it, inserted] = label_index.emplace(row[label_idx], static_cast<int>(ds.label_names.size()));
        if (inserted) {
            ds.label_names.push_back(row[label_idx]);
        }
        ds.examples.push_back({"", row[text_idx], it->second});
    }
    if (ds.examples.empty()) {
        throw DataError(fmt::format("dataset '{}' has no usable rows", dataset_id));
    }
    if (ds.label_names.size() < 2) {
        throw DataError(fmt::format("dataset '{}' has a single class; at least two are required", dataset_id));
    }
    assign_uids(ds.examples);
    return ds;
}

void SyntheticParams::validate() const {
    if (n_samples < 1) {
        throw DataError("synthetic: n must be >= 1");
    }
    if (n_classes < 2) {
        throw DataError("synthetic: classes must be >= 2");
    }
    if (vocab_size < n_classes * 2) {
        throw DataError(fmt::format("synthetic: vocab {} too small to allocate signal sets for {} classes (need >= {})",
                                    vocab_size, n_classes, n_classes * 2));
    }
    if (!(mean_len > 0.0) || !std::isfinite(mean_len)) {
        throw DataError("synthetic: mean_len must be > 0");
    }
    if (!(len_dispersion > 0.0) || !std::isfinite(len_dispersion)) {
        throw DataError("synthetic: dispersion must be > 0");
    }
    if (!(signal_prob >= 0.0 && signal_prob <= 1.0)) {
        throw DataError("synthetic: p must be in [0, 1]");
    }
    if (!(label_noise >= 0.0 && label_noise < 0.5)) {
        throw DataError("synthetic: noise must be in [0, 0.5)");
    }
}

std::string SyntheticParams::to_id() const {
    return fmt::format("{}n={},classes={},vocab={},mean_len={},dispersion={},p={},noise={},seed={}", kSyntheticPrefix,
                       n_samples, n_classes, vocab_size, format_real(mean_len), format_real(len_dispersion),
                       format_real(signal_prob), format_real(label_noise), seed);
}

SyntheticParams SyntheticParams::from_id(std::string_view id) {
    if (!id.starts_with(kSyntheticPrefix)) {
        throw DataError(fmt::format("not a synthetic dataset id: '{}'", id));
    }
    SyntheticParams p;
    std::string_view rest = id.substr(kSyntheticPrefix.size());
    std::set<std::string, std::less<>> seen;
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        const std::string_view item = rest.substr(0, comma);
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) {
            throw DataError(fmt::format("synthetic: expected key=value, got '{}'", item));
        }
        const std::string key(item.substr(0, eq));
        const std::string_view value = item.substr(eq + 1);
        if (!seen.insert(key).second) {
            throw DataError(fmt::format("synthetic: duplicate key '{}'", key));
        }
        auto as_int = [&]() {
            const auto v = param_as_int(infer_param(value));
            if (!v) {
                throw DataError(fmt::format("synthetic: '{}' needs an integer, got '{}'", key, value));
            }
            return *v;
        };
        auto as_real = [&]() {
            const auto v = param_as_real(infer_param(value));
            if (!v) {
                throw DataError(fmt::format("synthetic: '{}' needs a number, got '{}'", key, value));
            }
            return *v;
        };
        if (key == "n") {
            p.n_samples = as_int();
        } else if (key == "classes") {
            p.n_classes = as_int();
        } else if (key == "vocab") {
            p.vocab_size = as_int();
        } else if (key == "mean_len") {
            p.mean_len = as_real();
        } else if (key == "dispersion") {
            p.len_dispersion = as_real();
        } else if (key == "p") {
            p.signal_prob = as_real();
        } else if (key == "noise") {
            p.label_noise = as_real();
        } else if (key == "seed") {
            const auto v = as_int();
            if (v < 0) {
                throw DataError("synthetic: seed must be non-negative");
            }
            p.seed = static_cast<std::uint64_t>(v);
        } else {
            throw DataError(fmt::format("synthetic: unknown key '{}'", key));
        }
    }
    p.validate();
    return p;
}

std::string synthetic_word(std::size_t i) {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    constexpr std::size_t radix = consonants.size() * vowels.size();
    std::size_t x = i + radix;  // at least two syllables
    std::string word;
    do {
        const std::size_t s = x % radix;
        word.push_back(consonants[s / vowels.size()]);
        word.push_back(vowels[s % vowels.size()]);
        x /= radix;
    } while (x > 0);
    return word;
}

std::size_t synthetic_signal_words_per_class(const SyntheticParams &p) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(p.vocab_size / (2 * p.n_classes)));
}

Dataset generate_synthetic(const SyntheticParams &params) {
    params.validate();
    const auto n_classes = static_cast<std::size_t>(params.n_classes);
    const std::size_t per_class = synthetic_signal_words_per_class(params);
    const std::size_t background_start = per_class * n_classes;
    const std::size_t background = static_cast<std::size_t>(params.vocab_size) - background_start;

    Rng rng(params.seed);
    // negative binomial length as a gamma-Poisson mixture
    std::gamma_distribution<double> rate(params.len_dispersion, params.mean_len / params.len_dispersion);

    Dataset ds;
    ds.dataset_id = params.to_id();
    ds.provenance = Provenance::synthetic;
    for (std::size_t k = 0; k < n_classes; ++k) {
        ds.label_names.push_back(fmt::format("class{}", k));
    }
    ds.examples.reserve(static_cast<std::size_t>(params.n_samples));
    std::string text;
    for (std::int64_t i = 0; i < params.n_samples; ++i) {
        const auto cls = static_cast<std::size_t>(rng.uniform_int(0, params.n_classes - 1));
        std::poisson_distribution<std::int64_t> count(rate(rng.engine()));
        const std::int64_t len = std::max<std::int64_t>(1, count(rng.engine()));
        text.clear();
        for (std::int64_t t = 0; t < len; ++t) {
            std::size_t word = 0;
            if (rng.uniform() < params.signal_prob) {
                word = cls * per_class + rng.index(per_class);
            } else {
                word = background_start + rng.index(background);
            }
            if (t > 0) {
                text.push_back(' ');
            }
            text += synthetic_word(word);
        }
        std::size_t label = cls;
        if (rng.uniform() < params.label_noise) {
            const std::size_t shift = 1 + rng.index(n_classes - 1);
            label = (cls + shift) % n_classes;
        }
        ds.examples.push_back({"", text, static_cast<int>(label)});
    }
    assign_uids(ds.examples);
    return ds;
}

DatasetRegistry::DatasetRegistry(std::string bundled_dir) : bundled_dir_(std::move(bundled_dir)) {}

std::string DatasetRegistry::default_data_dir() {
    if (const char *env = std::getenv("BENCHKIT_DATA_DIR"); env != nullptr && *env != '\0') {
        return env;
    }
    return BENCHKIT_DATA_DIR;
}

void DatasetRegistry::register_dataset(DatasetDescriptor desc) {
    if (desc.id.empty() || desc.id.starts_with(kSyntheticPrefix)) {
        throw DataError(fmt::format("invalid dataset id '{}'", desc.id));
    }
    if (resolves(desc.id)) {
        throw DataError(fmt::format("dataset id '{}' is already registered", desc.id));
    }
    std::error_code ec;
    if (!std::filesystem::is_regular_file(desc.path, ec)) {
        throw DataError(fmt::format("dataset '{}': unreadable path '{}'", desc.id, desc.path));
    }
    registered_.emplace(desc.id, std::move(desc));
}

bool DatasetRegistry::resolves(std::string_view id) const {
    if (id.starts_with(kSyntheticPrefix)) {
        try {
            SyntheticParams::from_id(id);
            return true;
        } catch (const DataError &) {
            return false;
        }
    }
    if (registered_.count(std::string(id)) > 0) {
        return true;
    }
    const auto ids = bundled_ids();
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

std::vector<std::string> DatasetRegistry::bundled_ids() const {
    std::vector<std::string> ids;
    std::error_code ec;
    for (const auto &entry : std::filesystem::directory_iterator(bundled_dir_, ec)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv") {
            ids.push_back(entry.path().stem().string());
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<std::string> DatasetRegistry::registered_ids() const {
    std::vector<std::string> ids;
    for (const auto &[k, v] : registered_) {
        ids.push_back(k);
    }
    return ids;
}

std::vector<std::string> DatasetRegistry::list_ids() const {
    auto ids = bundled_ids();
    const auto reg = registered_ids();
    ids.insert(ids.end(), reg.begin(), reg.end());
    return ids;
}

Dataset DatasetRegistry::load(std::string_view id) const {
    if (id.starts_with(kSyntheticPrefix)) {
        return generate_synthetic(SyntheticParams::from_id(id));
    }
    if (const auto it = registered_.find(std::string(id)); it != registered_.end()) {
        const auto &d = it->second;
        return dataset_from_csv(read_file(d.path), d.id, d.text_column, d.label_column, Provenance::user_csv);
    }
    const auto path = std::filesystem::path(bundled_dir_) / (std::string(id) + ".csv");
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        std::string known;
        for (const auto &k : list_ids()) {
            known += known.empty() ? k : ", " + k;
        }
        throw DataError(fmt::format("unknown dataset '{}' (registered: {})", id, known));
    }
    return dataset_from_csv(read_file(path.string()), std::string(id), "text", "label", Provenance::bundled);
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

void SplitRatios::validate() const {
    if (train < 0.0 || val < 0.0 || test < 0.0) {
        throw DataError("split ratios must be non-negative");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) {
        throw DataError(fmt::format("split ratios sum to {} (expected 1)", train + val + test));
    }
}

SplitAssignment split(const Dataset &ds, const SplitRatios &ratios, std::uint64_t split_seed) {
    ratios.validate();
    SplitAssignment out;
    out.ratios = ratios;
    out.split_seed = split_seed;
    const double cut_train = ratios.train;
    const double cut_val = ratios.train + ratios.val;
    for (const auto &ex : ds.examples) {
        const std::uint64_t h = sha256_u64(fmt::format("{}\x1f{}", split_seed, ex.uid));
        const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
        if (u < cut_train) {
            out.train.push_back(ex.uid);
        } else if (u < cut_val || ratios.test == 0.0) {
            (ratios.val > 0.0 ? out.val : out.train).push_back(ex.uid);
        } else {
            out.test.push_back(ex.uid);
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    const std::pair<const char *, std::pair<double, std::size_t>> parts[] = {
        {"train", {ratios.train, out.train.size()}},
        {"val", {ratios.val, out.val.size()}},
        {"test", {ratios.test, out.test.size()}}};
    for (const auto &[name, info] : parts) {
        if (info.first > 0.0 && info.second == 0) {
            out.warnings.push_back(fmt::format("dataset '{}': {} split is empty", ds.dataset_id, name));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

void PreprocessParams::validate() const {
    if (ngram_max != 1 && ngram_max != 2) {
        throw DataError("ngram_max must be 1 or 2");
    }
    if (min_token_freq < 1) {
        throw DataError("min_token_freq must be >= 1");
    }
    if (max_vocab < 1) {
        throw DataError("max_vocab must be >= 1");
    }
}

std::string_view to_string(TokenPattern t) { return t == TokenPattern::unicode_word ? "unicode_word" : "whitespace"; }
std::string_view to_string(Weighting w) { return w == Weighting::count ? "count" : "tfidf"; }

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c == '_' || c >= 0x80; }

char fold(char c, bool lowercase) {
    return lowercase && c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace

std::vector<std::string> whitespace_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : text) {
        if (std::isspace(static_cast<unsigned char>(c)) != 0) {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

std::vector<std::string> tokenize(std::string_view text, const PreprocessParams &pp) {
    std::vector<std::string> unigrams;
    if (pp.token_pattern == TokenPattern::whitespace) {
        unigrams = whitespace_tokens(text);
        for (auto &t : unigrams) {
            for (char &c : t) {
                c = fold(c, pp.lowercase);
            }
        }
    } else {
        std::string cur;
        for (const char c : text) {
            if (is_word_byte(static_cast<unsigned char>(c))) {
                cur.push_back(fold(c, pp.lowercase));
            } else if (!cur.empty()) {
                unigrams.push_back(std::move(cur));
                cur.clear();
            }
        }
        if (!cur.empty()) {
            unigrams.push_back(std::move(cur));
        }
    }
    if (pp.ngram_max < 2 || unigrams.size() < 2) {
        return unigrams;
    }
    std::vector<std::string> out = unigrams;
    for (std::size_t i = 0; i + 1 < unigrams.size(); ++i) {
        out.push_back(unigrams[i] + " " + unigrams[i + 1]);
    }
    return out;
}

Featurizer Featurizer::fit(const std::vector<std::string_view> &train_texts, const PreprocessParams &pp) {
    pp.validate();
    std::map<std::string, std::pair<std::size_t, std::size_t>> stats;  // token -> (term freq, doc freq)
    for (const auto text : train_texts) {
        const auto toks = tokenize(text, pp);
        std::set<std::string_view> in_doc;
        for (const auto &t : toks) {
            auto &s = stats[t];
            ++s.first;
            if (in_doc.insert(t).second) {
                ++s.second;
            }
        }
    }
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> kept;
    for (auto &[tok, s] : stats) {
        if (s.first >= static_cast<std::size_t>(pp.min_token_freq)) {
            kept.emplace_back(tok, s);
        }
    }
    if (kept.empty()) {
        throw DataError("empty vocabulary after min_token_freq filtering");
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto &a, const auto &b) {
        if (a.second.first != b.second.first) {
            return a.second.first > b.second.first;
        }
        return a.first < b.first;
    });
    if (kept.size() > static_cast<std::size_t>(pp.max_vocab)) {
        kept.resize(static_cast<std::size_t>(pp.max_vocab));
    }
    Featurizer f;
    f.pp_ = pp;
    const auto n_docs = static_cast<double>(train_texts.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        f.vocab_.emplace(kept[i].first, static_cast<std::uint32_t>(i));
        f.tokens_.push_back(kept[i].first);
        const auto df = static_cast<double>(kept[i].second.second);
        f.idf_.push_back(std::log((1.0 + n_docs) / (1.0 + df)) + 1.0);
    }
    return f;
}

SparseVector Featurizer::transform(std::string_view text) const {
    std::map<std::uint32_t, double> counts;
    for (const auto &t : tokenize(text, pp_)) {
        if (const auto it = vocab_.find(t); it != vocab_.end()) {
            counts[it->second] += 1.0;
        }
    }
    SparseVector v;
    v.reserve(counts.size());
    for (const auto &[idx, c] : counts) {
        v.push_back({idx, pp_.weighting == Weighting::tfidf ? c * idf_[idx] : c});
    }
    return v;
}

FeaturizedDataset featurize(const Dataset &ds, const SplitAssignment &split, const PreprocessParams &pp) {
    std::map<std::string_view, std::size_t> index_of;
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        index_of.emplace(ds.examples[i].uid, i);
    }
    std::vector<int> seen(ds.examples.size(), 0);
    auto to_indices = [&](const std::vector<std::string> &uids) {
        std::vector<std::size_t> idx;
        idx.reserve(uids.size());
        for (const auto &u : uids) {
            const auto it = index_of.find(u);
            if (it == index_of.end()) {
                throw DataError(fmt::format("split references unknown uid '{}'", u));
            }
            ++seen[it->second];
            idx.push_back(it->second);
        }
        return idx;
    };
    FeaturizedDataset out;
    out.train_idx = to_indices(split.train);
    out.val_idx = to_indices(split.val);
    out.test_idx = to_indices(split.test);
    if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; })) {
        throw DataError(fmt::format("split does not partition dataset '{}'", ds.dataset_id));
    }

    std::vector<std::string_view> train_texts;
    train_texts.reserve(out.train_idx.size());
    for (const std::size_t i : out.train_idx) {
        train_texts.push_back(ds.examples[i].text);
    }
    out.featurizer = Featurizer::fit(train_texts, pp);
    out.feature_dim = out.featurizer.feature_dim();
    out.n_classes = ds.n_classes();
    out.uids.reserve(ds.examples.size());
    out.vectors.reserve(ds.examples.size());
    out.labels.reserve(ds.examples.size());
    for (const auto &ex : ds.examples) {
        out.uids.push_back(ex.uid);
        out.vectors.push_back(out.featurizer.transform(ex.text));
        out.labels.push_back(ex.label);
    }
    return out;
}

DatasetAttributes dataset_attributes(const Dataset &ds) {
    if (ds.examples.empty()) {
        throw DataError("dataset attributes need a non-empty dataset");
    }
    std::size_t tokens = 0;
    for (const auto &ex : ds.examples) {
        tokens += whitespace_tokens(ex.text).size();
    }
    return {ds.examples.size(), static_cast<double>(tokens) / static_cast<double>(ds.examples.size()), ds.n_classes()};
}

}  // namespace benchkit
