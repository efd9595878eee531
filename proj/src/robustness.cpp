#include "benchkit/robustness.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>

#include "strict_yaml.hpp"

namespace benchkit {

std::string join_tokens(const std::vector<std::string> &tokens) {
    std::string out;
    for (const auto &t : tokens) {
        if (!out.empty()) {
            out += ' ';
        }
        out += t;
    }
    return out;
}

namespace {

std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char &c : out) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
    }
    return out;
}

double prob_of(const Prediction &p, int label) {
    const auto k = static_cast<std::size_t>(label);
    return k < p.class_probs.size() ? p.class_probs[k] : 0.0;
}

std::vector<std::string> without(const std::vector<std::string> &tokens, std::size_t i) {
    std::vector<std::string> out;
    out.reserve(tokens.size() - 1);
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        if (j != i) {
            out.push_back(tokens[j]);
        }
    }
    return out;
}

// Indices sorted by key descending (or ascending); ties keep the earlier position first.
std::vector<std::size_t> rank(const std::vector<double> &keys, bool descending) {
    std::vector<std::size_t> idx(keys.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return descending ? keys[a] > keys[b] : keys[a] < keys[b];
    });
    return idx;
}

AttackOutcome start_outcome(std::string_view attack, const Example &ex) {
    AttackOutcome o;
    o.attack = std::string(attack);
    o.uid = ex.uid;
    o.original = ex.text;
    o.perturbed = ex.text;
    o.label = ex.label;
    return o;
}

char random_letter(Rng &rng) { return static_cast<char>('a' + rng.uniform_int(0, 25)); }

// Insertions at each gap, adjacent swaps, deletions, substitutions; in that order, deduplicated.
std::vector<std::string> char_variants(const std::string &word, Rng &rng) {
    std::vector<std::string> out;
    std::set<std::string> seen{word};
    auto add = [&](std::string v) {
        if (!v.empty() && seen.insert(v).second) {
            out.push_back(std::move(v));
        }
    };
    for (std::size_t g = 0; g <= word.size(); ++g) {
        std::string v = word;
        v.insert(v.begin() + static_cast<std::ptrdiff_t>(g), random_letter(rng));
        add(std::move(v));
    }
    for (std::size_t i = 0; i + 1 < word.size(); ++i) {
        std::string v = word;
        std::swap(v[i], v[i + 1]);
        add(std::move(v));
    }
    for (std::size_t i = 0; i < word.size(); ++i) {
        std::string v = word;
        v.erase(i, 1);
        add(std::move(v));
    }
    for (std::size_t i = 0; i < word.size(); ++i) {
        std::string v = word;
        char c = random_letter(rng);
        while (c == word[i]) {
            c = random_letter(rng);
        }
        v[i] = c;
        add(std::move(v));
    }
    return out;
}

}  // namespace

ImportanceResult token_importance(TextClassifier &clf, const std::vector<std::string> &tokens, int label) {
    if (tokens.empty()) {
        throw Error("token importance needs a non-empty text");
    }
    ImportanceResult r;
    r.base = clf.predict(join_tokens(tokens));
    const double p0 = prob_of(r.base, label);
    r.importance.reserve(tokens.size());
    r.without.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        r.without.push_back(clf.predict(join_tokens(without(tokens, i))));
        r.importance.push_back(p0 - prob_of(r.without.back(), label));
    }
    return r;
}

AttackOutcome attack_deepwordbug(TextClassifier &clf, const Example &ex, std::size_t budget, std::uint64_t seed) {
    AttackOutcome o = start_outcome("deepwordbug", ex);
    const std::size_t q0 = clf.queries();
    std::vector<std::string> tokens = whitespace_tokens(ex.text);
    if (tokens.empty()) {
        const Prediction p = clf.predict(ex.text);
        o.pred_before = o.pred_after = p.predicted_class;
        o.model_queries = clf.queries() - q0;
        return o;
    }
    const ImportanceResult imp = token_importance(clf, tokens, ex.label);
    o.pred_before = o.pred_after = imp.base.predicted_class;
    double current = prob_of(imp.base, ex.label);
    const auto order = rank(imp.importance, true);
    for (std::size_t k = 0; k < std::min(budget, order.size()); ++k) {
        const std::size_t pos = order[k];
        Rng rng(seed ^ splitmix64(pos + 1));
        const auto variants = char_variants(tokens[pos], rng);
        std::optional<std::string> best;
        Prediction best_pred;
        double best_drop = 0.0;
        for (const auto &v : variants) {
            auto trial = tokens;
            trial[pos] = v;
            const Prediction p = clf.predict(join_tokens(trial));
            const double drop = current - prob_of(p, ex.label);
            if (drop > best_drop) {
                best_drop = drop;
                best = v;
                best_pred = p;
            }
        }
        if (!best) {
            continue;  // no variant lowers the true-class probability
        }
        tokens[pos] = *best;
        current = prob_of(best_pred, ex.label);
        o.pred_after = best_pred.predicted_class;
        ++o.edits_used;
        if (o.pred_after != o.pred_before) {
            o.success = true;
            break;
        }
    }
    o.perturbed = o.edits_used > 0 ? join_tokens(tokens) : ex.text;
    o.model_queries = clf.queries() - q0;
    return o;
}

// ---------------------------------------------------------------------------
// Thesaurus and PWWS
// ---------------------------------------------------------------------------

void Thesaurus::add(std::string word, const std::vector<std::string> &synonyms) {
    word = ascii_lower(word);
    auto &list = entries_[word];
    for (const auto &s : synonyms) {
        if (s.empty() || ascii_lower(s) == word || std::find(list.begin(), list.end(), s) != list.end()) {
            continue;
        }
        list.push_back(s);
    }
    if (list.empty()) {
        entries_.erase(word);
    }
}

const std::vector<std::string> &Thesaurus::synonyms(std::string_view word) const {
    static const std::vector<std::string> none;
    const auto it = entries_.find(ascii_lower(word));
    return it == entries_.end() ? none : it->second;
}

Thesaurus Thesaurus::parse(std::string_view text) {
    Thesaurus th;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.empty() || line.front() == '#') {
            if (end == text.size()) break;
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0) {
            throw DataError(fmt::format("thesaurus line {}: expected word<TAB>synonyms", line_no));
        }
        std::vector<std::string> syns;
        std::string_view rest = line.substr(tab + 1);
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            std::string_view s = rest.substr(0, comma);
            while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
            while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
            if (!s.empty()) {
                syns.emplace_back(s);
            }
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        th.add(std::string(line.substr(0, tab)), syns);
        if (end == text.size()) {
            break;
        }
    }
    return th;
}

Thesaurus Thesaurus::load(const std::string &path) { return parse(read_file(path)); }

AttackOutcome attack_pwws(TextClassifier &clf, const Example &ex, const Thesaurus &th, std::size_t budget) {
    AttackOutcome o = start_outcome("pwws", ex);
    const std::size_t q0 = clf.queries();
    std::vector<std::string> tokens = whitespace_tokens(ex.text);
    if (tokens.empty()) {
        const Prediction p = clf.predict(ex.text);
        o.pred_before = o.pred_after = p.predicted_class;
        o.model_queries = clf.queries() - q0;
        return o;
    }
    const ImportanceResult imp = token_importance(clf, tokens, ex.label);
    o.pred_before = o.pred_after = imp.base.predicted_class;
    const double p0 = prob_of(imp.base, ex.label);

    // softmax over saliencies
    const double mx = *std::max_element(imp.importance.begin(), imp.importance.end());
    std::vector<double> soft(tokens.size());
    double z = 0.0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        soft[i] = std::exp(imp.importance[i] - mx);
        z += soft[i];
    }
    struct Candidate {
        std::size_t pos;
        std::string synonym;
    };
    std::vector<Candidate> candidates;
    std::vector<double> scores;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto &syns = th.synonyms(tokens[i]);
        if (syns.empty()) {
            continue;
        }
        double best_drop = -std::numeric_limits<double>::infinity();
        std::string best;
        for (const auto &s : syns) {
            auto trial = tokens;
            trial[i] = s;
            const double drop = p0 - prob_of(clf.predict(join_tokens(trial)), ex.label);
            if (drop > best_drop) {
                best_drop = drop;
                best = s;
            }
        }
        candidates.push_back({i, best});
        scores.push_back(best_drop * soft[i] / z);
    }
    const auto order = rank(scores, true);
    for (std::size_t k = 0; k < std::min(budget, order.size()); ++k) {
        const auto &c = candidates[order[k]];
        tokens[c.pos] = c.synonym;
        ++o.edits_used;
        const Prediction p = clf.predict(join_tokens(tokens));
        o.pred_after = p.predicted_class;
        if (o.pred_after != o.pred_before) {
            o.success = true;
            break;
        }
    }
    o.perturbed = o.edits_used > 0 ? join_tokens(tokens) : ex.text;
    o.model_queries = clf.queries() - q0;
    return o;
}

// ---------------------------------------------------------------------------
// Input reduction
// ---------------------------------------------------------------------------

AttackOutcome attack_input_reduction(TextClassifier &clf, const Example &ex, double theta) {
    if (!(theta > 0.0 && theta <= 1.0)) {
        throw Error("input reduction theta must lie in (0, 1]");
    }
    AttackOutcome o = start_outcome("input_reduction", ex);
    const std::size_t q0 = clf.queries();
    std::vector<std::string> tokens = whitespace_tokens(ex.text);
    if (tokens.empty()) {
        const Prediction p = clf.predict(ex.text);
        o.pred_before = o.pred_after = p.predicted_class;
        o.model_queries = clf.queries() - q0;
        return o;
    }
    const std::size_t original_len = tokens.size();
    bool first = true;
    while (tokens.size() > 1) {
        const ImportanceResult imp = token_importance(clf, tokens, ex.label);
        if (first) {
            o.pred_before = o.pred_after = imp.base.predicted_class;
            first = false;
        }
        const std::size_t i = rank(imp.importance, false).front();
        if (imp.without[i].predicted_class != o.pred_before) {
            break;
        }
        tokens = without(tokens, i);
        o.pred_after = imp.without[i].predicted_class;
        ++o.edits_used;
    }
    if (first) {
        const Prediction p = clf.predict(ex.text);
        o.pred_before = o.pred_after = p.predicted_class;
    }
    const auto target = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil((1.0 - theta) * static_cast<double>(original_len))));
    o.success = o.edits_used > 0 && tokens.size() <= target && o.pred_after == o.pred_before;
    o.perturbed = o.edits_used > 0 ? join_tokens(tokens) : ex.text;
    o.model_queries = clf.queries() - q0;
    return o;
}

double attack_success_rate(std::span<const AttackOutcome> outcomes) {
    if (outcomes.empty()) {
        throw Error("attack success rate needs at least one outcome");
    }
    const auto n = std::count_if(outcomes.begin(), outcomes.end(), [](const AttackOutcome &o) { return o.success; });
    return static_cast<double>(n) / static_cast<double>(outcomes.size());
}

std::string_view to_string(AttackKind k) {
    switch (k) {
        case AttackKind::deepwordbug: return "deepwordbug";
        case AttackKind::pwws: return "pwws";
        case AttackKind::input_reduction: return "input_reduction";
    }
    return "?";
}

std::optional<AttackKind> attack_kind_from_string(std::string_view s) {
    if (s == "deepwordbug") return AttackKind::deepwordbug;
    if (s == "pwws") return AttackKind::pwws;
    if (s == "input_reduction") return AttackKind::input_reduction;
    return std::nullopt;
}

std::vector<AttackOutcome> run_attack(const Trainable &model, const Featurizer &featurizer,
                                      const std::vector<Example> &examples, AttackKind kind, const Thesaurus &th,
                                      const AttackSettings &settings) {
    std::vector<AttackOutcome> out;
    const std::size_t n = settings.max_examples == 0 ? examples.size() : std::min(settings.max_examples, examples.size());
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Example &ex = examples[i];
        ModelClassifier clf(model, featurizer);
        switch (kind) {
            case AttackKind::deepwordbug:
                out.push_back(attack_deepwordbug(clf, ex, settings.deepwordbug_budget,
                                                 sha256_u64(fmt::format("{}\x1f{}", settings.seed, ex.uid))));
                break;
            case AttackKind::pwws:
                out.push_back(attack_pwws(clf, ex, th, settings.pwws_budget));
                break;
            case AttackKind::input_reduction:
                out.push_back(attack_input_reduction(clf, ex, settings.reduction_theta));
                break;
        }
    }
    return out;
}

std::string attack_report_csv(const std::vector<AttackReportRow> &rows) {
    std::string out = csv_row({"model_id", "dataset_id", "attack", "uid", "label", "pred_before", "pred_after",
                               "edits_used", "model_queries", "success", "original", "perturbed"});
    for (const auto &r : rows) {
        const auto &o = r.outcome;
        out += csv_row({r.model_id, r.dataset_id, o.attack, o.uid, std::to_string(o.label),
                        std::to_string(o.pred_before), std::to_string(o.pred_after), std::to_string(o.edits_used),
                        std::to_string(o.model_queries), o.success ? "true" : "false", o.original, o.perturbed});
    }
    return out;
}

std::vector<AttackRate> aggregate_attack_rates(const std::vector<AttackReportRow> &rows) {
    std::map<std::pair<std::string, std::string>, std::map<std::string, std::pair<std::size_t, std::size_t>>> counts;
    for (const auto &r : rows) {
        auto &c = counts[{r.model_id, r.outcome.attack}][r.dataset_id];
        c.first += r.outcome.success ? 1 : 0;
        c.second += 1;
    }
    std::vector<AttackRate> out;
    for (const auto &[key, per] : counts) {
        AttackRate a;
        a.model_id = key.first;
        a.attack = key.second;
        double sum = 0.0;
        for (const auto &[ds, c] : per) {
            const double rate = static_cast<double>(c.first) / static_cast<double>(c.second);
            a.per_dataset[ds] = rate;
            sum += rate;
        }
        a.mean_rate = sum / static_cast<double>(per.size());
        out.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Slices
// ---------------------------------------------------------------------------

void SlicePredicate::validate() const {
    if (name.empty()) {
        throw Error("slice needs a name");
    }
    switch (kind) {
        case Kind::contains_any:
            if (words.empty()) {
                throw Error(fmt::format("slice '{}': word list must be non-empty", name));
            }
            break;
        case Kind::length_between:
            if (lo > hi) {
                throw Error(fmt::format("slice '{}': length bounds need lo <= hi", name));
            }
            break;
        case Kind::label_is:
            if (label.empty()) {
                throw Error(fmt::format("slice '{}': label must be non-empty", name));
            }
            break;
        case Kind::regex:
            try {
                std::regex re(pattern);
            } catch (const std::regex_error &e) {
                throw Error(fmt::format("slice '{}': invalid regex '{}': {}", name, pattern, e.what()));
            }
            break;
    }
}

bool SlicePredicate::matches(const Example &ex, const std::vector<std::string> &label_names) const {
    switch (kind) {
        case Kind::contains_any: {
            PreprocessParams pp;
            pp.lowercase = true;
            for (const auto &tok : tokenize(ex.text, pp)) {
                for (const auto &w : words) {
                    if (tok == ascii_lower(w)) {
                        return true;
                    }
                }
            }
            return false;
        }
        case Kind::length_between: {
            const auto n = whitespace_tokens(ex.text).size();
            return n >= lo && n <= hi;
        }
        case Kind::label_is: {
            const auto k = static_cast<std::size_t>(ex.label);
            return (k < label_names.size() && label_names[k] == label) || std::to_string(ex.label) == label;
        }
        case Kind::regex:
            return std::regex_search(ex.text, std::regex(pattern));
    }
    return false;
}

std::vector<SlicePredicate> parse_slice_config(std::string_view text, const std::string &file) {
    const YAML::Node root = detail::load_strict_yaml(text, file);
    auto fail = [&](const YAML::Node &n, const std::string &msg) {
        throw ConfigError(detail::yaml_location(file, n.Mark()), msg);
    };
    if (!root.IsMap()) {
        fail(root, "slice config must be a mapping with a 'slices' list");
    }
    for (auto it = root.begin(); it != root.end(); ++it) {
        if (it->first.Scalar() != "slices") {
            fail(it->first, fmt::format("unknown key '{}' in slice config", it->first.Scalar()));
        }
    }
    const YAML::Node list = root["slices"];
    if (!list.IsSequence()) {
        fail(list, "'slices' must be a list");
    }
    std::vector<SlicePredicate> out;
    std::set<std::string> names;
    for (std::size_t i = 0; i < list.size(); ++i) {
        const YAML::Node n = list[i];
        if (!n.IsMap()) {
            fail(n, "each slice must be a mapping");
        }
        SlicePredicate p;
        int predicates = 0;
        for (auto it = n.begin(); it != n.end(); ++it) {
            const std::string key = it->first.Scalar();
            const YAML::Node v = it->second;
            if (key == "name") {
                if (!v.IsScalar()) fail(v, "slice name must be a string");
                p.name = v.Scalar();
            } else if (key == "contains_any") {
                ++predicates;
                p.kind = SlicePredicate::Kind::contains_any;
                if (!v.IsSequence()) fail(v, "contains_any must be a list of words");
                for (const auto &w : v) {
                    if (!w.IsScalar()) fail(w, "contains_any entries must be strings");
                    p.words.push_back(ascii_lower(w.Scalar()));
                }
            } else if (key == "length_between") {
                ++predicates;
                p.kind = SlicePredicate::Kind::length_between;
                if (!v.IsSequence() || v.size() != 2) fail(v, "length_between must be [lo, hi]");
                try {
                    p.lo = v[0].as<std::size_t>();
                    p.hi = v[1].as<std::size_t>();
                } catch (const YAML::Exception &) {
                    fail(v, "length_between bounds must be non-negative integers");
                }
            } else if (key == "label_is") {
                ++predicates;
                p.kind = SlicePredicate::Kind::label_is;
                if (!v.IsScalar()) fail(v, "label_is must be a label name or index");
                p.label = v.Scalar();
            } else if (key == "regex") {
                ++predicates;
                p.kind = SlicePredicate::Kind::regex;
                if (!v.IsScalar()) fail(v, "regex must be a string");
                p.pattern = v.Scalar();
            } else {
                fail(it->first, fmt::format("unknown key '{}' in slice", key));
            }
        }
        if (predicates != 1) {
            fail(n, "each slice needs exactly one of contains_any, length_between, label_is, regex");
        }
        try {
            p.validate();
        } catch (const Error &e) {
            fail(n, e.what());
        }
        if (!names.insert(p.name).second) {
            fail(n, fmt::format("duplicate slice name '{}'", p.name));
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<std::string> apply_slice(const Dataset &ds, const std::vector<std::string> &uids, const SlicePredicate &p) {
    p.validate();
    std::map<std::string_view, const Example *> by_uid;
    for (const auto &ex : ds.examples) {
        by_uid.emplace(ex.uid, &ex);
    }
    std::vector<std::string> out;
    for (const auto &u : uids) {
        const auto it = by_uid.find(u);
        if (it != by_uid.end() && p.matches(*it->second, ds.label_names)) {
            out.push_back(u);
        }
    }
    return out;
}

std::vector<SliceReportRow> slice_report(const Trainable &model, const Dataset &ds, const FeaturizedDataset &fd,
                                         const std::vector<SlicePredicate> &slices) {
    std::map<std::string_view, std::size_t> row_of;
    for (std::size_t i = 0; i < fd.uids.size(); ++i) {
        row_of.emplace(fd.uids[i], i);
    }
    std::vector<std::string> test_uids;
    std::map<std::string, bool> correct;
    for (const auto i : fd.test_idx) {
        test_uids.push_back(fd.uids[i]);
        correct[fd.uids[i]] = model.predict_proba(fd.vectors[i]).predicted_class == fd.labels[i];
    }
    auto accuracy_of = [&](const std::vector<std::string> &uids) -> std::optional<double> {
        if (uids.empty()) {
            return std::nullopt;
        }
        std::size_t ok = 0;
        for (const auto &u : uids) {
            ok += correct[u] ? 1 : 0;
        }
        return static_cast<double>(ok) / static_cast<double>(uids.size());
    };
    std::vector<SliceReportRow> rows;
    const auto overall = accuracy_of(test_uids);
    rows.push_back({"overall", test_uids.size(), overall, overall ? std::optional<double>(0.0) : std::nullopt});
    for (const auto &s : slices) {
        const auto members = apply_slice(ds, test_uids, s);
        const auto acc = accuracy_of(members);
        std::optional<double> delta;
        if (acc && overall) {
            delta = *acc - *overall;
        }
        rows.push_back({s.name, members.size(), acc, delta});
    }
    return rows;
}

std::string slice_report_csv(const std::vector<SliceReportRow> &rows) {
    std::string out = csv_row({"slice", "n_examples", "accuracy", "delta_vs_overall"});
    for (const auto &r : rows) {
        out += csv_row({r.slice, std::to_string(r.n_examples), r.accuracy ? format_real(*r.accuracy) : std::string(),
                        r.delta_vs_overall ? format_real(*r.delta_vs_overall) : std::string()});
    }
    return out;
}

}  // namespace benchkit
