// Shared fixtures for the unit and acceptance suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "benchkit/config.hpp"
#include "benchkit/datagen.hpp"
#include "benchkit/hyperopt.hpp"
#include "benchkit/robustness.hpp"
#include "benchkit/trainables.hpp"

namespace benchkit::fixtures {

/// Naive Bayes with hand-set counts over a fixed vocabulary.
struct NbFixture {
    Featurizer featurizer;
    std::unique_ptr<NaiveBayes> model;
    std::map<std::string, std::vector<double>> counts;  // word -> per-class count
    std::vector<double> class_docs;

    /// Bayes rule computed directly from the count table, as products then normalized.
    [[nodiscard]] std::vector<double> oracle_posterior(const std::string &text) const {
        const std::size_t c = class_docs.size();
        const auto d = static_cast<double>(counts.size());
        double n_docs = 0.0;
        for (const double v : class_docs) n_docs += v;
        std::vector<double> totals(c, 0.0);
        for (const auto &[w, per] : counts) {
            for (std::size_t k = 0; k < c; ++k) totals[k] += per[k];
        }
        PreprocessParams pp;
        std::vector<double> post(c);
        for (std::size_t k = 0; k < c; ++k) {
            double p = (class_docs[k] + 1.0) / (n_docs + static_cast<double>(c));
            for (const auto &tok : tokenize(text, pp)) {
                const auto it = counts.find(tok);
                if (it == counts.end()) continue;
                p *= (it->second[k] + 1.0) / (totals[k] + d);
            }
            post[k] = p;
        }
        double z = 0.0;
        for (const double p : post) z += p;
        for (double &p : post) p /= z;
        return post;
    }
};

inline NbFixture make_nb(const std::map<std::string, std::vector<double>> &counts, std::vector<double> class_docs) {
    NbFixture f;
    f.counts = counts;
    f.class_docs = class_docs;
    std::string all;
    for (const auto &[w, per] : counts) all += w + " ";
    f.featurizer = Featurizer::fit({all}, PreprocessParams{});
    const std::size_t c = class_docs.size();
    f.model = std::make_unique<NaiveBayes>(f.featurizer.feature_dim(), c);
    auto &st = f.model->mutable_state();
    for (const auto &[w, per] : counts) {
        const auto idx = f.featurizer.vocab().at(w);
        for (std::size_t k = 0; k < c; ++k) st.weights[0].at(idx, k) = per[k];
    }
    for (std::size_t k = 0; k < c; ++k) st.weights[1].data[k] = class_docs[k];
    st.epochs_done = 1;
    return f;
}

/// "zork" alone decides class 1; "blarg" is strong class-0 evidence; the rest are near neutral.
inline NbFixture zork_fixture() {
    return make_nb({{"the", {5, 5}},
                    {"movie", {5, 5}},
                    {"was", {4, 4}},
                    {"plot", {3, 3}},
                    {"zork", {0, 20}},
                    {"blarg", {20, 0}}},
                   {10, 10});
}

/// Counts every prediction; wraps another classifier.
class CountingClassifier final : public TextClassifier {
  public:
    explicit CountingClassifier(TextClassifier &inner) : inner_(inner) {}
    std::size_t calls = 0;

  protected:
    Prediction predict_text(std::string_view text) override {
        ++calls;
        return inner_.predict(text);
    }

  private:
    TextClassifier &inner_;
};

/// Always the same distribution.
class ConstantClassifier final : public TextClassifier {
  public:
    explicit ConstantClassifier(std::vector<double> probs) : probs_(std::move(probs)) {}

  protected:
    Prediction predict_text(std::string_view) override { return Prediction::from_probs(probs_); }

  private:
    std::vector<double> probs_;
};

// "dull" leans to class 0 and "zork" carries class 1; "filler" only balances the per-class totals.
// "the dull zork" scores 0.0165 vs 0.0030 for class 1; without "zork" it is 0.030 vs 0.073.
inline NbFixture dull_zork() {
    return make_nb({{"the", {5, 5}}, {"dull", {6, 1}}, {"zork", {0, 10}}, {"filler", {9, 0}}}, {10, 10});
}

inline Example example(std::string text, int label, std::string uid = "u0") {
    return Example{std::move(uid), std::move(text), label};
}

/// Best-of-30 on f(x) = (x - 1.3)^2 over x in [-5, 5]: TPE against independent random draws.
/// Returns the number of seed pairs in which TPE ends strictly lower.
inline int tpe_wins_on_quadratic(int pairs, int trials = 30) {
    const SearchSpace space{SearchDimension{"x", DimensionKind::uniform, {}, -5.0, 5.0}};
    auto f = [](const ParamSet &p) {
        const double x = std::get<double>(p.at("x"));
        return (x - 1.3) * (x - 1.3);
    };
    int wins = 0;
    for (int s = 0; s < pairs; ++s) {
        const auto seed = static_cast<std::uint64_t>(1000 + s);
        double best_random = 1e300;
        for (const auto &p : sample_random(space, static_cast<std::size_t>(trials), seed)) {
            best_random = std::min(best_random, f(p));
        }
        std::vector<TrialRecord> history;
        double best_tpe = 1e300;
        for (int t = 0; t < trials; ++t) {
            const auto p = suggest_tpe(space, history, Direction::minimize, TpeSettings{},
                                       splitmix64(seed * 131 + static_cast<std::uint64_t>(t)));
            const double y = f(p);
            best_tpe = std::min(best_tpe, y);
            history.push_back(TrialRecord{static_cast<std::size_t>(t), p, y});
        }
        wins += best_tpe < best_random ? 1 : 0;
    }
    return wins;
}

/// One line-level edit to YAML text: delete, duplicate, re-indent, replace a value, splice a byte, or truncate.
inline std::string mutate_yaml(const std::string &text, Rng &rng) {
    static const std::vector<std::string> junk{"-1", "0", "abc", "1e309", "[", "{", "", "null", "~", "true",
                                               "\"\"", "[1, 2", "-", "? x", "&a", "*a", "0.5", "99999999999999999999",
                                               "synthetic:n=0", "nope", "{a: 1}", "[]"};
    std::vector<std::string> lines;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    if (lines.empty()) return text;
    const std::size_t i = rng.index(lines.size());
    switch (rng.uniform_int(0, 6)) {
        case 0:
            lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        case 1:
            lines.insert(lines.begin() + static_cast<std::ptrdiff_t>(i), lines[i]);
            break;
        case 2:
            lines[i] = rng.uniform() < 0.5 ? "  " + lines[i] : lines[i].substr(std::min<std::size_t>(2, lines[i].size()));
            break;
        case 3:
        case 4: {
            const auto colon = lines[i].find(": ");
            const auto &j = junk[rng.index(junk.size())];
            if (colon != std::string::npos) {
                lines[i] = lines[i].substr(0, colon + 2) + j;
            } else if (const auto dash = lines[i].find("- "); dash != std::string::npos) {
                lines[i] = lines[i].substr(0, dash + 2) + j;
            } else {
                lines[i] += j;
            }
            break;
        }
        case 5: {
            auto &l = lines[i];
            const char bytes[] = {':', '-', '"', '\'', '\t', '#', '\0', '\xff', '[', ' '};
            l.insert(l.begin() + static_cast<std::ptrdiff_t>(rng.index(l.size() + 1)), bytes[rng.index(sizeof(bytes))]);
            break;
        }
        default:
            lines.resize(i + 1);
            lines[i] = lines[i].substr(0, rng.index(lines[i].size() + 1));
            break;
    }
    std::string out;
    for (const auto &l : lines) out += l + "\n";
    return out;
}

struct FuzzOutcome {
    int plans = 0;
    int located = 0;
    std::vector<std::string> unlocated;  // messages of errors without a source position, or unexpected exceptions
};

/// Mutates one of the three inputs 1-3 times per case, then parses and validates the study.
inline FuzzOutcome fuzz_configs(const std::string &task, const std::vector<std::string> &models,
                                const std::string &hopt, int cases, std::uint64_t seed) {
    FuzzOutcome out;
    Rng rng(seed);
    for (int c = 0; c < cases; ++c) {
        std::string t = task;
        std::vector<std::string> m = models;
        std::string h = hopt;
        const auto rounds = rng.uniform_int(1, 3);
        for (std::int64_t r = 0; r < rounds; ++r) {
            const auto which = rng.index(2 + m.size());
            std::string &target = which == 0 ? t : which == 1 ? h : m[which - 2];
            target = mutate_yaml(target, rng);
        }
        try {
            const auto tc = parse_task_config(t, "task.yaml");
            std::vector<ModelSpec> specs;
            for (std::size_t k = 0; k < m.size(); ++k) {
                specs.push_back(parse_model_config(m[k], "model" + std::to_string(k) + ".yaml"));
            }
            const auto hc = parse_hyperopt_config(h, "hyperopt.yaml");
            const auto plan = validate_study(tc, specs, hc, registry_for_task(tc));
            out.plans += plan.config_hash.size() == 64 ? 1 : 0;
        } catch (const ConfigError &e) {
            if (e.location().line > 0 && !e.location().file.empty()) {
                ++out.located;
            } else {
                out.unlocated.push_back(e.what());
            }
        } catch (const std::exception &e) {
            out.unlocated.push_back(std::string("unexpected: ") + e.what());
        }
    }
    return out;
}

struct BudgetSweep {
    std::vector<double> rates;          // success rate at budget 1..max_budget
    bool per_example_monotone = true;   // no example loses success as the budget grows
    std::size_t n_examples = 0;
};

/// DeepWordBug over the first `n` test examples of a seeded synthetic corpus, attacked with a
/// naive Bayes model trained on its training split.
inline BudgetSweep deepwordbug_budget_sweep(std::size_t max_budget, std::size_t n = 50) {
    SyntheticParams sp;
    sp.n_samples = 600;
    sp.mean_len = 8;
    sp.signal_prob = 0.3;
    sp.seed = 3;
    const auto ds = generate_synthetic(sp);
    const auto sa = split(ds, SplitRatios{0.7, 0.1, 0.2}, 1);
    const auto fd = featurize(ds, sa, PreprocessParams{});
    NaiveBayes nb(fd.feature_dim, fd.n_classes);
    std::vector<SparseVector> xs;
    std::vector<int> ys;
    for (const auto i : fd.train_idx) {
        xs.push_back(fd.vectors[i]);
        ys.push_back(fd.labels[i]);
    }
    nb.fit_epoch(xs, ys, EpochOptions{});
    std::vector<Example> test;
    for (const auto i : fd.test_idx) {
        if (test.size() == n) break;
        test.push_back(ds.examples[i]);
    }
    BudgetSweep out;
    out.n_examples = test.size();
    std::vector<bool> prev(test.size(), false);
    for (std::size_t b = 1; b <= max_budget; ++b) {
        AttackSettings st;
        st.deepwordbug_budget = b;
        st.seed = 11;
        const auto outcomes = run_attack(nb, fd.featurizer, test, AttackKind::deepwordbug, Thesaurus{}, st);
        for (std::size_t i = 0; i < outcomes.size(); ++i) {
            if (prev[i] && !outcomes[i].success) out.per_example_monotone = false;
            prev[i] = outcomes[i].success;
        }
        out.rates.push_back(attack_success_rate(outcomes));
    }
    return out;
}

}  // namespace benchkit::fixtures
