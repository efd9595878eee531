#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "benchkit/datagen.hpp"

using namespace benchkit;

TEST(Csv, QuotedFieldsAndLineEndings) {
    const auto rows = parse_csv("text,label\r\n\"a, \"\"quoted\"\" one\",pos\n\"multi\nline\",neg\n");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[1][0], "a, \"quoted\" one");
    EXPECT_EQ(rows[2][0], "multi\nline");
    EXPECT_EQ(rows[2][1], "neg");
    EXPECT_EQ(csv_field("x,y"), "\"x,y\"");
    EXPECT_EQ(csv_field("plain"), "plain");
    const std::vector<std::string> fields{"a\"b", "c\nd", "e"};
    const auto back = parse_csv(csv_row(fields));
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0], fields);
}

TEST(Dataset, FromCsvAssignsDigestUidsAndDenseLabels) {
    const auto ds = dataset_from_csv("text,label\nhello world,b\nhello world,a\n  ,a\nbye,b\n", "d", "text", "label",
                                     Provenance::user_csv);
    ASSERT_EQ(ds.examples.size(), 3u);
    EXPECT_EQ(ds.dropped_rows, 1u);
    EXPECT_EQ(ds.label_names, (std::vector<std::string>{"b", "a"}));
    EXPECT_EQ(ds.examples[0].label, 0);
    EXPECT_EQ(ds.examples[1].label, 1);
    // sha256("<occurrence>\x1f<text>")[:16], reference values from Python's hashlib
    EXPECT_EQ(ds.examples[0].uid, "139f3f5b415f431a");
    EXPECT_EQ(ds.examples[1].uid, "7e5217845a7cca33");
}

TEST(Dataset, ColumnsByIndexAndErrors) {
    const auto ds = dataset_from_csv("a,b\nx,1\ny,2\n", "d", "0", "1", Provenance::user_csv);
    EXPECT_EQ(ds.examples[1].text, "y");
    EXPECT_THROW(dataset_from_csv("a,b\nx,1\n", "d", "text", "b", Provenance::user_csv), DataError);
    EXPECT_THROW(dataset_from_csv("text,label\nx,1\ny,1\n", "d", "text", "label", Provenance::user_csv), DataError);
    EXPECT_THROW(dataset_from_csv("text,label\n", "d", "text", "label", Provenance::user_csv), DataError);
}

TEST(Synthetic, IdRoundTripAndValidation) {
    SyntheticParams p;
    p.n_samples = 50;
    p.mean_len = 12.5;
    p.label_noise = 0.05;
    p.seed = 9;
    EXPECT_EQ(SyntheticParams::from_id(p.to_id()), p);
    EXPECT_THROW(SyntheticParams::from_id("synthetic:n=5,bogus=1"), DataError);
    EXPECT_THROW(SyntheticParams::from_id("synthetic:n=5,n=6"), DataError);
    EXPECT_THROW(SyntheticParams::from_id("synthetic:classes=3,vocab=4"), DataError);
    EXPECT_THROW(SyntheticParams::from_id("synthetic:noise=0.5"), DataError);
    EXPECT_THROW(SyntheticParams::from_id("toy"), DataError);
}

TEST(Synthetic, WordsAreDistinct) {
    std::set<std::string> words;
    for (std::size_t i = 0; i < 5000; ++i) words.insert(synthetic_word(i));
    EXPECT_EQ(words.size(), 5000u);
}

TEST(Synthetic, DeterministicWithRequestedLengthAndSignal) {
    SyntheticParams p;
    p.n_samples = 2000;
    p.mean_len = 30;
    p.len_dispersion = 5;
    p.signal_prob = 1.0;
    p.seed = 4;
    const auto a = generate_synthetic(p);
    const auto b = generate_synthetic(p);
    EXPECT_EQ(a.examples, b.examples);
    EXPECT_EQ(a.dataset_id, p.to_id());
    EXPECT_NEAR(dataset_attributes(a).avg_sentence_length, 30.0, 1.5);
    // with p = 1 and no noise every word belongs to the label's signal set
    const std::size_t per = synthetic_signal_words_per_class(p);
    std::map<std::string, std::size_t> owner;
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t j = 0; j < per; ++j) owner[synthetic_word(k * per + j)] = k;
    }
    for (const auto &ex : a.examples) {
        for (const auto &w : whitespace_tokens(ex.text)) {
            ASSERT_EQ(owner.at(w), static_cast<std::size_t>(ex.label));
        }
    }
}

TEST(Synthetic, LabelNoiseRate) {
    SyntheticParams p;
    p.n_samples = 4000;
    p.mean_len = 5;
    p.signal_prob = 1.0;
    p.label_noise = 0.2;
    p.seed = 2;
    const auto ds = generate_synthetic(p);
    const std::size_t per = synthetic_signal_words_per_class(p);
    std::size_t flipped = 0;
    for (const auto &ex : ds.examples) {
        const auto w = whitespace_tokens(ex.text).front();
        std::size_t cls = 1;
        for (std::size_t j = 0; j < per; ++j) {
            if (synthetic_word(j) == w) cls = 0;
        }
        flipped += cls != static_cast<std::size_t>(ex.label) ? 1 : 0;
    }
    EXPECT_NEAR(static_cast<double>(flipped) / 4000.0, 0.2, 0.025);
}

TEST(Split, DisjointCoveringAndStable) {
    SyntheticParams p;
    p.n_samples = 1000;
    p.seed = 1;
    const auto ds = generate_synthetic(p);
    const SplitRatios r{0.7, 0.15, 0.15};
    const auto s = split(ds, r, 17);
    std::set<std::string> all;
    for (const auto *part : {&s.train, &s.val, &s.test}) {
        EXPECT_TRUE(std::is_sorted(part->begin(), part->end()));
        for (const auto &u : *part) EXPECT_TRUE(all.insert(u).second) << u;
    }
    EXPECT_EQ(all.size(), ds.examples.size());
    EXPECT_NEAR(static_cast<double>(s.train.size()) / 1000.0, 0.7, 0.05);
    EXPECT_NEAR(static_cast<double>(s.test.size()) / 1000.0, 0.15, 0.04);
    EXPECT_EQ(split(ds, r, 17).train, s.train);
    EXPECT_NE(split(ds, r, 18).train, s.train);

    // membership depends only on the uid, not on dataset order
    auto shuffled = ds;
    std::reverse(shuffled.examples.begin(), shuffled.examples.end());
    EXPECT_EQ(split(shuffled, r, 17).test, s.test);
}

TEST(Split, RatioValidationAndEmptyWarning) {
    EXPECT_THROW((SplitRatios{0.5, 0.2, 0.2}.validate()), DataError);
    EXPECT_THROW((SplitRatios{1.2, -0.1, -0.1}.validate()), DataError);
    const auto ds = dataset_from_csv("text,label\na,x\nb,y\n", "tiny", "text", "label", Provenance::user_csv);
    const auto s = split(ds, SplitRatios{0.4, 0.3, 0.3}, 1);
    EXPECT_FALSE(s.warnings.empty());
}

TEST(Featurizer, TokenizeModes) {
    PreprocessParams pp;
    EXPECT_EQ(tokenize("Hello, World! it's", pp), (std::vector<std::string>{"hello", "world", "it", "s"}));
    pp.token_pattern = TokenPattern::whitespace;
    pp.lowercase = false;
    EXPECT_EQ(tokenize("Hello, World!", pp), (std::vector<std::string>{"Hello,", "World!"}));
    pp = PreprocessParams{};
    pp.ngram_max = 2;
    EXPECT_EQ(tokenize("a b c", pp), (std::vector<std::string>{"a", "b", "c", "a b", "b c"}));
}

TEST(Featurizer, VocabularyOrderingAndTruncation) {
    PreprocessParams pp;
    pp.max_vocab = 2;
    const std::vector<std::string_view> docs{"b a a", "c b a", "c"};
    const auto f = Featurizer::fit(docs, pp);
    EXPECT_EQ(f.tokens(), (std::vector<std::string>{"a", "b"}));  // a:3, then b:2 beats c:2 by token order
    const auto v = f.transform("a a z b");
    ASSERT_EQ(v.size(), 2u);
    EXPECT_EQ(v[0], (SparseEntry{0, 2.0}));
    EXPECT_EQ(v[1], (SparseEntry{1, 1.0}));

    pp.max_vocab = 100;
    pp.min_token_freq = 3;
    EXPECT_EQ(Featurizer::fit(docs, pp).tokens(), (std::vector<std::string>{"a"}));
    pp.min_token_freq = 10;
    EXPECT_THROW(Featurizer::fit(docs, pp), DataError);
}

TEST(Featurizer, SmoothedIdf) {
    PreprocessParams pp;
    pp.weighting = Weighting::tfidf;
    const std::vector<std::string_view> docs{"x y", "x", "x z"};
    const auto f = Featurizer::fit(docs, pp);
    const auto ix = f.vocab().at("x");
    const auto iy = f.vocab().at("y");
    EXPECT_DOUBLE_EQ(f.idf()[ix], std::log(4.0 / 4.0) + 1.0);
    EXPECT_DOUBLE_EQ(f.idf()[iy], std::log(4.0 / 2.0) + 1.0);
    const auto v = f.transform("y y");
    ASSERT_EQ(v.size(), 1u);
    EXPECT_DOUBLE_EQ(v[0].value, 2.0 * (std::log(2.0) + 1.0));
}

TEST(Featurizer, FitSeesTrainingTextsOnly) {
    const auto ds = dataset_from_csv("text,label\nalpha beta,a\ngamma,b\ndelta,a\nepsilon,b\nzeta eta,a\ntheta,b\n",
                                     "d", "text", "label", Provenance::user_csv);
    const auto s = split(ds, SplitRatios{0.5, 0.25, 0.25}, 3);
    const auto fd = featurize(ds, s, PreprocessParams{});
    std::set<std::string> train_words;
    for (const auto i : fd.train_idx) {
        for (const auto &w : whitespace_tokens(ds.examples[i].text)) train_words.insert(w);
    }
    for (const auto &t : fd.featurizer.tokens()) EXPECT_TRUE(train_words.count(t)) << t;
    EXPECT_EQ(fd.train_idx.size() + fd.val_idx.size() + fd.test_idx.size(), ds.examples.size());
    EXPECT_EQ(fd.n_classes, 2u);
}

TEST(Registry, BundledAndRegistered) {
    DatasetRegistry reg;
    const auto ids = reg.bundled_ids();
    EXPECT_NE(std::find(ids.begin(), ids.end(), "toy_polarity"), ids.end());
    EXPECT_TRUE(reg.resolves("synthetic:n=10"));
    const auto ds = reg.load("toy_polarity");
    EXPECT_EQ(ds.provenance, Provenance::bundled);
    EXPECT_EQ(ds.n_classes(), 2u);
    EXPECT_THROW(reg.register_dataset(DatasetDescriptor{"toy_polarity", "x.csv"}), DataError);
    EXPECT_THROW(reg.load("nope"), DataError);
}
