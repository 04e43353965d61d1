#include <doctest.h>

#include <filesystem>
#include <set>
#include <unordered_set>

#include "calclab/corpus.hpp"
#include "calclab/errors.hpp"
#include "calclab/hash.hpp"
#include "calclab/report.hpp"

using namespace calclab;
namespace fs = std::filesystem;

TEST_CASE("template table shape") {
    const auto& templates = builtin_templates();
    int base = 0, extra = 0;
    for (const Template& t : templates) {
        const bool is_base = t.family == Family::Equation || t.family == Family::Statement || t.family == Family::QuestionAnswer;
        (is_base ? base : extra)++;
        // exactly one {A} and one {B}, {C} terminal
        CHECK(t.pattern.find("{A}") != std::string::npos);
        CHECK(t.pattern.find("{A}") == t.pattern.rfind("{A}"));
        CHECK(t.pattern.find("{B}") == t.pattern.rfind("{B}"));
        CHECK(t.pattern.substr(t.pattern.size() - 3) == "{C}");
    }
    CHECK(base == 36);   // 9 per operation
    CHECK(extra == 12);  // addition-only time-span and accumulation forms
}

TEST_CASE("tokenizer splits digits and round-trips") {
    const auto& vocab = Vocabulary::builtin();
    SUBCASE("'42' becomes two digit tokens") {
        const auto ids = vocab.tokenize("42");
        REQUIRE(ids.size() == 2);
        CHECK(vocab.token(ids[0]) == "4");
        CHECK(vocab.token(ids[1]) == "2");
        CHECK(vocab.detokenize(ids) == "42");
    }
    SUBCASE("empty text") { CHECK(vocab.tokenize("").empty()); }
    SUBCASE("unknown word is an OOV error naming the word") {
        CHECK_THROWS_WITH_AS(vocab.tokenize("3 frobnicates 5"), doctest::Contains("frobnicates"), data_error);
    }
    SUBCASE("digits are individual tokens and ids form a bijection") {
        std::set<int> seen;
        for (int d = 0; d < 10; ++d) {
            const int id = vocab.digit_id(d);
            CHECK(vocab.is_digit(id));
            CHECK(vocab.token(id) == std::to_string(d));
            seen.insert(id);
        }
        CHECK(seen.size() == 10);
        for (int i = 0; i < vocab.size(); ++i) CHECK(vocab.id(vocab.token(i)) == i);
    }
}

TEST_CASE("instantiate: equation addition example") {
    const auto& templates = builtin_templates();
    const Template* eq = nullptr;
    for (const auto& t : templates) {
        if (t.id == "add_eq_0") eq = &t;
    }
    REQUIRE(eq != nullptr);
    Rng rng(1);
    const PromptPair pair = instantiate(*eq, 3, 5, rng);
    CHECK(pair.answer == "8");
    CHECK(pair.ref_text() == "3 + 5 =");
    // counterfactual swaps the symbol for a comparison-style symbol
    CHECK(pair.cf_tokens.size() == pair.ref_tokens.size());
    REQUIRE(pair.subst_positions.size() == 1);
    const int p = pair.subst_positions[0];
    CHECK(pair.ref_tokens[static_cast<std::size_t>(p)] == "+");
    CHECK(pair.cf_tokens[static_cast<std::size_t>(p)] != "+");
    for (std::size_t i = 0; i < pair.ref_tokens.size(); ++i) {
        if (static_cast<int>(i) != p) CHECK(pair.ref_tokens[i] == pair.cf_tokens[i]);
    }
}

TEST_CASE("instantiate: operator word nulled out in the counterfactual") {
    // two-digit operands keep their per-digit tokenization
    Template t{"test_st", Op::Add, Family::Statement, "{A} plus {B} is equal to {C}", "plus", false};
    Rng rng(2);
    const PromptPair pair = instantiate(t, 42, 34, rng);
    CHECK(pair.ref_text() == "42 plus 34 is equal to");
    REQUIRE(pair.subst_positions.size() == 1);
    const auto cf_word = pair.cf_tokens[static_cast<std::size_t>(pair.subst_positions[0])];
    const std::vector<std::string> null_pool = {"none", "nothing", "neither", "nowhere", "null"};
    CHECK(std::find(null_pool.begin(), null_pool.end(), cf_word) != null_pool.end());
    CHECK(pair.answer == "76");
    CHECK(pair.answer_token == Vocabulary::builtin().digit_id(7));  // first digit of a multi-digit answer
    // operand digits are recorded positionally
    CHECK(pair.a_positions.size() == 2);
    CHECK(pair.b_positions.size() == 2);
    CHECK(pair.ref_tokens[static_cast<std::size_t>(pair.a_positions[0])] == "4");
    CHECK(pair.ref_tokens[static_cast<std::size_t>(pair.b_positions[1])] == "4");
}

TEST_CASE("instantiate: subtraction zero case and constraints") {
    const auto subs = select_templates({Op::Sub}, {Family::Statement});
    REQUIRE_FALSE(subs.empty());
    Rng rng(3);
    const PromptPair pair = instantiate(subs[0], 4, 4, rng);
    CHECK(pair.answer == "0");
    CHECK_THROWS_AS(instantiate(subs[0], 2, 5, rng), data_error);

    const auto divs = select_templates({Op::Div}, {Family::Equation});
    REQUIRE_FALSE(divs.empty());
    CHECK(instantiate(divs[0], 8, 2, rng).answer == "4");
    CHECK_THROWS_AS(instantiate(divs[0], 7, 2, rng), data_error);
}

TEST_CASE("instantiate: every template round-trips through the tokenizer") {
    const auto& vocab = Vocabulary::builtin();
    Rng rng(4);
    for (const Template& t : builtin_templates()) {
        const int a = t.op == Op::Div ? 8 : 6;
        const int b = t.op == Op::Div ? 2 : 3;
        const PromptPair pair = instantiate(t, a, b, rng);
        // aligned and digit-answered
        CHECK(pair.ref_tokens.size() == pair.cf_tokens.size());
        CHECK(vocab.is_digit(pair.answer_token));
        // text -> tokens -> text is the identity modulo whitespace
        const std::string text = pair.ref_text();
        CHECK(vocab.detokenize(vocab.tokenize(text)) == text);
        // roles partition all positions: stored positions must be in range and disjoint
        std::set<int> marked;
        for (int p : pair.a_positions) CHECK(marked.insert(p).second);
        for (int p : pair.b_positions) CHECK(marked.insert(p).second);
        for (int p : pair.op_positions) CHECK(marked.insert(p).second);
        for (int p : marked) CHECK(p < static_cast<int>(pair.ref_tokens.size()));
    }
}

TEST_CASE("build_dataset: answer ranges and the single-token filter") {
    DatasetSpec spec;
    spec.operations = {Op::Add};
    spec.families = {Family::Equation};
    spec.count = 300;
    spec.seed = 5;

    SUBCASE("no filter: sums up to 18 appear") {
        spec.single_token_answer = false;
        const Dataset ds = build_dataset(spec);
        int max_answer = 0;
        for (const auto& p : ds.pairs) {
            max_answer = std::max(max_answer, p.a + p.b);
            CHECK(p.a + p.b >= 2);
        }
        CHECK(max_answer > 9);  // two-digit sums present
    }
    SUBCASE("filter keeps only single-digit sums") {
        spec.single_token_answer = true;
        const Dataset ds = build_dataset(spec);
        for (const auto& p : ds.pairs) {
            CHECK(p.a + p.b <= 9);
            CHECK(p.answer.size() == 1);
        }
    }
}

TEST_CASE("build_dataset: determinism, coverage, splits, correctness") {
    DatasetSpec spec;
    spec.operations = {Op::Add, Op::Sub, Op::Mul, Op::Div};
    spec.families = {Family::Equation, Family::Statement, Family::QuestionAnswer};
    spec.count = 36 * 4 * 10;
    spec.seed = 9;
    const Dataset ds = build_dataset(spec);

    SUBCASE("byte-identical files under the same seed") {
        const fs::path a = fs::temp_directory_path() / "calclab_ds_a";
        const fs::path b = fs::temp_directory_path() / "calclab_ds_b";
        write_dataset(ds, a);
        write_dataset(build_dataset(spec), b);
        CHECK(hash_file((a / "dataset.jsonl").string()) == hash_file((b / "dataset.jsonl").string()));
        CHECK(hash_file((a / "dataset.manifest.json").string()) == hash_file((b / "dataset.manifest.json").string()));
    }

    SUBCASE("every requested template id appears") {
        std::unordered_set<std::string> seen;
        for (const auto& p : ds.pairs) seen.insert(p.template_id);
        CHECK(seen.size() == 36);
    }

    SUBCASE("splits are disjoint and cover everything") {
        std::set<int> all;
        for (int i : ds.train_idx) CHECK(all.insert(i).second);
        for (int i : ds.val_idx) CHECK(all.insert(i).second);
        for (int i : ds.heldout_idx) CHECK(all.insert(i).second);
        CHECK(all.size() == ds.pairs.size());
        CHECK_FALSE(ds.val_idx.empty());
    }

    SUBCASE("no identical sentence crosses train/val") {
        std::unordered_set<std::string> train_texts;
        for (int i : ds.train_idx) train_texts.insert(ds.pairs[static_cast<std::size_t>(i)].ref_text());
        for (int i : ds.val_idx) CHECK(train_texts.count(ds.pairs[static_cast<std::size_t>(i)].ref_text()) == 0);
    }

    SUBCASE("stored answers recompute from the operands") {
        for (const auto& p : ds.pairs) CHECK(std::to_string(apply_op(p.op, p.a, p.b)) == p.answer);
    }

    SUBCASE("pairs differ exactly at the recorded positions") {
        for (const auto& p : ds.pairs) {
            REQUIRE(p.ref_tokens.size() == p.cf_tokens.size());
            std::set<int> subst(p.subst_positions.begin(), p.subst_positions.end());
            for (std::size_t i = 0; i < p.ref_tokens.size(); ++i) {
                if (subst.count(static_cast<int>(i))) {
                    CHECK(p.ref_tokens[i] != p.cf_tokens[i]);
                } else {
                    CHECK(p.ref_tokens[i] == p.cf_tokens[i]);
                }
            }
        }
    }
}

TEST_CASE("build_dataset: holdout families and error cases") {
    DatasetSpec spec;
    spec.operations = {Op::Add};
    spec.families = {Family::Equation, Family::TimeSpan};
    spec.holdout_families = {Family::TimeSpan};
    spec.count = 100;
    const Dataset ds = build_dataset(spec);
    CHECK_FALSE(ds.heldout_idx.empty());
    for (int i : ds.heldout_idx) {
        CHECK(ds.pairs[static_cast<std::size_t>(i)].template_id.find("ts") != std::string::npos);
    }

    DatasetSpec none;
    none.operations = {Op::Sub};
    none.families = {Family::TimeSpan};  // time-span templates only exist for addition
    CHECK_THROWS_AS(build_dataset(none), config_error);

    DatasetSpec impossible;
    impossible.operations = {Op::Mul};
    impossible.range_lo = 5;
    impossible.range_hi = 9;  // all products exceed one digit
    impossible.single_token_answer = true;
    CHECK_THROWS_AS(build_dataset(impossible), config_error);
}

TEST_CASE("dataset file round trip") {
    DatasetSpec spec;
    spec.operations = {Op::Add};
    spec.families = {Family::ObjectAccumulation, Family::TimeSpan};
    spec.count = 60;
    spec.seed = 13;
    const Dataset ds = build_dataset(spec);
    const fs::path dir = fs::temp_directory_path() / "calclab_ds_rt";
    write_dataset(ds, dir);
    const Dataset loaded = load_dataset(dir);
    REQUIRE(loaded.pairs.size() == ds.pairs.size());
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        CHECK(loaded.pairs[i].ref_tokens == ds.pairs[i].ref_tokens);
        CHECK(loaded.pairs[i].cf_tokens == ds.pairs[i].cf_tokens);
        CHECK(loaded.pairs[i].answer_token == ds.pairs[i].answer_token);
        CHECK(loaded.pairs[i].ref_ids == ds.pairs[i].ref_ids);
    }
    CHECK(loaded.train_idx == ds.train_idx);
    CHECK(loaded.val_idx == ds.val_idx);
}
