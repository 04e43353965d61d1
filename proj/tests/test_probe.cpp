#include <doctest.h>

#include <cmath>

#include "calclab/probe.hpp"
#include "support/test_models.hpp"

using namespace calclab;

namespace {

ModelState vocab_model(std::uint64_t seed, int layers = 2, int heads = 2, int dim = 64) {
    ModelConfig cfg;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.model_dim = dim;
    cfg.mlp_hidden = dim * 2;
    cfg.vocab = Vocabulary::builtin().size();
    cfg.max_seq = 32;
    return init_model(cfg, seed);
}

std::vector<PromptPair> equation_pairs(int count, std::uint64_t seed) {
    DatasetSpec spec;
    spec.operations = {Op::Add};
    spec.families = {Family::Equation};
    spec.count = count;
    spec.seed = seed;
    return build_dataset(spec).pairs;
}

std::vector<const PromptPair*> ptrs(const std::vector<PromptPair>& pairs) {
    std::vector<const PromptPair*> out;
    for (const auto& p : pairs) out.push_back(&p);
    return out;
}

}  // namespace

TEST_CASE("uniform attention spreads role means equally") {
    ModelState st = vocab_model(61);
    // zero query/key weights -> flat scores -> uniform causal attention
    for (auto& layer : st.layers) {
        for (auto& h : layer.heads) {
            for (auto& v : h.wq.data()) v = 0.0;
            for (auto& v : h.wk.data()) v = 0.0;
        }
    }
    const auto pairs = equation_pairs(3, 1);
    const auto pp = ptrs(pairs);
    const double n = static_cast<double>(pairs[0].ref_tokens.size());  // "<s> A + B ="
    const AttentionProfile profile = attention_profile(st, NodeId::attention(1, 0), pp);
    CHECK(profile.operand_a == doctest::Approx(1.0 / n).epsilon(1e-9));
    CHECK(profile.operand_b == doctest::Approx(1.0 / n).epsilon(1e-9));
    CHECK(profile.operator_token == doctest::Approx(1.0 / n).epsilon(1e-9));
    CHECK(profile.other == doctest::Approx(1.0 / n).epsilon(1e-9));
}

TEST_CASE("single-sample profile equals that sample's grouped END row") {
    ModelState st = vocab_model(62);
    const auto pairs = equation_pairs(1, 2);
    const auto pp = ptrs(pairs);
    const NodeId head = NodeId::attention(0, 1);
    const AttentionProfile profile = attention_profile(st, head, pp, /*keep_raw=*/true);
    REQUIRE(profile.raw.size() == 1);
    CHECK(profile.operand_a == profile.raw[0][0]);
    CHECK(profile.operand_b == profile.raw[0][1]);
    CHECK(profile.operator_token == profile.raw[0][2]);
    CHECK(profile.other == profile.raw[0][3]);

    ForwardResult res = forward(st, pairs[0].ref_ids);
    const Tensor& pattern = res.cache.attn[0][1];
    const std::int64_t end = pattern.dim(0) - 1;
    const double a_mass = pattern.at(end, pairs[0].a_positions[0]);
    CHECK(profile.operand_a == doctest::Approx(a_mass).epsilon(1e-12));

    CHECK_THROWS_AS(attention_profile(st, NodeId::attention(9, 9), pp), data_error);
}

TEST_CASE("reception cosines hit +1/-1 on planted directions") {
    ModelState st = vocab_model(63, 1, 2, 32);
    const auto pairs = equation_pairs(1, 3);
    const auto pp = ptrs(pairs);

    // read the stream entering the MLP, then plant it (and its negation) as
    // unembedding columns for the A and B digit tokens
    ForwardResult res = forward(st, pairs[0].ref_ids);
    const Tensor& mlp_in = res.cache.mlp_in[0];
    const std::int64_t end = mlp_in.dim(0) - 1;
    const auto& vocab = Vocabulary::builtin();
    const int a_tok = vocab.digit_id(pairs[0].a);
    const int b_tok = vocab.digit_id(pairs[0].b);
    for (std::int64_t j = 0; j < st.config.model_dim; ++j) {
        st.unembed.at(j, a_tok) = mlp_in.at(end, j);
        st.unembed.at(j, b_tok) = -mlp_in.at(end, j);
    }
    const ProbeSeries series = mlp_reception(st, pp, /*correct_only=*/false);
    CHECK(series.a[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(series.b[0] == doctest::Approx(-1.0).epsilon(1e-9));
    for (double v : series.a) CHECK(std::abs(v) <= 1.0 + 1e-12);
}

TEST_CASE("an untrained model shows only small projections") {
    ModelState st = vocab_model(64, 3, 2, 64);
    const auto pairs = equation_pairs(16, 5);
    const auto pp = ptrs(pairs);
    for (const ProbeSeries& series : {mlp_reception(st, pp, false), mlp_generation(st, pp, false)}) {
        for (const auto& curve : {series.a, series.b, series.c, series.other}) {
            for (double v : curve) {
                CHECK(std::abs(v) < 0.2);
                CHECK(std::abs(v) <= 1.0);
            }
        }
    }
}

TEST_CASE("a silent MLP is flagged and scored zero") {
    ModelState st = vocab_model(65, 2, 2, 32);
    for (auto& layer : st.layers) {
        for (auto& v : layer.mlp_w_out.data()) v = 0.0;
        for (auto& v : layer.mlp_b_out.data()) v = 0.0;
    }
    const auto pairs = equation_pairs(2, 7);
    const ProbeSeries series = mlp_generation(st, ptrs(pairs), false);
    REQUIRE(series.flagged.size() == 2);  // every layer got the zero-norm guard
    for (double v : series.c) CHECK(v == 0.0);

    // rankings degenerate to token-id order
    const TokenTrajectory traj = token_trajectory(st, pairs[0].ref_ids, pairs[0].answer_token);
    const auto& vocab = Vocabulary::builtin();
    for (const auto& layer : traj.ranking) {
        for (std::size_t r = 1; r < layer.size(); ++r) {
            CHECK(layer[r - 1].second == 0.0);
            CHECK(layer[r - 1].first < layer[r].first);
        }
    }
    CHECK(traj.ranking[0].front().first == vocab.digit_id(0));
}

TEST_CASE("trajectory reporting is consistent with the model's argmax") {
    ModelState st = vocab_model(66, 2, 2, 32);
    const auto pairs = equation_pairs(1, 9);
    const TokenTrajectory traj = token_trajectory(st, pairs[0].ref_ids, pairs[0].answer_token);

    ForwardOptions opts;
    opts.want_cache = false;
    const Tensor logits = forward(st, pairs[0].ref_ids, opts).logits;
    int best = 0;
    for (int t = 1; t < st.config.vocab; ++t) {
        if (logits.at(logits.dim(0) - 1, t) > logits.at(logits.dim(0) - 1, best)) best = t;
    }
    CHECK(traj.predicted_token == best);
    CHECK(traj.ranking.size() == static_cast<std::size_t>(st.config.layers));
    for (const auto& layer : traj.ranking) {
        REQUIRE(layer.size() == 10);
        for (std::size_t r = 1; r < layer.size(); ++r) CHECK(layer[r - 1].second >= layer[r].second);
    }
}
