#include <doctest.h>

#include <cmath>

#include "calclab/patching.hpp"
#include "calclab/report.hpp"
#include "support/test_models.hpp"

using namespace calclab;

namespace {

// corpus-backed pairs for a model over the real vocabulary
std::vector<PromptPair> corpus_pairs(int count, std::uint64_t seed) {
    DatasetSpec spec;
    spec.operations = {Op::Add, Op::Sub};
    spec.families = {Family::Equation, Family::Statement, Family::QuestionAnswer};
    spec.count = count;
    spec.seed = seed;
    return build_dataset(spec).pairs;
}

std::vector<const PromptPair*> ptrs(const std::vector<PromptPair>& pairs) {
    std::vector<const PromptPair*> out;
    for (const auto& p : pairs) out.push_back(&p);
    return out;
}

ModelState vocab_model(std::uint64_t seed, int layers = 2, int heads = 4, int dim = 32) {
    ModelConfig cfg;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.model_dim = dim;
    cfg.mlp_hidden = dim * 2;
    cfg.vocab = Vocabulary::builtin().size();
    cfg.max_seq = 32;
    return init_model(cfg, seed);
}

EffectMap handmade_effects() {
    EffectMap map;
    map.mode = PatchMode::ThroughMlp;
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.heads = 3;
    cfg.model_dim = 3;
    cfg.mlp_hidden = 3;
    cfg.vocab = 4;
    for (const NodeId& n : all_nodes(cfg)) map.effects.push_back({n, 0.0, 0.0, 10});
    map.effects[0].mean = -0.140;  // a
    map.effects[1].mean = -0.020;  // b
    map.effects[2].mean = -0.060;  // c
    map.effects[3].mean = 0.030;   // the MLP
    map.pairs_used = 10;
    return map;
}

}  // namespace

TEST_CASE("causal effect is the relative logit change") {
    CHECK(causal_effect(2.0, 1.7) == doctest::Approx(-0.15).epsilon(1e-12));
    CHECK(causal_effect(2.0, 2.0) == 0.0);
}

TEST_CASE("identical counterfactuals give zero effect everywhere") {
    ModelState st = vocab_model(51);
    auto pairs = corpus_pairs(12, 3);
    for (auto& p : pairs) {  // make X_c literally X_r
        p.cf_tokens = p.ref_tokens;
        p.cf_ids = p.ref_ids;
    }
    SweepOptions opts;
    opts.eps_denominator = 0.0;  // keep every pair regardless of logit size
    for (PatchMode mode : {PatchMode::Direct, PatchMode::ThroughMlp}) {
        opts.mode = mode;
        const EffectMap map = path_patch_sweep(st, ptrs(pairs), opts);
        CHECK(map.pairs_used == 12);
        for (const NodeEffect& e : map.effects) {
            CHECK(std::abs(e.mean) < 1e-6);
            CHECK(std::isfinite(e.mean));
        }
    }
}

TEST_CASE("sweep bookkeeping: counts equal across nodes, metadata filled") {
    ModelState st = vocab_model(52);
    const auto pairs = corpus_pairs(8, 5);
    SweepOptions opts;
    opts.jobs = 2;
    const EffectMap map = path_patch_sweep(st, ptrs(pairs), opts);
    CHECK(map.pairs_used + map.pairs_skipped == 8);
    for (const NodeEffect& e : map.effects) CHECK(e.count == map.pairs_used);
    CHECK_FALSE(map.model_hash.empty());
    CHECK_FALSE(map.dataset_hash.empty());
}

TEST_CASE("sweep determinism: same inputs, same bytes, any job count") {
    ModelState st = vocab_model(53);
    const auto pairs = corpus_pairs(6, 7);
    SweepOptions serial;
    serial.jobs = 1;
    SweepOptions parallel;
    parallel.jobs = 4;
    const std::string a = effect_map_csv(path_patch_sweep(st, ptrs(pairs), serial));
    const std::string b = effect_map_csv(path_patch_sweep(st, ptrs(pairs), parallel));
    CHECK(a == b);
}

TEST_CASE("select_key thresholding") {
    const EffectMap map = handmade_effects();

    SUBCASE("threshold keeps a and c") {
        const KeySelection sel = select_key(map, 0.05);
        REQUIRE(sel.heads.size() == 2);
        CHECK(sel.heads[0].node == NodeId::attention(0, 0));  // -0.140 first
        CHECK(sel.heads[1].node == NodeId::attention(0, 2));  // then -0.060
        CHECK(sel.mlps.empty());
    }
    SUBCASE("all-positive effects select nothing") {
        EffectMap pos = map;
        for (auto& e : pos.effects) e.mean = std::abs(e.mean);
        CHECK(select_key(pos, 0.05).all_ids().empty());
    }
    SUBCASE("top_k truncates by magnitude") {
        const KeySelection sel = select_key(map, 0.05, 1);
        REQUIRE(sel.heads.size() == 1);
        CHECK(sel.heads[0].node == NodeId::attention(0, 0));
    }
    SUBCASE("tau must be positive") { CHECK_THROWS_AS(select_key(map, 0.0), config_error); }
}

TEST_CASE("mean ablation") {
    ModelState st = vocab_model(54);
    const auto pairs = corpus_pairs(10, 9);
    const auto pp = ptrs(pairs);

    SUBCASE("no nodes means baseline accuracy exactly") {
        const double base = mean_ablate(st, {}, pp, pp);
        const double again = mean_ablate(st, {}, pp, pp);
        CHECK(base == again);
    }

    SUBCASE("singleton counterfactual set reduces to a plain replacement") {
        const NodeId node = NodeId::attention(1, 2);
        const std::vector<const PromptPair*> cf_one{pp[0]};
        const std::vector<NodeId> nodes{node};
        const double via_mean = mean_ablate(st, nodes, cf_one, pp);

        // by hand: replace with that sample's END activation
        ForwardResult cf_run = forward(st, pp[0]->cf_ids);
        const Tensor out = cf_run.cache.node_output(node);
        Tensor end_row = Tensor::zeros({st.config.model_dim});
        for (std::int64_t j = 0; j < st.config.model_dim; ++j) end_row.at(j) = out.at(out.dim(0) - 1, j);
        InterventionSet iv;
        iv.set(node, {InterventionKind::Replace, end_row, {}});
        int correct = 0, total = 0;
        std::vector<std::string> seen;
        for (const PromptPair* p : pp) {
            std::string key;
            for (int t : p->ref_ids) key += std::to_string(t) + ",";
            if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
            seen.push_back(key);
            ForwardOptions opts;
            opts.interventions = &iv;
            opts.want_cache = false;
            const Tensor logits = forward(st, p->ref_ids, opts).logits;
            int best = 0;
            for (int t = 1; t < st.config.vocab; ++t) {
                if (logits.at(logits.dim(0) - 1, t) > logits.at(logits.dim(0) - 1, best)) best = t;
            }
            total++;
            correct += best == p->answer_token ? 1 : 0;
        }
        CHECK(via_mean == doctest::Approx(static_cast<double>(correct) / total).epsilon(1e-12));
    }

    SUBCASE("empty counterfactual set is an error") {
        const std::vector<NodeId> nodes{NodeId::mlp(0)};
        CHECK_THROWS_AS(mean_ablate(st, nodes, {}, pp), data_error);
    }
}

TEST_CASE("knockout curves") {
    ModelState st = vocab_model(55);
    const auto pairs = corpus_pairs(10, 11);
    const auto pp = ptrs(pairs);
    SweepOptions opts;
    opts.eps_denominator = 0.0;
    const EffectMap effects = path_patch_sweep(st, pp, opts);

    SUBCASE("k=0 equals baseline") {
        const KnockoutCurve curve = knockout_curve(st, effects, "effect", 3, 1, pp, pp);
        CHECK(curve.accuracy.size() == 4);
        CHECK(curve.accuracy[0] == mean_ablate(st, {}, pp, pp));
    }
    SUBCASE("random ordering is reproducible under a seed") {
        const KnockoutCurve a = knockout_curve(st, effects, "random", 4, 123, pp, pp);
        const KnockoutCurve b = knockout_curve(st, effects, "random", 4, 123, pp, pp);
        CHECK(a.order == b.order);
        CHECK(a.accuracy == b.accuracy);
        CHECK(knockout_csv(a) == knockout_csv(b));
    }
    SUBCASE("effect ordering is by ascending mean") {
        const KnockoutCurve curve = knockout_curve(st, effects, "effect", 8, 1, pp, pp);
        for (std::size_t i = 1; i < curve.order.size(); ++i) {
            CHECK(effects.find(curve.order[i - 1])->mean <= effects.find(curve.order[i])->mean);
        }
    }
    SUBCASE("k_max is bounded by the head count") {
        CHECK_THROWS_AS(knockout_curve(st, effects, "effect", 9, 1, pp, pp), config_error);
    }
}

TEST_CASE("the final MLP node patches identically in both modes") {
    ModelState st = vocab_model(56);
    auto pairs = corpus_pairs(4, 13);
    const auto pp = ptrs(pairs);
    const NodeId last_mlp = NodeId::mlp(st.config.layers - 1);

    for (const PromptPair* p : pp) {
        ForwardResult ref = forward(st, p->ref_ids);
        ForwardResult cf = forward(st, p->cf_ids);
        Tensor logits[2];
        int i = 0;
        for (PatchMode mode : {PatchMode::Direct, PatchMode::ThroughMlp}) {
            InterventionSet iv;
            iv.set(last_mlp, {InterventionKind::Replace, cf.cache.node_output(last_mlp), {}});
            for (const NodeId& other : all_nodes(st.config)) {
                if (other == last_mlp) continue;
                if (mode == PatchMode::ThroughMlp && !other.is_head()) continue;
                iv.set(other, {InterventionKind::Freeze, ref.cache.node_output(other), {}});
            }
            ForwardOptions opts;
            opts.interventions = &iv;
            opts.want_cache = false;
            logits[i++] = forward(st, p->ref_ids, opts).logits;
        }
        const std::int64_t end = logits[0].dim(0) - 1;
        for (std::int64_t v = 0; v < logits[0].dim(1); ++v) {
            CHECK(logits[0].at(end, v) == doctest::Approx(logits[1].at(end, v)).epsilon(1e-12));
        }
    }
}

TEST_CASE("transfer with identical families reduces to a knockout endpoint") {
    ModelState st = vocab_model(57);
    const auto pairs = corpus_pairs(8, 15);
    const auto pp = ptrs(pairs);
    const std::vector<NodeId> nodes{NodeId::attention(0, 0), NodeId::attention(1, 3)};
    const TransferResult res = transfer_knockout(st, nodes, pp, pp);
    CHECK(res.baseline == mean_ablate(st, {}, pp, pp));
    CHECK(res.knocked == mean_ablate(st, nodes, pp, pp));
}

TEST_CASE("filter_correct keeps exactly the correctly-predicted pairs") {
    ModelState st = vocab_model(58);
    const auto pairs = corpus_pairs(20, 17);
    const auto pp = ptrs(pairs);
    const auto kept = filter_correct(st, pp);
    CHECK(kept.size() <= pp.size());
    for (const PromptPair* p : kept) {
        ForwardOptions opts;
        opts.want_cache = false;
        const Tensor logits = forward(st, p->ref_ids, opts).logits;
        int best = 0;
        for (int t = 1; t < st.config.vocab; ++t) {
            if (logits.at(logits.dim(0) - 1, t) > logits.at(logits.dim(0) - 1, best)) best = t;
        }
        CHECK(best == p->answer_token);
    }
}

TEST_CASE("effect map serialization round trip and heatmap layout") {
    ModelState st = vocab_model(59);
    const auto pairs = corpus_pairs(4, 19);
    SweepOptions opts;
    opts.eps_denominator = 0.0;
    const EffectMap map = path_patch_sweep(st, ptrs(pairs), opts);

    const EffectMap back = effect_map_from_json(effect_map_json(map));
    CHECK(effect_map_csv(back) == effect_map_csv(map));
    CHECK(back.pairs_used == map.pairs_used);
    CHECK(back.model_hash == map.model_hash);

    const std::string svg = heatmap_svg(map, st.config);
    std::size_t cells = 0, pos = 0;
    while ((pos = svg.find("class=\"cell\"", pos)) != std::string::npos) {
        cells++;
        pos++;
    }
    CHECK(cells == static_cast<std::size_t>(st.config.layers) * (st.config.heads + 1));
}
