#include "calclab/patching.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <thread>
#include <unordered_set>

#include "calclab/errors.hpp"
#include "calclab/hash.hpp"

namespace calclab {

std::string patch_mode_name(PatchMode mode) { return mode == PatchMode::Direct ? "direct" : "through-mlp"; }

PatchMode patch_mode_from_name(const std::string& name) {
    if (name == "direct") return PatchMode::Direct;
    if (name == "through-mlp") return PatchMode::ThroughMlp;
    throw config_error("unknown patch mode '" + name + "' (expected direct|through-mlp)");
}

double causal_effect(double logit_clean, double logit_patched) { return (logit_patched - logit_clean) / logit_clean; }

const NodeEffect* EffectMap::find(const NodeId& node) const {
    for (const NodeEffect& e : effects) {
        if (e.node == node) return &e;
    }
    return nullptr;
}

std::string model_hash(const ModelState& state) {
    std::string bytes;
    for_each_parameter(state, [&](const std::string& name, const Tensor& t) {
        bytes.append(name);
        bytes.append(reinterpret_cast<const char*>(t.data().data()), static_cast<std::size_t>(t.numel()) * sizeof(double));
    });
    return hex64(fnv1a64(bytes));
}

namespace {

std::string pairs_hash(std::span<const PromptPair* const> pairs) {
    std::string bytes;
    for (const PromptPair* p : pairs) {
        for (int t : p->ref_ids) bytes += std::to_string(t) + ",";
        bytes += "|";
        for (int t : p->cf_ids) bytes += std::to_string(t) + ",";
        bytes += ";";
    }
    return hex64(fnv1a64(bytes));
}

void run_parallel(std::size_t n, int jobs, const std::function<void(std::size_t)>& task) {
    if (jobs <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            task(i);
        }
    };
    std::vector<std::thread> threads;
    const int count = std::min<int>(jobs, static_cast<int>(n));
    threads.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
}

std::vector<int> all_positions(std::size_t n) {
    std::vector<int> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<int>(i);
    return pos;
}

std::vector<const PromptPair*> unique_by_text(std::span<const PromptPair* const> samples) {
    std::vector<const PromptPair*> out;
    std::unordered_set<std::string> seen;
    for (const PromptPair* p : samples) {
        std::string key;
        for (int id : p->ref_ids) {
            key += std::to_string(id);
            key += ',';
        }
        if (seen.insert(std::move(key)).second) out.push_back(p);
    }
    return out;
}

int argmax_end(const Tensor& logits) {
    const std::int64_t end = logits.dim(0) - 1;
    int best = 0;
    for (std::int64_t t = 1; t < logits.dim(1); ++t) {
        if (logits.at(end, t) > logits.at(end, best)) best = static_cast<int>(t);
    }
    return best;
}

}  // namespace

EffectMap path_patch_sweep(const ModelState& state, std::span<const PromptPair* const> pairs, const SweepOptions& opts) {
    if (pairs.empty()) throw data_error("path patching: no prompt pairs");
    const auto nodes = all_nodes(state.config);
    const std::size_t n_nodes = nodes.size();

    std::vector<std::vector<double>> scores(pairs.size(), std::vector<double>(n_nodes, 0.0));
    std::vector<char> skipped(pairs.size(), 0);

    run_parallel(pairs.size(), opts.jobs, [&](std::size_t pi) {
        const PromptPair& pair = *pairs[pi];
        if (pair.ref_ids.size() != pair.cf_ids.size()) {
            throw data_error("path patching: pair for template " + pair.template_id + " is not length-aligned");
        }
        ForwardResult ref = forward(state, pair.ref_ids);
        ForwardResult cf = forward(state, pair.cf_ids);
        const double logit_o = answer_logit(ref.logits, pair.answer_token);
        if (std::abs(logit_o) < opts.eps_denominator) {
            skipped[pi] = 1;
            return;
        }

        const std::vector<int> positions = opts.full_sequence ? all_positions(pair.ref_ids.size()) : std::vector<int>{};
        ForwardOptions fo;
        fo.want_cache = false;
        for (std::size_t ni = 0; ni < n_nodes; ++ni) {
            const NodeId& node = nodes[ni];
            InterventionSet iv;
            iv.set(node, {InterventionKind::Replace, cf.cache.node_output(node), positions});
            for (const NodeId& other : nodes) {
                if (other == node) continue;
                if (opts.mode == PatchMode::ThroughMlp && !other.is_head()) continue;  // MLPs recompute
                iv.set(other, {InterventionKind::Freeze, ref.cache.node_output(other), positions});
            }
            fo.interventions = &iv;
            const Tensor patched = forward(state, pair.ref_ids, fo).logits;
            scores[pi][ni] = causal_effect(logit_o, answer_logit(patched, pair.answer_token));
        }
    });

    EffectMap map;
    map.mode = opts.mode;
    map.full_sequence = opts.full_sequence;
    map.model_hash = model_hash(state);
    map.dataset_hash = pairs_hash(pairs);
    map.effects.resize(n_nodes);
    for (std::size_t ni = 0; ni < n_nodes; ++ni) map.effects[ni].node = nodes[ni];

    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        (skipped[pi] ? map.pairs_skipped : map.pairs_used)++;
    }
    if (map.pairs_used == 0) throw numeric_error("path patching: every pair was skipped (answer logits below the denominator guard)");

    for (std::size_t ni = 0; ni < n_nodes; ++ni) {
        double sum = 0.0;
        for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
            if (!skipped[pi]) sum += scores[pi][ni];
        }
        const double mean = sum / map.pairs_used;
        double sq = 0.0;
        for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
            if (!skipped[pi]) sq += (scores[pi][ni] - mean) * (scores[pi][ni] - mean);
        }
        map.effects[ni].mean = mean;
        map.effects[ni].stddev = std::sqrt(sq / map.pairs_used);
        map.effects[ni].count = map.pairs_used;
    }
    return map;
}

EffectMap path_patch_sweep(const ModelState& state, const std::vector<const PromptPair*>& pairs, const SweepOptions& opts) {
    return path_patch_sweep(state, std::span<const PromptPair* const>(pairs), opts);
}

std::vector<NodeId> KeySelection::head_ids() const {
    std::vector<NodeId> out;
    for (const auto& e : heads) out.push_back(e.node);
    return out;
}

std::vector<int> KeySelection::mlp_layer_ids() const {
    std::vector<int> out;
    for (const auto& e : mlps) out.push_back(e.node.layer);
    return out;
}

std::vector<NodeId> KeySelection::all_ids() const {
    std::vector<NodeId> out = head_ids();
    for (const auto& e : mlps) out.push_back(e.node);
    return out;
}

KeySelection select_key(const EffectMap& effects, double tau, int top_k) {
    if (tau <= 0.0) throw config_error("select_key: tau must be > 0");
    std::vector<NodeEffect> selected;
    for (const NodeEffect& e : effects.effects) {
        if (e.mean <= -tau) selected.push_back(e);
    }
    std::stable_sort(selected.begin(), selected.end(),
                     [](const NodeEffect& a, const NodeEffect& b) { return std::abs(a.mean) > std::abs(b.mean); });
    if (top_k > 0 && static_cast<int>(selected.size()) > top_k) selected.resize(static_cast<std::size_t>(top_k));

    KeySelection sel;
    sel.tau = tau;
    sel.top_k = top_k;
    std::string bytes = patch_mode_name(effects.mode) + effects.model_hash + effects.dataset_hash;
    for (const auto& e : effects.effects) bytes += e.node.str() + std::to_string(e.mean);
    sel.effect_map_hash = hex64(fnv1a64(bytes));
    for (const NodeEffect& e : selected) {
        (e.node.is_head() ? sel.heads : sel.mlps).push_back(e);
    }
    return sel;
}

std::vector<std::pair<NodeId, Tensor>> mean_node_activations(const ModelState& state, std::span<const NodeId> nodes,
                                                             std::span<const PromptPair* const> cf_pairs, int jobs) {
    if (cf_pairs.empty()) throw data_error("mean ablation: counterfactual set is empty");
    const std::int64_t d = state.config.model_dim;
    std::vector<std::vector<std::vector<double>>> sums(cf_pairs.size());  // [pair][node][d]
    run_parallel(cf_pairs.size(), jobs, [&](std::size_t pi) {
        ForwardResult res = forward(state, cf_pairs[pi]->cf_ids);
        const std::int64_t end = static_cast<std::int64_t>(cf_pairs[pi]->cf_ids.size()) - 1;
        sums[pi].resize(nodes.size());
        for (std::size_t ni = 0; ni < nodes.size(); ++ni) {
            const Tensor out = res.cache.node_output(nodes[ni]);
            sums[pi][ni].assign(static_cast<std::size_t>(d), 0.0);
            for (std::int64_t j = 0; j < d; ++j) sums[pi][ni][static_cast<std::size_t>(j)] = out.at(end, j);
        }
    });
    std::vector<std::pair<NodeId, Tensor>> means;
    means.reserve(nodes.size());
    for (std::size_t ni = 0; ni < nodes.size(); ++ni) {
        Tensor mean = Tensor::zeros({d});
        for (std::size_t pi = 0; pi < cf_pairs.size(); ++pi) {
            for (std::int64_t j = 0; j < d; ++j) mean.at(j) += sums[pi][ni][static_cast<std::size_t>(j)];
        }
        for (std::int64_t j = 0; j < d; ++j) mean.at(j) /= static_cast<double>(cf_pairs.size());
        means.emplace_back(nodes[ni], mean);
    }
    return means;
}

double mean_ablate(const ModelState& state, std::span<const NodeId> nodes, std::span<const PromptPair* const> cf_pairs,
                   std::span<const PromptPair* const> eval_pairs, int jobs) {
    const auto eval = unique_by_text(eval_pairs);
    if (eval.empty()) throw data_error("mean ablation: evaluation set is empty");

    InterventionSet iv;
    if (!nodes.empty()) {
        for (auto& [node, mean] : mean_node_activations(state, nodes, cf_pairs, jobs)) {
            iv.set(node, {InterventionKind::Replace, mean, {}});
        }
    }
    std::vector<char> correct(eval.size(), 0);
    run_parallel(eval.size(), jobs, [&](std::size_t i) {
        ForwardOptions fo;
        fo.interventions = nodes.empty() ? nullptr : &iv;
        fo.want_cache = false;
        const Tensor logits = forward(state, eval[i]->ref_ids, fo).logits;
        correct[i] = argmax_end(logits) == eval[i]->answer_token ? 1 : 0;
    });
    double acc = 0.0;
    for (char c : correct) acc += c;
    return acc / static_cast<double>(eval.size());
}

KnockoutCurve knockout_curve(const ModelState& state, const EffectMap& effects, const std::string& ordering, int k_max,
                             std::uint64_t seed, std::span<const PromptPair* const> cf_pairs,
                             std::span<const PromptPair* const> eval_pairs, int jobs) {
    const auto heads = all_heads(state.config);
    if (k_max < 0 || k_max > static_cast<int>(heads.size())) {
        throw config_error("knockout: k_max " + std::to_string(k_max) + " exceeds head count " + std::to_string(heads.size()));
    }
    KnockoutCurve curve;
    curve.ordering = ordering;
    curve.seed = seed;
    curve.order = heads;
    if (ordering == "effect") {
        // most negative (strongest supporting) first; ties keep enumeration order
        std::stable_sort(curve.order.begin(), curve.order.end(), [&](const NodeId& a, const NodeId& b) {
            return effects.find(a)->mean < effects.find(b)->mean;
        });
    } else if (ordering == "random") {
        Rng rng(seed ^ 0x8f1b6d2cull);
        rng.shuffle(curve.order);
    } else {
        throw config_error("knockout: ordering must be effect|random, got '" + ordering + "'");
    }
    curve.order.resize(static_cast<std::size_t>(k_max));
    for (int k = 0; k <= k_max; ++k) {
        const std::span<const NodeId> prefix(curve.order.data(), static_cast<std::size_t>(k));
        curve.accuracy.push_back(mean_ablate(state, prefix, cf_pairs, eval_pairs, jobs));
    }
    return curve;
}

TransferResult transfer_knockout(const ModelState& state, std::span<const NodeId> nodes,
                                 std::span<const PromptPair* const> cf_pairs, std::span<const PromptPair* const> eval_pairs,
                                 int jobs) {
    TransferResult res;
    res.baseline = mean_ablate(state, {}, cf_pairs, eval_pairs, jobs);
    res.knocked = mean_ablate(state, nodes, cf_pairs, eval_pairs, jobs);
    return res;
}

std::vector<const PromptPair*> filter_correct(const ModelState& state, std::span<const PromptPair* const> pairs, int jobs) {
    std::vector<char> keep(pairs.size(), 0);
    run_parallel(pairs.size(), jobs, [&](std::size_t i) {
        ForwardOptions fo;
        fo.want_cache = false;
        const Tensor logits = forward(state, pairs[i]->ref_ids, fo).logits;
        keep[i] = argmax_end(logits) == pairs[i]->answer_token ? 1 : 0;
    });
    std::vector<const PromptPair*> out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (keep[i]) out.push_back(pairs[i]);
    }
    return out;
}

}  // namespace calclab
