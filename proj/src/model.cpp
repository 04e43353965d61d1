#include "calclab/model.hpp"

#include <cmath>

#include "calclab/errors.hpp"

namespace calclab {

void ModelConfig::validate() const {
    if (layers < 1 || heads < 1 || model_dim < 1 || mlp_hidden < 1 || vocab < 1 || max_seq < 1) {
        throw config_error("model config: all counts must be >= 1");
    }
    if (model_dim % heads != 0) {
        throw config_error("model config: model_dim " + std::to_string(model_dim) + " not divisible by heads " + std::to_string(heads));
    }
    if (nonlinearity != "gelu" && nonlinearity != "silu") {
        throw config_error("model config: unknown nonlinearity '" + nonlinearity + "'");
    }
}

std::string NodeId::str() const {
    if (kind == Kind::Head) return "h" + std::to_string(layer) + "." + std::to_string(head);
    return "mlp" + std::to_string(layer);
}

NodeId NodeId::parse(const std::string& s) {
    try {
        if (s.rfind("mlp", 0) == 0) return NodeId::mlp(std::stoi(s.substr(3)));
        if (!s.empty() && s[0] == 'h') {
            const auto dot = s.find('.');
            if (dot != std::string::npos) {
                return NodeId::attention(std::stoi(s.substr(1, dot - 1)), std::stoi(s.substr(dot + 1)));
            }
        }
    } catch (const std::exception&) {
    }
    throw data_error("cannot parse node id '" + s + "' (expected e.g. 'h1.3' or 'mlp2')");
}

std::vector<NodeId> all_nodes(const ModelConfig& cfg) {
    std::vector<NodeId> nodes;
    nodes.reserve(static_cast<std::size_t>(cfg.layers) * (cfg.heads + 1));
    for (int i = 0; i < cfg.layers; ++i) {
        for (int j = 0; j < cfg.heads; ++j) nodes.push_back(NodeId::attention(i, j));
        nodes.push_back(NodeId::mlp(i));
    }
    return nodes;
}

std::vector<NodeId> all_heads(const ModelConfig& cfg) {
    std::vector<NodeId> nodes;
    for (int i = 0; i < cfg.layers; ++i) {
        for (int j = 0; j < cfg.heads; ++j) nodes.push_back(NodeId::attention(i, j));
    }
    return nodes;
}

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const std::int64_t d = cfg.model_dim, dh = cfg.head_dim(), hid = cfg.mlp_hidden;
    const double std_in = 1.0 / std::sqrt(static_cast<double>(d));
    // writers into the residual stream are damped with depth
    const double std_out = std_in / std::sqrt(2.0 * static_cast<double>(cfg.layers));

    ModelState st;
    st.config = cfg;
    st.tok_embed = Tensor::randn({cfg.vocab, d}, rng, 0.02);
    st.pos_embed = Tensor::randn({cfg.max_seq, d}, rng, 0.02);
    st.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& layer : st.layers) {
        layer.ln1_gain = Tensor::full({d}, 1.0);
        layer.ln1_bias = Tensor::zeros({d});
        layer.heads.resize(static_cast<std::size_t>(cfg.heads));
        for (auto& h : layer.heads) {
            h.wq = Tensor::randn({d, dh}, rng, std_in);
            h.wk = Tensor::randn({d, dh}, rng, std_in);
            h.wv = Tensor::randn({d, dh}, rng, std_in);
            h.wo = Tensor::randn({dh, d}, rng, std_out);
        }
        layer.ln2_gain = Tensor::full({d}, 1.0);
        layer.ln2_bias = Tensor::zeros({d});
        layer.mlp_w_in = Tensor::randn({d, hid}, rng, std_in);
        layer.mlp_b_in = Tensor::zeros({hid});
        layer.mlp_w_out = Tensor::randn({hid, d}, rng, std_out);
        layer.mlp_b_out = Tensor::zeros({d});
    }
    st.final_ln_gain = Tensor::full({d}, 1.0);
    st.final_ln_bias = Tensor::zeros({d});
    st.unembed = Tensor::randn({d, cfg.vocab}, rng, std_in);
    return st;
}

template <typename State, typename Fn>
static void for_each_parameter_impl(State& state, const Fn& fn) {
    fn("tok_embed", state.tok_embed);
    fn("pos_embed", state.pos_embed);
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        auto& layer = state.layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        fn(p + "ln1.gain", layer.ln1_gain);
        fn(p + "ln1.bias", layer.ln1_bias);
        for (std::size_t j = 0; j < layer.heads.size(); ++j) {
            const std::string hp = p + "head" + std::to_string(j) + ".";
            fn(hp + "wq", layer.heads[j].wq);
            fn(hp + "wk", layer.heads[j].wk);
            fn(hp + "wv", layer.heads[j].wv);
            fn(hp + "wo", layer.heads[j].wo);
        }
        fn(p + "ln2.gain", layer.ln2_gain);
        fn(p + "ln2.bias", layer.ln2_bias);
        fn(p + "mlp.w_in", layer.mlp_w_in);
        fn(p + "mlp.b_in", layer.mlp_b_in);
        fn(p + "mlp.w_out", layer.mlp_w_out);
        fn(p + "mlp.b_out", layer.mlp_b_out);
    }
    fn("final_ln.gain", state.final_ln_gain);
    fn("final_ln.bias", state.final_ln_bias);
    fn("unembed", state.unembed);
}

void for_each_parameter(ModelState& state, const std::function<void(const std::string&, Tensor&)>& fn) {
    for_each_parameter_impl(state, fn);
}

void for_each_parameter(const ModelState& state, const std::function<void(const std::string&, const Tensor&)>& fn) {
    for_each_parameter_impl(state, fn);
}

std::int64_t parameter_count(const ModelState& state) {
    std::int64_t n = 0;
    for_each_parameter(state, [&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

std::vector<Tensor> node_parameters(ModelState& state, const NodeId& node) {
    if (node.layer < 0 || node.layer >= state.config.layers) {
        throw data_error("node " + node.str() + " out of range for model with " + std::to_string(state.config.layers) + " layers");
    }
    auto& layer = state.layers[static_cast<std::size_t>(node.layer)];
    if (node.is_head()) {
        if (node.head < 0 || node.head >= state.config.heads) {
            throw data_error("node " + node.str() + " out of range for model with " + std::to_string(state.config.heads) + " heads");
        }
        auto& h = layer.heads[static_cast<std::size_t>(node.head)];
        return {h.wq, h.wk, h.wv, h.wo};
    }
    return {layer.mlp_w_in, layer.mlp_b_in, layer.mlp_w_out, layer.mlp_b_out};
}

Tensor ActivationCache::node_output(const NodeId& node) const {
    if (node.is_head()) return head_out[static_cast<std::size_t>(node.layer)][static_cast<std::size_t>(node.head)];
    const Tensor& in = mlp_in[static_cast<std::size_t>(node.layer)];
    const Tensor& out = mlp_out[static_cast<std::size_t>(node.layer)];
    Tensor delta = Tensor::zeros(in.shape());
    for (std::int64_t i = 0; i < in.numel(); ++i) delta.at(i) = out.data()[static_cast<std::size_t>(i)] - in.data()[static_cast<std::size_t>(i)];
    return delta;
}

void InterventionSet::set(const NodeId& node, Intervention iv) {
    if (map_.count(node)) throw data_error("duplicate intervention directive for node " + node.str());
    map_.emplace(node, std::move(iv));
}

const Intervention* InterventionSet::find(const NodeId& node) const {
    auto it = map_.find(node);
    return it == map_.end() ? nullptr : &it->second;
}

namespace {

// Overwrites the directed rows of a freshly computed contribution in place.
// Only legal on untaped runs; training never intervenes.
void apply_intervention(Tensor& contrib, const Intervention& iv, const NodeId& node) {
    const std::int64_t n = contrib.dim(0), d = contrib.dim(1);
    std::vector<int> positions = iv.positions;
    if (positions.empty()) positions.push_back(static_cast<int>(n - 1));  // END
    const Tensor& v = iv.value;
    const bool per_position = v.ndim() == 2;
    if (per_position) {
        if (v.dim(0) != n || v.dim(1) != d) {
            throw data_error("intervention value for " + node.str() + " has shape " + shape_str(v.shape()) +
                             ", cached shape is " + shape_str(contrib.shape()));
        }
    } else if (v.ndim() != 1 || v.dim(0) != d) {
        throw data_error("intervention value for " + node.str() + " has shape " + shape_str(v.shape()) +
                         ", expected [" + std::to_string(d) + "] or " + shape_str(contrib.shape()));
    }
    for (int p : positions) {
        if (p < 0 || p >= n) throw data_error("intervention position " + std::to_string(p) + " outside sequence of length " + std::to_string(n));
        for (std::int64_t j = 0; j < d; ++j) {
            contrib.at(p, j) = per_position ? v.at(p, j) : v.at(j);
        }
    }
}

}  // namespace

ForwardResult forward(const ModelState& state, std::span<const int> tokens, const ForwardOptions& opts) {
    const ModelConfig& cfg = state.config;
    const std::int64_t n = static_cast<std::int64_t>(tokens.size());
    if (n < 1) throw data_error("forward: empty token sequence");
    if (n > cfg.max_seq) {
        throw data_error("forward: sequence length " + std::to_string(n) + " exceeds max_seq " + std::to_string(cfg.max_seq));
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab) throw data_error("forward: token id " + std::to_string(t) + " outside vocab of " + std::to_string(cfg.vocab));
    }
    if (opts.interventions && opts.tape) {
        throw config_error("forward: interventions are not supported on a taped (training) run");
    }
    Tape* tape = opts.tape;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    auto nonlin = cfg.nonlinearity == "silu" ? silu : gelu;

    ForwardResult res;
    ActivationCache& cache = res.cache;
    if (opts.want_cache) {
        cache.head_out.resize(static_cast<std::size_t>(cfg.layers));
        cache.attn.resize(static_cast<std::size_t>(cfg.layers));
        cache.mlp_in.resize(static_cast<std::size_t>(cfg.layers));
        cache.mlp_out.resize(static_cast<std::size_t>(cfg.layers));
    }

    std::vector<int> pos_ids(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) pos_ids[static_cast<std::size_t>(i)] = static_cast<int>(i);
    Tensor resid = add(gather_rows(state.tok_embed, tokens, tape), gather_rows(state.pos_embed, pos_ids, tape), tape);
    if (opts.want_cache) cache.resid.push_back(resid.detached());

    for (int li = 0; li < cfg.layers; ++li) {
        const LayerWeights& layer = state.layers[static_cast<std::size_t>(li)];
        Tensor x = layernorm(resid, layer.ln1_gain, layer.ln1_bias, cfg.layernorm_eps, tape);
        if (opts.want_cache) {
            cache.head_out[static_cast<std::size_t>(li)].resize(static_cast<std::size_t>(cfg.heads));
            cache.attn[static_cast<std::size_t>(li)].resize(static_cast<std::size_t>(cfg.heads));
        }
        for (int hj = 0; hj < cfg.heads; ++hj) {
            const HeadWeights& h = layer.heads[static_cast<std::size_t>(hj)];
            Tensor q = matmul(x, h.wq, tape);
            Tensor k = matmul(x, h.wk, tape);
            Tensor v = matmul(x, h.wv, tape);
            Tensor pattern = causal_softmax(scale(matmul_nt(q, k, tape), inv_sqrt_dh, tape), tape);
            Tensor contrib = matmul(matmul(pattern, v, tape), h.wo, tape);
            if (opts.interventions) {
                if (const Intervention* iv = opts.interventions->find(NodeId::attention(li, hj))) {
                    apply_intervention(contrib, *iv, NodeId::attention(li, hj));
                }
            }
            if (opts.want_cache) {
                cache.attn[static_cast<std::size_t>(li)][static_cast<std::size_t>(hj)] = pattern.detached();
                cache.head_out[static_cast<std::size_t>(li)][static_cast<std::size_t>(hj)] = contrib.detached();
            }
            resid = add(resid, contrib, tape);
        }

        if (opts.want_cache) cache.mlp_in[static_cast<std::size_t>(li)] = resid.detached();
        Tensor x2 = layernorm(resid, layer.ln2_gain, layer.ln2_bias, cfg.layernorm_eps, tape);
        Tensor hidden = nonlin(add_bias(matmul(x2, layer.mlp_w_in, tape), layer.mlp_b_in, tape), tape);
        Tensor mlp_contrib = add_bias(matmul(hidden, layer.mlp_w_out, tape), layer.mlp_b_out, tape);
        if (opts.interventions) {
            if (const Intervention* iv = opts.interventions->find(NodeId::mlp(li))) {
                apply_intervention(mlp_contrib, *iv, NodeId::mlp(li));
            }
        }
        resid = add(resid, mlp_contrib, tape);
        if (opts.want_cache) {
            cache.mlp_out[static_cast<std::size_t>(li)] = resid.detached();
            cache.resid.push_back(resid.detached());
        }
    }

    Tensor xf = layernorm(resid, state.final_ln_gain, state.final_ln_bias, cfg.layernorm_eps, tape);
    res.logits = matmul(xf, state.unembed, tape);
    if (opts.want_cache) cache.logits = res.logits.detached();
    return res;
}

std::pair<Tensor, Tensor> composed_matrices(const ModelState& state, int layer, int head) {
    if (layer < 0 || layer >= state.config.layers || head < 0 || head >= state.config.heads) {
        throw data_error("composed_matrices: head " + NodeId::attention(layer, head).str() + " out of bounds");
    }
    const HeadWeights& h = state.layers[static_cast<std::size_t>(layer)].heads[static_cast<std::size_t>(head)];
    Tensor w_qk = matmul_nt(h.wq, h.wk);  // [d, d]
    Tensor w_ov = matmul(h.wv, h.wo);     // [d, d]
    return {w_qk, w_ov};
}

double answer_logit(const Tensor& logits, int answer_token, std::int64_t position) {
    if (logits.ndim() != 2) throw shape_error("answer_logit expects [N, V] logits");
    const std::int64_t n = logits.dim(0), v = logits.dim(1);
    if (position < 0) position = n - 1;
    if (position >= n) throw data_error("answer_logit: position " + std::to_string(position) + " outside sequence");
    if (answer_token < 0 || answer_token >= v) {
        throw data_error("answer_logit: token " + std::to_string(answer_token) + " outside vocab of " + std::to_string(v));
    }
    return logits.at(position, answer_token);
}

}  // namespace calclab
