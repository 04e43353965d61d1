#include "calclab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "calclab/errors.hpp"

namespace calclab {

namespace {

constexpr double kNormGuard = 1e-10;

double cosine(std::span<const double> u, std::span<const double> v, bool* flagged) {
    double uu = 0.0, vv = 0.0, uv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uu += u[i] * u[i];
        vv += v[i] * v[i];
        uv += u[i] * v[i];
    }
    if (uu < kNormGuard * kNormGuard || vv < kNormGuard * kNormGuard) {
        if (flagged) *flagged = true;
        return 0.0;
    }
    return uv / (std::sqrt(uu) * std::sqrt(vv));
}

double raw_dot_normalized_left(std::span<const double> u, std::span<const double> v, bool* flagged) {
    double uu = 0.0, uv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uu += u[i] * u[i];
        uv += u[i] * v[i];
    }
    if (uu < kNormGuard * kNormGuard) {
        if (flagged) *flagged = true;
        return 0.0;
    }
    return uv / std::sqrt(uu);
}

std::vector<double> unembed_column(const ModelState& state, int token) {
    const std::int64_t d = state.config.model_dim;
    std::vector<double> col(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < d; ++i) col[static_cast<std::size_t>(i)] = state.unembed.at(i, token);
    return col;
}

std::vector<double> end_row(const Tensor& t) {
    const std::int64_t end = t.dim(0) - 1, d = t.dim(1);
    std::vector<double> row(static_cast<std::size_t>(d));
    for (std::int64_t j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = t.at(end, j);
    return row;
}

int argmax_end(const Tensor& logits) {
    const std::int64_t end = logits.dim(0) - 1;
    int best = 0;
    for (std::int64_t t = 1; t < logits.dim(1); ++t) {
        if (logits.at(end, t) > logits.at(end, best)) best = static_cast<int>(t);
    }
    return best;
}

int first_digit_token(int value) {
    return Vocabulary::builtin().digit_id(std::to_string(value)[0] - '0');
}

struct TrackedTokens {
    int a, b, c;
    std::vector<int> other;  // digit tokens outside {a, b, c}
};

TrackedTokens tracked_tokens(const PromptPair& pair) {
    TrackedTokens t{first_digit_token(pair.a), first_digit_token(pair.b), pair.answer_token, {}};
    const auto& vocab = Vocabulary::builtin();
    for (int d = 0; d < 10; ++d) {
        const int id = vocab.digit_id(d);
        if (id != t.a && id != t.b && id != t.c) t.other.push_back(id);
    }
    return t;
}

}  // namespace

AttentionProfile attention_profile(const ModelState& state, const NodeId& head, std::span<const PromptPair* const> samples,
                                   bool keep_raw) {
    if (!head.is_head() || head.layer < 0 || head.layer >= state.config.layers || head.head < 0 || head.head >= state.config.heads) {
        throw data_error("attention_profile: head " + head.str() + " out of bounds");
    }
    if (samples.empty()) throw data_error("attention_profile: no samples");

    AttentionProfile profile;
    profile.head = head;
    double sums[4] = {0, 0, 0, 0};
    double combined_sum = 0.0;
    for (const PromptPair* p : samples) {
        ForwardResult res = forward(state, p->ref_ids);
        const Tensor& pattern = res.cache.attn[static_cast<std::size_t>(head.layer)][static_cast<std::size_t>(head.head)];
        const std::int64_t n = pattern.dim(0), end = n - 1;

        std::vector<int> role(static_cast<std::size_t>(n), 3);  // 0=A 1=B 2=op 3=other
        for (int pos : p->a_positions) role[static_cast<std::size_t>(pos)] = 0;
        for (int pos : p->b_positions) role[static_cast<std::size_t>(pos)] = 1;
        for (int pos : p->op_positions) role[static_cast<std::size_t>(pos)] = 2;

        double mass[4] = {0, 0, 0, 0};
        int counts[4] = {0, 0, 0, 0};
        for (std::int64_t j = 0; j < n; ++j) {
            mass[role[static_cast<std::size_t>(j)]] += pattern.at(end, j);
            counts[role[static_cast<std::size_t>(j)]]++;
        }
        std::array<double, 4> means{};
        for (int r = 0; r < 4; ++r) means[static_cast<std::size_t>(r)] = counts[r] > 0 ? mass[r] / counts[r] : 0.0;
        for (int r = 0; r < 4; ++r) sums[r] += means[static_cast<std::size_t>(r)];
        const int ab_count = counts[0] + counts[1];
        combined_sum += ab_count > 0 ? (mass[0] + mass[1]) / ab_count : 0.0;
        if (keep_raw) profile.raw.push_back(means);
        profile.samples++;
    }
    profile.operand_a = sums[0] / profile.samples;
    profile.operand_b = sums[1] / profile.samples;
    profile.operator_token = sums[2] / profile.samples;
    profile.other = sums[3] / profile.samples;
    profile.operand_combined = combined_sum / profile.samples;
    return profile;
}

namespace {

ProbeSeries probe_series(const ModelState& state, std::span<const PromptPair* const> samples, bool correct_only, bool reception) {
    if (samples.empty()) throw data_error("probe: no samples");
    const int layers = state.config.layers;
    ProbeSeries series;
    series.a.assign(static_cast<std::size_t>(layers), 0.0);
    series.b.assign(static_cast<std::size_t>(layers), 0.0);
    series.c.assign(static_cast<std::size_t>(layers), 0.0);
    series.other.assign(static_cast<std::size_t>(layers), 0.0);
    std::unordered_set<int> flagged_layers;

    for (const PromptPair* p : samples) {
        ForwardResult res = forward(state, p->ref_ids);
        if (correct_only && argmax_end(res.cache.logits) != p->answer_token) continue;
        const TrackedTokens toks = tracked_tokens(*p);
        for (int l = 0; l < layers; ++l) {
            std::vector<double> vec;
            if (reception) {
                vec = end_row(res.cache.mlp_in[static_cast<std::size_t>(l)]);
            } else {
                vec = end_row(res.cache.mlp_out[static_cast<std::size_t>(l)]);
                const auto in = end_row(res.cache.mlp_in[static_cast<std::size_t>(l)]);
                for (std::size_t j = 0; j < vec.size(); ++j) vec[j] -= in[j];
            }
            bool flag = false;
            series.a[static_cast<std::size_t>(l)] += cosine(vec, unembed_column(state, toks.a), &flag);
            series.b[static_cast<std::size_t>(l)] += cosine(vec, unembed_column(state, toks.b), &flag);
            series.c[static_cast<std::size_t>(l)] += cosine(vec, unembed_column(state, toks.c), &flag);
            double other = 0.0;
            for (int id : toks.other) other += cosine(vec, unembed_column(state, id), &flag);
            series.other[static_cast<std::size_t>(l)] += other / static_cast<double>(toks.other.size());
            if (flag) flagged_layers.insert(l);
        }
        series.samples++;
    }
    if (series.samples == 0) throw data_error("probe: no samples survived the correct-prediction filter");
    for (int l = 0; l < layers; ++l) {
        series.a[static_cast<std::size_t>(l)] /= series.samples;
        series.b[static_cast<std::size_t>(l)] /= series.samples;
        series.c[static_cast<std::size_t>(l)] /= series.samples;
        series.other[static_cast<std::size_t>(l)] /= series.samples;
    }
    series.flagged.assign(flagged_layers.begin(), flagged_layers.end());
    std::sort(series.flagged.begin(), series.flagged.end());
    return series;
}

}  // namespace

ProbeSeries mlp_reception(const ModelState& state, std::span<const PromptPair* const> samples, bool correct_only) {
    return probe_series(state, samples, correct_only, true);
}

ProbeSeries mlp_generation(const ModelState& state, std::span<const PromptPair* const> samples, bool correct_only) {
    return probe_series(state, samples, correct_only, false);
}

TokenTrajectory token_trajectory(const ModelState& state, std::span<const int> tokens, int answer_token, bool raw_dot) {
    ForwardResult res = forward(state, tokens);
    const auto& vocab = Vocabulary::builtin();

    TokenTrajectory traj;
    traj.answer_token = answer_token;
    traj.predicted_token = argmax_end(res.cache.logits);
    for (int l = 0; l < state.config.layers; ++l) {
        auto delta = end_row(res.cache.mlp_out[static_cast<std::size_t>(l)]);
        const auto in = end_row(res.cache.mlp_in[static_cast<std::size_t>(l)]);
        for (std::size_t j = 0; j < delta.size(); ++j) delta[j] -= in[j];
        std::vector<std::pair<int, double>> scored;
        for (int d = 0; d < 10; ++d) {
            const int id = vocab.digit_id(d);
            const auto col = unembed_column(state, id);
            const double s = raw_dot ? raw_dot_normalized_left(delta, col, nullptr) : cosine(delta, col, nullptr);
            scored.emplace_back(id, s);
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
            if (x.second != y.second) return x.second > y.second;
            return x.first < y.first;  // ties resolve by token id
        });
        traj.ranking.push_back(std::move(scored));
    }
    for (int l = state.config.layers - 1; l >= 0; --l) {
        if (traj.ranking[static_cast<std::size_t>(l)].front().first != answer_token) break;
        traj.first_stable_layer = l;
    }
    return traj;
}

}  // namespace calclab
