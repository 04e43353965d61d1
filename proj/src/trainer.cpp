#include "calclab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "calclab/errors.hpp"
#include "calclab/report.hpp"

namespace calclab {

using nlohmann::json;

void TrainConfig::validate() const {
    // lr == 0 is tolerated as an explicit no-op run
    if (lr < 0.0 || !std::isfinite(lr)) throw config_error("train config: learning rate must be >= 0");
    if (batch_size < 1) throw config_error("train config: batch size must be >= 1");
    if (steps < 0) throw config_error("train config: steps must be >= 0");
    if (optimizer != "adam" && optimizer != "sgd") throw config_error("train config: optimizer must be adam or sgd");
    if (loss_positions != "answer" && loss_positions != "all") throw config_error("train config: loss_positions must be answer or all");
}

void TuneMask::validate(const ModelConfig& cfg) const {
    for (const NodeId& h : heads) {
        if (!h.is_head() || h.layer < 0 || h.layer >= cfg.layers || h.head < 0 || h.head >= cfg.heads) {
            throw config_error("tune mask: head " + h.str() + " out of bounds for this model");
        }
    }
    for (int l : mlp_layers) {
        if (l < 0 || l >= cfg.layers) throw config_error("tune mask: mlp layer " + std::to_string(l) + " out of bounds");
    }
}

std::vector<int> TuneMask::heads_per_layer(const ModelConfig& cfg) const {
    std::vector<int> counts(static_cast<std::size_t>(cfg.layers), 0);
    for (const NodeId& h : heads) counts[static_cast<std::size_t>(h.layer)]++;
    return counts;
}

namespace {

struct Trainable {
    Tensor tensor;
    double grad_rescale = 1.0;  // H/h_i for masked head blocks
    bool decay = true;          // weight decay skips 1-D tensors
};

double lr_at(const TrainConfig& cfg, int step) {
    const int warmup = static_cast<int>(std::lround(cfg.warmup_ratio * cfg.steps));
    if (warmup > 0 && step < warmup) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (!cfg.cosine_decay || cfg.steps <= warmup) return cfg.lr;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(cfg.steps - warmup);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
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

struct ParamSnapshot {
    std::vector<std::pair<std::string, std::vector<double>>> values;
};

ParamSnapshot snapshot(const ModelState& state) {
    ParamSnapshot snap;
    for_each_parameter(state, [&](const std::string& name, const Tensor& t) {
        snap.values.emplace_back(name, std::vector<double>(t.data().begin(), t.data().end()));
    });
    return snap;
}

std::vector<std::pair<std::string, double>> delta_norms(const ModelState& state, const ParamSnapshot& before) {
    std::unordered_map<std::string, double> sq;  // by node label
    std::size_t i = 0;
    for_each_parameter(state, [&](const std::string& name, const Tensor& t) {
        const auto& old = before.values[i++].second;
        double s = 0.0;
        for (std::size_t k = 0; k < old.size(); ++k) {
            const double d = t.data()[k] - old[k];
            s += d * d;
        }
        // layer3.head2.wq -> h3.2 ; layer1.mlp.w_in -> mlp1 ; rest keep the name stem
        std::string label = name;
        if (name.rfind("layer", 0) == 0) {
            const auto dot = name.find('.');
            const int layer = std::stoi(name.substr(5, dot - 5));
            if (name.find(".head") != std::string::npos) {
                const auto hpos = name.find(".head") + 5;
                const int head = std::stoi(name.substr(hpos, name.find('.', hpos) - hpos));
                label = NodeId::attention(layer, head).str();
            } else if (name.find(".mlp.") != std::string::npos) {
                label = NodeId::mlp(layer).str();
            } else {
                label = "layer" + std::to_string(layer) + ".ln";
            }
        } else {
            label = name.substr(0, name.find('.'));
        }
        sq[label] += s;
    });
    std::vector<std::pair<std::string, double>> out(sq.begin(), sq.end());
    std::sort(out.begin(), out.end());
    for (auto& [k, v] : out) v = std::sqrt(v);
    return out;
}

Tensor sample_loss(const ModelState& state, const PromptPair& pair, const TrainConfig& cfg, Tape* tape) {
    ForwardOptions opts;
    opts.tape = tape;
    opts.want_cache = false;
    ForwardResult res = forward(state, pair.ref_ids, opts);
    const std::int64_t end = static_cast<std::int64_t>(pair.ref_ids.size()) - 1;
    if (cfg.loss_positions == "answer") {
        return cross_entropy(select_row(res.logits, end, tape), pair.answer_token, tape);
    }
    std::vector<Tensor> losses;
    for (std::int64_t t = 0; t <= end; ++t) {
        const int target = t < end ? pair.ref_ids[static_cast<std::size_t>(t + 1)] : pair.answer_token;
        losses.push_back(cross_entropy(select_row(res.logits, t, tape), target, tape));
    }
    return mean_of(losses, tape);
}

TrainReport train_loop(ModelState& state, const Dataset& data, const TrainConfig& cfg, std::vector<Trainable> trainable) {
    cfg.validate();
    if (data.train_idx.empty()) throw config_error("training: dataset has an empty train split");
    for (const PromptPair& p : data.pairs) {
        for (int t : p.ref_ids) {
            if (t >= state.config.vocab) throw config_error("training: dataset token ids exceed the model vocabulary");
        }
        break;  // all pairs share the vocabulary; checking one is enough
    }

    // only masked/trainable tensors participate in autodiff
    for_each_parameter(state, [](const std::string&, Tensor& t) { t.set_requires_grad(false); });
    for (auto& tr : trainable) tr.tensor.set_requires_grad(true);

    std::int64_t tuned = 0;
    for (const auto& tr : trainable) tuned += tr.tensor.numel();

    // adam moments exist only for trainable tensors
    std::vector<std::vector<double>> m(trainable.size()), v(trainable.size());
    if (cfg.optimizer == "adam") {
        for (std::size_t i = 0; i < trainable.size(); ++i) {
            m[i].assign(static_cast<std::size_t>(trainable[i].tensor.numel()), 0.0);
            v[i].assign(static_cast<std::size_t>(trainable[i].tensor.numel()), 0.0);
        }
    }

    const auto eval_split = data.val_idx.empty() ? data.split(data.train_idx) : data.split(data.val_idx);
    const ParamSnapshot before = snapshot(state);

    TrainReport report;
    report.tuned_params = tuned;
    report.total_params = parameter_count(state);

    Rng rng(cfg.seed ^ 0x5dee2c6fca1f3b11ULL);
    Tape tape;
    const auto t0 = std::chrono::steady_clock::now();
    std::int64_t samples_seen = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        const double lr = lr_at(cfg, step);
        std::vector<Tensor> losses;
        losses.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int bi = 0; bi < cfg.batch_size; ++bi) {
            const int idx = data.train_idx[static_cast<std::size_t>(rng.below(data.train_idx.size()))];
            losses.push_back(sample_loss(state, data.pairs[static_cast<std::size_t>(idx)], cfg, &tape));
        }
        Tensor loss = mean_of(losses, &tape);
        const double loss_val = loss.item();
        if (!std::isfinite(loss_val)) {
            throw numeric_error("training diverged: loss " + fmt_double(loss_val) + " at step " + std::to_string(step) +
                                " (lr " + fmt_double(lr) + ")");
        }
        report.loss_curve.push_back(loss_val);
        samples_seen += cfg.batch_size;

        tape.backward(loss);
        tape.clear();

        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, step + 1);
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, step + 1);
        for (std::size_t i = 0; i < trainable.size(); ++i) {
            Tensor& w = trainable[i].tensor;
            if (!w.has_grad()) continue;  // unreachable from this batch's loss
            auto g = w.grad();
            auto wv = w.data();
            const double rescale = trainable[i].grad_rescale;
            const double wd = trainable[i].decay ? cfg.weight_decay : 0.0;
            if (cfg.optimizer == "sgd") {
                for (std::size_t k = 0; k < wv.size(); ++k) {
                    wv[k] -= lr * (rescale * g[k] + wd * wv[k]);
                }
            } else {
                for (std::size_t k = 0; k < wv.size(); ++k) {
                    const double gk = rescale * g[k];
                    m[i][k] = cfg.adam_beta1 * m[i][k] + (1.0 - cfg.adam_beta1) * gk;
                    v[i][k] = cfg.adam_beta2 * v[i][k] + (1.0 - cfg.adam_beta2) * gk * gk;
                    const double mh = m[i][k] / bc1;
                    const double vh = v[i][k] / bc2;
                    wv[k] -= lr * (mh / (std::sqrt(vh) + cfg.adam_eps) + wd * wv[k]);
                }
            }
            w.zero_grad();
        }
        report.steps_run = step + 1;

        const bool last = step + 1 == cfg.steps;
        if ((cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) || last) {
            const double acc = evaluate_accuracy(state, eval_split);
            report.accuracy_curve.emplace_back(step + 1, acc);
            report.final_accuracy = acc;
            if (cfg.early_stop_accuracy > 0.0 && acc >= cfg.early_stop_accuracy) {
                report.reached_target = true;
                break;
            }
        }
    }
    if (cfg.steps == 0 || report.accuracy_curve.empty()) {
        report.final_accuracy = evaluate_accuracy(state, eval_split);
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.samples_per_sec = elapsed > 0 ? static_cast<double>(samples_seen) / elapsed : 0.0;
    report.node_deltas = delta_norms(state, before);

    for (auto& tr : trainable) tr.tensor.set_requires_grad(false);
    return report;
}

std::vector<Trainable> all_trainable(ModelState& state) {
    std::vector<Trainable> out;
    for_each_parameter(state, [&](const std::string&, Tensor& t) {
        out.push_back({t, 1.0, t.ndim() > 1});
    });
    return out;
}

}  // namespace

TrainReport pretrain(ModelState& state, const Dataset& data, const TrainConfig& cfg) {
    return train_loop(state, data, cfg, all_trainable(state));
}

TrainReport full_sft(ModelState& state, const Dataset& data, const TrainConfig& cfg) {
    return train_loop(state, data, cfg, all_trainable(state));
}

TrainReport precise_sft(ModelState& state, const Dataset& data, const TuneMask& mask, const TrainConfig& cfg, bool allow_empty) {
    mask.validate(state.config);
    if (mask.empty()) {
        if (!allow_empty) throw config_error("precise tuning: empty mask (pass allow_empty to run a no-op)");
        TrainReport report;
        report.total_params = parameter_count(state);
        const auto eval_split = data.val_idx.empty() ? data.split(data.train_idx) : data.split(data.val_idx);
        report.final_accuracy = evaluate_accuracy(state, eval_split);
        return report;
    }
    const auto per_layer = mask.heads_per_layer(state.config);
    std::vector<Trainable> trainable;
    for (const NodeId& h : mask.heads) {
        const double rescale = static_cast<double>(state.config.heads) / static_cast<double>(per_layer[static_cast<std::size_t>(h.layer)]);
        for (Tensor& t : node_parameters(state, h)) trainable.push_back({t, rescale, true});
    }
    for (int l : mask.mlp_layers) {
        for (Tensor& t : node_parameters(state, NodeId::mlp(l))) trainable.push_back({t, 1.0, t.ndim() > 1});
    }
    return train_loop(state, data, cfg, std::move(trainable));
}

double evaluate_accuracy(const ModelState& state, std::span<const PromptPair* const> samples, int jobs) {
    const auto unique = unique_by_text(samples);
    if (unique.empty()) throw data_error("evaluate_accuracy: no samples");
    std::vector<char> correct(unique.size(), 0);
    auto worker = [&](std::size_t lo, std::size_t hi) {
        ForwardOptions opts;
        opts.want_cache = false;
        for (std::size_t i = lo; i < hi; ++i) {
            const PromptPair& p = *unique[i];
            const Tensor logits = forward(state, p.ref_ids, opts).logits;
            const std::int64_t end = static_cast<std::int64_t>(p.ref_ids.size()) - 1;
            int best = 0;
            for (int t = 1; t < state.config.vocab; ++t) {
                if (logits.at(end, t) > logits.at(end, best)) best = t;
            }
            correct[i] = best == p.answer_token ? 1 : 0;
        }
    };
    if (jobs <= 1 || unique.size() < 8) {
        worker(0, unique.size());
    } else {
        const std::size_t n = unique.size();
        const std::size_t chunk = (n + static_cast<std::size_t>(jobs) - 1) / static_cast<std::size_t>(jobs);
        std::vector<std::thread> threads;
        for (std::size_t lo = 0; lo < n; lo += chunk) threads.emplace_back(worker, lo, std::min(n, lo + chunk));
        for (auto& t : threads) t.join();
    }
    double acc = 0.0;
    for (char c : correct) acc += c;
    return acc / static_cast<double>(unique.size());
}

double evaluate_accuracy(const ModelState& state, const std::vector<const PromptPair*>& samples, int jobs) {
    return evaluate_accuracy(state, std::span<const PromptPair* const>(samples), jobs);
}

void write_train_report(const TrainReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::string csv = "step,loss\n";
        for (std::size_t i = 0; i < report.loss_curve.size(); ++i) {
            csv += std::to_string(i + 1) + "," + fmt_double(report.loss_curve[i]) + "\n";
        }
        write_text(dir / "loss.csv", csv);
    }
    {
        std::string csv = "step,accuracy\n";
        for (const auto& [step, acc] : report.accuracy_curve) {
            csv += std::to_string(step) + "," + fmt_double(acc) + "\n";
        }
        write_text(dir / "accuracy.csv", csv);
    }
    {
        std::string csv = "node,delta_norm\n";
        for (const auto& [node, norm] : report.node_deltas) {
            csv += node + "," + fmt_double(norm) + "\n";
        }
        write_text(dir / "deltas.csv", csv);
    }
    {
        json j{{"final_accuracy", report.final_accuracy},
               {"reached_target", report.reached_target},
               {"steps_run", report.steps_run},
               {"tuned_params", report.tuned_params},
               {"total_params", report.total_params}};
        write_text(dir / "report.json", j.dump(2) + "\n");
    }
    {
        json j{{"samples_per_sec", report.samples_per_sec}};
        write_text(dir / "timing.json", j.dump(2) + "\n");
    }
}

}  // namespace calclab
