#include "calclab/pipeline.hpp"

#include <algorithm>
#include <thread>

#include "calclab/checkpoint.hpp"
#include "calclab/errors.hpp"
#include "calclab/hash.hpp"
#include "calclab/patching.hpp"
#include "calclab/probe.hpp"
#include "calclab/report.hpp"

namespace calclab {

using nlohmann::json;
namespace fs = std::filesystem;

bool SuiteOutcome::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

int resolve_jobs(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

ModelState clone_model(const ModelState& state) {
    ModelState copy = state;
    copy.tok_embed = state.tok_embed.clone();
    copy.pos_embed = state.pos_embed.clone();
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        LayerWeights& l = copy.layers[i];
        const LayerWeights& src = state.layers[i];
        l.ln1_gain = src.ln1_gain.clone();
        l.ln1_bias = src.ln1_bias.clone();
        for (std::size_t j = 0; j < src.heads.size(); ++j) {
            l.heads[j].wq = src.heads[j].wq.clone();
            l.heads[j].wk = src.heads[j].wk.clone();
            l.heads[j].wv = src.heads[j].wv.clone();
            l.heads[j].wo = src.heads[j].wo.clone();
        }
        l.ln2_gain = src.ln2_gain.clone();
        l.ln2_bias = src.ln2_bias.clone();
        l.mlp_w_in = src.mlp_w_in.clone();
        l.mlp_b_in = src.mlp_b_in.clone();
        l.mlp_w_out = src.mlp_w_out.clone();
        l.mlp_b_out = src.mlp_b_out.clone();
    }
    copy.final_ln_gain = state.final_ln_gain.clone();
    copy.final_ln_bias = state.final_ln_bias.clone();
    copy.unembed = state.unembed.clone();
    return copy;
}

ModelState model_from_config(const json& model_cfg, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.layers = model_cfg.value("layers", 4);
    cfg.heads = model_cfg.value("heads", 8);
    cfg.model_dim = model_cfg.value("model_dim", 64);
    cfg.mlp_hidden = model_cfg.value("mlp_hidden", 4 * cfg.model_dim);
    cfg.max_seq = model_cfg.value("max_seq", 48);
    cfg.layernorm_eps = model_cfg.value("layernorm_eps", 1e-5);
    cfg.nonlinearity = model_cfg.value("nonlinearity", std::string("gelu"));
    cfg.vocab = model_cfg.value("vocab", Vocabulary::builtin().size());
    return init_model(cfg, seed);
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.lr = j.value("lr", cfg.lr);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.optimizer = j.value("optimizer", cfg.optimizer);
    cfg.warmup_ratio = j.value("warmup_ratio", cfg.warmup_ratio);
    cfg.cosine_decay = j.value("cosine_decay", cfg.cosine_decay);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.loss_positions = j.value("loss_positions", cfg.loss_positions);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.early_stop_accuracy = j.value("early_stop_accuracy", cfg.early_stop_accuracy);
    cfg.validate();
    return cfg;
}

DatasetSpec dataset_spec_from_json(const json& j) {
    DatasetSpec spec;
    if (j.contains("operations")) {
        spec.operations.clear();
        for (const auto& s : j.at("operations")) spec.operations.push_back(op_from_name(s.get<std::string>()));
    }
    if (j.contains("families")) {
        spec.families.clear();
        for (const auto& s : j.at("families")) spec.families.push_back(family_from_name(s.get<std::string>()));
    }
    spec.count = j.value("count", spec.count);
    spec.range_lo = j.value("range_lo", spec.range_lo);
    spec.range_hi = j.value("range_hi", spec.range_hi);
    spec.single_token_answer = j.value("single_token_answer", spec.single_token_answer);
    spec.seed = j.value("seed", spec.seed);
    spec.val_fraction = j.value("val_fraction", spec.val_fraction);
    if (j.contains("holdout_families")) {
        for (const auto& s : j.at("holdout_families")) spec.holdout_families.push_back(family_from_name(s.get<std::string>()));
    }
    return spec;
}

json merge_config(json base, const json& overrides) {
    if (!overrides.is_object()) return base;
    for (const auto& [key, value] : overrides.items()) {
        if (value.is_object() && base.contains(key) && base[key].is_object()) {
            base[key] = merge_config(base[key], value);
        } else {
            base[key] = value;
        }
    }
    return base;
}

json default_suite_config(const std::string& suite) {
    if (suite == "sparsity" || suite == "knockout") {
        return json{
            {"seed", 7},
            {"jobs", 0},
            {"data",
             {{"operations", {"add"}}, {"families", {"equation", "statement", "qa"}}, {"count", 2000}, {"range_lo", 1},
              {"range_hi", 9}, {"single_token_answer", true}, {"seed", 7}, {"val_fraction", 0.12}}},
            {"model", {{"layers", 4}, {"heads", 8}, {"model_dim", 64}, {"mlp_hidden", 256}, {"max_seq", 32}}},
            {"train",
             {{"lr", 0.0025}, {"batch_size", 32}, {"steps", 3000}, {"optimizer", "adam"}, {"warmup_ratio", 0.03},
              {"weight_decay", 0.01}, {"seed", 7}, {"loss_positions", "answer"}, {"eval_every", 50},
              {"early_stop_accuracy", 0.995}}},
            {"patch", {{"mode", "through-mlp"}, {"pairs", 48}, {"tau", 0.05}}},
            {"knockout", {{"random_seeds", {1, 2, 3, 4, 5}}}},
        };
    }
    if (suite == "transfer") {
        json cfg = default_suite_config("sparsity");
        cfg["transfer"] = json{{"identify_family", "equation"}, {"eval_family", "qa"}, {"random_seeds", {1, 2, 3, 4, 5}}};
        return cfg;
    }
    if (suite == "precise-vs-full") {
        return json{
            {"seed", 11},
            {"jobs", 0},
            {"data_pretrain",
             {{"operations", {"add", "sub"}}, {"families", {"equation", "statement", "qa"}}, {"count", 3000}, {"range_lo", 1},
              {"range_hi", 9}, {"single_token_answer", true}, {"seed", 11}, {"val_fraction", 0.12}}},
            {"data_finetune",
             {{"operations", {"mul"}}, {"families", {"equation", "statement", "qa"}}, {"count", 1500}, {"range_lo", 1},
              {"range_hi", 9}, {"single_token_answer", true}, {"seed", 12}, {"val_fraction", 0.12}}},
            {"model", {{"layers", 4}, {"heads", 8}, {"model_dim", 64}, {"mlp_hidden", 256}, {"max_seq", 32}}},
            {"pretrain",
             {{"lr", 0.0025}, {"batch_size", 32}, {"steps", 3500}, {"optimizer", "adam"}, {"warmup_ratio", 0.03},
              {"weight_decay", 0.01}, {"seed", 11}, {"loss_positions", "answer"}, {"eval_every", 50},
              {"early_stop_accuracy", 0.995}}},
            {"patch", {{"mode", "through-mlp"}, {"pairs", 48}, {"tau", 0.05}, {"top_k_heads", 12}, {"top_k_mlps", 2}}},
            {"sft",
             {{"lr", 0.001}, {"batch_size", 32}, {"steps", 500}, {"optimizer", "adam"}, {"warmup_ratio", 0.05},
              {"weight_decay", 0.0}, {"seed", 13}, {"loss_positions", "answer"}, {"eval_every", 0}}},
        };
    }
    throw config_error("unknown suite '" + suite + "' (expected sparsity|knockout|transfer|precise-vs-full)");
}

namespace {

struct SuiteContext {
    json config;
    fs::path out;
    int jobs = 1;
    json measured = json::object();
    std::vector<CheckResult> checks;

    void check(const std::string& name, bool pass, const std::string& detail, bool timing = false) {
        checks.push_back({name, pass, detail, timing});
    }
};

// Trains from scratch or reuses config["pretrained_checkpoint"] when set.
ModelState obtain_model(SuiteContext& ctx, const Dataset& data, const char* train_key) {
    if (ctx.config.contains("pretrained_checkpoint")) {
        const std::string path = ctx.config.at("pretrained_checkpoint").get<std::string>();
        ModelState st = load_checkpoint(path);
        ctx.measured["pretrain_accuracy"] = evaluate_accuracy(st, data.split(data.val_idx), ctx.jobs);
        return st;
    }
    ModelState st = model_from_config(ctx.config.at("model"), ctx.config.value("seed", 0));
    const TrainConfig tc = train_config_from_json(ctx.config.at(train_key));
    const TrainReport report = pretrain(st, data, tc);
    write_train_report(report, ctx.out / "train");
    save_checkpoint(st, ctx.out / "model.ckpt");
    ctx.measured["pretrain_accuracy"] = report.final_accuracy;
    return st;
}

std::vector<const PromptPair*> sweep_pairs(const ModelState& st, const Dataset& data, int limit, int jobs) {
    auto all = data.split(data.train_idx);
    const auto val = data.split(data.val_idx);
    all.insert(all.end(), val.begin(), val.end());
    auto correct = filter_correct(st, all, jobs);
    // unique by sentence, deterministic order
    std::vector<const PromptPair*> unique;
    std::vector<std::string> seen;
    for (const PromptPair* p : correct) {
        std::string key;
        for (int t : p->ref_ids) key += std::to_string(t) + ",";
        if (std::find(seen.begin(), seen.end(), key) == seen.end()) {
            seen.push_back(key);
            unique.push_back(p);
        }
        if (limit > 0 && static_cast<int>(unique.size()) >= limit) break;
    }
    return unique;
}

void write_effect_artifacts(const SuiteContext& ctx, const EffectMap& effects, const ModelConfig& cfg) {
    write_text(ctx.out / "effects.csv", effect_map_csv(effects));
    write_text(ctx.out / "effects.json", effect_map_json(effects).dump(2) + "\n");
    write_text(ctx.out / "heatmap.svg", heatmap_svg(effects, cfg));
}

double mean_of_values(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<NodeId> random_head_set(const ModelConfig& cfg, std::size_t k, std::uint64_t seed) {
    auto heads = all_heads(cfg);
    Rng rng(seed ^ 0x51ab9ce1ull);
    rng.shuffle(heads);
    heads.resize(std::min(k, heads.size()));
    return heads;
}

void run_sparsity(SuiteContext& ctx) {
    const Dataset data = build_dataset(dataset_spec_from_json(ctx.config.at("data")));
    write_dataset(data, ctx.out / "dataset");

    ModelState st = obtain_model(ctx, data, "train");
    const double pre_acc = ctx.measured["pretrain_accuracy"].get<double>();
    ctx.check("pretrain_heldout_accuracy", pre_acc >= 0.95,
              "held-out accuracy " + fmt_double(pre_acc) + " (need >= 0.95)");

    const json& patch_cfg = ctx.config.at("patch");
    const auto pairs = sweep_pairs(st, data, patch_cfg.value("pairs", 48), ctx.jobs);
    SweepOptions sopts;
    sopts.mode = patch_mode_from_name(patch_cfg.value("mode", std::string("through-mlp")));
    sopts.jobs = ctx.jobs;
    const EffectMap effects = path_patch_sweep(st, pairs, sopts);
    write_effect_artifacts(ctx, effects, st.config);

    const double tau = patch_cfg.value("tau", 0.05);
    const KeySelection sel = select_key(effects, tau);
    write_text(ctx.out / "selection.json", selection_json(sel).dump(2) + "\n");

    const int total_heads = st.config.layers * st.config.heads;
    const auto key_heads = sel.head_ids();
    ctx.measured["key_head_count"] = key_heads.size();
    ctx.measured["total_heads"] = total_heads;
    ctx.check("key_heads_sparse",
              !key_heads.empty() && key_heads.size() <= static_cast<std::size_t>(total_heads) / 5,
              std::to_string(key_heads.size()) + " key heads of " + std::to_string(total_heads) + " (need 1..20%)");

    // knockout evaluation on the correctly-predicted unique sentences
    const auto eval_pairs = sweep_pairs(st, data, 0, ctx.jobs);
    const double baseline = mean_ablate(st, {}, eval_pairs, eval_pairs, ctx.jobs);
    const double key_acc = mean_ablate(st, key_heads, eval_pairs, eval_pairs, ctx.jobs);
    const double key_drop = baseline > 0 ? (baseline - key_acc) / baseline : 0.0;
    ctx.measured["baseline_accuracy"] = baseline;
    ctx.measured["key_knockout_accuracy"] = key_acc;
    ctx.measured["key_relative_drop"] = key_drop;
    ctx.check("key_knockout_drop", key_drop >= 0.5,
              "relative drop " + fmt_double(key_drop) + " after ablating key heads (need >= 0.5)");

    std::vector<double> random_drops;
    for (const auto& seed : ctx.config.at("knockout").at("random_seeds")) {
        const auto random_set = random_head_set(st.config, key_heads.size(), seed.get<std::uint64_t>());
        const double acc = mean_ablate(st, random_set, eval_pairs, eval_pairs, ctx.jobs);
        random_drops.push_back(baseline > 0 ? (baseline - acc) / baseline : 0.0);
    }
    const double random_drop = mean_of_values(random_drops);
    ctx.measured["random_relative_drop_mean"] = random_drop;
    ctx.measured["random_relative_drops"] = random_drops;
    ctx.check("random_knockout_small", random_drop <= 0.10,
              "mean relative drop " + fmt_double(random_drop) + " over random head sets (need <= 0.10)");
}

void run_knockout(SuiteContext& ctx) {
    const Dataset data = build_dataset(dataset_spec_from_json(ctx.config.at("data")));
    write_dataset(data, ctx.out / "dataset");
    ModelState st = obtain_model(ctx, data, "train");

    const json& patch_cfg = ctx.config.at("patch");
    const auto pairs = sweep_pairs(st, data, patch_cfg.value("pairs", 48), ctx.jobs);
    SweepOptions sopts;
    sopts.mode = patch_mode_from_name(patch_cfg.value("mode", std::string("through-mlp")));
    sopts.jobs = ctx.jobs;
    const EffectMap effects = path_patch_sweep(st, pairs, sopts);
    write_effect_artifacts(ctx, effects, st.config);
    const KeySelection sel = select_key(effects, patch_cfg.value("tau", 0.05));
    write_text(ctx.out / "selection.json", selection_json(sel).dump(2) + "\n");

    const auto eval_pairs = sweep_pairs(st, data, 0, ctx.jobs);
    const int k_max = ctx.config.at("knockout").value("k_max", st.config.layers * st.config.heads / 2);
    const std::uint64_t rseed = ctx.config.at("knockout").value("seed", 1);
    const KnockoutCurve by_effect = knockout_curve(st, effects, "effect", k_max, rseed, eval_pairs, eval_pairs, ctx.jobs);
    const KnockoutCurve by_random = knockout_curve(st, effects, "random", k_max, rseed, eval_pairs, eval_pairs, ctx.jobs);
    write_text(ctx.out / "knockout_effect.csv", knockout_csv(by_effect));
    write_text(ctx.out / "knockout_random.csv", knockout_csv(by_random));
    write_text(ctx.out / "knockout.svg",
               line_chart_svg("accuracy after knocking out top-k heads",
                              {{"effect-rank", by_effect.accuracy}, {"random-rank", by_random.accuracy}}));

    const double baseline = by_effect.accuracy.at(0);
    const int small_k = std::max(1, st.config.layers * st.config.heads / 20);  // 5% of heads
    double max_random_dev = 0.0;
    for (int k = 0; k <= std::min(small_k, k_max); ++k) {
        max_random_dev = std::max(max_random_dev, baseline - by_random.accuracy[static_cast<std::size_t>(k)]);
    }
    ctx.measured["baseline_accuracy"] = baseline;
    ctx.measured["random_small_k_deviation"] = max_random_dev;
    ctx.check("random_rank_stable", max_random_dev <= 0.05,
              "random-rank deviation " + fmt_double(max_random_dev) + " for k <= 5% of heads (need <= 0.05)");

    const std::size_t key_k = std::min<std::size_t>(sel.heads.size(), static_cast<std::size_t>(k_max));
    const double effect_acc = by_effect.accuracy.at(key_k);
    const double drop = baseline > 0 ? (baseline - effect_acc) / baseline : 0.0;
    ctx.measured["effect_rank_drop_at_key_k"] = drop;
    ctx.check("effect_rank_sharp_drop", drop >= 0.5,
              "effect-rank relative drop " + fmt_double(drop) + " at k=" + std::to_string(key_k) + " (need >= 0.5)");
}

void run_transfer(SuiteContext& ctx) {
    const Dataset data = build_dataset(dataset_spec_from_json(ctx.config.at("data")));
    write_dataset(data, ctx.out / "dataset");
    ModelState st = obtain_model(ctx, data, "train");

    const json& tcfg = ctx.config.at("transfer");
    const Family identify_family = family_from_name(tcfg.value("identify_family", std::string("equation")));
    const Family eval_family = family_from_name(tcfg.value("eval_family", std::string("qa")));
    if (identify_family == eval_family) throw config_error("transfer suite: families must be disjoint");

    auto family_pairs = [&](Family fam) {
        std::vector<const PromptPair*> out;
        const auto templates = builtin_templates();
        for (const PromptPair& p : data.pairs) {
            for (const Template& t : templates) {
                if (t.id == p.template_id && t.family == fam) {
                    out.push_back(&p);
                    break;
                }
            }
        }
        return out;
    };

    const auto identify_all = filter_correct(st, family_pairs(identify_family), ctx.jobs);
    const auto eval_all = filter_correct(st, family_pairs(eval_family), ctx.jobs);
    if (identify_all.empty() || eval_all.empty()) {
        throw data_error("transfer suite: no correctly-predicted pairs in one of the families");
    }

    SweepOptions sopts;
    sopts.mode = patch_mode_from_name(ctx.config.at("patch").value("mode", std::string("through-mlp")));
    sopts.jobs = ctx.jobs;
    const EffectMap effects = path_patch_sweep(st, identify_all, sopts);
    write_effect_artifacts(ctx, effects, st.config);
    const KeySelection sel = select_key(effects, ctx.config.at("patch").value("tau", 0.05));
    write_text(ctx.out / "selection.json", selection_json(sel).dump(2) + "\n");
    const auto key_heads = sel.head_ids();
    if (key_heads.empty()) {
        ctx.check("transfer_drop_ratio", false, "no key heads found on the identification family");
        return;
    }

    const TransferResult res = transfer_knockout(st, key_heads, identify_all, eval_all, ctx.jobs);
    std::vector<double> random_drops;
    for (const auto& seed : tcfg.at("random_seeds")) {
        const auto random_set = random_head_set(st.config, key_heads.size(), seed.get<std::uint64_t>());
        const TransferResult r = transfer_knockout(st, random_set, identify_all, eval_all, ctx.jobs);
        random_drops.push_back(r.relative_drop());
    }
    const double random_drop = mean_of_values(random_drops);

    ctx.measured["transfer_baseline"] = res.baseline;
    ctx.measured["transfer_knocked"] = res.knocked;
    ctx.measured["transfer_relative_drop"] = res.relative_drop();
    ctx.measured["transfer_random_drop_mean"] = random_drop;
    json jr = json::object();
    jr["baseline"] = res.baseline;
    jr["knocked"] = res.knocked;
    jr["relative_drop"] = res.relative_drop();
    jr["random_drops"] = random_drops;
    jr["key_heads"] = json::array();
    for (const NodeId& h : key_heads) jr["key_heads"].push_back(h.str());
    write_text(ctx.out / "transfer.json", jr.dump(2) + "\n");

    const bool pass = res.relative_drop() >= 3.0 * std::max(random_drop, 0.0) && res.relative_drop() > 0.0;
    ctx.check("transfer_drop_ratio", pass,
              "cross-family relative drop " + fmt_double(res.relative_drop()) + " vs random " + fmt_double(random_drop) +
                  " (need >= 3x)");
}

void run_precise_vs_full(SuiteContext& ctx) {
    const Dataset pre_data = build_dataset(dataset_spec_from_json(ctx.config.at("data_pretrain")));
    const Dataset ft_data = build_dataset(dataset_spec_from_json(ctx.config.at("data_finetune")));
    write_dataset(pre_data, ctx.out / "dataset_pretrain");
    write_dataset(ft_data, ctx.out / "dataset_finetune");

    ModelState base = obtain_model(ctx, pre_data, "pretrain");
    const double pre_acc = ctx.measured["pretrain_accuracy"].get<double>();
    ctx.check("pretrain_heldout_accuracy", pre_acc >= 0.95, "held-out accuracy " + fmt_double(pre_acc) + " (need >= 0.95)");

    const auto old_eval = pre_data.split(pre_data.val_idx);
    const auto new_eval = ft_data.split(ft_data.val_idx);
    const double base_old = evaluate_accuracy(base, old_eval, ctx.jobs);
    const double base_new = evaluate_accuracy(base, new_eval, ctx.jobs);

    // identify on what the model already does well
    const json& patch_cfg = ctx.config.at("patch");
    const auto pairs = sweep_pairs(base, pre_data, patch_cfg.value("pairs", 48), ctx.jobs);
    SweepOptions sopts;
    sopts.mode = patch_mode_from_name(patch_cfg.value("mode", std::string("through-mlp")));
    sopts.jobs = ctx.jobs;
    const EffectMap effects = path_patch_sweep(base, pairs, sopts);
    write_effect_artifacts(ctx, effects, base.config);

    // mask: top-k heads + top MLPs by effect
    KeySelection ranked = select_key(effects, 1e-9);  // effectively: all answer-supporting nodes, strongest first
    const int k_heads = patch_cfg.value("top_k_heads", 12);
    const int k_mlps = patch_cfg.value("top_k_mlps", 2);
    TuneMask mask;
    for (const auto& e : ranked.heads) {
        if (static_cast<int>(mask.heads.size()) < k_heads) mask.heads.push_back(e.node);
    }
    for (const auto& e : ranked.mlps) {
        if (static_cast<int>(mask.mlp_layers.size()) < k_mlps) mask.mlp_layers.push_back(e.node.layer);
    }
    KeySelection mask_sel;
    mask_sel.tau = patch_cfg.value("tau", 0.05);
    mask_sel.top_k = k_heads + k_mlps;
    for (const auto& e : ranked.heads) {
        if (static_cast<int>(mask_sel.heads.size()) < k_heads) mask_sel.heads.push_back(e);
    }
    for (const auto& e : ranked.mlps) {
        if (static_cast<int>(mask_sel.mlps.size()) < k_mlps) mask_sel.mlps.push_back(e);
    }
    mask_sel.effect_map_hash = select_key(effects, 1e-9).effect_map_hash;
    write_text(ctx.out / "selection.json", selection_json(mask_sel).dump(2) + "\n");

    const TrainConfig sft_cfg = train_config_from_json(ctx.config.at("sft"));

    ModelState precise_model = clone_model(base);
    const TrainReport precise_report = precise_sft(precise_model, ft_data, mask, sft_cfg);
    write_train_report(precise_report, ctx.out / "train_precise");
    save_checkpoint(precise_model, ctx.out / "model_precise.ckpt");

    ModelState full_model = clone_model(base);
    const TrainReport full_report = full_sft(full_model, ft_data, sft_cfg);
    write_train_report(full_report, ctx.out / "train_full");
    save_checkpoint(full_model, ctx.out / "model_full.ckpt");

    const double precise_new = evaluate_accuracy(precise_model, new_eval, ctx.jobs);
    const double full_new = evaluate_accuracy(full_model, new_eval, ctx.jobs);
    const double precise_old = evaluate_accuracy(precise_model, old_eval, ctx.jobs);
    const double full_old = evaluate_accuracy(full_model, old_eval, ctx.jobs);

    const double precise_gain = precise_new - base_new;
    const double full_gain = full_new - base_new;
    const double precise_deg = std::max(0.0, base_old - precise_old);
    const double full_deg = std::max(0.0, base_old - full_old);

    ctx.measured["base_old_task_accuracy"] = base_old;
    ctx.measured["base_new_task_accuracy"] = base_new;
    ctx.measured["precise_new_task_accuracy"] = precise_new;
    ctx.measured["full_new_task_accuracy"] = full_new;
    ctx.measured["precise_old_task_accuracy"] = precise_old;
    ctx.measured["full_old_task_accuracy"] = full_old;
    ctx.measured["precise_tuned_params"] = precise_report.tuned_params;
    ctx.measured["full_tuned_params"] = full_report.tuned_params;

    ctx.check("precise_gain_competitive", full_gain > 0 && precise_gain >= 0.8 * full_gain,
              "new-task gain " + fmt_double(precise_gain) + " vs full " + fmt_double(full_gain) + " (need >= 80%)");
    ctx.check("precise_preserves_old_task", precise_deg <= 0.5 * full_deg,
              "old-task degradation " + fmt_double(precise_deg) + " vs full " + fmt_double(full_deg) + " (need <= half)");

    const double speed_ratio = full_report.samples_per_sec > 0 ? precise_report.samples_per_sec / full_report.samples_per_sec : 0.0;
    json timing{{"precise_samples_per_sec", precise_report.samples_per_sec},
                {"full_samples_per_sec", full_report.samples_per_sec},
                {"speed_ratio", speed_ratio}};
    write_text(ctx.out / "timing.json", timing.dump(2) + "\n");
    ctx.check("precise_trains_faster", speed_ratio >= 2.0,
              "samples/sec ratio " + fmt_double(speed_ratio) + " (need >= 2.0)", /*timing=*/true);
}

}  // namespace

SuiteOutcome run_suite(const std::string& suite, const json& config, const fs::path& outdir) {
    SuiteContext ctx;
    ctx.config = merge_config(default_suite_config(suite), config);
    ctx.out = outdir;
    ctx.jobs = resolve_jobs(ctx.config.value("jobs", 0));
    fs::create_directories(ctx.out);

    write_text(ctx.out / "manifest.json", run_manifest("reproduce:" + suite, ctx.config, {}).dump(2) + "\n");

    if (suite == "sparsity") {
        run_sparsity(ctx);
    } else if (suite == "knockout") {
        run_knockout(ctx);
    } else if (suite == "transfer") {
        run_transfer(ctx);
    } else if (suite == "precise-vs-full") {
        run_precise_vs_full(ctx);
    } else {
        throw config_error("unknown suite '" + suite + "'");
    }

    SuiteOutcome outcome;
    outcome.suite = suite;
    outcome.checks = ctx.checks;
    outcome.measured = ctx.measured;
    outcome.outdir = ctx.out;

    json results{{"suite", suite}, {"measured", ctx.measured}, {"checks", json::array()}};
    for (const CheckResult& c : ctx.checks) {
        if (c.timing_dependent) continue;  // wall-clock checks live in timing.json
        results["checks"].push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    }
    write_text(ctx.out / "results.json", results.dump(2) + "\n");
    return outcome;
}

}  // namespace calclab
