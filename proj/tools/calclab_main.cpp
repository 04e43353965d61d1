// calclab: train a small arithmetic transformer, locate the heads/MLPs that
// carry the calculation, probe what they do, and fine-tune just those parts.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "calclab/checkpoint.hpp"
#include "calclab/errors.hpp"
#include "calclab/hash.hpp"
#include "calclab/patching.hpp"
#include "calclab/pipeline.hpp"
#include "calclab/probe.hpp"
#include "calclab/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace calclab;

namespace {

json g_file_config = json::object();  // per-subcommand sections from --config

json section(const std::string& name) {
    return g_file_config.contains(name) ? g_file_config.at(name) : json::object();
}

// flags win over the config file; config wins over built-in defaults
template <typename T>
void fill(const CLI::Option* opt, T& value, const json& sec, const std::string& key) {
    if (opt->count() == 0 && sec.contains(key)) value = sec.at(key).get<T>();
}

fs::path resolve_out(const CLI::Option* out_opt, std::string out_flag, const std::string& subcommand) {
    if (out_opt->count() > 0 || !out_flag.empty()) return out_flag;
    if (const char* root = std::getenv("CALCLAB_OUT_ROOT")) return fs::path(root) / subcommand;
    throw usage_error("missing --out (or set CALCLAB_OUT_ROOT)");
}

void write_manifest(const fs::path& out, const std::string& subcommand, const json& config,
                    const std::vector<std::pair<std::string, std::string>>& inputs) {
    write_text(out / "manifest.json", run_manifest(subcommand, config, inputs).dump(2) + "\n");
}

std::vector<Op> parse_ops(const std::string& csv) {
    std::vector<Op> ops;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) ops.push_back(op_from_name(item));
    }
    if (ops.empty()) throw usage_error("--ops needs at least one of add,sub,mul,div");
    return ops;
}

std::vector<Family> parse_families(const std::string& csv) {
    std::vector<Family> fams;
    if (csv == "all") {
        return {Family::Equation, Family::Statement, Family::QuestionAnswer, Family::TimeSpan, Family::ObjectAccumulation};
    }
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) fams.push_back(family_from_name(item));
    }
    if (fams.empty()) throw usage_error("--families needs a list or 'all'");
    return fams;
}

json dataset_spec_json(const DatasetSpec& spec) {
    json ops = json::array(), fams = json::array(), hold = json::array();
    for (Op op : spec.operations) ops.push_back(op_name(op));
    for (Family f : spec.families) fams.push_back(family_name(f));
    for (Family f : spec.holdout_families) hold.push_back(family_name(f));
    return json{{"operations", ops},         {"families", fams},
                {"count", spec.count},       {"range_lo", spec.range_lo},
                {"range_hi", spec.range_hi}, {"single_token_answer", spec.single_token_answer},
                {"seed", spec.seed},         {"val_fraction", spec.val_fraction},
                {"holdout_families", hold}};
}

struct TrainFlags {
    double lr = 2.5e-3;
    int batch = 32, steps = 3000, eval_every = 50;
    std::string optimizer = "adam", loss_positions = "answer";
    double warmup = 0.03, weight_decay = 0.01, early_stop = 0.0;
    std::uint64_t seed = 0;
    CLI::App* cmd = nullptr;

    void add_to(CLI::App* c) {
        cmd = c;
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--batch", batch, "batch size");
        cmd->add_option("--steps", steps, "optimization steps");
        cmd->add_option("--optimizer", optimizer, "adam|sgd");
        cmd->add_option("--warmup", warmup, "warmup ratio");
        cmd->add_option("--weight-decay", weight_decay, "decoupled weight decay");
        cmd->add_option("--seed", seed, "training seed");
        cmd->add_option("--loss-positions", loss_positions, "answer|all");
        cmd->add_option("--eval-every", eval_every, "evaluation cadence in steps");
        cmd->add_option("--early-stop", early_stop, "stop at this held-out accuracy (0 = off)");
    }

    void apply_config(const json& sec) {
        fill(cmd->get_option("--lr"), lr, sec, "lr");
        fill(cmd->get_option("--batch"), batch, sec, "batch_size");
        fill(cmd->get_option("--steps"), steps, sec, "steps");
        fill(cmd->get_option("--optimizer"), optimizer, sec, "optimizer");
        fill(cmd->get_option("--warmup"), warmup, sec, "warmup_ratio");
        fill(cmd->get_option("--weight-decay"), weight_decay, sec, "weight_decay");
        fill(cmd->get_option("--seed"), seed, sec, "seed");
        fill(cmd->get_option("--loss-positions"), loss_positions, sec, "loss_positions");
        fill(cmd->get_option("--eval-every"), eval_every, sec, "eval_every");
        fill(cmd->get_option("--early-stop"), early_stop, sec, "early_stop_accuracy");
    }

    TrainConfig to_config() const {
        TrainConfig cfg;
        cfg.lr = lr;
        cfg.batch_size = batch;
        cfg.steps = steps;
        cfg.optimizer = optimizer;
        cfg.warmup_ratio = warmup;
        cfg.weight_decay = weight_decay;
        cfg.seed = seed;
        cfg.loss_positions = loss_positions;
        cfg.eval_every = eval_every;
        cfg.early_stop_accuracy = early_stop;
        cfg.validate();
        return cfg;
    }

    json to_json() const {
        return json{{"lr", lr},         {"batch_size", batch},           {"steps", steps},
                    {"optimizer", optimizer}, {"warmup_ratio", warmup},  {"weight_decay", weight_decay},
                    {"seed", seed},     {"loss_positions", loss_positions}, {"eval_every", eval_every},
                    {"early_stop_accuracy", early_stop}};
    }
};

int run_cli(int argc, char** argv) {
    CLI::App app{"desk-scale arithmetic-circuit laboratory"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "top-level JSON config; flags override its per-subcommand sections");
    int jobs = 0;
    app.add_option("--jobs", jobs, "worker threads (0 = hardware)");

    // ---- gen-data ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate reference/counterfactual sentence pairs");
    std::string gd_ops = "add", gd_families = "equation,statement,qa", gd_out, gd_holdout;
    int gd_count = 1000, gd_range_lo = 1, gd_range_hi = 9;
    bool gd_single = true;
    std::uint64_t gd_seed = 0;
    double gd_val = 0.1;
    gen->add_option("--ops", gd_ops, "comma list of add,sub,mul,div");
    gen->add_option("--families", gd_families, "comma list or 'all'");
    gen->add_option("--count", gd_count, "number of samples");
    gen->add_option("--range-lo", gd_range_lo, "operand range low");
    gen->add_option("--range-hi", gd_range_hi, "operand range high");
    gen->add_option("--single-token-answer", gd_single, "keep only single-digit answers");
    gen->add_option("--seed", gd_seed, "generation seed");
    gen->add_option("--val-fraction", gd_val, "validation fraction");
    gen->add_option("--holdout-families", gd_holdout, "families routed to a held-out split");
    auto* gd_out_opt = gen->add_option("--out", gd_out, "output directory");

    // ---- train / finetune --------------------------------------------------
    auto* train = app.add_subcommand("train", "pretrain a model on a dataset");
    std::string tr_data, tr_out, tr_nonlin = "gelu";
    int tr_layers = 4, tr_heads = 8, tr_dim = 64, tr_hidden = 256, tr_maxseq = 32;
    std::uint64_t tr_model_seed = 1;
    TrainFlags tr_flags;
    train->add_option("--data", tr_data, "dataset directory")->required();
    auto* tr_out_opt = train->add_option("--out", tr_out, "output directory");
    train->add_option("--layers", tr_layers, "transformer layers");
    train->add_option("--heads", tr_heads, "heads per layer");
    train->add_option("--model-dim", tr_dim, "residual width");
    train->add_option("--mlp-hidden", tr_hidden, "MLP hidden width");
    train->add_option("--max-seq", tr_maxseq, "max sequence length");
    train->add_option("--nonlinearity", tr_nonlin, "gelu|silu");
    train->add_option("--model-seed", tr_model_seed, "weight init seed");
    tr_flags.add_to(train);

    auto* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint (full or precise)");
    std::string ft_mode = "precise", ft_mask, ft_model, ft_data, ft_out;
    bool ft_allow_empty = false;
    TrainFlags ft_flags;
    finetune->add_option("--mode", ft_mode, "full|precise");
    finetune->add_option("--mask", ft_mask, "selection.json with the heads/MLPs to tune");
    finetune->add_option("--model", ft_model, "input checkpoint")->required();
    finetune->add_option("--data", ft_data, "dataset directory")->required();
    finetune->add_flag("--allow-empty", ft_allow_empty, "allow an empty precise mask (no-op run)");
    auto* ft_out_opt = finetune->add_option("--out", ft_out, "output directory");
    ft_flags.add_to(finetune);

    // ---- patch / select / knockout ----------------------------------------
    auto* patch = app.add_subcommand("patch", "path-patching sweep over every head and MLP");
    std::string pt_model, pt_data, pt_mode = "through-mlp", pt_out;
    int pt_pairs = 48;
    bool pt_full_seq = false;
    patch->add_option("--model", pt_model, "checkpoint")->required();
    patch->add_option("--data", pt_data, "dataset directory")->required();
    patch->add_option("--mode", pt_mode, "direct|through-mlp");
    patch->add_option("--pairs", pt_pairs, "max prompt pairs to sweep (0 = all)");
    patch->add_flag("--full-seq", pt_full_seq, "patch at every position instead of END only");
    auto* pt_out_opt = patch->add_option("--out", pt_out, "output directory");

    auto* select = app.add_subcommand("select", "threshold an effect map into a key-component selection");
    std::string sl_effects, sl_out;
    double sl_tau = 0.05;
    int sl_top_k = 0;
    select->add_option("--effects", sl_effects, "effects.json from a sweep")->required();
    select->add_option("--tau", sl_tau, "selection threshold on the mean effect");
    select->add_option("--top-k", sl_top_k, "keep only the strongest k nodes (0 = all)");
    auto* sl_out_opt = select->add_option("--out", sl_out, "output directory");

    auto* knockout = app.add_subcommand("knockout", "cumulative mean-ablation curve");
    std::string ko_model, ko_data, ko_effects, ko_ordering = "effect", ko_out;
    int ko_kmax = -1;
    std::uint64_t ko_seed = 1;
    knockout->add_option("--model", ko_model, "checkpoint")->required();
    knockout->add_option("--data", ko_data, "dataset directory")->required();
    knockout->add_option("--effects", ko_effects, "effects.json from a sweep")->required();
    knockout->add_option("--ordering", ko_ordering, "effect|random");
    knockout->add_option("--k-max", ko_kmax, "max heads to knock out (-1 = half)");
    knockout->add_option("--seed", ko_seed, "shuffle seed for random ordering");
    auto* ko_out_opt = knockout->add_option("--out", ko_out, "output directory");

    // ---- probe -------------------------------------------------------------
    auto* probe = app.add_subcommand("probe", "attention / unembedding-space analyses");
    std::string pb_kind, pb_model, pb_data, pb_head, pb_prompt, pb_answer, pb_out;
    bool pb_all_samples = false, pb_raw_dot = false;
    int pb_samples = 200;
    probe->add_option("--kind", pb_kind, "attention|reception|generation|trajectory")->required();
    probe->add_option("--model", pb_model, "checkpoint")->required();
    probe->add_option("--data", pb_data, "dataset directory (attention/reception/generation)");
    probe->add_option("--head", pb_head, "head id like 1.3 (attention)");
    probe->add_option("--prompt", pb_prompt, "prompt text (trajectory)");
    probe->add_option("--answer", pb_answer, "expected answer token (trajectory)");
    probe->add_option("--samples", pb_samples, "max samples to probe");
    probe->add_flag("--include-all", pb_all_samples, "keep incorrectly-predicted samples too");
    probe->add_flag("--raw-dot", pb_raw_dot, "rank by left-normalized dot product instead of cosine");
    auto* pb_out_opt = probe->add_option("--out", pb_out, "output directory");

    // ---- audit / reproduce -------------------------------------------------
    auto* audit = app.add_subcommand("audit", "byte-level parameter diff between two checkpoints");
    std::string au_before, au_after, au_mask, au_out;
    audit->add_option("--before", au_before, "checkpoint before tuning")->required();
    audit->add_option("--after", au_after, "checkpoint after tuning")->required();
    audit->add_option("--mask", au_mask, "selection.json; verify zero diff outside it");
    auto* au_out_opt = audit->add_option("--out", au_out, "output directory");

    auto* reproduce = app.add_subcommand("reproduce", "run one pinned experiment suite end to end");
    std::string rp_suite, rp_out, rp_pretrained;
    reproduce->add_option("--suite", rp_suite, "sparsity|knockout|transfer|precise-vs-full")->required();
    reproduce->add_option("--pretrained", rp_pretrained, "reuse this checkpoint instead of pretraining");
    auto* rp_out_opt = reproduce->add_option("--out", rp_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (!config_path.empty()) {
        g_file_config = json::parse(read_text(config_path));
    }
    jobs = resolve_jobs(jobs);

    if (gen->parsed()) {
        const json sec = section("gen-data");
        fill(gen->get_option("--ops"), gd_ops, sec, "ops");
        fill(gen->get_option("--families"), gd_families, sec, "families");
        fill(gen->get_option("--count"), gd_count, sec, "count");
        fill(gen->get_option("--range-lo"), gd_range_lo, sec, "range_lo");
        fill(gen->get_option("--range-hi"), gd_range_hi, sec, "range_hi");
        fill(gen->get_option("--single-token-answer"), gd_single, sec, "single_token_answer");
        fill(gen->get_option("--seed"), gd_seed, sec, "seed");
        fill(gen->get_option("--val-fraction"), gd_val, sec, "val_fraction");

        DatasetSpec spec;
        spec.operations = parse_ops(gd_ops);
        spec.families = parse_families(gd_families);
        spec.count = gd_count;
        spec.range_lo = gd_range_lo;
        spec.range_hi = gd_range_hi;
        spec.single_token_answer = gd_single;
        spec.seed = gd_seed;
        spec.val_fraction = gd_val;
        if (!gd_holdout.empty()) spec.holdout_families = parse_families(gd_holdout);

        const fs::path out = resolve_out(gd_out_opt, gd_out, "gen-data");
        const Dataset ds = build_dataset(spec);
        write_dataset(ds, out);
        write_manifest(out, "gen-data", dataset_spec_json(spec), {{"dataset.jsonl", hash_file((out / "dataset.jsonl").string())}});
        std::cout << "wrote " << ds.pairs.size() << " pairs (" << ds.train_idx.size() << " train, " << ds.val_idx.size()
                  << " val, " << ds.heldout_idx.size() << " heldout) to " << out.string() << "\n";
        return 0;
    }

    if (train->parsed()) {
        tr_flags.apply_config(section("train"));
        const fs::path out = resolve_out(tr_out_opt, tr_out, "train");
        const Dataset ds = load_dataset(tr_data);
        ModelConfig mc;
        mc.layers = tr_layers;
        mc.heads = tr_heads;
        mc.model_dim = tr_dim;
        mc.mlp_hidden = tr_hidden;
        mc.max_seq = tr_maxseq;
        mc.nonlinearity = tr_nonlin;
        mc.vocab = Vocabulary::builtin().size();
        ModelState st = init_model(mc, tr_model_seed);
        const TrainConfig cfg = tr_flags.to_config();
        const TrainReport report = pretrain(st, ds, cfg);
        save_checkpoint(st, out / "model.ckpt");
        write_train_report(report, out);
        write_manifest(out, "train", tr_flags.to_json(), {{"dataset", hash_file((fs::path(tr_data) / "dataset.jsonl").string())}});
        std::cout << "final held-out accuracy " << fmt_double(report.final_accuracy) << " after " << report.steps_run
                  << " steps; tuned params " << report.tuned_params << "; samples/sec " << fmt_double(report.samples_per_sec)
                  << "\n";
        return 0;
    }

    if (finetune->parsed()) {
        ft_flags.apply_config(section("finetune"));
        const fs::path out = resolve_out(ft_out_opt, ft_out, "finetune");
        const Dataset ds = load_dataset(ft_data);
        ModelState st = load_checkpoint(ft_model);
        const TrainConfig cfg = ft_flags.to_config();
        TrainReport report;
        if (ft_mode == "full") {
            report = full_sft(st, ds, cfg);
        } else if (ft_mode == "precise") {
            TuneMask mask;
            if (!ft_mask.empty()) {
                const KeySelection sel = selection_from_json(json::parse(read_text(ft_mask)));
                mask = mask_from_selection(sel);
            }
            report = precise_sft(st, ds, mask, cfg, ft_allow_empty);
        } else {
            throw usage_error("--mode must be full or precise");
        }
        save_checkpoint(st, out / "model.ckpt");
        write_train_report(report, out);
        write_manifest(out, "finetune", ft_flags.to_json(),
                       {{"model", hash_file(ft_model)}, {"dataset", hash_file((fs::path(ft_data) / "dataset.jsonl").string())}});
        std::cout << "mode " << ft_mode << ": tuned " << report.tuned_params << " of " << report.total_params
                  << " params; final accuracy " << fmt_double(report.final_accuracy) << "; samples/sec "
                  << fmt_double(report.samples_per_sec) << "\n";
        return 0;
    }

    if (patch->parsed()) {
        const fs::path out = resolve_out(pt_out_opt, pt_out, "patch");
        const Dataset ds = load_dataset(pt_data);
        const ModelState st = load_checkpoint(pt_model);
        auto all = ds.split(ds.train_idx);
        const auto val = ds.split(ds.val_idx);
        all.insert(all.end(), val.begin(), val.end());
        auto correct = filter_correct(st, all, jobs);
        if (pt_pairs > 0 && static_cast<int>(correct.size()) > pt_pairs) correct.resize(static_cast<std::size_t>(pt_pairs));
        SweepOptions opts;
        opts.mode = patch_mode_from_name(pt_mode);
        opts.full_sequence = pt_full_seq;
        opts.jobs = jobs;
        const EffectMap effects = path_patch_sweep(st, correct, opts);
        write_text(out / "effects.csv", effect_map_csv(effects));
        write_text(out / "effects.json", effect_map_json(effects).dump(2) + "\n");
        write_text(out / "heatmap.svg", heatmap_svg(effects, st.config));
        write_manifest(out, "patch", json{{"mode", pt_mode}, {"pairs", pt_pairs}, {"full_seq", pt_full_seq}},
                       {{"model", hash_file(pt_model)}, {"dataset", hash_file((fs::path(pt_data) / "dataset.jsonl").string())}});
        std::cout << "swept " << effects.effects.size() << " nodes over " << effects.pairs_used << " pairs ("
                  << effects.pairs_skipped << " skipped) -> " << (out / "effects.csv").string() << "\n";
        return 0;
    }

    if (select->parsed()) {
        const fs::path out = resolve_out(sl_out_opt, sl_out, "select");
        const EffectMap effects = effect_map_from_json(json::parse(read_text(sl_effects)));
        const KeySelection sel = select_key(effects, sl_tau, sl_top_k);
        fs::create_directories(out);
        write_text(out / "selection.json", selection_json(sel).dump(2) + "\n");
        write_manifest(out, "select", json{{"tau", sl_tau}, {"top_k", sl_top_k}}, {{"effects", hash_file(sl_effects)}});
        std::cout << "selected " << sel.heads.size() << " heads and " << sel.mlps.size() << " MLPs at tau " << fmt_double(sl_tau)
                  << "\n";
        return 0;
    }

    if (knockout->parsed()) {
        const fs::path out = resolve_out(ko_out_opt, ko_out, "knockout");
        const Dataset ds = load_dataset(ko_data);
        const ModelState st = load_checkpoint(ko_model);
        const EffectMap effects = effect_map_from_json(json::parse(read_text(ko_effects)));
        auto all = ds.split(ds.train_idx);
        const auto val = ds.split(ds.val_idx);
        all.insert(all.end(), val.begin(), val.end());
        const auto eval_pairs = filter_correct(st, all, jobs);
        if (ko_kmax < 0) ko_kmax = st.config.layers * st.config.heads / 2;
        const KnockoutCurve curve = knockout_curve(st, effects, ko_ordering, ko_kmax, ko_seed, eval_pairs, eval_pairs, jobs);
        write_text(out / ("knockout_" + ko_ordering + ".csv"), knockout_csv(curve));
        write_text(out / ("knockout_" + ko_ordering + ".svg"),
                   line_chart_svg("accuracy after knocking out top-k heads (" + ko_ordering + ")", {{ko_ordering, curve.accuracy}}));
        write_manifest(out, "knockout", json{{"ordering", ko_ordering}, {"k_max", ko_kmax}, {"seed", ko_seed}},
                       {{"model", hash_file(ko_model)}, {"effects", hash_file(ko_effects)}});
        std::cout << "baseline " << fmt_double(curve.accuracy.front()) << ", after k=" << ko_kmax << ": "
                  << fmt_double(curve.accuracy.back()) << "\n";
        return 0;
    }

    if (probe->parsed()) {
        const fs::path out = resolve_out(pb_out_opt, pb_out, "probe");
        const ModelState st = load_checkpoint(pb_model);
        const auto& vocab = Vocabulary::builtin();
        fs::create_directories(out);

        auto probe_samples = [&]() {
            if (pb_data.empty()) throw usage_error("--data is required for this probe kind");
            const Dataset ds = load_dataset(pb_data);
            auto all = ds.split(ds.train_idx);
            const auto val = ds.split(ds.val_idx);
            all.insert(all.end(), val.begin(), val.end());
            if (pb_samples > 0 && static_cast<int>(all.size()) > pb_samples) all.resize(static_cast<std::size_t>(pb_samples));
            return std::make_pair(ds, all);
        };

        if (pb_kind == "attention") {
            if (pb_head.empty()) throw usage_error("--head is required for attention profiles");
            const NodeId head = NodeId::parse(pb_head[0] == 'h' ? pb_head : "h" + pb_head);
            auto [ds, samples] = probe_samples();
            const AttentionProfile profile = attention_profile(st, head, samples);
            write_text(out / "attention.csv", attention_profile_csv(profile));
            json j{{"head", profile.head.str()},         {"operand_a", profile.operand_a}, {"operand_b", profile.operand_b},
                   {"operator", profile.operator_token}, {"other", profile.other},         {"operand_combined", profile.operand_combined},
                   {"samples", profile.samples}};
            write_text(out / "attention.json", j.dump(2) + "\n");
            std::cout << "head " << profile.head.str() << ": A " << fmt_double(profile.operand_a) << ", B "
                      << fmt_double(profile.operand_b) << ", op " << fmt_double(profile.operator_token) << ", other "
                      << fmt_double(profile.other) << "\n";
        } else if (pb_kind == "reception" || pb_kind == "generation") {
            auto [ds, samples] = probe_samples();
            const ProbeSeries series = pb_kind == "reception" ? mlp_reception(st, samples, !pb_all_samples)
                                                              : mlp_generation(st, samples, !pb_all_samples);
            write_text(out / (pb_kind + ".csv"), probe_series_csv(series));
            write_text(out / (pb_kind + ".svg"),
                       line_chart_svg(pb_kind + " projections by layer",
                                      {{"A", series.a}, {"B", series.b}, {"C", series.c}, {"other", series.other}}));
            json j{{"a", series.a}, {"b", series.b}, {"c", series.c}, {"other", series.other},
                   {"flagged_layers", series.flagged}, {"samples", series.samples}};
            write_text(out / (pb_kind + ".json"), j.dump(2) + "\n");
            std::cout << pb_kind << " series over " << series.samples << " samples -> " << (out / (pb_kind + ".csv")).string()
                      << "\n";
        } else if (pb_kind == "trajectory") {
            if (pb_prompt.empty()) throw usage_error("--prompt is required for trajectories");
            std::vector<int> tokens{vocab.bos()};
            for (int t : vocab.tokenize(pb_prompt)) tokens.push_back(t);
            int answer = -1;
            if (!pb_answer.empty()) {
                answer = vocab.id(pb_answer);
            }
            TokenTrajectory traj = token_trajectory(st, tokens, answer < 0 ? 0 : answer, pb_raw_dot);
            if (answer < 0) {  // default: track the model's own prediction
                traj = token_trajectory(st, tokens, traj.predicted_token, pb_raw_dot);
            }
            write_text(out / "trajectory.csv", trajectory_csv(traj));
            write_text(out / "trajectory.json", trajectory_json(traj).dump(2) + "\n");
            std::vector<ChartSeries> digit_series(10);
            for (int d = 0; d < 10; ++d) {
                digit_series[static_cast<std::size_t>(d)].label = std::to_string(d);
                for (const auto& layer : traj.ranking) {
                    for (const auto& [tok, score] : layer) {
                        if (tok == vocab.digit_id(d)) digit_series[static_cast<std::size_t>(d)].y.push_back(score);
                    }
                }
            }
            write_text(out / "trajectory.svg", line_chart_svg("digit projections by layer", digit_series));
            std::cout << "predicted '" << vocab.token(traj.predicted_token) << "', answer stable from layer "
                      << traj.first_stable_layer << "\n";
        } else {
            throw usage_error("--kind must be attention|reception|generation|trajectory");
        }
        return 0;
    }

    if (audit->parsed()) {
        const ModelState before = load_checkpoint(au_before);
        const ModelState after = load_checkpoint(au_after);
        std::vector<std::string> masked_names;
        if (!au_mask.empty()) {
            const TuneMask mask = mask_from_selection(selection_from_json(json::parse(read_text(au_mask))));
            for (const NodeId& h : mask.heads) {
                const std::string prefix = "layer" + std::to_string(h.layer) + ".head" + std::to_string(h.head) + ".";
                for (const char* w : {"wq", "wk", "wv", "wo"}) masked_names.push_back(prefix + w);
            }
            for (int l : mask.mlp_layers) {
                const std::string prefix = "layer" + std::to_string(l) + ".mlp.";
                for (const char* w : {"w_in", "b_in", "w_out", "b_out"}) masked_names.push_back(prefix + w);
            }
        }
        json per_tensor = json::object();
        bool outside_clean = true;
        std::vector<std::pair<std::string, const Tensor*>> before_params;
        for_each_parameter(before, [&](const std::string& name, const Tensor& t) { before_params.emplace_back(name, &t); });
        std::size_t idx = 0;
        for_each_parameter(after, [&](const std::string& name, const Tensor& t) {
            const Tensor& old = *before_params[idx++].second;
            double max_abs = 0.0;
            bool identical = true;
            for (std::int64_t i = 0; i < t.numel(); ++i) {
                const double d = t.data()[static_cast<std::size_t>(i)] - old.data()[static_cast<std::size_t>(i)];
                max_abs = std::max(max_abs, std::abs(d));
                identical = identical && t.data()[static_cast<std::size_t>(i)] == old.data()[static_cast<std::size_t>(i)];
            }
            per_tensor[name] = max_abs;
            const bool masked = std::find(masked_names.begin(), masked_names.end(), name) != masked_names.end();
            if (!au_mask.empty() && !masked && !identical) outside_clean = false;
        });
        json result{{"per_tensor_max_abs_delta", per_tensor}};
        if (!au_mask.empty()) result["zero_outside_mask"] = outside_clean;
        if (au_out_opt->count() > 0) {
            fs::create_directories(au_out);
            write_text(fs::path(au_out) / "audit.json", result.dump(2) + "\n");
        }
        std::cout << result.dump(2) << "\n";
        if (!au_mask.empty() && !outside_clean) {
            std::cerr << "audit: parameters changed outside the mask\n";
            return 2;
        }
        return 0;
    }

    if (reproduce->parsed()) {
        const fs::path out = resolve_out(rp_out_opt, rp_out, "reproduce-" + rp_suite);
        json overrides = section("reproduce");
        if (jobs > 0) overrides["jobs"] = jobs;
        if (!rp_pretrained.empty()) overrides["pretrained_checkpoint"] = rp_pretrained;
        const SuiteOutcome outcome = run_suite(rp_suite, overrides, out);
        for (const CheckResult& c : outcome.checks) {
            std::cout << (c.pass ? "PASS" : "FAIL") << " " << c.name << ": " << c.detail << "\n";
        }
        std::cout << "artifacts in " << outcome.outdir.string() << "\n";
        return outcome.all_pass() ? 0 : 3;
    }

    throw usage_error("no subcommand given");
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
