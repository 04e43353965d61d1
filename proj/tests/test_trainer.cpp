#include <doctest.h>

#include <cmath>

#include "calclab/ops.hpp"
#include "calclab/pipeline.hpp"
#include "calclab/trainer.hpp"
#include "support/test_models.hpp"

using namespace calclab;

namespace {

Dataset tiny_dataset(int count, std::uint64_t seed, double val_fraction = 0.0) {
    DatasetSpec spec;
    spec.operations = {Op::Add};
    spec.families = {Family::Equation, Family::Statement};
    spec.count = count;
    spec.seed = seed;
    spec.val_fraction = val_fraction;
    return build_dataset(spec);
}

ModelState small_model(std::uint64_t seed = 1, int layers = 1, int heads = 2, int dim = 32) {
    ModelConfig cfg;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.model_dim = dim;
    cfg.mlp_hidden = dim * 2;
    cfg.vocab = Vocabulary::builtin().size();
    cfg.max_seq = 32;
    return init_model(cfg, seed);
}

std::vector<std::pair<std::string, std::vector<double>>> dump_params(const ModelState& st) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for_each_parameter(st, [&](const std::string& n, const Tensor& t) {
        out.emplace_back(n, std::vector<double>(t.data().begin(), t.data().end()));
    });
    return out;
}

}  // namespace

TEST_CASE("capacity sanity: a 1-layer model memorizes ten sentences") {
    Dataset data = tiny_dataset(10, 3);
    ModelState st = small_model(2);
    TrainConfig cfg;
    cfg.lr = 4e-3;
    cfg.batch_size = 10;
    cfg.steps = 400;
    cfg.seed = 4;
    cfg.eval_every = 25;
    cfg.early_stop_accuracy = 1.0;
    const TrainReport report = pretrain(st, data, cfg);
    CHECK(report.final_accuracy == 1.0);  // train split doubles as eval here
}

TEST_CASE("zero iterations leave the state unchanged") {
    Dataset data = tiny_dataset(20, 5);
    ModelState st = small_model(7);
    const auto before = dump_params(st);
    TrainConfig cfg;
    cfg.steps = 0;
    const TrainReport report = pretrain(st, data, cfg);
    CHECK(report.steps_run == 0);
    CHECK(dump_params(st) == before);
}

TEST_CASE("zero learning rate changes nothing") {
    Dataset data = tiny_dataset(20, 6);
    ModelState st = small_model(8);
    const auto before = dump_params(st);
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.steps = 1;
    cfg.optimizer = "sgd";
    full_sft(st, data, cfg);
    CHECK(dump_params(st) == before);
}

TEST_CASE("same seed gives identical runs") {
    Dataset data = tiny_dataset(30, 7);
    TrainConfig cfg;
    cfg.lr = 2e-3;
    cfg.steps = 25;
    cfg.batch_size = 8;
    cfg.seed = 99;
    cfg.eval_every = 10;

    ModelState a = small_model(11);
    ModelState b = small_model(11);
    const TrainReport ra = full_sft(a, data, cfg);
    const TrainReport rb = full_sft(b, data, cfg);
    CHECK(ra.loss_curve == rb.loss_curve);
    CHECK(ra.accuracy_curve == rb.accuracy_curve);
    CHECK(dump_params(a) == dump_params(b));
}

TEST_CASE("full fine-tuning reports every parameter as tuned") {
    Dataset data = tiny_dataset(10, 8);
    ModelState st = small_model(12);
    TrainConfig cfg;
    cfg.steps = 1;
    cfg.batch_size = 2;
    const TrainReport report = full_sft(st, data, cfg);
    CHECK(report.tuned_params == parameter_count(st));
    CHECK(report.tuned_params == report.total_params);
}

TEST_CASE("precise tuning: mask validation and the empty-mask contract") {
    Dataset data = tiny_dataset(10, 9);
    ModelState st = small_model(13);
    TrainConfig cfg;
    cfg.steps = 2;
    cfg.batch_size = 2;

    TuneMask empty;
    CHECK_THROWS_AS(precise_sft(st, data, empty, cfg), config_error);

    const auto before = dump_params(st);
    const TrainReport report = precise_sft(st, data, empty, cfg, /*allow_empty=*/true);
    CHECK(report.tuned_params == 0);
    CHECK(dump_params(st) == before);  // bit-identical

    TuneMask bad;
    bad.heads = {NodeId::attention(5, 0)};
    CHECK_THROWS_AS(precise_sft(st, data, bad, cfg), config_error);
}

TEST_CASE("precise tuning touches only the masked blocks") {
    Dataset data = tiny_dataset(40, 10);
    ModelState st = small_model(14, 2, 4, 32);
    TuneMask mask;
    mask.heads = {NodeId::attention(1, 0)};
    mask.mlp_layers = {1};
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.steps = 3;
    cfg.batch_size = 4;
    const auto before = dump_params(st);
    const TrainReport report = precise_sft(st, data, mask, cfg);
    const auto after = dump_params(st);

    const int d = 32, dh = 8, hid = 64;
    CHECK(report.tuned_params == 4 * d * dh + (d * hid + hid + hid * d + d));

    bool masked_changed = false;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const std::string& name = before[i].first;
        const bool masked = name.find("layer1.head0.") == 0 || name.find("layer1.mlp.") == 0;
        if (masked) {
            masked_changed = masked_changed || before[i].second != after[i].second;
        } else {
            CHECK(before[i].second == after[i].second);  // byte-for-byte untouched
        }
    }
    CHECK(masked_changed);
}

TEST_CASE("head gradient rescale is H divided by selected-per-layer") {
    // One plain-gradient-descent step on a single-sample batch must equal a
    // hand-computed update with the scaled learning rate.
    Dataset data = tiny_dataset(1, 11);
    REQUIRE(data.train_idx.size() == 1);
    const PromptPair& sample = data.pairs[0];

    ModelState tuned = small_model(15, 1, 4, 32);
    ModelState manual = clone_model(tuned);

    TuneMask mask;
    mask.heads = {NodeId::attention(0, 2)};  // h = 1 of H = 4 -> rescale 4.0
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.steps = 1;
    cfg.batch_size = 1;
    cfg.optimizer = "sgd";
    cfg.warmup_ratio = 0.0;
    cfg.cosine_decay = false;
    cfg.weight_decay = 0.0;
    precise_sft(tuned, data, mask, cfg);

    // unmasked gradients, same loss, lr scaled by H/h = 4
    Tape tape;
    for (Tensor& t : node_parameters(manual, NodeId::attention(0, 2))) t.set_requires_grad(true);
    ForwardOptions opts;
    opts.tape = &tape;
    opts.want_cache = false;
    const Tensor logits = forward(manual, sample.ref_ids, opts);
    const std::int64_t end = static_cast<std::int64_t>(sample.ref_ids.size()) - 1;
    Tensor loss = cross_entropy(select_row(logits, end, &tape), sample.answer_token, &tape);
    tape.backward(loss);
    for (Tensor& t : node_parameters(manual, NodeId::attention(0, 2))) {
        auto g = t.grad();
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            t.at(i) -= (cfg.lr * 4.0) * g[static_cast<std::size_t>(i)];
        }
        t.set_requires_grad(false);
    }

    const auto a = dump_params(tuned), b = dump_params(manual);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].second.size() == b[i].second.size());
        for (std::size_t j = 0; j < a[i].second.size(); ++j) {
            CHECK(std::abs(a[i].second[j] - b[i].second[j]) < 1e-10);
        }
    }
}

TEST_CASE("training diverges loudly") {
    Dataset data = tiny_dataset(10, 12);
    ModelState st = small_model(16);
    TrainConfig cfg;
    cfg.lr = 1e60;
    cfg.steps = 5;
    cfg.batch_size = 2;
    cfg.optimizer = "sgd";
    cfg.warmup_ratio = 0.0;
    CHECK_THROWS_AS(pretrain(st, data, cfg), numeric_error);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg.lr = 1e-3;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg.batch_size = 1;
    cfg.optimizer = "lion";
    CHECK_THROWS_AS(cfg.validate(), config_error);
}
