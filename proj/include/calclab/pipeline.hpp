#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "calclab/model.hpp"
#include "calclab/trainer.hpp"

namespace calclab {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;            // "measured ... vs threshold ..."
    bool timing_dependent = false; // wall-clock checks stay out of deterministic artifacts
};

struct SuiteOutcome {
    std::string suite;
    std::vector<CheckResult> checks;
    nlohmann::json measured;
    std::filesystem::path outdir;

    bool all_pass() const;
};

// Pinned configurations for the four reproduction suites. `overrides` is
// merged on top (object merge, shallow per section).
nlohmann::json default_suite_config(const std::string& suite);
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overrides);

SuiteOutcome run_suite(const std::string& suite, const nlohmann::json& config, const std::filesystem::path& outdir);

// Helpers shared with the CLI.
ModelState model_from_config(const nlohmann::json& model_cfg, std::uint64_t seed);
TrainConfig train_config_from_json(const nlohmann::json& j);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
int resolve_jobs(int requested);

ModelState clone_model(const ModelState& state);

}  // namespace calclab
