#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "calclab/patching.hpp"
#include "calclab/probe.hpp"
#include "calclab/trainer.hpp"

namespace calclab {

// Shortest round-trip decimal form (std::to_chars); keeps CSV/JSON output
// byte-stable across runs.
std::string fmt_double(double v);

void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

std::string effect_map_csv(const EffectMap& map);
nlohmann::json effect_map_json(const EffectMap& map);
EffectMap effect_map_from_json(const nlohmann::json& j);

nlohmann::json selection_json(const KeySelection& sel);
KeySelection selection_from_json(const nlohmann::json& j);
TuneMask mask_from_selection(const KeySelection& sel);

std::string knockout_csv(const KnockoutCurve& curve);
std::string attention_profile_csv(const AttentionProfile& profile);
std::string probe_series_csv(const ProbeSeries& series);
std::string trajectory_csv(const TokenTrajectory& traj);
nlohmann::json trajectory_json(const TokenTrajectory& traj);

// layers x (heads + 1) grid, MLP column last; red = negative effect
// (supports the answer), blue = positive.
std::string heatmap_svg(const EffectMap& map, const ModelConfig& cfg);

struct ChartSeries {
    std::string label;
    std::vector<double> y;  // x = index
};
std::string line_chart_svg(const std::string& title, const std::vector<ChartSeries>& series);

// Run manifest: resolved config + input hashes + tool version. No wall-clock
// content, so reruns stay byte-identical.
constexpr const char* kToolVersion = "0.1.0";
nlohmann::json run_manifest(const std::string& subcommand, const nlohmann::json& config,
                            const std::vector<std::pair<std::string, std::string>>& input_hashes);

}  // namespace calclab
