#include "calclab/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "calclab/errors.hpp"
#include "calclab/hash.hpp"

namespace calclab {

using nlohmann::json;

std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw numeric_error("cannot format double");
    return std::string(buf, ptr);
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot read file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string effect_map_csv(const EffectMap& map) {
    std::string csv = "node,layer,head,mean,std,n\n";
    for (const NodeEffect& e : map.effects) {
        csv += e.node.str() + "," + std::to_string(e.node.layer) + "," + (e.node.is_head() ? std::to_string(e.node.head) : "-1") +
               "," + fmt_double(e.mean) + "," + fmt_double(e.stddev) + "," + std::to_string(e.count) + "\n";
    }
    return csv;
}

json effect_map_json(const EffectMap& map) {
    json effects = json::array();
    for (const NodeEffect& e : map.effects) {
        effects.push_back({{"node", e.node.str()}, {"mean", e.mean}, {"std", e.stddev}, {"n", e.count}});
    }
    return json{{"mode", patch_mode_name(map.mode)},
                {"full_sequence", map.full_sequence},
                {"pairs_used", map.pairs_used},
                {"pairs_skipped", map.pairs_skipped},
                {"model_hash", map.model_hash},
                {"dataset_hash", map.dataset_hash},
                {"effects", effects}};
}

EffectMap effect_map_from_json(const json& j) {
    EffectMap map;
    map.mode = patch_mode_from_name(j.at("mode").get<std::string>());
    map.full_sequence = j.at("full_sequence").get<bool>();
    map.pairs_used = j.at("pairs_used").get<int>();
    map.pairs_skipped = j.at("pairs_skipped").get<int>();
    map.model_hash = j.at("model_hash").get<std::string>();
    map.dataset_hash = j.at("dataset_hash").get<std::string>();
    for (const auto& e : j.at("effects")) {
        NodeEffect eff;
        eff.node = NodeId::parse(e.at("node").get<std::string>());
        eff.mean = e.at("mean").get<double>();
        eff.stddev = e.at("std").get<double>();
        eff.count = e.at("n").get<int>();
        map.effects.push_back(eff);
    }
    return map;
}

json selection_json(const KeySelection& sel) {
    auto dump = [](const std::vector<NodeEffect>& v) {
        json arr = json::array();
        for (const NodeEffect& e : v) {
            arr.push_back({{"node", e.node.str()}, {"layer", e.node.layer},
                           {"head", e.node.is_head() ? e.node.head : -1}, {"effect", e.mean}});
        }
        return arr;
    };
    return json{{"tau", sel.tau}, {"top_k", sel.top_k}, {"heads", dump(sel.heads)}, {"mlps", dump(sel.mlps)},
                {"effect_map", sel.effect_map_hash}};
}

KeySelection selection_from_json(const json& j) {
    KeySelection sel;
    sel.tau = j.at("tau").get<double>();
    sel.top_k = j.at("top_k").get<int>();
    sel.effect_map_hash = j.at("effect_map").get<std::string>();
    auto load = [](const json& arr, std::vector<NodeEffect>& out) {
        for (const auto& e : arr) {
            NodeEffect eff;
            eff.node = NodeId::parse(e.at("node").get<std::string>());
            eff.mean = e.at("effect").get<double>();
            out.push_back(eff);
        }
    };
    load(j.at("heads"), sel.heads);
    load(j.at("mlps"), sel.mlps);
    return sel;
}

TuneMask mask_from_selection(const KeySelection& sel) {
    TuneMask mask;
    mask.heads = sel.head_ids();
    mask.mlp_layers = sel.mlp_layer_ids();
    return mask;
}

std::string knockout_csv(const KnockoutCurve& curve) {
    std::string csv = "k,knocked_node,accuracy\n";
    for (std::size_t k = 0; k < curve.accuracy.size(); ++k) {
        const std::string node = k == 0 ? "" : curve.order[k - 1].str();
        csv += std::to_string(k) + "," + node + "," + fmt_double(curve.accuracy[k]) + "\n";
    }
    return csv;
}

std::string attention_profile_csv(const AttentionProfile& profile) {
    std::string csv = "head,role,mean_attention\n";
    const std::string h = profile.head.str();
    csv += h + ",operand_a," + fmt_double(profile.operand_a) + "\n";
    csv += h + ",operand_b," + fmt_double(profile.operand_b) + "\n";
    csv += h + ",operator," + fmt_double(profile.operator_token) + "\n";
    csv += h + ",other," + fmt_double(profile.other) + "\n";
    csv += h + ",operand_combined," + fmt_double(profile.operand_combined) + "\n";
    return csv;
}

std::string probe_series_csv(const ProbeSeries& series) {
    std::string csv = "layer,a,b,c,other\n";
    for (std::size_t l = 0; l < series.a.size(); ++l) {
        csv += std::to_string(l) + "," + fmt_double(series.a[l]) + "," + fmt_double(series.b[l]) + "," + fmt_double(series.c[l]) +
               "," + fmt_double(series.other[l]) + "\n";
    }
    return csv;
}

std::string trajectory_csv(const TokenTrajectory& traj) {
    const auto& vocab = Vocabulary::builtin();
    std::string csv = "layer,rank,token,score\n";
    for (std::size_t l = 0; l < traj.ranking.size(); ++l) {
        for (std::size_t r = 0; r < traj.ranking[l].size(); ++r) {
            csv += std::to_string(l) + "," + std::to_string(r) + "," + vocab.token(traj.ranking[l][r].first) + "," +
                   fmt_double(traj.ranking[l][r].second) + "\n";
        }
    }
    return csv;
}

json trajectory_json(const TokenTrajectory& traj) {
    const auto& vocab = Vocabulary::builtin();
    json layers = json::array();
    for (const auto& layer : traj.ranking) {
        json ranks = json::array();
        for (const auto& [tok, score] : layer) ranks.push_back({{"token", vocab.token(tok)}, {"score", score}});
        layers.push_back(ranks);
    }
    return json{{"layers", layers},
                {"answer", vocab.token(traj.answer_token)},
                {"predicted", vocab.token(traj.predicted_token)},
                {"first_stable_layer", traj.first_stable_layer}};
}

namespace {

std::string color_for(double value, double max_abs) {
    // diverging scale: red for negative (answer-supporting), blue for positive
    const double t = max_abs > 0 ? std::clamp(std::abs(value) / max_abs, 0.0, 1.0) : 0.0;
    const int fade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
    char buf[8];
    if (value < 0) {
        std::snprintf(buf, sizeof(buf), "#ff%02x%02x", fade, fade);
    } else {
        std::snprintf(buf, sizeof(buf), "#%02x%02xff", fade, fade);
    }
    return buf;
}

}  // namespace

std::string heatmap_svg(const EffectMap& map, const ModelConfig& cfg) {
    const int cell = 22, pad = 46;
    const int cols = cfg.heads + 1, rows = cfg.layers;
    const int width = pad + cols * cell + 90, height = pad + rows * cell + 20;
    double max_abs = 0.0;
    for (const NodeEffect& e : map.effects) max_abs = std::max(max_abs, std::abs(e.mean));

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "<text x=\"" << pad << "\" y=\"16\" font-size=\"12\">mean causal effect, mode " << patch_mode_name(map.mode)
        << " (|max| = " << fmt_double(max_abs) << ")</text>\n";
    for (int layer = 0; layer < rows; ++layer) {
        svg << "<text x=\"4\" y=\"" << pad + layer * cell + 15 << "\" font-size=\"10\">L" << layer << "</text>\n";
        for (int cidx = 0; cidx < cols; ++cidx) {
            const NodeId node = cidx < cfg.heads ? NodeId::attention(layer, cidx) : NodeId::mlp(layer);
            const NodeEffect* e = map.find(node);
            const double v = e ? e->mean : 0.0;
            svg << "<rect class=\"cell\" x=\"" << pad + cidx * cell << "\" y=\"" << pad + layer * cell << "\" width=\"" << cell - 2
                << "\" height=\"" << cell - 2 << "\" fill=\"" << color_for(v, max_abs) << "\"><title>" << node.str() << " "
                << fmt_double(v) << "</title></rect>\n";
        }
    }
    for (int cidx = 0; cidx < cols; ++cidx) {
        svg << "<text x=\"" << pad + cidx * cell << "\" y=\"" << pad - 6 << "\" font-size=\"9\">"
            << (cidx < cfg.heads ? "h" + std::to_string(cidx) : std::string("mlp")) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string line_chart_svg(const std::string& title, const std::vector<ChartSeries>& series) {
    const int width = 560, height = 360, pad = 50;
    double lo = 0.0, hi = 1e-12;
    std::size_t max_n = 2;
    for (const auto& s : series) {
        for (double v : s.y) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        max_n = std::max(max_n, s.y.size());
    }
    if (hi <= lo) hi = lo + 1.0;
    const auto xmap = [&](std::size_t i) { return pad + static_cast<double>(i) * (width - 2 * pad) / static_cast<double>(max_n - 1); };
    const auto ymap = [&](double v) { return height - pad - (v - lo) * (height - 2 * pad) / (hi - lo); };
    static const char* palette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "<text x=\"" << pad << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
    svg << "<line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\"" << width - pad << "\" y2=\"" << height - pad
        << "\" stroke=\"#444\"/>\n";
    svg << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << height - pad << "\" stroke=\"#444\"/>\n";
    svg << "<text x=\"6\" y=\"" << ymap(hi) + 4 << "\" font-size=\"10\">" << fmt_double(hi) << "</text>\n";
    svg << "<text x=\"6\" y=\"" << ymap(lo) + 4 << "\" font-size=\"10\">" << fmt_double(lo) << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        svg << "<polyline fill=\"none\" stroke=\"" << palette[si % 6] << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.y.size(); ++i) {
            svg << fmt_double(xmap(i)) << "," << fmt_double(ymap(s.y[i])) << " ";
        }
        svg << "\"/>\n";
        svg << "<text x=\"" << width - pad + 4 << "\" y=\"" << pad + 14 * static_cast<int>(si) << "\" font-size=\"10\" fill=\""
            << palette[si % 6] << "\">" << s.label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

json run_manifest(const std::string& subcommand, const json& config,
                  const std::vector<std::pair<std::string, std::string>>& input_hashes) {
    json hashes = json::object();
    for (const auto& [name, h] : input_hashes) hashes[name] = h;
    return json{{"schema_version", 1},
                {"tool_version", kToolVersion},
                {"subcommand", subcommand},
                {"config", config},
                {"config_hash", hex64(fnv1a64(config.dump()))},
                {"inputs", hashes}};
}

}  // namespace calclab
