#include "vcd/reports.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace vcd {

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json matrix_to_json(const IntMatrix& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json to_json(const RolloutReport& r) {
    json envs = json::array();
    for (const auto& e : r.envs) {
        envs.push_back({{"env", e.env},
                        {"intervention", e.intervention},
                        {"slot", e.slot},
                        {"trajectories", e.trajectories},
                        {"predicted_mean_error", e.predicted_mean},
                        {"mean_error", std::vector<double>(e.mean_error.begin(), e.mean_error.end())}});
    }
    return {{"model", r.model},
            {"dataset_tag", r.dataset_tag},
            {"horizon", r.horizon},
            {"split", r.split},
            {"predicted_mean_error", r.predicted_mean},
            {"environments", envs}};
}

json to_json(const DisentanglementMatrix& m) {
    json names = json::array();
    for (Index i = 0; i < m.jacobian.rows(); ++i) names.push_back(sim::state_name(static_cast<int>(i)));
    return {{"states", names},
            {"jacobian", matrix_to_json(m.jacobian)},
            {"assignment", m.assignment},
            {"injective", m.injective}};
}

json to_json(const RecoveryReport& r) {
    json targets = json::array();
    for (const auto& t : r.targets) {
        json truth_names = json::array();
        for (int s : t.truth) truth_names.push_back(sim::state_name(s));
        targets.push_back({{"slot", t.slot},
                           {"intervention", t.intervention},
                           {"learned_latents", t.learned},
                           {"mapped_states", t.mapped},
                           {"truth_states", t.truth},
                           {"truth_names", truth_names},
                           {"recovered", t.recovered},
                           {"missed", t.missed},
                           {"false_positive", t.false_positive}});
    }
    return {{"edges",
             {{"learned", r.learned_edges},
              {"possible", r.possible_edges},
              {"mapped", r.mapped_edges},
              {"truth", r.truth_edges},
              {"correct", r.correct},
              {"missed", r.missed},
              {"false_positive", r.false_positive}}},
            {"injective_assignment", r.injective},
            {"mapped_graph", matrix_to_json(r.mapped_graph)},
            {"targets", targets},
            {"targets_total",
             {{"learned", r.total_learned_targets()},
              {"false_positive", r.total_target_false_positives()},
              {"all_recovered", r.all_targets_recovered()}}},
            {"summary", recovery_summary(r)}};
}

json beliefs_to_json(const WorldModel& model) {
    if (!model.has_beliefs()) return nullptr;
    const Matrix p_graph = model.graph().probabilities();
    const Matrix p_targets = model.targets().probabilities();
    return {{"graph_probabilities", matrix_to_json(p_graph)},
            {"graph", matrix_to_json(binarize(model.graph().alpha->value))},
            {"target_probabilities", matrix_to_json(p_targets)},
            {"targets", matrix_to_json(binarize(model.targets().logits()))},
            {"env_interventions", model.config().env_interventions}};
}

std::string rollout_csv(const std::vector<RolloutReport>& reports) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "model,env,intervention,slot,step,error\n";
    for (const auto& r : reports) {
        for (const auto& e : r.envs) {
            for (Index t = 0; t < e.mean_error.size(); ++t) {
                out << r.model << ',' << e.env << ',' << e.intervention << ',' << e.slot << ',' << t << ','
                    << e.mean_error(t) << '\n';
            }
        }
    }
    return out.str();
}

std::string matrix_csv(const Matrix& m, const std::string& row_prefix, const std::string& col_prefix) {
    std::ostringstream out;
    out << std::setprecision(17) << "row";
    for (Index c = 0; c < m.cols(); ++c) out << ',' << col_prefix << c;
    out << '\n';
    for (Index r = 0; r < m.rows(); ++r) {
        out << row_prefix << r;
        for (Index c = 0; c < m.cols(); ++c) out << ',' << m(r, c);
        out << '\n';
    }
    return out.str();
}

std::string recovery_summary(const RecoveryReport& r) {
    std::ostringstream out;
    out << "edges " << r.learned_edges << '/' << r.possible_edges << ", correct " << r.correct << ", missed "
        << r.missed << ", false positives " << r.false_positive << "; targets " << r.total_learned_targets()
        << ", false positives " << r.total_target_false_positives()
        << (r.all_targets_recovered() ? ", all recovered" : ", some missed");
    return out.str();
}

std::string error_curves_svg(const std::vector<RolloutReport>& reports) {
    constexpr double W = 640, H = 400, L = 60, R = 150, T = 30, B = 40;
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::vector<Eigen::VectorXd> curves;
    double ymax = 0.0;
    int horizon = 0;
    int split = 0;
    for (const auto& r : reports) {
        Eigen::VectorXd c = Eigen::VectorXd::Zero(r.horizon + 1);
        for (const auto& e : r.envs) c += e.mean_error;
        if (!r.envs.empty()) c /= static_cast<double>(r.envs.size());
        ymax = std::max(ymax, c.maxCoeff());
        horizon = std::max(horizon, r.horizon);
        split = r.split;
        curves.push_back(std::move(c));
    }
    if (ymax <= 0.0) ymax = 1.0;
    const double xs = (W - L - R) / std::max(1, horizon);
    const double ys = (H - T - B) / ymax;
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L + split * xs << "\" y1=\"" << T << "\" x2=\"" << L + split * xs << "\" y2=\"" << H - B
        << "\" stroke=\"grey\" stroke-dasharray=\"4 4\"/>\n";
    out << "<text x=\"" << (W - R + L) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"12\">step</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
        << std::setprecision(3) << ymax << "</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"11\">0</text>\n";
    out << std::setprecision(2);
    for (std::size_t m = 0; m < curves.size(); ++m) {
        const char* colour = colours[m % std::size(colours)];
        out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
        for (Index t = 0; t < curves[m].size(); ++t) {
            out << L + static_cast<double>(t) * xs << ',' << H - B - curves[m](t) * ys << ' ';
        }
        out << "\"/>\n";
        out << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (m + 1) << "\" font-size=\"12\" fill=\"" << colour
            << "\">" << reports[m].model << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

std::string heatmap_svg(const Matrix& m, const std::string& title) {
    constexpr double cell = 22, left = 40, top = 36;
    const double vmax = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    std::ostringstream out;
    out << std::fixed << std::setprecision(1);
    const double W = left + cell * static_cast<double>(m.cols()) + 10;
    const double H = top + cell * static_cast<double>(m.rows()) + 10;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << left << "\" y=\"16\" font-size=\"13\">" << title << "</text>\n";
    for (Index r = 0; r < m.rows(); ++r) {
        out << "<text x=\"" << left - 4 << "\" y=\"" << top + cell * (static_cast<double>(r) + 0.7)
            << "\" text-anchor=\"end\" font-size=\"10\">" << r << "</text>\n";
        for (Index c = 0; c < m.cols(); ++c) {
            const int shade = static_cast<int>(255.0 * (1.0 - std::abs(m(r, c)) / vmax));
            out << "<rect x=\"" << left + cell * static_cast<double>(c) << "\" y=\"" << top + cell * static_cast<double>(r)
                << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << ',' << shade << ','
                << shade << ")\"/>\n";
        }
    }
    for (Index c = 0; c < m.cols(); ++c) {
        out << "<text x=\"" << left + cell * (static_cast<double>(c) + 0.5) << "\" y=\"" << top - 4
            << "\" text-anchor=\"middle\" font-size=\"10\">" << c << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

void write_text(const std::filesystem::path& file, const std::string& text) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << text;
    if (!out) throw std::runtime_error("short write to " + file.string());
}

}  // namespace vcd
