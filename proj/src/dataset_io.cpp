#include "vcd/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vcd::sim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint32_t to_little(std::uint32_t x) {
    if constexpr (std::endian::native == std::endian::little) {
        return x;
    } else {
        return ((x & 0xFFu) << 24) | ((x & 0xFF00u) << 8) | ((x >> 8) & 0xFF00u) | (x >> 24);
    }
}

const char* constraint_name(Constraint c) {
    switch (c) {
        case Constraint::Free: return "free";
        case Constraint::XFrozen: return "x_frozen";
        case Constraint::YFrozen: return "y_frozen";
    }
    return "free";
}

Constraint constraint_from(const std::string& s) {
    if (s == "free") return Constraint::Free;
    if (s == "x_frozen") return Constraint::XFrozen;
    if (s == "y_frozen") return Constraint::YFrozen;
    throw std::runtime_error("unknown constraint '" + s + "'");
}

std::string obs_file(int k) { return "env" + std::to_string(k) + "_observations.f32"; }
std::string act_file(int k) { return "env" + std::to_string(k) + "_actions.f32"; }

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    const auto rows = static_cast<Index>(j.size());
    const auto cols = rows == 0 ? Index{0} : static_cast<Index>(j.at(0).size());
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        if (static_cast<Index>(j.at(static_cast<std::size_t>(r)).size()) != cols) {
            throw std::runtime_error("ragged matrix in manifest");
        }
        for (Index c = 0; c < cols; ++c) {
            m(r, c) = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
        }
    }
    return m;
}

}  // namespace

json env_params_to_json(const EnvParams& p) {
    json springs = json::array();
    for (const Spring& s : p.springs) {
        springs.push_back({{"a", s.a + 1}, {"b", s.b + 1}, {"stiffness", s.stiffness}, {"rest_length", s.rest_length}});
    }
    json pairs = json::array();
    for (const PairForce& f : p.pair_forces) pairs.push_back({{"a", f.a + 1}, {"b", f.b + 1}, {"strength", f.strength}});
    json constraints = json::array();
    for (Constraint c : p.constraints) constraints.push_back(constraint_name(c));
    return {{"masses", p.masses}, {"springs", springs},         {"pair_forces", pairs},
            {"constraints", constraints}, {"box", p.box},        {"dt", p.dt},
            {"action_gain", p.action_gain}, {"softening", p.softening}};
}

EnvParams env_params_from_json(const json& j) {
    EnvParams p;
    p.masses = j.at("masses").get<std::array<double, kParticles>>();
    p.springs.clear();
    for (const json& s : j.at("springs")) {
        p.springs.push_back({s.at("a").get<int>() - 1, s.at("b").get<int>() - 1, s.at("stiffness").get<double>(),
                             s.at("rest_length").get<double>()});
    }
    p.pair_forces.clear();
    for (const json& f : j.at("pair_forces")) {
        p.pair_forces.push_back({f.at("a").get<int>() - 1, f.at("b").get<int>() - 1, f.at("strength").get<double>()});
    }
    const json& cs = j.at("constraints");
    if (cs.size() != kParticles) throw std::runtime_error("constraints must list 4 particles");
    for (std::size_t i = 0; i < kParticles; ++i) p.constraints[i] = constraint_from(cs[i].get<std::string>());
    p.box = j.at("box").get<double>();
    p.dt = j.at("dt").get<double>();
    p.action_gain = j.at("action_gain").get<double>();
    p.softening = j.value("softening", 0.0);
    p.validate();
    return p;
}

json dataset_manifest(const Dataset& ds) {
    json envs = json::array();
    for (const EnvironmentData& e : ds.envs) {
        envs.push_back({{"index", e.index},
                        {"intervention", e.spec.id},
                        {"description", e.spec.description()},
                        {"targets", e.spec.targets()},
                        {"n_traj", e.trajectories.size()},
                        {"observations", obs_file(e.index)},
                        {"actions", act_file(e.index)}});
    }
    return {{"format", "vcd-dataset"},
            {"version", kDatasetFormatVersion},
            {"horizon", ds.horizon},
            {"seed", ds.seed},
            {"action_hold", ds.action_hold},
            {"mixing_seed", ds.mixing.seed},
            {"mixing_matrix", matrix_to_json(ds.mixing.a)},
            {"obs_dim", kStateDim},
            {"action_dim", kActionDim},
            {"dtype", "float32-le"},
            {"layout", "trajectory,time,channel"},
            {"base_params", env_params_to_json(ds.base)},
            {"environments", envs}};
}

void write_f32(const fs::path& file, std::span<const double> values) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    std::vector<std::uint32_t> buf(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto f = static_cast<float>(values[i]);
        std::uint32_t bits = 0;
        std::memcpy(&bits, &f, sizeof bits);
        buf[i] = to_little(bits);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)));
    if (!out) throw std::runtime_error("short write to " + file.string());
}

std::vector<double> read_f32(const fs::path& file, std::size_t expected_count) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected_count * sizeof(std::uint32_t)) {
        throw std::runtime_error(file.string() + ": expected " + std::to_string(expected_count) + " values, found " +
                                 std::to_string(bytes / sizeof(std::uint32_t)));
    }
    in.seekg(0);
    std::vector<std::uint32_t> buf(expected_count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    std::vector<double> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        const std::uint32_t bits = to_little(buf[i]);
        float f = 0.0f;
        std::memcpy(&f, &bits, sizeof f);
        out[i] = f;
    }
    return out;
}

void write_dataset(const fs::path& dir, const Dataset& ds, bool force) {
    const fs::path manifest_path = dir / "manifest.json";
    if (fs::exists(manifest_path) && !force) {
        throw std::runtime_error(manifest_path.string() + " already exists (use --force to overwrite)");
    }
    fs::create_directories(dir);
    const auto steps = static_cast<std::size_t>(ds.horizon + 1);
    for (const EnvironmentData& e : ds.envs) {
        std::vector<double> obs;
        std::vector<double> act;
        obs.reserve(e.trajectories.size() * steps * kStateDim);
        act.reserve(e.trajectories.size() * steps * kActionDim);
        for (const Trajectory& t : e.trajectories) {
            obs.insert(obs.end(), t.observations.data(), t.observations.data() + t.observations.size());
            act.insert(act.end(), t.actions.data(), t.actions.data() + t.actions.size());
        }
        write_f32(dir / obs_file(e.index), obs);
        write_f32(dir / act_file(e.index), act);
    }
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
    out << dataset_manifest(ds).dump(2) << "\n";
}

Dataset read_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("dataset manifest not found: " + manifest_path.string());
    const json m = json::parse(in);
    if (m.value("format", "") != "vcd-dataset" || m.value("version", 0) != kDatasetFormatVersion) {
        throw std::runtime_error("unsupported dataset format in " + manifest_path.string());
    }
    Dataset ds;
    ds.horizon = m.at("horizon").get<int>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.action_hold = m.value("action_hold", 5);
    ds.base = env_params_from_json(m.at("base_params"));
    ds.mixing = MixingMatrix::from_matrix(matrix_from_json(m.at("mixing_matrix")), m.at("mixing_seed").get<std::uint64_t>());
    if (ds.mixing.a.rows() != kStateDim || ds.mixing.a.cols() != kStateDim) {
        throw std::runtime_error("mixing matrix must be 8x8");
    }
    if (!(ds.mixing.condition_number() < 1e3)) throw std::runtime_error("mixing matrix is ill-conditioned");
    const auto steps = static_cast<std::size_t>(ds.horizon + 1);
    for (const json& e : m.at("environments")) {
        EnvironmentData env;
        env.index = e.at("index").get<int>();
        env.spec = InterventionSpec(e.at("intervention").get<int>());
        const auto n = e.at("n_traj").get<std::size_t>();
        const auto obs = read_f32(dir / e.at("observations").get<std::string>(), n * steps * kStateDim);
        const auto act = read_f32(dir / e.at("actions").get<std::string>(), n * steps * kActionDim);
        for (std::size_t i = 0; i < n; ++i) {
            Trajectory t;
            t.env = env.index;
            t.observations = Eigen::Map<const Matrix>(obs.data() + i * steps * kStateDim, static_cast<Index>(steps), kStateDim);
            t.actions = Eigen::Map<const Matrix>(act.data() + i * steps * kActionDim, static_cast<Index>(steps), kActionDim);
            env.trajectories.push_back(std::move(t));
        }
        ds.envs.push_back(std::move(env));
    }
    return ds;
}

}  // namespace vcd::sim
