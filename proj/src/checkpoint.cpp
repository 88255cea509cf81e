#include "vcd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace vcd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};

struct PayloadWriter {
    std::vector<double> data;

    json add(const std::string& name, const Matrix& m) {
        json entry = {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", data.size()}};
        data.insert(data.end(), m.data(), m.data() + m.size());
        return entry;
    }
};

Matrix read_tensor(const json& entry, const std::vector<double>& payload) {
    const auto rows = entry.at("rows").get<Index>();
    const auto cols = entry.at("cols").get<Index>();
    const auto offset = entry.at("offset").get<std::size_t>();
    if (rows < 0 || cols < 0 || offset + static_cast<std::size_t>(rows * cols) > payload.size()) {
        throw std::runtime_error("checkpoint tensor '" + entry.at("name").get<std::string>() + "' out of bounds");
    }
    Matrix m(rows, cols);
    std::copy_n(payload.data() + offset, rows * cols, m.data());
    return m;
}

}  // namespace

TrainingState capture_training_state(Trainer& trainer) {
    TrainingState st;
    st.mode = trainer.mode() == TrainMode::Joint ? "joint" : "adapt";
    st.adapt_slot = trainer.adapt_slot();
    st.steps = trainer.optimizer().steps();
    st.rng_state = trainer.rng().state();
    st.train = trainer.config();
    const auto& params = trainer.optimizer().params();
    const auto& moments = trainer.optimizer().moments();
    for (std::size_t i = 0; i < params.size(); ++i) st.moments[params[i]->name] = moments[i];
    return st;
}

void restore_training_state(Trainer& trainer, const TrainingState& state) {
    const std::string mode = trainer.mode() == TrainMode::Joint ? "joint" : "adapt";
    if (mode != state.mode || trainer.adapt_slot() != state.adapt_slot) {
        throw std::runtime_error("checkpoint was written in " + state.mode + " mode, trainer is in " + mode + " mode");
    }
    const auto& params = trainer.optimizer().params();
    auto& moments = trainer.optimizer().moments();
    if (params.size() != state.moments.size()) {
        throw std::runtime_error("checkpoint optimiser state covers a different parameter set");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto it = state.moments.find(params[i]->name);
        if (it == state.moments.end() || it->second.m.rows() != params[i]->value.rows() ||
            it->second.m.cols() != params[i]->value.cols()) {
            throw std::runtime_error("checkpoint has no optimiser state for '" + params[i]->name + "'");
        }
        moments[i] = it->second;
    }
    trainer.optimizer().set_steps(state.steps);
    trainer.rng().set_state(state.rng_state);
}

void save_checkpoint(const std::filesystem::path& file, const WorldModel& model, const json& config,
                     const TrainingState* training) {
    PayloadWriter payload;
    json header;
    header["format"] = "vcd-checkpoint";
    header["version"] = kCheckpointVersion;
    header["variant"] = to_string(model.variant());
    header["model_seed"] = model.seed();
    header["model_config"] = to_json(model.config());
    header["config"] = config;
    json tensors = json::array();
    for (const ad::Parameter* p : model.params().all()) tensors.push_back(payload.add(p->name, p->value));
    header["tensors"] = tensors;
    if (training) {
        json moments = json::array();
        for (const auto& [name, m] : training->moments) {
            moments.push_back({{"name", name},
                               {"m", payload.add(name + "#m", m.m)},
                               {"v", payload.add(name + "#v", m.v)}});
        }
        header["training"] = {{"mode", training->mode},
                              {"adapt_slot", training->adapt_slot},
                              {"steps", training->steps},
                              {"rng_state", training->rng_state},
                              {"optim", to_json(training->train)},
                              {"moments", moments}};
    }

    const std::string text = header.dump();
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    const std::filesystem::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        const std::uint32_t version = kCheckpointVersion;
        const std::uint64_t len = text.size();
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(reinterpret_cast<const char*>(payload.data.data()),
                  static_cast<std::streamsize>(payload.data.size() * sizeof(double)));
        if (!out) throw std::runtime_error("short write to checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + file.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw std::runtime_error(file.string() + " is not a checkpoint");
    }
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const auto header_start = static_cast<std::uint64_t>(in.tellg());
    const auto file_size = static_cast<std::uint64_t>(std::filesystem::file_size(file));
    if (len > file_size - header_start) throw std::runtime_error("checkpoint header truncated");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const std::uint64_t payload_bytes = file_size - header_start - len;
    if (payload_bytes % sizeof(double) != 0) throw std::runtime_error("checkpoint payload truncated");
    std::vector<double> payload(payload_bytes / sizeof(double));
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
    if (!in) throw std::runtime_error("checkpoint payload truncated");

    Checkpoint ck;
    try {
        const json header = json::parse(text);
        if (header.at("format") != "vcd-checkpoint") throw std::runtime_error("unknown checkpoint format");
        const Variant variant = variant_from_string(header.at("variant").get<std::string>());
        const ModelConfig cfg = model_config_from_json(header.at("model_config"));
        ck.model = std::make_unique<WorldModel>(variant, cfg, header.at("model_seed").get<std::uint64_t>());
        ck.config = header.at("config");

        const json& tensors = header.at("tensors");
        if (tensors.size() != ck.model->params().size()) {
            throw std::runtime_error("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                                     std::to_string(ck.model->params().size()));
        }
        for (const json& entry : tensors) {
            ad::Parameter& p = ck.model->params().get(entry.at("name").get<std::string>());
            Matrix value = read_tensor(entry, payload);
            if (value.rows() != p.value.rows() || value.cols() != p.value.cols()) {
                throw std::runtime_error("checkpoint tensor '" + p.name + "' has the wrong shape");
            }
            p.value = std::move(value);
        }
        if (header.contains("training")) {
            const json& t = header.at("training");
            TrainingState st;
            st.mode = t.at("mode").get<std::string>();
            st.adapt_slot = t.at("adapt_slot").get<int>();
            st.steps = t.at("steps").get<std::int64_t>();
            st.rng_state = t.at("rng_state").get<std::string>();
            st.train = train_config_from_json(t.at("optim"));
            for (const json& m : t.at("moments")) {
                st.moments[m.at("name").get<std::string>()] = {read_tensor(m.at("m"), payload),
                                                               read_tensor(m.at("v"), payload)};
            }
            ck.training = std::move(st);
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed checkpoint header in " + file.string() + ": " + e.what());
    } catch (const std::out_of_range& e) {
        throw std::runtime_error("checkpoint " + file.string() + " does not match its model: " + e.what());
    }
    return ck;
}

}  // namespace vcd
