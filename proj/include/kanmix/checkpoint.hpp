#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kanmix/errors.hpp"
#include "kanmix/mixer.hpp"
#include "kanmix/training.hpp"

namespace kanmix {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// ---------------------------------------------------------------------------
// ModelConfig <-> JSON.
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["variant"] = to_string(c.variant);
    j["L"] = c.L;
    j["H"] = c.H;
    j["C"] = c.C;
    j["batch"] = c.batch;
    j["blocks"] = c.blocks;
    j["dropout"] = c.dropout;
    j["hidden_size"] = c.hidden_size;
    j["learning_rate"] = c.learning_rate;
    if (c.uses_kan()) {
        j["kan_dim"] = c.kan_dim;
        j["kan_grid"] = c.kan_grid;
        j["kan_k"] = c.kan_k;
    }
    j["loss"] = to_string(c.loss);
    j["seed"] = c.seed;
    return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.L = j.at("L").get<std::size_t>();
    c.H = j.at("H").get<std::size_t>();
    c.C = j.at("C").get<std::size_t>();
    c.batch = j.at("batch").get<std::size_t>();
    c.blocks = j.at("blocks").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.hidden_size = j.at("hidden_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    if (c.uses_kan()) {
        c.kan_dim = j.at("kan_dim").get<std::size_t>();
        c.kan_grid = j.at("kan_grid").get<int>();
        c.kan_k = j.at("kan_k").get<int>();
    }
    c.loss = loss_from_string(j.at("loss").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic, version, JSON header (config + provenance + array
// index), then a raw little-endian double payload. The payload is written
// bit for bit, so save/load round-trips exactly.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'K', 'M', 'I', 'X', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything an eval run needs besides the parameters: the normalization
/// statistics of the training data and the split that produced them.
struct CheckpointExtras {
    std::vector<double> means;
    std::vector<double> stds;
    std::string dataset_name;
    bool has_split = false;
    SplitRange train, valid, test;
};

inline void save_checkpoint(const std::string& path, ForecastModel& model,
                            const CheckpointExtras& extras = {}) {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["config"] = config_to_json(model.config);
    if (!extras.means.empty()) {
        header["normalization"]["means"] = extras.means;
        header["normalization"]["stds"] = extras.stds;
    }
    if (!extras.dataset_name.empty()) header["dataset"] = extras.dataset_name;
    if (extras.has_split) {
        header["split"] = {{"train", {extras.train.begin, extras.train.end}},
                           {"valid", {extras.valid.begin, extras.valid.end}},
                           {"test", {extras.test.begin, extras.test.end}}};
    }

    nlohmann::json arrays = nlohmann::json::array();
    std::size_t offset = 0;
    std::vector<const Tensor*> tensors;
    for_each_state(model, [&](const std::string& name, Tensor& t) {
        nlohmann::json a;
        a["name"] = name;
        a["shape"] = t.shape();
        a["offset"] = offset;
        offset += t.size();
        arrays.push_back(a);
        tensors.push_back(&t);
    });
    header["arrays"] = arrays;
    header["payload_len"] = offset;

    const std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("save_checkpoint: cannot open '" + path + "' for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const Tensor* t : tensors)
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!out) throw io_error("save_checkpoint: write to '" + path + "' failed");
}

struct LoadedCheckpoint {
    ForecastModel model;
    CheckpointExtras extras;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_checkpoint: cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw io_error("load_checkpoint: '" + path + "' is not a checkpoint file");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kCheckpointVersion)
        throw io_error("load_checkpoint: unsupported checkpoint version " +
                       std::to_string(version));
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw io_error("load_checkpoint: truncated header in '" + path + "'");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw io_error("load_checkpoint: bad header in '" + path + "': " + e.what());
    }

    LoadedCheckpoint out{build_model(config_from_json(header.at("config"))), {}};
    if (header.contains("normalization")) {
        out.extras.means = header["normalization"]["means"].get<std::vector<double>>();
        out.extras.stds = header["normalization"]["stds"].get<std::vector<double>>();
    }
    if (header.contains("dataset")) out.extras.dataset_name = header["dataset"].get<std::string>();
    if (header.contains("split")) {
        auto range = [&](const char* key) {
            const auto& r = header["split"].at(key);
            return SplitRange{r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()};
        };
        out.extras.has_split = true;
        out.extras.train = range("train");
        out.extras.valid = range("valid");
        out.extras.test = range("test");
    }

    const auto& arrays = header.at("arrays");
    std::size_t index = 0;
    for_each_state(out.model, [&](const std::string& name, Tensor& t) {
        if (index >= arrays.size())
            throw io_error("load_checkpoint: header lists too few arrays");
        const auto& a = arrays.at(index);
        if (a.at("name").get<std::string>() != name)
            throw io_error("load_checkpoint: array order mismatch at '" + name + "'");
        if (a.at("shape").get<std::vector<std::size_t>>() != t.shape())
            throw io_error("load_checkpoint: shape mismatch for '" + name + "'");
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        ++index;
    });
    if (index != arrays.size()) throw io_error("load_checkpoint: header lists too many arrays");
    if (!in) throw io_error("load_checkpoint: truncated payload in '" + path + "'");
    return out;
}

} // namespace kanmix
