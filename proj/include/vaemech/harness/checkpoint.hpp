#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vaemech/core/error.hpp"
#include "vaemech/model/vae.hpp"

// VCP1 layout: "VCP1", u64 LE header length, JSON header, then each
// tensor's float64 values little-endian at header-relative offsets.
//   header: {"format":"VCP1","version":1,"config":{...},"sites":[...],
//            "tensors":[{"name","shape","offset"}],"payload_bytes":n}

namespace vaemech {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'V', 'C', 'P', '1'};
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_config_json(const ModelConfig& m) {
    return {{"variant", to_string(m.variant)}, {"latent_dim", m.latent_dim},
            {"beta", m.beta},                  {"gamma", m.gamma},
            {"lambda_recon", m.lambda_recon},  {"image_size", m.image_size},
            {"channels", m.channels},          {"conv_channels", m.conv_channels},
            {"lr", m.lr},                      {"batch_size", m.batch_size},
            {"epochs", m.epochs},              {"weight_decay", m.weight_decay},
            {"disc_lr", m.disc_lr},            {"disc_hidden", m.disc_hidden},
            {"disc_layers", m.disc_layers},    {"disc_slope", m.disc_slope},
            {"seed", m.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig m;
        m.variant = parse_variant(j.at("variant").get<std::string>());
        m.latent_dim = j.at("latent_dim").get<std::size_t>();
        m.beta = j.at("beta").get<double>();
        m.gamma = j.at("gamma").get<double>();
        m.lambda_recon = j.at("lambda_recon").get<double>();
        m.image_size = j.at("image_size").get<std::size_t>();
        m.channels = j.at("channels").get<std::size_t>();
        m.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
        m.lr = j.at("lr").get<double>();
        m.batch_size = j.at("batch_size").get<std::size_t>();
        m.epochs = j.at("epochs").get<std::size_t>();
        m.weight_decay = j.at("weight_decay").get<double>();
        m.disc_lr = j.at("disc_lr").get<double>();
        m.disc_hidden = j.at("disc_hidden").get<std::size_t>();
        m.disc_layers = j.at("disc_layers").get<std::size_t>();
        m.disc_slope = j.at("disc_slope").get<double>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint config is malformed: ") + e.what());
    } catch (const ValidationError& e) {
        throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
    }
}

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;  // bytes from the start of the payload
};

struct CheckpointInfo {
    ModelConfig config;
    std::vector<std::string> sites;
    std::vector<CheckpointEntry> tensors;
    std::uint64_t payload_offset = 0;  // bytes from the start of the file
    std::uint64_t payload_bytes = 0;
};

inline void save_checkpoint(const std::string& path, const ModelBundle& model) {
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const Parameter* p : model.parameters()) {
        tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
        offset += p->value.numel() * sizeof(double);
    }
    const nlohmann::json header = {{"format", "VCP1"},
                                   {"version", kCheckpointVersion},
                                   {"config", model_config_json(model.config)},
                                   {"sites", model.site_names()},
                                   {"tensors", tensors},
                                   {"payload_bytes", offset}};
    const std::string text = header.dump();
    const std::uint64_t len = text.size();

    // Write beside the target and rename so a crash never leaves a torn file.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint '" + path + "'");
        out.write(kCheckpointMagic, 4);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const Parameter* p : model.parameters()) {
            out.write(reinterpret_cast<const char*>(p->value.data().data()),
                      static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
        }
        out.flush();
        if (!out) throw Error("failed writing checkpoint '" + path + "'");
    }
    std::filesystem::rename(tmp, path);
}

namespace detail {

inline CheckpointInfo read_checkpoint_header(std::ifstream& in, const std::string& path) {
    char magic[4] = {};
    if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw FormatError("'" + path + "' is not a VCP1 checkpoint (bad magic)");
    }
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw FormatError("'" + path + "': truncated header");
    if (len > (std::uint64_t{1} << 30)) throw FormatError("'" + path + "': implausible header length");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("'" + path + "': truncated header");

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("'" + path + "': corrupt header: " + e.what());
    }
    CheckpointInfo info;
    try {
        if (h.at("format") != "VCP1") throw FormatError("'" + path + "': header format is not VCP1");
        if (h.at("version").get<int>() != kCheckpointVersion) {
            throw FormatError("'" + path + "': unsupported checkpoint version " + h.at("version").dump());
        }
        info.config = model_config_from_json(h.at("config"));
        info.sites = h.at("sites").get<std::vector<std::string>>();
        for (const auto& t : h.at("tensors")) {
            info.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                                    t.at("offset").get<std::uint64_t>()});
        }
        info.payload_bytes = h.at("payload_bytes").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path + "': corrupt header: " + e.what());
    }
    info.payload_offset = 4 + sizeof len + len;
    return info;
}

}  // namespace detail

/// Header only: lists the tensors without touching their payloads.
inline CheckpointInfo inspect_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
    return detail::read_checkpoint_header(in, path);
}

/// Reads the whole file before building anything, so failure leaves no
/// partially loaded model.
inline ModelBundle load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
    const CheckpointInfo info = detail::read_checkpoint_header(in, path);
    const auto file_size = std::filesystem::file_size(path);
    if (file_size != info.payload_offset + info.payload_bytes) {
        throw FormatError("'" + path + "': payload is " + std::to_string(file_size - info.payload_offset) +
                          " bytes, header declares " + std::to_string(info.payload_bytes));
    }
    std::vector<char> payload(info.payload_bytes);
    if (!in.read(payload.data(), static_cast<std::streamsize>(payload.size()))) {
        throw FormatError("'" + path + "': truncated payload");
    }

    ModelBundle model = make_zero_model(info.config);
    if (model.site_names() != info.sites) throw FormatError("'" + path + "': site list does not match the config");
    auto params = model.parameters();
    if (params.size() != info.tensors.size()) {
        throw FormatError("'" + path + "': expected " + std::to_string(params.size()) + " tensors, found " +
                          std::to_string(info.tensors.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const CheckpointEntry& e = info.tensors[i];
        Parameter& p = *params[i];
        if (e.name != p.name) throw FormatError("'" + path + "': tensor " + std::to_string(i) + " is '" + e.name + "', expected '" + p.name + "'");
        if (e.shape != p.value.shape()) {
            throw FormatError("'" + path + "': tensor '" + e.name + "' has shape " + shape_str(e.shape) + ", expected " +
                              shape_str(p.value.shape()));
        }
        const std::uint64_t bytes = p.value.numel() * sizeof(double);
        if (e.offset > info.payload_bytes || bytes > info.payload_bytes - e.offset) {
            throw FormatError("'" + path + "': tensor '" + e.name + "' runs past the payload");
        }
        std::memcpy(p.value.data().data(), payload.data() + e.offset, bytes);
        if (!p.value.all_finite()) throw FormatError("'" + path + "': tensor '" + e.name + "' holds non-finite values");
    }
    model.zero_grad();
    return model;
}

}  // namespace vaemech
