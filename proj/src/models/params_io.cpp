#include <fstream>

#include "ssr/checksum.hpp"
#include "ssr/errors.hpp"
#include "ssr/models.hpp"

namespace ssr::models {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path payload_path(const fs::path& manifest) {
    fs::path p = manifest;
    p += ".bin";
    return p;
}

}  // namespace

void save_params(const NetworkParams& params, const fs::path& path) {
    std::vector<float> payload;
    json entries = json::array();
    for (const auto& e : params.entries) {
        entries.push_back({{"name", e.name},
                           {"shape", e.value.shape()},
                           {"frozen", e.frozen},
                           {"offset", payload.size()}});
        payload.insert(payload.end(), e.value.values().begin(), e.value.values().end());
    }
    const std::size_t bytes = payload.size() * sizeof(float);
    json manifest;
    manifest["format"] = "ssr-params";
    manifest["version"] = 1;
    manifest["arch"] = to_string(params.arch);
    manifest["config"] = params.config.to_json();
    manifest["config_digest"] = params.config_digest;
    manifest["entries"] = std::move(entries);
    manifest["payload"] = payload_path(path).filename().string();
    manifest["payload_bytes"] = bytes;
    manifest["payload_fnv1a64"] = to_hex(fnv1a64(payload.data(), bytes));

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << manifest.dump(2) << '\n';
    std::ofstream bin(payload_path(path), std::ios::binary | std::ios::trunc);
    if (!bin) throw DataError("cannot write " + payload_path(path).string());
    bin.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(bytes));
    if (!bin) throw DataError("short write to " + payload_path(path).string());
}

NetworkParams load_params(const fs::path& path, const std::optional<ArchConfig>& expected) {
    json manifest;
    {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open " + path.string());
        try {
            manifest = json::parse(in);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": invalid manifest: " + e.what());
        }
    }
    NetworkParams p;
    std::vector<std::pair<std::size_t, tensor::Shape>> layout;
    std::size_t bytes = 0;
    std::string checksum;
    fs::path bin_path;
    try {
        if (manifest.at("format").get<std::string>() != "ssr-params") {
            throw DataError(path.string() + ": not a parameter manifest");
        }
        const auto arch = manifest.at("arch").get<std::string>();
        if (arch == "model1") p.arch = ArchId::model1;
        else if (arch == "model2") p.arch = ArchId::model2;
        else throw DataError(path.string() + ": unknown arch '" + arch + "'");
        p.config = ArchConfig::from_json(manifest.at("config"));
        p.config_digest = manifest.at("config_digest").get<std::string>();
        for (const auto& e : manifest.at("entries")) {
            tensor::Parameter param;
            param.name = e.at("name").get<std::string>();
            param.frozen = e.at("frozen").get<bool>();
            layout.emplace_back(e.at("offset").get<std::size_t>(), e.at("shape").get<tensor::Shape>());
            p.entries.push_back(std::move(param));
        }
        bytes = manifest.at("payload_bytes").get<std::size_t>();
        checksum = manifest.at("payload_fnv1a64").get<std::string>();
        bin_path = path.parent_path() / manifest.at("payload").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": malformed manifest: " + e.what());
    }

    if (p.config.digest() != p.config_digest) {
        throw DataError(path.string() + ": config digest mismatch (stored " + p.config_digest +
                        ", computed " + p.config.digest() + ")");
    }
    if (expected && expected->digest() != p.config_digest) {
        throw DataError(path.string() + ": architecture drift (file digest " + p.config_digest +
                        ", expected " + expected->digest() + ")");
    }
    p.config.validate();

    std::vector<float> payload(bytes / sizeof(float));
    std::error_code ec;
    const auto actual = fs::file_size(bin_path, ec);
    if (ec || actual != bytes || bytes % sizeof(float) != 0) {
        throw DataError(bin_path.string() + ": payload is " + (ec ? "missing" : std::to_string(actual)) +
                        " bytes, manifest says " + std::to_string(bytes));
    }
    {
        std::ifstream in(bin_path, std::ios::binary);
        in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
        if (!in) throw DataError("short read from " + bin_path.string());
    }
    if (to_hex(fnv1a64(payload.data(), bytes)) != checksum) {
        throw DataError(bin_path.string() + ": payload checksum mismatch");
    }

    // Entry names and shapes must match what the architecture builds.
    const NetworkParams reference =
        p.arch == ArchId::model1 ? build_model1(p.config, 0) : build_model2(p.config, 0);
    if (reference.entries.size() != p.entries.size()) {
        throw DataError(path.string() + ": entry count does not match architecture");
    }
    for (std::size_t i = 0; i < p.entries.size(); ++i) {
        const auto& [offset, shape] = layout[i];
        if (reference.entries[i].name != p.entries[i].name ||
            reference.entries[i].value.shape() != shape) {
            throw DataError(path.string() + ": entry '" + p.entries[i].name +
                            "' does not match architecture");
        }
        const std::size_t n = tensor::shape_volume(shape);
        if (offset + n > payload.size()) throw DataError(path.string() + ": entry overruns payload");
        p.entries[i].value = Tensor(shape, std::vector<float>(payload.begin() + offset,
                                                              payload.begin() + offset + n));
    }
    return p;
}

}  // namespace ssr::models
