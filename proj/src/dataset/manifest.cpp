#include <fstream>

#include <json.hpp>

#include "ssr/dataset.hpp"
#include "ssr/errors.hpp"

namespace ssr::data {

namespace fs = std::filesystem;
using nlohmann::json;

void save_dataset(const std::vector<Sample>& samples, const fs::path& dir,
                  const std::string& generator_json) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    json manifest;
    manifest["format"] = "ssr-dataset";
    manifest["version"] = 1;
    try {
        manifest["generator"] = json::parse(generator_json);
    } catch (const json::exception&) {
        throw DataError("generator description is not valid JSON");
    }
    manifest["samples"] = json::array();
    for (const auto& s : samples) {
        const json entry = {{"id", s.id},
                            {"hsi", s.id + "_hsi.json"},
                            {"rgb", s.id + "_rgb.json"},
                            {"sparse", s.id + "_sparse.json"},
                            {"d_hsi", s.id + "_dhsi.json"},
                            {"spots", s.id + "_spots.csv"}};
        save_stack(s.hsi, dir / entry["hsi"].get<std::string>());
        save_stack(s.rgb, dir / entry["rgb"].get<std::string>());
        save_stack(s.sparse, dir / entry["sparse"].get<std::string>());
        save_map(s.d_hsi.map, dir / entry["d_hsi"].get<std::string>());
        save_spots_csv(s.spots, dir / entry["spots"].get<std::string>());
        manifest["samples"].push_back(entry);
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

std::vector<Sample> load_dataset(const fs::path& manifest_path, bool require_ground_truth) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(manifest_path.string() + ": invalid JSON: " + e.what());
    }
    if (manifest.value("format", "") != "ssr-dataset") {
        throw DataError(manifest_path.string() + ": not a dataset manifest");
    }
    const fs::path dir = manifest_path.parent_path();
    std::vector<Sample> out;
    try {
        for (const auto& entry : manifest.at("samples")) {
            Sample s;
            s.id = entry.at("id").get<std::string>();
            s.rgb = load_stack(dir / entry.at("rgb").get<std::string>());
            s.sparse = load_stack(dir / entry.at("sparse").get<std::string>());
            s.d_hsi.map = load_map(dir / entry.at("d_hsi").get<std::string>());
            s.spots = load_spots_csv(dir / entry.at("spots").get<std::string>(), s.rgb.width(),
                                     s.rgb.height());
            if (entry.contains("hsi")) {
                s.hsi = load_stack(dir / entry.at("hsi").get<std::string>());
            } else if (require_ground_truth) {
                throw DataError("sample '" + s.id + "' has no ground-truth stack");
            }
            out.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw DataError(manifest_path.string() + ": bad manifest: " + e.what());
    }
    return out;
}

}  // namespace ssr::data
