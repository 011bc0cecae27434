#include "config_util.hpp"

#include <fstream>

namespace ssr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
    if (dynamic_cast<const DataError*>(&e)) return kExitData;
    if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
    return kExitInternal;
}

Config Config::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    Config c;
    try {
        c.root = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    if (!c.root.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
    c.base_dir = path.parent_path();
    return c;
}

void Config::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' must look like key.path=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    std::string pointer;
    std::size_t start = 0;
    while (start <= key.size()) {
        const auto dot = key.find('.', start);
        const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        pointer += "/" + part;
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    try {
        root[json::json_pointer(pointer)] = value;
    } catch (const json::exception& e) {
        throw ConfigError("cannot apply override '" + key + "': " + e.what());
    }
}

namespace detail {

Section::Section(const json& j, std::string where, const std::set<std::string>& known)
    : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    for (const auto& [key, _] : j_.items()) {
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where_);
    }
}

const json& Section::raw(const std::string& key) const {
    if (!has(key)) throw ConfigError(where_ + "." + key + " is required");
    return j_.at(key);
}

json Section::object(const std::string& key) const {
    if (!has(key)) return json::object();
    if (!j_.at(key).is_object()) throw ConfigError(where_ + "." + key + " must be a JSON object");
    return j_.at(key);
}

fs::path resolve(const Config& cfg, const std::string& p) {
    if (p.empty()) throw ConfigError("empty path in config");
    const fs::path path(p);
    return path.is_absolute() ? path : cfg.base_dir / path;
}

void prepare_output(const fs::path& p) {
    if (!p.has_parent_path()) return;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw DataError("cannot create " + p.parent_path().string() + ": " + ec.message());
}

json inline_or_file(const Config& cfg, const json& value, const std::string& where) {
    if (value.is_object()) return value;
    if (!value.is_string()) throw ConfigError(where + " must be an object or a path to a JSON file");
    const auto path = resolve(cfg, value.get<std::string>());
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": invalid JSON: " + e.what());
    }
}

void log_resolved(std::ostream& log, const std::string& command, const json& resolved) {
    log << "[ssr " << command << "] resolved config: " << resolved.dump() << '\n';
}

void write_json(const fs::path& path, const json& j) {
    prepare_output(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("short write to " + path.string());
}

int schema_version(const Section& s) {
    const int v = s.get<int>("schema_version", 1);
    if (v != 1) throw ConfigError("unsupported schema_version " + std::to_string(v) + " (expected 1)");
    return v;
}

}  // namespace detail

}  // namespace ssr::cli
