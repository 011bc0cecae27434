#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <string>

#include <json.hpp>

#include "ssr/cli.hpp"
#include "ssr/errors.hpp"

namespace ssr::cli::detail {

using nlohmann::json;

/// Typed view of one JSON object in a config, for error messages named by `where`.
class Section {
public:
    Section(const json& j, std::string where, const std::set<std::string>& known);

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    const json& raw(const std::string& key) const;

    template <class T>
    T get(const std::string& key, T fallback) const {
        if (!has(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + " has the wrong type");
        }
    }

    template <class T>
    T require(const std::string& key) const {
        if (!has(key)) throw ConfigError(where_ + "." + key + " is required");
        return get<T>(key, T{});
    }

    /// Sub-object or an empty object when absent.
    json object(const std::string& key) const;

    const std::string& where() const { return where_; }

private:
    json j_;
    std::string where_;
};

/// Resolves a config path against the config's directory.
std::filesystem::path resolve(const Config& cfg, const std::string& p);

/// Creates the parent directory of an output path.
void prepare_output(const std::filesystem::path& p);

/// A JSON object given inline or as a path to a JSON file.
json inline_or_file(const Config& cfg, const json& value, const std::string& where);

void log_resolved(std::ostream& log, const std::string& command, const json& resolved);

void write_json(const std::filesystem::path& path, const json& j);

/// Reads `schema_version` (default 1); any other version is a ConfigError.
int schema_version(const Section& s);

}  // namespace ssr::cli::detail
