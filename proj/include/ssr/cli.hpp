#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssr::cli {

/// Exit codes: 0 success, 2 config/schema error, 3 data error, 4 numerical
/// failure, 1 anything else.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

int exit_code_for(const std::exception& e);

/// A parsed config file. Relative paths inside it resolve against `base_dir`,
/// the directory holding the file.
struct Config {
    nlohmann::json root = nlohmann::json::object();
    std::filesystem::path base_dir;

    /// Parses the file; invalid JSON or a non-object root is a ConfigError.
    static Config load(const std::filesystem::path& path);

    /// Applies `key.path=value` overrides. The value is parsed as JSON when
    /// possible and taken as a string otherwise.
    void apply_override(const std::string& assignment);
};

/// Each command validates its config (unknown keys are ConfigErrors), logs the
/// fully resolved config to `log`, does its work and returns the exit code.
int cmd_gen(const Config& cfg, std::ostream& log);
int cmd_train(const Config& cfg, std::ostream& log);
int cmd_eval(const Config& cfg, std::ostream& log);
int cmd_reconstruct(const Config& cfg, std::ostream& log);
int cmd_overlay(const Config& cfg, std::ostream& log);
/// Synthetic reconstruction bundle: camera, rig, frames, spots and a ready
/// reconstruct config.
int cmd_scene(const Config& cfg, std::ostream& log);

/// Full command line: `<command> --config FILE [--set key=value]... [flags]`.
/// Never throws; errors are reported on `log`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);

}  // namespace ssr::cli
