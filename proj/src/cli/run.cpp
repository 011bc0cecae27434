#include <algorithm>
#include <functional>
#include <map>
#include <ostream>

#include <CLI11.hpp>

#include "config_util.hpp"

namespace ssr::cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
    using Command = std::function<int(const Config&, std::ostream&)>;
    const std::vector<std::tuple<std::string, std::string, Command>> commands{
        {"gen", "Generate a synthetic dataset", cmd_gen},
        {"train", "Train Model 1 or Model 2", cmd_train},
        {"eval", "Evaluate parameters, cross-validate, or build a transfer matrix", cmd_eval},
        {"reconstruct", "Metric surface reconstruction from structured light and two views", cmd_reconstruct},
        {"overlay", "Narrow-band or oxygen-saturation overlay on a point cloud", cmd_overlay},
        {"scene", "Write a synthetic reconstruction bundle", cmd_scene},
    };

    CLI::App app{"Spectral super-resolution and surface reconstruction toolkit", "ssr"};
    app.require_subcommand(1, 1);
    std::string config_path;
    std::vector<std::string> overrides;
    std::string init_model1;
    std::map<CLI::App*, Command> handlers;
    for (const auto& [name, help, fn] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", config_path, "JSON config file")->required();
        sub->add_option("--set", overrides, "Override a config value: key.path=value (repeatable)");
        if (name == "train") {
            sub->add_option("--init-model1", init_model1, "Trained Model-1 parameters (model 2)");
        }
        handlers[sub] = fn;
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        log << "ssr: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        CLI::App* chosen = app.get_subcommands().front();
        Config cfg = Config::load(config_path);
        for (const auto& o : overrides) cfg.apply_override(o);
        if (!init_model1.empty()) cfg.root["init_model1"] = init_model1;
        return handlers.at(chosen)(cfg, log);
    } catch (const std::exception& e) {
        const int code = exit_code_for(e);
        const char* kind = code == kExitConfig   ? "config error"
                           : code == kExitData   ? "data error"
                           : code == kExitNumerical ? "numerical error"
                                                    : "error";
        log << "ssr: " << kind << ": " << e.what() << '\n';
        return code;
    }
}

}  // namespace ssr::cli
