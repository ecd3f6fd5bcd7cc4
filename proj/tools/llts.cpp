// llts: synth | train | eval | enhance | stats | gradcheck
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"
#include "llts/detector.hpp"
#include "llts/errors.hpp"

namespace {

using llts::cli::Settings;

struct Alias {
  const char* flag;
  const char* key;
};

// Convenience flags per command; every other setting is reachable through
// --set key=value or a config file.
const std::map<std::string, std::vector<Alias>>& aliases() {
  static const std::map<std::string, std::vector<Alias>> table{
      {"synth", {{"--seed", "seed"}, {"--n", "synth.n"}, {"--size", "synth.size"}, {"--profile", "synth.profile"}}},
      {"train",
       {{"--seed", "seed"},
        {"--data", "train.data"},
        {"--val", "train.val"},
        {"--epochs", "train.epochs"},
        {"--max-steps", "train.max_steps"},
        {"--input-size", "model.input_size"},
        {"--preset", "model.preset"}}},
      {"eval",
       {{"--data", "eval.data"},
        {"--checkpoint", "eval.checkpoint"},
        {"--predictions", "eval.predictions"},
        {"--conf", "eval.conf"},
        {"--iou", "eval.iou"}}},
      {"enhance", {{"--input", "enhance.input"}, {"--gamma", "enhance.gamma"}, {"--delta", "enhance.delta"}}},
      {"stats", {{"--data", "stats.data"}}},
      {"gradcheck", {{"--scope", "gradcheck.scope"}, {"--seeds", "gradcheck.seeds"}, {"--tol", "gradcheck.tol"}}},
  };
  return table;
}

struct Invocation {
  std::string config;
  std::string out;
  bool force = false;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;  // key -> value
  std::map<std::string, bool> toggles;             // module -> enabled
};

int run(int argc, char** argv) {
  CLI::App app{"Low-light traffic-sign detection toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::map<std::string, Invocation> inv;
  std::map<std::string, std::map<std::string, CLI::Option*>> opts;
  for (const std::string& name : llts::cli::command_names()) {
    Settings defaults = llts::cli::make_settings(name);
    std::string keys = "Settings (for --set or the config file):";
    for (const auto& spec : defaults.specs()) {
      keys += "\n  " + spec.key + " = " + (spec.value.empty() ? "<unset>" : spec.value);
      if (!spec.help.empty()) keys += "    # " + spec.help;
    }
    CLI::App* sub = app.add_subcommand(name);
    sub->footer(keys);
    Invocation& in = inv[name];
    sub->add_option("--config", in.config, "INI settings file, or a run.json to replay");
    sub->add_option("--out", in.out, name == "gradcheck" ? "Output directory (optional)" : "Output directory");
    sub->add_flag("--force", in.force, "Overwrite this command's outputs in a non-empty --out");
    sub->add_option("--set", in.sets, "Override one setting, key=value (repeatable)");
    for (const Alias& a : aliases().at(name))
      opts[name][a.key] = sub->add_option(a.flag, in.flag_values[a.key], "Sets " + std::string(a.key));
    if (name == "train")
      for (const char* m : {"pgfe", "hrfm", "mfia"}) {
        const std::string flag = std::string("--enable-") + m + ",!--no-" + m;
        opts[name][std::string("model.enable_") + m] =
            sub->add_flag(flag, in.toggles[m], std::string("Enable or disable the ") + m + " module");
      }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Invocation& in = inv[name];
  Settings s = llts::cli::make_settings(name);
  if (!in.config.empty()) s.load_file(in.config);
  for (const std::string& kv : in.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw llts::UsageError("--set expects key=value, got '" + kv + "'");
    s.set(kv.substr(0, eq), kv.substr(eq + 1), "--set");
  }
  for (const auto& [key, opt] : opts[name]) {
    if (opt->count() == 0) continue;
    if (key.starts_with("model.enable_"))
      s.set(key, in.toggles[key.substr(13)] ? "true" : "false", "flag");
    else
      s.set(key, in.flag_values[key], "flag");
  }
  return llts::cli::run_command(s, {in.out, in.force});
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const llts::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const llts::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const llts::ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const llts::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
