#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>

#include "cafe/experiment.hpp"

namespace {

void print_error(cafe::ErrorCode code, const std::string& msg) {
  nlohmann::ordered_json j;
  j["error"] = std::string(cafe::code_name(code));
  j["exit_code"] = static_cast<int>(code);
  j["message"] = msg;
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vertical federated learning gradient-leakage lab"};
  app.require_subcommand(1);
  std::string config_path, preset, out_dir = "cafe_out";
  std::uint64_t seed = 0;
  bool quiet = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config file (TOML)");
    sub->add_option("--preset", preset, "Preset name")->check(CLI::IsMember(cafe::preset_names()));
    sub->add_option("--seed", seed, "Run seed (overrides the config)");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_flag("--quiet", quiet, "Do not echo warnings");
  };
  auto* train = app.add_subcommand("train", "Run VFL training and write round logs");
  auto* attack = app.add_subcommand("attack", "Run an attack and write traces, images and metrics");
  auto* theory = app.add_subcommand("verify-theory", "Check Hessian spectra and recovery bounds");
  auto* sweep = app.add_subcommand("sweep", "Run an attack over one config axis");
  for (auto* s : {train, attack, theory, sweep}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error(cafe::ErrorCode::usage, e.what());
    return static_cast<int>(cafe::ErrorCode::usage);
  }

  try {
    cafe::set_warning_echo(!quiet);
    auto cfg = cafe::load_config(preset, config_path);
    if (seed) {
      cfg.raw.set("seed", std::to_string(seed));
      cfg = cafe::make_config(cfg.raw);
    }
    cafe::RunContext ctx{out_dir, app.get_subcommands().front()->get_name()};
    if (train->parsed()) return cafe::cmd_train(cfg, ctx);
    if (attack->parsed()) return cafe::cmd_attack(cfg, ctx);
    if (theory->parsed()) return cafe::cmd_verify_theory(cfg, ctx);
    return cafe::cmd_sweep(cfg, ctx);
  } catch (const cafe::Error& e) {
    print_error(e.code(), e.what());
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    print_error(cafe::ErrorCode::internal, e.what());
    return static_cast<int>(cafe::ErrorCode::internal);
  }
}
