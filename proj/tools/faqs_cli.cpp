#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "faqs/config.hpp"
#include "faqs/engine.hpp"
#include "faqs/errors.hpp"
#include "faqs/hw_proxy.hpp"
#include "faqs/protocol.hpp"

using namespace faqs;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> threads;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "run configuration file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed (overrides the config)");
  cmd->add_option("--rounds", o.rounds, "number of rounds (overrides the config)");
  cmd->add_option("--threads", o.threads, "client worker threads (overrides the config)");
  cmd->add_option("--out", o.out, "output directory");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.rounds) c.rounds = *o.rounds;
  if (o.threads) c.threads = *o.threads;
  c.validate();
  return c;
}

void write_text(const std::string& dir, const std::string& name, const std::string& text) {
  std::filesystem::create_directories(dir);
  std::ofstream out(std::filesystem::path(dir) / name, std::ios::binary);
  if (!out) throw UsageError("cannot write " + name + " in '" + dir + "'");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated architecture and quantization search simulator"};
  app.require_subcommand(1);

  Overrides run_o;
  bool compare = false;
  auto* run = app.add_subcommand("run", "search rounds, masked exchange and finetuning");
  add_common(run, run_o);
  run->add_flag("--compare", compare, "also run the FedAvg baseline and compare communication");

  Overrides base_o;
  auto* baseline = app.add_subcommand("baseline", "FedAvg with a fixed block at 32 bits");
  add_common(baseline, base_o);

  std::size_t c_in = 0;
  double faqs_gamma = 0.51;
  auto* account = app.add_subcommand("account", "per-block communication of each method");
  account->add_option("--cin", c_in, "derive N from a block with this many input channels instead of the reference constants");
  account->add_option("--gamma", faqs_gamma, "mask fraction for the masked method")->check(CLI::Range(0.0, 1.0));

  std::string check_path;
  auto* validate = app.add_subcommand("validate-config", "parse and validate a configuration");
  validate->add_option("--config", check_path, "configuration file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const RunConfig cfg = resolve(run_o);
      const auto rep = engine::run_faqs(cfg);
      engine::write_report(rep, run_o.out);
      std::optional<engine::Report> fedavg;
      if (compare) {
        fedavg = engine::run_fedavg(cfg);
        engine::write_report(*fedavg, run_o.out, "baseline_");
      }
      const std::string summary = engine::summarize(rep, fedavg ? &*fedavg : nullptr);
      write_text(run_o.out, "summary.txt", summary);
      std::cout << summary;
    } else if (*baseline) {
      const RunConfig cfg = resolve(base_o);
      const auto rep = engine::run_fedavg(cfg);
      engine::write_report(rep, base_o.out, "baseline_");
      std::cout << engine::summarize(rep, nullptr);
    } else if (*account) {
      std::cout << engine::format_account(
          engine::account(c_in == 0 ? std::nullopt : std::optional<std::size_t>(c_in), faqs_gamma));
    } else if (*validate) {
      const RunConfig cfg = load_config(check_path);
      std::cout << "ok: " << cfg.clients << " clients, " << cfg.plan.layers.size() << " layers, " << cfg.rounds
                << " rounds\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
