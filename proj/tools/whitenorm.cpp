#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "whitenorm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"whitenorm: batch whitening layers and experiment harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gradcheck",
       "finite-difference gradient checks over a (d, m, group, mode) grid"},
      {"whiten", "whiten a dataset and report covariance diagnostics"},
      {"demo-axis-swap",
       "demonstrate stochastic axis swapping on a constructed batch pair"},
      {"train", "train a network, optionally sweeping learning rates"},
      {"conditioning",
       "compare Fisher conditioning across normalization variants"},
      {"bench", "per-batch forward/backward timings across group sizes"},
  };
  std::vector<CLI::App*> subcommands;
  for (const auto& [name, description] : commands) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "JSON config path")->required();
    sub->add_option("--out", out_dir, "output directory (default .)");
    sub->add_option("--seed", seed, "override the config seed");
    subcommands.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (std::size_t i = 0; i < subcommands.size(); ++i) {
    if (subcommands[i]->parsed()) {
      whitenorm::cli::CliOptions options;
      options.config_path = config_path;
      options.out_dir = out_dir;
      if (subcommands[i]->count("--seed") > 0) options.seed = seed;
      return whitenorm::cli::run_command(commands[i].first, options);
    }
  }
  return 2;
}
