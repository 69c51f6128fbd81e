#ifndef WHITENORM_CLI_HPP
#define WHITENORM_CLI_HPP

#include <cstdint>
#include <optional>
#include <string>

namespace whitenorm::cli {

struct CliOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;  // overrides the config seed
};

// Every command returns its process exit code: 0 success, 1 assertion or
// tolerance failure, 2 config error. Reports go to stdout and to files
// under out_dir.
int run_gradcheck(const CliOptions& options);
int run_whiten(const CliOptions& options);
int run_demo_axis_swap(const CliOptions& options);
int run_train(const CliOptions& options);
int run_conditioning(const CliOptions& options);
int run_bench(const CliOptions& options);

// Dispatch by subcommand name; unknown names return 2.
int run_command(const std::string& name, const CliOptions& options);

}  // namespace whitenorm::cli

#endif  // WHITENORM_CLI_HPP
