#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace drnn {

/// Bad flags, config files or option values. Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Settings of one subcommand after defaults, config file and flags are
/// merged (later sources win).
struct RunConfig {
  std::string command;
  std::map<std::string, std::string> values;
  std::uint64_t seed = 1;
  std::filesystem::path out;
  bool force = false;

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma-separated list; empty entries dropped.
  std::vector<std::string> get_list(const std::string& key) const;

  /// key=value lines sorted by key, including command, seed and out.
  std::string resolved_text() const;
};

/// key = value lines; '#' starts a comment.
std::map<std::string, std::string> parse_config_text(std::string_view text, const std::string& source);

/// Known keys and defaults per subcommand.
const std::map<std::string, std::string>& default_settings(const std::string& command);

RunConfig resolve_config(const std::string& command, const std::filesystem::path& config_file,
                         std::span<const std::string> overrides, std::optional<std::uint64_t> seed,
                         std::optional<std::filesystem::path> out, bool force);

/// Exit codes: 0 success, 1 runtime failure, 2 configuration or parse error.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

int cmd_generate(const RunConfig& config, std::ostream& log);
int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_eval(const RunConfig& config, std::ostream& log);
int cmd_gradcheck(const RunConfig& config, std::ostream& log);
int cmd_alpha_study(const RunConfig& config, std::ostream& log);

}  // namespace drnn
