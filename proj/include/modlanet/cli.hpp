#pragma once

#include <string>

namespace modlanet::cli {

// Exit codes shared by every command.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kDiverged = 3;
inline constexpr int kSuiteFailure = 4;

/// Commands take a merged JSON config (file keys overridden by flags, done
/// by the binary's argument parser). Unknown keys are rejected. Each command
/// echoes its effective config into the artifacts it writes.
int cmd_gen(const std::string& config_json);
int cmd_train(const std::string& config_json);
int cmd_eval(const std::string& config_json);
int cmd_extend(const std::string& config_json);
int cmd_check(const std::string& config_json);

/// Dispatch by name; unknown command is a config error.
int run_command(const std::string& command, const std::string& config_json);

}  // namespace modlanet::cli
