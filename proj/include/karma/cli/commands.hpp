#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "karma/cli/run_config.hpp"

namespace karma::cli {

/// Key-sorted report document. Every wall-clock value lives under "timings".
using Report = nlohmann::json;

std::string version();

/// Two-space indented JSON with a trailing newline.
std::string dump_report(const Report& report);

// Each command writes its files under cfg.out, including <command>_report.json, and
// returns the report. Progress goes to `log` unless cfg.quiet.
Report cmd_train(const RunConfig& cfg, std::ostream& log);
Report cmd_eval(const RunConfig& cfg, std::ostream& log);
Report cmd_predict(const RunConfig& cfg, std::ostream& log);
Report cmd_decompose(const RunConfig& cfg, std::ostream& log);
Report cmd_bench(const RunConfig& cfg, std::ostream& log);
Report cmd_synth(const RunConfig& cfg, std::ostream& log);
Report run_command(const RunConfig& cfg, std::ostream& log);

/// The karma command line without the program name. Returns the exit code: 0 on success,
/// 1 on a runtime failure, 2 on a usage or configuration error. `env_seed` stands in for
/// KARMA_SEED.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const char* env_seed = nullptr);

}  // namespace karma::cli
