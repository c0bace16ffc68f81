#pragma once

#include "seqmem/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace seqmem {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitDiverged = 3 };

struct CommandOptions {
  ExperimentConfig config;
  std::optional<std::filesystem::path> init_from;   // train: warm start from a checkpoint
  std::optional<std::filesystem::path> checkpoint;  // eval / probes / reconstruct
};

// Each command writes its artifacts under config.output_dir and its summary
// lines (key=value) to `out`. Errors propagate as exceptions.
void cmd_fit_laes(const CommandOptions& opts, std::ostream& out);
void cmd_train(const CommandOptions& opts, std::ostream& out);
void cmd_eval(const CommandOptions& opts, std::ostream& out);
void cmd_probe_grad(const CommandOptions& opts, std::ostream& out);
void cmd_probe_reco(const CommandOptions& opts, std::ostream& out);
void cmd_reconstruct(const CommandOptions& opts, std::ostream& out);

/// Dispatches by name and maps exceptions to exit codes, reporting on `err`.
int run_command(const std::string& name, const CommandOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace seqmem
