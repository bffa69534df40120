#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lr/runconfig.hpp"

namespace lr::cli {

// Stage-specific exit codes shared with the CLI surface.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingArtifact = 3;
inline constexpr int kExitEmptyAdversarialSet = 4;

// Stage names in pipeline order ("bench" only runs when eval.bench is set).
const std::vector<std::string>& stage_order();

// Runs one stage against the artifacts in `out_dir`. Returns an exit code;
// error messages (already naming the failing stage) go to `log`.
int run_stage(const RunConfig& cfg, const std::string& stage, const std::string& out_dir,
              std::ostream& log);

// Chains all stages; previously completed stages whose artifacts still match
// the recorded digests are skipped.
int run_pipeline(const RunConfig& cfg, const std::string& out_dir, std::ostream& log);

// Merges <dir>/report.csv files: one header, rows sorted by (attack,
// epsilon). Returns an exit code.
int merge_reports(const std::vector<std::string>& run_dirs, std::ostream& out, std::ostream& log);

}  // namespace lr::cli
