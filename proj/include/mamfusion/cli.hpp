// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mamfusion/model.hpp"
#include "mamfusion/training.hpp"

namespace mamfusion {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::size_t checkpoint_every = 0;  // 0 keeps only the final checkpoint
  std::string data;                  // default manifest when --data is absent
};

// Unknown keys and invalid values raise ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& config);

struct Heatmap {
  Tensor tvt;  // N x M_f, head-averaged
  Tensor ttv;  // M_f x 1, head-averaged
};

Heatmap attention_heatmap(const FusedPair& fused);
// Full-precision CSV, one matrix row per line.
std::string heatmap_csv(const Tensor& map);
Tensor parse_heatmap_csv(const std::string& text);
// Binary PGM (P5); each row is scaled so that its maximum maps to 255.
std::vector<std::uint8_t> heatmap_pgm(const Tensor& map);

// Runs one subcommand: synth, train, eval or heatmap. args excludes argv[0].
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mamfusion
