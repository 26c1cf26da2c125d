#pragma once

#include <string>

#include "capsan/data.hpp"
#include "capsan/model.hpp"
#include "capsan/train.hpp"

namespace capsan {

// Everything a run needs, assembled from defaults, an optional config file,
// and command-line overrides (in that order).
struct RunConfig {
  ModelConfig model;
  std::string task_kind = "copy";
  int task_min_len = 4;
  int task_max_len = 8;
  int train_count = 2048;
  int val_count = 64;
  std::uint64_t task_seed = 1;
  TrainConfig train;
  std::string variant = "capsule";

  SyntheticTask train_task() const;
  SyntheticTask val_task() const;
  // Turns the variant string into routing flags and cross-checks ranges.
  void finalize();
};

// `key = value` lines, '#' comments, blank lines ignored. Unknown keys and
// unparsable values are rejected.
RunConfig parse_config_file(const std::string& path);
void apply_kv(RunConfig& rc, const std::string& key, const std::string& value);

// Full key=value dump of the resolved configuration, one pair per line.
std::string resolved_config(const RunConfig& rc);

}  // namespace capsan
