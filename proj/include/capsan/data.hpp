#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace capsan {

// Self-checking sequence tasks: copy, reverse, sort. Token ids 0..2 are
// reserved, content tokens are drawn from [3, vocab_size).
struct SyntheticTask {
  std::string kind = "copy";
  int vocab_size = 32;
  int min_len = 4;
  int max_len = 8;
  int count = 2048;
  std::uint64_t seed = 1;
};

struct Dataset {
  std::vector<std::pair<std::vector<int>, std::vector<int>>> examples;
  std::size_t size() const { return examples.size(); }
};

Dataset generate(const SyntheticTask& task);

// One example per line: space-separated source ids, a tab, space-separated
// target ids.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace capsan
