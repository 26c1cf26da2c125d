#include "capsan/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "capsan/errors.hpp"
#include "capsan/model.hpp"

namespace capsan {

Dataset generate(const SyntheticTask& task) {
  if (task.kind != "copy" && task.kind != "reverse" && task.kind != "sort")
    throw ConfigError("task.kind must be copy, reverse, or sort, got '" + task.kind + "'");
  const int content = task.vocab_size - (kEosId + 1);
  if (content < 2)
    throw ConfigError("vocab_size " + std::to_string(task.vocab_size) +
                      " leaves fewer than 2 content tokens after the reserved ids");
  if (task.min_len < 1 || task.max_len < task.min_len)
    throw ConfigError("task length range " + std::to_string(task.min_len) + ".." +
                      std::to_string(task.max_len) + " is invalid");
  if (task.count < 1) throw ConfigError("task.count must be positive");

  std::mt19937_64 rng(task.seed);
  Dataset ds;
  ds.examples.reserve(static_cast<std::size_t>(task.count));
  for (int i = 0; i < task.count; ++i) {
    const int len = task.min_len + static_cast<int>(rng() % (task.max_len - task.min_len + 1));
    std::vector<int> src(static_cast<std::size_t>(len));
    for (int& tok : src) tok = kEosId + 1 + static_cast<int>(rng() % content);
    std::vector<int> tgt = src;
    if (task.kind == "reverse") std::reverse(tgt.begin(), tgt.end());
    if (task.kind == "sort") std::sort(tgt.begin(), tgt.end());
    ds.examples.emplace_back(std::move(src), std::move(tgt));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write dataset: " + path);
  for (const auto& [src, tgt] : ds.examples) {
    for (std::size_t i = 0; i < src.size(); ++i) os << (i ? " " : "") << src[i];
    os << '\t';
    for (std::size_t i = 0; i < tgt.size(); ++i) os << (i ? " " : "") << tgt[i];
    os << '\n';
  }
  if (!os) throw InputError("write failed for dataset: " + path);
}

namespace {

std::vector<int> parse_ids(const std::string& text, const std::string& path, int line_no) {
  std::vector<int> ids;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      const int id = std::stoi(tok, &used);
      if (used != tok.size() || id < 0) throw std::invalid_argument(tok);
      ids.push_back(id);
    } catch (const std::exception&) {
      throw InputError(path + ":" + std::to_string(line_no) + ": bad token id '" + tok + "'");
    }
  }
  return ids;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open dataset: " + path);
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw InputError(path + ":" + std::to_string(line_no) + ": missing tab separator");
    std::vector<int> src = parse_ids(line.substr(0, tab), path, line_no);
    std::vector<int> tgt = parse_ids(line.substr(tab + 1), path, line_no);
    if (src.empty() || tgt.empty())
      throw InputError(path + ":" + std::to_string(line_no) + ": empty side");
    ds.examples.emplace_back(std::move(src), std::move(tgt));
  }
  if (ds.examples.empty()) throw InputError("dataset is empty: " + path);
  return ds;
}

}  // namespace capsan
