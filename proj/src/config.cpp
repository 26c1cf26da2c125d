#include "capsan/config.hpp"

#include <fstream>
#include <sstream>

#include "capsan/errors.hpp"

namespace capsan {

SyntheticTask RunConfig::train_task() const {
  SyntheticTask t;
  t.kind = task_kind;
  t.vocab_size = model.vocab_size;
  t.min_len = task_min_len;
  t.max_len = task_max_len;
  t.count = train_count;
  t.seed = task_seed;
  return t;
}

SyntheticTask RunConfig::val_task() const {
  SyntheticTask t = train_task();
  t.count = val_count;
  t.seed = task_seed ^ 0xd1b54a32d192ed03ULL;
  return t;
}

void RunConfig::finalize() {
  if (variant == "vanilla") {
    model.vertical = false;
    model.horizontal = false;
  } else if (variant != "capsule") {
    throw ConfigError("variant must be vanilla or capsule, got '" + variant + "'");
  }
  if (task_max_len + 1 > model.max_len)
    throw ConfigError("task.max_len " + std::to_string(task_max_len) +
                      " does not fit model.max_len " + std::to_string(model.max_len) +
                      " with BOS prepended");
  model.validate();
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " wants an integer, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " wants a non-negative integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " wants a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key " + key + " wants a boolean, got '" + value + "'");
}

std::pair<int, int> parse_range(const std::string& key, const std::string& value) {
  const auto dots = value.find("..");
  if (dots == std::string::npos)
    throw ConfigError("config key " + key + " wants a range like 1..2, got '" + value + "'");
  return {parse_int(key, value.substr(0, dots)), parse_int(key, value.substr(dots + 2))};
}

}  // namespace

void apply_kv(RunConfig& rc, const std::string& key, const std::string& value) {
  if (key == "model.d") rc.model.d = parse_int(key, value);
  else if (key == "model.heads") rc.model.heads = parse_int(key, value);
  else if (key == "model.enc_layers") rc.model.enc_layers = parse_int(key, value);
  else if (key == "model.dec_layers") rc.model.dec_layers = parse_int(key, value);
  else if (key == "model.d_ff") rc.model.d_ff = parse_int(key, value);
  else if (key == "model.vocab_size") rc.model.vocab_size = parse_int(key, value);
  else if (key == "model.max_len") rc.model.max_len = parse_int(key, value);
  else if (key == "model.routing_iters") rc.model.routing_iters = parse_int(key, value);
  else if (key == "model.dropout") rc.model.dropout = parse_double(key, value);
  else if (key == "model.vertical") rc.model.vertical = parse_bool(key, value);
  else if (key == "model.horizontal") rc.model.horizontal = parse_bool(key, value);
  else if (key == "model.routing_in_encoder") rc.model.routing_in_encoder = parse_bool(key, value);
  else if (key == "model.routing_in_decoder") rc.model.routing_in_decoder = parse_bool(key, value);
  else if (key == "model.routing_layers") {
    auto [lo, hi] = parse_range(key, value);
    rc.model.routing_layer_lo = lo;
    rc.model.routing_layer_hi = hi;
  } else if (key == "model.detach_coupling") rc.model.detach_coupling = parse_bool(key, value);
  else if (key == "task.kind") rc.task_kind = value;
  else if (key == "task.min_len") rc.task_min_len = parse_int(key, value);
  else if (key == "task.max_len") rc.task_max_len = parse_int(key, value);
  else if (key == "task.train_count") rc.train_count = parse_int(key, value);
  else if (key == "task.val_count") rc.val_count = parse_int(key, value);
  else if (key == "task.seed") rc.task_seed = parse_u64(key, value);
  else if (key == "train.steps") rc.train.steps = parse_int(key, value);
  else if (key == "train.batch") rc.train.batch = parse_int(key, value);
  else if (key == "train.lr_factor") rc.train.lr_factor = parse_double(key, value);
  else if (key == "train.warmup") rc.train.warmup = parse_int(key, value);
  else if (key == "train.seed") rc.train.seed = parse_u64(key, value);
  else if (key == "train.val_every") rc.train.val_every = parse_int(key, value);
  else if (key == "train.grad_accum") rc.train.grad_accum = parse_int(key, value);
  else if (key == "train.label_smoothing") rc.train.label_smoothing = parse_double(key, value);
  else if (key == "variant") rc.variant = value;
  else throw ConfigError("unknown config key: " + key);
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  RunConfig rc;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    apply_kv(rc, key, value);
  }
  return rc;
}

std::string resolved_config(const RunConfig& rc) {
  std::ostringstream os;
  os.precision(17);
  os << "variant = " << rc.variant << "\n";
  os << "model.d = " << rc.model.d << "\n";
  os << "model.heads = " << rc.model.heads << "\n";
  os << "model.enc_layers = " << rc.model.enc_layers << "\n";
  os << "model.dec_layers = " << rc.model.dec_layers << "\n";
  os << "model.d_ff = " << rc.model.d_ff << "\n";
  os << "model.vocab_size = " << rc.model.vocab_size << "\n";
  os << "model.max_len = " << rc.model.max_len << "\n";
  os << "model.routing_iters = " << rc.model.routing_iters << "\n";
  os << "model.dropout = " << rc.model.dropout << "\n";
  os << "model.vertical = " << (rc.model.vertical ? "true" : "false") << "\n";
  os << "model.horizontal = " << (rc.model.horizontal ? "true" : "false") << "\n";
  os << "model.routing_in_encoder = " << (rc.model.routing_in_encoder ? "true" : "false") << "\n";
  os << "model.routing_in_decoder = " << (rc.model.routing_in_decoder ? "true" : "false") << "\n";
  os << "model.routing_layers = " << rc.model.routing_layer_lo << ".."
     << (rc.model.routing_layer_hi == 0 ? rc.model.enc_layers : rc.model.routing_layer_hi) << "\n";
  os << "model.detach_coupling = " << (rc.model.detach_coupling ? "true" : "false") << "\n";
  os << "task.kind = " << rc.task_kind << "\n";
  os << "task.min_len = " << rc.task_min_len << "\n";
  os << "task.max_len = " << rc.task_max_len << "\n";
  os << "task.train_count = " << rc.train_count << "\n";
  os << "task.val_count = " << rc.val_count << "\n";
  os << "task.seed = " << rc.task_seed << "\n";
  os << "train.steps = " << rc.train.steps << "\n";
  os << "train.batch = " << rc.train.batch << "\n";
  os << "train.lr_factor = " << rc.train.lr_factor << "\n";
  os << "train.warmup = " << rc.train.warmup << "\n";
  os << "train.seed = " << rc.train.seed << "\n";
  os << "train.val_every = " << rc.train.val_every << "\n";
  os << "train.grad_accum = " << rc.train.grad_accum << "\n";
  os << "train.label_smoothing = " << rc.train.label_smoothing << "\n";
  return os.str();
}

}  // namespace capsan
