#include "capsan/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "capsan/errors.hpp"
#include "capsan/init.hpp"
#include "json.hpp"

namespace capsan {

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::base() {
  ModelConfig c;
  c.d = 512;
  c.heads = 8;
  c.enc_layers = 6;
  c.dec_layers = 6;
  c.d_ff = 2048;
  c.vocab_size = 32000;
  c.max_len = 256;
  c.dropout = 0.1;
  return c;
}

ModelConfig ModelConfig::big() {
  ModelConfig c = base();
  c.d = 1024;
  c.heads = 16;
  c.d_ff = 4096;
  c.dropout = 0.3;
  return c;
}

void ModelConfig::validate() const {
  if (d < 1) throw ConfigError("model.d must be positive");
  if (heads < 1 || d % heads != 0)
    throw ConfigError("model.heads must divide model.d (" + std::to_string(heads) + " vs " +
                      std::to_string(d) + ")");
  if (enc_layers < 1 || dec_layers < 1)
    throw ConfigError("model.enc_layers and model.dec_layers must be positive");
  if (d_ff < 1) throw ConfigError("model.d_ff must be positive");
  if (vocab_size <= kEosId + 1)
    throw ConfigError("model.vocab_size must exceed the reserved ids, got " +
                      std::to_string(vocab_size));
  if (max_len < 2) throw ConfigError("model.max_len must be at least 2");
  if (routing_iters < 1) throw ConfigError("model.routing_iters must be at least 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout must be in [0,1)");
  const int hi = routing_layer_hi == 0 ? enc_layers : routing_layer_hi;
  if (routing_layer_lo < 1 || routing_layer_lo > enc_layers || hi < routing_layer_lo ||
      hi > enc_layers)
    throw ConfigError("model.routing_layers range " + std::to_string(routing_layer_lo) + ".." +
                      std::to_string(routing_layer_hi) + " outside 1.." +
                      std::to_string(enc_layers));
}

bool ModelConfig::routing_active(int enc_layer_1based) const {
  if (!routing_in_encoder || !(vertical || horizontal)) return false;
  const int hi = routing_layer_hi == 0 ? enc_layers : routing_layer_hi;
  return enc_layer_1based >= routing_layer_lo && enc_layer_1based <= hi;
}

bool ModelConfig::any_encoder_routing() const {
  for (int i = 1; i <= enc_layers; ++i)
    if (routing_active(i)) return true;
  return false;
}

LayerNorm LayerNorm::init(int d) {
  LayerNorm ln;
  ln.gamma = Tensor::full({1, d}, 1.0, true);
  ln.beta = Tensor::zeros({1, d}, true);
  return ln;
}

Tensor LayerNorm::forward(const Tensor& x) const {
  const int d = x.dim(-1);
  Tensor mu = scale(reduce_sum(x, -1, true), 1.0 / d);
  Tensor centered = sub(x, mu);
  Tensor var = scale(reduce_sum(mul(centered, centered), -1, true), 1.0 / d);
  Tensor normed = div(centered, sqrt_elem(add_scalar(var, 1e-6)));
  return add(mul(normed, gamma), beta);
}

FeedForward FeedForward::init(int d, int d_ff, std::mt19937_64& rng) {
  FeedForward ff;
  ff.w1 = xavier_uniform({d, d_ff}, d, d_ff, rng);
  ff.b1 = Tensor::zeros({1, d_ff}, true);
  ff.w2 = xavier_uniform({d_ff, d}, d_ff, d, rng);
  ff.b2 = Tensor::zeros({1, d}, true);
  return ff;
}

Tensor FeedForward::forward(const Tensor& x) const {
  return add(matmul(relu(add(matmul(x, w1), b1)), w2), b2);
}

namespace {

Tensor sinusoidal_positions(int max_len, int d) {
  Tensor pe = Tensor::zeros({max_len, d});
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos * std::exp(-std::log(10000.0) * i / d);
      pe.at({pos, i}) = std::sin(angle);
      if (i + 1 < d) pe.at({pos, i + 1}) = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace

Seq2SeqModel::Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  src_embed_ = xavier_uniform({cfg_.vocab_size, cfg_.d}, cfg_.vocab_size, cfg_.d, rng);
  tgt_embed_ = xavier_uniform({cfg_.vocab_size, cfg_.d}, cfg_.vocab_size, cfg_.d, rng);
  pos_enc_ = sinusoidal_positions(cfg_.max_len, cfg_.d);

  enc_.reserve(static_cast<std::size_t>(cfg_.enc_layers));
  for (int i = 0; i < cfg_.enc_layers; ++i) {
    EncoderLayer layer;
    layer.attn = MultiHeadProjection::init(cfg_.d, cfg_.heads, rng);
    layer.has_gate = cfg_.vertical && cfg_.routing_in_encoder && cfg_.routing_active(i + 1);
    if (layer.has_gate) layer.gate = AcceptanceGate::init(cfg_.heads, rng);
    layer.ln_attn = LayerNorm::init(cfg_.d);
    layer.ln_ff = LayerNorm::init(cfg_.d);
    layer.ff = FeedForward::init(cfg_.d, cfg_.d_ff, rng);
    enc_.push_back(std::move(layer));
  }
  enc_final_ = LayerNorm::init(cfg_.d);

  dec_.reserve(static_cast<std::size_t>(cfg_.dec_layers));
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    DecoderLayer layer;
    layer.self_attn = MultiHeadProjection::init(cfg_.d, cfg_.heads, rng);
    layer.cross_attn = MultiHeadProjection::init(cfg_.d, cfg_.heads, rng);
    layer.ln_self = LayerNorm::init(cfg_.d);
    layer.ln_cross = LayerNorm::init(cfg_.d);
    layer.ln_ff = LayerNorm::init(cfg_.d);
    layer.ff = FeedForward::init(cfg_.d, cfg_.d_ff, rng);
    dec_.push_back(std::move(layer));
  }
  dec_final_ = LayerNorm::init(cfg_.d);

  out_w_ = xavier_uniform({cfg_.d, cfg_.vocab_size}, cfg_.d, cfg_.vocab_size, rng);
  out_b_ = Tensor::zeros({1, cfg_.vocab_size}, true);
}

void Seq2SeqModel::check_tokens(const std::vector<int>& seq, const char* what) const {
  if (seq.empty()) throw InputError(std::string(what) + " sequence is empty");
  if (static_cast<int>(seq.size()) > cfg_.max_len)
    throw InputError(std::string(what) + " sequence length " + std::to_string(seq.size()) +
                     " exceeds max_len " + std::to_string(cfg_.max_len));
  for (int id : seq) {
    if (id < 0 || id >= cfg_.vocab_size)
      throw InputError(std::string(what) + " token " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
  }
}

Tensor Seq2SeqModel::embed(const std::vector<int>& seq, const Tensor& table,
                           std::mt19937_64* rng) const {
  Tensor x = scale(gather_rows(table, seq), std::sqrt(static_cast<double>(cfg_.d)));
  x = add(x, slice(pos_enc_, 0, 0, static_cast<int>(seq.size())));
  return dropout(x, cfg_.dropout, rng);
}

Tensor Seq2SeqModel::encode(const std::vector<int>& src, std::mt19937_64* rng,
                            AttentionTrace* trace) const {
  check_tokens(src, "source");
  Tensor x = embed(src, src_embed_, rng);
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    const EncoderLayer& layer = enc_[i];
    const bool active = cfg_.routing_active(static_cast<int>(i) + 1);
    RoutingFlags flags;
    flags.vertical = active && cfg_.vertical;
    flags.horizontal = active && cfg_.horizontal;
    flags.iterations = cfg_.routing_iters;
    flags.detach_coupling = cfg_.detach_coupling;

    Tensor weights;
    Tensor attn_out =
        capsule_san_forward(layer.ln_attn.forward(x), layer.attn,
                            layer.has_gate ? &layer.gate : nullptr, flags, false,
                            trace ? &weights : nullptr, cfg_.dropout, rng);
    if (trace) trace->encoder_weights.push_back(weights);
    x = add(x, dropout(attn_out, cfg_.dropout, rng));
    x = add(x, dropout(layer.ff.forward(layer.ln_ff.forward(x)), cfg_.dropout, rng));
  }
  return enc_final_.forward(x);
}

Tensor Seq2SeqModel::decode(const Tensor& memory, const std::vector<int>& tgt_prefix,
                            std::mt19937_64* rng) const {
  check_tokens(tgt_prefix, "target");
  Tensor y = embed(tgt_prefix, tgt_embed_, rng);
  for (const DecoderLayer& layer : dec_) {
    RoutingFlags flags;
    flags.vertical = false;
    flags.horizontal = cfg_.decoder_routing();
    flags.iterations = cfg_.routing_iters;
    flags.detach_coupling = cfg_.detach_coupling;

    Tensor self_out = capsule_san_forward(layer.ln_self.forward(y), layer.self_attn, nullptr,
                                          flags, true, nullptr, cfg_.dropout, rng);
    y = add(y, dropout(self_out, cfg_.dropout, rng));

    Tensor yn = layer.ln_cross.forward(y);
    Tensor q = project_heads(yn, layer.cross_attn.wq);
    Tensor k = project_heads(memory, layer.cross_attn.wk);
    Tensor v = project_heads(memory, layer.cross_attn.wv);
    Tensor cross_out =
        attend(attention_logits(q, k), v, layer.cross_attn, nullptr, cfg_.dropout, rng);
    y = add(y, dropout(cross_out, cfg_.dropout, rng));

    y = add(y, dropout(layer.ff.forward(layer.ln_ff.forward(y)), cfg_.dropout, rng));
  }
  return add(matmul(dec_final_.forward(y), out_w_), out_b_);
}

Tensor Seq2SeqModel::forward(const std::vector<int>& src, const std::vector<int>& tgt_prefix,
                             std::mt19937_64* rng) const {
  return decode(encode(src, rng), tgt_prefix, rng);
}

std::vector<int> Seq2SeqModel::greedy_decode(const std::vector<int>& src) const {
  NoGradGuard ng;
  Tensor memory = encode(src);
  std::vector<int> prefix{kBosId};
  while (static_cast<int>(prefix.size()) < cfg_.max_len) {
    Tensor logits = decode(memory, prefix);
    const int last = logits.dim(0) - 1;
    int best = 0;
    double best_val = logits.at({last, 0});
    for (int v = 1; v < cfg_.vocab_size; ++v) {
      const double val = logits.at({last, v});
      if (val > best_val) {
        best_val = val;
        best = v;
      }
    }
    if (best == kEosId) break;
    prefix.push_back(best);
  }
  return {prefix.begin() + 1, prefix.end()};
}

namespace {

void push_projection(ParamList& out, const std::string& prefix, const MultiHeadProjection& p) {
  out.emplace_back(prefix + ".wq", p.wq);
  out.emplace_back(prefix + ".wk", p.wk);
  out.emplace_back(prefix + ".wv", p.wv);
  out.emplace_back(prefix + ".wo", p.wo);
  out.emplace_back(prefix + ".bo", p.bo);
}

void push_norm(ParamList& out, const std::string& prefix, const LayerNorm& ln) {
  out.emplace_back(prefix + ".gamma", ln.gamma);
  out.emplace_back(prefix + ".beta", ln.beta);
}

void push_ff(ParamList& out, const std::string& prefix, const FeedForward& ff) {
  out.emplace_back(prefix + ".w1", ff.w1);
  out.emplace_back(prefix + ".b1", ff.b1);
  out.emplace_back(prefix + ".w2", ff.w2);
  out.emplace_back(prefix + ".b2", ff.b2);
}

}  // namespace

ParamList Seq2SeqModel::parameters() const {
  ParamList out;
  out.emplace_back("src_embed", src_embed_);
  out.emplace_back("tgt_embed", tgt_embed_);
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    const std::string prefix = "enc." + std::to_string(i);
    push_projection(out, prefix + ".attn", enc_[i].attn);
    if (enc_[i].has_gate) {
      out.emplace_back(prefix + ".gate.w", enc_[i].gate.w);
      out.emplace_back(prefix + ".gate.b", enc_[i].gate.b);
    }
    push_norm(out, prefix + ".ln_attn", enc_[i].ln_attn);
    push_norm(out, prefix + ".ln_ff", enc_[i].ln_ff);
    push_ff(out, prefix + ".ff", enc_[i].ff);
  }
  push_norm(out, "enc_final", enc_final_);
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    const std::string prefix = "dec." + std::to_string(i);
    push_projection(out, prefix + ".self", dec_[i].self_attn);
    push_projection(out, prefix + ".cross", dec_[i].cross_attn);
    push_norm(out, prefix + ".ln_self", dec_[i].ln_self);
    push_norm(out, prefix + ".ln_cross", dec_[i].ln_cross);
    push_norm(out, prefix + ".ln_ff", dec_[i].ln_ff);
    push_ff(out, prefix + ".ff", dec_[i].ff);
  }
  push_norm(out, "dec_final", dec_final_);
  out.emplace_back("out.w", out_w_);
  out.emplace_back("out.b", out_b_);
  return out;
}

std::size_t Seq2SeqModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : parameters()) total += t.size();
  return total;
}

// ---------------------------------------------------------------------------
// config JSON and checkpoint container
// ---------------------------------------------------------------------------

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["d"] = cfg.d;
  j["heads"] = cfg.heads;
  j["enc_layers"] = cfg.enc_layers;
  j["dec_layers"] = cfg.dec_layers;
  j["d_ff"] = cfg.d_ff;
  j["vocab_size"] = cfg.vocab_size;
  j["max_len"] = cfg.max_len;
  j["routing_iters"] = cfg.routing_iters;
  j["dropout"] = cfg.dropout;
  j["vertical"] = cfg.vertical;
  j["horizontal"] = cfg.horizontal;
  j["routing_in_encoder"] = cfg.routing_in_encoder;
  j["routing_in_decoder"] = cfg.routing_in_decoder;
  j["routing_layer_lo"] = cfg.routing_layer_lo;
  j["routing_layer_hi"] = cfg.routing_layer_hi;
  j["detach_coupling"] = cfg.detach_coupling;
  return j.dump();
}

ModelConfig config_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  ModelConfig cfg;
  cfg.d = j.at("d").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.enc_layers = j.at("enc_layers").get<int>();
  cfg.dec_layers = j.at("dec_layers").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.routing_iters = j.at("routing_iters").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.vertical = j.at("vertical").get<bool>();
  cfg.horizontal = j.at("horizontal").get<bool>();
  cfg.routing_in_encoder = j.at("routing_in_encoder").get<bool>();
  cfg.routing_in_decoder = j.at("routing_in_decoder").get<bool>();
  cfg.routing_layer_lo = j.at("routing_layer_lo").get<int>();
  cfg.routing_layer_hi = j.at("routing_layer_hi").get<int>();
  cfg.detach_coupling = j.at("detach_coupling").get<bool>();
  return cfg;
}

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'A', 'P', 'S', 'A', 'N', '0', '1'};

void write_u64(std::ofstream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_string(std::ofstream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_blob(std::ofstream& os, const std::string& name, const Shape& shape,
                const std::vector<double>& data) {
  write_string(os, name);
  write_u64(os, shape.size());
  for (int e : shape) write_u64(os, static_cast<std::uint64_t>(e));
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
}

std::uint64_t read_u64(std::ifstream& is, const std::string& path) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw InputError("checkpoint truncated: " + path);
  return v;
}

std::string read_string(std::ifstream& is, const std::string& path) {
  const std::uint64_t len = read_u64(is, path);
  std::string s(len, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(len)))
    throw InputError("checkpoint truncated: " + path);
  return s;
}

}  // namespace

void Seq2SeqModel::save(const std::string& path, const std::string& extra_json,
                        const NamedBlobs& extra_tensors) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write checkpoint: " + path);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);

  write_string(os, config_to_json(cfg_));
  write_string(os, extra_json);

  ParamList params = parameters();
  write_u64(os, params.size() + extra_tensors.size());
  for (const auto& [name, t] : params) write_blob(os, name, t.shape(), t.data());
  for (const auto& [name, data] : extra_tensors)
    write_blob(os, name, {static_cast<int>(data.size())}, data);
  if (!os) throw InputError("write failed for checkpoint: " + path);
}

LoadedCheckpoint Seq2SeqModel::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint: " + path);
  char magic[sizeof kCheckpointMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw InputError("not a checkpoint file: " + path);

  const std::string config_json = read_string(is, path);
  const std::string extra_json = read_string(is, path);

  ModelConfig cfg;
  try {
    cfg = config_from_json(config_json);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad checkpoint config in " + path + ": " + e.what());
  }

  LoadedCheckpoint out{Seq2SeqModel(cfg, 0), extra_json, {}};

  ParamList params = out.model.parameters();
  std::vector<bool> filled(params.size(), false);
  const std::uint64_t count = read_u64(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = read_string(is, path);
    const std::uint64_t rank = read_u64(is, path);
    Shape shape;
    std::size_t numel = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<int>(read_u64(is, path)));
      numel *= static_cast<std::size_t>(shape.back());
    }
    std::vector<double> data(numel);
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(numel * sizeof(double))))
      throw InputError("checkpoint truncated: " + path);

    auto it = std::find_if(params.begin(), params.end(),
                           [&name](const auto& p) { return p.first == name; });
    if (it == params.end()) {
      out.extra_tensors.emplace_back(name, std::move(data));
      continue;
    }
    if (it->second.shape() != shape)
      throw InputError("checkpoint tensor " + name + " has shape " + shape_str(shape) +
                       ", model wants " + shape_str(it->second.shape()));
    it->second.data() = std::move(data);
    filled[static_cast<std::size_t>(it - params.begin())] = true;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!filled[i]) throw InputError("checkpoint missing tensor " + params[i].first);
  }
  return out;
}

}  // namespace capsan
