#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "capsan/attention.hpp"
#include "capsan/routing_san.hpp"
#include "capsan/tensor.hpp"

namespace capsan {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;

struct ModelConfig {
  int d = 64;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int d_ff = 128;
  int vocab_size = 32;
  int max_len = 24;
  int routing_iters = 3;
  double dropout = 0.0;

  bool vertical = true;
  bool horizontal = true;
  bool routing_in_encoder = true;
  bool routing_in_decoder = true;
  // 1-based inclusive encoder layer range; hi = 0 means "through the last layer".
  int routing_layer_lo = 1;
  int routing_layer_hi = 0;
  bool detach_coupling = false;

  static ModelConfig toy();
  static ModelConfig base();
  static ModelConfig big();

  void validate() const;
  bool routing_active(int enc_layer_1based) const;
  bool any_encoder_routing() const;
  bool decoder_routing() const { return routing_in_decoder && horizontal; }
};

// Ordered name -> tensor view of every trainable parameter.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

struct LayerNorm {
  Tensor gamma;  // (1, d)
  Tensor beta;   // (1, d)
  static LayerNorm init(int d);
  Tensor forward(const Tensor& x) const;
};

struct FeedForward {
  Tensor w1, b1;  // (d, d_ff), (1, d_ff)
  Tensor w2, b2;  // (d_ff, d), (1, d)
  static FeedForward init(int d, int d_ff, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
};

struct EncoderLayer {
  MultiHeadProjection attn;
  bool has_gate = false;
  AcceptanceGate gate;
  LayerNorm ln_attn, ln_ff;
  FeedForward ff;
};

struct DecoderLayer {
  MultiHeadProjection self_attn;
  MultiHeadProjection cross_attn;
  LayerNorm ln_self, ln_cross, ln_ff;
  FeedForward ff;
};

// Post-softmax attention weights collected during a forward pass, one
// (H, L, L) cube per encoder layer.
struct AttentionTrace {
  std::vector<Tensor> encoder_weights;
};

class Seq2SeqModel {
 public:
  explicit Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // (L_src, d) encoder output; trace is optional, rng enables dropout.
  Tensor encode(const std::vector<int>& src, std::mt19937_64* rng = nullptr,
                AttentionTrace* trace = nullptr) const;
  // (len(tgt_prefix), vocab) next-token logits under teacher forcing.
  Tensor decode(const Tensor& memory, const std::vector<int>& tgt_prefix,
                std::mt19937_64* rng = nullptr) const;
  Tensor forward(const std::vector<int>& src, const std::vector<int>& tgt_prefix,
                 std::mt19937_64* rng = nullptr) const;

  // Argmax decoding from BOS until EOS or max_len; returns content tokens only.
  std::vector<int> greedy_decode(const std::vector<int>& src) const;

  ParamList parameters() const;
  std::size_t parameter_count() const;

  using NamedBlobs = std::vector<std::pair<std::string, std::vector<double>>>;

  // Versioned container: config JSON, an opaque extra payload for the caller,
  // every model parameter by name, plus any caller-supplied named blobs.
  void save(const std::string& path, const std::string& extra_json = "",
            const NamedBlobs& extra_tensors = {}) const;
  static struct LoadedCheckpoint load(const std::string& path);

 private:
  void check_tokens(const std::vector<int>& seq, const char* what) const;
  Tensor embed(const std::vector<int>& seq, const Tensor& table,
               std::mt19937_64* rng) const;

  ModelConfig cfg_;
  Tensor src_embed_, tgt_embed_;  // (vocab, d)
  Tensor pos_enc_;                // (max_len, d), fixed
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  LayerNorm enc_final_, dec_final_;
  Tensor out_w_, out_b_;  // (d, vocab), (1, vocab)
};

struct LoadedCheckpoint {
  Seq2SeqModel model;
  std::string extra_json;
  Seq2SeqModel::NamedBlobs extra_tensors;
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& json_text);

}  // namespace capsan
