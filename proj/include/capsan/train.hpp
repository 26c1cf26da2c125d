#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "capsan/data.hpp"
#include "capsan/metrics.hpp"
#include "capsan/model.hpp"

namespace capsan {

struct TrainConfig {
  int steps = 3000;
  int batch = 16;
  double lr_factor = 1.0;
  int warmup = 400;
  std::uint64_t seed = 1;
  int val_every = 500;
  int grad_accum = 1;
  double label_smoothing = 0.0;
};

// Inverse-sqrt schedule with linear warmup, scaled by the model width.
double lr_at(const TrainConfig& cfg, int d_model, int step);

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
};

// Adam over every model parameter, teacher-forced batches sampled with
// replacement. All randomness (batch order, dropout) comes from two private
// streams seeded by cfg.seed, and both streams serialize with the state so a
// restored run continues bit-for-bit.
class Trainer {
 public:
  Trainer(Seq2SeqModel& model, const TrainConfig& cfg);

  StepResult train_step(const Dataset& ds);
  int step() const { return step_; }
  double best_val = -1.0;

  std::string state_json() const;
  Seq2SeqModel::NamedBlobs moment_blobs() const;
  void restore(const std::string& state_json, const Seq2SeqModel::NamedBlobs& blobs);

 private:
  Seq2SeqModel& model_;
  TrainConfig cfg_;
  ParamList params_;
  std::vector<std::vector<double>> m_, v_;
  std::mt19937_64 data_rng_, dropout_rng_;
  int step_ = 0;
};

// Full loop: periodic validation, best/last checkpoints under out_dir (when
// non-empty), one key=value metrics line per validation appended to log.
EvalMetrics run_training(Seq2SeqModel& model, const Dataset& train_ds, const Dataset& val_ds,
                         const TrainConfig& cfg, const std::string& out_dir, std::ostream& log,
                         Trainer* resume = nullptr);

}  // namespace capsan
