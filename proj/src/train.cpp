#include "capsan/train.hpp"

#include <cmath>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "capsan/errors.hpp"
#include "json.hpp"

namespace capsan {

namespace {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.98;
constexpr double kAdamEps = 1e-9;
}  // namespace

double lr_at(const TrainConfig& cfg, int d_model, int step) {
  const double s = std::max(step, 1);
  return cfg.lr_factor / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(static_cast<double>(cfg.warmup), -1.5));
}

Trainer::Trainer(Seq2SeqModel& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      params_(model.parameters()),
      data_rng_(cfg.seed),
      dropout_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
  if (cfg_.steps < 1 || cfg_.batch < 1 || cfg_.warmup < 1 || cfg_.grad_accum < 1 ||
      cfg_.val_every < 1)
    throw ConfigError("train.steps, train.batch, train.warmup, train.val_every and "
                      "train.grad_accum must all be positive");
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].second.size(), 0.0);
    v_[i].assign(params_[i].second.size(), 0.0);
  }
}

StepResult Trainer::train_step(const Dataset& ds) {
  if (ds.examples.empty()) throw InputError("train_step: empty dataset");
  std::mt19937_64* drop = model_.config().dropout > 0.0 ? &dropout_rng_ : nullptr;

  double loss_value = 0.0;
  for (int acc = 0; acc < cfg_.grad_accum; ++acc) {
    Tensor total;
    int count = 0;
    for (int b = 0; b < cfg_.batch; ++b) {
      const auto& [src, tgt] = ds.examples[data_rng_() % ds.size()];
      std::vector<int> tgt_in{kBosId};
      tgt_in.insert(tgt_in.end(), tgt.begin(), tgt.end());
      std::vector<int> tgt_out = tgt;
      tgt_out.push_back(kEosId);

      Tensor logits = model_.forward(src, tgt_in, drop);
      auto [ce, n] = cross_entropy_sum(logits, tgt_out, kPadId, cfg_.label_smoothing);
      total = total.defined() ? add(total, ce) : ce;
      count += n;
    }
    Tensor loss = scale(total, 1.0 / count);
    if (!std::isfinite(loss.item())) {
      Graph g = Graph::trace(loss.node().get());
      const Node* bad = g.first_nonfinite();
      throw NumericError("non-finite loss at step " + std::to_string(step_ + 1) +
                         ", first bad op '" + (bad ? bad->op : "loss") + "'");
    }
    loss_value += loss.item() / cfg_.grad_accum;
    loss.backward();
  }

  ++step_;
  const double lr = lr_at(cfg_, model_.config().d, step_);
  const double bc1 = 1.0 - std::pow(kBeta1, step_);
  const double bc2 = 1.0 - std::pow(kBeta2, step_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    const std::vector<double>& g = p.grad();
    auto& vals = p.data();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double gj = g[j] / cfg_.grad_accum;
      m_[i][j] = kBeta1 * m_[i][j] + (1.0 - kBeta1) * gj;
      v_[i][j] = kBeta2 * v_[i][j] + (1.0 - kBeta2) * gj * gj;
      vals[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + kAdamEps);
    }
    p.zero_grad();
  }
  return {loss_value, lr};
}

std::string Trainer::state_json() const {
  nlohmann::json j;
  j["step"] = step_;
  j["best_val"] = best_val;
  std::ostringstream dr, pr;
  dr << data_rng_;
  pr << dropout_rng_;
  j["data_rng"] = dr.str();
  j["dropout_rng"] = pr.str();
  return j.dump();
}

Seq2SeqModel::NamedBlobs Trainer::moment_blobs() const {
  Seq2SeqModel::NamedBlobs blobs;
  blobs.reserve(params_.size() * 2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    blobs.emplace_back("opt.m." + params_[i].first, m_[i]);
    blobs.emplace_back("opt.v." + params_[i].first, v_[i]);
  }
  return blobs;
}

void Trainer::restore(const std::string& state_json, const Seq2SeqModel::NamedBlobs& blobs) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(state_json);
    step_ = j.at("step").get<int>();
    best_val = j.at("best_val").get<double>();
    std::istringstream(j.at("data_rng").get<std::string>()) >> data_rng_;
    std::istringstream(j.at("dropout_rng").get<std::string>()) >> dropout_rng_;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad training state: ") + e.what());
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    bool got_m = false, got_v = false;
    for (const auto& [name, data] : blobs) {
      if (name == "opt.m." + params_[i].first && data.size() == m_[i].size()) {
        m_[i] = data;
        got_m = true;
      } else if (name == "opt.v." + params_[i].first && data.size() == v_[i].size()) {
        v_[i] = data;
        got_v = true;
      }
    }
    if (!got_m || !got_v)
      throw InputError("training state is missing optimizer moments for " + params_[i].first);
  }
}

EvalMetrics run_training(Seq2SeqModel& model, const Dataset& train_ds, const Dataset& val_ds,
                         const TrainConfig& cfg, const std::string& out_dir, std::ostream& log,
                         Trainer* resume) {
  Trainer own(model, cfg);
  Trainer& tr = resume ? *resume : own;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  EvalMetrics metrics;
  double train_loss = 0.0;
  bool evaluated = false;
  while (tr.step() < cfg.steps) {
    StepResult res = tr.train_step(train_ds);
    train_loss = res.loss;
    const int s = tr.step();
    if (s % cfg.val_every == 0 || s == cfg.steps) {
      metrics = evaluate(model, val_ds);
      evaluated = true;
      log << "step=" << s << " lr=" << res.lr << " train_loss=" << train_loss
          << " val_token_accuracy=" << metrics.token_accuracy
          << " val_sequence_accuracy=" << metrics.sequence_accuracy
          << " val_bleu=" << metrics.bleu << "\n";
      log.flush();
      if (metrics.token_accuracy > tr.best_val) {
        tr.best_val = metrics.token_accuracy;
        if (!out_dir.empty())
          model.save(out_dir + "/best.ckpt", tr.state_json(), tr.moment_blobs());
      }
    }
  }
  if (!evaluated) metrics = evaluate(model, val_ds);
  if (!out_dir.empty()) model.save(out_dir + "/last.ckpt", tr.state_json(), tr.moment_blobs());
  return metrics;
}

}  // namespace capsan
