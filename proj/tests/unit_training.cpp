#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "capsan/config.hpp"
#include "capsan/data.hpp"
#include "capsan/errors.hpp"
#include "capsan/model.hpp"
#include "capsan/train.hpp"

using namespace capsan;

namespace {

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.d_ff = 32;
  cfg.vocab_size = 8;
  cfg.max_len = 8;
  cfg.routing_iters = 2;
  return cfg;
}

Dataset small_dataset(int count = 6) {
  SyntheticTask task;
  task.vocab_size = 8;
  task.min_len = 2;
  task.max_len = 3;
  task.count = count;
  task.seed = 3;
  return generate(task);
}

TrainConfig quick_train() {
  TrainConfig tc;
  tc.steps = 4;
  tc.batch = 2;
  tc.warmup = 20;
  tc.val_every = 2;
  return tc;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("learning rate warms up linearly then decays as inverse sqrt") {
  TrainConfig tc;
  tc.lr_factor = 2.0;
  tc.warmup = 400;
  const int d = 64;
  const double base = tc.lr_factor / std::sqrt(64.0);

  CHECK(lr_at(tc, d, 1) == doctest::Approx(base * 1.0 / std::pow(400.0, 1.5)).epsilon(1e-14));
  CHECK(lr_at(tc, d, 100) == doctest::Approx(base * 100.0 / std::pow(400.0, 1.5)).epsilon(1e-14));
  CHECK(lr_at(tc, d, 200) == doctest::Approx(2.0 * lr_at(tc, d, 100)).epsilon(1e-14));
  CHECK(lr_at(tc, d, 400) == doctest::Approx(base / std::sqrt(400.0)).epsilon(1e-14));
  CHECK(lr_at(tc, d, 10000) == doctest::Approx(base / 100.0).epsilon(1e-14));
  CHECK(lr_at(tc, d, 0) == lr_at(tc, d, 1));

  for (int s = 2; s <= 400; s += 57) CHECK(lr_at(tc, d, s) > lr_at(tc, d, s - 1));
  for (int s = 401; s <= 2000; s += 211) CHECK(lr_at(tc, d, s) < lr_at(tc, d, s - 1));
}

TEST_CASE("trainer rejects non-positive settings and empty data") {
  Seq2SeqModel model(small_model(), 1);
  TrainConfig bad = quick_train();
  bad.batch = 0;
  CHECK_THROWS_AS(Trainer(model, bad), ConfigError);
  bad = quick_train();
  bad.steps = 0;
  CHECK_THROWS_AS(Trainer(model, bad), ConfigError);
  bad = quick_train();
  bad.grad_accum = 0;
  CHECK_THROWS_AS(Trainer(model, bad), ConfigError);

  Trainer tr(model, quick_train());
  Dataset empty;
  CHECK_THROWS_AS(tr.train_step(empty), InputError);
}

TEST_CASE("a single example is memorized to near-zero loss") {
  ModelConfig mc = small_model();
  mc.d = 32;
  mc.d_ff = 64;
  Seq2SeqModel model(mc, 2);

  Dataset ds;
  ds.examples.push_back({{4, 5, 6, 7}, {4, 5, 6, 7}});

  TrainConfig tc;
  tc.steps = 500;
  tc.batch = 2;
  tc.warmup = 20;
  Trainer tr(model, tc);

  double loss = 1e9;
  for (int s = 0; s < tc.steps && loss >= 0.01; ++s) loss = tr.train_step(ds).loss;
  CHECK(loss < 0.01);
}

TEST_CASE("identical seeds give identical training trajectories") {
  ModelConfig mc = small_model();
  mc.dropout = 0.1;
  Dataset ds = small_dataset();
  TrainConfig tc = quick_train();

  Seq2SeqModel a(mc, 5);
  Seq2SeqModel b(mc, 5);
  Trainer ta(a, tc);
  Trainer tb(b, tc);
  double first_loss = 0.0;
  for (int s = 0; s < 4; ++s) {
    StepResult ra = ta.train_step(ds);
    StepResult rb = tb.train_step(ds);
    if (s == 0) first_loss = ra.loss;
    CHECK(ra.loss == rb.loss);
    CHECK(ra.lr == rb.lr);
  }

  Seq2SeqModel c(mc, 5);
  TrainConfig other = tc;
  other.seed = 99;
  Trainer tother(c, other);
  CHECK(tother.train_step(ds).loss != first_loss);
}

TEST_CASE("a restored trainer continues bit-for-bit") {
  ModelConfig mc = small_model();
  mc.dropout = 0.1;  // exercises the serialized dropout stream
  Dataset ds = small_dataset();
  TrainConfig tc = quick_train();
  tc.steps = 12;

  Seq2SeqModel uninterrupted(mc, 11);
  Trainer tu(uninterrupted, tc);
  std::vector<double> losses;
  for (int s = 0; s < 12; ++s) losses.push_back(tu.train_step(ds).loss);

  Seq2SeqModel first_half(mc, 11);
  Trainer tf(first_half, tc);
  std::vector<double> resumed;
  for (int s = 0; s < 6; ++s) resumed.push_back(tf.train_step(ds).loss);

  const auto path = std::filesystem::temp_directory_path() / "capsan_test_resume.ckpt";
  first_half.save(path.string(), tf.state_json(), tf.moment_blobs());
  LoadedCheckpoint loaded = Seq2SeqModel::load(path.string());
  std::filesystem::remove(path);

  Trainer tr(loaded.model, tc);
  tr.restore(loaded.extra_json, loaded.extra_tensors);
  CHECK(tr.step() == 6);
  for (int s = 0; s < 6; ++s) resumed.push_back(tr.train_step(ds).loss);

  CHECK(resumed == losses);
  ParamList want = uninterrupted.parameters();
  ParamList got = loaded.model.parameters();
  REQUIRE(want.size() == got.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(want[i].second.data() == got[i].second.data());
}

TEST_CASE("restore rejects corrupt state and missing moments") {
  Seq2SeqModel model(small_model(), 1);
  Trainer tr(model, quick_train());
  CHECK_THROWS_AS(tr.restore("not json", {}), InputError);
  CHECK_THROWS_AS(tr.restore("{\"step\":1}", {}), InputError);
  CHECK_THROWS_AS(tr.restore(tr.state_json(), {}), InputError);
}

TEST_CASE("a poisoned parameter is reported with step and op") {
  Seq2SeqModel model(small_model(), 1);
  for (auto& [name, tensor] : model.parameters())
    if (name == "out.w") tensor.at({0, 0}) = std::nan("");
  Trainer tr(model, quick_train());
  Dataset ds = small_dataset();
  try {
    tr.train_step(ds);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 1") != std::string::npos);
    CHECK(msg.find("first bad op") != std::string::npos);
  }
}

TEST_CASE("gradient accumulation trains and reduces the loss") {
  Seq2SeqModel model(small_model(), 7);
  Dataset ds = small_dataset();
  TrainConfig tc = quick_train();
  tc.grad_accum = 2;
  Trainer tr(model, tc);
  const double first = tr.train_step(ds).loss;
  double last = first;
  for (int s = 0; s < 30; ++s) last = tr.train_step(ds).loss;
  CHECK(last < first);
}

TEST_CASE("every routing placement trains without error") {
  Dataset ds = small_dataset(4);
  TrainConfig tc = quick_train();
  tc.steps = 1;

  int seed = 20;
  for (bool in_enc : {true, false}) {
    for (bool in_dec : {true, false}) {
      for (int mode = 0; mode < 3; ++mode) {
        ModelConfig mc = small_model();
        mc.enc_layers = 2;
        mc.routing_in_encoder = in_enc;
        mc.routing_in_decoder = in_dec;
        mc.vertical = mode != 1;
        mc.horizontal = mode != 0;
        Seq2SeqModel model(mc, seed++);
        Trainer tr(model, tc);
        StepResult res = tr.train_step(ds);
        CHECK(std::isfinite(res.loss));
      }
    }
  }

  ModelConfig ranged = small_model();
  ranged.enc_layers = 3;
  ranged.routing_layer_lo = 2;
  ranged.routing_layer_hi = 2;
  Seq2SeqModel model(ranged, seed);
  Trainer tr(model, tc);
  CHECK(std::isfinite(tr.train_step(ds).loss));
}

TEST_CASE("run_training logs validations and writes both checkpoints") {
  ModelConfig mc = small_model();
  Seq2SeqModel model(mc, 9);
  Dataset train_ds = small_dataset(8);
  SyntheticTask val_task;
  val_task.vocab_size = 8;
  val_task.min_len = 2;
  val_task.max_len = 3;
  val_task.count = 4;
  val_task.seed = 77;
  Dataset val_ds = generate(val_task);

  const auto out = temp_dir("capsan_test_run_training");
  std::ostringstream log;
  TrainConfig tc = quick_train();
  EvalMetrics metrics = run_training(model, train_ds, val_ds, tc, out.string(), log);
  CHECK(metrics.examples == val_ds.size());

  int lines = 0;
  std::istringstream is(log.str());
  std::string line;
  while (std::getline(is, line)) {
    ++lines;
    CHECK(line.rfind("step=", 0) == 0);
    for (const char* field :
         {" lr=", " train_loss=", " val_token_accuracy=", " val_sequence_accuracy=", " val_bleu="})
      CHECK(line.find(field) != std::string::npos);
  }
  CHECK(lines == 2);  // steps 2 and 4 with val_every = 2
  CHECK(std::filesystem::exists(out / "best.ckpt"));
  CHECK(std::filesystem::exists(out / "last.ckpt"));

  LoadedCheckpoint last = Seq2SeqModel::load((out / "last.ckpt").string());
  ParamList now = model.parameters();
  ParamList saved = last.model.parameters();
  for (std::size_t i = 0; i < now.size(); ++i)
    CHECK(now[i].second.data() == saved[i].second.data());
  std::filesystem::remove_all(out);
}
