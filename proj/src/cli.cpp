#include "capsan/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "capsan/config.hpp"
#include "capsan/errors.hpp"
#include "capsan/metrics.hpp"
#include "capsan/routing.hpp"
#include "capsan/train.hpp"

namespace capsan::cli {

namespace {

struct CommonOpts {
  std::string config_path;
  std::string task;
  std::string variant;
  std::string routing_layers;
  bool no_vertical = false;
  bool no_horizontal = false;
  int iters = 0;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "config file with key = value lines");
  cmd->add_option("--task", o.task, "synthetic task: copy, reverse, or sort");
  cmd->add_option("--variant", o.variant, "vanilla or capsule")
      ->check(CLI::IsMember({"vanilla", "capsule"}));
  cmd->add_flag("--no-vertical", o.no_vertical, "disable vertical routing");
  cmd->add_flag("--no-horizontal", o.no_horizontal, "disable horizontal routing");
  cmd->add_option("--routing-layers", o.routing_layers,
                  "encoder layers that route, 1-based inclusive range a..b");
  cmd->add_option("--iters", o.iters, "routing iterations")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "master seed for weights, data, and batches")
      ->check(CLI::NonNegativeNumber);
}

RunConfig build_config(const CommonOpts& o) {
  RunConfig rc = o.config_path.empty() ? RunConfig{} : parse_config_file(o.config_path);
  if (!o.task.empty()) apply_kv(rc, "task.kind", o.task);
  if (!o.variant.empty()) apply_kv(rc, "variant", o.variant);
  if (!o.routing_layers.empty()) apply_kv(rc, "model.routing_layers", o.routing_layers);
  if (o.iters > 0) apply_kv(rc, "model.routing_iters", std::to_string(o.iters));
  if (o.seed >= 0) {
    apply_kv(rc, "train.seed", std::to_string(o.seed));
    apply_kv(rc, "task.seed", std::to_string(o.seed));
  }
  if (o.no_vertical) rc.model.vertical = false;
  if (o.no_horizontal) rc.model.horizontal = false;
  rc.finalize();
  return rc;
}

int cmd_train(const CommonOpts& o, const std::string& out_dir, std::ostream& out) {
  RunConfig rc = build_config(o);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cfg_out(out_dir + "/config.txt");
    if (!cfg_out) throw InputError("cannot write to output directory: " + out_dir);
    cfg_out << resolved_config(rc);
  }
  Dataset train_ds = generate(rc.train_task());
  Dataset val_ds = generate(rc.val_task());
  Seq2SeqModel model(rc.model, rc.train.seed);

  std::ofstream log(out_dir + "/metrics.log", std::ios::app);
  if (!log) throw InputError("cannot write metrics log in " + out_dir);
  EvalMetrics m = run_training(model, train_ds, val_ds, rc.train, out_dir, log);
  out << "final step=" << rc.train.steps << " token_accuracy=" << m.token_accuracy
      << " sequence_accuracy=" << m.sequence_accuracy << " bleu=" << m.bleu << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt, const std::string& data_path,
             std::ostream& out) {
  auto loaded = Seq2SeqModel::load(ckpt);
  Dataset ds;
  if (!data_path.empty()) {
    ds = load_dataset(data_path);
  } else {
    RunConfig rc = o.config_path.empty() ? RunConfig{} : parse_config_file(o.config_path);
    if (!o.task.empty()) apply_kv(rc, "task.kind", o.task);
    if (o.seed >= 0) apply_kv(rc, "task.seed", std::to_string(o.seed));
    rc.model = loaded.model.config();
    ds = generate(rc.val_task());
  }
  EvalMetrics m = evaluate(loaded.model, ds);
  out << "examples=" << m.examples << " token_accuracy=" << m.token_accuracy
      << " sequence_accuracy=" << m.sequence_accuracy << " bleu=" << m.bleu << "\n";
  return 0;
}

int cmd_export_attention(const std::string& ckpt, const std::vector<int>& input,
                         const std::string& csv_path) {
  if (input.empty()) throw InputError("--input needs at least one token id");
  auto loaded = Seq2SeqModel::load(ckpt);
  NoGradGuard ng;
  AttentionTrace trace;
  loaded.model.encode(input, nullptr, &trace);

  std::ofstream os(csv_path);
  if (!os) throw InputError("cannot write CSV: " + csv_path);
  os.precision(17);
  os << "layer,head,query_pos,key_pos,weight\n";
  for (std::size_t layer = 0; layer < trace.encoder_weights.size(); ++layer) {
    const Tensor& w = trace.encoder_weights[layer];
    for (int h = 0; h < w.dim(0); ++h)
      for (int q = 0; q < w.dim(1); ++q)
        for (int k = 0; k < w.dim(2); ++k)
          os << layer << ',' << h << ',' << q << ',' << k << ',' << w.at({h, q, k}) << "\n";
  }
  if (!os) throw InputError("write failed for CSV: " + csv_path);
  return 0;
}

int cmd_route_demo(const std::string& votes_path, int iters_override, std::ostream& out) {
  std::ifstream is(votes_path);
  if (!is) throw InputError("cannot open votes file: " + votes_path);
  auto fail = [&votes_path](int line_no, const std::string& why) {
    throw InputError(votes_path + ":" + std::to_string(line_no) + ": " + why);
  };

  std::string line;
  if (!std::getline(is, line)) fail(1, "missing header M N K T");
  int m = 0, n = 0, k = 0, t = 0;
  {
    std::istringstream hs(line);
    std::string tail;
    if (!(hs >> m >> n >> k >> t) || (hs >> tail) || m < 1 || n < 1 || k < 1 || t < 1)
      fail(1, "header must be four positive integers: M N K T");
  }
  if (iters_override > 0) t = iters_override;

  std::vector<double> votes(static_cast<std::size_t>(m) * n * k);
  for (int row = 0; row < m * n; ++row) {
    if (!std::getline(is, line)) fail(2 + row, "missing vote row");
    std::istringstream rs(line);
    for (int j = 0; j < k; ++j) {
      if (!(rs >> votes[static_cast<std::size_t>(row) * k + j]))
        fail(2 + row, "expected " + std::to_string(k) + " numbers");
    }
    std::string tail;
    if (rs >> tail) fail(2 + row, "expected " + std::to_string(k) + " numbers");
  }

  NoGradGuard ng;
  RoutingResult res = dynamic_routing({Tensor::from_data({m, n, k}, std::move(votes)), t});
  out.precision(17);
  out << "iterations = " << t << "\n";
  for (int j = 0; j < n; ++j) {
    out << "omega[" << j << "] =";
    for (int kk = 0; kk < k; ++kk) out << ' ' << res.omega.at({j, kk});
    out << "\n";
  }
  for (int i = 0; i < m; ++i) {
    out << "coupling[" << i << "] =";
    for (int j = 0; j < n; ++j) out << ' ' << res.coupling.at({i, j});
    out << "\n";
  }
  for (int i = 0; i < m; ++i) {
    out << "b[" << i << "] =";
    for (int j = 0; j < n; ++j) out << ' ' << res.b.at({i, j});
    out << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"capsule-routing attention workbench", "capsan"};
  app.require_subcommand(1);

  CommonOpts train_opts, eval_opts;
  std::string train_out;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a synthetic task");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--out", train_out, "output directory")->required();

  std::string eval_ckpt, eval_data;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval_data, "dataset file (src<TAB>tgt token id lines)");

  std::string exp_ckpt, exp_csv;
  std::vector<int> exp_input;
  CLI::App* exp_cmd =
      app.add_subcommand("export-attention", "dump encoder attention weights to CSV");
  exp_cmd->add_option("--ckpt", exp_ckpt, "checkpoint path")->required();
  exp_cmd->add_option("--input", exp_input, "input token ids")->required()->expected(-1);
  exp_cmd->add_option("--out", exp_csv, "CSV output path")->required();

  std::string demo_votes;
  int demo_iters = 0;
  CLI::App* demo_cmd = app.add_subcommand("route-demo", "run dynamic routing on a votes file");
  demo_cmd->add_option("votes", demo_votes, "votes file: header `M N K T`, then M*N rows of K reals")
      ->required();
  demo_cmd->add_option("--iters", demo_iters, "override the file's iteration count")
      ->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_opts, train_out, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_opts, eval_ckpt, eval_data, out);
    if (exp_cmd->parsed()) return cmd_export_attention(exp_ckpt, exp_input, exp_csv);
    if (demo_cmd->parsed()) return cmd_route_demo(demo_votes, demo_iters, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace capsan::cli
