// parm: coded-inference serving toolkit CLI.
//
// Subcommands: train-deployed, train-parity, evaluate-accuracy, serve,
// worker, bench, report.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "parm/bench.hpp"
#include "parm/config.hpp"
#include "parm/sim.hpp"
#include "parm/dataset.hpp"
#include "parm/mlp.hpp"
#include "parm/net.hpp"
#include "parm/parity.hpp"

namespace {

std::vector<std::size_t> parse_arch(const std::string& s) {
  std::vector<std::size_t> dims;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) dims.push_back(std::stoul(tok));
  return dims;
}

struct TaskFlags {
  std::size_t dim = 64;
  int classes = 10;
  std::size_t train_n = 5000;
  std::size_t test_n = 1000;
  std::uint64_t seed = 42;

  void attach(CLI::App* cmd) {
    cmd->add_option("--dim", dim, "feature dimension of the toy task");
    cmd->add_option("--classes", classes, "number of classes");
    cmd->add_option("--train-n", train_n, "training set size");
    cmd->add_option("--test-n", test_n, "held-out test set size");
    cmd->add_option("--seed", seed, "RNG seed");
  }
};

std::vector<std::pair<parm::Tensor, parm::Tensor>> one_hot_pairs(
    const parm::LabeledDataset& ds) {
  std::vector<std::pair<parm::Tensor, parm::Tensor>> out;
  for (std::size_t i = 0; i < ds.inputs.size(); ++i)
    out.emplace_back(ds.inputs[i], parm::one_hot(ds.labels[i], ds.num_classes));
  return out;
}

std::vector<std::pair<parm::Tensor, int>> labeled_pairs(const parm::LabeledDataset& ds) {
  std::vector<std::pair<parm::Tensor, int>> out;
  for (std::size_t i = 0; i < ds.inputs.size(); ++i)
    out.emplace_back(ds.inputs[i], ds.labels[i]);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parity-model coded-inference serving toolkit"};
  app.require_subcommand(1);

  // --- train-deployed ---
  auto* td = app.add_subcommand("train-deployed",
                                "train a deployed model on the toy task");
  TaskFlags td_task;
  td_task.attach(td);
  std::string td_out = "deployed.pmw";
  std::string td_arch = "64,200,100,10";
  int td_epochs = 30;
  double td_lr = 0.001, td_l2 = 1e-5;
  int td_batch = 32;
  td->add_option("--out", td_out, "output weight file");
  td->add_option("--arch", td_arch, "comma-separated layer dims");
  td->add_option("--epochs", td_epochs);
  td->add_option("--lr", td_lr);
  td->add_option("--l2", td_l2);
  td->add_option("--batch", td_batch);

  // --- train-parity ---
  auto* tp = app.add_subcommand("train-parity",
                                "train a parity model against a deployed model");
  TaskFlags tp_task;
  tp_task.attach(tp);
  std::string tp_deployed = "deployed.pmw", tp_out = "parity.pmw", tp_arch;
  std::string tp_encoder = "sum", tp_cache;
  std::size_t tp_k = 2, tp_row = 0;
  int tp_epochs = 60, tp_batch = 32;
  double tp_lr = 0.001, tp_l2 = 1e-5;
  tp->add_option("--deployed", tp_deployed, "deployed model weight file");
  tp->add_option("--out", tp_out, "output weight file");
  tp->add_option("--k", tp_k, "coding group size");
  tp->add_option("--coeff-row", tp_row, "coefficient row this parity model serves");
  tp->add_option("--encoder", tp_encoder, "sum | concat");
  tp->add_option("--arch", tp_arch, "parity arch (defaults to deployed dims)");
  tp->add_option("--epochs", tp_epochs);
  tp->add_option("--lr", tp_lr);
  tp->add_option("--l2", tp_l2);
  tp->add_option("--batch", tp_batch);
  tp->add_option("--dataset-cache", tp_cache, "write the parity dataset to this file");

  // --- evaluate-accuracy ---
  auto* ev = app.add_subcommand(
      "evaluate-accuracy", "print the A_a / A_d / A_o table for k in {2,3,4}");
  TaskFlags ev_task;
  ev_task.attach(ev);
  double ev_fu = 0.1;
  int ev_epochs = 60;
  int ev_deployed_epochs = 30;
  ev->add_option("--f-u", ev_fu, "unavailability fraction for A_o");
  ev->add_option("--epochs", ev_epochs, "parity training epochs");
  ev->add_option("--deployed-epochs", ev_deployed_epochs);

  // --- serve ---
  auto* sv = app.add_subcommand("serve", "run the TCP frontend");
  std::string sv_config;
  std::uint16_t sv_port = 7411;
  std::size_t sv_k = 2, sv_r = 1, sv_in = 64, sv_out_dim = 10;
  double sv_slo = 25.0, sv_gto = 0.0;
  bool sv_eager = false;
  sv->add_option("--config", sv_config, "key=value config file");
  sv->add_option("--port", sv_port);
  sv->add_option("--k", sv_k);
  sv->add_option("--r", sv_r);
  sv->add_option("--slo-ms", sv_slo);
  sv->add_option("--group-timeout-ms", sv_gto);
  sv->add_flag("--eager-decode", sv_eager);
  sv->add_option("--input-dim", sv_in);
  sv->add_option("--output-dim", sv_out_dim);

  // --- worker ---
  auto* wk = app.add_subcommand("worker", "run a model worker process");
  std::string wk_model, wk_role = "deployed", wk_host = "127.0.0.1";
  std::uint16_t wk_port = 7411;
  std::size_t wk_row = 0;
  double wk_p = 0.0, wk_ms = 0.0;
  std::uint64_t wk_seed = 0;
  wk->add_option("--model", wk_model, "weight file")->required();
  wk->add_option("--role", wk_role, "deployed | parity");
  wk->add_option("--row", wk_row, "parity coefficient row");
  wk->add_option("--host", wk_host);
  wk->add_option("--port", wk_port);
  wk->add_option("--slowdown-p", wk_p, "injected stall probability");
  wk->add_option("--slowdown-ms", wk_ms, "injected stall duration");
  wk->add_option("--seed", wk_seed);

  // --- bench ---
  auto* bn = app.add_subcommand("bench", "run an in-process latency experiment");
  std::string bn_mode = "parm", bn_deployed = "deployed.pmw", bn_out;
  std::vector<std::string> bn_parity;
  std::string bn_backup;
  parm::ExperimentConfig bcfg;
  bn->add_option("--mode", bn_mode, "parm | equal_resources | default_only | approx_backup");
  bn->add_option("--deployed", bn_deployed, "deployed weight file");
  bn->add_option("--parity", bn_parity, "parity weight file(s), one per row");
  bn->add_option("--backup", bn_backup, "backup weight file (approx_backup)");
  bn->add_option("--n", bcfg.n);
  bn->add_option("--qps", bcfg.qps, "0 targets 60% of estimated capacity");
  bn->add_option("--workers", bcfg.workers);
  bn->add_option("--k", bcfg.k);
  bn->add_option("--r", bcfg.r);
  bn->add_option("--slo-ms", bcfg.slo_ms);
  bn->add_option("--group-timeout-ms", bcfg.group_timeout_ms);
  bn->add_flag("--eager-decode", bcfg.eager_decode);
  bn->add_option("--slowdown-p", bcfg.slowdown_p);
  bn->add_option("--slowdown-ms", bcfg.slowdown_ms);
  bn->add_option("--seed", bcfg.seed);
  bool bn_sim = false;
  bn->add_flag("--sim", bn_sim,
               "virtual-clock engine: deterministic, immune to host scheduler noise");
  bn->add_option("--service-ms", bcfg.service_ms,
                 "simulated per-query service time (with --sim; 0 calibrates)");
  bn->add_option("--out", bn_out, "write the report here as well as stdout");

  // --- report ---
  auto* rp = app.add_subcommand("report", "validate and pretty-print a report file");
  std::string rp_path;
  rp->add_option("path", rp_path, "report file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (td->parsed()) {
      const auto [train, test] = parm::make_blob_split(
          td_task.train_n, td_task.test_n, td_task.classes, td_task.dim, td_task.seed);
      parm::TrainConfig cfg;
      cfg.learning_rate = static_cast<float>(td_lr);
      cfg.l2 = static_cast<float>(td_l2);
      cfg.batch_size = td_batch;
      cfg.epochs = td_epochs;
      cfg.seed = td_task.seed;
      parm::MlpModel m = parm::mlp_init(parse_arch(td_arch), td_task.seed);
      m = parm::train(std::move(m), one_hot_pairs(train), cfg);
      parm::save_weights(m, td_out);
      std::cout << "a_available: " << parm::evaluate_available(m, labeled_pairs(test))
                << "\nwrote " << td_out << "\n";
    } else if (tp->parsed()) {
      const parm::MlpModel deployed = parm::load_weights(tp_deployed);
      const parm::LabeledDataset train = parm::make_blob_dataset(
          tp_task.train_n, tp_task.classes, tp_task.dim, tp_task.seed);
      const parm::EncoderKind kind =
          tp_encoder == "concat" ? parm::EncoderKind::ConcatGrid : parm::EncoderKind::Sum;
      const parm::ParityDataset ds = parm::build_parity_dataset(
          train.inputs, deployed, tp_k, kind, tp_row, tp_task.seed);
      if (!tp_cache.empty()) parm::save_parity_dataset(ds, tp_cache);
      parm::TrainConfig cfg;
      cfg.learning_rate = static_cast<float>(tp_lr);
      cfg.l2 = static_cast<float>(tp_l2);
      cfg.batch_size = tp_batch;
      cfg.epochs = tp_epochs;
      cfg.seed = tp_task.seed;
      const std::vector<std::size_t> arch =
          tp_arch.empty() ? deployed.layer_dims : parse_arch(tp_arch);
      const parm::MlpModel pm = parm::train_parity_model(ds, arch, cfg);
      parm::save_weights(pm, tp_out);
      std::cout << "parity samples: " << ds.samples.size() << "\nwrote " << tp_out << "\n";
    } else if (ev->parsed()) {
      const auto [train, test] = parm::make_blob_split(
          ev_task.train_n, ev_task.test_n, ev_task.classes, ev_task.dim, ev_task.seed);
      parm::TrainConfig dcfg;
      dcfg.epochs = ev_deployed_epochs;
      dcfg.seed = ev_task.seed;
      parm::MlpModel deployed =
          parm::mlp_init({ev_task.dim, 200, 100, static_cast<std::size_t>(ev_task.classes)},
                         ev_task.seed);
      deployed = parm::train(std::move(deployed), one_hot_pairs(train), dcfg);
      const auto test_pairs = labeled_pairs(test);
      const double a_a = parm::evaluate_available(deployed, test_pairs);
      std::cout << "a_available: " << a_a << "\n";
      std::cout << "k\ta_degraded\ta_overall(f_u=" << ev_fu << ")\n";
      for (std::size_t k : {2, 3, 4}) {
        const parm::ParityDataset ds = parm::build_parity_dataset(
            train.inputs, deployed, k, parm::EncoderKind::Sum, 0, ev_task.seed);
        parm::TrainConfig pcfg;
        pcfg.epochs = ev_epochs;
        pcfg.seed = ev_task.seed + k;
        const parm::MlpModel pm =
            parm::train_parity_model(ds, deployed.layer_dims, pcfg);
        const double a_d = parm::evaluate_degraded(deployed, pm, test_pairs, k,
                                                   parm::EncoderKind::Sum, ev_task.seed);
        std::cout << k << "\t" << a_d << "\t"
                  << parm::overall_accuracy(a_a, a_d, ev_fu) << "\n";
      }
    } else if (sv->parsed()) {
      parm::ServingConfig cfg;
      if (!sv_config.empty()) {
        const parm::Config file = parm::Config::parse_file(sv_config);
        cfg.k = static_cast<std::size_t>(file.get_int("k", static_cast<std::int64_t>(sv_k)));
        cfg.r = static_cast<std::size_t>(file.get_int("r", static_cast<std::int64_t>(sv_r)));
        cfg.slo_ms = file.get_double("slo_ms", sv_slo);
        cfg.group_timeout_ms = file.get_double("group_timeout_ms", sv_gto);
        cfg.eager_decode = file.get_bool("eager_decode", sv_eager);
        cfg.input_dim = static_cast<std::size_t>(
            file.get_int("input_dim", static_cast<std::int64_t>(sv_in)));
        cfg.output_dim = static_cast<std::size_t>(
            file.get_int("output_dim", static_cast<std::int64_t>(sv_out_dim)));
      } else {
        cfg.k = sv_k;
        cfg.r = sv_r;
        cfg.slo_ms = sv_slo;
        cfg.group_timeout_ms = sv_gto;
        cfg.eager_decode = sv_eager;
        cfg.input_dim = sv_in;
        cfg.output_dim = sv_out_dim;
      }
      parm::FrontendServer server(cfg, sv_port);
      std::cout << "frontend listening on port " << server.port() << std::endl;
      // Runs until a Shutdown frame arrives or the process is signalled.
      for (;;) std::this_thread::sleep_for(std::chrono::seconds(1));
    } else if (wk->parsed()) {
      parm::RemoteWorkerConfig cfg;
      cfg.model_path = wk_model;
      cfg.parity = wk_role == "parity";
      cfg.parity_row = wk_row;
      cfg.host = wk_host;
      cfg.port = wk_port;
      cfg.slowdown_p = wk_p;
      cfg.slowdown_ms = wk_ms;
      cfg.seed = wk_seed;
      parm::run_remote_worker(cfg);
    } else if (bn->parsed()) {
      bcfg.mode = parm::bench_mode_from_name(bn_mode);
      const parm::MlpModel deployed = parm::load_weights(bn_deployed);
      std::vector<parm::MlpModel> parity;
      for (const std::string& p : bn_parity) parity.push_back(parm::load_weights(p));
      std::optional<parm::MlpModel> backup;
      if (!bn_backup.empty()) backup = parm::load_weights(bn_backup);
      const parm::ExperimentReport rep =
          bn_sim ? parm::run_simulated_experiment(bcfg, deployed, parity,
                                                  backup ? &*backup : nullptr)
                 : parm::run_experiment(bcfg, deployed, parity,
                                        backup ? &*backup : nullptr);
      parm::report_emit(rep, std::cout);
      if (!bn_out.empty()) {
        std::ofstream f(bn_out);
        parm::report_emit(rep, f);
      }
    } else if (rp->parsed()) {
      std::ifstream f(rp_path);
      if (!f) throw std::runtime_error("cannot open " + rp_path);
      const parm::ExperimentReport rep = parm::report_parse(f);
      parm::report_emit(rep, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
