#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <istream>
#include <memory>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "parm/mlp.hpp"
#include "parm/parity.hpp"
#include "parm/serving.hpp"

namespace parm {

// Cumulative Poisson arrival times in seconds: inter-arrivals ~ Exp(qps).
inline std::vector<double> generate_poisson(double qps, std::size_t n,
                                            std::uint64_t seed) {
  if (qps <= 0.0) throw std::invalid_argument("generate_poisson: qps must be > 0");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(qps);
  std::vector<double> out;
  out.reserve(n);
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t += gap(rng);
    out.push_back(t);
  }
  return out;
}

// Nearest-rank percentile: element ceil(q * n) (1-based) of the sorted
// samples. q in (0, 1].
inline double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("percentile: empty sample set");
  if (q <= 0.0 || q > 1.0) throw std::invalid_argument("percentile: q out of (0,1]");
  std::sort(samples.begin(), samples.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(samples.size())));
  return samples[std::max<std::size_t>(rank, 1) - 1];
}

enum class BenchMode { kParm, kEqualResources, kDefaultOnly, kApproxBackup };

inline std::string bench_mode_name(BenchMode m) {
  switch (m) {
    case BenchMode::kParm: return "parm";
    case BenchMode::kEqualResources: return "equal_resources";
    case BenchMode::kDefaultOnly: return "default_only";
    case BenchMode::kApproxBackup: return "approx_backup";
  }
  return "?";
}

inline BenchMode bench_mode_from_name(const std::string& s) {
  if (s == "parm") return BenchMode::kParm;
  if (s == "equal_resources") return BenchMode::kEqualResources;
  if (s == "default_only") return BenchMode::kDefaultOnly;
  if (s == "approx_backup") return BenchMode::kApproxBackup;
  throw std::invalid_argument("unknown bench mode: " + s);
}

struct ExperimentConfig {
  BenchMode mode = BenchMode::kParm;
  std::size_t n = 10000;      // total queries
  double qps = 0.0;           // 0 -> 60% of estimated capacity
  std::size_t workers = 4;    // m deployed workers
  std::size_t k = 2;
  std::size_t r = 1;
  double slo_ms = 25.0;
  double group_timeout_ms = 0.0;
  bool eager_decode = false;
  double slowdown_p = 0.05;
  double slowdown_ms = 50.0;
  std::uint64_t seed = 0;
  double service_ms = 0.0;  // simulated engine only: per-query service time,
                            // 0 -> calibrate from timed forward passes
};

struct ExperimentReport {
  std::string mode;
  double qps = 0.0;
  double duration_s = 0.0;
  std::size_t total = 0;
  double median_ms = 0.0;
  double mean_ms = 0.0;
  double p99_ms = 0.0;
  double p995_ms = 0.0;
  double p999_ms = 0.0;
  std::uint64_t exact_count = 0;
  std::uint64_t reconstructed_count = 0;
  std::uint64_t default_count = 0;
  std::uint64_t duplicate_dropped = 0;
  AccuracyReport accuracy;

  void validate() const {
    if (median_ms > p99_ms || p99_ms > p995_ms || p995_ms > p999_ms)
      throw std::runtime_error("report: percentile ordering violated");
    if (exact_count + reconstructed_count + default_count != total)
      throw std::runtime_error("report: response counts do not sum to total");
  }
};

// Worker-time service estimate: forward latency plus the expected injected
// stall. Capacity is m workers divided by that.
inline double estimate_capacity_qps(const MlpModel& model, std::size_t workers,
                                    double slowdown_p, double slowdown_ms) {
  Tensor probe({model.input_dim()});
  for (std::size_t i = 0; i < probe.size(); ++i)
    probe.data[i] = static_cast<float>(i % 7) * 0.1f;
  volatile float sink = 0.0f;
  const int reps = 200;
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) sink = sink + mlp_forward(model, probe).data[0];
  const double t_inf_s =
      std::chrono::duration<double>(Clock::now() - t0).count() / reps;
  (void)sink;
  const double t_eff_s = t_inf_s + slowdown_p * slowdown_ms / 1000.0;
  return static_cast<double>(workers) / t_eff_s;
}

namespace detail {

struct Collector {
  std::mutex mu;
  std::condition_variable cv;
  std::vector<Response> responses;
  std::size_t expected = 0;

  void add(const Response& r) {
    std::lock_guard lock(mu);
    responses.push_back(r);
    if (responses.size() >= expected) cv.notify_all();
  }

  bool wait_all(std::chrono::seconds timeout) {
    std::unique_lock lock(mu);
    return cv.wait_for(lock, timeout,
                       [this] { return responses.size() >= expected; });
  }
};

}  // namespace detail

inline double measure_capacity_qps(const ExperimentConfig& base,
                                   const MlpModel& deployed,
                                   const std::vector<MlpModel>& parity_models,
                                   const MlpModel* backup_model = nullptr);

// Replays a seeded Poisson workload of cfg.n queries against an in-process
// deployment and measures frontend-side latency per query.
//
// parm:            m deployed + ceil(m/k)*r parity workers, coded groups.
// equal_resources: m + ceil(m/k)*r deployed workers, no coding.
// default_only:    m deployed workers, deadline miss -> default prediction.
// approx_backup:   m deployed + ceil(m/k) backup replicas running the given
//                  (smaller) backup model on every query, first response wins.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       const MlpModel& deployed,
                                       const std::vector<MlpModel>& parity_models,
                                       const MlpModel* backup_model = nullptr) {
  const std::size_t extra = (cfg.workers + cfg.k - 1) / cfg.k;  // ceil(m/k)
  ServingConfig scfg;
  scfg.k = cfg.k;
  scfg.r = cfg.r;
  scfg.slo_ms = cfg.slo_ms;
  scfg.group_timeout_ms = cfg.group_timeout_ms;
  scfg.eager_decode = cfg.eager_decode;
  scfg.input_dim = deployed.input_dim();
  scfg.output_dim = deployed.output_dim();
  switch (cfg.mode) {
    case BenchMode::kParm: scfg.mode = ServeMode::kParm; break;
    case BenchMode::kEqualResources: scfg.mode = ServeMode::kPlain; break;
    case BenchMode::kDefaultOnly: scfg.mode = ServeMode::kDefaultOnly; break;
    case BenchMode::kApproxBackup: scfg.mode = ServeMode::kApproxBackup; break;
  }
  if (cfg.mode == BenchMode::kParm && parity_models.size() != cfg.r)
    throw std::invalid_argument("run_experiment: need one parity model per row");
  if (cfg.mode == BenchMode::kApproxBackup && backup_model == nullptr)
    throw std::invalid_argument("run_experiment: approx_backup needs a backup model");

  detail::Collector collector;
  collector.expected = cfg.n;
  Frontend fe(scfg, [&collector](const Response& r) { collector.add(r); });
  fe.start_sweeper();

  auto deployed_fn = [&deployed](const Tensor& x) { return mlp_forward(deployed, x); };
  std::vector<std::unique_ptr<InProcWorker>> workers;
  std::size_t deployed_count = cfg.workers;
  if (cfg.mode == BenchMode::kEqualResources) deployed_count += extra * cfg.r;
  for (std::size_t i = 0; i < deployed_count; ++i) {
    WorkerOptions o;
    o.role = WorkerRole::kDeployed;
    o.slowdown_p = cfg.slowdown_p;
    o.slowdown_ms = cfg.slowdown_ms;
    o.seed = cfg.seed * 7919 + i + 1;
    workers.push_back(std::make_unique<InProcWorker>(fe, deployed_fn, o));
  }
  if (cfg.mode == BenchMode::kParm) {
    for (std::size_t row = 0; row < cfg.r; ++row) {
      const MlpModel& pm = parity_models[row];
      auto fn = [&pm](const Tensor& x) { return mlp_forward(pm, x); };
      for (std::size_t i = 0; i < extra; ++i) {
        WorkerOptions o;
        o.role = WorkerRole::kParity;
        o.parity_row = row;
        o.slowdown_p = cfg.slowdown_p;
        o.slowdown_ms = cfg.slowdown_ms;
        o.seed = cfg.seed * 104729 + row * 131 + i + 1;
        workers.push_back(std::make_unique<InProcWorker>(fe, fn, o));
      }
    }
  } else if (cfg.mode == BenchMode::kApproxBackup) {
    auto fn = [backup_model](const Tensor& x) { return mlp_forward(*backup_model, x); };
    for (std::size_t i = 0; i < extra; ++i) {
      WorkerOptions o;
      o.role = WorkerRole::kBackup;
      o.slowdown_p = cfg.slowdown_p;
      o.slowdown_ms = cfg.slowdown_ms;
      o.seed = cfg.seed * 7907 + i + 1;
      workers.push_back(std::make_unique<InProcWorker>(fe, fn, o));
    }
  }

  const double qps =
      cfg.qps > 0.0
          ? cfg.qps
          : 0.6 * measure_capacity_qps(cfg, deployed, parity_models, backup_model);
  const std::vector<double> arrivals = generate_poisson(qps, cfg.n, cfg.seed);
  std::mt19937 qrng(static_cast<std::uint32_t>(cfg.seed) + 17);
  std::normal_distribution<float> qdist(0.0f, 1.0f);

  const auto t_start = Clock::now();
  for (std::size_t i = 0; i < cfg.n; ++i) {
    Tensor q({deployed.input_dim()});
    for (float& v : q.data) v = qdist(qrng);
    const auto due = t_start + std::chrono::duration_cast<Clock::duration>(
                                   std::chrono::duration<double>(arrivals[i]));
    std::this_thread::sleep_until(due);
    fe.submit(std::move(q));
  }
  const bool complete = collector.wait_all(std::chrono::seconds(120));
  const double duration_s =
      std::chrono::duration<double>(Clock::now() - t_start).count();
  fe.shutdown();
  for (auto& w : workers) w->join();
  if (!complete) throw std::runtime_error("run_experiment: responses missing after drain timeout");

  ExperimentReport rep;
  rep.mode = bench_mode_name(cfg.mode);
  rep.qps = qps;
  rep.duration_s = duration_s;
  rep.total = collector.responses.size();
  std::vector<double> lat;
  double sum = 0.0;
  for (const Response& r : collector.responses) {
    const double ms =
        std::chrono::duration<double, std::milli>(r.completed - r.submitted).count();
    lat.push_back(ms);
    sum += ms;
    switch (r.kind) {
      case ResponseKind::kExact: rep.exact_count++; break;
      case ResponseKind::kReconstructed: rep.reconstructed_count++; break;
      case ResponseKind::kDefault: rep.default_count++; break;
    }
  }
  rep.mean_ms = sum / static_cast<double>(lat.size());
  rep.median_ms = percentile(lat, 0.5);
  rep.p99_ms = percentile(lat, 0.99);
  rep.p995_ms = percentile(lat, 0.995);
  rep.p999_ms = percentile(lat, 0.999);
  const FrontendCounters fc = fe.counters();
  rep.duplicate_dropped = fc.duplicate_dropped;
  return rep;
}

// Human-readable key: value lines followed by a machine-readable JSON block.
// Measured capacity: the latency knee of the deployment. Short probe runs
// binary-search for the highest arrival rate whose median latency still looks
// unloaded (within 3x the low-rate median, floored at 1ms). The analytic
// worker-time bound only caps the search: at a meaningful fraction of it, the
// injected stalls make queueing waits dwarf the SLO long before throughput
// saturates.
inline double measure_capacity_qps(const ExperimentConfig& base,
                                   const MlpModel& deployed,
                                   const std::vector<MlpModel>& parity_models,
                                   const MlpModel* backup_model) {
  auto probe = [&](double qps, double seconds) {
    ExperimentConfig c = base;
    c.qps = qps;
    c.n = std::max<std::size_t>(100, static_cast<std::size_t>(qps * seconds));
    return run_experiment(c, deployed, parity_models, backup_model);
  };
  const double unloaded = probe(50.0, 2.0).median_ms;
  const double knee_ms = std::max(1.0, 3.0 * unloaded);
  double lo = 50.0;
  double hi = estimate_capacity_qps(deployed, base.workers, base.slowdown_p,
                                    base.slowdown_ms);
  if (hi <= lo) return hi;
  for (int iter = 0; iter < 6; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (probe(mid, 3.0).median_ms <= knee_ms)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

inline void report_emit(const ExperimentReport& rep, std::ostream& out) {
  out << "mode: " << rep.mode << "\n"
      << "qps: " << rep.qps << "\n"
      << "duration_s: " << rep.duration_s << "\n"
      << "total: " << rep.total << "\n"
      << "median_ms: " << rep.median_ms << "\n"
      << "mean_ms: " << rep.mean_ms << "\n"
      << "p99_ms: " << rep.p99_ms << "\n"
      << "p99.5_ms: " << rep.p995_ms << "\n"
      << "p99.9_ms: " << rep.p999_ms << "\n"
      << "exact: " << rep.exact_count << "\n"
      << "reconstructed: " << rep.reconstructed_count << "\n"
      << "default: " << rep.default_count << "\n"
      << "a_available: " << rep.accuracy.a_available << "\n"
      << "a_degraded: " << rep.accuracy.a_degraded << "\n"
      << "a_overall: " << rep.accuracy.a_overall << "\n";
  nlohmann::json j;
  j["mode"] = rep.mode;
  j["qps"] = rep.qps;
  j["duration_s"] = rep.duration_s;
  j["total"] = rep.total;
  j["latency_ms"] = {{"median", rep.median_ms}, {"mean", rep.mean_ms},
                     {"p99", rep.p99_ms},       {"p99.5", rep.p995_ms},
                     {"p99.9", rep.p999_ms}};
  j["counts"] = {{"exact", rep.exact_count},
                 {"reconstructed", rep.reconstructed_count},
                 {"default", rep.default_count},
                 {"duplicate_dropped", rep.duplicate_dropped}};
  j["accuracy"] = {{"a_available", rep.accuracy.a_available},
                   {"a_degraded", rep.accuracy.a_degraded},
                   {"f_unavailable", rep.accuracy.f_unavailable},
                   {"a_overall", rep.accuracy.a_overall}};
  out << "--- report-json ---\n" << j.dump(2) << "\n";
}

inline ExperimentReport report_parse(std::istream& in) {
  std::string line;
  bool in_json = false;
  std::string json_text;
  while (std::getline(in, line)) {
    if (line == "--- report-json ---") {
      in_json = true;
      continue;
    }
    if (in_json) json_text += line + "\n";
  }
  if (json_text.empty()) throw std::runtime_error("report: missing JSON block");
  const nlohmann::json j = nlohmann::json::parse(json_text);
  ExperimentReport rep;
  rep.mode = j.at("mode").get<std::string>();
  rep.qps = j.at("qps").get<double>();
  rep.duration_s = j.at("duration_s").get<double>();
  rep.total = j.at("total").get<std::size_t>();
  rep.median_ms = j.at("latency_ms").at("median").get<double>();
  rep.mean_ms = j.at("latency_ms").at("mean").get<double>();
  rep.p99_ms = j.at("latency_ms").at("p99").get<double>();
  rep.p995_ms = j.at("latency_ms").at("p99.5").get<double>();
  rep.p999_ms = j.at("latency_ms").at("p99.9").get<double>();
  rep.exact_count = j.at("counts").at("exact").get<std::uint64_t>();
  rep.reconstructed_count = j.at("counts").at("reconstructed").get<std::uint64_t>();
  rep.default_count = j.at("counts").at("default").get<std::uint64_t>();
  rep.duplicate_dropped = j.at("counts").at("duplicate_dropped").get<std::uint64_t>();
  rep.accuracy.a_available = j.at("accuracy").at("a_available").get<double>();
  rep.accuracy.a_degraded = j.at("accuracy").at("a_degraded").get<double>();
  rep.accuracy.f_unavailable = j.at("accuracy").at("f_unavailable").get<double>();
  rep.accuracy.a_overall = j.at("accuracy").at("a_overall").get<double>();
  rep.validate();
  return rep;
}

}  // namespace parm
