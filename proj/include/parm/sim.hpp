#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <queue>
#include <random>
#include <stdexcept>
#include <vector>

#include "parm/bench.hpp"
#include "parm/mlp.hpp"
#include "parm/serving.hpp"

// Discrete-event (virtual-clock) experiment engine.
//
// The threaded engine in bench.hpp measures real wall-clock latency, which on
// a busy or preempted host mixes scheduler noise into the tail percentiles.
// This engine drives the very same Frontend — one event loop, one injected
// clock — so queueing, coding-group, deadline, and reconstruction behavior are
// identical, but time is virtual: workers charge a fixed measured service time
// (plus injected slowdowns) instead of being scheduled by the OS. Runs are
// bit-for-bit deterministic for a given seed and service time, and tail
// percentiles reflect only the modeled system.

namespace parm {

// Median wall-clock cost of one forward pass, in milliseconds. Used as the
// simulated per-query service time; the median is robust to host stalls.
inline double measure_inference_ms(const MlpModel& model, int reps = 201) {
  Tensor probe({model.input_dim()});
  for (std::size_t i = 0; i < probe.size(); ++i)
    probe.data[i] = static_cast<float>(i % 7) * 0.1f;
  volatile float sink = 0.0f;
  sink = sink + mlp_forward(model, probe).data[0];  // warm up
  std::vector<double> ms;
  ms.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    sink = sink + mlp_forward(model, probe).data[0];
    ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  return percentile(ms, 0.5);
}

inline double measure_capacity_qps_sim(const ExperimentConfig& base,
                                       const MlpModel& deployed,
                                       const std::vector<MlpModel>& parity_models,
                                       const MlpModel* backup_model = nullptr);

// Same contract and report shape as run_experiment, in virtual time. Tensor
// math (inference, encode, decode) is still real — only the clock is modeled.
inline ExperimentReport run_simulated_experiment(
    const ExperimentConfig& cfg_in, const MlpModel& deployed,
    const std::vector<MlpModel>& parity_models,
    const MlpModel* backup_model = nullptr) {
  ExperimentConfig cfg = cfg_in;
  if (cfg.service_ms <= 0.0) cfg.service_ms = measure_inference_ms(deployed);
  if (cfg.qps <= 0.0)
    cfg.qps = 0.6 * measure_capacity_qps_sim(cfg, deployed, parity_models,
                                             backup_model);

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
    throw std::invalid_argument("run_simulated_experiment: need one parity model per row");
  if (cfg.mode == BenchMode::kApproxBackup && backup_model == nullptr)
    throw std::invalid_argument("run_simulated_experiment: approx_backup needs a backup model");

  const auto epoch = Clock::time_point{} + std::chrono::hours(1);
  Clock::time_point sim_now = epoch;
  scfg.now_fn = [&sim_now] { return sim_now; };

  std::vector<Response> responses;
  responses.reserve(cfg.n);
  Frontend fe(scfg, [&responses](const Response& r) { responses.push_back(r); });

  struct SimWorker {
    WorkerRole role = WorkerRole::kDeployed;
    std::size_t parity_row = 0;
    bool busy = false;
    Envelope current;
    std::mt19937 rng;
  };
  std::vector<SimWorker> workers;
  std::size_t deployed_count = cfg.workers;
  if (cfg.mode == BenchMode::kEqualResources) deployed_count += extra * cfg.r;
  for (std::size_t i = 0; i < deployed_count; ++i) {
    SimWorker w;
    w.role = WorkerRole::kDeployed;
    w.rng.seed(static_cast<std::uint32_t>(cfg.seed * 7919 + i + 1));
    workers.push_back(std::move(w));
  }
  if (cfg.mode == BenchMode::kParm) {
    for (std::size_t row = 0; row < cfg.r; ++row)
      for (std::size_t i = 0; i < extra; ++i) {
        SimWorker w;
        w.role = WorkerRole::kParity;
        w.parity_row = row;
        w.rng.seed(static_cast<std::uint32_t>(cfg.seed * 104729 + row * 131 + i + 1));
        workers.push_back(std::move(w));
      }
  } else if (cfg.mode == BenchMode::kApproxBackup) {
    for (std::size_t i = 0; i < extra; ++i) {
      SimWorker w;
      w.role = WorkerRole::kBackup;
      w.rng.seed(static_cast<std::uint32_t>(cfg.seed * 7907 + i + 1));
      workers.push_back(std::move(w));
    }
  }

  auto compute = [&](const SimWorker& w, const Tensor& x) {
    switch (w.role) {
      case WorkerRole::kParity: return mlp_forward(parity_models[w.parity_row], x);
      case WorkerRole::kBackup: return mlp_forward(*backup_model, x);
      default: return mlp_forward(deployed, x);
    }
  };

  enum class EventKind { kArrival, kWorkerDone, kSweep };
  struct Event {
    Clock::time_point t;
    std::uint64_t seq;  // FIFO tiebreak at equal timestamps
    EventKind kind;
    std::size_t idx;    // arrival index or worker index
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.t != b.t ? a.t > b.t : a.seq > b.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> events;
  std::uint64_t seq = 0;

  const auto ms_dur = [](double ms) {
    return std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double, std::milli>(ms));
  };

  const std::vector<double> arrivals = generate_poisson(cfg.qps, cfg.n, cfg.seed);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const auto t = epoch + std::chrono::duration_cast<Clock::duration>(
                               std::chrono::duration<double>(arrivals[i]));
    events.push({t, seq++, EventKind::kArrival, i});
  }

  std::mt19937 qrng(static_cast<std::uint32_t>(cfg.seed) + 17);
  std::normal_distribution<float> qdist(0.0f, 1.0f);
  std::bernoulli_distribution slow(cfg.slowdown_p);

  // Starts every idle worker whose queue has work, charging virtual service
  // time (plus an injected stall, drawn per request as in InProcWorker).
  auto start_idle_workers = [&] {
    for (std::size_t wi = 0; wi < workers.size(); ++wi) {
      SimWorker& w = workers[wi];
      if (w.busy) continue;
      std::optional<Envelope> env;
      switch (w.role) {
        case WorkerRole::kDeployed: env = fe.try_pull_original(); break;
        case WorkerRole::kParity: env = fe.try_pull_parity(w.parity_row); break;
        case WorkerRole::kBackup: env = fe.try_pull_backup(); break;
      }
      if (!env) continue;
      w.busy = true;
      w.current = std::move(*env);
      double svc = cfg.service_ms;
      if (cfg.slowdown_p > 0.0 && slow(w.rng)) svc += cfg.slowdown_ms;
      events.push({sim_now + ms_dur(svc), seq++, EventKind::kWorkerDone, wi});
    }
  };

  while (!events.empty()) {
    const Event ev = events.top();
    events.pop();
    sim_now = ev.t;
    switch (ev.kind) {
      case EventKind::kArrival: {
        Tensor q({deployed.input_dim()});
        for (float& v : q.data) v = qdist(qrng);
        fe.submit(std::move(q));
        // Deadline behavior is event-driven rather than polled: the only
        // times sweep() can act on this query are its group timeout, its own
        // deadline, and the deadline of a parity query sealed at the group
        // timeout.
        if (cfg.mode == BenchMode::kParm) {
          const double gt = scfg.effective_group_timeout_ms();
          events.push({sim_now + ms_dur(gt), seq++, EventKind::kSweep, 0});
          events.push({sim_now + ms_dur(cfg.slo_ms), seq++, EventKind::kSweep, 0});
          events.push({sim_now + ms_dur(gt) + ms_dur(cfg.slo_ms), seq++,
                       EventKind::kSweep, 0});
        } else if (cfg.mode == BenchMode::kDefaultOnly) {
          events.push({sim_now + ms_dur(cfg.slo_ms), seq++, EventKind::kSweep, 0});
        }
        break;
      }
      case EventKind::kWorkerDone: {
        SimWorker& w = workers[ev.idx];
        w.busy = false;
        fe.on_result(w.current.query_id, compute(w, w.current.payload));
        break;
      }
      case EventKind::kSweep:
        fe.sweep();
        break;
    }
    start_idle_workers();
  }
  fe.shutdown();
  if (responses.size() != cfg.n)
    throw std::runtime_error("run_simulated_experiment: response count mismatch");

  ExperimentReport rep;
  rep.mode = bench_mode_name(cfg.mode);
  rep.qps = cfg.qps;
  rep.total = responses.size();
  std::vector<double> lat;
  lat.reserve(responses.size());
  double sum = 0.0;
  Clock::time_point last = epoch;
  for (const Response& r : responses) {
    const double ms =
        std::chrono::duration<double, std::milli>(r.completed - r.submitted).count();
    lat.push_back(ms);
    sum += ms;
    last = std::max(last, r.completed);
    switch (r.kind) {
      case ResponseKind::kExact: rep.exact_count++; break;
      case ResponseKind::kReconstructed: rep.reconstructed_count++; break;
      case ResponseKind::kDefault: rep.default_count++; break;
    }
  }
  rep.duration_s = std::chrono::duration<double>(last - epoch).count();
  rep.mean_ms = sum / static_cast<double>(lat.size());
  rep.median_ms = percentile(lat, 0.5);
  rep.p99_ms = percentile(lat, 0.99);
  rep.p995_ms = percentile(lat, 0.995);
  rep.p999_ms = percentile(lat, 0.999);
  rep.duplicate_dropped = fe.counters().duplicate_dropped;
  return rep;
}

// Measured capacity in virtual time: the latency knee. Binary search for the
// highest arrival rate whose median latency still looks unloaded (within 3x
// the low-rate median, floored at 1ms), capped by the analytic worker-time
// bound. Deterministic because the probes are simulated.
inline double measure_capacity_qps_sim(const ExperimentConfig& base,
                                       const MlpModel& deployed,
                                       const std::vector<MlpModel>& parity_models,
                                       const MlpModel* backup_model) {
  ExperimentConfig probe_cfg = base;
  if (probe_cfg.service_ms <= 0.0)
    probe_cfg.service_ms = measure_inference_ms(deployed);
  auto probe = [&](double qps, double seconds) {
    ExperimentConfig c = probe_cfg;
    c.qps = qps;
    c.n = std::max<std::size_t>(100, static_cast<std::size_t>(qps * seconds));
    return run_simulated_experiment(c, deployed, parity_models, backup_model);
  };
  const double unloaded = probe(50.0, 2.0).median_ms;
  const double knee_ms = std::max(1.0, 3.0 * unloaded);
  const double t_eff_ms =
      probe_cfg.service_ms + probe_cfg.slowdown_p * probe_cfg.slowdown_ms;
  double lo = 50.0;
  double hi = static_cast<double>(base.workers) / (t_eff_ms / 1000.0);
  if (hi <= lo) return hi;
  for (int iter = 0; iter < 8; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (probe(mid, 3.0).median_ms <= knee_ms)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

}  // namespace parm
