#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "parm/coder.hpp"
#include "parm/queue.hpp"
#include "parm/tensor.hpp"

namespace parm {

using Clock = std::chrono::steady_clock;

enum class ServeMode {
  kParm,          // coding groups + parity workers + reconstruction
  kPlain,         // single queue, no mitigation (Equal-Resources baseline)
  kDefaultOnly,   // single queue, deadline miss answered with default
  kApproxBackup,  // every query replicated to backup workers, first wins
};

struct ServingConfig {
  ServeMode mode = ServeMode::kParm;
  std::size_t k = 2;
  std::size_t r = 1;
  double slo_ms = 25.0;
  double group_timeout_ms = 0.0;  // 0 -> slo_ms / 2
  bool eager_decode = false;
  EncoderKind encoder = EncoderKind::Sum;
  std::size_t input_dim = 0;   // 0 disables shape validation
  std::size_t output_dim = 0;  // dim of predictions / default answers
  // Time source. Defaults to the monotonic wall clock; the simulation harness
  // injects a virtual clock so the same frontend logic runs in simulated time.
  std::function<Clock::time_point()> now_fn;

  double effective_group_timeout_ms() const {
    return group_timeout_ms > 0.0 ? group_timeout_ms : slo_ms / 2.0;
  }
};

enum class ResponseKind { kExact, kReconstructed, kDefault };

struct Response {
  std::uint64_t query_id = 0;
  Tensor output;
  ResponseKind kind = ResponseKind::kExact;
  bool approximate = false;
  Clock::time_point submitted;
  Clock::time_point completed;
};

// What a worker pulls: either an original query, a parity query (parity flag
// + row), or a backup replica.
struct Envelope {
  std::uint64_t query_id = 0;
  std::uint64_t group_id = 0;
  std::uint8_t position = 0;
  bool parity = false;
  std::uint8_t parity_row = 0;
  Tensor payload;
};

struct FrontendCounters {
  std::uint64_t submitted = 0;
  std::uint64_t exact = 0;
  std::uint64_t reconstructed = 0;
  std::uint64_t defaulted = 0;
  std::uint64_t late_dropped = 0;
  std::uint64_t duplicate_dropped = 0;
  std::uint64_t unknown_dropped = 0;
  std::uint64_t decode_invocations = 0;
  std::uint64_t parity_generated = 0;
  std::uint64_t parity_discarded = 0;
};

class Frontend {
 public:
  using ResponseCallback = std::function<void(const Response&)>;

  explicit Frontend(ServingConfig cfg, ResponseCallback on_response)
      : cfg_(cfg), on_response_(std::move(on_response)) {
    if (cfg_.mode == ServeMode::kParm) {
      if (cfg_.k < 2) throw std::invalid_argument("frontend: k must be >= 2");
      if (cfg_.r < 1) throw std::invalid_argument("frontend: r must be >= 1");
      if (cfg_.output_dim == 0)
        throw std::invalid_argument("frontend: output_dim required in parm mode");
      coeffs_ = CoefficientMatrix::vandermonde(cfg_.k, cfg_.r);
      parity_queues_.reserve(cfg_.r);
      for (std::size_t i = 0; i < cfg_.r; ++i)
        parity_queues_.push_back(std::make_unique<BlockingQueue<Envelope>>());
    }
  }

  ~Frontend() { shutdown(); }

  // Enqueues the query for dispatch immediately; encoding happens on group
  // completion and never delays dispatch.
  std::uint64_t submit(Tensor query) {
    if (cfg_.input_dim != 0 && query.size() != cfg_.input_dim)
      throw std::invalid_argument("submit: query shape mismatch");
    std::uint64_t id;
    {
      std::lock_guard lock(mu_);
      id = next_id_++;
      const auto now = now_();
      const auto deadline = now + ms_to_dur(cfg_.slo_ms);
      Pending p;
      p.submitted = now;
      p.deadline = deadline;
      if (cfg_.mode == ServeMode::kParm) {
        if (!open_group_) {
          open_group_ = next_group_id_++;
          groups_.emplace(*open_group_, Group(*open_group_, cfg_, now));
        }
        Group& g = groups_.at(*open_group_);
        p.group_id = g.id;
        p.position = static_cast<std::uint8_t>(g.n_members);
        g.slots[g.n_members].query_id = id;
        g.slots[g.n_members].deadline = deadline;
        g.payloads[g.n_members] = query;
        ++g.n_members;
        pending_.emplace(id, p);
        dispatch_queue_.push(Envelope{id, g.id, p.position, false, 0, query});
        if (g.n_members == cfg_.k) {
          seal_group_locked(g);
          open_group_.reset();
        }
      } else {
        pending_.emplace(id, p);
        dispatch_queue_.push(Envelope{id, 0, 0, false, 0, query});
        if (cfg_.mode == ServeMode::kApproxBackup)
          backup_queue_.push(Envelope{id, 0, 0, false, 0, std::move(query)});
      }
      counters_.submitted++;
    }
    return id;
  }

  std::optional<Envelope> pull_original() { return dispatch_queue_.pop(); }
  std::optional<Envelope> pull_parity(std::size_t row) { return parity_queues_.at(row)->pop(); }
  std::optional<Envelope> pull_backup() { return backup_queue_.pop(); }

  // Non-blocking variants for single-threaded (simulated) drivers.
  std::optional<Envelope> try_pull_original() { return dispatch_queue_.try_pop(); }
  std::optional<Envelope> try_pull_parity(std::size_t row) { return parity_queues_.at(row)->try_pop(); }
  std::optional<Envelope> try_pull_backup() { return backup_queue_.try_pop(); }

  void on_result(std::uint64_t query_id, Tensor output) {
    std::vector<Response> out;
    {
      std::lock_guard lock(mu_);
      const auto it = pending_.find(query_id);
      if (it == pending_.end()) {
        counters_.unknown_dropped++;
        return;
      }
      Pending& p = it->second;
      if (p.parity) {
        const auto git = groups_.find(p.group_id);
        if (git == groups_.end()) {
          counters_.parity_discarded++;
          pending_.erase(it);
        } else {
          Group& g = git->second;
          g.parity_out[p.parity_row] = std::move(output);
          maybe_reconstruct_locked(g, now_(), out);
          reap_group_locked(g.id);
        }
      } else if (cfg_.mode == ServeMode::kParm) {
        const auto git = groups_.find(p.group_id);
        Group* g = git == groups_.end() ? nullptr : &git->second;
        if (p.responded) {
          // slot was answered by reconstruction/default; this is the straggler
          counters_.late_dropped++;
          pending_.erase(it);
        } else {
          p.responded = true;
          counters_.exact++;
          out.push_back(make_response(query_id, p, std::move(output),
                                      ResponseKind::kExact, false));
          if (g) {
            g->slots[p.position].responded = true;
            g->slots[p.position].exact = true;
            g->preds[p.position] = out.back().output;
            ++g->n_responded;
            maybe_reconstruct_locked(*g, now_(), out);
          }
        }
        if (g) reap_group_locked(g->id);
      } else {
        if (p.responded) {
          counters_.duplicate_dropped++;
          pending_.erase(it);
        } else {
          p.responded = true;
          counters_.exact++;
          out.push_back(make_response(query_id, p, std::move(output),
                                      ResponseKind::kExact, false));
          // approx-backup queries get a second reply; keep the entry so it
          // is accounted as a duplicate rather than unknown
          if (cfg_.mode != ServeMode::kApproxBackup) pending_.erase(it);
        }
      }
    }
    emit(out);
  }

  // Deadline pass: seals stale open groups, fires reconstruction or default
  // fallback for expired slots. Run periodically by the sweeper thread.
  void sweep() {
    std::vector<Response> out;
    {
      std::lock_guard lock(mu_);
      const auto now = now_();
      if (cfg_.mode == ServeMode::kParm) {
        if (open_group_) {
          Group& g = groups_.at(*open_group_);
          if (now - g.created >= ms_to_dur(cfg_.effective_group_timeout_ms())) {
            seal_group_locked(g);
            open_group_.reset();
          }
        }
        std::vector<std::uint64_t> ids;
        for (auto& [gid, g] : groups_) ids.push_back(gid);
        for (const std::uint64_t gid : ids) {
          auto git = groups_.find(gid);
          if (git == groups_.end()) continue;
          maybe_reconstruct_locked(git->second, now, out);
          reap_group_locked(gid);
        }
      } else if (cfg_.mode == ServeMode::kDefaultOnly) {
        std::vector<std::uint64_t> expired;
        for (auto& [id, p] : pending_)
          if (!p.responded && now >= p.deadline) expired.push_back(id);
        for (const std::uint64_t id : expired) {
          Pending& p = pending_.at(id);
          p.responded = true;
          counters_.defaulted++;
          out.push_back(make_response(id, p, default_prediction(),
                                      ResponseKind::kDefault, false));
        }
      }
    }
    emit(out);
  }

  void start_sweeper(std::chrono::milliseconds interval = std::chrono::milliseconds(1)) {
    sweeper_running_ = true;
    sweeper_ = std::thread([this, interval] {
      while (sweeper_running_) {
        sweep();
        std::this_thread::sleep_for(interval);
      }
    });
  }

  void shutdown() {
    if (sweeper_running_) {
      sweeper_running_ = false;
      if (sweeper_.joinable()) sweeper_.join();
    }
    dispatch_queue_.close();
    backup_queue_.close();
    for (auto& q : parity_queues_) q->close();
  }

  FrontendCounters counters() const {
    std::lock_guard lock(mu_);
    return counters_;
  }

  std::size_t dispatch_depth() const { return dispatch_queue_.size(); }

  const ServingConfig& config() const { return cfg_; }

 private:
  struct Pending {
    std::uint64_t group_id = 0;
    std::uint8_t position = 0;
    bool parity = false;
    std::uint8_t parity_row = 0;
    bool responded = false;
    Clock::time_point submitted;
    Clock::time_point deadline;
  };

  struct Slot {
    std::uint64_t query_id = 0;
    bool responded = false;  // exact, reconstructed, or default emitted
    bool exact = false;      // answered by the original worker reply
    bool padded = false;
    Clock::time_point deadline;
  };

  struct Group {
    std::uint64_t id;
    std::size_t k, r;
    std::size_t n_members = 0;    // real queries appended so far
    std::size_t n_responded = 0;  // slots answered (incl. padded)
    bool sealed = false;
    Clock::time_point created;
    std::vector<Slot> slots;
    std::vector<Tensor> payloads;               // held until sealing
    std::vector<std::optional<Tensor>> preds;   // arrived/padded predictions
    std::vector<std::optional<Tensor>> parity_out;
    std::vector<std::uint64_t> parity_ids;
    std::vector<Clock::time_point> parity_deadline;

    Group(std::uint64_t gid, const ServingConfig& cfg, Clock::time_point now)
        : id(gid), k(cfg.k), r(cfg.r), created(now), slots(cfg.k),
          payloads(cfg.k), preds(cfg.k), parity_out(cfg.r), parity_ids(cfg.r),
          parity_deadline(cfg.r) {}
  };

  static Clock::duration ms_to_dur(double ms) {
    return std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double, std::milli>(ms));
  }

  Clock::time_point now_() const {
    return cfg_.now_fn ? cfg_.now_fn() : Clock::now();
  }

  Tensor default_prediction() const {
    return Tensor::zeros({cfg_.output_dim > 0 ? cfg_.output_dim : 1});
  }

  Response make_response(std::uint64_t id, const Pending& p, Tensor output,
                         ResponseKind kind, bool approximate) {
    Response r;
    r.query_id = id;
    r.output = std::move(output);
    r.kind = kind;
    r.approximate = approximate || kind == ResponseKind::kReconstructed ||
                    kind == ResponseKind::kDefault;
    r.submitted = p.submitted;
    r.completed = now_();
    return r;
  }

  // Pads short groups with zero queries, encodes the parity payload, and
  // enqueues one parity envelope per coefficient row.
  void seal_group_locked(Group& g) {
    if (g.sealed) return;
    g.sealed = true;
    const auto now = now_();
    for (std::size_t i = g.n_members; i < g.k; ++i) {
      g.slots[i].padded = true;
      g.slots[i].responded = true;
      ++g.n_responded;
      g.preds[i] = default_prediction();  // zero contribution in decoding
      g.payloads[i] = cfg_.input_dim > 0 ? Tensor::zeros({cfg_.input_dim})
                                         : Tensor::zeros(g.payloads[0].shape);
    }
    const Tensor parity = encode(cfg_.encoder, g.payloads);
    for (std::size_t row = 0; row < g.r; ++row) {
      const std::uint64_t pid = next_id_++;
      Pending p;
      p.group_id = g.id;
      p.parity = true;
      p.parity_row = static_cast<std::uint8_t>(row);
      p.submitted = now;
      p.deadline = now + ms_to_dur(cfg_.slo_ms);
      pending_.emplace(pid, p);
      g.parity_ids[row] = pid;
      g.parity_deadline[row] = p.deadline;
      parity_queues_[row]->push(Envelope{
          pid, g.id, static_cast<std::uint8_t>(row), true,
          static_cast<std::uint8_t>(row), parity});
      counters_.parity_generated++;
    }
    g.payloads.clear();
  }

  // Fires reconstruction when enough parity outputs are in and either eager
  // mode is on or every empty slot's deadline has passed. When reconstruction
  // is impossible and all deadlines (slots and parity) have passed, answers
  // the remaining slots with the default prediction.
  void maybe_reconstruct_locked(Group& g, Clock::time_point now,
                                std::vector<Response>& out) {
    if (!g.sealed) return;
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < g.k; ++i)
      if (!g.slots[i].responded) missing.push_back(i);
    if (missing.empty()) return;
    std::vector<std::size_t> avail_rows;
    for (std::size_t row = 0; row < g.r; ++row)
      if (g.parity_out[row]) avail_rows.push_back(row);
    const bool deadlines_passed = [&] {
      for (const std::size_t i : missing)
        if (now < g.slots[i].deadline) return false;
      return true;
    }();
    if (missing.size() <= avail_rows.size()) {
      if (!cfg_.eager_decode && !deadlines_passed) return;
      counters_.decode_invocations++;
      std::vector<std::pair<std::size_t, Tensor>> parity_outs;
      for (std::size_t j = 0; j < missing.size(); ++j)
        parity_outs.emplace_back(avail_rows[j], *g.parity_out[avail_rows[j]]);
      std::vector<std::pair<std::size_t, Tensor>> available;
      for (std::size_t i = 0; i < g.k; ++i)
        if (g.slots[i].responded) available.emplace_back(i, *g.preds[i]);
      auto recs = decode_multi(parity_outs, available, coeffs_);
      for (auto& [idx, rec] : recs) {
        Slot& s = g.slots[idx];
        s.responded = true;
        ++g.n_responded;
        g.preds[idx] = rec;
        Pending& p = pending_.at(s.query_id);
        p.responded = true;
        counters_.reconstructed++;
        out.push_back(make_response(s.query_id, p, std::move(rec),
                                    ResponseKind::kReconstructed, true));
      }
      return;
    }
    // Not enough parity outputs: fall back to default predictions once the
    // missing parity rows are themselves past deadline.
    if (!deadlines_passed) return;
    for (std::size_t row = 0; row < g.r; ++row)
      if (!g.parity_out[row] && now < g.parity_deadline[row]) return;
    for (const std::size_t idx : missing) {
      Slot& s = g.slots[idx];
      s.responded = true;
      ++g.n_responded;
      g.preds[idx] = default_prediction();
      Pending& p = pending_.at(s.query_id);
      p.responded = true;
      counters_.defaulted++;
      out.push_back(make_response(s.query_id, p, default_prediction(),
                                  ResponseKind::kDefault, false));
    }
  }

  // Drops a group, its slot records, and any still-open parity entries once
  // every slot is answered and every parity output arrived or expired.
  void reap_group_locked(std::uint64_t gid) {
    const auto git = groups_.find(gid);
    if (git == groups_.end()) return;
    Group& g = git->second;
    if (!g.sealed || g.n_responded < g.k) return;
    const auto now = now_();
    for (std::size_t row = 0; row < g.r; ++row)
      if (!g.parity_out[row] && now < g.parity_deadline[row]) return;
    for (std::size_t row = 0; row < g.r; ++row) {
      if (!g.parity_out[row]) counters_.parity_discarded++;
      pending_.erase(g.parity_ids[row]);
    }
    // pendings for reconstructed/defaulted slots stay behind so the eventual
    // straggler reply is counted as late rather than unknown
    for (const Slot& s : g.slots)
      if (!s.padded && s.exact) pending_.erase(s.query_id);
    groups_.erase(git);
  }

  void emit(std::vector<Response>& out) {
    for (Response& r : out)
      if (on_response_) on_response_(r);
  }

  ServingConfig cfg_;
  ResponseCallback on_response_;
  CoefficientMatrix coeffs_;

  mutable std::mutex mu_;
  std::uint64_t next_id_ = 1;
  std::uint64_t next_group_id_ = 1;
  std::map<std::uint64_t, Pending> pending_;
  std::map<std::uint64_t, Group> groups_;
  std::optional<std::uint64_t> open_group_;
  FrontendCounters counters_;

  BlockingQueue<Envelope> dispatch_queue_;
  std::vector<std::unique_ptr<BlockingQueue<Envelope>>> parity_queues_;
  BlockingQueue<Envelope> backup_queue_;

  std::atomic<bool> sweeper_running_{false};
  std::thread sweeper_;
};

enum class WorkerRole { kDeployed, kParity, kBackup };

struct WorkerOptions {
  WorkerRole role = WorkerRole::kDeployed;
  std::size_t parity_row = 0;
  double slowdown_p = 0.0;   // per-request probability of an injected stall
  double slowdown_ms = 0.0;
  std::uint64_t seed = 0;
};

// Single-threaded pull worker over the in-process transport. Runs the given
// compute function; with probability slowdown_p stalls for slowdown_ms first.
class InProcWorker {
 public:
  InProcWorker(Frontend& fe, std::function<Tensor(const Tensor&)> compute,
               WorkerOptions opts)
      : fe_(fe), compute_(std::move(compute)), opts_(opts) {
    thread_ = std::thread([this] { run(); });
  }

  ~InProcWorker() { join(); }

  void join() {
    if (thread_.joinable()) thread_.join();
  }

 private:
  void run() {
    std::mt19937 rng(static_cast<std::uint32_t>(opts_.seed));
    std::bernoulli_distribution slow(opts_.slowdown_p);
    for (;;) {
      std::optional<Envelope> env;
      switch (opts_.role) {
        case WorkerRole::kDeployed: env = fe_.pull_original(); break;
        case WorkerRole::kParity: env = fe_.pull_parity(opts_.parity_row); break;
        case WorkerRole::kBackup: env = fe_.pull_backup(); break;
      }
      if (!env) return;
      if (opts_.slowdown_p > 0.0 && slow(rng))
        std::this_thread::sleep_for(
            std::chrono::duration<double, std::milli>(opts_.slowdown_ms));
      fe_.on_result(env->query_id, compute_(env->payload));
    }
  }

  Frontend& fe_;
  std::function<Tensor(const Tensor&)> compute_;
  WorkerOptions opts_;
  std::thread thread_;
};

}  // namespace parm
