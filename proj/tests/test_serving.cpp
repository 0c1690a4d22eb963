#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <random>
#include <thread>

#include "parm/mlp.hpp"
#include "parm/net.hpp"
#include "parm/serving.hpp"

using namespace std::chrono_literals;
using parm::Envelope;
using parm::Frontend;
using parm::MlpModel;
using parm::Response;
using parm::ServingConfig;
using parm::Tensor;

namespace {

ServingConfig parm_cfg(std::size_t k = 2, std::size_t r = 1, double slo_ms = 50.0) {
  ServingConfig cfg;
  cfg.mode = parm::ServeMode::kParm;
  cfg.k = k;
  cfg.r = r;
  cfg.slo_ms = slo_ms;
  cfg.input_dim = 4;
  cfg.output_dim = 3;
  return cfg;
}

Tensor q(float fill) {
  Tensor t({4});
  for (float& v : t.data) v = fill;
  return t;
}

struct Recorder {
  std::mutex mu;
  std::vector<Response> responses;
  void operator()(const Response& r) {
    std::lock_guard lock(mu);
    responses.push_back(r);
  }
  std::size_t count() {
    std::lock_guard lock(mu);
    return responses.size();
  }
};

}  // namespace

TEST_CASE("submit group arithmetic and parity payload") {
  auto rec = std::make_shared<Recorder>();
  Frontend fe(parm_cfg(2), [rec](const Response& r) { (*rec)(r); });
  fe.submit(q(1));
  fe.submit(q(2));
  CHECK(fe.counters().parity_generated == 1);
  fe.submit(q(3));
  CHECK(fe.counters().parity_generated == 1);  // third query opens a new group

  const auto parity = fe.pull_parity(0);
  REQUIRE(parity.has_value());
  CHECK(parity->parity);
  for (float v : parity->payload.data) CHECK(v == 3.0f);  // 1 + 2

  CHECK_THROWS_AS(fe.submit(Tensor::zeros({7})), std::invalid_argument);
  fe.shutdown();
}

TEST_CASE("parity queue receives 1/k of the original rate") {
  auto rec = std::make_shared<Recorder>();
  Frontend fe(parm_cfg(3), [rec](const Response& r) { (*rec)(r); });
  for (int i = 0; i < 30; ++i) fe.submit(q(static_cast<float>(i)));
  CHECK(fe.counters().submitted == 30);
  CHECK(fe.counters().parity_generated == 10);
  fe.shutdown();
}

TEST_CASE("pull is FIFO and role-separated") {
  auto rec = std::make_shared<Recorder>();
  Frontend fe(parm_cfg(2), [rec](const Response& r) { (*rec)(r); });
  const auto id1 = fe.submit(q(1));
  const auto id2 = fe.submit(q(2));
  const auto e1 = fe.pull_original();
  const auto e2 = fe.pull_original();
  REQUIRE(e1.has_value());
  REQUIRE(e2.has_value());
  CHECK(e1->query_id == id1);
  CHECK(e2->query_id == id2);
  CHECK_FALSE(e1->parity);
  const auto p = fe.pull_parity(0);
  REQUIRE(p.has_value());
  CHECK(p->parity);
  fe.shutdown();
  CHECK_FALSE(fe.pull_original().has_value());  // closed queue terminates pullers
}

TEST_CASE("two workers share three equal-cost queries fairly") {
  // Deterministic simulation: each worker pulls, 'serves' for a fixed time,
  // and pulls again. Neither worker can take a second query before the other
  // has taken its first, because both first pulls happen before any second.
  auto rec = std::make_shared<Recorder>();
  Frontend fe(parm_cfg(4), [rec](const Response& r) { (*rec)(r); });
  for (int i = 0; i < 3; ++i) fe.submit(q(static_cast<float>(i)));
  std::mutex mu;
  std::map<std::thread::id, int> served;
  auto worker = [&] {
    while (auto env = fe.pull_original()) {
      std::this_thread::sleep_for(5ms);
      std::lock_guard lock(mu);
      served[std::this_thread::get_id()]++;
    }
  };
  std::thread w1(worker), w2(worker);
  std::this_thread::sleep_for(60ms);
  fe.shutdown();
  w1.join();
  w2.join();
  CHECK(served.size() == 2);  // both workers got at least one query
  for (const auto& [tid, n] : served) CHECK(n <= 2);
}

TEST_CASE("all-arrived group discards parity on completion") {
  auto rec = std::make_shared<Recorder>();
  Frontend fe(parm_cfg(2), [rec](const Response& r) { (*rec)(r); });
  const auto id1 = fe.submit(q(1));
  const auto id2 = fe.submit(q(2));
  fe.on_result(id1, Tensor({3}, {1, 0, 0}));
  fe.on_result(id2, Tensor({3}, {0, 1, 0}));
  CHECK(rec->count() == 2);
  CHECK(fe.counters().decode_invocations == 0);
  // parity result arrives after completion: group reaped only after parity
  // resolution, so it lands as discarded either way
  const auto pe = fe.pull_parity(0);
  REQUIRE(pe.has_value());
  fe.on_result(pe->query_id, Tensor({3}, {9, 9, 9}));
  CHECK(rec->count() == 2);
  CHECK(fe.counters().reconstructed == 0);
  fe.shutdown();
}

TEST_CASE("duplicate and unknown results are dropped") {
  auto rec = std::make_shared<Recorder>();
  Frontend fe(parm_cfg(2), [rec](const Response& r) { (*rec)(r); });
  const auto id1 = fe.submit(q(1));
  fe.on_result(id1, Tensor({3}, {1, 0, 0}));
  fe.on_result(id1, Tensor({3}, {1, 0, 0}));
  CHECK(fe.counters().late_dropped == 1);
  fe.on_result(999999, Tensor({3}, {1, 0, 0}));
  CHECK(fe.counters().unknown_dropped == 1);
  CHECK(rec->count() == 1);
  fe.shutdown();
}

TEST_CASE("eager reconstruction fires once parity and k-1 originals arrive") {
  auto cfg = parm_cfg(2, 1, 1000.0);
  cfg.eager_decode = true;
  auto rec = std::make_shared<Recorder>();
  Frontend fe(cfg, [rec](const Response& r) { (*rec)(r); });
  const auto id1 = fe.submit(q(1));
  const auto id2 = fe.submit(q(2));
  (void)id2;
  fe.on_result(id1, Tensor({3}, {1, 2, 3}));
  const auto pe = fe.pull_parity(0);
  REQUIRE(pe.has_value());
  fe.on_result(pe->query_id, Tensor({3}, {10, 10, 10}));
  CHECK(rec->count() == 2);
  CHECK(fe.counters().reconstructed == 1);
  std::lock_guard lock(rec->mu);
  const Response& r = rec->responses.back();
  CHECK(r.kind == parm::ResponseKind::kReconstructed);
  CHECK(r.approximate);
  CHECK(r.output.data == std::vector<float>{9, 8, 7});  // 10-1, 10-2, 10-3
}

TEST_CASE("late original after reconstruction is dropped") {
  auto cfg = parm_cfg(2, 1, 1000.0);
  cfg.eager_decode = true;
  auto rec = std::make_shared<Recorder>();
  Frontend fe(cfg, [rec](const Response& r) { (*rec)(r); });
  const auto id1 = fe.submit(q(1));
  const auto id2 = fe.submit(q(2));
  fe.on_result(id1, Tensor({3}, {1, 2, 3}));
  const auto pe = fe.pull_parity(0);
  fe.on_result(pe->query_id, Tensor({3}, {10, 10, 10}));
  CHECK(fe.counters().reconstructed == 1);
  fe.on_result(id2, Tensor({3}, {5, 5, 5}));  // straggler finally answers
  CHECK(fe.counters().late_dropped == 1);
  CHECK(rec->count() == 2);
  fe.shutdown();
}

TEST_CASE("deadline-mode reconstruction waits for the slot deadline") {
  auto rec = std::make_shared<Recorder>();
  Frontend fe(parm_cfg(2, 1, 30.0), [rec](const Response& r) { (*rec)(r); });
  fe.start_sweeper();
  const auto id1 = fe.submit(q(1));
  fe.submit(q(2));
  fe.on_result(id1, Tensor({3}, {1, 2, 3}));
  const auto pe = fe.pull_parity(0);
  fe.on_result(pe->query_id, Tensor({3}, {10, 10, 10}));
  CHECK(fe.counters().reconstructed == 0);  // deadline not reached yet
  std::this_thread::sleep_for(60ms);
  CHECK(fe.counters().reconstructed == 1);
  fe.shutdown();
}

TEST_CASE("both originals missing past deadline with r=1 default both") {
  auto rec = std::make_shared<Recorder>();
  Frontend fe(parm_cfg(2, 1, 20.0), [rec](const Response& r) { (*rec)(r); });
  fe.start_sweeper();
  fe.submit(q(1));
  fe.submit(q(2));
  const auto pe = fe.pull_parity(0);
  fe.on_result(pe->query_id, Tensor({3}, {10, 10, 10}));
  std::this_thread::sleep_for(60ms);
  CHECK(fe.counters().defaulted == 2);
  CHECK(rec->count() == 2);
  std::lock_guard lock(rec->mu);
  for (const Response& r : rec->responses)
    CHECK(r.kind == parm::ResponseKind::kDefault);
  fe.shutdown();
}

TEST_CASE("partial group is sealed by padding after group timeout") {
  auto cfg = parm_cfg(4, 1, 40.0);
  cfg.group_timeout_ms = 10.0;
  auto rec = std::make_shared<Recorder>();
  Frontend fe(cfg, [rec](const Response& r) { (*rec)(r); });
  fe.start_sweeper();
  fe.submit(q(5));  // only 1 of 4 slots filled
  std::this_thread::sleep_for(25ms);
  CHECK(fe.counters().parity_generated == 1);  // sealed with zero padding
  const auto pe = fe.pull_parity(0);
  REQUIRE(pe.has_value());
  for (float v : pe->payload.data) CHECK(v == 5.0f);  // zeros don't change the sum
  fe.shutdown();
}

TEST_CASE("worker slowdown injection is seeded and delays replies") {
  auto rec = std::make_shared<Recorder>();
  ServingConfig cfg;
  cfg.mode = parm::ServeMode::kPlain;
  cfg.input_dim = 4;
  cfg.output_dim = 3;
  Frontend fe(cfg, [rec](const Response& r) { (*rec)(r); });
  parm::WorkerOptions o;
  o.slowdown_p = 1.0;
  o.slowdown_ms = 30.0;
  o.seed = 1;
  parm::InProcWorker w(fe, [](const Tensor&) { return Tensor({3}, {1, 2, 3}); }, o);
  const auto t0 = parm::Clock::now();
  fe.submit(q(1));
  while (rec->count() < 1) std::this_thread::sleep_for(1ms);
  const double ms =
      std::chrono::duration<double, std::milli>(parm::Clock::now() - t0).count();
  CHECK(ms >= 30.0);
  fe.shutdown();
}

TEST_CASE("reconstructed responses equal the straggler's true prediction") {
  // Linear deployed model, parity worker runs the same model: F(P) is the
  // exact prediction sum, so reconstruction must match direct evaluation.
  const MlpModel f = parm::mlp_init({4, 3}, 7);
  auto cfg = parm_cfg(2, 1, 25.0);
  auto rec = std::make_shared<Recorder>();
  Frontend fe(cfg, [rec](const Response& r) { (*rec)(r); });
  fe.start_sweeper();
  // even-indexed queries are marked slow via their first element: stalls are
  // query-driven so the test does not depend on which worker pulls what
  auto fwd = [&f](const Tensor& x) {
    if (x.data[0] > 50.0f) std::this_thread::sleep_for(120ms);
    return parm::mlp_forward(f, x);
  };
  parm::WorkerOptions fast;
  parm::WorkerOptions par;
  par.role = parm::WorkerRole::kParity;

  std::vector<Tensor> queries;
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (int i = 0; i < 20; ++i) {
    Tensor t({4});
    for (float& v : t.data) v = dist(rng);
    if (i % 2 == 1) t.data[0] = 99.0f;  // second member of each pair is slow
    queries.push_back(std::move(t));
  }
  {
    auto fwd_plain = [&f](const Tensor& x) { return parm::mlp_forward(f, x); };
    parm::InProcWorker w1(fe, fwd, fast);
    parm::InProcWorker w2(fe, fwd, fast);
    parm::InProcWorker parw(fe, fwd_plain, par);
    std::map<std::uint64_t, Tensor> truth;
    for (const Tensor& t : queries) truth.emplace(fe.submit(t), parm::mlp_forward(f, t));
    const auto t0 = parm::Clock::now();
    while (rec->count() < queries.size() &&
           parm::Clock::now() - t0 < std::chrono::seconds(30))
      std::this_thread::sleep_for(2ms);
    fe.shutdown();  // close queues before worker join even if checks fail
    CHECK(rec->count() == queries.size());
    std::lock_guard lock(rec->mu);
    std::size_t reconstructed = 0;
    for (const Response& r : rec->responses) {
      const Tensor& expect = truth.at(r.query_id);
      if (r.kind == parm::ResponseKind::kReconstructed) ++reconstructed;
      if (r.kind == parm::ResponseKind::kDefault) continue;
      for (std::size_t e = 0; e < expect.size(); ++e)
        CHECK(std::abs(r.output.data[e] - expect.data[e]) < 1e-4f);
    }
    CHECK(reconstructed > 0);
  }
}

TEST_CASE("tcp server end to end with remote-style workers") {
  ServingConfig cfg = parm_cfg(2, 1, 200.0);
  cfg.eager_decode = true;
  parm::FrontendServer server(cfg, 0);  // ephemeral port

  const MlpModel f = parm::mlp_init({4, 3}, 70);
  const std::string wpath = "test_tcp_model.pmw";
  parm::save_weights(f, wpath);

  auto worker_main = [&](bool parity) {
    parm::RemoteWorkerConfig wc;
    wc.model_path = wpath;
    wc.parity = parity;
    wc.port = server.port();
    try {
      parm::run_remote_worker(wc);
    } catch (const std::exception&) {
      // server shutdown severs the socket
    }
  };
  std::thread w1(worker_main, false), w2(worker_main, false), wp(worker_main, true);

  parm::Socket client = parm::Socket::connect_to("127.0.0.1", server.port());
  for (int i = 0; i < 6; ++i) {
    parm::Frame qf;
    qf.type = parm::MsgType::kQuery;
    qf.payload = {0.1f * i, 0.2f, -0.3f, 0.4f};
    client.send_frame(qf);
  }
  std::size_t got = 0;
  parm::Frame reply;
  while (got < 6 && client.recv_frame(&reply)) {
    CHECK(reply.type == parm::MsgType::kPrediction);
    CHECK(reply.payload.size() == 3);
    ++got;
  }
  CHECK(got == 6);
  client.close();
  server.stop();
  w1.join();
  w2.join();
  wp.join();
  std::remove(wpath.c_str());
}
