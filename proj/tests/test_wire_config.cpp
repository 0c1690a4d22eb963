#include <doctest.h>

#include <random>
#include <sstream>

#include "parm/config.hpp"
#include "parm/wire.hpp"

using parm::Frame;
using parm::MsgType;

TEST_CASE("frame round trip") {
  Frame f;
  f.type = MsgType::kPrediction;
  f.query_id = 0x1122334455667788ull;
  f.group_id = 42;
  f.position = 3;
  f.flags = parm::frame_flags::kParity | parm::frame_flags::kApproximate;
  f.payload = {1.5f, -2.5f, 0.0f};
  const auto buf = parm::encode_frame(f);
  CHECK(buf.size() == parm::kFrameHeaderSize + 12);
  CHECK(buf[0] == 0x4D);  // little-endian 0x504D
  CHECK(buf[1] == 0x50);
  CHECK(parm::decode_frame(buf) == f);
}

TEST_CASE("fuzzed frames survive encode -> decode bitwise") {
  std::mt19937_64 rng(123);
  std::uniform_int_distribution<int> type(1, 4), len(0, 64);
  std::uniform_real_distribution<float> val(-1e6f, 1e6f);
  for (int i = 0; i < 1000; ++i) {
    Frame f;
    f.type = static_cast<MsgType>(type(rng));
    f.query_id = rng();
    f.group_id = rng();
    f.position = static_cast<std::uint8_t>(rng());
    f.flags = static_cast<std::uint8_t>(rng() & 7);
    f.payload.resize(len(rng));
    for (float& v : f.payload) v = val(rng);
    CHECK(parm::decode_frame(parm::encode_frame(f)) == f);
  }
}

TEST_CASE("frame decode rejects corruption") {
  Frame f;
  f.payload = {1.0f};
  auto buf = parm::encode_frame(f);
  auto bad = buf;
  bad[0] = 0xFF;
  CHECK_THROWS_AS(parm::decode_frame(bad), parm::frame_error);
  bad = buf;
  bad[2] = 9;  // version
  CHECK_THROWS_AS(parm::decode_frame(bad), parm::frame_error);
  bad = buf;
  bad[3] = 0;  // message type
  CHECK_THROWS_AS(parm::decode_frame(bad), parm::frame_error);
  bad = buf;
  bad.pop_back();  // truncated payload
  CHECK_THROWS_AS(parm::decode_frame(bad), parm::frame_error);
  CHECK_THROWS_AS(parm::decode_frame(std::vector<std::uint8_t>(5)), parm::frame_error);
}

TEST_CASE("config parse") {
  std::istringstream in(
      "k=2\n"
      "r = 1\n"
      "slo_ms = 25\n"
      "eager_decode = true\n"
      "# comment line\n"
      "\n"
      "slowdown_p = 0.05\n");
  const parm::Config cfg = parm::Config::parse(in);
  CHECK(cfg.get_int("k", 0) == 2);
  CHECK(cfg.get_int("r", 0) == 1);
  CHECK(cfg.get_double("slo_ms", 0) == 25.0);
  CHECK(cfg.get_bool("eager_decode", false));
  CHECK(cfg.get_double("slowdown_p", 0) == 0.05);
  CHECK(cfg.get_int("seed", 7) == 7);  // fallback

  std::istringstream bad("not a kv line\n");
  CHECK_THROWS_AS(parm::Config::parse(bad), std::invalid_argument);
}
