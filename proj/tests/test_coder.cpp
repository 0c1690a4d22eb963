#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "parm/coder.hpp"
#include "parm/mlp.hpp"

using parm::CoefficientMatrix;
using parm::MlpModel;
using parm::Tensor;

namespace {

// Linear model: identity activation is obtained with a single layer (no
// hidden ReLU), zero bias.
MlpModel random_linear_model(std::size_t in, std::size_t out, std::uint64_t seed) {
  MlpModel m = parm::mlp_init({in, out}, seed);
  return m;  // biases already zero
}

Tensor random_vec(std::size_t dim, std::mt19937& rng) {
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Tensor t({dim});
  for (float& v : t.data) v = dist(rng);
  return t;
}

double det(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  double d = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (a[piv][c] == 0.0) return 0.0;
    if (piv != c) {
      std::swap(a[piv], a[c]);
      d = -d;
    }
    d *= a[c][c];
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t c2 = c; c2 < n; ++c2) a[r][c2] -= f * a[c][c2];
    }
  }
  return d;
}

}  // namespace

TEST_CASE("coefficient matrix is the paper's example at k=2, r=2") {
  const CoefficientMatrix m = CoefficientMatrix::vandermonde(2, 2);
  CHECK(m.c[0] == std::vector<double>{1, 1});
  CHECK(m.c[1] == std::vector<double>{1, 2});
}

TEST_CASE("coefficient row 0 is all ones") {
  for (std::size_t k = 2; k <= 6; ++k) {
    const CoefficientMatrix m = CoefficientMatrix::vandermonde(k, 3);
    for (double v : m.c[0]) CHECK(v == 1.0);
  }
}

TEST_CASE("every square column subset is invertible for k<=6, r<=3") {
  for (std::size_t k = 2; k <= 6; ++k)
    for (std::size_t r = 1; r <= 3 && r <= k; ++r) {
      const CoefficientMatrix m = CoefficientMatrix::vandermonde(k, r);
      // exhaust all r-subsets of columns
      std::vector<std::size_t> idx(r);
      std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t start,
                                                              std::size_t depth) {
        if (depth == r) {
          std::vector<std::vector<double>> sub(r, std::vector<double>(r));
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < r; ++j) sub[i][j] = m.c[i][idx[j]];
          CHECK(std::abs(det(sub)) > 0.0);
          return;
        }
        for (std::size_t i = start; i < k; ++i) {
          idx[depth] = i;
          rec(i + 1, depth + 1);
        }
      };
      rec(0, 0);
    }
}

TEST_CASE("encode_sum") {
  CHECK(parm::encode_sum({Tensor({2}, {1, 2}), Tensor({2}, {3, 4})}).data ==
        std::vector<float>{4, 6});
  CHECK(parm::encode_sum({Tensor::zeros({3}), Tensor::zeros({3}), Tensor::zeros({3})})
            .data == std::vector<float>{0, 0, 0});
  CHECK_THROWS_AS(parm::encode_sum({Tensor({2}, {1, 2})}), std::invalid_argument);
  CHECK_THROWS_AS(parm::encode_sum({Tensor({2}, {1, 2}), Tensor::zeros({3})}),
                  std::invalid_argument);
}

TEST_CASE("encode_sum k=4 matches repeated add") {
  std::mt19937 rng(13);
  std::vector<Tensor> qs;
  for (int i = 0; i < 4; ++i) qs.push_back(random_vec(19, rng));
  Tensor expect = qs[0];
  for (int i = 1; i < 4; ++i) expect = parm::add(expect, qs[i]);
  CHECK(parm::encode_sum(qs).data == expect.data);
}

TEST_CASE("encode_concat k=4 layout") {
  std::mt19937 rng(14);
  std::vector<Tensor> imgs;
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  for (int i = 0; i < 4; ++i) {
    Tensor t({32, 32, 3});
    for (float& v : t.data) v = dist(rng);
    imgs.push_back(std::move(t));
  }
  const Tensor out = parm::encode_concat(imgs);
  CHECK(out.shape == std::vector<std::size_t>{32, 32, 3});
  CHECK(out.size() == 3072);
  // top-left quadrant equals downsample(query 0)
  const Tensor small = parm::downsample(imgs[0], 16, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(out.data[(y * 32 + x) * 3 + c] == small.data[(y * 16 + x) * 3 + c]);
}

TEST_CASE("encode_concat constants and errors") {
  Tensor c({4, 4, 1});
  for (float& v : c.data) v = 0.5f;
  const Tensor out = parm::encode_concat({c, c, c, c});
  for (float v : out.data) CHECK(v == 0.5f);
  CHECK_THROWS_AS(parm::encode_concat({c, c, c}), std::invalid_argument);
  CHECK_THROWS_AS(parm::encode_concat({c, Tensor::zeros({4, 2, 1}), c, c}),
                  std::invalid_argument);

  const Tensor k2 = parm::encode_concat({c, c});
  CHECK(k2.shape == c.shape);
}

TEST_CASE("decode_single on the Table-2 linear example") {
  // F = 2x, X1 = [1,2], X2 = [3,4], parity model := F itself.
  // F(P) = 2*(X1+X2) = [8,12]; decode with F(X1) = [2,4] available.
  const auto [missing, rec] =
      parm::decode_single(Tensor({2}, {8, 12}), {{0, Tensor({2}, {2, 4})}});
  CHECK(missing == 1);
  CHECK(rec.data == std::vector<float>{6, 8});  // == F(X2)
}

TEST_CASE("decode_single recovers any withheld index from an exact parity sum") {
  std::mt19937 rng(15);
  const std::size_t k = 4;
  std::vector<Tensor> preds;
  for (std::size_t i = 0; i < k; ++i) preds.push_back(random_vec(8, rng));
  const Tensor parity_out = parm::encode_sum(preds);
  for (std::size_t withheld = 0; withheld < k; ++withheld) {
    std::vector<std::pair<std::size_t, Tensor>> avail;
    for (std::size_t i = 0; i < k; ++i)
      if (i != withheld) avail.emplace_back(i, preds[i]);
    const auto [missing, rec] = parm::decode_single(parity_out, avail);
    CHECK(missing == withheld);
    for (std::size_t e = 0; e < rec.size(); ++e)
      CHECK(std::abs(rec.data[e] - preds[withheld].data[e]) < 1e-5f);
  }
}

TEST_CASE("decode_single errors") {
  const Tensor p({2}, {1, 2});
  CHECK_THROWS_AS(parm::decode_single(p, {}), std::invalid_argument);
  CHECK_THROWS_AS(parm::decode_single(p, {{0, p}, {0, p}}), std::invalid_argument);
  CHECK_THROWS_AS(parm::decode_single(p, {{0, Tensor::zeros({3})}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(parm::decode_single(p, {{5, p}}), std::invalid_argument);
}

TEST_CASE("decode_single + sum of available equals parity output exactly") {
  std::mt19937 rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::pair<std::size_t, Tensor>> avail;
    for (std::size_t i = 0; i < 2; ++i) avail.emplace_back(i, random_vec(6, rng));
    const Tensor parity_out = random_vec(6, rng);
    auto [missing, rec] = parm::decode_single(parity_out, avail);
    // re-adding the subtracted predictions recovers the parity output up to
    // float rounding of each step
    Tensor back = rec;
    for (std::size_t i = avail.size(); i-- > 0;)
      back = parm::add(back, avail[i].second);
    for (std::size_t e = 0; e < back.size(); ++e)
      CHECK(std::abs(back.data[e] - parity_out.data[e]) < 1e-5f);
  }
}

TEST_CASE("decode_multi 2x2 solve with paper coefficients") {
  // rows [1,1] and [1,2]; both originals missing.
  // out0 = F1 + F2, out1 = F1 + 2*F2 -> F1 = 2*out0 - out1, F2 = out1 - out0.
  const CoefficientMatrix coeffs = CoefficientMatrix::vandermonde(2, 2);
  const Tensor f1({2}, {1, -2}), f2({2}, {3, 5});
  const Tensor out0 = parm::add(f1, f2);
  const Tensor out1 = parm::add(f1, parm::scale(f2, 2.0f));
  const auto recs = parm::decode_multi({{0, out0}, {1, out1}}, {}, coeffs);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].first == 0);
  CHECK(recs[1].first == 1);
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(recs[0].second.data[e] == doctest::Approx(f1.data[e]).epsilon(1e-5));
    CHECK(recs[1].second.data[e] == doctest::Approx(f2.data[e]).epsilon(1e-5));
  }
}

TEST_CASE("decode_multi with r'=1 equals decode_single") {
  std::mt19937 rng(17);
  const CoefficientMatrix coeffs = CoefficientMatrix::vandermonde(3, 1);
  std::vector<Tensor> preds;
  for (int i = 0; i < 3; ++i) preds.push_back(random_vec(5, rng));
  const Tensor parity_out = parm::encode_sum(preds);
  const std::vector<std::pair<std::size_t, Tensor>> avail{{0, preds[0]}, {2, preds[2]}};
  const auto multi = parm::decode_multi({{0, parity_out}}, avail, coeffs);
  const auto [mi, single] = parm::decode_single(parity_out, avail);
  REQUIRE(multi.size() == 1);
  CHECK(multi[0].first == mi);
  for (std::size_t e = 0; e < single.size(); ++e)
    CHECK(multi[0].second.data[e] == doctest::Approx(single.data[e]).epsilon(1e-5));
}

TEST_CASE("decode_multi k=3 r=2 vs direct evaluation of a random linear model") {
  std::mt19937 rng(18);
  const MlpModel f = random_linear_model(6, 4, 18);
  const CoefficientMatrix coeffs = CoefficientMatrix::vandermonde(3, 2);
  std::vector<Tensor> xs, preds;
  for (int i = 0; i < 3; ++i) {
    xs.push_back(random_vec(6, rng));
    preds.push_back(parm::mlp_forward(f, xs.back()));
  }
  // exact parity outputs from the coefficient transform
  std::vector<std::pair<std::size_t, Tensor>> pouts;
  for (std::size_t row = 0; row < 2; ++row)
    pouts.emplace_back(row, parm::target_label(coeffs, row, preds));
  const std::vector<std::pair<std::size_t, Tensor>> avail{{1, preds[1]}};
  const auto recs = parm::decode_multi(pouts, avail, coeffs);
  REQUIRE(recs.size() == 2);
  for (const auto& [idx, rec] : recs)
    for (std::size_t e = 0; e < rec.size(); ++e)
      CHECK(std::abs(rec.data[e] - preds[idx].data[e]) < 1e-4f);
}

TEST_CASE("decode_multi recovers all erasure patterns exhaustively, k<=4 r<=2") {
  std::mt19937 rng(19);
  for (std::size_t k = 2; k <= 4; ++k)
    for (std::size_t r = 1; r <= 2; ++r) {
      const CoefficientMatrix coeffs = CoefficientMatrix::vandermonde(k, r);
      std::vector<Tensor> preds;
      for (std::size_t i = 0; i < k; ++i) preds.push_back(random_vec(7, rng));
      std::vector<std::pair<std::size_t, Tensor>> pouts;
      for (std::size_t row = 0; row < r; ++row)
        pouts.emplace_back(row, parm::target_label(coeffs, row, preds));
      // every nonempty erasure pattern of size <= r
      for (std::uint32_t mask = 1; mask < (1u << k); ++mask) {
        const std::size_t erased = static_cast<std::size_t>(__builtin_popcount(mask));
        if (erased > r) continue;
        std::vector<std::pair<std::size_t, Tensor>> avail;
        for (std::size_t i = 0; i < k; ++i)
          if (!(mask & (1u << i))) avail.emplace_back(i, preds[i]);
        std::vector<std::pair<std::size_t, Tensor>> use(pouts.begin(),
                                                        pouts.begin() + erased);
        const auto recs = parm::decode_multi(use, avail, coeffs);
        CHECK(recs.size() == erased);
        for (const auto& [idx, rec] : recs) {
          CHECK((mask & (1u << idx)) != 0);
          for (std::size_t e = 0; e < rec.size(); ++e)
            CHECK(std::abs(rec.data[e] - preds[idx].data[e]) < 1e-4f);
        }
      }
    }
}

TEST_CASE("decode_multi count and duplicate errors") {
  const CoefficientMatrix coeffs = CoefficientMatrix::vandermonde(2, 2);
  const Tensor t({1}, {1});
  CHECK_THROWS_AS(parm::decode_multi({}, {{0, t}, {1, t}}, coeffs),
                  std::invalid_argument);
  CHECK_THROWS_AS(parm::decode_multi({{0, t}}, {}, coeffs), std::invalid_argument);
  CHECK_THROWS_AS(parm::decode_multi({{0, t}, {0, t}}, {}, coeffs),
                  std::invalid_argument);
  CHECK_THROWS_AS(parm::decode_multi({{0, t}}, {{0, t}, {1, t}}, coeffs),
                  std::invalid_argument);
}

TEST_CASE("target_label matches the paper's k=2 labels") {
  const CoefficientMatrix coeffs = CoefficientMatrix::vandermonde(2, 2);
  const Tensor f1({2}, {1, 2}), f2({2}, {10, 20});
  CHECK(parm::target_label(coeffs, 0, {f1, f2}).data == std::vector<float>{11, 22});
  CHECK(parm::target_label(coeffs, 1, {f1, f2}).data == std::vector<float>{21, 42});
  CHECK(parm::target_label(coeffs, 0, {f1, f2}).data ==
        parm::encode_sum({f1, f2}).data);
}

TEST_CASE("linear-model exactness across k and erasure position") {
  // Linear deployed model => F(encode_sum(X)) equals the sum of predictions,
  // so subtraction decoding is exact up to float rounding.
  std::mt19937 rng(20);
  for (std::size_t k = 2; k <= 4; ++k) {
    const MlpModel f = random_linear_model(5, 3, 1000 + k);
    std::vector<Tensor> xs, preds;
    for (std::size_t i = 0; i < k; ++i) {
      xs.push_back(random_vec(5, rng));
      preds.push_back(parm::mlp_forward(f, xs.back()));
    }
    const Tensor parity_out = parm::mlp_forward(f, parm::encode_sum(xs));
    for (std::size_t withheld = 0; withheld < k; ++withheld) {
      std::vector<std::pair<std::size_t, Tensor>> avail;
      for (std::size_t i = 0; i < k; ++i)
        if (i != withheld) avail.emplace_back(i, preds[i]);
      const auto [missing, rec] = parm::decode_single(parity_out, avail);
      CHECK(missing == withheld);
      for (std::size_t e = 0; e < rec.size(); ++e)
        CHECK(std::abs(rec.data[e] - preds[withheld].data[e]) < 1e-4f);
    }
  }
}
