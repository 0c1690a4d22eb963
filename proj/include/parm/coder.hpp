#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "parm/tensor.hpp"

namespace parm {

enum class EncoderKind { Sum, ConcatGrid };

// r x k decoding coefficients, c[j][i] = (i+1)^j. Row 0 is all ones, so the
// first parity model's target is the plain prediction sum. Any r columns form
// an invertible Vandermonde submatrix (distinct nodes 1..k).
struct CoefficientMatrix {
  std::size_t k = 0;
  std::size_t r = 0;
  std::vector<std::vector<double>> c;

  static CoefficientMatrix vandermonde(std::size_t k, std::size_t r) {
    if (k < 2) throw std::invalid_argument("coefficients: k must be >= 2");
    if (r < 1) throw std::invalid_argument("coefficients: r must be >= 1");
    CoefficientMatrix m;
    m.k = k;
    m.r = r;
    m.c.assign(r, std::vector<double>(k));
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t i = 0; i < k; ++i) {
        double v = 1.0;
        for (std::size_t p = 0; p < j; ++p) v *= static_cast<double>(i + 1);
        m.c[j][i] = v;
      }
    return m;
  }
};

inline Tensor encode_sum(const std::vector<Tensor>& queries) {
  if (queries.size() < 2) throw std::invalid_argument("encode_sum: k must be >= 2");
  Tensor p = queries[0];
  for (std::size_t i = 1; i < queries.size(); ++i) add_inplace(p, queries[i]);
  return p;
}

// Downsize-and-tile encoder for image-shaped queries. k=4 tiles a 2x2 grid of
// half-size images row-major; k=2 tiles two half-width images side by side.
// Output feature count equals one input's.
inline Tensor encode_concat(const std::vector<Tensor>& queries) {
  const std::size_t k = queries.size();
  if (k != 2 && k != 4)
    throw std::invalid_argument("encode_concat: only k=2 and k=4 layouts supported");
  const Tensor& q0 = queries[0];
  if (q0.rank() != 3) throw std::invalid_argument("encode_concat: expects H x W x C queries");
  for (const Tensor& q : queries)
    if (!q.same_shape(q0)) throw std::invalid_argument("encode_concat: shape mismatch");
  const std::size_t h = q0.shape[0], w = q0.shape[1], ch = q0.shape[2];
  Tensor out({h, w, ch});
  if (k == 4) {
    if (h % 2 != 0 || w % 2 != 0)
      throw std::invalid_argument("encode_concat: dims not divisible by 2");
    const std::size_t hh = h / 2, hw = w / 2;
    for (std::size_t i = 0; i < 4; ++i) {
      const Tensor small = downsample(queries[i], hh, hw);
      const std::size_t oy = (i / 2) * hh, ox = (i % 2) * hw;
      for (std::size_t y = 0; y < hh; ++y)
        for (std::size_t x = 0; x < hw; ++x)
          for (std::size_t c = 0; c < ch; ++c)
            out.data[((oy + y) * w + (ox + x)) * ch + c] =
                small.data[(y * hw + x) * ch + c];
    }
  } else {
    if (w % 2 != 0) throw std::invalid_argument("encode_concat: width not divisible by 2");
    const std::size_t hw = w / 2;
    for (std::size_t i = 0; i < 2; ++i) {
      const Tensor small = downsample(queries[i], h, hw);
      const std::size_t ox = i * hw;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < hw; ++x)
          for (std::size_t c = 0; c < ch; ++c)
            out.data[(y * w + (ox + x)) * ch + c] = small.data[(y * hw + x) * ch + c];
    }
  }
  return out;
}

inline Tensor encode(EncoderKind kind, const std::vector<Tensor>& queries) {
  return kind == EncoderKind::Sum ? encode_sum(queries) : encode_concat(queries);
}

// Subtraction decoder: reconstruction = parity_out - sum of the k-1 available
// predictions, summed in index order. Returns (missing index, reconstruction).
inline std::pair<std::size_t, Tensor> decode_single(
    const Tensor& parity_out,
    std::vector<std::pair<std::size_t, Tensor>> available) {
  if (available.empty()) throw std::invalid_argument("decode_single: no available predictions");
  const std::size_t k = available.size() + 1;
  std::vector<bool> seen(k, false);
  for (const auto& [idx, pred] : available) {
    if (idx >= k) throw std::invalid_argument("decode_single: index out of range");
    if (seen[idx]) throw std::invalid_argument("decode_single: duplicate index");
    if (!pred.same_shape(parity_out))
      throw std::invalid_argument("decode_single: shape mismatch");
    seen[idx] = true;
  }
  std::size_t missing = k;
  for (std::size_t i = 0; i < k; ++i)
    if (!seen[i]) missing = i;
  std::sort(available.begin(), available.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  Tensor rec = parity_out;
  for (const auto& [idx, pred] : available) rec = sub(rec, pred);
  return {missing, std::move(rec)};
}

// Multi-erasure decoder. Subtracts the known contributions c[j][i]*F(X_i)
// from each parity output, then solves the r' x r' system for the missing
// predictions componentwise. Gaussian elimination with partial pivoting.
inline std::vector<std::pair<std::size_t, Tensor>> decode_multi(
    const std::vector<std::pair<std::size_t, Tensor>>& parity_outs,
    const std::vector<std::pair<std::size_t, Tensor>>& available,
    const CoefficientMatrix& coeffs) {
  const std::size_t rp = parity_outs.size();
  if (rp == 0) throw std::invalid_argument("decode_multi: no parity outputs");
  if (rp > coeffs.r) throw std::invalid_argument("decode_multi: more parity rows than r");
  if (parity_outs.size() + available.size() != coeffs.k)
    throw std::invalid_argument("decode_multi: knowns must total k");
  std::vector<bool> have(coeffs.k, false);
  for (const auto& [idx, pred] : available) {
    if (idx >= coeffs.k) throw std::invalid_argument("decode_multi: index out of range");
    if (have[idx]) throw std::invalid_argument("decode_multi: duplicate index");
    have[idx] = true;
  }
  std::vector<bool> row_seen(coeffs.r, false);
  for (const auto& [row, out] : parity_outs) {
    if (row >= coeffs.r) throw std::invalid_argument("decode_multi: parity row out of range");
    if (row_seen[row]) throw std::invalid_argument("decode_multi: duplicate parity row");
    row_seen[row] = true;
  }
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < coeffs.k; ++i)
    if (!have[i]) missing.push_back(i);

  // rhs_a = parity_out_a - sum over known i of c[row_a][i] * pred_i
  std::vector<Tensor> rhs;
  std::vector<std::vector<double>> a(rp, std::vector<double>(rp));
  for (std::size_t ai = 0; ai < rp; ++ai) {
    const auto& [row, pout] = parity_outs[ai];
    Tensor r = pout;
    for (const auto& [idx, pred] : available) {
      if (!pred.same_shape(pout))
        throw std::invalid_argument("decode_multi: shape mismatch");
      const float cf = static_cast<float>(coeffs.c[row][idx]);
      for (std::size_t e = 0; e < r.size(); ++e) r.data[e] -= cf * pred.data[e];
    }
    rhs.push_back(std::move(r));
    for (std::size_t mi = 0; mi < rp; ++mi) a[ai][mi] = coeffs.c[row][missing[mi]];
  }

  // Gaussian elimination with partial pivoting, tensors as right-hand sides.
  for (std::size_t col = 0; col < rp; ++col) {
    std::size_t piv = col;
    for (std::size_t row = col + 1; row < rp; ++row)
      if (std::abs(a[row][col]) > std::abs(a[piv][col])) piv = row;
    if (a[piv][col] == 0.0)
      throw std::runtime_error("decode_multi: singular coefficient system");
    std::swap(a[col], a[piv]);
    std::swap(rhs[col], rhs[piv]);
    for (std::size_t row = col + 1; row < rp; ++row) {
      const double f = a[row][col] / a[col][col];
      if (f == 0.0) continue;
      for (std::size_t c2 = col; c2 < rp; ++c2) a[row][c2] -= f * a[col][c2];
      const float ff = static_cast<float>(f);
      for (std::size_t e = 0; e < rhs[row].size(); ++e)
        rhs[row].data[e] -= ff * rhs[col].data[e];
    }
  }
  std::vector<Tensor> sol(rp);
  for (std::size_t row = rp; row-- > 0;) {
    Tensor x = rhs[row];
    for (std::size_t c2 = row + 1; c2 < rp; ++c2) {
      const float f = static_cast<float>(a[row][c2]);
      for (std::size_t e = 0; e < x.size(); ++e) x.data[e] -= f * sol[c2].data[e];
    }
    const float inv = static_cast<float>(1.0 / a[row][row]);
    for (float& v : x.data) v *= inv;
    sol[row] = std::move(x);
  }
  std::vector<std::pair<std::size_t, Tensor>> out;
  for (std::size_t mi = 0; mi < rp; ++mi) out.emplace_back(missing[mi], std::move(sol[mi]));
  return out;
}

// The parity model's training target for coefficient row j:
// sum over i of c[j][i] * F(X_i).
inline Tensor target_label(const CoefficientMatrix& coeffs, std::size_t row,
                           const std::vector<Tensor>& predictions) {
  if (row >= coeffs.r) throw std::invalid_argument("target_label: row out of range");
  if (predictions.size() != coeffs.k)
    throw std::invalid_argument("target_label: need exactly k predictions");
  Tensor out = Tensor::zeros(predictions[0].shape);
  for (std::size_t i = 0; i < coeffs.k; ++i) {
    if (!predictions[i].same_shape(out))
      throw std::invalid_argument("target_label: shape mismatch");
    const float cf = static_cast<float>(coeffs.c[row][i]);
    for (std::size_t e = 0; e < out.size(); ++e)
      out.data[e] += cf * predictions[i].data[e];
  }
  return out;
}

}  // namespace parm
