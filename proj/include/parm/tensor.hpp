#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace parm {

// Dense row-major float32 tensor. Rank 1 for queries/predictions, rank 2 for
// weight matrices, rank 3 (H x W x C) for image-shaped queries.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel_of(shape), 0.0f) {}

  Tensor(std::vector<std::size_t> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape))
      throw std::invalid_argument("tensor: data length does not match shape");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
      if (d == 0) throw std::invalid_argument("tensor: zero dimension");
      n *= d;
    }
    return s.empty() ? 0 : n;
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  // rank-2 accessor, row-major
  float& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

inline Tensor scale(const Tensor& a, float c) {
  Tensor out = a;
  for (float& v : out.data) v *= c;
  return out;
}

// w: [m x n], x: [n] -> [m]
inline Tensor matmul(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || x.rank() != 1)
    throw std::invalid_argument("matmul: expects 2-D matrix and 1-D vector");
  const std::size_t m = w.shape[0], n = w.shape[1];
  if (x.shape[0] != n) throw std::invalid_argument("matmul: dimension mismatch");
  Tensor out({m});
  const float* wp = w.data.data();
  for (std::size_t r = 0; r < m; ++r) {
    float acc = 0.0f;
    const float* row = wp + r * n;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * x.data[c];
    out.data[r] = acc;
  }
  return out;
}

// Block-mean pooling of an H x W x C image to out_h x out_w x C.
inline Tensor downsample(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw std::invalid_argument("downsample: expects H x W x C tensor");
  const std::size_t h = img.shape[0], w = img.shape[1], ch = img.shape[2];
  if (out_h == 0 || out_w == 0 || h % out_h != 0 || w % out_w != 0)
    throw std::invalid_argument("downsample: dims not divisible by output size");
  const std::size_t bh = h / out_h, bw = w / out_w;
  const float inv = 1.0f / static_cast<float>(bh * bw);
  Tensor out({out_h, out_w, ch});
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox)
      for (std::size_t c = 0; c < ch; ++c) {
        float acc = 0.0f;
        for (std::size_t dy = 0; dy < bh; ++dy)
          for (std::size_t dx = 0; dx < bw; ++dx)
            acc += img.data[((oy * bh + dy) * w + (ox * bw + dx)) * ch + c];
        out.data[(oy * out_w + ox) * ch + c] = acc * inv;
      }
  return out;
}

// Index of the maximum element; ties break to the lowest index.
inline std::size_t argmax(const Tensor& v) {
  if (v.size() == 0) throw std::invalid_argument("argmax: empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v.data[i] > v.data[best]) best = i;
  return best;
}

inline float mse(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  return static_cast<float>(acc / static_cast<double>(a.size()));
}

}  // namespace parm
