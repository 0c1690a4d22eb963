#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "parm/tensor.hpp"

namespace parm {

static_assert(std::endian::native == std::endian::little,
              "weight file format is little-endian");

struct bad_magic_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct malformed_file_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct dim_mismatch_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  float learning_rate = 0.001f;
  float l2 = 1e-5f;
  int batch_size = 32;
  int epochs = 10;
  std::uint64_t seed = 0;
};

// ReLU MLP: hidden layers ReLU, output layer identity.
struct MlpModel {
  std::vector<std::size_t> layer_dims;  // [d0, d1, ..., dL]
  std::vector<Tensor> weights;          // L matrices, d_{i+1} x d_i
  std::vector<Tensor> biases;           // L vectors, d_{i+1}

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
};

// Xavier-uniform weights, zero biases, deterministic per seed.
inline MlpModel mlp_init(const std::vector<std::size_t>& layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 2)
    throw std::invalid_argument("mlp_init: need at least 2 layer dims");
  for (std::size_t d : layer_dims)
    if (d == 0) throw std::invalid_argument("mlp_init: zero layer dim");
  MlpModel m;
  m.layer_dims = layer_dims;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const std::size_t fan_in = layer_dims[l], fan_out = layer_dims[l + 1];
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Tensor w({fan_out, fan_in});
    for (float& v : w.data) v = dist(rng);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Tensor({fan_out}));
  }
  return m;
}

inline Tensor mlp_forward(const MlpModel& m, const Tensor& x) {
  if (x.rank() != 1 || x.shape[0] != m.input_dim())
    throw std::invalid_argument("mlp_forward: input dim mismatch");
  Tensor a = x;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    Tensor z = matmul(m.weights[l], a);
    add_inplace(z, m.biases[l]);
    if (l + 1 < m.num_layers())
      for (float& v : z.data) v = v > 0.0f ? v : 0.0f;
    a = std::move(z);
  }
  return a;
}

struct MlpGradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

// Batch loss: mean over samples of mean-squared-error per sample, plus
// l2 * sum(w^2). Returns the loss at the current weights; gradients out-param.
inline double mlp_loss_and_gradients(const MlpModel& m,
                                     std::span<const Tensor> inputs,
                                     std::span<const Tensor> targets,
                                     float l2, MlpGradients* grads) {
  if (inputs.size() != targets.size() || inputs.empty())
    throw std::invalid_argument("gradients: batch size mismatch or empty");
  const std::size_t L = m.num_layers();
  // All internal math is double so that finite-difference checks against the
  // returned loss are not drowned in float32 rounding noise; weights and the
  // emitted gradients stay float32.
  std::vector<std::vector<double>> gw(L), gb(L);
  if (grads) {
    for (std::size_t l = 0; l < L; ++l) {
      gw[l].assign(m.weights[l].size(), 0.0);
      gb[l].assign(m.biases[l].size(), 0.0);
    }
  }
  const double inv_batch = 1.0 / static_cast<double>(inputs.size());
  double loss = 0.0;
  std::vector<std::vector<double>> acts(L + 1);
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    if (inputs[s].shape[0] != m.input_dim() || targets[s].shape[0] != m.output_dim())
      throw std::invalid_argument("gradients: sample shape mismatch");
    acts[0].assign(inputs[s].data.begin(), inputs[s].data.end());
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t rows = m.weights[l].shape[0], cols = m.weights[l].shape[1];
      std::vector<double>& z = acts[l + 1];
      z.assign(rows, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = m.biases[l].data[r];
        const float* wrow = m.weights[l].data.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc += wrow[c] * acts[l][c];
        z[r] = (l + 1 < L && acc < 0.0) ? 0.0 : acc;
      }
    }
    const std::vector<double>& out = acts[L];
    const std::size_t od = out.size();
    // dL/dout for per-sample MSE averaged over the batch
    std::vector<double> delta(od);
    for (std::size_t j = 0; j < od; ++j) {
      const double diff = out[j] - targets[s].data[j];
      loss += diff * diff / static_cast<double>(od) * inv_batch;
      delta[j] = 2.0 * diff / static_cast<double>(od) * inv_batch;
    }
    if (!grads) continue;
    for (std::size_t l = L; l-- > 0;) {
      const std::vector<double>& a_in = acts[l];
      const std::size_t rows = m.weights[l].shape[0], cols = m.weights[l].shape[1];
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = delta[r];
        gb[l][r] += d;
        double* grow = gw[l].data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) grow[c] += d * a_in[c];
      }
      if (l == 0) break;
      std::vector<double> next(cols);
      for (std::size_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < rows; ++r)
          acc += m.weights[l].data[r * cols + c] * delta[r];
        // ReLU mask from the post-activation value of the previous layer
        next[c] = a_in[c] > 0.0 ? acc : 0.0;
      }
      delta = std::move(next);
    }
  }
  if (l2 > 0.0f) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t i = 0; i < m.weights[l].size(); ++i) {
        const double w = m.weights[l].data[i];
        loss += l2 * w * w;
        if (grads) gw[l][i] += 2.0 * l2 * w;
      }
    }
  }
  if (grads) {
    grads->weights.clear();
    grads->biases.clear();
    for (std::size_t l = 0; l < L; ++l) {
      grads->weights.emplace_back(m.weights[l].shape);
      grads->biases.emplace_back(m.biases[l].shape);
      for (std::size_t i = 0; i < gw[l].size(); ++i)
        grads->weights[l].data[i] = static_cast<float>(gw[l][i]);
      for (std::size_t i = 0; i < gb[l].size(); ++i)
        grads->biases[l].data[i] = static_cast<float>(gb[l][i]);
    }
  }
  return loss;
}

// Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const MlpModel& m) {
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      mw_.emplace_back(m.weights[l].shape);
      vw_.emplace_back(m.weights[l].shape);
      mb_.emplace_back(m.biases[l].shape);
      vb_.emplace_back(m.biases[l].shape);
    }
  }

  // One Adam step on MSE + L2; returns the pre-update batch loss.
  float step(MlpModel& m, std::span<const Tensor> inputs,
             std::span<const Tensor> targets, const TrainConfig& cfg) {
    MlpGradients g;
    const float loss = mlp_loss_and_gradients(m, inputs, targets, cfg.l2, &g);
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      apply(m.weights[l], g.weights[l], mw_[l], vw_[l], cfg.learning_rate, bc1, bc2);
      apply(m.biases[l], g.biases[l], mb_[l], vb_[l], cfg.learning_rate, bc1, bc2);
    }
    return loss;
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  static void apply(Tensor& p, const Tensor& g, Tensor& m, Tensor& v,
                    float lr, double bc1, double bc2) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data[i];
      const double mi = kBeta1 * m.data[i] + (1.0 - kBeta1) * gi;
      const double vi = kBeta2 * v.data[i] + (1.0 - kBeta2) * gi * gi;
      m.data[i] = static_cast<float>(mi);
      v.data[i] = static_cast<float>(vi);
      p.data[i] -= static_cast<float>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + kEps));
    }
  }

  std::vector<Tensor> mw_, vw_, mb_, vb_;
  int t_ = 0;
};

inline float train_step(MlpModel& m, AdamOptimizer& opt,
                        std::span<const Tensor> inputs,
                        std::span<const Tensor> targets, const TrainConfig& cfg) {
  return opt.step(m, inputs, targets, cfg);
}

// Epoch loop with seeded shuffling over (input, target) pairs.
inline MlpModel train(MlpModel m,
                      const std::vector<std::pair<Tensor, Tensor>>& dataset,
                      const TrainConfig& cfg, float* final_loss = nullptr) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  AdamOptimizer opt(m);
  std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed) ^ 0x9e3779b9u);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  float last = 0.0f;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), off + cfg.batch_size);
      std::vector<Tensor> bi, bt;
      bi.reserve(end - off);
      bt.reserve(end - off);
      for (std::size_t i = off; i < end; ++i) {
        bi.push_back(dataset[order[i]].first);
        bt.push_back(dataset[order[i]].second);
      }
      last = opt.step(m, bi, bt, cfg);
    }
  }
  if (final_loss) *final_loss = last;
  return m;
}

// Weight file: magic "PMW1", u32 layer count, then per layer
// u32 rows, u32 cols, row-major f32 weights, f32 biases (rows). Little-endian.
inline void save_weights(const MlpModel& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_weights: cannot open " + path);
  f.write("PMW1", 4);
  const std::uint32_t layers = static_cast<std::uint32_t>(m.num_layers());
  f.write(reinterpret_cast<const char*>(&layers), 4);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const std::uint32_t rows = static_cast<std::uint32_t>(m.weights[l].shape[0]);
    const std::uint32_t cols = static_cast<std::uint32_t>(m.weights[l].shape[1]);
    f.write(reinterpret_cast<const char*>(&rows), 4);
    f.write(reinterpret_cast<const char*>(&cols), 4);
    f.write(reinterpret_cast<const char*>(m.weights[l].data.data()),
            static_cast<std::streamsize>(m.weights[l].size() * 4));
    f.write(reinterpret_cast<const char*>(m.biases[l].data.data()),
            static_cast<std::streamsize>(m.biases[l].size() * 4));
  }
  if (!f) throw std::runtime_error("save_weights: write failed for " + path);
}

inline MlpModel load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw malformed_file_error("load_weights: cannot open " + path);
  char magic[4];
  if (!f.read(magic, 4)) throw malformed_file_error("load_weights: truncated header");
  if (std::string_view(magic, 4) != "PMW1")
    throw bad_magic_error("load_weights: bad magic in " + path);
  std::uint32_t layers = 0;
  if (!f.read(reinterpret_cast<char*>(&layers), 4))
    throw malformed_file_error("load_weights: truncated layer count");
  if (layers == 0 || layers > 1024)
    throw malformed_file_error("load_weights: implausible layer count");
  MlpModel m;
  for (std::uint32_t l = 0; l < layers; ++l) {
    std::uint32_t rows = 0, cols = 0;
    if (!f.read(reinterpret_cast<char*>(&rows), 4) ||
        !f.read(reinterpret_cast<char*>(&cols), 4))
      throw malformed_file_error("load_weights: truncated layer header");
    if (rows == 0 || cols == 0)
      throw malformed_file_error("load_weights: zero layer dimension");
    if (l == 0) {
      m.layer_dims.push_back(cols);
    } else if (m.layer_dims.back() != cols) {
      throw dim_mismatch_error("load_weights: layer dims do not chain");
    }
    m.layer_dims.push_back(rows);
    Tensor w({rows, cols});
    if (!f.read(reinterpret_cast<char*>(w.data.data()),
                static_cast<std::streamsize>(w.size() * 4)))
      throw malformed_file_error("load_weights: truncated weights");
    Tensor b({rows});
    if (!f.read(reinterpret_cast<char*>(b.data.data()),
                static_cast<std::streamsize>(b.size() * 4)))
      throw malformed_file_error("load_weights: truncated biases");
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  char extra;
  if (f.read(&extra, 1)) throw malformed_file_error("load_weights: trailing bytes");
  return m;
}

}  // namespace parm
