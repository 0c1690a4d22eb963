#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "parm/coder.hpp"
#include "parm/dataset.hpp"
#include "parm/mlp.hpp"
#include "parm/tensor.hpp"

namespace parm {

struct ParityDataset {
  std::vector<std::pair<Tensor, Tensor>> samples;  // (parity input, target)
  std::size_t k = 0;
  EncoderKind encoder_kind = EncoderKind::Sum;
  std::size_t coeff_row = 0;
};

struct AccuracyReport {
  double a_available = 0.0;
  double a_degraded = 0.0;
  double f_unavailable = 0.0;
  double a_overall = 0.0;
};

// Shuffle (seeded), group into disjoint k-tuples, encode, and label each
// parity with the coefficient-weighted sum of the deployed model's
// predictions on the tuple. Leftovers (< k) are dropped.
inline ParityDataset build_parity_dataset(const std::vector<Tensor>& base_queries,
                                          const MlpModel& deployed, std::size_t k,
                                          EncoderKind kind, std::size_t coeff_row,
                                          std::uint64_t seed) {
  if (base_queries.size() < k)
    throw std::invalid_argument("build_parity_dataset: fewer queries than k");
  const CoefficientMatrix coeffs =
      CoefficientMatrix::vandermonde(k, coeff_row + 1);
  std::vector<std::size_t> order(base_queries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::shuffle(order.begin(), order.end(), rng);
  ParityDataset ds;
  ds.k = k;
  ds.encoder_kind = kind;
  ds.coeff_row = coeff_row;
  for (std::size_t off = 0; off + k <= order.size(); off += k) {
    std::vector<Tensor> group, preds;
    for (std::size_t i = 0; i < k; ++i) {
      const Tensor& q = base_queries[order[off + i]];
      group.push_back(q);
      Tensor flat = q;
      if (flat.rank() != 1) flat.shape = {flat.size()};
      preds.push_back(mlp_forward(deployed, flat));
    }
    ds.samples.emplace_back(encode(kind, group),
                            target_label(coeffs, coeff_row, preds));
  }
  return ds;
}

inline MlpModel train_parity_model(const ParityDataset& ds,
                                   const std::vector<std::size_t>& arch,
                                   const TrainConfig& cfg) {
  if (ds.samples.empty()) throw std::invalid_argument("train_parity_model: empty dataset");
  if (arch.front() != ds.samples[0].first.size())
    throw std::invalid_argument("train_parity_model: arch input dim mismatch");
  MlpModel m = mlp_init(arch, cfg.seed);
  if (cfg.epochs == 0) return m;
  return train(std::move(m), ds.samples, cfg);
}

inline double evaluate_available(const MlpModel& deployed,
                                 const std::vector<std::pair<Tensor, int>>& test_set) {
  if (test_set.empty()) throw std::invalid_argument("evaluate_available: empty test set");
  std::size_t correct = 0;
  for (const auto& [x, label] : test_set)
    if (argmax(mlp_forward(deployed, x)) == static_cast<std::size_t>(label)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

// Degraded-mode accuracy: group the test set into k-tuples, withhold each
// position in turn, reconstruct it from the parity output and the other k-1
// deployed predictions, and score top-1 against the withheld label.
// parity_fn maps a parity query to the parity model's output.
inline double evaluate_degraded(const MlpModel& deployed,
                                const std::function<Tensor(const Tensor&)>& parity_fn,
                                const std::vector<std::pair<Tensor, int>>& test_set,
                                std::size_t k, EncoderKind kind, std::uint64_t seed) {
  if (test_set.size() < k)
    throw std::invalid_argument("evaluate_degraded: too few samples");
  std::vector<std::size_t> order(test_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t correct = 0, total = 0;
  for (std::size_t off = 0; off + k <= order.size(); off += k) {
    std::vector<Tensor> queries, preds;
    std::vector<int> labels;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& [x, label] = test_set[order[off + i]];
      queries.push_back(x);
      preds.push_back(mlp_forward(deployed, x));
      labels.push_back(label);
    }
    const Tensor parity_out = parity_fn(encode(kind, queries));
    for (std::size_t withheld = 0; withheld < k; ++withheld) {
      std::vector<std::pair<std::size_t, Tensor>> available;
      for (std::size_t i = 0; i < k; ++i)
        if (i != withheld) available.emplace_back(i, preds[i]);
      const auto [missing, rec] = decode_single(parity_out, std::move(available));
      if (argmax(rec) == static_cast<std::size_t>(labels[withheld])) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

inline double evaluate_degraded(const MlpModel& deployed, const MlpModel& parity_model,
                                const std::vector<std::pair<Tensor, int>>& test_set,
                                std::size_t k, EncoderKind kind, std::uint64_t seed) {
  return evaluate_degraded(
      deployed, [&](const Tensor& p) { return mlp_forward(parity_model, p); },
      test_set, k, kind, seed);
}

// A_o = (1 - f_u) * A_a + f_u * A_d. Accuracies may be fractions or percents.
inline double overall_accuracy(double a_available, double a_degraded, double f_u) {
  if (f_u < 0.0 || f_u > 1.0)
    throw std::invalid_argument("overall_accuracy: f_u out of [0,1]");
  if (a_available < 0.0 || a_available > 100.0 || a_degraded < 0.0 || a_degraded > 100.0)
    throw std::invalid_argument("overall_accuracy: accuracy out of range");
  return (1.0 - f_u) * a_available + f_u * a_degraded;
}

// Dataset cache: magic "PMD1", u32 k, u8 encoder kind, u32 coeff row,
// u32 sample count, u32 input dim, u32 target dim, then f32 pairs.
inline void save_parity_dataset(const ParityDataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_parity_dataset: cannot open " + path);
  f.write("PMD1", 4);
  auto u32 = [&f](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  u32(static_cast<std::uint32_t>(ds.k));
  const std::uint8_t kind = ds.encoder_kind == EncoderKind::Sum ? 0 : 1;
  f.write(reinterpret_cast<const char*>(&kind), 1);
  u32(static_cast<std::uint32_t>(ds.coeff_row));
  u32(static_cast<std::uint32_t>(ds.samples.size()));
  const std::uint32_t in_dim =
      ds.samples.empty() ? 0 : static_cast<std::uint32_t>(ds.samples[0].first.size());
  const std::uint32_t out_dim =
      ds.samples.empty() ? 0 : static_cast<std::uint32_t>(ds.samples[0].second.size());
  u32(in_dim);
  u32(out_dim);
  for (const auto& [in, tgt] : ds.samples) {
    f.write(reinterpret_cast<const char*>(in.data.data()),
            static_cast<std::streamsize>(in.size() * 4));
    f.write(reinterpret_cast<const char*>(tgt.data.data()),
            static_cast<std::streamsize>(tgt.size() * 4));
  }
  if (!f) throw std::runtime_error("save_parity_dataset: write failed");
}

inline ParityDataset load_parity_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw malformed_file_error("load_parity_dataset: cannot open " + path);
  char magic[4];
  if (!f.read(magic, 4)) throw malformed_file_error("load_parity_dataset: truncated");
  if (std::string_view(magic, 4) != "PMD1")
    throw bad_magic_error("load_parity_dataset: bad magic");
  auto u32 = [&f]() {
    std::uint32_t v = 0;
    if (!f.read(reinterpret_cast<char*>(&v), 4))
      throw malformed_file_error("load_parity_dataset: truncated");
    return v;
  };
  ParityDataset ds;
  ds.k = u32();
  std::uint8_t kind = 0;
  if (!f.read(reinterpret_cast<char*>(&kind), 1))
    throw malformed_file_error("load_parity_dataset: truncated");
  ds.encoder_kind = kind == 0 ? EncoderKind::Sum : EncoderKind::ConcatGrid;
  ds.coeff_row = u32();
  const std::uint32_t n = u32(), in_dim = u32(), out_dim = u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor in({in_dim}), tgt({out_dim});
    if (!f.read(reinterpret_cast<char*>(in.data.data()),
                static_cast<std::streamsize>(in.size() * 4)) ||
        !f.read(reinterpret_cast<char*>(tgt.data.data()),
                static_cast<std::streamsize>(tgt.size() * 4)))
      throw malformed_file_error("load_parity_dataset: truncated samples");
    ds.samples.emplace_back(std::move(in), std::move(tgt));
  }
  return ds;
}

}  // namespace parm
