#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "parm/tensor.hpp"

namespace parm {

struct LabeledDataset {
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  int num_classes = 0;
};

// Gaussian-blob classification task: class means drawn N(0,1) per coordinate,
// samples are mean + unit-variance noise. Seeded and deterministic.
inline LabeledDataset make_blob_dataset(std::size_t n, int num_classes,
                                        std::size_t dim, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("blob dataset: need >= 2 classes");
  LabeledDataset ds;
  ds.num_classes = num_classes;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::normal_distribution<float> unit(0.0f, 1.0f);
  std::vector<Tensor> means;
  for (int c = 0; c < num_classes; ++c) {
    Tensor m({dim});
    for (float& v : m.data) v = unit(rng);
    means.push_back(std::move(m));
  }
  std::uniform_int_distribution<int> cls(0, num_classes - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = cls(rng);
    Tensor x = means[c];
    for (float& v : x.data) v += unit(rng);
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(c);
  }
  return ds;
}

// Train/test splits of the same task: one set of class means, two disjoint
// sample draws from the same rng stream.
inline std::pair<LabeledDataset, LabeledDataset> make_blob_split(
    std::size_t n_train, std::size_t n_test, int num_classes, std::size_t dim,
    std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("blob dataset: need >= 2 classes");
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::normal_distribution<float> unit(0.0f, 1.0f);
  std::vector<Tensor> means;
  for (int c = 0; c < num_classes; ++c) {
    Tensor m({dim});
    for (float& v : m.data) v = unit(rng);
    means.push_back(std::move(m));
  }
  std::uniform_int_distribution<int> cls(0, num_classes - 1);
  auto draw = [&](std::size_t n) {
    LabeledDataset ds;
    ds.num_classes = num_classes;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = cls(rng);
      Tensor x = means[c];
      for (float& v : x.data) v += unit(rng);
      ds.inputs.push_back(std::move(x));
      ds.labels.push_back(c);
    }
    return ds;
  };
  LabeledDataset train = draw(n_train);
  LabeledDataset test = draw(n_test);
  return {std::move(train), std::move(test)};
}

inline Tensor one_hot(int label, int num_classes) {
  Tensor t({static_cast<std::size_t>(num_classes)});
  t.data[label] = 1.0f;
  return t;
}

}  // namespace parm
