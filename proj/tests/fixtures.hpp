#pragma once

#include <filesystem>
#include <random>

#include "pbatch/dataset.hpp"
#include "pbatch/model_io.hpp"
#include "pbatch/nn.hpp"

namespace fixtures {

inline std::filesystem::path dir() { return PBATCH_FIXTURE_DIR; }

inline pbatch::Model digits_mlp() { return pbatch::load_model(dir() / "digits_mlp.pbm1"); }

inline pbatch::Dataset digits_test() {
  return pbatch::load_idx(dir() / "digits-test-images-idx3-ubyte", dir() / "digits-test-labels-idx1-ubyte");
}

inline pbatch::LayerSpec random_layer(pbatch::LayerKind kind, std::size_t in, std::size_t out,
                                      pbatch::Activation act, std::mt19937_64& rng, float scale = 0.5f) {
  std::uniform_real_distribution<float> u(-scale, scale);
  pbatch::LayerSpec l;
  l.kind = kind;
  l.activation = act;
  l.in_dim = in;
  l.out_dim = out;
  l.weight = pbatch::RealMatrix(l.gate_rows(), in);
  for (auto& v : l.weight.values()) v = u(rng);
  if (l.recurrent_kind()) {
    l.recurrent = pbatch::RealMatrix(l.gate_rows(), out);
    for (auto& v : l.recurrent.values()) v = u(rng);
  }
  l.bias.resize(l.gate_rows());
  for (auto& v : l.bias) v = u(rng);
  return l;
}

}  // namespace fixtures
