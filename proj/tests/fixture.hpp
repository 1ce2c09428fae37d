#pragma once

// A handful of phantom cases generated once per test binary.

#include <filesystem>

#include "agn/train.hpp"

namespace agn::test {

struct Tiny {
  Dataset data;
  std::vector<const Sample*> train;
  Matrix hg;
  ModelConfig cfg;
};

inline const Tiny& tiny() {
  static const Tiny t = [] {
    Tiny t;
    const auto dir = std::filesystem::temp_directory_path() / "agn_test_tiny";
    std::filesystem::remove_all(dir);
    PhantomConfig pc;
    pc.seed = 11;
    const auto manifest = generate_dataset(pc, 10, {}, dir);
    t.data = load_dataset(manifest);
    t.train = t.data.split("train");
    t.hg = normalize_geometric(build_frequency(t.train));
    t.cfg.base_side = median_mass_diameter(t.train);
    std::filesystem::remove_all(dir);
    return t;
  }();
  return t;
}

}  // namespace agn::test
