// Small models and datasets shared by the unit tests.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "dismae/datasets.hpp"
#include "dismae/model.hpp"
#include "dismae/rng.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("dismae-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
                                         std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

/// H=8, 2/1/1 blocks, 4×4 images with 2×2 patches, K=2.
inline dismae::ModelConfig tiny_model() {
  dismae::ModelConfig m;
  m.image_size = 4;
  m.patch_size = 2;
  m.embed_dim = 8;
  m.decoder_dim = 8;
  m.num_heads = 2;
  m.semantic_depth = 2;
  m.variation_depth = 1;
  m.decoder_depth = 1;
  m.num_domains = 2;
  m.num_classes = 3;
  m.mask_ratio = 0.5;
  return m;
}

/// 8×8 images, 2×2 grid of 4-pixel patches, for quick training-loop tests.
inline dismae::ModelConfig small_model(int num_domains = 3) {
  dismae::ModelConfig m;
  m.image_size = 8;
  m.patch_size = 4;
  m.embed_dim = 8;
  m.decoder_dim = 8;
  m.num_heads = 2;
  m.semantic_depth = 1;
  m.variation_depth = 1;
  m.decoder_depth = 1;
  m.num_domains = num_domains;
  m.num_classes = 4;
  m.mask_ratio = 0.5;
  return m;
}

inline dismae::ImageBatch random_batch(int n, int size, int domains, std::uint64_t seed) {
  dismae::Rng r(seed);
  dismae::ImageBatch b;
  b.count = n;
  b.size = size;
  b.channels = 3;
  b.pixels.resize(static_cast<std::size_t>(n) * size * size * 3);
  for (double& v : b.pixels) v = r.uniform();
  for (int i = 0; i < n; ++i) {
    b.domains.push_back(i % domains);
    b.labels.push_back(i % 3);
  }
  return b;
}

/// 8-pixel synthetic set: 4 classes, the first `domains` default palettes.
inline dismae::FactorSpec small_spec(int domains = 3, int per_class = 6) {
  dismae::FactorSpec s = dismae::default_factor_spec();
  s.domains.resize(static_cast<std::size_t>(domains));
  s.num_classes = 4;
  s.samples_per_class_per_domain = per_class;
  s.image_size = 8;
  return s;
}

}  // namespace fixtures
