#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "orchestra/encoder.hpp"
#include "orchestra/matrix.hpp"
#include "orchestra/rng.hpp"

namespace orchestra::testing {

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

inline DenseMatrix random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  DenseMatrix m = random_matrix(rows, cols, rng);
  normalize_rows(m);
  return m;
}

/// Small encoder with random (nonzero) biases.
inline EncoderParams small_encoder(Rng& rng, std::size_t in = 6, std::size_t hidden = 8,
                                   std::size_t rep = 5) {
  EncoderShape shape{.input_dim = in, .hidden = {hidden}, .rep_dim = rep};
  EncoderParams p = init_encoder(shape, rng);
  for (auto& layer : p.layers)
    for (double& b : layer.bias) b = 0.1 * rng.normal();
  return p;
}

/// Fresh scratch directory under the build tree (or the system temp dir).
inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* root = std::getenv("ORCHESTRA_TEST_TMP");
  std::filesystem::path base = root ? root : std::filesystem::temp_directory_path() / "orchestra_tests";
  std::filesystem::path dir = base / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace orchestra::testing
