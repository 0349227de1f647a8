#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "borderflow/array.hpp"
#include "borderflow/params.hpp"

namespace borderflow::testing {

inline Array random_array(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array a(shape);
  for (auto& v : a.values()) v = u(rng);
  return a;
}

inline double max_abs_diff(const Array& a, const Array& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Adds N(0, sigma^2) noise to every parameter so zero-initialised layers become active.
inline void perturb(ParameterSet& params, Rng& rng, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  for (auto& [name, p] : params)
    for (auto& v : p.value.values()) v += g(rng);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / ("borderflow_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace borderflow::testing
