#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <unistd.h>
#include <atomic>
#include <algorithm>
#include <string>

#include <gtest/gtest.h>

#include "mrnn/mrnn.hpp"

namespace testing_support {

using mrnn::Array;
using mrnn::Shape;

inline Array random_array(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array a(shape);
  for (double& v : a.data()) v = u(rng);
  return a;
}

// Uniform magnitudes in [0.1, 1] with random signs, so nothing sits near 0.
inline Array away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Array a(shape);
  for (double& v : a.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return a;
}

// Distinct values spaced at least 0.01 apart (no ties for max pooling).
inline Array spaced_values(const Shape& shape, std::mt19937_64& rng) {
  Array a(shape);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i) - 0.005 * v.size();
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), a.data().begin());
  return a;
}

// Scalar probe of an arbitrary tensor: sum(x * w) for fixed random w.
inline mrnn::Var project(mrnn::Var x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return mrnn::sum(mrnn::mul(x, x.tape->constant(random_array(x.shape(), rng))));
}

inline void expect_arrays_near(const Array& actual, const Array& expected, double tol) {
  ASSERT_EQ(actual.shape(), expected.shape()) << "shape mismatch";
  for (std::size_t i = 0; i < actual.size(); ++i) EXPECT_NEAR(actual[i], expected[i], tol) << "at flat index " << i;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mrnn_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
