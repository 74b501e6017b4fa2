#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace debias {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  // Throws ShapeError when data.size() != rows * cols.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool all_finite() const noexcept;
  double squared_norm() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// y = m^T x + offset; the layer convention used by the model (x has m.rows()
// entries, y has m.cols()). offset may be empty.
Vector affine_transposed(const Matrix& m, std::span<const double> x,
                         std::span<const double> offset);

Vector softmax(std::span<const double> v);
double sigmoid(double s) noexcept;

/// Child seed for the index-th independent stream derived from a parent seed.
/// splitmix64 finalizer over (parent, index); stable across platforms.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept;

/// Seeded 64-bit generator. Every draw is computed from raw mt19937_64 output
/// with our own transforms, so sequences are bit-identical across standard
/// library implementations (std::*_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n must be positive.
  std::size_t uniform_index(std::size_t n);
  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

  Rng split(std::uint64_t index) { return Rng(derive_seed(next_u64(), index)); }

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// One isotropic Gaussian draw around mean. Throws ArgumentError if stddev <= 0.
Vector gaussian_sample(Rng& rng, std::span<const double> mean, double stddev);

}  // namespace debias
