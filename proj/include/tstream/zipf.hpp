#pragma once

#include <cstdint>
#include <random>

namespace tstream {

// Deterministic uniform double in [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Zipf(n, exponent) over ranks 1..n by rejection-inversion
// (Hormann & Derflinger). exponent 0 is uniform.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double exponent);

  std::uint64_t operator()(std::mt19937_64& rng) const;

  std::uint64_t n() const noexcept { return n_; }
  double exponent() const noexcept { return exponent_; }

 private:
  double h(double x) const;
  double h_integral(double x) const;
  double h_integral_inverse(double x) const;

  std::uint64_t n_;
  double exponent_;
  double h_integral_x1_ = 0;
  double h_integral_n_ = 0;
  double s_ = 0;
};

}  // namespace tstream
