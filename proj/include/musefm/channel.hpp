#pragma once

#include <cstdint>
#include <vector>

#include "musefm/common.hpp"
#include "musefm/propagation.hpp"

namespace musefm {

/// UPA + OFDM numerology. Element (n_v, n_h) is flattened to n = n_v * N_h + n_h.
struct ArrayGeometry {
  int N_h = 4;
  int N_v = 4;
  double spacing = 0.0;  // metres; 0 selects half a carrier wavelength
  double f_c = 28e9;
  int M = 8;
  double delta_f = 1.8e3;

  int Nt() const { return N_h * N_v; }
  double d() const { return spacing > 0.0 ? spacing : wavelength_c() / 2.0; }
  double wavelength_c() const { return kSpeedOfLight / f_c; }
  double subcarrier_freq(int m) const { return f_c + (m - (M - 1) / 2.0) * delta_f; }
  void validate() const;
};

inline constexpr double kReflectionCoefficient = 0.6;

CVector steering_vector(double theta, double phi, double f_m, const ArrayGeometry& geom);

/// Frequency-flat complex gain; phase from the delay is applied by assemble_channel.
cplx path_gain(const Path& path, const ArrayGeometry& geom);

/// One user's channel, N_t x M; column m is the Saleh-Valenzuela sum at subcarrier m.
CMatrix assemble_channel(const PathList& paths, const ArrayGeometry& geom);

/// Scales `H` (N_t x M) so that the mean over subcarriers of ||h_m||^2 equals N_t.
/// Returns the applied scale factor (1 for an all-zero channel, which is left unchanged).
double normalize_channel(CMatrix& H);

double snr_to_sigma2(double snr_db, double signal_power = 1.0);

/// Circularly-symmetric complex Gaussian entries with total variance sigma2.
CMatrix awgn(int rows, int cols, double sigma2, std::uint64_t seed);

/// Same as `awgn`, drawing from an existing engine.
CMatrix awgn(int rows, int cols, double sigma2, Rng& rng);

/// Real N(0, sigma2) vector.
RVector real_awgn(int n, double sigma2, Rng& rng);

}  // namespace musefm
