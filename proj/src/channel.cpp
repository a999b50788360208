#include "musefm/channel.hpp"

#include <cmath>

namespace musefm {

void ArrayGeometry::validate() const {
  if (N_h < 1 || N_v < 1) throw ValidationError("ArrayGeometry: N_h and N_v must be >= 1");
  if (!(d() > 0.0)) throw ValidationError("ArrayGeometry: element spacing must be positive");
  if (!(delta_f > 0.0)) throw ValidationError("ArrayGeometry: subcarrier spacing must be positive");
  if (M < 1) throw ValidationError("ArrayGeometry: M must be >= 1");
  if (!(f_c > 0.0)) throw ValidationError("ArrayGeometry: carrier frequency must be positive");
}

CVector steering_vector(double theta, double phi, double f_m, const ArrayGeometry& geom) {
  const int Nt = geom.Nt();
  const double k = 2.0 * kPi * f_m / kSpeedOfLight;
  const double kd = k * geom.d();
  const double u_v = std::sin(phi) * std::sin(theta);
  const double u_h = std::cos(theta);
  const double amp = 1.0 / std::sqrt(static_cast<double>(Nt));
  CVector a(Nt);
  for (int nv = 0; nv < geom.N_v; ++nv)
    for (int nh = 0; nh < geom.N_h; ++nh) {
      const double ph = kd * (nv * u_v + nh * u_h);
      a(nv * geom.N_h + nh) = amp * cplx(std::cos(ph), std::sin(ph));
    }
  return a;
}

cplx path_gain(const Path& path, const ArrayGeometry& geom) {
  if (!(path.length > 0.0)) throw ValidationError("path_gain: path length must be positive");
  const double mag =
      geom.wavelength_c() / (4.0 * kPi * path.length) * std::pow(kReflectionCoefficient, path.n_bounces);
  return {mag, 0.0};
}

CMatrix assemble_channel(const PathList& paths, const ArrayGeometry& geom) {
  CMatrix H = CMatrix::Zero(geom.Nt(), geom.M);
  for (const auto& p : paths.paths) {
    const cplx beta = path_gain(p, geom);
    for (int m = 0; m < geom.M; ++m) {
      const double fm = geom.subcarrier_freq(m);
      const double ph = -2.0 * kPi * fm * p.delay;
      H.col(m) += beta * cplx(std::cos(ph), std::sin(ph)) * steering_vector(p.aod_elevation, p.aod_azimuth, fm, geom);
    }
  }
  return H;
}

double normalize_channel(CMatrix& H) {
  const double mean_sq = H.squaredNorm() / static_cast<double>(H.cols());
  if (mean_sq <= 0.0) return 1.0;
  const double scale = std::sqrt(static_cast<double>(H.rows()) / mean_sq);
  H *= scale;
  return scale;
}

double snr_to_sigma2(double snr_db, double signal_power) {
  if (!(signal_power > 0.0)) throw ValidationError("snr_to_sigma2: signal power must be positive");
  return signal_power * std::pow(10.0, -snr_db / 10.0);
}

CMatrix awgn(int rows, int cols, double sigma2, Rng& rng) {
  if (sigma2 < 0.0) throw ValidationError("awgn: variance must be non-negative");
  CMatrix n(rows, cols);
  if (sigma2 == 0.0) {
    n.setZero();
    return n;
  }
  std::normal_distribution<double> g(0.0, std::sqrt(sigma2 / 2.0));
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) {
      const double re = g(rng);
      const double im = g(rng);
      n(i, j) = cplx(re, im);
    }
  return n;
}

CMatrix awgn(int rows, int cols, double sigma2, std::uint64_t seed) {
  Rng rng(seed);
  return awgn(rows, cols, sigma2, rng);
}

RVector real_awgn(int n, double sigma2, Rng& rng) {
  if (sigma2 < 0.0) throw ValidationError("real_awgn: variance must be non-negative");
  RVector v(n);
  if (sigma2 == 0.0) return v.setZero();
  std::normal_distribution<double> g(0.0, std::sqrt(sigma2));
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

}  // namespace musefm
