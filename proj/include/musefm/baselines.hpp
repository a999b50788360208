#pragma once

#include <vector>

#include "musefm/common.hpp"
#include "musefm/phytasks.hpp"

namespace musefm {

/// Minimum-norm least squares, per subcarrier: H_hat = W_s^H (W_s W_s^H)^{-1} Y_p.
CMatrix ls_estimate(const PilotObservation& obs);

/// x_hat = (H^H H)^{-1} H^H y, column-wise over y.
CMatrix zf_detect(const CMatrix& H, const CMatrix& y);

/// x_hat = (H^H H + sigma2 I)^{-1} H^H y, column-wise over y.
CMatrix lmmse_detect(const CMatrix& H, const CMatrix& y, double sigma2);

/// Channel-inversion ZF with equal per-user power and total power P_max.
CMatrix zf_precode(const CMatrix& H, double P_max);

struct WmmseState {
  CMatrix V;                     // N_t x K precoders
  CVector u;                     // receive scalars
  RVector w;                     // MSE weights
  double mu = 0.0;               // power dual variable
  std::vector<double> rate_trace;
};

struct WmmseOptions {
  int iters = 200;
  double tol = 1e-9;
  double power_tol = 1e-10;
};

/// MISO WMMSE sum-rate maximization starting from scaled matched filtering.
/// rate_trace[0] is the rate of the initial point; the best iterate is returned in V.
WmmseState wmmse_precode(const CMatrix& H, double P_max, double sigma2, const WmmseOptions& opt = {});

}  // namespace musefm
