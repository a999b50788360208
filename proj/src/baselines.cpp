#include "musefm/baselines.hpp"

#include <cmath>

namespace musefm {

CMatrix ls_estimate(const PilotObservation& obs) {
  const CMatrix Ws = obs.selection_matrix();
  const CMatrix gram = Ws * Ws.adjoint();
  Eigen::FullPivLU<CMatrix> lu(gram);
  if (!lu.isInvertible()) throw ValidationError("ls_estimate: singular W_s W_s^H");
  return Ws.adjoint() * lu.solve(obs.Y_p);
}

CMatrix zf_detect(const CMatrix& H, const CMatrix& y) {
  if (H.cols() > H.rows()) throw ValidationError("zf_detect: K must not exceed N_t");
  const CMatrix gram = H.adjoint() * H;
  Eigen::FullPivLU<CMatrix> lu(gram);
  if (!lu.isInvertible()) throw ValidationError("zf_detect: H^H H is singular");
  return lu.solve(H.adjoint() * y);
}

CMatrix lmmse_detect(const CMatrix& H, const CMatrix& y, double sigma2) {
  if (H.cols() > H.rows()) throw ValidationError("lmmse_detect: K must not exceed N_t");
  if (sigma2 < 0.0) throw ValidationError("lmmse_detect: negative noise variance");
  const CMatrix reg = H.adjoint() * H + sigma2 * CMatrix::Identity(H.cols(), H.cols());
  return reg.ldlt().solve(H.adjoint() * y);
}

CMatrix zf_precode(const CMatrix& H, double P_max) {
  const auto K = H.cols();
  if (K > H.rows()) throw ValidationError("zf_precode: K must not exceed N_t");
  Eigen::FullPivLU<CMatrix> lu(H.adjoint() * H);
  if (lu.rank() < K) throw ValidationError("zf_precode: channel is rank deficient");
  CMatrix W = H * lu.inverse();
  for (Eigen::Index k = 0; k < K; ++k) W.col(k) *= std::sqrt(P_max / static_cast<double>(K)) / W.col(k).norm();
  return W;
}

namespace {

struct PowerSolver {
  Eigen::VectorXd lambda;
  RVector coeff;  // squared magnitude of U^H B, summed over users, per eigen-direction
  double null_tol = 0.0;

  double power(double mu) const {
    double p = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      const double den = lambda(i) + mu;
      if (den <= null_tol) continue;
      p += coeff(i) / (den * den);
    }
    return p;
  }
};

}  // namespace

WmmseState wmmse_precode(const CMatrix& H, double P_max, double sigma2, const WmmseOptions& opt) {
  if (opt.iters < 1) throw ValidationError("wmmse_precode: iters must be >= 1");
  if (!(sigma2 > 0.0)) throw ValidationError("wmmse_precode: noise variance must be positive");
  const auto Nt = H.rows();
  const auto K = H.cols();

  WmmseState st;
  st.V = H * std::sqrt(P_max / H.squaredNorm());
  st.u = CVector::Zero(K);
  st.w = RVector::Ones(K);
  double rate = sum_rate(H, st.V, sigma2);
  st.rate_trace.push_back(rate);
  CMatrix best = st.V;
  double best_rate = rate;

  for (int it = 0; it < opt.iters; ++it) {
    const CMatrix G = H.adjoint() * st.V;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double total = G.row(k).squaredNorm() + sigma2;
      st.u(k) = G(k, k) / total;
      const double e = 1.0 - std::norm(G(k, k)) / total;
      st.w(k) = 1.0 / e;
    }

    CMatrix A = CMatrix::Zero(Nt, Nt);
    CMatrix B(Nt, K);
    for (Eigen::Index k = 0; k < K; ++k) {
      A += st.w(k) * std::norm(st.u(k)) * H.col(k) * H.col(k).adjoint();
      B.col(k) = st.w(k) * st.u(k) * H.col(k);
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> eig(A);
    const CMatrix& U = eig.eigenvectors();
    const CMatrix UB = U.adjoint() * B;
    PowerSolver ps;
    ps.lambda = eig.eigenvalues().cwiseMax(0.0);
    ps.coeff = UB.rowwise().squaredNorm();
    ps.null_tol = 1e-12 * std::max(ps.lambda.maxCoeff(), 1e-300);

    double mu = 0.0;
    if (ps.power(0.0) > P_max) {
      double lo = 0.0, hi = 1.0;
      while (ps.power(hi) > P_max) hi *= 2.0;
      for (int b = 0; b < 500; ++b) {
        if (P_max - ps.power(hi) < opt.power_tol) break;
        const double mid = 0.5 * (lo + hi);
        if (ps.power(mid) > P_max)
          lo = mid;
        else
          hi = mid;
      }
      mu = hi;
    }
    st.mu = mu;

    RVector scale(Nt);
    for (Eigen::Index i = 0; i < Nt; ++i) {
      const double den = ps.lambda(i) + mu;
      scale(i) = den <= ps.null_tol ? 0.0 : 1.0 / den;
    }
    st.V = U * scale.asDiagonal() * UB;

    const double next = sum_rate(H, st.V, sigma2);
    st.rate_trace.push_back(next);
    if (next > best_rate) {
      best_rate = next;
      best = st.V;
    }
    const double gain = next - rate;
    rate = next;
    if (gain < opt.tol) break;
  }
  st.V = best;
  return st;
}

}  // namespace musefm
