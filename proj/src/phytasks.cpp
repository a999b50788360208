#include "musefm/phytasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "musefm/channel.hpp"

namespace musefm {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

Bits encode_u(const Bits& u) {
  // in-place butterfly for x = u * F^{(x) n}
  Bits x = u;
  const int n = static_cast<int>(x.size());
  for (int h = 1; h < n; h *= 2)
    for (int i = 0; i < n; i += 2 * h)
      for (int j = i; j < i + h; ++j) x[j] ^= x[j + h];
  return x;
}

}  // namespace

CMatrix PilotObservation::selection_matrix() const {
  CMatrix W = CMatrix::Zero(static_cast<int>(selected.size()), Nt);
  for (std::size_t i = 0; i < selected.size(); ++i) W(static_cast<int>(i), selected[i]) = 1.0;
  return W;
}

PolarCode PolarCode::with_frozen(int n, std::vector<int> frozen) {
  if (!is_pow2(n)) throw ValidationError("PolarCode: n must be a power of two");
  std::sort(frozen.begin(), frozen.end());
  if (std::adjacent_find(frozen.begin(), frozen.end()) != frozen.end())
    throw ValidationError("PolarCode: duplicate frozen index");
  if (!frozen.empty() && (frozen.front() < 0 || frozen.back() >= n))
    throw ValidationError("PolarCode: frozen index out of range");
  PolarCode c;
  c.n = n;
  c.m = n - static_cast<int>(frozen.size());
  c.frozen = std::move(frozen);
  for (int i = 0, f = 0; i < n; ++i) {
    if (f < static_cast<int>(c.frozen.size()) && c.frozen[f] == i) {
      ++f;
      continue;
    }
    c.information.push_back(i);
  }
  return c;
}

PolarCode PolarCode::bhattacharyya(int n, int m, double design_ebn0_db) {
  if (!is_pow2(n)) throw ValidationError("PolarCode: n must be a power of two");
  if (m < 0 || m > n) throw ValidationError("PolarCode: m out of range");
  const double rate = static_cast<double>(m) / n;
  std::vector<double> z{std::exp(-rate * db_to_linear(design_ebn0_db))};
  // The outermost Kronecker factor is the last polarization step, so each doubling sets the MSB.
  while (static_cast<int>(z.size()) < n) {
    const std::size_t half = z.size();
    std::vector<double> next(2 * half);
    for (std::size_t j = 0; j < half; ++j) {
      next[j] = 2.0 * z[j] - z[j] * z[j];
      next[j + half] = z[j] * z[j];
    }
    z = std::move(next);
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return z[a] > z[b]; });
  return with_frozen(n, std::vector<int>(order.begin(), order.begin() + (n - m)));
}

std::vector<Bits> polar_generator(int n) {
  if (!is_pow2(n)) throw ValidationError("polar_generator: n must be a power of two");
  std::vector<Bits> G(n, Bits(n, 0));
  for (int i = 0; i < n; ++i) {
    Bits e(n, 0);
    e[i] = 1;
    G[i] = encode_u(e);
  }
  return G;
}

Bits polar_encode(std::span<const std::uint8_t> b, const PolarCode& code) {
  if (static_cast<int>(b.size()) != code.m) throw ValidationError("polar_encode: message length != m");
  Bits u(code.n, 0);
  for (int i = 0; i < code.m; ++i) u[code.information[i]] = b[i] & 1;
  return encode_u(u);
}

std::vector<Bits> polar_parity_check(const PolarCode& code) {
  const auto G = polar_generator(code.n);
  std::vector<Bits> P(code.frozen.size(), Bits(code.n, 0));
  for (std::size_t i = 0; i < code.frozen.size(); ++i)
    for (int j = 0; j < code.n; ++j) P[i][j] = G[j][code.frozen[i]];
  return P;
}

Bits syndrome(const std::vector<Bits>& P, std::span<const std::uint8_t> x) {
  Bits s(P.size(), 0);
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (P[i].size() != x.size()) throw ValidationError("syndrome: length mismatch");
    std::uint8_t acc = 0;
    for (std::size_t j = 0; j < x.size(); ++j) acc ^= static_cast<std::uint8_t>(P[i][j] & x[j]);
    s[i] = acc;
  }
  return s;
}

Bits polar_extract_info(std::span<const std::uint8_t> x, const PolarCode& code) {
  if (static_cast<int>(x.size()) != code.n) throw ValidationError("polar_extract_info: length != n");
  const Bits u = encode_u(Bits(x.begin(), x.end()));  // G_n is an involution over GF(2)
  Bits b(code.m);
  for (int i = 0; i < code.m; ++i) b[i] = u[code.information[i]];
  return b;
}

std::vector<int> pilot_indices(int Nt, int L_p, PilotSelection selection, std::uint64_t seed) {
  if (L_p < 1 || L_p > Nt) throw ValidationError("pilot length must satisfy 1 <= L_p <= N_t");
  std::vector<int> idx(L_p);
  if (selection == PilotSelection::Even) {
    for (int i = 0; i < L_p; ++i) idx[i] = static_cast<int>(static_cast<long long>(i) * Nt / L_p);
    return idx;
  }
  std::vector<int> all(Nt);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(derive_seed(seed, 0x5E1ULL));
  std::shuffle(all.begin(), all.end(), rng);
  std::copy(all.begin(), all.begin() + L_p, idx.begin());
  std::sort(idx.begin(), idx.end());
  return idx;
}

PilotObservation make_pilot_obs(const CMatrix& H_k, int L_p, double snr_db, std::uint64_t seed,
                                PilotSelection selection, int user_index) {
  const int Nt = static_cast<int>(H_k.rows());
  PilotObservation obs;
  obs.selected = pilot_indices(Nt, L_p, selection, seed);
  obs.Nt = Nt;
  obs.snr_db = snr_db;
  obs.user_index = user_index;
  Rng rng(derive_seed(seed, 0xA0ULL));
  obs.Y_p = awgn(L_p, static_cast<int>(H_k.cols()), snr_to_sigma2(snr_db), rng);
  for (int i = 0; i < L_p; ++i) obs.Y_p.row(i) += H_k.row(obs.selected[i]);
  return obs;
}

cplx qpsk_symbol(int index) {
  const double a = 1.0 / std::sqrt(2.0);
  return {(index & 1) ? -a : a, (index & 2) ? -a : a};
}

DetectionSample make_detection_sample(const CMatrix& H_m, int L_d, double snr_db, std::uint64_t seed) {
  const int Nt = static_cast<int>(H_m.rows());
  const int K = static_cast<int>(H_m.cols());
  if (K > Nt) throw ValidationError("make_detection_sample: K must not exceed N_t");
  if (L_d < 1) throw ValidationError("make_detection_sample: L_d must be >= 1");
  DetectionSample s;
  s.H = H_m;
  s.snr_db = snr_db;
  Rng rng(derive_seed(seed, 0xDE7ULL));
  s.X.resize(K, L_d);
  for (int t = 0; t < L_d; ++t)
    for (int k = 0; k < K; ++k) s.X(k, t) = qpsk_symbol(uniform_int(rng, 0, 3));
  s.Y = H_m * s.X + awgn(Nt, L_d, snr_to_sigma2(snr_db), rng);
  return s;
}

PrecodingSample make_precoding_sample(const CMatrix& H_m, double snr_db, std::uint64_t seed, double P_max) {
  PrecodingSample s;
  s.H_true = H_m;
  s.sigma2 = snr_to_sigma2(snr_db);
  s.P_max = P_max;
  s.snr_db = snr_db;
  s.H_noisy = H_m + awgn(static_cast<int>(H_m.rows()), static_cast<int>(H_m.cols()), s.sigma2,
                         derive_seed(seed, 0x94EULL));
  return s;
}

double ebn0_to_sigma2(double ebn0_db, double rate) { return 1.0 / (2.0 * rate * db_to_linear(ebn0_db)); }

RVector ecct_preprocess(const RVector& s_hat, const std::vector<Bits>& P) {
  const int n = static_cast<int>(s_hat.size());
  Bits hard(n);
  for (int i = 0; i < n; ++i) hard[i] = bin_of(s_hat(i));
  const Bits syn = syndrome(P, hard);
  RVector out(n + static_cast<int>(syn.size()));
  out.head(n) = s_hat.cwiseAbs();
  for (std::size_t i = 0; i < syn.size(); ++i) out(n + static_cast<int>(i)) = syn[i];
  return out;
}

DecodingSample make_decoding_sample(std::span<const std::uint8_t> b, const PolarCode& code, double ebn0_db,
                                    std::uint64_t seed) {
  DecodingSample s;
  s.b.assign(b.begin(), b.end());
  s.s_code = polar_encode(b, code);
  s.ebn0_db = ebn0_db;
  s.s_bpsk.resize(code.n);
  for (int i = 0; i < code.n; ++i) s.s_bpsk(i) = 1.0 - 2.0 * s.s_code[i];
  Rng rng(derive_seed(seed, 0xDEC0ULL));
  s.s_hat = s.s_bpsk + real_awgn(code.n, ebn0_to_sigma2(ebn0_db, code.rate()), rng);
  s.s_tilde = ecct_preprocess(s.s_hat, polar_parity_check(code));
  s.z_tilde.resize(code.n);
  for (int i = 0; i < code.n; ++i) s.z_tilde[i] = bin_of(sign_pos(s.s_hat(i)) * s.s_bpsk(i));
  return s;
}

Bits ecct_postprocess(const RVector& s_hat, const RVector& z_hat) {
  if (s_hat.size() != z_hat.size()) throw ValidationError("ecct_postprocess: length mismatch");
  Bits out(s_hat.size());
  for (Eigen::Index i = 0; i < s_hat.size(); ++i) out[i] = bin_of(sign_pos(s_hat(i)) * sign_pos(z_hat(i)));
  return out;
}

Bits ecct_postprocess_prob(const RVector& s_hat, const RVector& p_hat) {
  RVector z(p_hat.size());
  for (Eigen::Index i = 0; i < p_hat.size(); ++i) z(i) = sign_pos(1.0 - 2.0 * p_hat(i));
  return ecct_postprocess(s_hat, z);
}

double sum_rate(const CMatrix& H, const CMatrix& W, double sigma2) {
  if (!(sigma2 > 0.0)) throw ValidationError("sum_rate: noise variance must be positive");
  if (H.rows() != W.rows() || H.cols() != W.cols()) throw ValidationError("sum_rate: shape mismatch");
  const CMatrix G = H.adjoint() * W;  // G(k, j) = h_k^H w_j
  double rate = 0.0;
  for (Eigen::Index k = 0; k < G.rows(); ++k) {
    double interf = 0.0;
    for (Eigen::Index j = 0; j < G.cols(); ++j)
      if (j != k) interf += std::norm(G(k, j));
    rate += std::log2(1.0 + std::norm(G(k, k)) / (interf + sigma2));
  }
  return rate;
}

double nmse(const CMatrix& est, const CMatrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) throw ValidationError("nmse: shape mismatch");
  const double den = truth.squaredNorm();
  if (!(den > 0.0)) throw ValidationError("nmse: reference has zero norm");
  return (est - truth).squaredNorm() / den;
}

double nmse(const RMatrix& est, const RMatrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) throw ValidationError("nmse: shape mismatch");
  const double den = truth.squaredNorm();
  if (!(den > 0.0)) throw ValidationError("nmse: reference has zero norm");
  return (est - truth).squaredNorm() / den;
}

double ber(std::span<const std::uint8_t> est, std::span<const std::uint8_t> truth) {
  if (est.size() != truth.size()) throw ValidationError("ber: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < est.size(); ++i) wrong += (est[i] & 1) != (truth[i] & 1);
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

double loc_error(const Vec2& est, const Vec2& truth) { return (est - truth).norm(); }

}  // namespace musefm
