#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "musefm/common.hpp"

namespace musefm {

enum class PilotSelection { Even, Random };

struct PilotObservation {
  CMatrix Y_p;                   // L_p x M
  std::vector<int> selected;     // antenna index per row of W_s
  int Nt = 0;
  double snr_db = 0.0;
  int user_index = 0;

  /// L_p x N_t selection matrix.
  CMatrix selection_matrix() const;
};

struct DetectionSample {
  CMatrix H;  // N_t x K
  CMatrix Y;  // N_t x L_d
  CMatrix X;  // K x L_d
  double snr_db = 0.0;
  int subcarrier = 0;
};

struct PrecodingSample {
  CMatrix H_true;   // N_t x K
  CMatrix H_noisy;  // N_t x K
  double sigma2 = 0.0;
  double P_max = 1.0;
  double snr_db = 0.0;
  int subcarrier = 0;
};

using Bits = std::vector<std::uint8_t>;

/// Polar code with generator G_n = F^{(x) log2 n}, F = [[1,0],[1,1]], non-bit-reversed.
struct PolarCode {
  int n = 0;
  int m = 0;
  std::vector<int> frozen;       // ascending
  std::vector<int> information;  // ascending

  /// Builds a code from an explicit frozen set.
  static PolarCode with_frozen(int n, std::vector<int> frozen);
  /// Freezes the n - m least reliable synthetic channels by Bhattacharyya ranking at `design_ebn0_db`.
  static PolarCode bhattacharyya(int n, int m, double design_ebn0_db = 5.0);
  double rate() const { return static_cast<double>(m) / n; }
};

/// n x n generator matrix over GF(2).
std::vector<Bits> polar_generator(int n);

Bits polar_encode(std::span<const std::uint8_t> b, const PolarCode& code);

/// (n - m) x n parity-check matrix; row i is column frozen[i] of G_n.
std::vector<Bits> polar_parity_check(const PolarCode& code);

/// P * x over GF(2).
Bits syndrome(const std::vector<Bits>& P, std::span<const std::uint8_t> x);

/// Information bits of a codeword estimate: u = x * G_n restricted to information indices.
Bits polar_extract_info(std::span<const std::uint8_t> x, const PolarCode& code);

struct DecodingSample {
  Bits b;          // m
  Bits s_code;     // n
  RVector s_bpsk;  // n, +/-1
  RVector s_hat;   // n
  RVector s_tilde; // 2n - m
  Bits z_tilde;    // n
  double ebn0_db = 0.0;
};

/// sign with sign(0) = +1
inline double sign_pos(double x) { return x < 0.0 ? -1.0 : 1.0; }
/// bin(x) = (1 - sign(x)) / 2
inline std::uint8_t bin_of(double x) { return x < 0.0 ? 1 : 0; }

PilotObservation make_pilot_obs(const CMatrix& H_k, int L_p, double snr_db, std::uint64_t seed,
                                PilotSelection selection = PilotSelection::Even, int user_index = 0);
std::vector<int> pilot_indices(int Nt, int L_p, PilotSelection selection, std::uint64_t seed);

DetectionSample make_detection_sample(const CMatrix& H_m, int L_d, double snr_db, std::uint64_t seed);

PrecodingSample make_precoding_sample(const CMatrix& H_m, double snr_db, std::uint64_t seed, double P_max = 1.0);

double ebn0_to_sigma2(double ebn0_db, double rate);

/// ECCT-style input: [|s_hat|, P * bin(sign(s_hat))].
RVector ecct_preprocess(const RVector& s_hat, const std::vector<Bits>& P);

DecodingSample make_decoding_sample(std::span<const std::uint8_t> b, const PolarCode& code, double ebn0_db,
                                    std::uint64_t seed);

/// Hard codeword decision from the received soft bits and a +/-1 multiplicative-noise estimate.
Bits ecct_postprocess(const RVector& s_hat, const RVector& z_hat);
/// Same, with z_hat given as flip probabilities p_hat (z_hat = sign(1 - 2 p_hat)).
Bits ecct_postprocess_prob(const RVector& s_hat, const RVector& p_hat);

double sum_rate(const CMatrix& H, const CMatrix& W, double sigma2);

double nmse(const CMatrix& est, const CMatrix& truth);
double nmse(const RMatrix& est, const RMatrix& truth);
double ber(std::span<const std::uint8_t> est, std::span<const std::uint8_t> truth);
double loc_error(const Vec2& est, const Vec2& truth);

/// Unit-power QPSK symbol for a 2-bit index.
cplx qpsk_symbol(int index);

}  // namespace musefm
