#pragma once

// Non-trainable channel between encoder and decoder.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semtok/rng.hpp"
#include "semtok/tensor.hpp"
#include "semtok/tokens.hpp"

namespace semtok {

enum class ChannelKind { ideal, awgn, drop };

// exact: noise rescaled so the realized SNR equals the target.
// fixed_sigma: per-component variance 10^(-snr/10), realized SNR is random.
enum class NoiseMode { exact, fixed_sigma };

struct ChannelSpec {
  ChannelKind kind = ChannelKind::ideal;
  double snr_db = 20.0;
  double drop_prob = 0.0;
  std::uint64_t seed = 0;
  NoiseMode noise_mode = NoiseMode::exact;
  // Subject the class token to packet loss as well (it is then received as
  // a zero row).
  bool drop_class_token = false;

  static ChannelSpec ideal() { return {}; }
  static ChannelSpec awgn(double snr_db, std::uint64_t seed = 0) {
    ChannelSpec c;
    c.kind = ChannelKind::awgn;
    c.snr_db = snr_db;
    c.seed = seed;
    return c;
  }
  static ChannelSpec drop(double p, std::uint64_t seed = 0) {
    ChannelSpec c;
    c.kind = ChannelKind::drop;
    c.drop_prob = p;
    c.seed = seed;
    return c;
  }
  ChannelSpec with_seed(std::uint64_t s) const {
    ChannelSpec c = *this;
    c.seed = s;
    return c;
  }

  void validate() const;
};

std::string_view to_string(ChannelKind kind);
ChannelKind parse_channel_kind(std::string_view text);
std::string_view to_string(NoiseMode mode);
NoiseMode parse_noise_mode(std::string_view text);

// Additive noise for signal `h` at the requested SNR, drawn from `rng` in
// row-major order. Throws DegenerateError when ||h|| is zero in exact mode.
std::vector<double> awgn_noise(std::span<const double> h, double snr_db, Rng& rng,
                               NoiseMode mode = NoiseMode::exact);

// h + n. The noise is a constant: gradients reach h unchanged.
Tensor awgn(const Tensor& h, double snr_db, Rng& rng, NoiseMode mode = NoiseMode::exact);

// 10 log10(||h||^2 / ||n||^2); +infinity when n is identically zero.
double realized_snr_db(std::span<const double> h, std::span<const double> n);

// Loss decision for one row, a pure function of (seed, layer, row).
bool packet_lost(std::uint64_t seed, std::size_t layer, std::size_t row, double p);

// Clears each alive patch independently with probability p. The class and
// budget rows are never touched here.
TokenSequence packet_drop(const TokenSequence& seq, double p, std::uint64_t seed,
                          std::size_t layer);

// Training draws a fresh channel realization per (step, sample); evaluation
// keys on the sample index only so repeated evaluations agree.
std::uint64_t train_channel_seed(std::uint64_t base, std::uint64_t step, std::uint64_t sample);
std::uint64_t eval_channel_seed(std::uint64_t base, std::uint64_t sample);

}  // namespace semtok
