#include "semtok/channel.hpp"

#include <cmath>
#include <limits>

#include "semtok/error.hpp"

namespace semtok {

void TokenSequence::check() const {
  if (!tokens.defined()) throw ConsistencyError("token sequence without a buffer");
  if (tokens.rows() != rows())
    throw ConsistencyError("token buffer has " + std::to_string(tokens.rows()) +
                           " rows, expected " + std::to_string(rows()));
  std::size_t count = 0;
  for (bool a : alive) count += a;
  if (count != active())
    throw ConsistencyError("alive mask counts " + std::to_string(count) +
                           " patches but " + std::to_string(active()) + " rows are active");
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= alive.size() || !alive[positions[i]])
      throw ConsistencyError("active row refers to a dead or unknown patch");
    if (i > 0 && positions[i] <= positions[i - 1])
      throw ConsistencyError("patch positions are not strictly increasing");
  }
}

void ChannelSpec::validate() const {
  if (kind == ChannelKind::drop && !(drop_prob >= 0.0 && drop_prob <= 1.0))
    throw ContractError("drop probability must lie in [0,1], got " + std::to_string(drop_prob));
  if (kind == ChannelKind::awgn && std::isnan(snr_db))
    throw ContractError("SNR must be a number");
}

std::string_view to_string(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::ideal: return "ideal";
    case ChannelKind::awgn: return "awgn";
    case ChannelKind::drop: return "drop";
  }
  return "?";
}

ChannelKind parse_channel_kind(std::string_view text) {
  if (text == "ideal") return ChannelKind::ideal;
  if (text == "awgn") return ChannelKind::awgn;
  if (text == "drop") return ChannelKind::drop;
  throw UsageError("unknown channel kind '" + std::string(text) + "' (ideal|awgn|drop)");
}

std::string_view to_string(NoiseMode mode) {
  return mode == NoiseMode::exact ? "exact" : "fixed-sigma";
}

NoiseMode parse_noise_mode(std::string_view text) {
  if (text == "exact") return NoiseMode::exact;
  if (text == "fixed-sigma") return NoiseMode::fixed_sigma;
  throw UsageError("unknown noise mode '" + std::string(text) + "' (exact|fixed-sigma)");
}

std::vector<double> awgn_noise(std::span<const double> h, double snr_db, Rng& rng,
                               NoiseMode mode) {
  std::vector<double> n(h.size());
  for (double& v : n) v = rng.normal();
  if (mode == NoiseMode::fixed_sigma) {
    const double sigma = std::sqrt(std::pow(10.0, -snr_db / 10.0));
    for (double& v : n) v *= sigma;
    return n;
  }
  double signal = 0.0, raw = 0.0;
  for (double v : h) signal += v * v;
  for (double v : n) raw += v * v;
  if (!(signal > 0.0)) throw DegenerateError("awgn: transmitted signal has zero power");
  if (!(raw > 0.0)) throw DegenerateError("awgn: empty noise draw");
  // ||c n0||^2 = ||h||^2 / 10^(snr/10)
  const double target = signal / std::pow(10.0, snr_db / 10.0);
  const double c = std::sqrt(target / raw);
  for (double& v : n) v *= c;
  return n;
}

Tensor awgn(const Tensor& h, double snr_db, Rng& rng, NoiseMode mode) {
  auto noise = awgn_noise(h.data(), snr_db, rng, mode);
  return add(h, Tensor::from_data(h.shape(), std::move(noise)));
}

double realized_snr_db(std::span<const double> h, std::span<const double> n) {
  double signal = 0.0, noise = 0.0;
  for (double v : h) signal += v * v;
  for (double v : n) noise += v * v;
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

bool packet_lost(std::uint64_t seed, std::size_t layer, std::size_t row, double p) {
  return counter_uniform(seed, layer, row) < p;
}

TokenSequence packet_drop(const TokenSequence& seq, double p, std::uint64_t seed,
                          std::size_t layer) {
  if (!(p >= 0.0 && p <= 1.0))
    throw ContractError("drop probability must lie in [0,1], got " + std::to_string(p));
  TokenSequence out;
  out.alive = seq.alive;
  std::vector<std::size_t> rows{kClassRow, kBudgetRow};
  for (std::size_t i = 0; i < seq.positions.size(); ++i) {
    const std::size_t pos = seq.positions[i];
    if (packet_lost(seed, layer, pos, p)) {
      out.alive[pos] = false;
    } else {
      out.positions.push_back(pos);
      rows.push_back(kSpecialRows + i);
    }
  }
  out.tokens = rows.size() == seq.rows() ? seq.tokens : gather_rows(seq.tokens, rows);
  return out;
}

std::uint64_t train_channel_seed(std::uint64_t base, std::uint64_t step, std::uint64_t sample) {
  return derive_seed(derive_seed(base, 0x7472), step, sample);
}

std::uint64_t eval_channel_seed(std::uint64_t base, std::uint64_t sample) {
  return derive_seed(derive_seed(base, 0x6576), sample);
}

}  // namespace semtok
