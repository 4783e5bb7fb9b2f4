#include "semtok/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "semtok/error.hpp"
#include "semtok/rng.hpp"

namespace semtok {

std::string_view to_string(PenaltyKind kind) {
  return kind == PenaltyKind::global ? "global" : "local";
}

PenaltyKind parse_penalty_kind(std::string_view text) {
  if (text == "global") return PenaltyKind::global;
  if (text == "local") return PenaltyKind::local;
  throw UsageError("unknown penalty '" + std::string(text) + "' (global|local)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (patch_size == 0 || image_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
  if (dim == 0 || heads == 0) fail("dim and heads must be positive");
  if (dim % heads != 0) fail("dim must be divisible by heads");
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
  if (encoder_layers < 1 || decoder_layers < 1) fail("encoder_layers and decoder_layers must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (!std::isfinite(score_slope) || !std::isfinite(score_bias)) fail("score slope/bias must be finite");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(layernorm_eps > 0.0)) fail("layernorm_eps must be > 0");
}

// --- model -----------------------------------------------------------------

namespace {

constexpr double kOpenLogit = 3.0;  // initial slope*g + bias; sigmoid(3) ~ 0.95

std::vector<double> normal_values(Rng& rng, std::size_t n, double stddev) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * stddev;
  return v;
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

void Model::build(std::uint64_t seed) {
  const auto& c = config_;
  const std::size_t d = c.dim, h = c.hidden_dim(), n = c.num_patches();
  std::uint64_t stream = 0;
  auto add_param = [&](std::string name, Shape shape, auto init) {
    Rng rng = Rng(seed).split(stream++);
    const std::size_t count = shape_numel(shape);
    Tensor t = Tensor::parameter(std::move(shape), init(rng, count));
    named_.push_back({std::move(name), t});
    return t;
  };
  auto zeros = [](Rng&, std::size_t k) { return std::vector<double>(k, 0.0); };
  auto ones = [](Rng&, std::size_t k) { return std::vector<double>(k, 1.0); };
  auto constant = [](double v) {
    return [v](Rng&, std::size_t k) { return std::vector<double>(k, v); };
  };
  auto normal = [](double stddev) {
    return [stddev](Rng& r, std::size_t k) { return normal_values(r, k, stddev); };
  };
  auto xavier = [](std::size_t fan_in, std::size_t fan_out) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    return [stddev](Rng& r, std::size_t k) { return normal_values(r, k, stddev); };
  };

  embed_.patch_weight = add_param("embed.patch_weight", {c.patch_dim(), d}, xavier(c.patch_dim(), d));
  embed_.patch_bias = add_param("embed.patch_bias", {d}, zeros);
  embed_.position = add_param("embed.position", {n, d}, normal(0.02));
  embed_.class_token = add_param("embed.class_token", {d}, normal(0.02));
  embed_.budget_token = add_param("embed.budget_token", {d}, normal(1.0));

  auto make_selection = [&](const std::string& prefix) {
    SelectionLayerParams p;
    p.gate_weight = add_param(prefix + "select.gate_weight", {d}, normal(0.02));
    p.gate_bias = add_param(prefix + "select.gate_bias", {1},
                            constant((kOpenLogit - c.score_bias) / c.score_slope));
    p.thresh_weight = add_param(prefix + "select.thresh_weight", {d}, normal(0.02));
    p.thresh_bias = add_param(prefix + "select.thresh_bias", {1}, constant(-kOpenLogit));
    return p;
  };
  auto make_block = [&](const std::string& prefix) {
    BlockParams b;
    b.ln1_gain = add_param(prefix + "ln1.gain", {d}, ones);
    b.ln1_bias = add_param(prefix + "ln1.bias", {d}, zeros);
    b.qkv_weight = add_param(prefix + "attn.qkv_weight", {d, 3 * d}, xavier(d, d));
    b.qkv_bias = add_param(prefix + "attn.qkv_bias", {3 * d}, zeros);
    b.out_weight = add_param(prefix + "attn.out_weight", {d, d}, xavier(d, d));
    b.out_bias = add_param(prefix + "attn.out_bias", {d}, zeros);
    b.ln2_gain = add_param(prefix + "ln2.gain", {d}, ones);
    b.ln2_bias = add_param(prefix + "ln2.bias", {d}, zeros);
    b.fc1_weight = add_param(prefix + "mlp.fc1_weight", {d, h}, xavier(d, h));
    b.fc1_bias = add_param(prefix + "mlp.fc1_bias", {h}, zeros);
    b.fc2_weight = add_param(prefix + "mlp.fc2_weight", {h, d}, xavier(h, d));
    b.fc2_bias = add_param(prefix + "mlp.fc2_bias", {d}, zeros);
    return b;
  };

  for (std::size_t k = 0; k < c.encoder_layers; ++k) {
    const std::string prefix = "encoder." + std::to_string(k) + ".";
    encoder_select_.push_back(make_selection(prefix));
    encoder_.push_back(make_block(prefix));
  }
  for (std::size_t k = 0; k < c.decoder_layers; ++k) {
    const std::string prefix = "decoder." + std::to_string(k) + ".";
    if (c.decoder_selection()) decoder_select_.push_back(make_selection(prefix));
    decoder_.push_back(make_block(prefix));
  }

  head_.norm_gain = add_param("head.norm.gain", {d}, ones);
  head_.norm_bias = add_param("head.norm.bias", {d}, zeros);
  head_.weight = add_param("head.weight", {d, c.num_classes}, normal(0.02));
  head_.bias = add_param("head.bias", {c.num_classes}, zeros);
}

Model Model::clone() const {
  Model copy(config_, 0);
  for (std::size_t i = 0; i < named_.size(); ++i) {
    auto src = named_[i].tensor.data();
    auto dst = copy.named_[i].tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return copy;
}

Tensor Model::parameter(std::string_view name) const {
  for (const auto& p : named_)
    if (p.name == name) return p.tensor;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

bool Model::is_selection_parameter(std::string_view name) const {
  return name.find(".select.") != std::string_view::npos;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : named_) total += p.tensor.numel();
  return total;
}

void Model::zero_grad() {
  for (auto& p : named_) p.tensor.zero_grad();
}

// --- embedding -------------------------------------------------------------

Tensor patch_embed(const Tensor& image, const EmbedParams& params, const ModelConfig& config) {
  const std::size_t c = config.channels, s = config.image_size, p = config.patch_size;
  if (image.numel() != c * s * s)
    throw DimensionError("patch_embed: expected a " + std::to_string(c) + "x" + std::to_string(s) +
                         "x" + std::to_string(s) + " image, got shape " +
                         shape_string(image.shape()));
  const std::size_t g = config.grid(), n = config.num_patches(), pd = config.patch_dim();
  const auto px = image.data();
  std::vector<double> patches(n * pd);
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      double* out = patches.data() + (gy * g + gx) * pd;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            *out++ = px[(ch * s + gy * p + y) * s + gx * p + x];
    }
  const Tensor flat = Tensor::from_data({n, pd}, std::move(patches));
  return add(add_row(matmul(flat, params.patch_weight), params.patch_bias), params.position);
}

Tensor make_budget_token(double alpha, const Tensor& budget_embedding) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ContractError("budget alpha must lie in [0,1], got " + std::to_string(alpha));
  return scale(budget_embedding, alpha);
}

TokenSequence embed_sequence(const Tensor& image, double alpha, const Model& model) {
  const auto& cfg = model.config();
  const std::size_t d = cfg.dim, n = cfg.num_patches();
  TokenSequence seq;
  seq.tokens = concat_rows({reshape(model.embed().class_token, {1, d}),
                            reshape(make_budget_token(alpha, model.embed().budget_token), {1, d}),
                            patch_embed(image, model.embed(), cfg)});
  seq.positions.resize(n);
  std::iota(seq.positions.begin(), seq.positions.end(), std::size_t{0});
  seq.alive.assign(n, true);
  return seq;
}

// --- blocks ----------------------------------------------------------------

Tensor transformer_block(const Tensor& x, const BlockParams& params, const ModelConfig& config,
                         const std::vector<bool>& alive) {
  const std::size_t m = x.rows(), d = config.dim, heads = config.heads, dh = config.head_dim();
  if (x.cols() != d) throw DimensionError("transformer_block: token width mismatch");
  const bool masked = !alive.empty();
  if (masked && alive.size() != m)
    throw DimensionError("transformer_block: padding mask of " + std::to_string(alive.size()) +
                         " rows for " + std::to_string(m) + " tokens");
  Tensor alive_col;
  if (masked) {
    std::vector<double> col(m);
    for (std::size_t i = 0; i < m; ++i) col[i] = alive[i] ? 1.0 : 0.0;
    alive_col = Tensor::from_data({m, 1}, std::move(col));
  }
  const double eps = config.layernorm_eps;

  const Tensor h = layernorm(x, params.ln1_gain, params.ln1_bias, eps);
  const Tensor qkv = add_row(matmul(h, params.qkv_weight), params.qkv_bias);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const Tensor q = slice_cols(qkv, i * dh, (i + 1) * dh);
    const Tensor k = slice_cols(qkv, d + i * dh, d + (i + 1) * dh);
    const Tensor v = slice_cols(qkv, 2 * d + i * dh, 2 * d + (i + 1) * dh);
    const Tensor att = softmax_lastdim(scale(matmul_nt(q, k), inv_sqrt), alive);
    outs.push_back(matmul(att, v));
  }
  const Tensor merged = heads == 1 ? outs.front() : concat_cols(outs);
  Tensor attn = add_row(matmul(merged, params.out_weight), params.out_bias);
  if (masked) attn = mul_rows(attn, alive_col);
  const Tensor x1 = add(x, attn);

  const Tensor h2 = layernorm(x1, params.ln2_gain, params.ln2_bias, eps);
  Tensor mlp = add_row(
      matmul(gelu(add_row(matmul(h2, params.fc1_weight), params.fc1_bias)), params.fc2_weight),
      params.fc2_bias);
  if (masked) mlp = mul_rows(mlp, alive_col);
  return add(x1, mlp);
}

TokenSequence transformer_block(const TokenSequence& seq, const BlockParams& params,
                                const ModelConfig& config) {
  TokenSequence out;
  out.positions = seq.positions;
  out.alive = seq.alive;
  out.tokens = transformer_block(seq.tokens, params, config);
  return out;
}

Tensor classify(const Tensor& tokens, const HeadParams& params, const ModelConfig& config) {
  if (tokens.rows() < 1) throw ContractError("classify: class token missing");
  const Tensor cls = layernorm(slice_rows(tokens, kClassRow, kClassRow + 1), params.norm_gain,
                               params.norm_bias, config.layernorm_eps);
  return reshape(add_row(matmul(cls, params.weight), params.bias), {config.num_classes});
}

// --- forward ---------------------------------------------------------------

namespace {

Tensor budget_row(const Model& model, double alpha) {
  return reshape(make_budget_token(alpha, model.embed().budget_token), {1, model.config().dim});
}

// Survivors of the channel's packet loss; index n stands for the class row.
struct DropOutcome {
  std::vector<bool> alive;
  bool class_lost = false;
};

DropOutcome channel_drops(const ChannelSpec& ch, const std::vector<bool>& alive, std::size_t layer) {
  DropOutcome out{alive, false};
  if (ch.kind != ChannelKind::drop) return out;
  for (std::size_t i = 0; i < alive.size(); ++i)
    if (alive[i] && packet_lost(ch.seed, layer, i, ch.drop_prob)) out.alive[i] = false;
  if (ch.drop_class_token) out.class_lost = packet_lost(ch.seed, layer, alive.size(), ch.drop_prob);
  return out;
}

ForwardResult forward_compact(const Model& model, const Tensor& image, double alpha,
                              const ChannelSpec& channel, bool scaling) {
  const auto& cfg = model.config();
  const std::size_t n = cfg.num_patches(), d = cfg.dim;
  ForwardResult result;
  auto& state = result.selection;
  state.num_patches = n;

  TokenSequence seq = embed_sequence(image, alpha, model);
  std::size_t layer_index = 0;
  auto select = [&](const SelectionLayerParams& p, bool decoder) {
    result.selection_rows.push_back(seq.rows());
    auto step = select_tokens(seq, p, cfg.score_slope, cfg.score_bias, scaling);
    step.record.layer = layer_index++;
    step.record.decoder = decoder;
    state.layers.push_back(std::move(step.record));
    seq = std::move(step.sequence);
  };

  for (std::size_t k = 0; k < cfg.encoder_layers; ++k) {
    select(model.encoder_selection()[k], false);
    result.block_rows.push_back(seq.rows());
    seq = transformer_block(seq, model.encoder()[k], cfg);
  }
  state.encoder_output = cfg.encoder_layers - 1;
  state.transmitted = seq.alive;

  // Channel: the class row and surviving patch rows travel; the budget row
  // is rebuilt from alpha on the receiving side.
  const auto drops = channel_drops(channel, seq.alive, cfg.encoder_layers);
  std::vector<std::size_t> patch_rows;
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < seq.active(); ++i)
    if (drops.alive[seq.positions[i]]) {
      patch_rows.push_back(kSpecialRows + i);
      positions.push_back(seq.positions[i]);
    }
  result.transmitted_rows = 1 + seq.active();
  Tensor cls = drops.class_lost ? Tensor::zeros({1, d})
                                : slice_rows(seq.tokens, kClassRow, kClassRow + 1);
  std::vector<Tensor> parts{cls};
  if (!patch_rows.empty()) parts.push_back(gather_rows(seq.tokens, patch_rows));
  Tensor h = concat_rows(parts);
  if (channel.kind == ChannelKind::awgn) {
    Rng rng(channel.seed);
    h = awgn(h, channel.snr_db, rng, channel.noise_mode);
  }
  TokenSequence rx;
  rx.alive = drops.alive;
  rx.positions = std::move(positions);
  rx.tokens = rx.positions.empty()
                  ? concat_rows({slice_rows(h, 0, 1), budget_row(model, alpha)})
                  : concat_rows({slice_rows(h, 0, 1), budget_row(model, alpha),
                                 slice_rows(h, 1, h.rows())});
  state.received = rx.alive;
  seq = std::move(rx);

  for (std::size_t k = 0; k < cfg.decoder_layers; ++k) {
    if (cfg.decoder_selection()) select(model.decoder_selection()[k], true);
    result.block_rows.push_back(seq.rows());
    seq = transformer_block(seq, model.decoder()[k], cfg);
  }
  result.logits = classify(seq.tokens, model.head(), cfg);
  return result;
}

std::vector<bool> with_specials(const std::vector<bool>& alive) {
  std::vector<bool> rows(kSpecialRows, true);
  rows.insert(rows.end(), alive.begin(), alive.end());
  return rows;
}

Tensor column(const std::vector<bool>& flags, bool value_when_set) {
  std::vector<double> v(flags.size());
  for (std::size_t i = 0; i < flags.size(); ++i) v[i] = (flags[i] == value_when_set) ? 1.0 : 0.0;
  return Tensor::from_data({flags.size(), 1}, std::move(v));
}

std::size_t count(const std::vector<bool>& flags) {
  std::size_t c = 0;
  for (bool f : flags) c += f;
  return c;
}

ForwardResult forward_masked(const Model& model, const Tensor& image, double alpha,
                             const ChannelSpec& channel, bool scaling) {
  const auto& cfg = model.config();
  const std::size_t n = cfg.num_patches(), d = cfg.dim;
  ForwardResult result;
  auto& state = result.selection;
  state.num_patches = n;

  TokenSequence init = embed_sequence(image, alpha, model);
  Tensor x = init.tokens;
  std::vector<bool> alive(n, true);
  std::size_t layer_index = 0;

  auto select = [&](const SelectionLayerParams& p, bool decoder) {
    result.selection_rows.push_back(kSpecialRows + count(alive));
    const Tensor threshold = compute_threshold(slice_rows(x, kBudgetRow, kBudgetRow + 1), p);
    const Tensor scores = compute_scores(slice_rows(x, kSpecialRows, kSpecialRows + n), p,
                                         cfg.score_slope, cfg.score_bias);
    const double gamma = threshold.item();
    SelectionRecord rec;
    rec.layer = layer_index++;
    rec.decoder = decoder;
    rec.threshold = gamma;
    rec.alive_in = alive;
    rec.scores.assign(n, std::numeric_limits<double>::quiet_NaN());
    std::vector<bool> keep(n, false);
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i]) {
        rec.scores[i] = scores.at(i);
        keep[i] = !(scores.at(i) < gamma);
      }
    const Tensor margin = add_row(scores, reshape(scale(threshold, -1.0), {1}));
    rec.sparsity = scale(sum(mul(relu(margin), column(alive, true))), 1.0 / static_cast<double>(n));
    if (scaling) {
      const Tensor factor = add(mul(scores, column(keep, true)), column(keep, false));
      x = mul_rows(x, concat_rows({Tensor::full({kSpecialRows, 1}, 1.0), factor}));
    }
    alive = keep;
    rec.kept = alive;
    state.layers.push_back(std::move(rec));
  };

  for (std::size_t k = 0; k < cfg.encoder_layers; ++k) {
    select(model.encoder_selection()[k], false);
    result.block_rows.push_back(kSpecialRows + count(alive));
    x = transformer_block(x, model.encoder()[k], cfg, with_specials(alive));
  }
  state.encoder_output = cfg.encoder_layers - 1;
  state.transmitted = alive;
  result.transmitted_rows = 1 + count(alive);

  const auto drops = channel_drops(channel, alive, cfg.encoder_layers);
  alive = drops.alive;
  if (drops.class_lost) {
    std::vector<bool> lost(n + kSpecialRows, false);
    lost[kClassRow] = true;
    x = mul_rows(x, column(lost, false));
  }
  if (channel.kind == ChannelKind::awgn) {
    std::vector<std::size_t> rows{kClassRow};
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i]) rows.push_back(kSpecialRows + i);
    const Tensor h = gather_rows(x, rows);
    Rng rng(channel.seed);
    const auto noise = awgn_noise(h.data(), channel.snr_db, rng, channel.noise_mode);
    std::vector<double> full((n + kSpecialRows) * d, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy_n(noise.begin() + r * d, d, full.begin() + rows[r] * d);
    x = add(x, Tensor::from_data({n + kSpecialRows, d}, std::move(full)));
  }
  x = concat_rows({slice_rows(x, kClassRow, kClassRow + 1), budget_row(model, alpha),
                   slice_rows(x, kSpecialRows, kSpecialRows + n)});
  state.received = alive;

  for (std::size_t k = 0; k < cfg.decoder_layers; ++k) {
    if (cfg.decoder_selection()) select(model.decoder_selection()[k], true);
    result.block_rows.push_back(kSpecialRows + count(alive));
    x = transformer_block(x, model.decoder()[k], cfg, with_specials(alive));
  }
  result.logits = classify(x, model.head(), cfg);
  return result;
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& image, double alpha,
                      const ChannelSpec& channel, const ForwardOptions& options) {
  channel.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ContractError("budget alpha must lie in [0,1], got " + std::to_string(alpha));
  const bool scaling = model.config().score_scaling && !options.force_no_score_scaling;
  return options.masked_execution ? forward_masked(model, image, alpha, channel, scaling)
                                  : forward_compact(model, image, alpha, channel, scaling);
}

}  // namespace semtok
