#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "semtok/checkpoint.hpp"
#include "semtok/error.hpp"
#include "semtok/rng.hpp"
#include "semtok/transformer.hpp"

using namespace semtok;

namespace {

ModelConfig small_config(Rng& rng, PenaltyKind penalty) {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = rng.below(2) ? 4 : 8;
  c.channels = rng.below(2) ? 1 : 3;
  c.heads = 1 + rng.below(3);
  c.dim = c.heads * (2 + rng.below(4));
  c.mlp_ratio = 1 + rng.below(3);
  c.encoder_layers = 1 + rng.below(3);
  c.decoder_layers = 1 + rng.below(3);
  c.num_classes = 2 + rng.below(4);
  c.penalty = penalty;
  c.score_scaling = rng.below(2) == 0;
  return c;
}

// Moves every selection layer away from the open initialisation so that the
// forward pass actually drops tokens.
void randomise_selection(Model& model, Rng& rng) {
  for (const auto& p : model.parameters()) {
    if (!model.is_selection_parameter(p.name)) continue;
    Tensor t = p.tensor;
    const bool weight = p.name.find("weight") != std::string::npos;
    for (double& v : t.mutable_data()) v = rng.normal() * (weight ? 0.5 : 0.3);
  }
}

Tensor random_image(const ModelConfig& c, Rng& rng) {
  std::vector<double> px(c.channels * c.image_size * c.image_size);
  for (double& v : px) v = rng.uniform();
  return Tensor::from_data({c.channels, c.image_size, c.image_size}, px);
}

}  // namespace

TEST_CASE("masked and compact execution agree") {
  Rng rng(41);
  std::size_t dropped_somewhere = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const PenaltyKind penalty = trial % 2 ? PenaltyKind::local : PenaltyKind::global;
    const ModelConfig cfg = small_config(rng, penalty);
    Model model(cfg, 100 + trial);
    randomise_selection(model, rng);
    const Tensor image = random_image(cfg, rng);
    const double alpha = rng.uniform();
    ChannelSpec channel;
    switch (trial % 3) {
      case 0: break;
      case 1: channel = ChannelSpec::drop(0.3, derive_seed(7, trial)); break;
      case 2: channel = ChannelSpec::awgn(rng.uniform(0.0, 20.0), derive_seed(9, trial)); break;
    }
    channel.drop_class_token = trial % 5 == 1;
    const ForwardResult a = forward(model, image, alpha, channel);
    ForwardOptions masked;
    masked.masked_execution = true;
    const ForwardResult b = forward(model, image, alpha, channel, masked);

    REQUIRE(a.logits.numel() == b.logits.numel());
    for (std::size_t i = 0; i < a.logits.numel(); ++i)
      CHECK(std::abs(a.logits.at(i) - b.logits.at(i)) <= 1e-9);
    CHECK(a.block_rows == b.block_rows);
    CHECK(a.selection_rows == b.selection_rows);
    CHECK(a.transmitted_rows == b.transmitted_rows);
    CHECK(a.selection.transmitted == b.selection.transmitted);
    CHECK(a.selection.received == b.selection.received);
    REQUIRE(a.selection.layers.size() == b.selection.layers.size());
    REQUIRE(a.selection.layers.size() == cfg.selection_layers());
    for (std::size_t k = 0; k < a.selection.layers.size(); ++k) {
      const auto& ra = a.selection.layers[k];
      const auto& rb = b.selection.layers[k];
      CHECK(ra.kept == rb.kept);
      CHECK(ra.alive_in == rb.alive_in);
      CHECK(std::abs(ra.threshold - rb.threshold) <= 1e-9);
      CHECK(std::abs(ra.sparsity.item() - rb.sparsity.item()) <= 1e-9);
      for (std::size_t i = 0; i < ra.scores.size(); ++i) {
        CHECK(std::isnan(ra.scores[i]) == std::isnan(rb.scores[i]));
        if (!std::isnan(ra.scores[i])) CHECK(std::abs(ra.scores[i] - rb.scores[i]) <= 1e-9);
      }
      dropped_somewhere += ra.kept_count() < cfg.num_patches();
    }
  }
  // The comparison is only meaningful if tokens were really removed.
  CHECK(dropped_somewhere > 20);
}

TEST_CASE("masked block equals the block on surviving rows") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelConfig cfg = small_config(rng, PenaltyKind::global);
    Model model(cfg, trial);
    const std::size_t m = 6;
    std::vector<double> v(m * cfg.dim);
    for (double& x : v) x = rng.normal();
    const Tensor x = Tensor::from_data({m, cfg.dim}, v);
    std::vector<bool> alive(m);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < m; ++i) {
      alive[i] = i < 2 || rng.below(2) == 0;
      if (alive[i]) rows.push_back(i);
    }
    const Tensor full = transformer_block(x, model.encoder()[0], cfg, alive);
    const Tensor part = transformer_block(gather_rows(x, rows), model.encoder()[0], cfg);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < cfg.dim; ++c)
        CHECK(std::abs(full.at(rows[r], c) - part.at(r, c)) <= 1e-12);
    // dead rows pass through unchanged
    for (std::size_t i = 0; i < m; ++i)
      if (!alive[i])
        for (std::size_t c = 0; c < cfg.dim; ++c) CHECK(full.at(i, c) == x.at(i, c));
  }
}

TEST_CASE("local penalty models carry no decoder selection parameters") {
  Rng rng(43);
  const ModelConfig cfg = small_config(rng, PenaltyKind::local);
  Model model(cfg, 1);
  CHECK(model.decoder_selection().empty());
  CHECK(model.encoder_selection().size() == cfg.encoder_layers);
  for (const auto& p : model.parameters())
    CHECK_FALSE((p.name.rfind("decoder.", 0) == 0 && model.is_selection_parameter(p.name)));
  const Model back = deserialize_checkpoint(serialize_checkpoint(model));
  for (const auto& p : back.parameters())
    CHECK_FALSE((p.name.rfind("decoder.", 0) == 0 && model.is_selection_parameter(p.name)));

  const ForwardResult r = forward(model, random_image(cfg, rng), 0.5, ChannelSpec::ideal());
  CHECK(r.selection.layers.size() == cfg.encoder_layers);
  CHECK(r.block_rows.size() == cfg.total_blocks());

  ModelConfig global = cfg;
  global.penalty = PenaltyKind::global;
  Model g(global, 1);
  CHECK(g.decoder_selection().size() == cfg.decoder_layers);
}

TEST_CASE("embedding and budget token") {
  ModelConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.dim = 4;
  cfg.heads = 2;
  Model model(cfg, 3);
  Rng rng(44);
  const Tensor image = random_image(cfg, rng);
  const TokenSequence seq = embed_sequence(image, 0.25, model);
  seq.check();
  CHECK(seq.rows() == 6);
  for (std::size_t c = 0; c < cfg.dim; ++c) {
    CHECK(seq.tokens.at(kBudgetRow, c) == 0.25 * model.embed().budget_token.at(c));
    CHECK(seq.tokens.at(kClassRow, c) == model.embed().class_token.at(c));
  }
  CHECK_THROWS_AS(make_budget_token(1.5, model.embed().budget_token), ContractError);
  CHECK_THROWS_AS(forward(model, image, -0.1, ChannelSpec::ideal()), ContractError);
  CHECK_THROWS_AS(patch_embed(Tensor::zeros({3, 8, 8}), model.embed(), cfg), DimensionError);

  // Changing one patch only changes that patch's embedding row.
  std::vector<double> px(image.data().begin(), image.data().end());
  px[8 * 5 + 6] += 0.5;  // row 5, col 6 -> patch (1,1) = index 3
  const Tensor a = patch_embed(image, model.embed(), cfg);
  const Tensor b = patch_embed(Tensor::from_data(image.shape(), px), model.embed(), cfg);
  for (std::size_t r = 0; r < 4; ++r) {
    double diff = 0.0;
    for (std::size_t c = 0; c < cfg.dim; ++c) diff += std::abs(a.at(r, c) - b.at(r, c));
    CHECK((r == 3 ? diff > 0.0 : diff == 0.0));
  }
}

TEST_CASE("fresh models keep every token") {
  ModelConfig cfg;
  Model model(cfg, 5);
  Rng rng(45);
  for (double alpha : {0.0, 0.5, 1.0}) {
    const ForwardResult r = forward(model, random_image(cfg, rng), alpha, ChannelSpec::ideal());
    for (const auto& rec : r.selection.layers) CHECK(rec.kept_count() == cfg.num_patches());
  }
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.patch_size = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lambda = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_penalty_kind("both"), UsageError);
}

TEST_CASE("clone is independent") {
  ModelConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.dim = 4;
  cfg.heads = 1;
  Model a(cfg, 1);
  Model b = a.clone();
  Tensor w = b.parameter("head.bias");
  w.mutable_data()[0] += 1.0;
  CHECK(a.parameter("head.bias").at(0) != b.parameter("head.bias").at(0));
  CHECK_THROWS_AS(a.parameter("no.such"), ContractError);
}
