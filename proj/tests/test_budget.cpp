#include <doctest.h>

#include <cmath>
#include <vector>

#include "semtok/budget.hpp"
#include "semtok/checkpoint.hpp"
#include "semtok/data.hpp"
#include "semtok/error.hpp"
#include "semtok/rng.hpp"

using namespace semtok;

namespace {

ModelConfig random_config(Rng& rng) {
  ModelConfig c;
  c.image_size = 16 + 16 * rng.below(2);
  c.patch_size = rng.below(2) ? 4 : 8;
  c.channels = rng.below(2) ? 1 : 3;
  c.heads = 1 + rng.below(4);
  c.dim = c.heads * (4 + 4 * rng.below(4));
  c.mlp_ratio = 1 + rng.below(4);
  c.encoder_layers = 1 + rng.below(3);
  c.decoder_layers = 1 + rng.below(3);
  c.num_classes = 2 + rng.below(8);
  c.penalty = rng.below(2) ? PenaltyKind::local : PenaltyKind::global;
  return c;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.dim = 8;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.encoder_layers = 2;
  c.decoder_layers = 1;
  return c;
}

Dataset tiny_data(std::size_t count) {
  ShapesOptions o;
  o.count = count;
  o.image_size = 16;
  o.clutter_level = 1;
  return gen_shapes(o);
}

}  // namespace

TEST_CASE("closed-form FLOPs track the instrumented counter") {
  Rng rng(51);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelConfig cfg = random_config(rng);
    Model model(cfg, trial);
    // Shift thresholds so some configurations drop tokens.
    for (const auto& p : model.parameters())
      if (model.is_selection_parameter(p.name)) {
        Tensor t = p.tensor;
        for (double& v : t.mutable_data()) v = rng.normal() * 0.4;
      }
    std::vector<double> px(cfg.channels * cfg.image_size * cfg.image_size);
    for (double& v : px) v = rng.uniform();
    const Tensor image = Tensor::from_data({cfg.channels, cfg.image_size, cfg.image_size}, px);
    NoGradGuard guard;
    flops::Scope scope;
    const ForwardResult r = forward(model, image, rng.uniform(), ChannelSpec::ideal());
    const double counted = static_cast<double>(scope.elapsed());
    const double model_flops = flops_forward(r, cfg);
    INFO("trial " << trial << " counted " << counted << " closed form " << model_flops);
    CHECK(std::abs(model_flops - counted) <= 0.05 * counted);
  }
}

TEST_CASE("FLOPs strictly decrease with any kept count") {
  Rng rng(52);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelConfig cfg = random_config(rng);
    const std::size_t blocks = cfg.total_blocks();
    std::vector<std::size_t> rows(blocks);
    for (auto& r : rows) r = kSpecialRows + 1 + rng.below(cfg.num_patches());
    const double base = flops_forward(rows, cfg);
    for (std::size_t k = 0; k < blocks; ++k) {
      auto fewer = rows;
      --fewer[k];
      CHECK(flops_forward(fewer, cfg) < base);
    }
    std::vector<std::size_t> full(blocks, kSpecialRows + cfg.num_patches());
    CHECK(flops_forward(full, cfg) >= base);
  }
}

TEST_CASE("penalty terms") {
  const Tensor logits = Tensor::from_data({3}, {1.0, 2.0, 0.5});
  const LossTerms t = total_loss(logits, 1, Tensor::scalar(0.7), 0.4, 2.0);
  CHECK(t.penalty.item() == doctest::Approx(2.0 * 0.09));
  CHECK(t.cost.item() == 0.7);
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5));
  CHECK(t.task.item() == doctest::Approx(lse - 2.0));
  CHECK(t.total.item() == doctest::Approx(t.task.item() + t.penalty.item()));
  CHECK_THROWS(total_loss(logits, 3, Tensor::scalar(0.7), 0.4, 2.0));
}

TEST_CASE("penalty-only training moves the cost toward the budget") {
  const ModelConfig cfg = tiny_config();
  const Dataset data = tiny_data(64);
  Model model(cfg, 3);
  auto gap = [&](const Model& m) {
    double total = 0.0;
    for (double a : {0.1, 0.3, 0.5}) {
      const auto ev = evaluate(m, data, a, ChannelSpec::ideal(), 32);
      total += (ev.mean_cost - a) * (ev.mean_cost - a);
    }
    return total;
  };
  const double before = gap(model);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 8;
  tc.learning_rate = 1e-2;
  tc.task_loss = false;
  tc.train_backbone = false;
  const auto head_before = std::vector<double>(model.parameter("head.weight").data().begin(),
                                               model.parameter("head.weight").data().end());
  train(model, data, tc);
  const double after = gap(model);
  INFO("before " << before << " after " << after);
  CHECK(after < 0.5 * before);
  const auto head = model.parameter("head.weight").data();
  CHECK(std::vector<double>(head.begin(), head.end()) == head_before);
}

TEST_CASE("training is deterministic") {
  const ModelConfig cfg = tiny_config();
  const Dataset data = tiny_data(24);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  tc.channel = ChannelSpec::drop(0.2, 5);
  Model a(cfg, 9), b(cfg, 9);
  std::vector<BatchLog> logs;
  TrainHooks hooks;
  hooks.on_batch = [&](const BatchLog& l) { logs.push_back(l); };
  train(a, data, tc, hooks);
  train(b, data, tc);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  CHECK(logs.size() == 3);
  CHECK(logs.back().step == 2);  // zero-based

  const auto e1 = evaluate(a, data, 0.5, ChannelSpec::awgn(5.0, 2), 10);
  const auto e2 = evaluate(a, data, 0.5, ChannelSpec::awgn(5.0, 2), 10);
  CHECK(e1.accuracy == e2.accuracy);
  CHECK(e1.mean_cost == e2.mean_cost);
  CHECK(e1.samples == 10);
  CHECK(e1.kept_histogram.size() == cfg.selection_layers());
}

TEST_CASE("adam and clipping") {
  Tensor p = Tensor::parameter({2}, {1.0, -1.0});
  Adam opt({p}, 0.1, 0.9, 0.999, 1e-8);
  sum(mul(p, p)).backward();
  opt.step();
  // The first bias-corrected step moves each coordinate by lr against the gradient sign.
  CHECK(p.at(0) == doctest::Approx(0.9));
  CHECK(p.at(1) == doctest::Approx(-0.9));

  Tensor q = Tensor::parameter({2}, {3.0, 4.0});
  sum(mul(q, Tensor::from_data({2}, {3.0, 4.0}))).backward();
  const std::vector<Tensor> ps{q};
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(q.grad()[0] == doctest::Approx(0.6));

  TrainConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
