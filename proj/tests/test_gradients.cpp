#include <doctest.h>

#include <algorithm>
#include <set>
#include <string>

#include "semtok/gradcheck.hpp"
#include "semtok/tensor.hpp"

using namespace semtok;

TEST_CASE("finite-difference suite passes on a fresh model") {
  const GradcheckReport report = run_gradcheck();
  for (const auto& e : report.entries) {
    CAPTURE(e.name);
    CHECK(e.passed);
    CHECK(e.probes > 0);
    CHECK(e.max_rel_error <= 1e-4);
  }
  CHECK(report.passed());
}

TEST_CASE("report lists every registered op exactly once, in order") {
  const GradcheckReport report = run_gradcheck();
  const auto& ops = differentiable_ops();
  REQUIRE(report.entries.size() > ops.size());
  for (std::size_t i = 0; i < ops.size(); ++i) CHECK(report.entries[i].name == ops[i]);
  std::set<std::string> names;
  for (const auto& e : report.entries) CHECK(names.insert(e.name).second);
  for (const char* extra : {"selection.threshold", "selection.scores", "selection.sparsity",
                            "selection.layer", "penalty.global", "penalty.local",
                            "end_to_end.global", "end_to_end.local", "end_to_end.drop"})
    CHECK(names.count(extra) == 1);
}

TEST_CASE("a corrupted backward rule is caught") {
  for (const char* op : {"matmul", "softmax_lastdim", "layernorm", "relu", "gather_rows"}) {
    CAPTURE(op);
    debug::inject_backward_fault(op, 1.5);
    const GradcheckReport report = run_gradcheck();
    debug::clear_backward_fault();
    CHECK_FALSE(report.passed());
    const auto it = std::find_if(report.entries.begin(), report.entries.end(),
                                 [&](const auto& e) { return e.name == op; });
    REQUIRE(it != report.entries.end());
    CHECK_FALSE(it->passed);
  }
  CHECK(run_gradcheck().passed());
}

TEST_CASE("the gradient-check model actually drops tokens") {
  for (auto penalty : {PenaltyKind::global, PenaltyKind::local}) {
    const Model m = gradcheck_model(penalty, derive_seed(0, 3));
    const ForwardResult r =
        forward(m, gradcheck_image(derive_seed(derive_seed(0, 3), 5)), 0.6, ChannelSpec::ideal());
    std::size_t dropped = 0;
    for (const auto& layer : r.selection.layers)
      for (std::size_t i = 0; i < layer.kept.size(); ++i) dropped += layer.alive_in[i] && !layer.kept[i];
    CHECK(dropped > 0);
    CHECK(r.selection.layers.back().kept_count() > 0);
  }
}

TEST_CASE("relative error uses a floor on the denominator") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-6));
}

TEST_CASE("gradient checks skip probes that flip a kink") {
  Rng rng(1);
  Tensor x = Tensor::parameter({1}, {1e-6});
  GradcheckOptions o;
  const auto entry = check_gradient(
      "relu_at_kink", {x}, [x] { return sum(relu(x)); },
      [x] { return std::vector<int>{x.data()[0] > 0.0}; }, o, rng);
  CHECK(entry.skipped == 1);
  CHECK(entry.probes == 0);
  CHECK_FALSE(entry.passed);
}
