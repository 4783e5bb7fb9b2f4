#include "semtok/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "semtok/budget.hpp"
#include "semtok/channel.hpp"
#include "semtok/error.hpp"
#include "semtok/selection.hpp"
#include "semtok/transformer.hpp"

namespace semtok {

bool GradcheckReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

void GradcheckReport::print(std::ostream& out) const {
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %12s %7s %7s  %s\n", "check", "max_rel_err", "probes",
                "skipped", "status");
  out << line;
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-28s %12.3e %7zu %7zu  %s", e.name.c_str(),
                  e.max_rel_error, e.probes, e.skipped, e.passed ? "ok" : "FAIL");
    out << line;
    if (!e.note.empty()) out << "  (" << e.note << ')';
    out << '\n';
  }
  std::snprintf(line, sizeof line, "tolerance %.1e: %s\n", tolerance, passed() ? "PASS" : "FAIL");
  out << line;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

GradcheckEntry check_gradient(std::string name, const std::vector<Tensor>& inputs,
                              const std::function<Tensor()>& loss,
                              const std::function<std::vector<int>()>& signature,
                              const GradcheckOptions& options, Rng& rng) {
  GradcheckEntry entry;
  entry.name = std::move(name);
  for (const auto& t : inputs)
    if (!t.is_leaf() || !t.requires_grad())
      throw ContractError("check_gradient: inputs must be trainable leaves");

  std::vector<std::vector<double>> analytic;
  for (auto t : inputs) t.zero_grad();
  {
    const Tensor l = loss();
    if (l.numel() != 1) throw ContractError("check_gradient: loss must be a scalar");
    l.backward();
  }
  for (const auto& t : inputs) {
    const auto g = t.grad();
    analytic.emplace_back(g.empty() ? std::vector<double>(t.numel(), 0.0)
                                    : std::vector<double>(g.begin(), g.end()));
  }

  NoGradGuard no_grad;
  const auto base_sig = signature ? signature() : std::vector<int>{};
  auto evaluate = [&](std::vector<int>& sig) {
    const double v = loss().item();
    if (signature) sig = signature();
    return v;
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    const std::size_t n = t.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > options.probes_per_tensor) {
      for (std::size_t i = 0; i < options.probes_per_tensor; ++i)
        std::swap(coords[i], coords[i + rng.below(n - i)]);
      coords.resize(options.probes_per_tensor);
    }
    for (std::size_t c : coords) {
      auto w = t.mutable_data();
      const double x0 = w[c];
      std::vector<int> sig_plus, sig_minus;
      w[c] = x0 + options.step;
      const double f_plus = evaluate(sig_plus);
      w[c] = x0 - options.step;
      const double f_minus = evaluate(sig_minus);
      w[c] = x0;
      if (signature && (sig_plus != base_sig || sig_minus != base_sig)) {
        ++entry.skipped;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * options.step);
      const double err = relative_error(analytic[k][c], numeric);
      if (!(err <= entry.max_rel_error)) entry.max_rel_error = std::isnan(err) ? INFINITY : err;
      ++entry.probes;
    }
  }
  entry.passed = entry.probes > 0 && entry.max_rel_error <= options.tolerance;
  if (entry.probes == 0) entry.note = "no comparable probe";
  return entry;
}

namespace {

struct Case {
  std::vector<Tensor> inputs;
  std::function<Tensor()> loss;
  std::function<std::vector<int>()> signature;
};

class CaseFactory {
 public:
  explicit CaseFactory(Rng& rng) : rng_(rng) {}

  // Trainable leaf with entries in [lo, hi].
  Tensor input(Shape shape, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng_.uniform(lo, hi);
    return Tensor::parameter(std::move(shape), std::move(v));
  }

  // Bounded away from zero so relu-like kinks are not straddled.
  Tensor input_off_zero(Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = (rng_.uniform() < 0.5 ? -1.0 : 1.0) * rng_.uniform(0.2, 2.0);
    return Tensor::parameter(std::move(shape), std::move(v));
  }

  // sum(w * y) with a fixed random weight tensor, so every output element
  // carries a distinct upstream gradient.
  std::function<Tensor()> weighted(std::function<Tensor()> f) {
    auto w = std::make_shared<Tensor>();
    auto seed = rng_.next_u64();
    return [f = std::move(f), w, seed]() {
      Tensor y = f();
      if (!w->defined()) {
        Rng r(seed);
        std::vector<double> v(y.numel());
        for (double& x : v) x = r.uniform(-1.0, 1.0);
        *w = Tensor::from_data(y.shape(), std::move(v));
      }
      return sum(mul(y, *w));
    };
  }

 private:
  Rng& rng_;
};

std::map<std::string, Case> op_cases(Rng& rng) {
  CaseFactory f(rng);
  std::map<std::string, Case> cases;
  auto unary = [&](const std::string& name, Tensor (*op)(const Tensor&), bool off_zero) {
    Tensor a = off_zero ? f.input_off_zero({3, 4}) : f.input({3, 4});
    cases[name] = {{a}, f.weighted([a, op] { return op(a); }), nullptr};
  };

  {
    Tensor a = f.input({3, 4}), b = f.input({4, 5});
    cases["matmul"] = {{a, b}, f.weighted([a, b] { return matmul(a, b); }), nullptr};
  }
  {
    Tensor a = f.input({3, 4}), b = f.input({5, 4});
    cases["matmul_nt"] = {{a, b}, f.weighted([a, b] { return matmul_nt(a, b); }), nullptr};
  }
  {
    Tensor a = f.input({3, 4}), b = f.input({3, 4});
    cases["add"] = {{a, b}, f.weighted([a, b] { return add(a, b); }), nullptr};
    cases["sub"] = {{a, b}, f.weighted([a, b] { return sub(a, b); }), nullptr};
    cases["mul"] = {{a, b}, f.weighted([a, b] { return mul(a, b); }), nullptr};
  }
  {
    Tensor a = f.input({3, 4}), r = f.input({4}), c = f.input({3, 1});
    cases["add_row"] = {{a, r}, f.weighted([a, r] { return add_row(a, r); }), nullptr};
    cases["mul_rows"] = {{a, c}, f.weighted([a, c] { return mul_rows(a, c); }), nullptr};
  }
  {
    Tensor a = f.input({3, 4});
    cases["scale"] = {{a}, f.weighted([a] { return scale(a, -1.7); }), nullptr};
    cases["add_scalar"] = {{a}, f.weighted([a] { return add_scalar(a, 0.3); }), nullptr};
    cases["sum"] = {{a}, f.weighted([a] { return sum(a); }), nullptr};
    cases["mean"] = {{a}, f.weighted([a] { return mean(a); }), nullptr};
    cases["transpose"] = {{a}, f.weighted([a] { return transpose(a); }), nullptr};
    cases["reshape"] = {{a}, f.weighted([a] { return reshape(a, {2, 6}); }), nullptr};
    cases["slice_rows"] = {{a}, f.weighted([a] { return slice_rows(a, 1, 3); }), nullptr};
    cases["slice_cols"] = {{a}, f.weighted([a] { return slice_cols(a, 1, 3); }), nullptr};
    const std::vector<std::size_t> rows{2, 0, 2};
    cases["gather_rows"] = {{a}, f.weighted([a, rows] { return gather_rows(a, rows); }), nullptr};
    cases["embedding_lookup"] = {
        {a}, f.weighted([a, rows] { return embedding_lookup(a, rows); }), nullptr};
  }
  unary("sigmoid", sigmoid, false);
  unary("gelu", gelu, false);
  {
    Tensor a = f.input_off_zero({3, 4});
    cases["relu"] = {{a}, f.weighted([a] { return relu(a); }), [a] {
                       std::vector<int> s;
                       for (double x : a.data()) s.push_back(x > 0.0);
                       return s;
                     }};
  }
  {
    Tensor a = f.input({3, 5});
    const std::vector<bool> keep{true, false, true, true, false};
    cases["softmax_lastdim"] = {
        {a}, f.weighted([a, keep] { return softmax_lastdim(a, keep); }), nullptr};
  }
  {
    Tensor a = f.input({3, 5}), g = f.input({5}), b = f.input({5});
    cases["layernorm"] = {{a, g, b}, f.weighted([a, g, b] { return layernorm(a, g, b, 1e-6); }),
                          nullptr};
  }
  {
    Tensor z = f.input({5});
    cases["cross_entropy"] = {{z}, f.weighted([z] { return cross_entropy(z, 2); }), nullptr};
  }
  {
    Tensor a = f.input({2, 3}), b = f.input({1, 3}), c = f.input({2, 2});
    cases["concat_rows"] = {{a, b}, f.weighted([a, b] { return concat_rows({a, b}); }), nullptr};
    cases["concat_cols"] = {{a, c}, f.weighted([a, c] { return concat_cols({a, c}); }), nullptr};
  }
  return cases;
}

}  // namespace

Model gradcheck_model(PenaltyKind penalty, std::uint64_t seed) {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.dim = 8;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.num_classes = 3;
  c.penalty = penalty;
  Model m(c, seed);
  Rng rng(derive_seed(seed, 77));
  auto reset = [&](const std::vector<SelectionLayerParams>& layers) {
    for (SelectionLayerParams p : layers) {
      for (double& v : p.gate_weight.mutable_data()) v = rng.normal() * 0.5;
      p.gate_bias.mutable_data()[0] = 0.0;
      p.thresh_bias.mutable_data()[0] = 0.0;
    }
  };
  reset(m.encoder_selection());
  reset(m.decoder_selection());
  return m;
}

Tensor gradcheck_image(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(16 * 16);
  for (double& x : v) x = rng.uniform();
  return Tensor::from_data({1, 16, 16}, std::move(v));
}

namespace {

std::vector<int> kept_signature(const ForwardResult& r) {
  std::vector<int> s;
  for (const auto& layer : r.selection.layers)
    for (bool k : layer.kept) s.push_back(k);
  for (bool k : r.selection.received) s.push_back(k);
  return s;
}

struct ModelCase {
  std::shared_ptr<Model> model;
  Case c;
};

ModelCase model_case(PenaltyKind penalty, ChannelSpec channel, ForwardOptions options,
                     bool cost_only, std::uint64_t seed) {
  auto model = std::make_shared<Model>(gradcheck_model(penalty, seed));
  const Tensor image = gradcheck_image(derive_seed(seed, 5));
  const double alpha = 0.6;
  const std::size_t label = 1;
  ModelCase mc;
  mc.model = model;
  for (const auto& p : model->parameters()) mc.c.inputs.push_back(p.tensor);
  mc.c.loss = [=] {
    const ForwardResult r = forward(*model, image, alpha, channel, options);
    const Tensor cost = cost_for(r.selection, model->config());
    if (cost_only) return cost;
    return total_loss(r.logits, label, cost, alpha, model->config().lambda).total;
  };
  mc.c.signature = [=] { return kept_signature(forward(*model, image, alpha, channel, options)); };
  return mc;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  GradcheckReport report;
  report.tolerance = options.tolerance;
  Rng rng(options.seed);

  auto cases = op_cases(rng);
  for (std::string_view op : differentiable_ops()) {
    auto it = cases.find(std::string(op));
    if (it == cases.end()) {
      GradcheckEntry e;
      e.name = std::string(op);
      e.note = "no check registered";
      report.entries.push_back(e);
      continue;
    }
    Rng probe_rng = rng.split(report.entries.size());
    report.entries.push_back(check_gradient(std::string(op), it->second.inputs, it->second.loss,
                                            it->second.signature, options, probe_rng));
  }

  CaseFactory f(rng);
  const std::size_t d = 6;
  auto run = [&](const std::string& name, const Case& c) {
    Rng probe_rng = rng.split(1000 + report.entries.size());
    report.entries.push_back(check_gradient(name, c.inputs, c.loss, c.signature, options, probe_rng));
  };
  auto selection_params = [&] {
    SelectionLayerParams p;
    p.gate_weight = f.input({d}, -0.5, 0.5);
    p.gate_bias = f.input({1}, -0.2, 0.2);
    p.thresh_weight = f.input({d}, -0.5, 0.5);
    p.thresh_bias = f.input({1}, -0.2, 0.2);
    return p;
  };
  {
    const SelectionLayerParams p = selection_params();
    const Tensor t = f.input({1, d});
    run("selection.threshold",
        {{t, p.thresh_weight, p.thresh_bias}, f.weighted([=] { return compute_threshold(t, p); }),
         nullptr});
  }
  {
    const SelectionLayerParams p = selection_params();
    const Tensor x = f.input({5, d});
    run("selection.scores",
        {{x, p.gate_weight, p.gate_bias},
         f.weighted([=] { return compute_scores(x, p, 5.0, 0.0); }), nullptr});
  }
  {
    const Tensor s = f.input({6, 1}, 0.05, 0.95);
    const Tensor g = f.input({}, 0.3, 0.7);
    run("selection.sparsity", {{s, g}, [=] { return layer_sparsity(s, g, 9); }, [=] {
                                 const auto k = keep_decisions(s.data(), g.item());
                                 return std::vector<int>(k.begin(), k.end());
                               }});
  }
  {
    const SelectionLayerParams p = selection_params();
    const Tensor x = f.input({kSpecialRows + 5, d});
    auto make_seq = [x] {
      TokenSequence seq;
      seq.tokens = x;
      seq.positions = {0, 1, 2, 4, 6};
      seq.alive = {true, true, true, false, true, false, true};
      return seq;
    };
    auto step = [=] { return select_tokens(make_seq(), p, 5.0, 0.0, true); };
    run("selection.layer",
        {{x, p.gate_weight, p.gate_bias, p.thresh_weight, p.thresh_bias},
         f.weighted([=] {
           const SelectionStep s = step();
           return concat_rows({reshape(s.sequence.tokens, {s.sequence.tokens.numel(), 1}),
                               reshape(s.record.sparsity, {1, 1})});
         }),
         [=] {
           const auto kept = step().record.kept;
           return std::vector<int>(kept.begin(), kept.end());
         }});
  }

  const std::uint64_t ms = derive_seed(options.seed, 3);
  auto run_model = [&](const std::string& name, PenaltyKind penalty, ChannelSpec channel,
                       ForwardOptions fo, bool cost_only) {
    const ModelCase mc = model_case(penalty, channel, fo, cost_only, ms);
    run(name, mc.c);
  };
  run_model("penalty.global", PenaltyKind::global, ChannelSpec::ideal(), {}, true);
  run_model("penalty.local", PenaltyKind::local, ChannelSpec::ideal(), {}, true);
  run_model("end_to_end.global", PenaltyKind::global, ChannelSpec::ideal(), {}, false);
  run_model("end_to_end.local", PenaltyKind::local, ChannelSpec::ideal(), {}, false);
  run_model("end_to_end.masked", PenaltyKind::global, ChannelSpec::ideal(), {true, false}, false);
  run_model("end_to_end.drop", PenaltyKind::global, ChannelSpec::drop(0.3, 11), {}, false);
  {
    // Fixed-sigma noise does not depend on the transmitted values, so the
    // finite difference sees the same noise realisation on both sides.
    ChannelSpec awgn = ChannelSpec::awgn(10.0, 13);
    awgn.noise_mode = NoiseMode::fixed_sigma;
    run_model("end_to_end.awgn", PenaltyKind::global, awgn, {}, false);
  }
  return report;
}

}  // namespace semtok
