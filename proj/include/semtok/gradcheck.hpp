#pragma once

// Finite-difference gradient checks: every registered op, the selection
// pieces, both penalties and the full model loss.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "semtok/rng.hpp"
#include "semtok/tensor.hpp"
#include "semtok/transformer.hpp"

namespace semtok {

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;           // central difference half-width
  std::uint64_t seed = 0;
  std::size_t probes_per_tensor = 6;  // tensors with more elements are sampled
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  // Probes whose perturbation changed a discrete decision (kept mask, relu
  // sign) and were therefore not compared.
  std::size_t skipped = 0;
  bool passed = false;
  std::string note;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<GradcheckEntry> entries;

  bool passed() const;
  void print(std::ostream& out) const;
};

// |a - n| / max(|a|, |n|, 1e-3).
double relative_error(double analytic, double numeric);

// Checks d loss / d inputs at the current values. `inputs` must be leaf
// tensors with requires_grad. `signature` (optional) summarises discrete
// branch decisions; probes where it changes are skipped.
GradcheckEntry check_gradient(std::string name, const std::vector<Tensor>& inputs,
                              const std::function<Tensor()>& loss,
                              const std::function<std::vector<int>()>& signature,
                              const GradcheckOptions& options, Rng& rng);

// 16x16 single-channel model (patch 4, d 8, one encoder and one decoder
// layer) whose thresholds sit near 0.5 so tokens are dropped.
Model gradcheck_model(PenaltyKind penalty, std::uint64_t seed);
// Uniform [0,1] image matching gradcheck_model.
Tensor gradcheck_image(std::uint64_t seed);

// Op entries appear in differentiable_ops() order, each exactly once,
// followed by the selection, penalty and end-to-end entries.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace semtok
