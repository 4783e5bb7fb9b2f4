#pragma once

// Budget-conditioned token selection.
//
// At each selection layer the budget token is mapped to a threshold
// gamma = sigmoid(w_t . t + b_t), every alive patch token to a halting score
// s_i = sigmoid(slope * (w_g . x_i + b_g) + bias), and tokens with
// s_i < gamma are removed for the rest of the forward pass. The soft
// sparsity S = (1/n) sum_i max(s_i - gamma, 0), with n the original patch
// count, carries the gradient for the cost penalty.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "semtok/tensor.hpp"
#include "semtok/tokens.hpp"

namespace semtok {

struct SelectionLayerParams {
  Tensor gate_weight;    // [d]
  Tensor gate_bias;      // [1]
  Tensor thresh_weight;  // [d]
  Tensor thresh_bias;    // [1]
};

// What one selection layer decided for one sample.
struct SelectionRecord {
  std::size_t layer = 0;  // index over all selection layers, encoder first
  bool decoder = false;
  double threshold = 0.0;
  std::vector<double> scores;  // per original patch, NaN where dead on entry
  std::vector<bool> alive_in;  // per original patch
  std::vector<bool> kept;      // per original patch, alive after this layer
  Tensor sparsity;             // differentiable scalar S_k

  std::size_t kept_count() const;
};

struct SelectionState {
  std::size_t num_patches = 0;
  std::vector<SelectionRecord> layers;
  // Index into `layers` of the last encoder selection layer.
  std::optional<std::size_t> encoder_output;
  std::vector<bool> transmitted;  // patches sent over the channel
  std::vector<bool> received;     // patches surviving the channel

  // Patches alive after the encoder, as a fraction of the original count.
  double encoder_kept_fraction() const;
};

// gamma in (0,1) from the current budget-token representation [d] or [1 x d].
Tensor compute_threshold(const Tensor& budget_repr, const SelectionLayerParams& params);

// Raw gate g = X w_g + b_g for rows X [m x d]; returns [m x 1].
Tensor compute_gates(const Tensor& tokens, const SelectionLayerParams& params);

// s = sigmoid(slope * g + bias) for rows X [m x d]; returns [m x 1].
Tensor compute_scores(const Tensor& tokens, const SelectionLayerParams& params, double slope,
                      double bias);

// Keep iff s_i >= gamma (ties keep).
std::vector<bool> keep_decisions(std::span<const double> scores, double threshold);

// S = (sum over listed tokens of max(s_i - gamma, 0), accumulated in index
// order) * (1/n). `scores` holds the alive tokens only; `threshold` is a
// scalar tensor. Throws ContractError when n == 0.
Tensor layer_sparsity(const Tensor& scores, const Tensor& threshold, std::size_t n);

// Drops rows whose score falls below the threshold and, when
// `score_scaling`, multiplies survivors by their score. Special rows are
// kept unscaled. `scores` is [active x 1] aligned with the patch rows.
TokenSequence apply_selection(const TokenSequence& seq, const Tensor& threshold,
                              const Tensor& scores, bool score_scaling);

struct SelectionStep {
  TokenSequence sequence;
  SelectionRecord record;
};

// Full selection layer on a compact sequence: threshold, scores, drop,
// sparsity bookkeeping.
SelectionStep select_tokens(const TokenSequence& seq, const SelectionLayerParams& params,
                            double slope, double bias, bool score_scaling);

}  // namespace semtok
