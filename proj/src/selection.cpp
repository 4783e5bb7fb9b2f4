#include "semtok/selection.hpp"

#include <cmath>
#include <limits>

#include "semtok/error.hpp"

namespace semtok {

std::size_t SelectionRecord::kept_count() const {
  std::size_t n = 0;
  for (bool k : kept) n += k;
  return n;
}

double SelectionState::encoder_kept_fraction() const {
  if (!encoder_output || num_patches == 0) return 1.0;
  return static_cast<double>(layers[*encoder_output].kept_count()) /
         static_cast<double>(num_patches);
}

Tensor compute_threshold(const Tensor& budget_repr, const SelectionLayerParams& params) {
  const std::size_t d = budget_repr.numel();
  if (params.thresh_weight.numel() != d)
    throw DimensionError("threshold selector expects width " +
                         std::to_string(params.thresh_weight.numel()) + ", got " +
                         std::to_string(d));
  const Tensor logit = add_row(matmul(reshape(budget_repr, {1, d}), reshape(params.thresh_weight, {d, 1})),
                               params.thresh_bias);
  return reshape(sigmoid(logit), {});
}

Tensor compute_gates(const Tensor& tokens, const SelectionLayerParams& params) {
  const std::size_t d = tokens.cols();
  if (params.gate_weight.numel() != d)
    throw DimensionError("token gate expects width " + std::to_string(params.gate_weight.numel()) +
                         ", got " + std::to_string(d));
  return add_row(matmul(tokens, reshape(params.gate_weight, {d, 1})), params.gate_bias);
}

Tensor compute_scores(const Tensor& tokens, const SelectionLayerParams& params, double slope,
                      double bias) {
  return sigmoid(add_scalar(scale(compute_gates(tokens, params), slope), bias));
}

std::vector<bool> keep_decisions(std::span<const double> scores, double threshold) {
  std::vector<bool> keep(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) keep[i] = !(scores[i] < threshold);
  return keep;
}

Tensor layer_sparsity(const Tensor& scores, const Tensor& threshold, std::size_t n) {
  if (n == 0) throw ContractError("layer_sparsity: original token count is zero");
  if (threshold.numel() != 1) throw DimensionError("layer_sparsity: threshold must be a scalar");
  const std::size_t m = scores.numel();
  const Tensor margin = add_row(reshape(scores, {m, 1}), reshape(scale(threshold, -1.0), {1}));
  return scale(sum(relu(margin)), 1.0 / static_cast<double>(n));
}

TokenSequence apply_selection(const TokenSequence& seq, const Tensor& threshold,
                              const Tensor& scores, bool score_scaling) {
  if (scores.numel() != seq.active())
    throw DimensionError("apply_selection: " + std::to_string(scores.numel()) + " scores for " +
                         std::to_string(seq.active()) + " active tokens");
  const auto keep = keep_decisions(scores.data(), threshold.item());
  TokenSequence out;
  out.alive = seq.alive;
  std::vector<std::size_t> kept_rows;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) {
      kept_rows.push_back(i);
      out.positions.push_back(seq.positions[i]);
    } else {
      out.alive[seq.positions[i]] = false;
    }
  }
  const Tensor specials = slice_rows(seq.tokens, 0, kSpecialRows);
  if (kept_rows.empty()) {
    out.tokens = specials;
    return out;
  }
  const Tensor patches = slice_rows(seq.tokens, kSpecialRows, seq.rows());
  Tensor kept = gather_rows(patches, kept_rows);
  if (score_scaling) kept = mul_rows(kept, gather_rows(scores, kept_rows));
  out.tokens = concat_rows({specials, kept});
  return out;
}

SelectionStep select_tokens(const TokenSequence& seq, const SelectionLayerParams& params,
                            double slope, double bias, bool score_scaling) {
  const std::size_t n = seq.num_patches();
  const Tensor threshold = compute_threshold(slice_rows(seq.tokens, kBudgetRow, kBudgetRow + 1), params);
  const Tensor patches = slice_rows(seq.tokens, kSpecialRows, seq.rows());
  const Tensor scores = compute_scores(patches, params, slope, bias);

  SelectionStep step;
  step.record.threshold = threshold.item();
  step.record.alive_in = seq.alive;
  step.record.scores.assign(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < seq.active(); ++i) step.record.scores[seq.positions[i]] = scores.at(i);
  step.record.sparsity = layer_sparsity(scores, threshold, n);
  step.sequence = apply_selection(seq, threshold, scores, score_scaling);
  step.record.kept = step.sequence.alive;
  return step;
}

}  // namespace semtok
