#pragma once

// Budget-penalised training objective, cost model, optimiser and the
// train/evaluate loops.
//
// Per example the objective is
//   cross_entropy(f(x, alpha), y) + lambda * (T(x) - alpha)^2
// with T(x) the mean soft sparsity over every selection layer (global
// penalty) or the soft sparsity of the last encoder layer (local penalty).
// Costs are normalised so the full model costs 1.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "semtok/channel.hpp"
#include "semtok/rng.hpp"
#include "semtok/tensor.hpp"
#include "semtok/transformer.hpp"

namespace semtok {

struct Dataset;

// --- penalties ------------------------------------------------------------

// (1 / (L_e + L_d)) * sum_k S_k. Throws ContractError unless the state holds
// exactly L_e + L_d selection layers.
Tensor cost_global(const SelectionState& state, std::size_t encoder_layers,
                   std::size_t decoder_layers);

// S_e, the sparsity of the last encoder selection layer.
Tensor cost_local(const SelectionState& state);

Tensor cost_for(const SelectionState& state, const ModelConfig& config);

struct LossTerms {
  Tensor total;
  Tensor task;
  Tensor penalty;  // lambda * (T - alpha)^2
  Tensor cost;     // T, shape {}
};

LossTerms total_loss(const Tensor& logits, std::size_t label, const Tensor& cost, double alpha,
                     double lambda);

// alpha ~ U[0,1].
double sample_budget(Rng& rng);

// --- cost model -------------------------------------------------------------

// Closed-form forward FLOPs with m the active rows (special rows included)
// entering a block; one multiply-add counts as 2.
//
//   patch embedding   2 n P d + 2 n d                     (P = C p^2)
//   selection layer   2 a d + 2 d + 10 a                  (a alive patches)
//   block             attention  2 (4 m d^2 + 2 m^2 d)
//                     MLP        2 * 2 m d (r d)
//                     other      16 m d + 6 h m^2 + 9 r m d + 5 m d
//                                (layernorms, softmax + scaling, GELU + bias,
//                                 bias adds and residuals)
//   head              8 d + 2 d C + C
struct FlopsBreakdown {
  double embed = 0.0;
  double selection = 0.0;
  double attention = 0.0;
  double mlp = 0.0;
  double norm_and_activation = 0.0;
  double head = 0.0;
  double total() const {
    return embed + selection + attention + mlp + norm_and_activation + head;
  }
};

double block_flops(std::size_t rows, const ModelConfig& config);

// `block_rows[k]` are the rows processed by block k; `selection_rows[k]` the
// rows entering selection layer k (may be empty to ignore selection cost).
FlopsBreakdown flops_breakdown(std::span<const std::size_t> block_rows,
                               std::span<const std::size_t> selection_rows,
                               const ModelConfig& config);

double flops_forward(std::span<const std::size_t> block_rows, const ModelConfig& config);
double flops_forward(const ForwardResult& result, const ModelConfig& config);

// --- optimisation -----------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::optional<double> grad_clip;  // max global L2 norm
  std::uint64_t seed = 1;
  std::string checkpoint_path;
  // Channel applied during training, reseeded per step and sample.
  ChannelSpec channel;
  // Test hooks: drop the cross-entropy term, or update only selection layers.
  bool task_loss = true;
  bool train_backbone = true;
  bool train_selection = true;

  void validate() const;
};

// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps,
       double weight_decay = 0.0);

  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

// Global L2 norm of the gradients; rescales them to `max_norm` when above it.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

struct RunMetrics {
  double alpha = 0.0;
  double task_loss = 0.0;
  double penalty = 0.0;
  double cost = 0.0;  // T(x)
  double flops = 0.0;
  std::vector<std::size_t> kept_per_layer;  // patch tokens after each selection layer
  std::vector<std::size_t> block_rows;
  std::size_t predicted = 0;
  bool correct = false;
  double encoder_kept_fraction = 1.0;
};

RunMetrics run_metrics(const ForwardResult& result, const LossTerms& loss, std::size_t label,
                       double alpha, const ModelConfig& config);

struct BatchLog {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::size_t step = 0;
  double alpha = 0.0;
  double task_loss = 0.0;
  double penalty = 0.0;
  double mean_cost = 0.0;
  double accuracy = 0.0;
};

struct TrainHooks {
  std::function<void(const BatchLog&)> on_batch;
  std::function<void(std::size_t epoch, const Model&)> on_epoch;
};

// Header comment and column line of the training metrics CSV.
std::string train_csv_header();
std::string train_csv_row(const BatchLog& log);

// Trains in place. Throws NumericError (after writing `<checkpoint>.diag.json`
// when a checkpoint path is set) if a batch loss is not finite.
void train(Model& model, const Dataset& data, const TrainConfig& config,
           const TrainHooks& hooks = {});

struct EvalMetrics {
  double alpha = 0.0;
  std::size_t samples = 0;
  double accuracy = 0.0;
  double mean_cost = 0.0;
  double mean_flops = 0.0;
  double kept_fraction = 0.0;  // patches alive after the encoder
  // histogram[k][c]: samples with c patches alive after selection layer k
  std::vector<std::vector<std::size_t>> kept_histogram;
  std::vector<double> mean_kept_per_layer;  // fraction of n

  double mean_kept_fraction_all_layers() const;
};

// Deterministic in (model, data, alpha, channel); the channel is reseeded
// per sample from channel.seed.
EvalMetrics evaluate(const Model& model, const Dataset& data, double alpha,
                     const ChannelSpec& channel, std::size_t limit = 0);

}  // namespace semtok
