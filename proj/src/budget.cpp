#include "semtok/budget.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semtok/checkpoint.hpp"
#include "semtok/data.hpp"
#include "semtok/error.hpp"

namespace semtok {

// --- penalties ---------------------------------------------------------------

Tensor cost_global(const SelectionState& state, std::size_t encoder_layers,
                   std::size_t decoder_layers) {
  const std::size_t expected = encoder_layers + decoder_layers;
  if (state.layers.size() != expected)
    throw ContractError("cost_global: expected " + std::to_string(expected) +
                        " selection layers, state holds " + std::to_string(state.layers.size()));
  std::vector<Tensor> parts;
  parts.reserve(expected);
  for (const auto& layer : state.layers) parts.push_back(reshape(layer.sparsity, {1, 1}));
  return scale(sum(concat_rows(parts)), 1.0 / static_cast<double>(expected));
}

Tensor cost_local(const SelectionState& state) {
  if (!state.encoder_output || *state.encoder_output >= state.layers.size())
    throw ContractError("cost_local: encoder output sparsity was not recorded");
  return state.layers[*state.encoder_output].sparsity;
}

Tensor cost_for(const SelectionState& state, const ModelConfig& config) {
  return config.penalty == PenaltyKind::global
             ? cost_global(state, config.encoder_layers, config.decoder_layers)
             : cost_local(state);
}

LossTerms total_loss(const Tensor& logits, std::size_t label, const Tensor& cost, double alpha,
                     double lambda) {
  LossTerms out;
  out.cost = reshape(cost, {});
  out.task = cross_entropy(logits, label);
  const Tensor gap = add_scalar(reshape(cost, {}), -alpha);
  out.penalty = scale(mul(gap, gap), lambda);
  out.total = add(out.task, out.penalty);
  return out;
}

double sample_budget(Rng& rng) { return rng.uniform(); }

// --- cost model --------------------------------------------------------------

double block_flops(std::size_t rows, const ModelConfig& config) {
  const double m = static_cast<double>(rows), d = static_cast<double>(config.dim);
  const double r = static_cast<double>(config.mlp_ratio), h = static_cast<double>(config.heads);
  const double attention = 2.0 * (4.0 * m * d * d + 2.0 * m * m * d);
  const double mlp = 2.0 * 2.0 * m * d * (r * d);
  const double other = 16.0 * m * d + 6.0 * h * m * m + 9.0 * r * m * d + 5.0 * m * d;
  return attention + mlp + other;
}

FlopsBreakdown flops_breakdown(std::span<const std::size_t> block_rows,
                               std::span<const std::size_t> selection_rows,
                               const ModelConfig& config) {
  const double d = static_cast<double>(config.dim), r = static_cast<double>(config.mlp_ratio);
  const double h = static_cast<double>(config.heads);
  const double n = static_cast<double>(config.num_patches());
  const double pd = static_cast<double>(config.patch_dim());
  const double classes = static_cast<double>(config.num_classes);
  FlopsBreakdown out;
  out.embed = 2.0 * n * pd * d + 2.0 * n * d;
  for (std::size_t rows : selection_rows) {
    const double a = static_cast<double>(rows) - static_cast<double>(kSpecialRows);
    out.selection += 2.0 * a * d + 2.0 * d + 10.0 * a;
  }
  for (std::size_t rows : block_rows) {
    const double m = static_cast<double>(rows);
    out.attention += 2.0 * (4.0 * m * d * d + 2.0 * m * m * d);
    out.mlp += 2.0 * 2.0 * m * d * (r * d);
    out.norm_and_activation += 16.0 * m * d + 6.0 * h * m * m + 9.0 * r * m * d + 5.0 * m * d;
  }
  out.head = 8.0 * d + 2.0 * d * classes + classes;
  return out;
}

double flops_forward(std::span<const std::size_t> block_rows, const ModelConfig& config) {
  // Without the pre-selection counts, charge each selection layer at the
  // size of the block it feeds.
  std::vector<std::size_t> sel;
  for (std::size_t k = 0; k < block_rows.size(); ++k) {
    const bool has_selection = k < config.encoder_layers || config.decoder_selection();
    if (has_selection) sel.push_back(block_rows[k]);
  }
  return flops_breakdown(block_rows, sel, config).total();
}

double flops_forward(const ForwardResult& result, const ModelConfig& config) {
  return flops_breakdown(result.block_rows, result.selection_rows, config).total();
}

// --- optimisation --------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
  channel.validate();
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps,
           double weight_decay)
    : params_(std::move(params)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto g = params_[k].grad();
    if (g.empty()) continue;
    auto w = params_[k].mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
    }
  }
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto p : params)
      if (!p.grad().empty())
        for (double& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

RunMetrics run_metrics(const ForwardResult& result, const LossTerms& loss, std::size_t label,
                       double alpha, const ModelConfig& config) {
  RunMetrics m;
  m.alpha = alpha;
  m.task_loss = loss.task.item();
  m.penalty = loss.penalty.item();
  m.cost = loss.cost.item();
  const auto logits = result.logits.data();
  m.predicted = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  m.correct = m.predicted == label;
  for (const auto& layer : result.selection.layers) m.kept_per_layer.push_back(layer.kept_count());
  m.block_rows = result.block_rows;
  m.flops = flops_forward(result, config);
  m.encoder_kept_fraction = result.selection.encoder_kept_fraction();
  return m;
}

std::string train_csv_header() {
  return "# semtok-train-metrics v1\n"
         "epoch,batch,step,alpha,task_loss,penalty,mean_cost,accuracy\n";
}

std::string train_csv_row(const BatchLog& log) {
  std::ostringstream os;
  os << std::setprecision(17) << log.epoch << ',' << log.batch << ',' << log.step << ','
     << log.alpha << ',' << log.task_loss << ',' << log.penalty << ',' << log.mean_cost << ','
     << log.accuracy << '\n';
  return os.str();
}

namespace {

void write_diagnostic(const std::string& path, const BatchLog& log,
                      const std::vector<std::size_t>& indices, const std::vector<std::size_t>& labels,
                      const std::vector<double>& losses) {
  nlohmann::json j;
  j["epoch"] = log.epoch;
  j["batch"] = log.batch;
  j["step"] = log.step;
  j["alpha"] = log.alpha;
  j["sample_indices"] = indices;
  j["labels"] = labels;
  nlohmann::json l = nlohmann::json::array();
  for (double v : losses) {
    if (std::isfinite(v)) l.push_back(v);
    else l.push_back(std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf"));
  }
  j["losses"] = l;
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

}  // namespace

void train(Model& model, const Dataset& data, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const auto& cfg = model.config();
  if (data.size() == 0) throw ContractError("train: empty dataset");
  if (data.image_size != cfg.image_size || data.channels != cfg.channels)
    throw ConsistencyError("train: dataset images do not match the model input size");

  std::vector<Tensor> trainable;
  for (const auto& p : model.parameters()) {
    const bool sel = model.is_selection_parameter(p.name);
    if ((sel && config.train_selection) || (!sel && config.train_backbone)) trainable.push_back(p.tensor);
  }
  Adam opt(trainable, config.learning_rate, config.beta1, config.beta2, config.adam_eps,
           config.weight_decay);

  const Rng root(config.seed);
  Rng budget_rng = root.split(1);
  Rng shuffle_rng = root.split(2);
  const std::uint64_t channel_base = derive_seed(config.seed, config.channel.seed);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batches = (data.size() + config.batch_size - 1) / config.batch_size;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - begin);
      BatchLog log;
      log.epoch = epoch;
      log.batch = b;
      log.step = step;
      log.alpha = sample_budget(budget_rng);
      model.zero_grad();
      std::vector<std::size_t> indices, labels;
      std::vector<double> losses;
      std::size_t correct = 0;
      for (std::size_t j = begin; j < end; ++j) {
        const std::size_t idx = order[j];
        const ChannelSpec ch =
            config.channel.with_seed(train_channel_seed(channel_base, step, j - begin));
        const ForwardResult res = forward(model, data.image(idx), log.alpha, ch);
        const Tensor cost = cost_for(res.selection, cfg);
        const LossTerms loss = total_loss(res.logits, data.labels[idx], cost, log.alpha, cfg.lambda);
        const Tensor objective = config.task_loss ? loss.total : loss.penalty;
        indices.push_back(idx);
        labels.push_back(data.labels[idx]);
        losses.push_back(objective.item());
        log.task_loss += loss.task.item() * inv;
        log.penalty += loss.penalty.item() * inv;
        log.mean_cost += cost.item() * inv;
        const auto z = res.logits.data();
        correct += static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) ==
                   data.labels[idx];
        if (std::isfinite(objective.item())) scale(objective, inv).backward();
      }
      log.accuracy = static_cast<double>(correct) * inv;
      for (double v : losses)
        if (!std::isfinite(v)) {
          if (!config.checkpoint_path.empty())
            write_diagnostic(config.checkpoint_path + ".diag.json", log, indices, labels, losses);
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b) + " (alpha " + std::to_string(log.alpha) + ")");
        }
      if (config.grad_clip) clip_grad_norm(trainable, *config.grad_clip);
      opt.step();
      if (hooks.on_batch) hooks.on_batch(log);
    }
    if (!config.checkpoint_path.empty()) save_checkpoint(model, config.checkpoint_path);
    if (hooks.on_epoch) hooks.on_epoch(epoch, model);
  }
}

double EvalMetrics::mean_kept_fraction_all_layers() const {
  if (mean_kept_per_layer.empty()) return 1.0;
  double s = 0.0;
  for (double v : mean_kept_per_layer) s += v;
  return s / static_cast<double>(mean_kept_per_layer.size());
}

EvalMetrics evaluate(const Model& model, const Dataset& data, double alpha,
                     const ChannelSpec& channel, std::size_t limit) {
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const std::size_t count = limit ? std::min(limit, data.size()) : data.size();
  const std::size_t n = cfg.num_patches();
  EvalMetrics out;
  out.alpha = alpha;
  out.samples = count;
  out.kept_histogram.assign(cfg.selection_layers(), std::vector<std::size_t>(n + 1, 0));
  out.mean_kept_per_layer.assign(cfg.selection_layers(), 0.0);
  if (count == 0) return out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const ChannelSpec ch = channel.with_seed(eval_channel_seed(channel.seed, i));
    const ForwardResult res = forward(model, data.image(i), alpha, ch);
    const auto z = res.logits.data();
    correct += static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) ==
               data.labels[i];
    out.mean_cost += cost_for(res.selection, cfg).item();
    out.mean_flops += flops_forward(res, cfg);
    out.kept_fraction += res.selection.encoder_kept_fraction();
    for (std::size_t k = 0; k < res.selection.layers.size(); ++k) {
      const std::size_t kept = res.selection.layers[k].kept_count();
      ++out.kept_histogram[k][kept];
      out.mean_kept_per_layer[k] += static_cast<double>(kept) / static_cast<double>(n);
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  out.accuracy = static_cast<double>(correct) * inv;
  out.mean_cost *= inv;
  out.mean_flops *= inv;
  out.kept_fraction *= inv;
  for (double& v : out.mean_kept_per_layer) v *= inv;
  return out;
}

}  // namespace semtok
