#pragma once

// Vision transformer split into an encoder and a decoder around the channel.
//
//   image -> patch tokens (+ class token, + alpha * budget token)
//         -> [selection; block] x encoder_layers
//         -> channel (class + surviving patch rows; budget row is local)
//         -> [selection; block] x decoder_layers   (selection: global penalty only)
//         -> layernorm(class row) -> linear head

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "semtok/channel.hpp"
#include "semtok/selection.hpp"
#include "semtok/tensor.hpp"
#include "semtok/tokens.hpp"

namespace semtok {

enum class PenaltyKind { global, local };

std::string_view to_string(PenaltyKind kind);
PenaltyKind parse_penalty_kind(std::string_view text);

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 3;
  std::size_t num_classes = 4;
  double score_slope = 5.0;  // delta
  double score_bias = 0.0;   // beta
  PenaltyKind penalty = PenaltyKind::global;
  double lambda = 1.0;
  double layernorm_eps = 1e-6;
  bool score_scaling = true;

  void validate() const;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t hidden_dim() const { return dim * mlp_ratio; }
  bool decoder_selection() const { return penalty == PenaltyKind::global; }
  std::size_t selection_layers() const {
    return encoder_layers + (decoder_selection() ? decoder_layers : 0);
  }
  std::size_t total_blocks() const { return encoder_layers + decoder_layers; }

  bool operator==(const ModelConfig&) const = default;
};

struct BlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor qkv_weight, qkv_bias;  // [d x 3d], [3d]
  Tensor out_weight, out_bias;  // [d x d], [d]
  Tensor ln2_gain, ln2_bias;
  Tensor fc1_weight, fc1_bias;  // [d x hidden], [hidden]
  Tensor fc2_weight, fc2_bias;  // [hidden x d], [d]
};

struct EmbedParams {
  Tensor patch_weight;  // [patch_dim x d]
  Tensor patch_bias;    // [d]
  Tensor position;      // [n x d]
  Tensor class_token;   // [d]
  Tensor budget_token;  // [d]
};

struct HeadParams {
  Tensor norm_gain, norm_bias;
  Tensor weight;  // [d x classes]
  Tensor bias;    // [classes]
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  // Randomly initialised with selection gates biased open.
  explicit Model(ModelConfig config, std::uint64_t seed = 0);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // Independent deep copy.
  Model clone() const;

  const ModelConfig& config() const { return config_; }
  const EmbedParams& embed() const { return embed_; }
  const std::vector<BlockParams>& encoder() const { return encoder_; }
  const std::vector<BlockParams>& decoder() const { return decoder_; }
  const std::vector<SelectionLayerParams>& encoder_selection() const { return encoder_select_; }
  const std::vector<SelectionLayerParams>& decoder_selection() const { return decoder_select_; }
  const HeadParams& head() const { return head_; }

  // Every trainable tensor in a fixed order; names are unique.
  const std::vector<NamedTensor>& parameters() const { return named_; }
  // Handle to a named parameter (shares storage). Throws ContractError.
  Tensor parameter(std::string_view name) const;
  bool is_selection_parameter(std::string_view name) const;

  std::size_t parameter_count() const;
  void zero_grad();

 private:
  void build(std::uint64_t seed);

  ModelConfig config_;
  EmbedParams embed_;
  std::vector<SelectionLayerParams> encoder_select_, decoder_select_;
  std::vector<BlockParams> encoder_, decoder_;
  HeadParams head_;
  std::vector<NamedTensor> named_;
};

// Linear projection of the flattened non-overlapping patches plus learned
// positions. `image` is [C x H x W] (any shape with that element count).
// Returns [n x d].
Tensor patch_embed(const Tensor& image, const EmbedParams& params, const ModelConfig& config);

// alpha * budget_embedding; alpha outside [0,1] throws ContractError.
Tensor make_budget_token(double alpha, const Tensor& budget_embedding);

// Class token, budget token and every patch token, all alive.
TokenSequence embed_sequence(const Tensor& image, double alpha, const Model& model);

// Pre-norm block. `alive` (empty = all rows alive) marks the rows that take
// part: other rows are masked out as attention keys and copied through
// unchanged.
Tensor transformer_block(const Tensor& x, const BlockParams& params, const ModelConfig& config,
                         const std::vector<bool>& alive = {});

TokenSequence transformer_block(const TokenSequence& seq, const BlockParams& params,
                                const ModelConfig& config);

// Head on the layernormed class row; returns [classes].
Tensor classify(const Tensor& tokens, const HeadParams& params, const ModelConfig& config);

struct ForwardOptions {
  // Keep the full (n + 2)-row buffer and mask dead rows instead of
  // physically removing them. Slower; used as an equivalence oracle.
  bool masked_execution = false;
  // Disables score scaling regardless of the model setting.
  bool force_no_score_scaling = false;
};

struct ForwardResult {
  Tensor logits;
  SelectionState selection;
  // Active rows (special rows included) entering each transformer block.
  std::vector<std::size_t> block_rows;
  // Active rows entering each selection layer.
  std::vector<std::size_t> selection_rows;
  // Rows handed to the channel (class + patches).
  std::size_t transmitted_rows = 0;
};

ForwardResult forward(const Model& model, const Tensor& image, double alpha,
                      const ChannelSpec& channel, const ForwardOptions& options = {});

}  // namespace semtok
