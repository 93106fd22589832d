#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ear/nn/layers.hpp"
#include "ear/tensor.hpp"

namespace ear {

struct EarConfig {
  int depth = 4;
  int base_channels = 8;
  int in_channels = 4;
  int out_classes = 2;
  bool use_attention = true;
  bool use_lstm = true;
  /// Expected frame count of inputs; 0 accepts any.
  int frames = 50;
  /// Largest H*W at which attention runs at full resolution. Larger skips are
  /// average-pooled by the smallest power of two that fits, then upsampled back.
  int attention_max_positions = 64 * 64;

  /// Throws ConfigError on invalid sizes.
  void validate() const;
  /// "UNet3D", "UNet3D-Attention", "UNet3D-LSTM" or "3D-EAR".
  std::string arm_name() const;

  friend bool operator==(const EarConfig&, const EarConfig&) = default;
};

/// Per-frame self-attention over spatial positions:
/// out_i = softmax(F_i · key(F_i)^T) · value(F_i), with F_i flattened to [H*W, C].
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(std::int64_t channels, int max_positions, DType dtype = DType::f32);

  void init(Rng& rng);
  Tensor forward(const Tensor& features) const;
  /// Attention matrices [N*T, P, P] for every frame (P = pooled H*W).
  Tensor attention_maps(const Tensor& features) const;
  /// Spatial pooling applied before attention for an H x W input (1 = none).
  std::int64_t pool_factor(std::int64_t height, std::int64_t width) const;
  void visit_parameters(const std::string& prefix, const nn::ParameterVisitor& visit);

  nn::Conv3d key;    // 1x1x1, C -> C
  nn::Conv3d value;  // 1x1x1, C -> C
  int max_positions = 64 * 64;
};

/// Runs one LSTM along the frame axis of every spatial position (weights shared).
class TemporalLSTMBlock {
 public:
  TemporalLSTMBlock() = default;
  TemporalLSTMBlock(std::int64_t channels, DType dtype = DType::f32);

  void init(Rng& rng) { cell.init_uniform(rng); }
  Tensor forward(const Tensor& x) const;
  void visit_parameters(const std::string& prefix, const nn::ParameterVisitor& visit);

  /// [N,C,T,H,W] -> [N*H*W, T, C]
  static Tensor to_sequences(const Tensor& x);
  /// Inverse of to_sequences for the original 5-d `shape`.
  static Tensor from_sequences(const Tensor& sequences, const Shape& shape);

  nn::LSTMCell cell;
};

/// 2 x (conv 3x3x3 -> instance norm -> ReLU).
struct ConvBlock {
  ConvBlock() = default;
  ConvBlock(std::int64_t in_channels, std::int64_t out_channels, DType dtype);
  void init(Rng& rng);
  Tensor forward(const Tensor& x) const;
  Shape output_shape(const Shape& input) const;
  void visit_parameters(const std::string& prefix, const nn::ParameterVisitor& visit);

  nn::Conv3d conv1, conv2;
  nn::InstanceNorm norm1, norm2;
};

struct DecoderStage {
  nn::Conv3d up_conv;  // after nearest upsampling, width 2C -> C
  nn::InstanceNorm up_norm;
  std::optional<AttentionBlock> attention;
  ConvBlock block;  // on concat(up, skip)
};

class Network {
 public:
  explicit Network(const EarConfig& config, DType dtype = DType::f32);

  /// Deterministic initialization from `seed`.
  void init(std::uint64_t seed);

  /// x [N, in_channels, T, H, W] -> per-pixel class probabilities [N, out_classes, T, H, W].
  Tensor forward(const Tensor& x) const;
  /// Output shape for `input` via the layer shape formulas; allocates nothing.
  Shape infer_output_shape(const Shape& input) const;

  const EarConfig& config() const { return config_; }
  DType dtype() const { return dtype_; }
  void to(DType dtype);

  void visit_parameters(const nn::ParameterVisitor& visit);
  nn::ParameterList parameters();
  std::int64_t parameter_count();

  const std::vector<ConvBlock>& encoder() const { return encoder_; }
  const std::optional<TemporalLSTMBlock>& temporal() const { return temporal_; }
  const std::vector<DecoderStage>& decoder() const { return decoder_; }

 private:
  void check_input(const Shape& input) const;

  EarConfig config_;
  DType dtype_;
  std::vector<ConvBlock> encoder_;
  std::optional<TemporalLSTMBlock> temporal_;
  std::vector<DecoderStage> decoder_;  // decoder_[s] merges the skip from encoder stage s
  nn::Conv3d head_;
};

/// Validates `config`, builds and initializes the network.
Network build_network(const EarConfig& config, std::uint64_t seed = 0, DType dtype = DType::f32);

}  // namespace ear
