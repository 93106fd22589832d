#include "ear/network.hpp"

#include "ear/ops.hpp"

namespace ear {

using nn::Triple;

namespace {

constexpr Triple kSpatial3{3, 3, 3};
constexpr Triple kPad1{1, 1, 1};
constexpr Triple kPoint{1, 1, 1};
constexpr Triple kNoPad{0, 0, 0};
constexpr Triple kHalve{1, 2, 2};

std::int64_t width_at(const EarConfig& cfg, int stage) { return static_cast<std::int64_t>(cfg.base_channels) << stage; }

/// [N,C,T,H,W] -> [N*T, H*W, C]
Tensor frames_to_rows(const Tensor& x) {
  const auto& s = x.shape();
  return reshape(permute(x, {0, 2, 3, 4, 1}), {s[0] * s[2], s[3] * s[4], s[1]});
}

/// Inverse of frames_to_rows.
Tensor rows_to_frames(const Tensor& rows, const Shape& shape) {
  return permute(reshape(rows, {shape[0], shape[2], shape[3], shape[4], shape[1]}), {0, 4, 1, 2, 3});
}

}  // namespace

void EarConfig::validate() const {
  if (depth < 1) throw ConfigError("depth must be >= 1, got " + std::to_string(depth));
  if (depth > 8) throw ConfigError("depth must be <= 8, got " + std::to_string(depth));
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (out_classes < 2) throw ConfigError("out_classes must be >= 2");
  if (frames < 0) throw ConfigError("frames must be >= 0");
  if (attention_max_positions < 1) throw ConfigError("attention_max_positions must be >= 1");
}

std::string EarConfig::arm_name() const {
  if (use_attention && use_lstm) return "3D-EAR";
  if (use_attention) return "UNet3D-Attention";
  if (use_lstm) return "UNet3D-LSTM";
  return "UNet3D";
}

// ---- AttentionBlock ----

AttentionBlock::AttentionBlock(std::int64_t channels, int max_positions_, DType dtype)
    : key(channels, channels, kPoint, kNoPad, dtype), value(channels, channels, kPoint, kNoPad, dtype),
      max_positions(max_positions_) {}

void AttentionBlock::init(Rng& rng) {
  key.init_he_uniform(rng);
  value.init_he_uniform(rng);
}

std::int64_t AttentionBlock::pool_factor(std::int64_t height, std::int64_t width) const {
  std::int64_t p = 1;
  while ((height / p) * (width / p) > max_positions) {
    p *= 2;
    if (height % p || width % p)
      throw ShapeError("attention: " + std::to_string(height) + "x" + std::to_string(width) +
                       " cannot be pooled to at most " + std::to_string(max_positions) + " positions");
  }
  return p;
}

Tensor AttentionBlock::forward(const Tensor& features) const {
  if (features.dim() != 5 || features.size(1) != key.in_channels())
    throw ShapeError("attention: expected [N," + std::to_string(key.in_channels()) + ",T,H,W], got " +
                     shape_str(features.shape()));
  const auto p = pool_factor(features.size(3), features.size(4));
  Tensor f = p > 1 ? nn::avg_pool3d(features, {1, p, p}) : features;
  Tensor attended = spatial_attention(frames_to_rows(f), frames_to_rows(key.forward(f)),
                                      frames_to_rows(value.forward(f)));
  Tensor out = rows_to_frames(attended, f.shape());
  return p > 1 ? nn::upsample_nearest(out, {1, p, p}) : out;
}

Tensor AttentionBlock::attention_maps(const Tensor& features) const {
  const auto p = pool_factor(features.size(3), features.size(4));
  Tensor f = p > 1 ? nn::avg_pool3d(features, {1, p, p}) : features;
  return attention_weights(frames_to_rows(f), frames_to_rows(key.forward(f)));
}

void AttentionBlock::visit_parameters(const std::string& prefix, const nn::ParameterVisitor& visit) {
  key.visit_parameters(prefix + "key.", visit);
  value.visit_parameters(prefix + "value.", visit);
}

// ---- TemporalLSTMBlock ----

TemporalLSTMBlock::TemporalLSTMBlock(std::int64_t channels, DType dtype) : cell(channels, channels, dtype) {}

Tensor TemporalLSTMBlock::to_sequences(const Tensor& x) {
  if (x.dim() != 5) throw ShapeError("temporal block expects [N,C,T,H,W], got " + shape_str(x.shape()));
  const auto& s = x.shape();
  return reshape(permute(x, {0, 3, 4, 2, 1}), {s[0] * s[3] * s[4], s[2], s[1]});
}

Tensor TemporalLSTMBlock::from_sequences(const Tensor& sequences, const Shape& shape) {
  return permute(reshape(sequences, {shape[0], shape[3], shape[4], shape[2], shape[1]}), {0, 4, 3, 1, 2});
}

Tensor TemporalLSTMBlock::forward(const Tensor& x) const {
  if (x.dim() != 5 || x.size(1) != cell.input_size())
    throw ShapeError("temporal block: expected [N," + std::to_string(cell.input_size()) + ",T,H,W], got " +
                     shape_str(x.shape()));
  return from_sequences(nn::lstm_sequence(cell, to_sequences(x)), x.shape());
}

void TemporalLSTMBlock::visit_parameters(const std::string& prefix, const nn::ParameterVisitor& visit) {
  cell.visit_parameters(prefix + "lstm.", visit);
}

// ---- ConvBlock ----

ConvBlock::ConvBlock(std::int64_t in_channels, std::int64_t out_channels, DType dtype)
    : conv1(in_channels, out_channels, kSpatial3, kPad1, dtype),
      conv2(out_channels, out_channels, kSpatial3, kPad1, dtype),
      norm1(out_channels, dtype),
      norm2(out_channels, dtype) {}

void ConvBlock::init(Rng& rng) {
  conv1.init_he_uniform(rng);
  conv2.init_he_uniform(rng);
}

Tensor ConvBlock::forward(const Tensor& x) const {
  Tensor y = relu(norm1.forward(conv1.forward(x)));
  return relu(norm2.forward(conv2.forward(y)));
}

Shape ConvBlock::output_shape(const Shape& input) const { return conv2.output_shape(conv1.output_shape(input)); }

void ConvBlock::visit_parameters(const std::string& prefix, const nn::ParameterVisitor& visit) {
  conv1.visit_parameters(prefix + "conv1.", visit);
  norm1.visit_parameters(prefix + "norm1.", visit);
  conv2.visit_parameters(prefix + "conv2.", visit);
  norm2.visit_parameters(prefix + "norm2.", visit);
}

// ---- Network ----

Network::Network(const EarConfig& config, DType dtype) : config_(config), dtype_(dtype) {
  config_.validate();
  const int depth = config_.depth;
  for (int s = 0; s < depth; ++s) {
    const auto in = s == 0 ? static_cast<std::int64_t>(config_.in_channels) : width_at(config_, s - 1);
    encoder_.emplace_back(in, width_at(config_, s), dtype);
  }
  if (config_.use_lstm) temporal_.emplace(width_at(config_, depth - 1), dtype);
  for (int s = 0; s + 1 < depth; ++s) {
    const auto w = width_at(config_, s);
    DecoderStage stage;
    stage.up_conv = nn::Conv3d(2 * w, w, kSpatial3, kPad1, dtype);
    stage.up_norm = nn::InstanceNorm(w, dtype);
    if (config_.use_attention) stage.attention.emplace(w, config_.attention_max_positions, dtype);
    stage.block = ConvBlock(2 * w, w, dtype);
    decoder_.push_back(std::move(stage));
  }
  head_ = nn::Conv3d(width_at(config_, 0), config_.out_classes, kPoint, kNoPad, dtype);
}

void Network::init(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& block : encoder_) block.init(rng);
  if (temporal_) temporal_->init(rng);
  for (auto& stage : decoder_) {
    stage.up_conv.init_he_uniform(rng);
    if (stage.attention) stage.attention->init(rng);
    stage.block.init(rng);
  }
  head_.init_he_uniform(rng);
}

void Network::check_input(const Shape& input) const {
  if (input.size() != 5 || input[1] != config_.in_channels)
    throw ShapeError("network expects [N," + std::to_string(config_.in_channels) + ",T,H,W], got " +
                     shape_str(input));
  if (config_.frames > 0 && input[2] != config_.frames)
    throw ShapeError("network configured for " + std::to_string(config_.frames) + " frames, got " +
                     std::to_string(input[2]));
  const std::int64_t div = std::int64_t{1} << (config_.depth - 1);
  if (input[3] % div || input[4] % div)
    throw ShapeError("H and W must be divisible by " + std::to_string(div) + " for depth " +
                     std::to_string(config_.depth) + ", got " + shape_str(input));
}

Tensor Network::forward(const Tensor& x) const {
  check_input(x.shape());
  if (x.dtype() != dtype_) throw ShapeError("network is " + std::string(dtype_name(dtype_)) + " but input is " +
                                            std::string(dtype_name(x.dtype())));
  std::vector<Tensor> skips;
  Tensor h = x;
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    h = encoder_[s].forward(h);
    if (s + 1 < encoder_.size()) {
      skips.push_back(h);
      h = nn::max_pool3d(h, kHalve);
    }
  }
  if (temporal_) h = temporal_->forward(h);
  for (auto s = static_cast<std::int64_t>(decoder_.size()) - 1; s >= 0; --s) {
    const auto& stage = decoder_[static_cast<std::size_t>(s)];
    Tensor up = relu(stage.up_norm.forward(stage.up_conv.forward(nn::upsample_nearest(h, kHalve))));
    const Tensor& skip = skips[static_cast<std::size_t>(s)];
    Tensor bridge = stage.attention ? stage.attention->forward(skip) : skip;
    h = stage.block.forward(concat({up, bridge}, 1));
  }
  return softmax(head_.forward(h), 1);
}

Shape Network::infer_output_shape(const Shape& input) const {
  check_input(input);
  std::vector<Shape> skips;
  Shape h = input;
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    h = encoder_[s].output_shape(h);
    if (s + 1 < encoder_.size()) {
      skips.push_back(h);
      h = {h[0], h[1], h[2], h[3] / 2, h[4] / 2};
    }
  }
  // The temporal block maps [N,C,T,H,W] onto itself.
  for (auto s = static_cast<std::int64_t>(decoder_.size()) - 1; s >= 0; --s) {
    const auto& stage = decoder_[static_cast<std::size_t>(s)];
    Shape up = stage.up_conv.output_shape({h[0], h[1], h[2], h[3] * 2, h[4] * 2});
    const Shape& skip = skips[static_cast<std::size_t>(s)];
    if (stage.attention) stage.attention->pool_factor(skip[3], skip[4]);
    if (up[0] != skip[0] || up[2] != skip[2] || up[3] != skip[3] || up[4] != skip[4])
      throw ShapeError("decoder: upsampled " + shape_str(up) + " does not align with skip " + shape_str(skip));
    h = stage.block.output_shape({up[0], up[1] + skip[1], up[2], up[3], up[4]});
  }
  return head_.output_shape(h);
}

void Network::visit_parameters(const nn::ParameterVisitor& visit) {
  for (std::size_t s = 0; s < encoder_.size(); ++s) encoder_[s].visit_parameters("enc" + std::to_string(s) + ".", visit);
  if (temporal_) temporal_->visit_parameters("temporal.", visit);
  for (std::size_t s = 0; s < decoder_.size(); ++s) {
    const std::string p = "dec" + std::to_string(s) + ".";
    auto& stage = decoder_[s];
    stage.up_conv.visit_parameters(p + "up_conv.", visit);
    stage.up_norm.visit_parameters(p + "up_norm.", visit);
    if (stage.attention) stage.attention->visit_parameters(p + "attention.", visit);
    stage.block.visit_parameters(p + "block.", visit);
  }
  head_.visit_parameters("head.", visit);
}

nn::ParameterList Network::parameters() {
  nn::ParameterList out;
  visit_parameters([&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::int64_t Network::parameter_count() {
  std::int64_t n = 0;
  visit_parameters([&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

void Network::to(DType dtype) {
  if (dtype == dtype_) return;
  visit_parameters([&](const std::string&, Tensor& t) {
    t = Tensor::from_buffer(t.shape(), t.buffer().converted(dtype));
    t.set_requires_grad(true);
  });
  dtype_ = dtype;
}

Network build_network(const EarConfig& config, std::uint64_t seed, DType dtype) {
  Network net(config, dtype);
  net.init(seed);
  return net;
}

}  // namespace ear
