#include "flowchroma/model.hpp"

#include <stdexcept>

namespace flowchroma {

using nn::Activation;
using nn::ConvLayer;
using nn::ParameterRef;
using nn::WeightInit;

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.T = 5;
  c.H = 32;
  c.W = 32;
  c.encoder_channels = 32;
  c.global_dim = 64;
  c.lstm_hidden = 32;
  c.desk_scale = true;
  return c;
}

void ModelConfig::validate() const {
  if (T < 1) throw std::invalid_argument("config: window length T must be >= 1");
  if (H < 8 || W < 8 || H % 8 != 0 || W % 8 != 0)
    throw std::invalid_argument("config: frame dims " + std::to_string(H) + "x" +
                                std::to_string(W) + " must be divisible by 8");
  if (encoder_channels < 1 || global_dim < 1 || lstm_hidden < 1)
    throw std::invalid_argument("config: channel widths must be >= 1");
}

RandomProjectionExtractor::RandomProjectionExtractor(int global_dim, uint64_t seed)
    : global_dim_(global_dim) {
  WeightInit init(seed);
  const int c1 = 8, c2 = 16, c3 = 32;
  convs_[0] = nn::make_conv(init, 3, 1, c1, 4, Padding::kSame, Activation::kRelu);
  convs_[1] = nn::make_conv(init, 3, c1, c2, 4, Padding::kSame, Activation::kRelu);
  convs_[2] = nn::make_conv(init, 3, c2, c3, 4, Padding::kSame, Activation::kRelu);
  dense_ = nn::make_dense(init, c3, global_dim);
}

Tensor RandomProjectionExtractor::extract(const Tensor& frame) const {
  if (frame.rank() != 3 || frame.dim(2) != 1)
    throw std::invalid_argument("extractor expects [H,W,1], got " +
                                shape_str(frame.shape()));
  Tensor x = frame.detached();  // frozen: no gradient flows through this path
  for (const ConvLayer& conv : convs_) x = conv.forward(x);
  return dense_.forward(global_avg_pool(x));
}

void RandomProjectionExtractor::collect_parameters(std::vector<ParameterRef>& out) {
  for (size_t i = 0; i < convs_.size(); ++i)
    convs_[i].collect("extractor.conv" + std::to_string(i), /*frozen=*/true, out);
  dense_.collect("extractor.dense", /*frozen=*/true, out);
}

namespace {

int at_least_one(int v) { return v < 1 ? 1 : v; }

// Splits [T,...] into per-slice tensors and re-stacks results along axis 0.
Tensor slice_t(const Tensor& seq, int t) {
  Shape s = seq.shape();
  Shape slice_shape(s.begin() + 1, s.end());
  return reshape(slice(seq, 0, t, 1), std::move(slice_shape));
}

Tensor stack_t(const std::vector<Tensor>& slices) {
  std::vector<Tensor> rows;
  rows.reserve(slices.size());
  for (const Tensor& s : slices) {
    Shape row_shape = s.shape();
    row_shape.insert(row_shape.begin(), 1);
    rows.push_back(reshape(s, std::move(row_shape)));
  }
  return concat(rows, 0);
}

constexpr uint64_t kExtractorSeedSalt = 0x9e3779b97f4a7c15ULL;

}  // namespace

FlowChromaModel FlowChromaModel::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  FlowChromaModel m;
  m.config = config;
  WeightInit init(seed);

  const int c_full = config.encoder_channels;
  const int c_half = at_least_one(c_full / 2);
  const int c_quarter = at_least_one(c_full / 4);

  m.encoder.push_back(nn::make_conv(init, 3, 1, c_quarter, 2, Padding::kSame, Activation::kRelu));
  m.encoder.push_back(nn::make_conv(init, 3, c_quarter, c_quarter, 1, Padding::kSame, Activation::kRelu));
  m.encoder.push_back(nn::make_conv(init, 3, c_quarter, c_half, 2, Padding::kSame, Activation::kRelu));
  m.encoder.push_back(nn::make_conv(init, 3, c_half, c_half, 1, Padding::kSame, Activation::kRelu));
  m.encoder.push_back(nn::make_conv(init, 3, c_half, c_full, 2, Padding::kSame, Activation::kRelu));
  m.encoder.push_back(nn::make_conv(init, 3, c_full, c_full, 1, Padding::kSame, Activation::kRelu));

  // Both model variants draw the same parameter sequence so that a full and
  // an ablated model share identical initial weights for a given seed.
  m.lstm[0] = nn::make_lstm_layer(init, c_full, config.lstm_hidden);
  m.lstm[1] = nn::make_lstm_layer(init, config.lstm_hidden, config.lstm_hidden);

  m.fusion_proj = nn::make_conv(init, 1, config.fusion_input_channels(), c_full, 1,
                                Padding::kSame, Activation::kRelu);

  const int d_half = at_least_one(c_full / 2);
  const int d_quarter = at_least_one(c_full / 4);
  const int d_eighth = at_least_one(c_full / 8);
  m.decoder.push_back(nn::make_conv(init, 3, c_full, d_half, 1, Padding::kSame, Activation::kRelu));
  m.decoder.push_back(nn::make_conv(init, 3, d_half, d_quarter, 1, Padding::kSame, Activation::kRelu));
  m.decoder.push_back(nn::make_conv(init, 3, d_quarter, d_eighth, 1, Padding::kSame, Activation::kRelu));
  m.decoder.push_back(nn::make_conv(init, 3, d_eighth, 2, 1, Padding::kSame, Activation::kTanh));

  m.extractor = std::make_shared<RandomProjectionExtractor>(config.global_dim,
                                                            seed ^ kExtractorSeedSalt);
  return m;
}

namespace {

void check_lum(const ModelConfig& config, const Tensor& lum) {
  if (lum.rank() != 4 || lum.dim(0) != config.T || lum.dim(1) != config.H ||
      lum.dim(2) != config.W || lum.dim(3) != 1) {
    throw std::invalid_argument(
        "luminance input " + shape_str(lum.shape()) + " does not match config [" +
        std::to_string(config.T) + "x" + std::to_string(config.H) + "x" +
        std::to_string(config.W) + "x1]");
  }
}

}  // namespace

Tensor FlowChromaModel::encode_frames(const Tensor& lum) const {
  check_lum(config, lum);
  std::vector<Tensor> encoded;
  encoded.reserve(config.T);
  for (int t = 0; t < config.T; ++t) {
    Tensor x = slice_t(lum, t);
    for (const ConvLayer& conv : encoder) x = conv.forward(x);
    encoded.push_back(x);
  }
  return stack_t(encoded);
}

Tensor FlowChromaModel::extract_global(const Tensor& lum) const {
  check_lum(config, lum);
  if (extractor->output_dim() != config.global_dim)
    throw std::invalid_argument("extractor output dim " +
                                std::to_string(extractor->output_dim()) +
                                " does not match config global_dim " +
                                std::to_string(config.global_dim));
  std::vector<Tensor> rows;
  rows.reserve(config.T);
  for (int t = 0; t < config.T; ++t) {
    rows.push_back(extractor->extract(slice_t(lum, t).detached()));
  }
  return stack_t(rows);
}

Tensor FlowChromaModel::temporal_features(const Tensor& enc) const {
  const int t_len = enc.dim(0);
  std::vector<Tensor> pooled;
  pooled.reserve(t_len);
  for (int t = 0; t < t_len; ++t) pooled.push_back(global_avg_pool(slice_t(enc, t)));
  Tensor pooled_seq = stack_t(pooled);
  if (config.lstm_ablated) return pooled_seq;
  return nn::stacked_lstm_forward(lstm, pooled_seq);
}

Tensor FlowChromaModel::fuse_slice(const Tensor& enc_t, const Tensor& global_t,
                                   const Tensor& temporal_t) const {
  const int h = enc_t.dim(0), w = enc_t.dim(1);
  Tensor stacked = concat(
      {enc_t, replicate_spatial(global_t, h, w), replicate_spatial(temporal_t, h, w)}, 2);
  return fusion_proj.forward(stacked);
}

Tensor FlowChromaModel::decode(const Tensor& fused) const {
  const int t_len = fused.dim(0);
  std::vector<Tensor> out;
  out.reserve(t_len);
  for (int t = 0; t < t_len; ++t) {
    Tensor x = slice_t(fused, t);
    for (size_t i = 0; i + 1 < decoder.size(); ++i) {
      x = upsample_nearest2x(decoder[i].forward(x));
    }
    out.push_back(decoder.back().forward(x));
  }
  return stack_t(out);
}

Tensor FlowChromaModel::forward(const Tensor& lum) const {
  Tensor enc = encode_frames(lum);
  Tensor global_seq = extract_global(lum);
  Tensor temporal_seq = temporal_features(enc);
  const int temporal_dim = config.temporal_dim();
  std::vector<Tensor> fused;
  fused.reserve(config.T);
  for (int t = 0; t < config.T; ++t) {
    fused.push_back(fuse_slice(slice_t(enc, t),
                               reshape(slice(global_seq, 0, t, 1), Shape{config.global_dim}),
                               reshape(slice(temporal_seq, 0, t, 1), Shape{temporal_dim})));
  }
  return decode(stack_t(fused));
}

std::vector<ParameterRef> FlowChromaModel::parameters() {
  std::vector<ParameterRef> out;
  for (size_t i = 0; i < encoder.size(); ++i)
    encoder[i].collect("encoder.conv" + std::to_string(i), false, out);
  for (size_t i = 0; i < lstm.size(); ++i)
    lstm[i].collect("lstm.layer" + std::to_string(i), false, out);
  fusion_proj.collect("fusion.proj", false, out);
  for (size_t i = 0; i < decoder.size(); ++i)
    decoder[i].collect("decoder.conv" + std::to_string(i), false, out);
  extractor->collect_parameters(out);
  return out;
}

int64_t FlowChromaModel::parameter_count() {
  int64_t n = 0;
  for (const ParameterRef& p : parameters()) n += p.value->size();
  return n;
}

FlowChromaModel FlowChromaModel::tracked_copy(Tape& tape) const {
  FlowChromaModel copy = *this;
  for (ParameterRef& p : copy.parameters()) {
    if (!p.frozen) *p.value = tape.leaf(*p.value);
  }
  return copy;
}

}  // namespace flowchroma
