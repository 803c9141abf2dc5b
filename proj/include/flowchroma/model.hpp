#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "flowchroma/layers.hpp"
#include "flowchroma/tensor.hpp"

namespace flowchroma {

struct ModelConfig {
  int T = 5;
  int H = 64;
  int W = 64;
  int encoder_channels = 256;
  int global_dim = 1000;
  int lstm_hidden = 256;
  bool desk_scale = false;
  // Per-frame baseline: the recurrent pathway is bypassed and the pooled
  // encoder features feed the fusion layer directly.
  bool lstm_ablated = false;

  static ModelConfig paper();
  static ModelConfig desk();
  void validate() const;

  /// Channel width of the temporal branch entering fusion.
  int temporal_dim() const { return lstm_ablated ? encoder_channels : lstm_hidden; }
  int fusion_input_channels() const {
    return encoder_channels + global_dim + temporal_dim();
  }
};

/// Per-frame semantic embedding provider. The paper-scale implementation
/// would wrap a pretrained classifier; the shipped implementation is a frozen
/// random-projection CNN. Implementations must be deterministic per frame.
class GlobalExtractor {
 public:
  virtual ~GlobalExtractor() = default;
  virtual int output_dim() const = 0;
  virtual bool trainable() const = 0;
  /// frame: [H,W,1] luminance in [0,1] -> [output_dim] embedding.
  virtual Tensor extract(const Tensor& frame) const = 0;
  virtual void collect_parameters(std::vector<nn::ParameterRef>& out) = 0;
};

/// Frozen three-stage strided CNN followed by global pooling and a dense
/// projection to the embedding size. Weights are fixed at construction.
class RandomProjectionExtractor final : public GlobalExtractor {
 public:
  RandomProjectionExtractor(int global_dim, uint64_t seed);

  int output_dim() const override { return global_dim_; }
  bool trainable() const override { return false; }
  Tensor extract(const Tensor& frame) const override;
  void collect_parameters(std::vector<nn::ParameterRef>& out) override;

 private:
  int global_dim_;
  std::array<nn::ConvLayer, 3> convs_;
  nn::DenseLayer dense_;
};

/// The full colorization network: CNN encoder, global feature extractor,
/// stacked LSTM, fusion layer and CNN decoder, mapping a luminance sequence
/// [T,H,W,1] to normalized chroma predictions [T,H,W,2].
struct FlowChromaModel {
  ModelConfig config;
  std::vector<nn::ConvLayer> encoder;   // 6 layers, strides 2,1,2,1,2,1
  std::array<nn::LstmLayerParams, 2> lstm;
  nn::ConvLayer fusion_proj;            // 1x1 projection back to encoder width
  std::vector<nn::ConvLayer> decoder;   // 3x (conv+up2x) then 2-channel tanh conv
  std::shared_ptr<GlobalExtractor> extractor;

  static FlowChromaModel init(const ModelConfig& config, uint64_t seed);

  /// [T,H,W,1] -> [T,H/8,W/8,C]; the same weights applied to every slice.
  Tensor encode_frames(const Tensor& lum) const;
  /// [T,H,W,1] -> [T,global_dim]; constant w.r.t. the tape (extractor frozen).
  Tensor extract_global(const Tensor& lum) const;
  /// [T,H/8,W/8,C] -> [T,temporal_dim]: pooled features through the stacked
  /// LSTM, or returned directly when the baseline ablation is active.
  Tensor temporal_features(const Tensor& enc) const;
  /// Replicates the global/temporal vectors across space, concatenates with
  /// the encoder slice and projects back to encoder width.
  Tensor fuse_slice(const Tensor& enc_t, const Tensor& global_t,
                    const Tensor& temporal_t) const;
  /// [T,H/8,W/8,C] -> [T,H,W,2], outputs in (-1,1).
  Tensor decode(const Tensor& fused) const;
  Tensor forward(const Tensor& lum) const;

  std::vector<nn::ParameterRef> parameters();
  int64_t parameter_count();

  /// Copy whose trainable parameters are leaves of the given tape.
  FlowChromaModel tracked_copy(Tape& tape) const;
};

/// Versioned binary checkpoint: magic "FCHK", format version, config fields
/// as little-endian 32-bit ints, the global training step, then named
/// parameter records (little-endian 64-bit float payloads).
void save_checkpoint(FlowChromaModel& model, int64_t step,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  FlowChromaModel model;
  int64_t step = 0;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace flowchroma
