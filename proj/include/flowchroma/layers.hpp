#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowchroma/tensor.hpp"

namespace flowchroma::nn {

enum class Activation { kNone, kRelu, kTanh };

/// Named handle to a parameter tensor owned by a layer. frozen parameters are
/// excluded from gradient tracking and optimizer updates.
struct ParameterRef {
  std::string name;
  Tensor* value = nullptr;
  bool frozen = false;
};

/// 2-D convolution with bias and an optional pointwise activation.
struct ConvLayer {
  Tensor weight;  // [k,k,Cin,Cout]
  Tensor bias;    // [Cout]
  int stride = 1;
  Padding padding = Padding::kSame;
  Activation activation = Activation::kNone;

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, bool frozen, std::vector<ParameterRef>& out);
};

/// Fully connected projection: y = x.W + b for a rank-1 input.
struct DenseLayer {
  Tensor weight;  // [in,out]
  Tensor bias;    // [out]

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, bool frozen, std::vector<ParameterRef>& out);
};

/// One LSTM layer's parameters. Gate order along the 4H axis is fixed as
/// (input i, forget f, candidate g, output o).
struct LstmLayerParams {
  Tensor w_x;   // [input_dim, 4*hidden]
  Tensor w_h;   // [hidden, 4*hidden]
  Tensor bias;  // [4*hidden]

  int input_dim() const { return w_x.dim(0); }
  int hidden() const { return w_h.dim(0); }
  void collect(const std::string& prefix, bool frozen, std::vector<ParameterRef>& out);
};

struct LstmState {
  Tensor h;
  Tensor c;

  static LstmState zeros(int hidden);
};

/// c' = f*c + i*g, h' = o*tanh(c') with i,f,o = sigmoid gates, g = tanh.
LstmState lstm_cell_step(const LstmLayerParams& params, const Tensor& x,
                         const LstmState& state);

/// Runs two stacked LSTM layers over inputs [T,D]; layer 2 consumes layer 1's
/// hidden sequence. Initial states are zero. Returns layer-2 hiddens [T,H].
Tensor stacked_lstm_forward(const std::array<LstmLayerParams, 2>& layers,
                            const Tensor& inputs);

/// Deterministic fan-in uniform initializer: weights ~ U(-1/sqrt(fan_in),
/// +1/sqrt(fan_in)). One instance per model so the draw sequence is fixed.
class WeightInit {
 public:
  explicit WeightInit(uint64_t seed) : rng_(seed) {}

  Tensor uniform(Shape shape, int fan_in);
  double draw(double lo, double hi);

 private:
  std::mt19937_64 rng_;
};

ConvLayer make_conv(WeightInit& init, int k, int cin, int cout, int stride,
                    Padding padding, Activation activation);
DenseLayer make_dense(WeightInit& init, int in, int out);

/// Weight matrices fan-in uniform; bias zero except the forget-gate segment,
/// which starts at 1.
LstmLayerParams make_lstm_layer(WeightInit& init, int input_dim, int hidden);

}  // namespace flowchroma::nn
