#include "flowchroma/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace flowchroma::nn {

Tensor ConvLayer::forward(const Tensor& x) const {
  Tensor y = conv2d(x, weight, bias, stride, padding);
  switch (activation) {
    case Activation::kNone:
      return y;
    case Activation::kRelu:
      return relu(y);
    case Activation::kTanh:
      return flowchroma::tanh(y);
  }
  return y;
}

void ConvLayer::collect(const std::string& prefix, bool frozen,
                        std::vector<ParameterRef>& out) {
  out.push_back({prefix + ".weight", &weight, frozen});
  out.push_back({prefix + ".bias", &bias, frozen});
}

Tensor DenseLayer::forward(const Tensor& x) const {
  if (x.rank() != 1)
    throw std::invalid_argument("dense layer expects a vector, got " +
                                shape_str(x.shape()));
  Tensor row = reshape(x, Shape{1, x.dim(0)});
  Tensor y = reshape(matmul(row, weight), Shape{weight.dim(1)});
  return add(y, bias);
}

void DenseLayer::collect(const std::string& prefix, bool frozen,
                         std::vector<ParameterRef>& out) {
  out.push_back({prefix + ".weight", &weight, frozen});
  out.push_back({prefix + ".bias", &bias, frozen});
}

void LstmLayerParams::collect(const std::string& prefix, bool frozen,
                              std::vector<ParameterRef>& out) {
  out.push_back({prefix + ".w_x", &w_x, frozen});
  out.push_back({prefix + ".w_h", &w_h, frozen});
  out.push_back({prefix + ".bias", &bias, frozen});
}

LstmState LstmState::zeros(int hidden) {
  return {Tensor::zeros(Shape{hidden}), Tensor::zeros(Shape{hidden})};
}

LstmState lstm_cell_step(const LstmLayerParams& params, const Tensor& x,
                         const LstmState& state) {
  const int hidden = params.hidden();
  if (x.rank() != 1 || x.dim(0) != params.input_dim())
    throw std::invalid_argument("lstm_cell_step: input " + shape_str(x.shape()) +
                                " does not match expected [" +
                                std::to_string(params.input_dim()) + "]");
  if (state.h.dim(0) != hidden || state.c.dim(0) != hidden)
    throw std::invalid_argument("lstm_cell_step: state size does not match hidden " +
                                std::to_string(hidden));

  Tensor gx = matmul(reshape(x, Shape{1, x.dim(0)}), params.w_x);
  Tensor gh = matmul(reshape(state.h, Shape{1, hidden}), params.w_h);
  Tensor gates = add(reshape(add(gx, gh), Shape{4 * hidden}), params.bias);

  Tensor i = sigmoid(slice(gates, 0, 0, hidden));
  Tensor f = sigmoid(slice(gates, 0, hidden, hidden));
  Tensor g = flowchroma::tanh(slice(gates, 0, 2 * hidden, hidden));
  Tensor o = sigmoid(slice(gates, 0, 3 * hidden, hidden));

  Tensor c_next = add(mul(f, state.c), mul(i, g));
  Tensor h_next = mul(o, flowchroma::tanh(c_next));
  return {h_next, c_next};
}

Tensor stacked_lstm_forward(const std::array<LstmLayerParams, 2>& layers,
                            const Tensor& inputs) {
  if (inputs.rank() != 2)
    throw std::invalid_argument("stacked_lstm_forward expects [T,D], got " +
                                shape_str(inputs.shape()));
  const int t_len = inputs.dim(0);
  const int d = inputs.dim(1);
  if (t_len < 1) throw std::invalid_argument("stacked_lstm_forward: empty sequence");
  if (d != layers[0].input_dim())
    throw std::invalid_argument("stacked_lstm_forward: feature dim " + std::to_string(d) +
                                " does not match layer-1 input " +
                                std::to_string(layers[0].input_dim()));

  LstmState s0 = LstmState::zeros(layers[0].hidden());
  LstmState s1 = LstmState::zeros(layers[1].hidden());
  std::vector<Tensor> rows;
  rows.reserve(t_len);
  for (int t = 0; t < t_len; ++t) {
    Tensor x_t = reshape(slice(inputs, 0, t, 1), Shape{d});
    s0 = lstm_cell_step(layers[0], x_t, s0);
    s1 = lstm_cell_step(layers[1], s0.h, s1);
    rows.push_back(reshape(s1.h, Shape{1, layers[1].hidden()}));
  }
  return concat(rows, 0);
}

Tensor WeightInit::uniform(Shape shape, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng_);
  return Tensor(std::move(shape), std::move(v));
}

double WeightInit::draw(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng_);
}

ConvLayer make_conv(WeightInit& init, int k, int cin, int cout, int stride,
                    Padding padding, Activation activation) {
  ConvLayer layer;
  layer.weight = init.uniform(Shape{k, k, cin, cout}, k * k * cin);
  layer.bias = Tensor::zeros(Shape{cout});
  layer.stride = stride;
  layer.padding = padding;
  layer.activation = activation;
  return layer;
}

DenseLayer make_dense(WeightInit& init, int in, int out) {
  DenseLayer layer;
  layer.weight = init.uniform(Shape{in, out}, in);
  layer.bias = Tensor::zeros(Shape{out});
  return layer;
}

LstmLayerParams make_lstm_layer(WeightInit& init, int input_dim, int hidden) {
  LstmLayerParams p;
  p.w_x = init.uniform(Shape{input_dim, 4 * hidden}, input_dim);
  p.w_h = init.uniform(Shape{hidden, 4 * hidden}, hidden);
  std::vector<double> b(static_cast<size_t>(4) * hidden, 0.0);
  for (int i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;  // forget gate
  p.bias = Tensor(Shape{4 * hidden}, std::move(b));
  return p;
}

}  // namespace flowchroma::nn
