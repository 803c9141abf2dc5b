#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace flowchroma {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;
namespace detail {
struct TensorAccess;
}

/// Dense row-major tensor of 64-bit floats. Values are immutable after
/// construction; every operation returns a new tensor. A tensor participates
/// in reverse-mode autodiff iff it carries a tape handle, which happens when
/// it is created by Tape::leaf() or produced by an op with a tracked operand.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape);
  static Tensor scalar(double value);  // rank-0

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  int64_t size() const;
  bool defined() const { return data_ != nullptr; }
  const std::vector<double>& values() const;

  /// Value of a single-element tensor.
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  /// Same values, no tape participation.
  Tensor detached() const;

 private:
  std::shared_ptr<const std::vector<double>> data_;
  Shape shape_;
  Tape* tape_ = nullptr;
  int node_ = -1;

  friend class Tape;
  friend struct detail::TensorAccess;
};

/// Gradients produced by Tape::backward, keyed by tape node.
class GradientMap {
 public:
  bool contains(const Tensor& t) const;
  const Tensor& at(const Tensor& t) const;

 private:
  friend class Tape;
  std::unordered_map<int, Tensor> grads_;
};

/// Records forward operations in topological order and replays them in
/// reverse to accumulate gradients. Single-owner: recording and backward
/// happen on one logical thread; run independent tapes for parallelism.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tracked copy of a value; the starting point for differentiation.
  Tensor leaf(const Tensor& value);

  /// Reverse pass from a tracked scalar root. Populates a gradient for every
  /// tracked ancestor and consumes the tape.
  GradientMap backward(const Tensor& root);

  size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  enum class OpKind : uint8_t {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kSigmoid,
    kTanh,
    kRelu,
    kMatmul,
    kConv2d,
    kUpsample2x,
    kConcat,
    kSlice,
    kGlobalAvgPool,
    kReplicateSpatial,
    kReshape,
    kMeanAll,
  };

  struct Node {
    OpKind kind;
    Shape shape;                 // output shape
    std::vector<int> parents;    // node ids; -1 for untracked operands
    std::vector<Tensor> saved;   // detached operand/result values as needed
    std::vector<Shape> in_shapes;
    std::vector<int> args;       // op-specific integers
  };

  int record(Node node);
  std::vector<Node> nodes_;
  bool consumed_ = false;

  friend struct detail::TensorAccess;
};

enum class Padding { kSame, kValid };

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

/// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);

/// x: [H,W,Cin], w: [k,k,Cin,Cout] (k odd), bias: [Cout], stride in {1,2,4}.
/// Same padding zero-pads to out = ceil(in/stride); valid requires H,W >= k.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              Padding padding);

/// [H,W,C] -> [2H,2W,C], each pixel replicated into a 2x2 block.
Tensor upsample_nearest2x(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);

/// [H,W,C] -> [C], spatial mean per channel.
Tensor global_avg_pool(const Tensor& x);

/// [C] -> [h,w,C], vector broadcast to every spatial position.
Tensor replicate_spatial(const Tensor& v, int h, int w);

/// Same values under a new shape of equal element count.
Tensor reshape(const Tensor& x, Shape new_shape);

/// Mean over all elements -> rank-0 scalar.
Tensor mean_all(const Tensor& x);

}  // namespace flowchroma
