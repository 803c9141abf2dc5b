#include "flowchroma/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace flowchroma {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void check_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) fail("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    std::ostringstream os;
    os << "tensor shape " << shape_str(shape) << " wants " << shape_numel(shape)
       << " values, got " << values.size();
    fail(os.str());
  }
  shape_ = std::move(shape);
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  check_shape(shape);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), value);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) fail("axis out of range for " + shape_str(shape_));
  return shape_[axis];
}

int64_t Tensor::size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

const std::vector<double>& Tensor::values() const {
  if (!data_) fail("tensor is undefined");
  return *data_;
}

double Tensor::item() const {
  if (size() != 1) fail("item() requires a single-element tensor, got " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.data_ = data_;
  t.shape_ = shape_;
  return t;
}

namespace detail {

struct TensorAccess {
  using Data = std::shared_ptr<const std::vector<double>>;
  static Tensor make(Shape shape, Data data, Tape* tape, int node) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    t.tape_ = tape;
    t.node_ = node;
    return t;
  }
  static int record(Tape& tape, Tape::Node node) { return tape.record(std::move(node)); }
  static Data data(const Tensor& t) { return t.data_; }
  using OpKind = Tape::OpKind;
  using Node = Tape::Node;
};

}  // namespace detail

using OpKind = Tape::OpKind;
using Data = detail::TensorAccess::Data;

int Tape::record(Node node) {
  if (consumed_) fail("tape already consumed by backward()");
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(const Tensor& value) {
  if (!value.defined()) fail("leaf() requires a defined tensor");
  Node n;
  n.kind = OpKind::kLeaf;
  n.shape = value.shape();
  int id = record(std::move(n));
  return detail::TensorAccess::make(value.shape(), value.data_, this, id);
}

namespace {

Tape* resolve_tape(std::initializer_list<const Tensor*> operands) {
  Tape* tape = nullptr;
  for (const Tensor* t : operands) {
    if (!t->defined()) fail("operation received an undefined tensor");
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) fail("operands belong to different tapes");
    tape = t->tape();
  }
  return tape;
}

Data make_data(std::vector<double> v) {
  return std::make_shared<const std::vector<double>>(std::move(v));
}

int parent_of(const Tensor& t) { return t.tracked() ? t.node() : -1; }

// Records the node (when a tape is involved) and wraps the freshly computed
// buffer. save_result puts a detached view of the output into node.saved for
// backward rules that differentiate through the forward value.
Tensor wrap(Tape* tape, Tape::Node node, Shape shape, std::vector<double> out,
            bool save_result = false) {
  Data data = make_data(std::move(out));
  if (!tape) return detail::TensorAccess::make(std::move(shape), std::move(data), nullptr, -1);
  node.shape = shape;
  if (save_result)
    node.saved.push_back(detail::TensorAccess::make(shape, data, nullptr, -1));
  int id = detail::TensorAccess::record(*tape, std::move(node));
  return detail::TensorAccess::make(std::move(shape), std::move(data), tape, id);
}

void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Binary elementwise ops accept equal shapes or a single-element operand
// broadcast against the other side.
enum class Broadcast { kNone, kScalarA, kScalarB };

Broadcast binary_mode(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.size() == 1) return Broadcast::kScalarB;
  if (a.size() == 1) return Broadcast::kScalarA;
  fail(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
       shape_str(b.shape()));
}

template <class F>
Tensor binary_op(const char* name, OpKind kind, const Tensor& a, const Tensor& b, F&& f) {
  Broadcast mode = binary_mode(name, a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  Shape out_shape = mode == Broadcast::kScalarA ? b.shape() : a.shape();
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  switch (mode) {
    case Broadcast::kNone:
      for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
      break;
    case Broadcast::kScalarB:
      for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[0]);
      break;
    case Broadcast::kScalarA:
      for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[0], bv[i]);
      break;
  }
  Tape* tape = resolve_tape({&a, &b});
  Tape::Node node;
  node.kind = kind;
  node.parents = {parent_of(a), parent_of(b)};
  node.in_shapes = {a.shape(), b.shape()};
  if (tape && kind == OpKind::kMul) node.saved = {a.detached(), b.detached()};
  return wrap(tape, std::move(node), std::move(out_shape), std::move(out));
}

}  // namespace

// ---- forward ops ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op("add", OpKind::kAdd, a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op("sub", OpKind::kSub, a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op("mul", OpKind::kMul, a, b, [](double x, double y) { return x * y; });
}

Tensor sigmoid(const Tensor& x) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  Tape* tape = resolve_tape({&x});
  Tape::Node node;
  node.kind = OpKind::kSigmoid;
  node.parents = {parent_of(x)};
  return wrap(tape, std::move(node), x.shape(), std::move(out), /*save_result=*/true);
}

Tensor tanh(const Tensor& x) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  Tape* tape = resolve_tape({&x});
  Tape::Node node;
  node.kind = OpKind::kTanh;
  node.parents = {parent_of(x)};
  return wrap(tape, std::move(node), x.shape(), std::move(out), /*save_result=*/true);
}

Tensor relu(const Tensor& x) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Tape* tape = resolve_tape({&x});
  Tape::Node node;
  node.kind = OpKind::kRelu;
  node.parents = {parent_of(x)};
  if (tape) node.saved = {x.detached()};
  return wrap(tape, std::move(node), x.shape(), std::move(out));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    fail("matmul requires rank-2 tensors, got " + shape_str(a.shape()) + " and " +
         shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (k != b.dim(0))
    fail("matmul: inner dimensions disagree " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = av.data() + static_cast<size_t>(i) * k;
    double* crow = out.data() + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = bv.data() + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  Tape* tape = resolve_tape({&a, &b});
  Tape::Node node;
  node.kind = OpKind::kMatmul;
  node.parents = {parent_of(a), parent_of(b)};
  if (tape) node.saved = {a.detached(), b.detached()};
  return wrap(tape, std::move(node), Shape{m, n}, std::move(out));
}

namespace {

struct ConvGeom {
  int k = 0, stride = 1;
  int h = 0, w = 0, cin = 0, cout = 0;
  int out_h = 0, out_w = 0;
  int pad_top = 0, pad_left = 0;
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                       Padding padding) {
  if (x.rank() != 3) fail("conv2d input must be [H,W,Cin], got " + shape_str(x.shape()));
  if (w.rank() != 4 || w.dim(0) != w.dim(1))
    fail("conv2d kernel must be [k,k,Cin,Cout], got " + shape_str(w.shape()));
  ConvGeom g;
  g.k = w.dim(0);
  if (g.k % 2 == 0) fail("conv2d kernel size must be odd, got " + std::to_string(g.k));
  if (stride != 1 && stride != 2 && stride != 4)
    fail("conv2d: unsupported stride " + std::to_string(stride));
  g.stride = stride;
  g.h = x.dim(0);
  g.w = x.dim(1);
  g.cin = x.dim(2);
  g.cout = w.dim(3);
  if (w.dim(2) != g.cin)
    fail("conv2d: kernel input channels " + shape_str(w.shape()) + " do not match input " +
         shape_str(x.shape()));
  if (bias.rank() != 1 || bias.dim(0) != g.cout)
    fail("conv2d: bias must be [Cout]=" + std::to_string(g.cout) + ", got " +
         shape_str(bias.shape()));
  if (padding == Padding::kSame) {
    g.out_h = (g.h + stride - 1) / stride;
    g.out_w = (g.w + stride - 1) / stride;
    const int pad_h = std::max((g.out_h - 1) * stride + g.k - g.h, 0);
    const int pad_w = std::max((g.out_w - 1) * stride + g.k - g.w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    if (g.h < g.k || g.w < g.k)
      fail("conv2d: valid padding requires input " + shape_str(x.shape()) +
           " at least kernel size " + std::to_string(g.k));
    g.out_h = (g.h - g.k) / stride + 1;
    g.out_w = (g.w - g.k) / stride + 1;
  }
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              Padding padding) {
  const ConvGeom g = conv_geometry(x, w, bias, stride, padding);
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = bias.values();
  std::vector<double> out(static_cast<size_t>(g.out_h) * g.out_w * g.cout);
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      double* orow = out.data() + (static_cast<size_t>(oy) * g.out_w + ox) * g.cout;
      for (int c = 0; c < g.cout; ++c) orow[c] = bv[c];
      for (int ky = 0; ky < g.k; ++ky) {
        const int iy = oy * g.stride + ky - g.pad_top;
        if (iy < 0 || iy >= g.h) continue;
        for (int kx = 0; kx < g.k; ++kx) {
          const int ix = ox * g.stride + kx - g.pad_left;
          if (ix < 0 || ix >= g.w) continue;
          const double* xp = xv.data() + (static_cast<size_t>(iy) * g.w + ix) * g.cin;
          const double* wp =
              wv.data() + (static_cast<size_t>(ky) * g.k + kx) * g.cin * g.cout;
          for (int ci = 0; ci < g.cin; ++ci) {
            const double xval = xp[ci];
            const double* wrow = wp + static_cast<size_t>(ci) * g.cout;
            for (int c = 0; c < g.cout; ++c) orow[c] += xval * wrow[c];
          }
        }
      }
    }
  }
  Tape* tape = resolve_tape({&x, &w, &bias});
  Tape::Node node;
  node.kind = OpKind::kConv2d;
  node.parents = {parent_of(x), parent_of(w), parent_of(bias)};
  if (tape) node.saved = {x.detached(), w.detached()};
  node.args = {g.k,  g.stride, g.pad_top, g.pad_left, g.h,
               g.w,  g.cin,    g.cout,    g.out_h,    g.out_w};
  return wrap(tape, std::move(node), Shape{g.out_h, g.out_w, g.cout}, std::move(out));
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() != 3) fail("upsample_nearest2x expects [H,W,C], got " + shape_str(x.shape()));
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const auto& xv = x.values();
  std::vector<double> out(static_cast<size_t>(2 * h) * (2 * w) * c);
  for (int i = 0; i < 2 * h; ++i) {
    for (int j = 0; j < 2 * w; ++j) {
      const double* src = xv.data() + (static_cast<size_t>(i / 2) * w + j / 2) * c;
      double* dst = out.data() + (static_cast<size_t>(i) * 2 * w + j) * c;
      for (int ch = 0; ch < c; ++ch) dst[ch] = src[ch];
    }
  }
  Tape* tape = resolve_tape({&x});
  Tape::Node node;
  node.kind = OpKind::kUpsample2x;
  node.parents = {parent_of(x)};
  node.in_shapes = {x.shape()};
  return wrap(tape, std::move(node), Shape{2 * h, 2 * w, c}, std::move(out));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail("concat requires at least one tensor");
  if (parts.size() == 1) return parts[0];
  const Shape& first = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(first.size()))
    fail("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  int axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != static_cast<int>(first.size()))
      fail("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
    for (int d = 0; d < p.rank(); ++d) {
      if (d != axis && p.shape()[d] != first[d])
        fail("concat: non-concat dimension mismatch " + shape_str(first) + " vs " +
             shape_str(p.shape()));
    }
    axis_total += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (int d = axis + 1; d < static_cast<int>(first.size()); ++d) inner *= first[d];

  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    const auto& pv = p.values();
    const int64_t p_axis = p.shape()[axis];
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = pv.data() + o * p_axis * inner;
      double* dst = out.data() + (o * axis_total + offset) * inner;
      std::copy(src, src + p_axis * inner, dst);
    }
    offset += p_axis;
  }

  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    if (!p.tracked()) continue;
    if (tape && tape != p.tape()) fail("operands belong to different tapes");
    tape = p.tape();
  }
  Tape::Node node;
  node.kind = OpKind::kConcat;
  node.args = {axis};
  for (const Tensor& p : parts) {
    node.parents.push_back(parent_of(p));
    node.in_shapes.push_back(p.shape());
  }
  return wrap(tape, std::move(node), std::move(out_shape), std::move(out));
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  if (axis < 0 || axis >= x.rank())
    fail("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  if (start < 0 || length <= 0 || start + length > x.shape()[axis])
    fail("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
         ") out of bounds for " + shape_str(x.shape()) + " axis " + std::to_string(axis));
  const Shape& s = x.shape();
  Shape out_shape = s;
  out_shape[axis] = length;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < x.rank(); ++d) inner *= s[d];
  const auto& xv = x.values();
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  for (int64_t o = 0; o < outer; ++o) {
    const double* src = xv.data() + (o * s[axis] + start) * inner;
    double* dst = out.data() + o * length * inner;
    std::copy(src, src + static_cast<int64_t>(length) * inner, dst);
  }
  Tape* tape = resolve_tape({&x});
  Tape::Node node;
  node.kind = OpKind::kSlice;
  node.parents = {parent_of(x)};
  node.in_shapes = {x.shape()};
  node.args = {axis, start, length};
  return wrap(tape, std::move(node), std::move(out_shape), std::move(out));
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) fail("global_avg_pool expects [H,W,C], got " + shape_str(x.shape()));
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const auto& xv = x.values();
  std::vector<double> out(c, 0.0);
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
    const double* src = xv.data() + p * c;
    for (int ch = 0; ch < c; ++ch) out[ch] += src[ch];
  }
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ch = 0; ch < c; ++ch) out[ch] *= inv;
  Tape* tape = resolve_tape({&x});
  Tape::Node node;
  node.kind = OpKind::kGlobalAvgPool;
  node.parents = {parent_of(x)};
  node.in_shapes = {x.shape()};
  return wrap(tape, std::move(node), Shape{c}, std::move(out));
}

Tensor replicate_spatial(const Tensor& v, int h, int w) {
  if (v.rank() != 1) fail("replicate_spatial expects a vector, got " + shape_str(v.shape()));
  if (h < 1 || w < 1) fail("replicate_spatial: target dims must be positive");
  const int c = v.dim(0);
  const auto& vv = v.values();
  std::vector<double> out(static_cast<size_t>(h) * w * c);
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
    std::copy(vv.begin(), vv.end(), out.begin() + p * c);
  }
  Tape* tape = resolve_tape({&v});
  Tape::Node node;
  node.kind = OpKind::kReplicateSpatial;
  node.parents = {parent_of(v)};
  node.in_shapes = {v.shape()};
  node.args = {h, w};
  return wrap(tape, std::move(node), Shape{h, w, c}, std::move(out));
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check_shape(new_shape);
  if (shape_numel(new_shape) != x.size())
    fail("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
         shape_str(new_shape));
  Tape* tape = resolve_tape({&x});
  if (!tape) {
    // untracked reshape shares the buffer
    return detail::TensorAccess::make(std::move(new_shape), detail::TensorAccess::data(x),
                                      nullptr, -1);
  }
  Tape::Node node;
  node.kind = OpKind::kReshape;
  node.parents = {parent_of(x)};
  node.in_shapes = {x.shape()};
  std::vector<double> out = x.values();
  return wrap(tape, std::move(node), std::move(new_shape), std::move(out));
}

Tensor mean_all(const Tensor& x) {
  const auto& xv = x.values();
  double acc = 0.0;
  for (double v : xv) acc += v;
  Tape* tape = resolve_tape({&x});
  Tape::Node node;
  node.kind = OpKind::kMeanAll;
  node.parents = {parent_of(x)};
  node.in_shapes = {x.shape()};
  return wrap(tape, std::move(node), Shape{}, {acc / static_cast<double>(xv.size())});
}

// ---- backward ----------------------------------------------------------------

bool GradientMap::contains(const Tensor& t) const {
  return t.tracked() && grads_.count(t.node()) > 0;
}

const Tensor& GradientMap::at(const Tensor& t) const {
  if (!t.tracked()) fail("gradient lookup on an untracked tensor");
  auto it = grads_.find(t.node());
  if (it == grads_.end()) fail("no gradient recorded for this tensor");
  return it->second;
}

namespace {

// Gradient buffers per node, allocated lazily during the reverse sweep.
struct GradStore {
  std::vector<std::vector<double>> slots;
  std::vector<bool> live;

  explicit GradStore(size_t n) : slots(n), live(n, false) {}

  std::vector<double>& ensure(int id, int64_t numel) {
    if (!live[id]) {
      slots[id].assign(static_cast<size_t>(numel), 0.0);
      live[id] = true;
    }
    return slots[id];
  }
};

}  // namespace

GradientMap Tape::backward(const Tensor& root) {
  if (!root.tracked() || root.tape() != this)
    fail("backward: root is not tracked on this tape");
  if (consumed_) fail("tape already consumed by backward()");
  if (root.rank() != 0)
    fail("backward: root must be a scalar (shape []), got " + shape_str(root.shape()));
  consumed_ = true;

  GradStore store(nodes_.size());
  store.ensure(root.node(), 1)[0] = 1.0;

  for (int id = root.node(); id >= 0; --id) {
    if (!store.live[id]) continue;
    const Node& n = nodes_[id];
    const std::vector<double>& g = store.slots[id];
    switch (n.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kAdd:
      case OpKind::kSub: {
        const bool negate_b = n.kind == OpKind::kSub;
        for (int side = 0; side < 2; ++side) {
          if (n.parents[side] < 0) continue;
          const Shape& sh = n.in_shapes[side];
          const bool is_scalar = shape_numel(sh) == 1 && sh != n.shape;
          auto& d = store.ensure(n.parents[side], shape_numel(sh));
          const double sign = (side == 1 && negate_b) ? -1.0 : 1.0;
          if (is_scalar) {
            double acc = 0.0;
            for (double v : g) acc += v;
            d[0] += sign * acc;
          } else if (sign > 0) {
            accumulate(d, g);
          } else {
            for (size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
          }
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = n.saved[0];
        const Tensor& b = n.saved[1];
        const auto& av = a.values();
        const auto& bv = b.values();
        const bool a_scalar = a.size() == 1 && a.shape() != n.shape;
        const bool b_scalar = b.size() == 1 && b.shape() != n.shape;
        if (n.parents[0] >= 0) {
          auto& da = store.ensure(n.parents[0], a.size());
          if (a_scalar) {
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += g[i] * bv[b_scalar ? 0 : i];
            da[0] += acc;
          } else {
            for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[b_scalar ? 0 : i];
          }
        }
        if (n.parents[1] >= 0) {
          auto& db = store.ensure(n.parents[1], b.size());
          if (b_scalar) {
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += g[i] * av[a_scalar ? 0 : i];
            db[0] += acc;
          } else {
            for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[a_scalar ? 0 : i];
          }
        }
        break;
      }
      case OpKind::kSigmoid: {
        const auto& yv = n.saved[0].values();
        if (n.parents[0] >= 0) {
          auto& dx = store.ensure(n.parents[0], static_cast<int64_t>(g.size()));
          for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * yv[i] * (1.0 - yv[i]);
        }
        break;
      }
      case OpKind::kTanh: {
        const auto& yv = n.saved[0].values();
        if (n.parents[0] >= 0) {
          auto& dx = store.ensure(n.parents[0], static_cast<int64_t>(g.size()));
          for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - yv[i] * yv[i]);
        }
        break;
      }
      case OpKind::kRelu: {
        const auto& xv = n.saved[0].values();
        if (n.parents[0] >= 0) {
          auto& dx = store.ensure(n.parents[0], static_cast<int64_t>(g.size()));
          for (size_t i = 0; i < g.size(); ++i) dx[i] += xv[i] > 0.0 ? g[i] : 0.0;
        }
        break;
      }
      case OpKind::kMatmul: {
        const Tensor& a = n.saved[0];
        const Tensor& b = n.saved[1];
        const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
        const auto& av = a.values();
        const auto& bv = b.values();
        if (n.parents[0] >= 0) {
          auto& da = store.ensure(n.parents[0], a.size());
          // dA = g . B^T
          for (int i = 0; i < m; ++i) {
            const double* grow = g.data() + static_cast<size_t>(i) * nn;
            double* darow = da.data() + static_cast<size_t>(i) * k;
            for (int p = 0; p < k; ++p) {
              const double* brow = bv.data() + static_cast<size_t>(p) * nn;
              double acc = 0.0;
              for (int j = 0; j < nn; ++j) acc += grow[j] * brow[j];
              darow[p] += acc;
            }
          }
        }
        if (n.parents[1] >= 0) {
          auto& db = store.ensure(n.parents[1], b.size());
          // dB = A^T . g
          for (int p = 0; p < k; ++p) {
            double* dbrow = db.data() + static_cast<size_t>(p) * nn;
            for (int i = 0; i < m; ++i) {
              const double aip = av[static_cast<size_t>(i) * k + p];
              const double* grow = g.data() + static_cast<size_t>(i) * nn;
              for (int j = 0; j < nn; ++j) dbrow[j] += aip * grow[j];
            }
          }
        }
        break;
      }
      case OpKind::kConv2d: {
        const Tensor& x = n.saved[0];
        const Tensor& w = n.saved[1];
        const int k = n.args[0], stride = n.args[1], pad_top = n.args[2],
                  pad_left = n.args[3], h = n.args[4], wdt = n.args[5], cin = n.args[6],
                  cout = n.args[7], out_h = n.args[8], out_w = n.args[9];
        const auto& xv = x.values();
        const auto& wv = w.values();
        std::vector<double>* dx = nullptr;
        std::vector<double>* dw = nullptr;
        if (n.parents[0] >= 0) dx = &store.ensure(n.parents[0], x.size());
        if (n.parents[1] >= 0) dw = &store.ensure(n.parents[1], w.size());
        if (n.parents[2] >= 0) {
          auto& db = store.ensure(n.parents[2], cout);
          for (int64_t p = 0; p < static_cast<int64_t>(out_h) * out_w; ++p) {
            const double* grow = g.data() + p * cout;
            for (int c = 0; c < cout; ++c) db[c] += grow[c];
          }
        }
        if (dx || dw) {
          for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
              const double* grow = g.data() + (static_cast<size_t>(oy) * out_w + ox) * cout;
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride + ky - pad_top;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox * stride + kx - pad_left;
                  if (ix < 0 || ix >= wdt) continue;
                  const size_t xoff = (static_cast<size_t>(iy) * wdt + ix) * cin;
                  const size_t woff = (static_cast<size_t>(ky) * k + kx) * cin * cout;
                  for (int ci = 0; ci < cin; ++ci) {
                    const double* wrow = wv.data() + woff + static_cast<size_t>(ci) * cout;
                    if (dx) {
                      double acc = 0.0;
                      for (int c = 0; c < cout; ++c) acc += grow[c] * wrow[c];
                      (*dx)[xoff + ci] += acc;
                    }
                    if (dw) {
                      const double xval = xv[xoff + ci];
                      double* dwrow = dw->data() + woff + static_cast<size_t>(ci) * cout;
                      for (int c = 0; c < cout; ++c) dwrow[c] += xval * grow[c];
                    }
                  }
                }
              }
            }
          }
        }
        break;
      }
      case OpKind::kUpsample2x: {
        if (n.parents[0] >= 0) {
          const Shape& xs = n.in_shapes[0];
          const int h = xs[0], w = xs[1], c = xs[2];
          auto& dx = store.ensure(n.parents[0], shape_numel(xs));
          for (int i = 0; i < 2 * h; ++i) {
            for (int j = 0; j < 2 * w; ++j) {
              const double* grow = g.data() + (static_cast<size_t>(i) * 2 * w + j) * c;
              double* dst = dx.data() + (static_cast<size_t>(i / 2) * w + j / 2) * c;
              for (int ch = 0; ch < c; ++ch) dst[ch] += grow[ch];
            }
          }
        }
        break;
      }
      case OpKind::kConcat: {
        const int axis = n.args[0];
        int64_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= n.shape[d];
        for (int d = axis + 1; d < static_cast<int>(n.shape.size()); ++d) inner *= n.shape[d];
        const int64_t axis_total = n.shape[axis];
        int64_t offset = 0;
        for (size_t pi = 0; pi < n.parents.size(); ++pi) {
          const Shape& ps = n.in_shapes[pi];
          const int64_t p_axis = ps[axis];
          if (n.parents[pi] >= 0) {
            auto& dp = store.ensure(n.parents[pi], shape_numel(ps));
            for (int64_t o = 0; o < outer; ++o) {
              const double* src = g.data() + (o * axis_total + offset) * inner;
              double* dst = dp.data() + o * p_axis * inner;
              for (int64_t i = 0; i < p_axis * inner; ++i) dst[i] += src[i];
            }
          }
          offset += p_axis;
        }
        break;
      }
      case OpKind::kSlice: {
        if (n.parents[0] >= 0) {
          const Shape& xs = n.in_shapes[0];
          const int axis = n.args[0], start = n.args[1], length = n.args[2];
          int64_t outer = 1, inner = 1;
          for (int d = 0; d < axis; ++d) outer *= xs[d];
          for (int d = axis + 1; d < static_cast<int>(xs.size()); ++d) inner *= xs[d];
          auto& dx = store.ensure(n.parents[0], shape_numel(xs));
          for (int64_t o = 0; o < outer; ++o) {
            const double* src = g.data() + o * length * inner;
            double* dst = dx.data() + (o * xs[axis] + start) * inner;
            for (int64_t i = 0; i < static_cast<int64_t>(length) * inner; ++i) dst[i] += src[i];
          }
        }
        break;
      }
      case OpKind::kGlobalAvgPool: {
        if (n.parents[0] >= 0) {
          const Shape& xs = n.in_shapes[0];
          const int h = xs[0], w = xs[1], c = xs[2];
          const double inv = 1.0 / (static_cast<double>(h) * w);
          auto& dx = store.ensure(n.parents[0], shape_numel(xs));
          for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
            double* dst = dx.data() + p * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += g[ch] * inv;
          }
        }
        break;
      }
      case OpKind::kReplicateSpatial: {
        if (n.parents[0] >= 0) {
          const int h = n.args[0], w = n.args[1];
          const int c = n.in_shapes[0][0];
          auto& dv = store.ensure(n.parents[0], c);
          for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
            const double* src = g.data() + p * c;
            for (int ch = 0; ch < c; ++ch) dv[ch] += src[ch];
          }
        }
        break;
      }
      case OpKind::kReshape: {
        if (n.parents[0] >= 0) {
          auto& dx = store.ensure(n.parents[0], shape_numel(n.in_shapes[0]));
          accumulate(dx, g);
        }
        break;
      }
      case OpKind::kMeanAll: {
        if (n.parents[0] >= 0) {
          const int64_t numel = shape_numel(n.in_shapes[0]);
          auto& dx = store.ensure(n.parents[0], numel);
          const double gn = g[0] / static_cast<double>(numel);
          for (auto& v : dx) v += gn;
        }
        break;
      }
    }
  }

  GradientMap out;
  for (size_t id = 0; id < nodes_.size(); ++id) {
    if (!store.live[id]) continue;
    out.grads_.emplace(static_cast<int>(id),
                       Tensor(nodes_[id].shape, std::move(store.slots[id])));
  }
  return out;
}

}  // namespace flowchroma
