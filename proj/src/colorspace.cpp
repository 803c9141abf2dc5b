#include "flowchroma/colorspace.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace flowchroma::color {

namespace {

// D65 reference white for the 2-degree observer, Y normalized to 1.
constexpr double kXn = 0.95047;
constexpr double kYn = 1.0;
constexpr double kZn = 1.08883;

// delta = 6/29; the cube-root branch switches at delta^3.
constexpr double kDelta = 6.0 / 29.0;
constexpr double kDelta3 = kDelta * kDelta * kDelta;

double lab_f(double t) {
  if (t > kDelta3) return std::cbrt(t);
  return t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double t) {
  if (t > kDelta) return t * t * t;
  return 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

double srgb_to_linear(double c) {
  if (c <= 0.04045) return c / 12.92;
  return std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
  if (c <= 0.0031308) return 12.92 * c;
  return 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

LabFrame rgb_to_lab(const RgbFrame& f) {
  const size_t n = static_cast<size_t>(f.height) * f.width;
  if (f.pixels.size() != n * 3) {
    std::ostringstream os;
    os << "rgb frame " << f.height << "x" << f.width << " wants " << n * 3
       << " channel values, got " << f.pixels.size();
    throw std::invalid_argument(os.str());
  }
  LabFrame out;
  out.height = f.height;
  out.width = f.width;
  out.l.resize(n);
  out.a.resize(n);
  out.b.resize(n);
  for (size_t p = 0; p < n; ++p) {
    const double rs = f.pixels[p * 3 + 0];
    const double gs = f.pixels[p * 3 + 1];
    const double bs = f.pixels[p * 3 + 2];
    for (double c : {rs, gs, bs}) {
      if (!(c >= 0.0 && c <= 1.0)) {
        std::ostringstream os;
        os << "rgb channel value " << c << " outside [0,1] at pixel " << p;
        throw std::invalid_argument(os.str());
      }
    }
    const double r = srgb_to_linear(rs);
    const double g = srgb_to_linear(gs);
    const double b = srgb_to_linear(bs);
    const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    const double fx = lab_f(x / kXn);
    const double fy = lab_f(y / kYn);
    const double fz = lab_f(z / kZn);
    out.l[p] = 116.0 * fy - 16.0;
    out.a[p] = 500.0 * (fx - fy);
    out.b[p] = 200.0 * (fy - fz);
  }
  return out;
}

RgbFrame lab_to_rgb(const LabFrame& f) {
  const size_t n = static_cast<size_t>(f.height) * f.width;
  if (f.l.size() != n || f.a.size() != n || f.b.size() != n) {
    throw std::invalid_argument("lab frame planes do not match frame dimensions");
  }
  RgbFrame out;
  out.height = f.height;
  out.width = f.width;
  out.pixels.resize(n * 3);
  for (size_t p = 0; p < n; ++p) {
    const double fy = (f.l[p] + 16.0) / 116.0;
    const double fx = fy + f.a[p] / 500.0;
    const double fz = fy - f.b[p] / 200.0;
    const double x = kXn * lab_f_inv(fx);
    const double y = kYn * lab_f_inv(fy);
    const double z = kZn * lab_f_inv(fz);
    const double r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    const double g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    const double b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    out.pixels[p * 3 + 0] = clamp01(linear_to_srgb(r));
    out.pixels[p * 3 + 1] = clamp01(linear_to_srgb(g));
    out.pixels[p * 3 + 2] = clamp01(linear_to_srgb(b));
  }
  return out;
}

double normalize_ab(double x) { return x / 128.0; }
double denormalize_ab(double x) { return x * 128.0; }

Tensor normalize_ab(const Tensor& t) {
  return mul(t, Tensor::scalar(1.0 / 128.0));
}

Tensor denormalize_ab(const Tensor& t) {
  return mul(t, Tensor::scalar(128.0));
}

std::pair<Tensor, Tensor> split_luminance(const std::vector<LabFrame>& frames) {
  if (frames.empty()) throw std::invalid_argument("split_luminance: empty clip");
  const int t = static_cast<int>(frames.size());
  const int h = frames[0].height;
  const int w = frames[0].width;
  std::vector<double> lum(static_cast<size_t>(t) * h * w);
  std::vector<double> chroma(static_cast<size_t>(t) * h * w * 2);
  for (int ti = 0; ti < t; ++ti) {
    const LabFrame& fr = frames[ti];
    if (fr.height != h || fr.width != w)
      throw std::invalid_argument("split_luminance: frames differ in dimensions");
    const size_t n = static_cast<size_t>(h) * w;
    for (size_t p = 0; p < n; ++p) {
      lum[ti * n + p] = fr.l[p] / 100.0;
      chroma[(ti * n + p) * 2 + 0] = normalize_ab(fr.a[p]);
      chroma[(ti * n + p) * 2 + 1] = normalize_ab(fr.b[p]);
    }
  }
  return {Tensor(Shape{t, h, w, 1}, std::move(lum)),
          Tensor(Shape{t, h, w, 2}, std::move(chroma))};
}

std::vector<LabFrame> merge_luminance(const Tensor& lum, const Tensor& chroma) {
  if (lum.rank() != 4 || lum.dim(3) != 1)
    throw std::invalid_argument("merge_luminance: luminance must be [T,H,W,1], got " +
                                shape_str(lum.shape()));
  if (chroma.rank() != 4 || chroma.dim(3) != 2)
    throw std::invalid_argument("merge_luminance: chroma must be [T,H,W,2], got " +
                                shape_str(chroma.shape()));
  const int t = lum.dim(0), h = lum.dim(1), w = lum.dim(2);
  if (chroma.dim(0) != t || chroma.dim(1) != h || chroma.dim(2) != w)
    throw std::invalid_argument("merge_luminance: shape mismatch " + shape_str(lum.shape()) +
                                " vs " + shape_str(chroma.shape()));
  const auto& lv = lum.values();
  const auto& cv = chroma.values();
  std::vector<LabFrame> frames(t);
  const size_t n = static_cast<size_t>(h) * w;
  for (int ti = 0; ti < t; ++ti) {
    LabFrame& fr = frames[ti];
    fr.height = h;
    fr.width = w;
    fr.l.resize(n);
    fr.a.resize(n);
    fr.b.resize(n);
    for (size_t p = 0; p < n; ++p) {
      fr.l[p] = lv[ti * n + p] * 100.0;
      fr.a[p] = denormalize_ab(cv[(ti * n + p) * 2 + 0]);
      fr.b[p] = denormalize_ab(cv[(ti * n + p) * 2 + 1]);
    }
  }
  return frames;
}

}  // namespace flowchroma::color
