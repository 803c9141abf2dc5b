#pragma once

#include <utility>
#include <vector>

#include "flowchroma/tensor.hpp"

namespace flowchroma::color {

/// Gamma-encoded sRGB frame, interleaved H x W x 3, channels in [0,1].
struct RgbFrame {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  double at(int i, int j, int c) const {
    return pixels[(static_cast<size_t>(i) * width + j) * 3 + c];
  }
  double& at(int i, int j, int c) {
    return pixels[(static_cast<size_t>(i) * width + j) * 3 + c];
  }
};

/// CIE La*b* frame stored as three planes: L in [0,100], a/b nominally
/// in [-128,127].
struct LabFrame {
  int height = 0;
  int width = 0;
  std::vector<double> l;
  std::vector<double> a;
  std::vector<double> b;

  size_t index(int i, int j) const { return static_cast<size_t>(i) * width + j; }
};

/// sRGB -> CIE La*b*, D65 white point, 2-degree observer.
/// Throws if any input channel falls outside [0,1].
LabFrame rgb_to_lab(const RgbFrame& f);

/// Inverse of rgb_to_lab; out-of-gamut results are clamped to [0,1].
RgbFrame lab_to_rgb(const LabFrame& f);

double srgb_to_linear(double c);
double linear_to_srgb(double c);

/// a*/b* values scaled into [-1,1] by x/128 (exact, 128 is a power of two).
Tensor normalize_ab(const Tensor& t);
Tensor denormalize_ab(const Tensor& t);
double normalize_ab(double x);
double denormalize_ab(double x);

/// Splits a frame sequence into a normalized luminance tensor [T,H,W,1]
/// (L/100) and chroma targets [T,H,W,2] (a/128, b/128).
std::pair<Tensor, Tensor> split_luminance(const std::vector<LabFrame>& frames);

/// Inverse of split_luminance.
std::vector<LabFrame> merge_luminance(const Tensor& lum, const Tensor& chroma);

}  // namespace flowchroma::color
