#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flowchroma/colorspace.hpp"
#include "flowchroma/tensor.hpp"

namespace flowchroma::data {

/// A sequence of La*b* frames with shared dimensions.
struct LabVideoClip {
  std::vector<color::LabFrame> frames;
  std::string source_id;
  double fps = 24.0;  // informational only

  int length() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames[0].height; }
  int width() const { return frames.empty() ? 0 : frames[0].width; }
};

/// Moving-shape scene description. Unset colors/positions are drawn from the
/// spec seed, so per-clip seeds yield varied but reproducible clips.
struct SceneObject {
  enum class Shape { kRect, kDisk };
  Shape shape = Shape::kDisk;
  std::optional<std::array<double, 3>> color;    // sRGB in [0,1]; random if unset
  std::array<double, 2> velocity{0.0, 0.0};      // px/frame (x, y)
  double size = 4.0;                             // disk radius or rect half-side
  std::optional<std::array<double, 2>> start;    // center (x, y); random if unset
};

struct SyntheticSceneSpec {
  int width = 64;
  int height = 64;
  int frame_count = 5;
  uint64_t seed = 0;
  std::optional<std::array<double, 3>> background;  // random if unset
  std::vector<SceneObject> objects;
  std::vector<int> scene_cuts;  // frame indices where the scene is re-randomized

  static SyntheticSceneSpec from_json_file(const std::filesystem::path& path);
  static SyntheticSceneSpec from_json_text(const std::string& text);
  void validate() const;
};

/// Deterministic hard-edged render; colors are quantized to 8-bit sRGB so
/// disk round-trips are exact.
std::vector<color::RgbFrame> render_scene(const SyntheticSceneSpec& spec);

LabVideoClip generate_clip(const SyntheticSceneSpec& spec);

/// Directory of zero-padded frames (frame_00000.png, frame_00001.png, ...).
LabVideoClip load_clip(const std::filesystem::path& dir);
void save_clip(const LabVideoClip& clip, const std::filesystem::path& dir);

struct TrainingExample {
  Tensor lum;     // [T,H,W,1]
  Tensor chroma;  // [T,H,W,2]
};

/// Window slice [start, start+T) split into normalized inputs and targets.
TrainingExample to_training_example(const LabVideoClip& clip, int window, int start);

struct ManifestEntry {
  std::string path;  // clip directory relative to the manifest
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::string> tags;

  bool has_tag(const std::string& tag) const;
};

struct Manifest {
  int version = 1;
  std::vector<ManifestEntry> clips;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

}  // namespace flowchroma::data
