#include "flowchroma/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "flowchroma/png_io.hpp"
#include "json.hpp"

namespace flowchroma::data {

namespace {

using nlohmann::json;

std::array<double, 3> parse_color(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument(what + " must be an [r,g,b] array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void check_color(const std::array<double, 3>& c, const std::string& what) {
  for (double v : c) {
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument(what + " channel " + std::to_string(v) +
                                  " outside [0,1]");
  }
}

double quantize8(double c) { return std::lround(c * 255.0) / 255.0; }

}  // namespace

SyntheticSceneSpec SyntheticSceneSpec::from_json_text(const std::string& text) {
  json j = json::parse(text);
  SyntheticSceneSpec spec;
  spec.width = j.at("width").get<int>();
  spec.height = j.at("height").get<int>();
  spec.frame_count = j.at("frames").get<int>();
  spec.seed = j.value("seed", 0ULL);
  if (j.contains("background") && !j["background"].is_null())
    spec.background = parse_color(j["background"], "background");
  if (j.contains("objects")) {
    for (const auto& jo : j["objects"]) {
      SceneObject obj;
      const std::string shape = jo.value("shape", "disk");
      if (shape == "disk") {
        obj.shape = SceneObject::Shape::kDisk;
      } else if (shape == "rect") {
        obj.shape = SceneObject::Shape::kRect;
      } else {
        throw std::invalid_argument("unknown object shape '" + shape + "'");
      }
      if (jo.contains("color") && !jo["color"].is_null())
        obj.color = parse_color(jo["color"], "object color");
      if (jo.contains("velocity")) {
        const auto& v = jo["velocity"];
        if (!v.is_array() || v.size() != 2)
          throw std::invalid_argument("object velocity must be [vx,vy]");
        obj.velocity = {v[0].get<double>(), v[1].get<double>()};
      }
      obj.size = jo.value("size", 4.0);
      if (jo.contains("start") && !jo["start"].is_null()) {
        const auto& s = jo["start"];
        if (!s.is_array() || s.size() != 2)
          throw std::invalid_argument("object start must be [x,y]");
        obj.start = std::array<double, 2>{s[0].get<double>(), s[1].get<double>()};
      }
      spec.objects.push_back(obj);
    }
  }
  if (j.contains("scene_cuts")) {
    for (const auto& c : j["scene_cuts"]) spec.scene_cuts.push_back(c.get<int>());
  }
  spec.validate();
  return spec;
}

SyntheticSceneSpec SyntheticSceneSpec::from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open scene spec: " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_json_text(buf.str());
}

void SyntheticSceneSpec::validate() const {
  if (width < 1 || height < 1)
    throw std::invalid_argument("scene dims " + std::to_string(width) + "x" +
                                std::to_string(height) + " are degenerate");
  if (frame_count < 1) throw std::invalid_argument("scene needs at least one frame");
  if (background) check_color(*background, "background");
  for (size_t i = 0; i < objects.size(); ++i) {
    const SceneObject& o = objects[i];
    if (o.color) check_color(*o.color, "object " + std::to_string(i) + " color");
    if (o.size <= 0.0)
      throw std::invalid_argument("object " + std::to_string(i) + " size must be positive");
    if (2.0 * o.size + 1.0 > std::min(width, height))
      throw std::invalid_argument("object " + std::to_string(i) +
                                  " does not fit inside the frame");
  }
  for (int cut : scene_cuts) {
    if (cut < 0 || cut >= frame_count)
      throw std::invalid_argument("scene cut at frame " + std::to_string(cut) +
                                  " outside clip of " + std::to_string(frame_count));
  }
}

namespace {

struct LiveObject {
  SceneObject::Shape shape;
  std::array<double, 3> color;
  std::array<double, 2> velocity;
  double size;
  std::array<double, 2> base;  // center at the current segment's first frame
};

double clamp_center(double v, double size, int dim) {
  return std::min(static_cast<double>(dim - 1) - size, std::max(size, v));
}

}  // namespace

std::vector<color::RgbFrame> render_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto draw = [&rng](double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(rng);
  };
  auto draw_color = [&] {
    return std::array<double, 3>{draw(0.05, 0.95), draw(0.05, 0.95), draw(0.05, 0.95)};
  };
  auto draw_position = [&](double size) {
    return std::array<double, 2>{draw(size, spec.width - 1.0 - size),
                                 draw(size, spec.height - 1.0 - size)};
  };

  std::array<double, 3> background = spec.background ? *spec.background : draw_color();
  std::vector<LiveObject> live;
  live.reserve(spec.objects.size());
  for (const SceneObject& o : spec.objects) {
    LiveObject lo;
    lo.shape = o.shape;
    lo.color = o.color ? *o.color : draw_color();
    lo.velocity = o.velocity;
    lo.size = o.size;
    lo.base = o.start ? *o.start : draw_position(o.size);
    live.push_back(lo);
  }

  std::set<int> cuts(spec.scene_cuts.begin(), spec.scene_cuts.end());
  std::vector<color::RgbFrame> frames;
  frames.reserve(spec.frame_count);
  int segment_start = 0;
  for (int t = 0; t < spec.frame_count; ++t) {
    if (t > 0 && cuts.count(t)) {
      // A cut replaces the scene: new background, colors and positions.
      background = draw_color();
      for (LiveObject& lo : live) {
        lo.color = draw_color();
        lo.base = draw_position(lo.size);
      }
      segment_start = t;
    }
    color::RgbFrame frame;
    frame.height = spec.height;
    frame.width = spec.width;
    frame.pixels.resize(static_cast<size_t>(spec.height) * spec.width * 3);
    const std::array<double, 3> bg = {quantize8(background[0]), quantize8(background[1]),
                                      quantize8(background[2])};

    struct Placed {
      const LiveObject* obj;
      double cx, cy;
      std::array<double, 3> color;
    };
    std::vector<Placed> placed;
    placed.reserve(live.size());
    for (const LiveObject& lo : live) {
      const double steps = static_cast<double>(t - segment_start);
      Placed p;
      p.obj = &lo;
      p.cx = clamp_center(lo.base[0] + steps * lo.velocity[0], lo.size, spec.width);
      p.cy = clamp_center(lo.base[1] + steps * lo.velocity[1], lo.size, spec.height);
      p.color = {quantize8(lo.color[0]), quantize8(lo.color[1]), quantize8(lo.color[2])};
      placed.push_back(p);
    }

    for (int i = 0; i < spec.height; ++i) {
      for (int j = 0; j < spec.width; ++j) {
        std::array<double, 3> px = bg;
        // later objects draw on top
        for (const Placed& p : placed) {
          bool inside = false;
          if (p.obj->shape == SceneObject::Shape::kDisk) {
            const double dx = j - p.cx, dy = i - p.cy;
            inside = dx * dx + dy * dy <= p.obj->size * p.obj->size;
          } else {
            inside = std::abs(j - p.cx) <= p.obj->size && std::abs(i - p.cy) <= p.obj->size;
          }
          if (inside) px = p.color;
        }
        frame.at(i, j, 0) = px[0];
        frame.at(i, j, 1) = px[1];
        frame.at(i, j, 2) = px[2];
      }
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

LabVideoClip generate_clip(const SyntheticSceneSpec& spec) {
  LabVideoClip clip;
  clip.source_id = "synthetic-" + std::to_string(spec.seed);
  for (const color::RgbFrame& f : render_scene(spec)) {
    clip.frames.push_back(color::rgb_to_lab(f));
  }
  return clip;
}

namespace {

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05d.png", index);
  return buf;
}

}  // namespace

LabVideoClip load_clip(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::runtime_error("clip directory does not exist: " + dir.string());
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      names.push_back(entry.path().filename().string());
  }
  if (names.empty()) throw std::runtime_error("no PNG frames in " + dir.string());
  std::sort(names.begin(), names.end());
  for (size_t i = 0; i < names.size(); ++i) {
    const std::string expected = frame_name(static_cast<int>(i));
    if (names[i] != expected)
      throw std::runtime_error("irregular frame numbering in " + dir.string() +
                               ": expected " + expected + ", found " + names[i]);
  }

  LabVideoClip clip;
  clip.source_id = dir.filename().string();
  for (const std::string& name : names) {
    const Image8 img = read_png_rgb8(dir / name);
    if (!clip.frames.empty() &&
        (img.height != clip.height() || img.width != clip.width())) {
      std::ostringstream os;
      os << "frame " << name << " is " << img.width << "x" << img.height
         << " but clip is " << clip.width() << "x" << clip.height();
      throw std::runtime_error(os.str());
    }
    color::RgbFrame rgb;
    rgb.height = img.height;
    rgb.width = img.width;
    rgb.pixels.resize(img.rgb.size());
    for (size_t i = 0; i < img.rgb.size(); ++i) rgb.pixels[i] = img.rgb[i] / 255.0;
    clip.frames.push_back(color::rgb_to_lab(rgb));
  }
  return clip;
}

void save_clip(const LabVideoClip& clip, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (clip.frames.empty()) throw std::invalid_argument("cannot save an empty clip");
  fs::create_directories(dir);
  for (int t = 0; t < clip.length(); ++t) {
    const color::RgbFrame rgb = color::lab_to_rgb(clip.frames[t]);
    Image8 img;
    img.height = rgb.height;
    img.width = rgb.width;
    img.rgb.resize(rgb.pixels.size());
    for (size_t i = 0; i < rgb.pixels.size(); ++i)
      img.rgb[i] = static_cast<uint8_t>(std::lround(rgb.pixels[i] * 255.0));
    write_png_rgb8(dir / frame_name(t), img);
  }
}

TrainingExample to_training_example(const LabVideoClip& clip, int window, int start) {
  if (window < 1 || start < 0 || start + window > clip.length())
    throw std::invalid_argument("training window [" + std::to_string(start) + "," +
                                std::to_string(start + window) +
                                ") out of range for clip of " +
                                std::to_string(clip.length()) + " frames");
  std::vector<color::LabFrame> slice(clip.frames.begin() + start,
                                     clip.frames.begin() + start + window);
  auto [lum, chroma] = color::split_luminance(slice);
  return {std::move(lum), std::move(chroma)};
}

bool ManifestEntry::has_tag(const std::string& tag) const {
  return std::find(tags.begin(), tags.end(), tag) != tags.end();
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
  json j;
  is >> j;
  Manifest m;
  m.version = j.value("version", 1);
  for (const auto& jc : j.at("clips")) {
    ManifestEntry e;
    e.path = jc.at("path").get<std::string>();
    e.frames = jc.at("frames").get<int>();
    e.height = jc.at("height").get<int>();
    e.width = jc.at("width").get<int>();
    if (jc.contains("tags")) {
      for (const auto& t : jc["tags"]) e.tags.push_back(t.get<std::string>());
    }
    m.clips.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  json j;
  j["version"] = manifest.version;
  j["clips"] = json::array();
  for (const ManifestEntry& e : manifest.clips) {
    json jc;
    jc["path"] = e.path;
    jc["frames"] = e.frames;
    jc["height"] = e.height;
    jc["width"] = e.width;
    jc["tags"] = e.tags;
    j["clips"].push_back(std::move(jc));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest: " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace flowchroma::data
