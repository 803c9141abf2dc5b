#include <cstring>
#include <fstream>
#include <stdexcept>

#include "flowchroma/model.hpp"

namespace flowchroma {

namespace {

constexpr char kMagic[4] = {'F', 'C', 'H', 'K'};
constexpr uint32_t kFormatVersion = 1;

// All multi-byte fields are little-endian on disk.
void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_i32(std::ostream& os, int32_t v) { put_u32(os, static_cast<uint32_t>(v)); }

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint truncated");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

int32_t get_i32(std::istream& is) { return static_cast<int32_t>(get_u32(is)); }

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint truncated");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(FlowChromaModel& model, int64_t step,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  put_u32(os, kFormatVersion);
  const ModelConfig& c = model.config;
  put_i32(os, c.T);
  put_i32(os, c.H);
  put_i32(os, c.W);
  put_i32(os, c.encoder_channels);
  put_i32(os, c.global_dim);
  put_i32(os, c.lstm_hidden);
  put_i32(os, c.desk_scale ? 1 : 0);
  put_i32(os, c.lstm_ablated ? 1 : 0);
  put_u32(os, static_cast<uint32_t>(step));

  auto params = model.parameters();
  put_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& shape = p.value->shape();
    put_u32(os, static_cast<uint32_t>(shape.size()));
    for (int d : shape) put_u32(os, static_cast<uint32_t>(d));
    for (double v : p.value->values()) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path.string());
  const uint32_t version = get_u32(is);
  if (version != kFormatVersion)
    throw std::runtime_error("unsupported checkpoint format version " +
                             std::to_string(version));
  ModelConfig c;
  c.T = get_i32(is);
  c.H = get_i32(is);
  c.W = get_i32(is);
  c.encoder_channels = get_i32(is);
  c.global_dim = get_i32(is);
  c.lstm_hidden = get_i32(is);
  c.desk_scale = get_i32(is) != 0;
  c.lstm_ablated = get_i32(is) != 0;
  const uint32_t step = get_u32(is);

  LoadedCheckpoint out{FlowChromaModel::init(c, /*seed=*/0), static_cast<int64_t>(step)};
  auto params = out.model.parameters();
  const uint32_t count = get_u32(is);
  if (count != params.size())
    throw std::runtime_error("checkpoint parameter count " + std::to_string(count) +
                             " does not match model (" + std::to_string(params.size()) + ")");
  for (auto& p : params) {
    const uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint truncated");
    if (name != p.name)
      throw std::runtime_error("checkpoint parameter '" + name +
                               "' does not match expected '" + p.name + "'");
    const uint32_t rank = get_u32(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(get_u32(is));
    if (shape != p.value->shape())
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                               shape_str(shape) + ", expected " +
                               shape_str(p.value->shape()));
    std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : values) v = get_f64(is);
    *p.value = Tensor(shape, std::move(values));
  }
  return out;
}

}  // namespace flowchroma
