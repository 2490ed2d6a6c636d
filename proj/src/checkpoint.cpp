#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "leanres/network.hpp"

namespace leanres {

namespace {

constexpr char kMagic[4] = {'L', 'R', 'N', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void field(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void field(std::uint32_t v) {
    u32(4);
    u32(v);
  }
  void field(const std::vector<std::size_t>& values) {
    u32(static_cast<std::uint32_t>(4 * values.size()));
    for (auto v : values) u32(static_cast<std::uint32_t>(v));
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n)
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b[k]) << (8 * k);
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    return v;
  }
  std::string field_string(const char* what) {
    auto b = take(u32(what), what);
    return std::string(b.begin(), b.end());
  }
  std::uint32_t field_u32(const char* what) {
    if (u32(what) != 4) throw std::runtime_error(std::string("checkpoint field ") + what + " must be 4 bytes");
    return u32(what);
  }
  std::vector<std::size_t> field_list(const char* what) {
    const std::uint32_t len = u32(what);
    if (len % 4 != 0) throw std::runtime_error(std::string("checkpoint field ") + what + " is not a u32 list");
    std::vector<std::size_t> v;
    for (std::uint32_t k = 0; k < len / 4; ++k) v.push_back(u32(what));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NetworkWeights<float>& net) {
  Writer w;
  w.bytes(kMagic, 4);
  const NetworkConfig& c = net.config;
  w.field(to_string(c.kind));
  w.field(to_string(c.conv_kind));
  w.field(c.widths);
  w.field(c.steps);
  w.field(static_cast<std::uint32_t>(c.num_classes));
  w.field(static_cast<std::uint32_t>(c.in_channels));
  w.field(static_cast<std::uint32_t>(c.early_dense_blocks));
  visit_network(net, Visit::all, [&](const std::string&, std::span<const float> values) {
    w.u64(values.size());
    for (float v : values) w.f32(v);
  });
  return w.take();
}

NetworkWeights<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw std::runtime_error("not a checkpoint: bad magic bytes");
  NetworkConfig c;
  c.kind = parse_config_kind(r.field_string("kind"));
  c.conv_kind = parse_conv_kind(r.field_string("conv"));
  c.widths = r.field_list("widths");
  c.steps = r.field_list("steps");
  c.num_classes = r.field_u32("num_classes");
  c.in_channels = r.field_u32("in_channels");
  c.early_dense_blocks = r.field_u32("early_dense_blocks");

  NetworkWeights<float> net = build_network<float>(c, 0);
  visit_network(net, Visit::all, [&](const std::string& name, std::span<float> values) {
    const std::uint64_t count = r.u64(name.c_str());
    if (count != values.size())
      throw std::runtime_error("checkpoint array " + name + " has " + std::to_string(count) + " values, expected " +
                               std::to_string(values.size()));
    for (auto& v : values) v = std::bit_cast<float>(r.u32(name.c_str()));
  });
  if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkWeights<float>& net) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

NetworkWeights<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace leanres
