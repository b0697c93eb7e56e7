#include "plfp/archive.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "plfp/error.hpp"

namespace plfp {

namespace {

constexpr char kMagic[7] = {'P', 'L', 'F', 'P', 'W', 'A', '\n'};
constexpr std::uint8_t kVersion = 1;

void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    check(pos + n <= buf.size(), "archive: truncated file (need ", n, " bytes at offset ", pos, ")");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

std::uint8_t kind_code(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return 0;
    case LayerKind::relu: return 1;
    case LayerKind::maxpool: return 2;
    case LayerKind::global_maxpool: return 3;
    case LayerKind::linear: return 4;
  }
  return 255;
}

LayerKind kind_from_code(std::uint8_t code) {
  switch (code) {
    case 0: return LayerKind::conv;
    case 1: return LayerKind::relu;
    case 2: return LayerKind::maxpool;
    case 3: return LayerKind::global_maxpool;
    case 4: return LayerKind::linear;
  }
  fail("archive: unknown layer kind code ", static_cast<int>(code));
}

std::string encode(const ToyModel& m) {
  validate_model(m);
  std::string out;
  put_bytes(out, kMagic, sizeof(kMagic));
  put_u8(out, kVersion);
  put_u64(out, m.seed);
  put_u32(out, static_cast<std::uint32_t>(m.layers.size()));
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    const Tensor& w = m.params[i];
    put_u32(out, static_cast<std::uint32_t>(i));
    put_u8(out, kind_code(l.kind));
    std::uint32_t dims[4] = {0, 0, 0, 0};
    if (l.kind == LayerKind::conv) {
      dims[0] = static_cast<std::uint32_t>(l.c_out);
      dims[1] = static_cast<std::uint32_t>(l.c_in);
      dims[2] = dims[3] = static_cast<std::uint32_t>(l.k);
    } else if (l.kind == LayerKind::linear) {
      dims[0] = static_cast<std::uint32_t>(l.c_out);
      dims[1] = static_cast<std::uint32_t>(l.c_in);
      dims[2] = dims[3] = 1;
    }
    for (std::uint32_t d : dims) put_u32(out, d);
    put_u64(out, static_cast<std::uint64_t>(w.numel()));
    std::string payload;
    payload.reserve(w.numel() * 8);
    for (double v : w.data) put_f64(payload, v);
    out += payload;
    put_u64(out, fnv1a64(payload.data(), payload.size()));
  }
  return out;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_archive(const ToyModel& m, const std::string& path) {
  const std::string bytes = encode(m);
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "archive: cannot write '", path, "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  check(out.good(), "archive: write to '", path, "' failed");
}

ToyModel load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "archive: cannot open '", path, "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{buf};

  r.need(sizeof(kMagic));
  check(std::memcmp(buf.data(), kMagic, sizeof(kMagic)) == 0, "archive: '", path,
        "' is not a weight archive (bad magic)");
  r.pos = sizeof(kMagic);
  const std::uint8_t version = r.u8();
  check(version == kVersion, "archive: unsupported version ", static_cast<int>(version));

  ToyModel m;
  m.seed = r.u64();
  const std::uint32_t n_layers = r.u32();
  m.layers.resize(n_layers);
  m.params.resize(n_layers);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const std::uint32_t layer_id = r.u32();
    check(layer_id == i, "archive: layer ids out of order (", layer_id, " at position ", i, ")");
    LayerSpec l;
    l.kind = kind_from_code(r.u8());
    std::uint32_t dims[4];
    for (std::uint32_t& d : dims) d = r.u32();
    const std::uint64_t count = r.u64();
    const std::size_t payload_off = r.pos;
    r.need(count * 8);
    Tensor w;
    if (l.kind == LayerKind::conv) {
      l.c_out = static_cast<int>(dims[0]);
      l.c_in = static_cast<int>(dims[1]);
      l.k = static_cast<int>(dims[2]);
      w = Tensor({l.c_out, l.c_in, l.k, static_cast<int>(dims[3])});
    } else if (l.kind == LayerKind::linear) {
      l.c_out = static_cast<int>(dims[0]);
      l.c_in = static_cast<int>(dims[1]);
      w = Tensor({l.c_out, l.c_in});
    }
    check(w.numel() == count, "archive: layer ", i, " shape product ", w.numel(),
          " does not match payload length ", count);
    for (std::uint64_t t = 0; t < count; ++t) w.data[t] = r.f64();
    const std::uint64_t stored = r.u64();
    const std::uint64_t actual = fnv1a64(buf.data() + payload_off, count * 8);
    check(stored == actual, "archive: checksum mismatch at layer ", i);
    m.layers[i] = l;
    m.params[i] = std::move(w);
  }
  check(r.pos == buf.size(), "archive: ", buf.size() - r.pos, " trailing bytes");
  validate_model(m);
  return m;
}

std::uint64_t model_digest(const ToyModel& m) {
  const std::string bytes = encode(m);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace plfp
