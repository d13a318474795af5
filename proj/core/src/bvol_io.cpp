#include "uqvol/bvol_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace uqvol {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw TruncatedPayload("file ends mid-record");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes[pos++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[pos++])) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos++])) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

struct ParsedBvol {
  BvolHeader header;
  std::vector<double> values;
};

ParsedBvol parse_bvol(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes};
  if (bytes.size() < 4 || bytes.compare(0, 4, "BVOL") != 0)
    throw BadMagic("not a BVOL file: " + path);
  r.pos = 4;
  ParsedBvol p;
  p.header.version = r.u16();
  if (p.header.version != kBvolVersion)
    throw UnsupportedVersion("unsupported BVOL version in " + path);
  p.header.dtype = r.u8();
  if (p.header.dtype != kBvolF32 && p.header.dtype != kBvolU8)
    throw BadConfig("unknown BVOL dtype in " + path);
  const std::uint8_t ndim = r.u8();
  if (ndim < 1 || ndim > 4) throw BadConfig("BVOL ndim out of range in " + path);
  p.header.dims.resize(ndim);
  std::uint64_t count = 1;
  for (auto& d : p.header.dims) {
    d = r.u32();
    count *= d;
  }
  const std::size_t esize = p.header.dtype == kBvolF32 ? 4 : 1;
  if (bytes.size() - r.pos != count * esize)
    throw TruncatedPayload("BVOL payload size mismatch in " + path);
  p.values.resize(count);
  if (p.header.dtype == kBvolF32) {
    for (auto& v : p.values) v = static_cast<double>(r.f32());
  } else {
    for (auto& v : p.values) v = static_cast<double>(r.u8());
  }
  return p;
}

std::string header_bytes(const BvolHeader& h) {
  std::string out = "BVOL";
  put_u16(out, h.version);
  out.push_back(static_cast<char>(h.dtype));
  out.push_back(static_cast<char>(h.dims.size()));
  for (std::uint32_t d : h.dims) put_u32(out, d);
  return out;
}

}  // namespace

std::uint64_t bvol_payload_bytes(const BvolHeader& h) {
  std::uint64_t count = 1;
  for (std::uint32_t d : h.dims) count *= d;
  return count * (h.dtype == kBvolF32 ? 4u : 1u);
}

BvolHeader read_bvol_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "BVOL", 4) != 0)
    throw BadMagic("not a BVOL stream");
  auto get = [&in](std::size_t n) {
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw TruncatedPayload("BVOL header ends early");
    return s;
  };
  BvolHeader h;
  const std::string v = get(2);
  h.version = static_cast<std::uint16_t>(static_cast<std::uint8_t>(v[0]) |
                                         (static_cast<std::uint8_t>(v[1]) << 8));
  if (h.version != kBvolVersion) throw UnsupportedVersion("unsupported BVOL version");
  h.dtype = static_cast<std::uint8_t>(get(1)[0]);
  const auto ndim = static_cast<std::uint8_t>(get(1)[0]);
  h.dims.resize(ndim);
  for (auto& d : h.dims) {
    const std::string b = get(4);
    d = 0;
    for (int i = 0; i < 4; ++i)
      d |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]))
           << (8 * i);
  }
  return h;
}

void write_bvol_header(std::ostream& out, const BvolHeader& h) {
  const std::string bytes = header_bytes(h);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_bvol(const Volume& v, const std::string& path) {
  BvolHeader h;
  h.dtype = kBvolF32;
  h.dims = {static_cast<std::uint32_t>(v.shape[0]), static_cast<std::uint32_t>(v.shape[1]),
            static_cast<std::uint32_t>(v.shape[2]), static_cast<std::uint32_t>(v.shape[3])};
  std::string out = header_bytes(h);
  out.reserve(out.size() + static_cast<std::size_t>(v.size()) * 4);
  for (double x : v.data) put_f32(out, static_cast<float>(x));
  atomic_write_file(path, out);
}

void write_bvol(const LabelVolume& v, const std::string& path) {
  BvolHeader h;
  h.dtype = kBvolU8;
  h.dims = {static_cast<std::uint32_t>(v.shape[0]), static_cast<std::uint32_t>(v.shape[1]),
            static_cast<std::uint32_t>(v.shape[2])};
  std::string out = header_bytes(h);
  out.reserve(out.size() + static_cast<std::size_t>(v.size()));
  for (std::uint8_t x : v.data) out.push_back(static_cast<char>(x));
  atomic_write_file(path, out);
}

Volume read_bvol_volume(const std::string& path) {
  ParsedBvol p = parse_bvol(path);
  if (p.header.dtype != kBvolF32)
    throw BadConfig("expected a float32 BVOL volume: " + path);
  if (p.header.dims.size() == 3) p.header.dims.push_back(1);
  if (p.header.dims.size() != 4)
    throw BadConfig("expected 3 or 4 dims in volume BVOL: " + path);
  Volume v(p.header.dims[0], p.header.dims[1], p.header.dims[2], p.header.dims[3]);
  v.data = std::move(p.values);
  return v;
}

LabelVolume read_bvol_label(const std::string& path) {
  const ParsedBvol p = parse_bvol(path);
  if (p.header.dtype != kBvolU8)
    throw BadConfig("expected a uint8 BVOL label volume: " + path);
  if (p.header.dims.size() != 3)
    throw BadConfig("expected 3 dims in label BVOL: " + path);
  LabelVolume v(p.header.dims[0], p.header.dims[1], p.header.dims[2]);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    if (p.values[i] != 0.0 && p.values[i] != 1.0)
      throw BadConfig("label BVOL contains values other than 0/1: " + path);
    v.data[i] = static_cast<std::uint8_t>(p.values[i]);
  }
  return v;
}

Volume read_bvol_any(const std::string& path) {
  ParsedBvol p = parse_bvol(path);
  if (p.header.dims.size() == 3) p.header.dims.push_back(1);
  if (p.header.dims.size() != 4)
    throw BadConfig("expected 3 or 4 dims in BVOL: " + path);
  Volume v(p.header.dims[0], p.header.dims[1], p.header.dims[2], p.header.dims[3]);
  v.data = std::move(p.values);
  return v;
}

void save_checkpoint(const ModelState& m, const std::string& path) {
  std::string out = "BVCK";
  put_u16(out, 1);
  const std::string header = arch_to_json(m.cfg);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  put_u32(out, static_cast<std::uint32_t>(m.params.size()));
  for (const auto& p : m.params) {
    put_u16(out, static_cast<std::uint16_t>(p.path.size()));
    out += p.path;
    out.push_back(static_cast<char>(p.value.shape.size()));
    for (i64 d : p.value.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double x : p.value.data) put_f32(out, static_cast<float>(x));
  }
  atomic_write_file(path, out);
}

ModelState load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes};
  if (bytes.size() < 4 || bytes.compare(0, 4, "BVCK") != 0)
    throw BadMagic("not a checkpoint file: " + path);
  r.pos = 4;
  const std::uint16_t version = r.u16();
  if (version != 1) throw UnsupportedVersion("unsupported checkpoint version");
  const std::uint32_t header_len = r.u32();
  const std::string header = r.raw(header_len);
  const ArchConfig cfg = arch_from_json(header);

  Rng scratch(0);
  ModelState m = build(cfg, scratch);
  const std::uint32_t entries = r.u32();
  if (entries != m.params.size())
    throw BadConfig("checkpoint parameter count does not match architecture");
  for (std::uint32_t e = 0; e < entries; ++e) {
    const std::uint16_t path_len = r.u16();
    const std::string ppath = r.raw(path_len);
    const std::uint8_t ndim = r.u8();
    std::vector<i64> shape(ndim);
    for (auto& d : shape) d = static_cast<i64>(r.u32());
    Tensor& t = m.param(ppath);
    if (t.shape != shape)
      throw BadConfig("checkpoint tensor shape mismatch at " + ppath);
    for (i64 i = 0; i < t.size(); ++i) t[i] = static_cast<double>(r.f32());
  }
  if (r.pos != bytes.size()) throw TruncatedPayload("trailing bytes in checkpoint");
  return m;
}

void write_pgm_slice(const Volume& v, int axis, i64 index, const std::string& path) {
  if (axis < 0 || axis > 2) throw BadConfig("slice axis must be 0, 1, or 2");
  if (index < 0 || index >= v.shape[static_cast<std::size_t>(axis)])
    throw BadConfig("slice index out of range");
  if (v.shape[3] != 1) throw BadConfig("slice export expects a single channel");

  // Remaining two axes become (rows, cols) in axis order.
  std::array<i64, 2> rest{};
  int k = 0;
  for (int a = 0; a < 3; ++a) {
    if (a != axis) rest[static_cast<std::size_t>(k++)] = v.shape[static_cast<std::size_t>(a)];
  }
  double lo = v.data[0], hi = v.data[0];
  for (double x : v.data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;

  std::ostringstream out;
  out << "P5\n" << rest[1] << " " << rest[0] << "\n255\n";
  for (i64 r0 = 0; r0 < rest[0]; ++r0) {
    for (i64 c0 = 0; c0 < rest[1]; ++c0) {
      i64 idx[3];
      int j = 0;
      for (int a = 0; a < 3; ++a) {
        if (a == axis)
          idx[a] = index;
        else
          idx[a] = (j++ == 0) ? r0 : c0;
      }
      const double x = v.at(idx[0], idx[1], idx[2], 0);
      out.put(static_cast<char>(std::lround((x - lo) * scale)));
    }
  }
  atomic_write_file(path, out.str());
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace uqvol
