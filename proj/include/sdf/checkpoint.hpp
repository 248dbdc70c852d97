// SPDX-License-Identifier: Apache-2.0
//
// "SDFCKPT1" parameter checkpoints.
//
//   magic    8 bytes  "SDFCKPT1"
//   version  u32      (1)
//   hlen     u32      length of the header text
//   header   hlen bytes UTF-8, key=value lines (may be empty)
//   sections until end of file, each:
//     name length u16, UTF-8 name, shape rank u8, dims u32[rank],
//     payload f32[prod(dims)] row-major
//
// All integers and floats are little-endian.
#pragma once

#include "sdf/autodiff.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace sdf::ckpt {

inline constexpr char kMagic[8] = {'S', 'D', 'F', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kVersion = 1;

struct Section {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::string header;
  std::vector<Section> sections;

  const Section* find(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::string bytes) : b_(std::move(bytes)) {}

  bool done() const { return pos_ == b_.size(); }
  std::uint64_t pos() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(b_[pos_]) | (static_cast<std::uint8_t>(b_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string b_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

inline std::string encode(const Checkpoint& c) {
  std::string out(kMagic, kMagic + 8);
  detail::put_u32(out, kVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(c.header.size()));
  out += c.header;
  for (const auto& s : c.sections) {
    if (s.name.size() > 0xffff) throw InvalidArgument("checkpoint: section name too long");
    if (s.dims.size() > 0xff) throw InvalidArgument("checkpoint: shape rank too large");
    std::size_t count = 1;
    for (auto d : s.dims) count *= d;
    if (count != s.data.size()) throw InvalidArgument("checkpoint: section payload/shape mismatch: " + s.name);
    detail::put_u16(out, static_cast<std::uint16_t>(s.name.size()));
    out += s.name;
    out.push_back(static_cast<char>(s.dims.size()));
    for (auto d : s.dims) detail::put_u32(out, d);
    for (float f : s.data) detail::put_f32(out, f);
  }
  return out;
}

inline Checkpoint decode(std::string bytes) {
  detail::Reader r(std::move(bytes));
  const std::string magic = r.str(8, "magic");
  if (magic != std::string(kMagic, 8)) throw FormatError("bad checkpoint magic", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);
  Checkpoint c;
  const std::uint32_t hlen = r.u32("header length");
  c.header = r.str(hlen, "header");
  while (!r.done()) {
    Section s;
    const std::uint16_t nlen = r.u16("section name length");
    s.name = r.str(nlen, "section name");
    const std::uint8_t rank = r.u8("shape rank");
    std::uint64_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      const std::uint64_t at = r.pos();
      s.dims.push_back(r.u32("dims"));
      count *= s.dims.back();
      if (count > (std::uint64_t{1} << 34)) throw FormatError("dimension overflow in " + s.name, at);
    }
    r.need(static_cast<std::size_t>(count * 4), "payload");
    s.data.resize(static_cast<std::size_t>(count));
    for (auto& f : s.data) f = r.f32("payload");
    c.sections.push_back(std::move(s));
  }
  return c;
}

inline void write(const std::string& path, const Checkpoint& c) { detail::write_file(path, encode(c)); }
inline Checkpoint read(const std::string& path) { return decode(detail::read_file(path)); }

/// One section per parameter, in store order.
inline void append_params(Checkpoint& c, const ad::ParamStore& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry({i});
    Section s;
    s.name = e.name;
    for (auto d : e.shape) s.dims.push_back(static_cast<std::uint32_t>(d));
    const auto v = store.values({i});
    s.data.assign(v.begin(), v.end());
    c.sections.push_back(std::move(s));
  }
}

/// Fill every parameter of `store` from same-named sections; shapes must match.
inline void load_params(const Checkpoint& c, ad::ParamStore& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry({i});
    const Section* s = c.find(e.name);
    if (!s) throw InvalidArgument("checkpoint: missing parameter section " + e.name);
    if (s->dims.size() != e.shape.size() ||
        !std::equal(e.shape.begin(), e.shape.end(), s->dims.begin(),
                    [](std::size_t a, std::uint32_t b) { return a == b; }))
      throw InvalidArgument("checkpoint: shape mismatch for " + e.name);
    auto v = store.values({i});
    std::copy(s->data.begin(), s->data.end(), v.begin());
  }
  store.bump_version();
}

// ---------------------------------------------------------------------------
// key=value text, shared by checkpoint headers and run configs.

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Blank lines and '#' comments are ignored.
inline KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("key=value: missing '=' on line " + std::to_string(lineno));
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace sdf::ckpt
