#include "mvstr/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mvstr/errors.hpp"

namespace mvstr {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Reads `count` whitespace-separated header tokens; returns the offset of the
// byte after the single whitespace character that ends the last token.
std::size_t header_tokens(const std::string& data, int count, std::vector<std::string>& tokens,
                          const std::string& path) {
  std::size_t pos = 0;
  for (int i = 0; i < count; ++i) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      --i;
      continue;
    }
    const auto start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) throw IoError(path + ": truncated header");
    tokens.push_back(data.substr(start, pos - start));
  }
  if (pos >= data.size()) throw IoError(path + ": missing pixel data");
  return pos + 1;
}

int parse_dim(const std::string& tok, const std::string& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw IoError("");
    return v;
  } catch (...) {
    throw IoError(path + ": bad dimension '" + tok + "'");
  }
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_ppm expects [3,H,W], got " + shape_str(image.shape()));
  }
  const auto H = image.dim(1);
  const auto W = image.dim(2);
  const auto v = image.to_vector();
  std::string bytes(static_cast<std::size_t>(H * W * 3), '\0');
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const double s = v[static_cast<std::size_t>((c * H + y) * W + x)];
        const long q = std::lround(std::clamp(s, 0.0, 1.0) * 255.0);
        bytes[static_cast<std::size_t>((y * W + x) * 3 + c)] = static_cast<char>(static_cast<unsigned char>(q));
      }
    }
  }
  auto out = open_out(path);
  out << "P6\n" << W << " " << H << "\n255\n";
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

Tensor read_ppm(const std::string& path, Precision p) {
  const auto data = slurp(path);
  std::vector<std::string> tok;
  const auto offset = header_tokens(data, 4, tok, path);
  if (tok[0] != "P6") throw IoError(path + ": not a binary PPM (P6)");
  const int W = parse_dim(tok[1], path);
  const int H = parse_dim(tok[2], path);
  if (tok[3] != "255") throw IoError(path + ": only maxval 255 is supported");
  const auto n = static_cast<std::size_t>(W) * H * 3;
  if (data.size() < offset + n) throw IoError(path + ": truncated pixel data");
  std::vector<double> v(n);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        const auto b = static_cast<unsigned char>(data[offset + (static_cast<std::size_t>(y) * W + x) * 3 + c]);
        v[(static_cast<std::size_t>(c) * H + y) * W + x] = b / 255.0;
      }
    }
  }
  return Tensor::from_vector({3, H, W}, std::span<const double>(v), p);
}

void write_pfm(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw DimensionError("write_pfm expects [H,W], got " + shape_str(map.shape()));
  const auto H = map.dim(0);
  const auto W = map.dim(1);
  const auto v = map.to_vector();
  std::string bytes(static_cast<std::size_t>(H * W * 4), '\0');
  std::size_t o = 0;
  for (std::int64_t y = H - 1; y >= 0; --y) {
    for (std::int64_t x = 0; x < W; ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v[static_cast<std::size_t>(y * W + x)]));
      for (int k = 0; k < 4; ++k) bytes[o++] = static_cast<char>((bits >> (8 * k)) & 0xFFu);
    }
  }
  auto out = open_out(path);
  out << "Pf\n" << W << " " << H << "\n-1.0\n";
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

Tensor read_pfm(const std::string& path, Precision p) {
  const auto data = slurp(path);
  std::vector<std::string> tok;
  const auto offset = header_tokens(data, 4, tok, path);
  if (tok[0] != "Pf") throw IoError(path + ": not a greyscale PFM (Pf)");
  const int W = parse_dim(tok[1], path);
  const int H = parse_dim(tok[2], path);
  double scale = 0;
  try {
    scale = std::stod(tok[3]);
  } catch (...) {
    throw IoError(path + ": bad scale '" + tok[3] + "'");
  }
  if (scale >= 0) throw IoError(path + ": big-endian PFM is not supported");
  const auto n = static_cast<std::size_t>(W) * H;
  if (data.size() < offset + 4 * n) throw IoError(path + ": truncated pixel data");
  std::vector<float> v(n);
  std::size_t o = offset;
  for (int y = H - 1; y >= 0; --y) {
    for (int x = 0; x < W; ++x) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[o++])) << (8 * k);
      v[static_cast<std::size_t>(y) * W + x] = std::bit_cast<float>(bits);
    }
  }
  return Tensor::from_vector({H, W}, std::span<const float>(v), p);
}

void write_pairs(const std::string& path, const std::vector<Pairing>& pairs) {
  auto out = open_out(path);
  for (const auto& p : pairs) {
    out << "ref " << p.ref << " srcs";
    for (int s : p.srcs) out << " " << s;
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<Pairing> read_pairs(const std::string& path) {
  std::istringstream in(slurp(path));
  std::vector<Pairing> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    Pairing p;
    std::string srcs;
    if (word != "ref" || !(ls >> p.ref >> srcs) || srcs != "srcs") {
      throw IoError(path + ":" + std::to_string(lineno) + ": expected 'ref <id> srcs <id> ...'");
    }
    int id = 0;
    while (ls >> id) p.srcs.push_back(id);
    if (!ls.eof()) throw IoError(path + ":" + std::to_string(lineno) + ": bad source id");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_ply(const std::string& path, const PointCloud& cloud) {
  if (cloud.has_colors() && cloud.colors.size() != cloud.points.size()) {
    throw UsageError("write_ply: colour count does not match point count");
  }
  std::string s = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                  "\nproperty float x\nproperty float y\nproperty float z\n";
  if (cloud.has_colors()) s += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  s += "end_header\n";
  char buf[64];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      auto r = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(cloud.points[i][k]),
                             std::chars_format::fixed);
      s.append(buf, r.ptr);
      s += k < 2 ? ' ' : (cloud.has_colors() ? ' ' : '\n');
    }
    if (cloud.has_colors()) {
      const auto& c = cloud.colors[i];
      s += std::to_string(c[0]) + " " + std::to_string(c[1]) + " " + std::to_string(c[2]) + "\n";
    }
  }
  auto out = open_out(path);
  out << s;
  if (!out) throw IoError("failed writing " + path);
}

PointCloud read_ply(const std::string& path) {
  std::istringstream in(slurp(path));
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw IoError(path + ": not a PLY file");
  std::size_t count = 0;
  std::vector<std::string> props;
  bool ascii = false;
  bool header_done = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (word == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex") throw IoError(path + ": unsupported element '" + name + "'");
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else if (word == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done || !ascii) throw IoError(path + ": only ASCII PLY is supported");
  auto index_of = [&](const std::string& n) {
    auto it = std::find(props.begin(), props.end(), n);
    return it == props.end() ? -1 : static_cast<int>(it - props.begin());
  };
  const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  if (ix < 0 || iy < 0 || iz < 0) throw IoError(path + ": missing x/y/z properties");
  const int ir = index_of("red"), ig = index_of("green"), ib = index_of("blue");
  const bool colors = ir >= 0 && ig >= 0 && ib >= 0;
  PointCloud cloud;
  cloud.points.reserve(count);
  std::vector<double> vals(props.size());
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw IoError(path + ": expected " + std::to_string(count) + " vertices");
    std::istringstream ls(line);
    for (auto& v : vals) {
      std::string tok;
      if (!(ls >> tok)) throw IoError(path + ": short vertex line " + std::to_string(i));
      float f = 0;
      auto r = std::from_chars(tok.data(), tok.data() + tok.size(), f);
      if (r.ec != std::errc()) throw IoError(path + ": bad number '" + tok + "'");
      v = f;
    }
    cloud.points.emplace_back(vals[static_cast<std::size_t>(ix)], vals[static_cast<std::size_t>(iy)],
                              vals[static_cast<std::size_t>(iz)]);
    if (colors) {
      cloud.colors.push_back({static_cast<std::uint8_t>(vals[static_cast<std::size_t>(ir)]),
                              static_cast<std::uint8_t>(vals[static_cast<std::size_t>(ig)]),
                              static_cast<std::uint8_t>(vals[static_cast<std::size_t>(ib)])});
    }
  }
  return cloud;
}

}  // namespace mvstr
