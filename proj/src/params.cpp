#include "mvstr/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mvstr/checkpoint.hpp"

namespace mvstr {

Tensor ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw UsageError("duplicate parameter name '" + name + "'");
  if (value.precision() != precision_) value = value.to(precision_);
  value.set_requires_grad(true);
  items_.emplace_back(name, value);
  return value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw UsageError("unknown parameter '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& item : items_) {
    if (item.first == name) return true;
  }
  return false;
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& item : items_) n += item.second.numel();
  return n;
}

std::size_t ParamStore::assign_from(const std::vector<std::pair<std::string, Tensor>>& values,
                                    bool require_all) {
  std::size_t copied = 0;
  for (auto& [name, dst] : items_) {
    const Tensor* src = nullptr;
    for (const auto& v : values) {
      if (v.first == name) src = &v.second;
    }
    if (!src) {
      if (require_all) throw UsageError("missing parameter '" + name + "'");
      continue;
    }
    if (src->shape() != dst.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(src->shape()) +
                           ", expected " + shape_str(dst.shape()));
    }
    const auto vals = src->to_vector();
    dispatch(dst.precision(), [&]<class T>() {
      auto d = dst.mutable_data<T>();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(vals[i]);
    });
    ++copied;
  }
  return copied;
}

Tensor uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng, Precision p) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_vector(shape, std::span<const double>(v), p);
}

Tensor he_uniform(const Shape& shape, std::int64_t fan_in, std::mt19937_64& rng, Precision p) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  return uniform(shape, -bound, bound, rng, p);
}

// ---- checkpoint ----------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const std::vector<unsigned char>& buf, std::size_t& pos, const std::string& path) {
  if (pos + 4 > buf.size()) throw IoError("truncated checkpoint: " + path);
  const std::uint32_t v = static_cast<std::uint32_t>(buf[pos]) | (static_cast<std::uint32_t>(buf[pos + 1]) << 8) |
                          (static_cast<std::uint32_t>(buf[pos + 2]) << 16) |
                          (static_cast<std::uint32_t>(buf[pos + 3]) << 24);
  pos += 4;
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  for (const auto& [name, t] : params.items()) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.to_vector()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::size_t magic_len = sizeof(kCheckpointMagic) - 1;
  if (buf.size() < magic_len || std::memcmp(buf.data(), kCheckpointMagic, magic_len) != 0) {
    throw IoError("not a checkpoint (bad magic): " + path);
  }
  std::size_t pos = magic_len;
  std::vector<std::pair<std::string, Tensor>> out;
  while (pos < buf.size()) {
    const auto len = get_u32(buf, pos, path);
    if (pos + len > buf.size()) throw IoError("truncated checkpoint: " + path);
    std::string name(reinterpret_cast<const char*>(buf.data() + pos), len);
    pos += len;
    const auto rank = get_u32(buf, pos, path);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get_u32(buf, pos, path));
    std::vector<float> vals(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : vals) v = std::bit_cast<float>(get_u32(buf, pos, path));
    out.emplace_back(std::move(name), Tensor::from_buffer<float>(shape, std::move(vals)));
  }
  return out;
}

void load_checkpoint(ParamStore& params, const std::string& path) {
  params.assign_from(read_checkpoint(path), true);
}

}  // namespace mvstr
