#include "sgol/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "sgol/tensor.hpp"

namespace sgol {

namespace {

void append_u16(std::string& b, std::uint16_t v) {
  for (int k = 0; k < 2; ++k) b.push_back(char((v >> (8 * k)) & 0xff));
}

void append_u32(std::string& b, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) b.push_back(char((v >> (8 * k)) & 0xff));
}

void append_u64(std::string& b, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) b.push_back(char((v >> (8 * k)) & 0xff));
}

struct Cursor {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (buf.size() - pos < n) throw TensorError("checkpoint: truncated file");
  }
  std::uint64_t uint(std::size_t bytes) {
    need(bytes);
    std::uint64_t v = 0;
    for (std::size_t k = 0; k < bytes; ++k)
      v |= std::uint64_t(static_cast<unsigned char>(buf[pos + k])) << (8 * k);
    pos += bytes;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& registry) {
  std::string buf;
  buf += "SGOL";
  append_u32(buf, 1);
  if (registry.params().size() > 0xffffffffull)
    throw TensorError("checkpoint: too many parameters");
  append_u32(buf, static_cast<std::uint32_t>(registry.params().size()));
  for (const Param& p : registry.params()) {
    if (p.name.size() > 0xffff)
      throw TensorError("checkpoint: parameter name too long: " + p.name);
    append_u16(buf, static_cast<std::uint16_t>(p.name.size()));
    buf += p.name;
    const Shape& shape = p.tensor.shape();
    if (shape.size() > 0xff)
      throw TensorError("checkpoint: rank too large: " + p.name);
    buf.push_back(char(shape.size()));
    for (std::size_t dim : shape) {
      if (dim > 0xffffffffull)
        throw TensorError("checkpoint: dimension too large: " + p.name);
      append_u32(buf, static_cast<std::uint32_t>(dim));
    }
    for (double v : p.tensor.data())
      append_u64(buf, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorError("checkpoint: cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) throw TensorError("checkpoint: write failed: " + path);
}

namespace {

struct RawParam {
  std::string name;
  Shape shape;
  std::size_t numel = 0;
  std::size_t value_offset = 0;  // byte position of the first double
};

/// Validates the whole file structure (magic, version, duplicate names,
/// truncation, trailing bytes) and locates every parameter's values.
std::vector<RawParam> parse_records(const std::string& buf) {
  Cursor c{buf};
  if (c.str(4) != "SGOL") throw TensorError("checkpoint: bad magic");
  const std::uint64_t version = c.uint(4);
  if (version != 1)
    throw TensorError("checkpoint: unsupported version " +
                      std::to_string(version));
  const std::uint64_t count = c.uint(4);
  std::vector<RawParam> records;
  std::unordered_set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    RawParam rec;
    rec.name = c.str(c.uint(2));
    if (!seen.insert(rec.name).second)
      throw TensorError("checkpoint: duplicate parameter: " + rec.name);
    rec.shape.resize(c.uint(1));
    rec.numel = 1;
    for (std::size_t& dim : rec.shape) {
      dim = c.uint(4);
      rec.numel *= dim;
    }
    rec.value_offset = c.pos;
    c.need(rec.numel * 8);
    c.pos += rec.numel * 8;
    records.push_back(std::move(rec));
  }
  if (c.pos != buf.size())
    throw TensorError("checkpoint: trailing bytes after last parameter");
  return records;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError("checkpoint: cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void copy_values(const std::string& buf, const RawParam& rec, Tensor& t) {
  Cursor c{buf, rec.value_offset};
  std::vector<double>& dst = t.data();
  for (std::size_t k = 0; k < rec.numel; ++k)
    dst[k] = std::bit_cast<double>(c.uint(8));
}

}  // namespace

void load_checkpoint(const std::string& path, ParamRegistry& registry) {
  const std::string buf = read_file(path);
  std::vector<RawParam> records = parse_records(buf);
  if (records.size() != registry.params().size())
    throw TensorError("checkpoint: file holds " +
                      std::to_string(records.size()) +
                      " parameters, registry has " +
                      std::to_string(registry.params().size()));
  for (const RawParam& rec : records) {
    Tensor* t = registry.find(rec.name);
    if (t == nullptr)
      throw TensorError("checkpoint: registry has no parameter " + rec.name);
    if (t->shape() != rec.shape)
      throw TensorError("checkpoint: shape mismatch for " + rec.name +
                        ": file " + shape_str(rec.shape) + ", registry " +
                        shape_str(t->shape()));
    copy_values(buf, rec, *t);
  }
}

std::size_t load_checkpoint_overlap(const std::string& path,
                                    ParamRegistry& registry) {
  const std::string buf = read_file(path);
  std::size_t copied = 0;
  for (const RawParam& rec : parse_records(buf)) {
    Tensor* t = registry.find(rec.name);
    if (t == nullptr || t->shape() != rec.shape) continue;
    copy_values(buf, rec, *t);
    ++copied;
  }
  return copied;
}

}  // namespace sgol
