#include "das/checkpoint.hpp"

#include "das/errors.hpp"
#include "das/hash.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace das {
namespace {

constexpr unsigned char kMagic[4] = {'D', 'A', 'S', 'W'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::uint64_t get(int width) {
    if (pos_ + width > bytes_.size())
      throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos_));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_tensors(std::span<const Tensor* const> tensors) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t e : t->shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t->data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<Tensor> decode_tensors(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a DASW checkpoint");
  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u32();
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = r.f64();
    out.emplace_back(std::move(shape), std::move(data));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload at offset " + std::to_string(r.pos() + 4));
  return out;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t file_digest(const std::filesystem::path& path) { return fnv1a64(read_file_bytes(path)); }

void write_tensors(const std::filesystem::path& path, std::span<const Tensor* const> tensors) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Tensor> read_tensors(const std::filesystem::path& path) {
  try {
    return decode_tensors(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const auto params = net.parameters();
  write_tensors(path, params);
}

void load_checkpoint(Network& net, const std::filesystem::path& path) {
  auto tensors = read_tensors(path);
  auto params = net.parameters();
  if (tensors.size() != params.size())
    throw FormatError(path.string() + ": holds " + std::to_string(tensors.size()) + " tensors, network has " +
                      std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (tensors[i].shape() != params[i].tensor->shape())
      throw FormatError(path.string() + ": tensor " + std::to_string(i) + " shape " + shape_str(tensors[i].shape()) +
                        " does not match node " + std::to_string(params[i].node_id));
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].tensor = std::move(tensors[i]);
}

}  // namespace das
