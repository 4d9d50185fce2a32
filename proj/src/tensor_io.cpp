#include "grda/tensor_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

#include "grda/errors.hpp"

namespace grda {

namespace {

constexpr char kMagic[4] = {'G', 'R', 'D', 'A'};
constexpr std::uint8_t kDtypeF64 = 0;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n) {
    need(n);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("tensor container truncated at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kTensorFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("tensor name too long: " + name.substr(0, 32) + "...");
    }
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw FormatError("tensor '" + name + "' has too many dimensions");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    put_le<std::uint8_t>(out, kDtypeF64);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError("tensor '" + name + "' extent exceeds u32");
      }
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_tensors(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw FormatError("bad magic: not a GRDA tensor container");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kTensorFormatVersion) {
    throw VersionError("tensor container version " + std::to_string(version) +
                       ", expected " + std::to_string(kTensorFormatVersion));
  }
  const auto count = in.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = in.get<std::uint16_t>();
    std::string name(in.take(name_len));
    const auto dtype = in.get<std::uint8_t>();
    if (dtype != kDtypeF64) {
      throw FormatError("tensor '" + name + "' has unknown dtype code " + std::to_string(dtype));
    }
    const auto ndim = in.get<std::uint8_t>();
    Shape shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = in.get<std::uint32_t>();
      if (d == 0) throw FormatError("tensor '" + name + "' has a zero extent");
      if (numel > (bytes.size() / 8) / d) throw FormatError("tensor '" + name + "' larger than file");
      numel *= d;
    }
    std::vector<double> values(numel);
    for (double& v : values) v = std::bit_cast<double>(in.get<std::uint64_t>());
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!in.done()) throw FormatError("trailing bytes after tensor container");
  return out;
}

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_tensors(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("failed writing " + path.string());
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, std::string_view name) {
  for (const auto& nt : tensors) {
    if (nt.name == name) return nt.tensor;
  }
  throw FormatError("tensor container has no entry '" + std::string(name) + "'");
}

}  // namespace grda
