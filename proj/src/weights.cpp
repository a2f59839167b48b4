#include "tsup/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include "tsup/error.hpp"

namespace tsup {

namespace {

constexpr char kMagic[] = "TSUPW1\n";
constexpr std::size_t kMagicLen = 7;

static_assert(std::numeric_limits<float>::is_iec559);

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw IoError(source_ + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Mat Tensor::to_mat() const {
  std::size_t rows = 1, cols = 1;
  if (dims.size() == 1) {
    cols = dims[0];
  } else if (dims.size() == 2) {
    rows = dims[0];
    cols = dims[1];
  } else {
    throw ContractError("tensor '" + name + "' has " + std::to_string(dims.size()) + " dims; expected 1 or 2");
  }
  Mat m(rows, cols);
  for (std::size_t i = 0; i < data.size(); ++i) m.values()[i] = static_cast<double>(data[i]);
  return m;
}

Tensor Tensor::from_mat(const std::string& name, const Mat& m) {
  Tensor t;
  t.name = name;
  if (m.rows() == 1) {
    t.dims = {static_cast<std::uint32_t>(m.cols())};
  } else {
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  }
  t.data.reserve(m.size());
  for (double v : m.values()) t.data.push_back(static_cast<float>(v));
  return t;
}

std::string encode_tsupw1(const std::vector<Tensor>& tensors) {
  std::set<std::string> seen;
  std::string out(kMagic, kMagicLen);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    if (!seen.insert(t.name).second) throw ContractError("TSUPW1: duplicate tensor name '" + t.name + "'");
    if (t.name.size() > 0xFFFF) throw ContractError("TSUPW1: tensor name too long");
    if (t.dims.size() > 0xFF) throw ContractError("TSUPW1: too many dims in '" + t.name + "'");
    if (t.numel() != t.data.size()) {
      throw ContractError("TSUPW1: tensor '" + t.name + "' declares " + std::to_string(t.numel()) +
                          " values but holds " + std::to_string(t.data.size()));
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_le<std::uint32_t>(out, d);
    for (float f : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<Tensor> decode_tsupw1(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.take(kMagicLen, "magic") != std::string(kMagic, kMagicLen)) throw IoError(source + ": not a TSUPW1 file");
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<Tensor> out;
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    Tensor t;
    const auto len = r.get<std::uint16_t>("name length");
    t.name = r.take(len, "name");
    if (!seen.insert(t.name).second) throw IoError(source + ": duplicate tensor name '" + t.name + "'");
    const auto ndim = r.get<std::uint8_t>("ndim");
    for (std::uint8_t i = 0; i < ndim; ++i) t.dims.push_back(r.get<std::uint32_t>("dims"));
    const std::size_t n = t.numel();
    if ((bytes.size() - r.pos()) / 4 < n) {
      throw IoError(source + ": tensor '" + t.name + "' declares " + std::to_string(n) + " values past end of file");
    }
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.data[i] = std::bit_cast<float>(r.get<std::uint32_t>("payload"));
    out.push_back(std::move(t));
  }
  if (!r.done()) throw IoError(source + ": " + std::to_string(bytes.size() - r.pos()) + " trailing bytes");
  return out;
}

void write_tsupw1(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  const std::string bytes = encode_tsupw1(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Tensor> read_tsupw1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tsupw1(bytes, path.string());
}

}  // namespace tsup
