#include "sliceforge/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace sliceforge {

static_assert(std::endian::native == std::endian::little,
              "TSR1 payload is written with native little-endian floats");

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() const {
  if (dims_.empty() || dims_.size() > kMaxRank) {
    throw InvalidArgument("shape rank must be 1..4, got " + std::to_string(dims_.size()));
  }
  std::size_t count = 1;
  for (std::size_t d : dims_) {
    if (d == 0) throw InvalidArgument("shape dims must be positive: " + to_string());
    if (count > std::numeric_limits<std::size_t>::max() / d) {
      throw InvalidArgument("shape element count overflows: " + to_string());
    }
    count *= d;
  }
}

std::size_t Shape::numel() const {
  std::size_t count = 1;
  for (std::size_t d : dims_) count *= d;
  return count;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_.numel()) {
    throw InvalidArgument("value count " + std::to_string(data_.size()) +
                          " does not match shape " + shape_.to_string());
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw InvalidArgument("cannot reshape " + shape_.to_string() + " to " + shape.to_string());
  }
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value in ") + what);
}

Tensor tensor_create(const Shape& shape, float fill) {
  Tensor t(shape, fill);
  require_finite(t, "tensor_create");
  return t;
}

Tensor tensor_create(const Shape& shape, std::vector<float> values) {
  Tensor t(shape, std::move(values));
  require_finite(t, "tensor_create");
  return t;
}

template <typename T>
BasicTensor<T> tensor_map(const BasicTensor<T>& a, const std::function<T(T)>& fn) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  require_finite(out, "tensor_map");
  return out;
}

template <typename T>
BasicTensor<T> tensor_zip(const BasicTensor<T>& a, const BasicTensor<T>& b,
                          const std::function<T(T, T)>& fn) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument("tensor_zip shape mismatch: " + a.shape().to_string() + " vs " +
                          b.shape().to_string());
  }
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
  require_finite(out, "tensor_zip");
  return out;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2) {
    throw InvalidArgument("matmul expects rank-2 operands");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw InvalidArgument("matmul inner dimension mismatch: " + a.shape().to_string() + " x " +
                          b.shape().to_string());
  }
  BasicTensor<T> out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += static_cast<double>(a[i * k + p]) * static_cast<double>(b[p * n + j]);
      }
      out[i * n + j] = static_cast<T>(acc);
    }
  }
  require_finite(out, "matmul");
  return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void require_finite(const Tensor&, const char*);
template void require_finite(const TensorD&, const char*);
template Tensor tensor_map(const Tensor&, const std::function<float(float)>&);
template TensorD tensor_map(const TensorD&, const std::function<double(double)>&);
template Tensor tensor_zip(const Tensor&, const Tensor&, const std::function<float(float, float)>&);
template TensorD tensor_zip(const TensorD&, const TensorD&,
                            const std::function<double(double, double)>&);
template Tensor matmul(const Tensor&, const Tensor&);
template TensorD matmul(const TensorD&, const TensorD&);

namespace {

constexpr char kMagic[4] = {'T', 'S', 'R', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Shape decode_header(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  if (bytes.size() < offset + 8 || std::memcmp(bytes.data() + offset, kMagic, 4) != 0) {
    throw IoError("bad magic");
  }
  const std::uint32_t rank = get_u32(bytes, offset + 4);
  if (rank == 0 || rank > Shape::kMaxRank) {
    throw IoError("unsupported rank " + std::to_string(rank));
  }
  offset += 8;
  if (bytes.size() < offset + 4 * rank) throw IoError("truncated header");
  std::vector<std::size_t> dims(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    dims[i] = get_u32(bytes, offset);
    offset += 4;
    if (dims[i] == 0) throw IoError("zero dimension in header");
  }
  return Shape(std::move(dims));
}

}  // namespace

std::vector<std::uint8_t> tensor_encode(const Tensor& t) {
  require_finite(t, "tensor_write");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(t.shape().rank()));
  for (std::size_t d : t.shape().dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("dim exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data().data());
  out.insert(out.end(), raw, raw + t.size() * sizeof(float));
  return out;
}

Tensor tensor_decode(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  Shape shape = decode_header(bytes, offset);
  const std::size_t payload = shape.numel() * sizeof(float);
  if (bytes.size() - offset < payload) throw IoError("truncated payload");
  std::vector<float> values(shape.numel());
  std::memcpy(values.data(), bytes.data() + offset, payload);
  offset += payload;
  Tensor t(std::move(shape), std::move(values));
  if (!t.all_finite()) throw IoError("non-finite payload");
  return t;
}

void tensor_write(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = tensor_encode(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor tensor_read(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t offset = 0;
  Tensor t = tensor_decode(bytes, offset);
  if (offset != bytes.size()) throw IoError("trailing bytes in " + path.string());
  return t;
}

Shape tensor_read_shape(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> head(8 + 4 * Shape::kMaxRank);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  std::size_t offset = 0;
  return decode_header(head, offset);
}

}  // namespace sliceforge
