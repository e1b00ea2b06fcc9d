#include "tfm/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <type_traits>

#include "tfm/error.hpp"

namespace tfm {

static_assert(std::endian::native == std::endian::little, "TFT1 I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'F', 'T', '1'};

template <typename T>
constexpr TftDtype dtype_of() {
  return std::is_same_v<T, float> ? TftDtype::f32 : TftDtype::f64;
}

std::size_t width_of(TftDtype dtype) { return dtype == TftDtype::f32 ? 4 : 8; }

void read_exact(std::istream& in, char* dst, std::size_t count, std::size_t offset, const std::string& context,
                const char* what) {
  in.read(dst, static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw IoError(context + ": truncated " + what + " at offset " + std::to_string(offset) + " (wanted " +
                  std::to_string(count) + " bytes, got " + std::to_string(in.gcount()) + ")");
  }
}

template <typename Src, typename T>
void convert_payload(const std::string& raw, std::vector<T>& out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    Src v;
    std::memcpy(&v, raw.data() + i * sizeof(Src), sizeof(Src));
    out[i] = static_cast<T>(v);
  }
}

}  // namespace

std::size_t tft_file_size(const Shape& shape, TftDtype dtype) {
  return 8 + 4 * shape.size() + width_of(dtype) * element_count(shape);
}

template <typename T>
void write_tft(std::ostream& out, const Tensor<T>& tensor) {
  const Shape& shape = tensor.shape();
  if (shape.size() > 255) {
    throw ValueError("TFT1: rank " + std::to_string(shape.size()) + " exceeds 255");
  }
  out.write(kMagic, 4);
  const char header[4] = {static_cast<char>(dtype_of<T>()), static_cast<char>(shape.size()), 0, 0};
  out.write(header, 4);
  for (std::size_t extent : shape) {
    if (extent > std::numeric_limits<std::uint32_t>::max()) {
      throw ValueError("TFT1: extent " + std::to_string(extent) + " does not fit in u32");
    }
    const auto e = static_cast<std::uint32_t>(extent);
    out.write(reinterpret_cast<const char*>(&e), 4);
  }
  auto values = tensor.values();
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!out) {
    throw IoError("TFT1: write failed");
  }
}

template <typename T>
Tensor<T> read_tft(std::istream& in, const std::string& context) {
  char magic[4];
  read_exact(in, magic, 4, 0, context, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError(context + ": bad magic at offset 0 (expected \"TFT1\")");
  }
  unsigned char header[4];
  read_exact(in, reinterpret_cast<char*>(header), 4, 4, context, "header");
  if (header[0] != 1 && header[0] != 2) {
    throw IoError(context + ": unknown dtype code " + std::to_string(header[0]) + " at offset 4");
  }
  if (header[2] != 0 || header[3] != 0) {
    throw IoError(context + ": nonzero padding at offset 6");
  }
  const auto dtype = static_cast<TftDtype>(header[0]);
  const std::size_t rank = header[1];
  if (rank == 0) {
    throw IoError(context + ": rank 0 at offset 5");
  }
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint32_t e = 0;
    read_exact(in, reinterpret_cast<char*>(&e), 4, 8 + 4 * i, context, "extent");
    shape[i] = e;
  }
  std::size_t count = 0;
  try {
    count = element_count(shape);
  } catch (const ShapeError& e) {
    throw IoError(context + ": invalid extents " + to_string(shape) + " (" + e.what() + ")");
  }
  const std::size_t width = width_of(dtype);
  if (count > std::numeric_limits<std::size_t>::max() / width) {
    throw IoError(context + ": extent overflow " + to_string(shape));
  }
  std::string raw(count * width, '\0');
  read_exact(in, raw.data(), raw.size(), 8 + 4 * rank, context, "payload");
  std::vector<T> values(count);
  if (dtype == TftDtype::f32) {
    convert_payload<float>(raw, values);
  } else {
    convert_payload<double>(raw, values);
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ostringstream buffer;
  write_tft(buffer, tensor);
  write_file_bytes(path, buffer.str());
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::istringstream in(read_file_bytes(path));
  Tensor<T> t = read_tft<T>(in, path.string());
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError(path.string() + ": trailing bytes after tensor payload");
  }
  return t;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string() + " for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

#define TFM_INSTANTIATE_IO(T)                                                 \
  template void write_tft(std::ostream&, const Tensor<T>&);                   \
  template Tensor<T> read_tft(std::istream&, const std::string&);             \
  template void save_tensor(const std::filesystem::path&, const Tensor<T>&); \
  template Tensor<T> load_tensor(const std::filesystem::path&);

TFM_INSTANTIATE_IO(float)
TFM_INSTANTIATE_IO(double)

}  // namespace tfm
