#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "tfm/tensor.hpp"

namespace tfm {

/// TFT1 layout: "TFT1", u8 dtype (1 = f32, 2 = f64), u8 rank, two zero bytes,
/// rank little-endian u32 extents, row-major little-endian payload.
enum class TftDtype : std::uint8_t { f32 = 1, f64 = 2 };

/// Total file size for a tensor of this shape and dtype.
std::size_t tft_file_size(const Shape& shape, TftDtype dtype);

template <typename T>
void write_tft(std::ostream& out, const Tensor<T>& tensor);
/// Reads one record, converting the stored dtype to T. `context` names the
/// source in error messages.
template <typename T>
Tensor<T> read_tft(std::istream& in, const std::string& context = "stream");

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

/// Whole-file helpers shared by the other binary formats.
std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace tfm
