#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace omog {

// All on-disk binary files are little-endian. The readers/writers below do
// native I/O and refuse to compile on big-endian targets.
static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian");

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class BinReader {
 public:
  explicit BinReader(const std::filesystem::path& path);

  std::uint16_t u16();
  std::uint32_t u32();
  std::int32_t i32();
  void magic(const char expect[8]);
  void floats(float* dst, std::size_t count);
  void bytes(void* dst, std::size_t count);
  void expect_eof();
  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::ifstream in_;
  std::string path_;
  std::size_t offset_ = 0;
};

class BinWriter {
 public:
  explicit BinWriter(const std::filesystem::path& path);

  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v);
  void magic(const char m[8]);
  void floats(const float* src, std::size_t count);
  void bytes(const void* src, std::size_t count);
  void close();  // flushes; throws io_error if the stream went bad

 private:
  std::ofstream out_;
  std::string path_;
};

}  // namespace omog
