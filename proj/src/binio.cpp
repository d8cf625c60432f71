#include "omog/binio.hpp"

#include <cstring>

namespace omog {

BinReader::BinReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary), path_(path.string()) {
  if (!in_) throw io_error(path_ + ": cannot open for reading");
}

void BinReader::fail(const std::string& what) const {
  throw io_error(path_ + ": " + what + " at offset " + std::to_string(offset_));
}

void BinReader::bytes(void* dst, std::size_t count) {
  in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in_.gcount()) != count) {
    fail("short read, wanted " + std::to_string(count) + " bytes, got " +
         std::to_string(in_.gcount()));
  }
  offset_ += count;
}

std::uint16_t BinReader::u16() {
  std::uint16_t v;
  bytes(&v, sizeof v);
  return v;
}

std::uint32_t BinReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}

std::int32_t BinReader::i32() {
  std::int32_t v;
  bytes(&v, sizeof v);
  return v;
}

void BinReader::magic(const char expect[8]) {
  char got[9] = {0};
  bytes(got, 8);
  if (std::memcmp(got, expect, 8) != 0) {
    fail(std::string("bad magic, expected \"") + std::string(expect, 8) +
         "\", got \"" + std::string(got, 8) + "\"");
  }
}

void BinReader::floats(float* dst, std::size_t count) {
  bytes(dst, count * sizeof(float));
}

void BinReader::expect_eof() {
  char c;
  in_.read(&c, 1);
  if (!in_.eof()) fail("trailing bytes after expected end of file");
}

BinWriter::BinWriter(const std::filesystem::path& path)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
  if (!out_) throw io_error(path_ + ": cannot open for writing");
}

void BinWriter::bytes(const void* src, std::size_t count) {
  out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(count));
  if (!out_) throw io_error(path_ + ": write failed");
}

void BinWriter::close() {
  out_.close();
  if (!out_) throw io_error(path_ + ": close failed");
}

void BinWriter::u16(std::uint16_t v) { bytes(&v, sizeof v); }
void BinWriter::u32(std::uint32_t v) { bytes(&v, sizeof v); }
void BinWriter::i32(std::int32_t v) { bytes(&v, sizeof v); }
void BinWriter::magic(const char m[8]) { bytes(m, 8); }
void BinWriter::floats(const float* src, std::size_t count) {
  bytes(src, count * sizeof(float));
}

}  // namespace omog
