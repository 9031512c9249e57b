#pragma once

// Little-endian byte writer/reader shared by the message and snapshot codecs.

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtk/error.hpp"
#include "mtk/kernels.hpp"

namespace mtk::wire {

class Writer {
 public:
  template <class T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void count(std::size_t n) { u32(static_cast<std::uint32_t>(n)); }
  void str(const std::string& s) {
    count(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void reals(std::span<const double> v) {
    count(v.size());
    for (double x : v) f64(x);
  }
  void raw(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

  std::vector<std::uint8_t>& bytes() noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf_(b) {}

  template <class T>
  T uint() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::uint8_t u8() { return uint<std::uint8_t>(); }
  std::uint16_t u16() { return uint<std::uint16_t>(); }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  /// Reads a u32 count and checks that count * min_elem_bytes bytes remain.
  std::size_t count(std::size_t min_elem_bytes) {
    const std::size_t n = u32();
    if (min_elem_bytes > 0 && n > remaining() / min_elem_bytes) malformed("array count exceeds frame");
    return n;
  }
  std::string str() {
    const std::size_t n = count(1);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> reals() {
    const std::size_t n = count(8);
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
  std::vector<double> reals_exact(std::size_t n) {
    if (n > remaining() / 8) malformed("array exceeds frame");
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  void expect_end() const {
    if (pos_ != buf_.size()) malformed("trailing bytes after message body");
  }
  [[noreturn]] static void malformed(const std::string& why) { throw Error(ErrorCode::MalformedFrame, why); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) malformed("frame truncated");
  }

  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

void put_input(Writer& w, const InputPoint& x);
InputPoint get_input(Reader& r);
void put_config(Writer& w, const MixedEffectConfig& cfg);
MixedEffectConfig get_config(Reader& r);

}  // namespace mtk::wire
