#pragma once

// Counter-based random streams.
//
// Every stream is a (128-bit key, 64-bit position) pair over the Philox4x64-10
// block function, so the value at any position is a pure function of the key.
// Replications derive their streams from (seed, replication index, role) only,
// which is what makes results independent of worker count.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace debias {

namespace philox {

using Block = std::array<std::uint64_t, 4>;
using Key = std::array<std::uint64_t, 2>;

inline constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
inline constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
inline constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
inline constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
  const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

/// Philox4x64 with 10 rounds (Salmon et al., SC'11).
inline Block generate(Block ctr, Key key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

}  // namespace philox

/// Which part of a replication consumes a stream. Distinct roles never share state.
enum class StreamRole : std::uint64_t { level = 0, batch = 1, base = 2, comparison = 3 };

class RandomStream {
 public:
  using Key = philox::Key;

  explicit RandomStream(Key key, std::uint64_t position = 0) : key_(key), position_(position) {}

  const Key& key() const { return key_; }
  std::uint64_t position() const { return position_; }

  std::uint64_t next_u64() {
    const std::uint64_t block = position_ >> 2;
    if (!cached_ || block != cached_block_) {
      buffer_ = philox::generate({block, 0, 0, 0}, key_);
      cached_block_ = block;
      cached_ = true;
    }
    return buffer_[position_++ & 3];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1); never returns 0 or 1.
  double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  /// Unbiased integer in [0, bound) (Lemire's multiply-and-reject).
  std::uint64_t below(std::uint64_t bound) {
    std::uint64_t x = next_u64();
    unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        x = next_u64();
        m = static_cast<unsigned __int128>(x) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Independent child stream. Children with different (index, tag) pairs have
  /// unrelated keys; the parent's position is not consumed.
  RandomStream substream(std::uint64_t index, std::uint64_t tag = 0) const {
    const auto out = philox::generate({index, tag, 0, kSplitDomain}, key_);
    return RandomStream({out[0], out[1]});
  }

 private:
  static constexpr std::uint64_t kSplitDomain = 0x53504c4954ULL;  // "SPLIT"

  Key key_;
  std::uint64_t position_;
  philox::Block buffer_{};
  std::uint64_t cached_block_ = 0;
  bool cached_ = false;
};

/// Stream for one role of one replication. Pure in its arguments.
inline RandomStream derive_stream(std::uint64_t seed, std::uint64_t replication_index, StreamRole role) {
  constexpr std::uint64_t kDeriveDomain = 0x4445524956ULL;  // "DERIV"
  constexpr std::uint64_t kSeedSalt = 0x6a09e667f3bcc908ULL;
  const auto out = philox::generate({replication_index, static_cast<std::uint64_t>(role), 0, kDeriveDomain},
                                    {seed, kSeedSalt});
  return RandomStream({out[0], out[1]});
}

}  // namespace debias
