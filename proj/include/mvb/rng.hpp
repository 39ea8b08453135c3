#pragma once
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>

// Counter-based RNG: every draw is a pure function of (seed, stream, particle, index),
// so the draw sequence cannot depend on scheduling or thread count.
// Philox4x64-10, bit-compatible with numpy.random.Philox(key=[seed, stream]).

namespace mvb::rng {

using u64 = std::uint64_t;
using Block = std::array<u64, 4>;

inline u64 mulhilo(u64 a, u64 b, u64& hi) {
  unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<u64>(p >> 64);
  return static_cast<u64>(p);
}

inline Block philox4x64(Block ctr, u64 k0, u64 k1) {
  constexpr u64 M0 = 0xD2E7470EE14C6C93ULL;
  constexpr u64 M1 = 0xCA5A826395121157ULL;
  constexpr u64 W0 = 0x9E3779B97F4A7C15ULL;
  constexpr u64 W1 = 0xBB67AE8584CAA73BULL;
  for (int r = 0; r < 10; ++r) {
    u64 hi0, hi1;
    u64 lo0 = mulhilo(M0, ctr[0], hi0);
    u64 lo1 = mulhilo(M1, ctr[2], hi1);
    ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    k0 += W0;
    k1 += W1;
  }
  return ctr;
}

// draw streams; keeps initial-condition draws independent of path noise
enum : u64 { stream_init = 1, stream_noise = 2 };

inline Block raw_block(u64 seed, u64 stream, u64 particle, u64 blk) {
  // numpy's generator bumps the counter before every block, so the block at
  // logical position (particle, blk) is keyed by the incremented counter
  Block ctr = {particle + 1, blk, 0, 0};
  if (ctr[0] == 0 && ++ctr[1] == 0 && ++ctr[2] == 0) ++ctr[3];
  return philox4x64(ctr, seed, stream);
}

// uniform strictly inside (0,1): top 52 bits, offset half an ulp.
// 52 rather than 53 so both endpoints stay representable after rounding
// (the midpoint of the top 53-bit bin rounds to exactly 1.0).
inline double u01(u64 x) {
  return (static_cast<double>(x >> 12) + 0.5) * 0x1.0p-52;
}

// four standard normals per block via Box-Muller
inline std::array<double, 4> normals4(const Block& b) {
  const double two_pi = 6.283185307179586476925286766559;
  double r0 = std::sqrt(-2.0 * std::log(u01(b[0])));
  double a0 = two_pi * u01(b[1]);
  double r1 = std::sqrt(-2.0 * std::log(u01(b[2])));
  double a1 = two_pi * u01(b[3]);
  return {r0 * std::cos(a0), r0 * std::sin(a0), r1 * std::cos(a1), r1 * std::sin(a1)};
}

// normals with linear indices [idx0, idx0+count) for particles [i0, i1),
// written row-major into out[(i - i0)*count + j]
inline void fill_normals(u64 seed, u64 stream, std::size_t i0, std::size_t i1,
                         u64 idx0, u64 count, double* out) {
  for (std::size_t i = i0; i < i1; ++i) {
    double* row = out + (i - i0) * count;
    u64 idx = idx0;
    u64 left = count;
    while (left > 0) {
      u64 blk = idx / 4;
      u64 lane = idx % 4;
      auto z = normals4(raw_block(seed, stream, i, blk));
      u64 take = std::min<u64>(4 - lane, left);
      for (u64 l = 0; l < take; ++l) row[count - left + l] = z[lane + l];
      idx += take;
      left -= take;
    }
  }
}

inline double normal_at(u64 seed, u64 stream, u64 particle, u64 idx) {
  return normals4(raw_block(seed, stream, particle, idx / 4))[idx % 4];
}

}  // namespace mvb::rng
