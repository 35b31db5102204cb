// 8-wide AVX2 variants: lanes are consecutive replicas, so results match the
// scalar kernels bit for bit. This translation unit is the only one compiled
// with -mavx2; callers must check avx2_available() first.
#include "rw1d_kernels.hpp"

#include "rwre/rng.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

namespace rwre::kernels {
namespace {

struct LaneWords {
  __m256i w0, w1;  // 4+4 u64 RNG words for lanes 0..3 / 4..7
};

inline LaneWords refill(uint64_t seed, uint64_t base, uint64_t block) {
  alignas(32) uint64_t w[8];
  for (int k = 0; k < 8; ++k) w[k] = ctr_word(seed, base + static_cast<uint64_t>(k), block);
  return {_mm256_load_si256(reinterpret_cast<const __m256i*>(w)),
          _mm256_load_si256(reinterpret_cast<const __m256i*>(w + 4))};
}

// Extract bit b of each u64 lane and pack into 8 x i32 of {0,1}.
inline __m256i lane_bits(const LaneWords& lw, int b) {
  const __m128i cnt = _mm_cvtsi32_si128(b);
  const __m256i one64 = _mm256_set1_epi64x(1);
  const __m256i b0 = _mm256_and_si256(_mm256_srl_epi64(lw.w0, cnt), one64);
  const __m256i b1 = _mm256_and_si256(_mm256_srl_epi64(lw.w1, cnt), one64);
  const __m256i idx = _mm256_setr_epi32(0, 2, 4, 6, 0, 2, 4, 6);
  const __m256i p0 = _mm256_permutevar8x32_epi32(b0, idx);
  const __m256i p1 = _mm256_permutevar8x32_epi32(b1, idx);
  return _mm256_blend_epi32(p0, p1, 0xF0);
}

inline int dead_mask(__m256i dead) {
  return _mm256_movemask_ps(_mm256_castsi256_ps(dead));
}

}  // namespace

void band_avx2(uint64_t seed, uint64_t rep_begin, long long reps, long long n,
               const int32_t* lo, const int32_t* hi, int32_t* die_step,
               int32_t* final_out) {
  const __m256i one = _mm256_set1_epi32(1);
  const long long groups = reps / 8;
  for (long long g = 0; g < groups; ++g) {
    const uint64_t base = rep_begin + static_cast<uint64_t>(g) * 8;
    int32_t* die = die_step + g * 8;
    for (int k = 0; k < 8; ++k) die[k] = static_cast<int32_t>(n) + 1;
    __m256i s = _mm256_setzero_si256();
    __m256i dead = _mm256_setzero_si256();
    LaneWords lw{};
    for (long long i = 1; i <= n; ++i) {
      const int b = static_cast<int>((i - 1) & 63);
      if (b == 0) lw = refill(seed, base, static_cast<uint64_t>((i - 1) >> 6));
      const __m256i bits = lane_bits(lw, b);
      const __m256i sign = _mm256_sub_epi32(_mm256_slli_epi32(bits, 1), one);
      s = _mm256_add_epi32(s, sign);
      const __m256i lov = _mm256_set1_epi32(lo[i - 1]);
      const __m256i hiv = _mm256_set1_epi32(hi[i - 1]);
      const __m256i viol = _mm256_or_si256(_mm256_cmpgt_epi32(lov, s),
                                           _mm256_cmpgt_epi32(s, hiv));
      const __m256i fresh = _mm256_andnot_si256(dead, viol);
      if (!_mm256_testz_si256(fresh, fresh)) {
        const int m = dead_mask(fresh);
        for (int k = 0; k < 8; ++k)
          if (m & (1 << k)) die[k] = static_cast<int32_t>(i);
        dead = _mm256_or_si256(dead, viol);
        if (dead_mask(dead) == 0xFF) break;
      }
    }
    if (final_out) {
      alignas(32) int32_t sv[8];
      _mm256_store_si256(reinterpret_cast<__m256i*>(sv), s);
      for (int k = 0; k < 8; ++k)
        if (die[k] == n + 1) final_out[g * 8 + k] = sv[k];
    }
  }
  const long long tail = reps % 8;
  if (tail)
    band_scalar(seed, rep_begin + static_cast<uint64_t>(groups) * 8, tail, n,
                lo, hi, die_step + groups * 8,
                final_out ? final_out + groups * 8 : nullptr);
}

void reflected_avx2(uint64_t seed, uint64_t rep_begin, long long reps,
                    long long n, const int32_t* cap, bool max_includes_start,
                    int32_t* die_step, int32_t* final_out) {
  const __m256i one = _mm256_set1_epi32(1);
  const __m256i zero = _mm256_setzero_si256();
  const long long groups = reps / 8;
  for (long long g = 0; g < groups; ++g) {
    const uint64_t base = rep_begin + static_cast<uint64_t>(g) * 8;
    int32_t* die = die_step + g * 8;
    for (int k = 0; k < 8; ++k) die[k] = static_cast<int32_t>(n) + 1;
    __m256i gap = _mm256_setzero_si256();
    __m256i dead = _mm256_setzero_si256();
    LaneWords lw{};
    for (long long i = 1; i <= n; ++i) {
      const int b = static_cast<int>((i - 1) & 63);
      if (b == 0) lw = refill(seed, base, static_cast<uint64_t>((i - 1) >> 6));
      if (i > 1 || max_includes_start) {
        const __m256i bits = lane_bits(lw, b);
        const __m256i sign = _mm256_sub_epi32(_mm256_slli_epi32(bits, 1), one);
        gap = _mm256_max_epi32(_mm256_sub_epi32(gap, sign), zero);
      }
      const __m256i capv = _mm256_set1_epi32(cap[i - 1]);
      const __m256i viol = _mm256_cmpgt_epi32(gap, capv);
      const __m256i fresh = _mm256_andnot_si256(dead, viol);
      if (!_mm256_testz_si256(fresh, fresh)) {
        const int m = dead_mask(fresh);
        for (int k = 0; k < 8; ++k)
          if (m & (1 << k)) die[k] = static_cast<int32_t>(i);
        dead = _mm256_or_si256(dead, viol);
        if (dead_mask(dead) == 0xFF) break;
      }
    }
    if (final_out) {
      alignas(32) int32_t gv[8];
      _mm256_store_si256(reinterpret_cast<__m256i*>(gv), gap);
      for (int k = 0; k < 8; ++k)
        if (die[k] == n + 1) final_out[g * 8 + k] = gv[k];
    }
  }
  const long long tail = reps % 8;
  if (tail)
    reflected_scalar(seed, rep_begin + static_cast<uint64_t>(groups) * 8, tail,
                     n, cap, max_includes_start, die_step + groups * 8,
                     final_out ? final_out + groups * 8 : nullptr);
}

}  // namespace rwre::kernels

#else  // fallback so non-x86 builds still link; dispatch never selects these

namespace rwre::kernels {

void band_avx2(uint64_t seed, uint64_t rep_begin, long long reps, long long n,
               const int32_t* lo, const int32_t* hi, int32_t* die_step,
               int32_t* final_out) {
  band_scalar(seed, rep_begin, reps, n, lo, hi, die_step, final_out);
}

void reflected_avx2(uint64_t seed, uint64_t rep_begin, long long reps,
                    long long n, const int32_t* cap, bool max_includes_start,
                    int32_t* die_step, int32_t* final_out) {
  reflected_scalar(seed, rep_begin, reps, n, cap, max_includes_start, die_step,
                   final_out);
}

}  // namespace rwre::kernels

#endif
