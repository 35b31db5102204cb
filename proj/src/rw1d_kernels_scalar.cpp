#include "rw1d_kernels.hpp"

#include "rwre/rng.hpp"

namespace rwre::kernels {

void band_scalar(uint64_t seed, uint64_t rep_begin, long long reps, long long n,
                 const int32_t* lo, const int32_t* hi, int32_t* die_step,
                 int32_t* final_out) {
  for (long long r = 0; r < reps; ++r) {
    const uint64_t rep = rep_begin + static_cast<uint64_t>(r);
    int32_t s = 0;
    int32_t die = static_cast<int32_t>(n) + 1;
    uint64_t word = 0;
    for (long long i = 1; i <= n; ++i) {
      const int b = static_cast<int>((i - 1) & 63);
      if (b == 0) word = ctr_word(seed, rep, static_cast<uint64_t>((i - 1) >> 6));
      s += ((word >> b) & 1u) ? 1 : -1;
      if (s < lo[i - 1] || s > hi[i - 1]) {
        die = static_cast<int32_t>(i);
        break;
      }
    }
    die_step[r] = die;
    if (die == n + 1 && final_out) final_out[r] = s;
  }
}

void reflected_scalar(uint64_t seed, uint64_t rep_begin, long long reps,
                      long long n, const int32_t* cap, bool max_includes_start,
                      int32_t* die_step, int32_t* final_out) {
  for (long long r = 0; r < reps; ++r) {
    const uint64_t rep = rep_begin + static_cast<uint64_t>(r);
    int32_t gap = 0;
    int32_t die = static_cast<int32_t>(n) + 1;
    uint64_t word = 0;
    for (long long i = 1; i <= n; ++i) {
      const int b = static_cast<int>((i - 1) & 63);
      if (b == 0) word = ctr_word(seed, rep, static_cast<uint64_t>((i - 1) >> 6));
      const int32_t sign = ((word >> b) & 1u) ? 1 : -1;
      // With the max starting at S_1 the first step never opens a gap.
      if (i > 1 || max_includes_start) {
        gap -= sign;
        if (gap < 0) gap = 0;
      }
      if (gap > cap[i - 1]) {
        die = static_cast<int32_t>(i);
        break;
      }
    }
    die_step[r] = die;
    if (die == n + 1 && final_out) final_out[r] = gap;
  }
}

bool avx2_available() {
#if defined(__x86_64__) || defined(__i386__)
  static const bool ok = __builtin_cpu_supports("avx2");
  return ok;
#else
  return false;
#endif
}

void band(uint64_t seed, uint64_t rep_begin, long long reps, long long n,
          const int32_t* lo, const int32_t* hi, int32_t* die_step,
          int32_t* final_out) {
  if (avx2_available())
    band_avx2(seed, rep_begin, reps, n, lo, hi, die_step, final_out);
  else
    band_scalar(seed, rep_begin, reps, n, lo, hi, die_step, final_out);
}

void reflected(uint64_t seed, uint64_t rep_begin, long long reps, long long n,
               const int32_t* cap, bool max_includes_start, int32_t* die_step,
               int32_t* final_out) {
  if (avx2_available())
    reflected_avx2(seed, rep_begin, reps, n, cap, max_includes_start, die_step,
                   final_out);
  else
    reflected_scalar(seed, rep_begin, reps, n, cap, max_includes_start,
                     die_step, final_out);
}

}  // namespace rwre::kernels
