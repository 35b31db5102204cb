// Hot inner loops for +/-1 lattice walks with per-step integer constraints.
// Scalar and AVX2 builds share one counter-based RNG convention: step i of
// replica rep reads bit (i-1) mod 64 of ctr_word(seed, rep, (i-1)/64), bit 1
// meaning +1. The two implementations are bit-for-bit equivalent, which the
// tests assert, and the dispatched entry points pick AVX2 when the CPU has
// it.
#pragma once

#include <cstdint>

namespace rwre::kernels {

// Walk S_i confined to [lo[i-1], hi[i-1]]. die_step[r] = first violating
// step (1-based), n+1 if the replica survives. final_out (nullable) receives
// S_n for surviving replicas only.
void band_scalar(uint64_t seed, uint64_t rep_begin, long long reps, long long n,
                 const int32_t* lo, const int32_t* hi, int32_t* die_step,
                 int32_t* final_out);
void band_avx2(uint64_t seed, uint64_t rep_begin, long long reps, long long n,
               const int32_t* lo, const int32_t* hi, int32_t* die_step,
               int32_t* final_out);

// Reflected gap R_i = S-bar_i - S_i confined to R_i <= cap[i-1]. When
// max_includes_start is false the running max starts at S_1 (so R_1 = 0);
// when true it includes S_0 = 0. final_out receives R_n for survivors.
void reflected_scalar(uint64_t seed, uint64_t rep_begin, long long reps,
                      long long n, const int32_t* cap, bool max_includes_start,
                      int32_t* die_step, int32_t* final_out);
void reflected_avx2(uint64_t seed, uint64_t rep_begin, long long reps,
                    long long n, const int32_t* cap, bool max_includes_start,
                    int32_t* die_step, int32_t* final_out);

bool avx2_available();

// Runtime-dispatched entry points.
void band(uint64_t seed, uint64_t rep_begin, long long reps, long long n,
          const int32_t* lo, const int32_t* hi, int32_t* die_step,
          int32_t* final_out);
void reflected(uint64_t seed, uint64_t rep_begin, long long reps, long long n,
               const int32_t* cap, bool max_includes_start, int32_t* die_step,
               int32_t* final_out);

}  // namespace rwre::kernels
