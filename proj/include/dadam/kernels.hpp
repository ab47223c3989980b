#pragma once

#include <span>
#include <string_view>

namespace dadam::kernels {

// Inner loops of the optimizer and the loss oracles. Every entry has a scalar
// reference implementation; vectorized variants must produce bit-identical
// results for the elementwise kernels and agree to rounding for reductions.
struct KernelTable {
  std::string_view name;

  // m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g*g;
  // vhat <- b3 vhat + (1-b3) max(vhat, v)   (pre-update vhat on the right)
  void (*moment_update)(std::span<double> m, std::span<double> v, std::span<double> vhat,
                        std::span<const double> g, double b1, double b2, double b3);

  // out <- base - alpha * m / (sqrt(vhat) + eps)
  void (*adaptive_step)(std::span<double> out, std::span<const double> base,
                        std::span<const double> m, std::span<const double> vhat, double alpha,
                        double eps);

  // out <- sqrt(vhat) + eps
  void (*sqrt_plus)(std::span<double> out, std::span<const double> vhat, double eps);

  // y <- y + a x
  void (*axpy)(std::span<double> y, double a, std::span<const double> x);

  double (*dot)(std::span<const double> x, std::span<const double> y);

  double (*max_abs)(std::span<const double> x);
};

const KernelTable& scalar();

/// AVX2 table, or nullptr when the build or the CPU lacks AVX2.
const KernelTable* avx2();

/// Best table for this CPU. `DADAM_KERNELS=scalar` in the environment forces the
/// reference path.
const KernelTable& active();

}  // namespace dadam::kernels
