// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sparsederf/image.hpp"

namespace sderf {

// Peak signal-to-noise ratio over [0,1] RGB, capped at 99 dB for identical
// images.
inline double psnr(const Image& a, const Image& b) {
  double m = mse(a, b);
  if (m <= 0.0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(m));
}

namespace detail {

inline std::vector<double> gaussian_window(int radius, double sigma) {
  std::vector<double> w(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    w[i + radius] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
    sum += w[i + radius];
  }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace detail

// SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01 K2=0.03, valid
// placement only (no padding), averaged over channels. Images smaller than
// the window throw.
inline double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw InvariantError("ssim: image size mismatch");
  const int radius = 5;
  const int win = 2 * radius + 1;
  if (a.width < win || a.height < win)
    throw InvariantError("ssim: image smaller than 11x11 window");
  const std::vector<double> g = detail::gaussian_window(radius, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    double acc = 0.0;
    int count = 0;
    for (int cy = radius; cy < a.height - radius; ++cy) {
      for (int cx = radius; cx < a.width - radius; ++cx) {
        double mu_a = 0, mu_b = 0, va = 0, vb = 0, cov = 0;
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx) {
            double w = g[dy + radius] * g[dx + radius];
            double pa = a.at(cx + dx, cy + dy, ch);
            double pb = b.at(cx + dx, cy + dy, ch);
            mu_a += w * pa;
            mu_b += w * pb;
            va += w * pa * pa;
            vb += w * pb * pb;
            cov += w * pa * pb;
          }
        }
        va -= mu_a * mu_a;
        vb -= mu_b * mu_b;
        cov -= mu_a * mu_b;
        double num = (2 * mu_a * mu_b + c1) * (2 * cov + c2);
        double den = (mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2);
        acc += num / den;
        ++count;
      }
    }
    total += acc / double(count);
  }
  return total / 3.0;
}

}  // namespace sderf
