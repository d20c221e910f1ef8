#pragma once

// Low-level loops over flat row-major buffers. All accumulation is in double.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace evolrp::kernels {

struct ConvGeometry {
  std::size_t in_channels, in_h, in_w;
  std::size_t out_channels, out_h, out_w;
  std::size_t kernel, stride, pad;

  std::size_t in_plane() const { return in_h * in_w; }
  std::size_t out_plane() const { return out_h * out_w; }
  std::size_t weight_index(std::size_t o, std::size_t c, std::size_t ky, std::size_t kx) const {
    return ((o * in_channels + c) * kernel + ky) * kernel + kx;
  }
};

/// Output positions o in [lo, hi) whose tap `offset` lands inside [0, extent).
struct TapRange {
  std::size_t lo = 0, hi = 0;
};

inline TapRange tap_range(std::size_t out_extent, std::size_t in_extent, std::size_t offset, std::size_t stride,
                          std::size_t pad) {
  // in = o*stride + offset - pad must satisfy 0 <= in < in_extent
  const long s = static_cast<long>(stride);
  const long shift = static_cast<long>(offset) - static_cast<long>(pad);
  long lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
  long top = static_cast<long>(in_extent) - 1 - shift;
  if (top < 0) return {};
  long hi = std::min<long>(static_cast<long>(out_extent), top / s + 1);
  if (lo >= hi) return {};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

/// Visits every (output pixel, input pixel) pair of tap (ky, kx) row by row.
template <typename RowFn>
inline void for_each_tap_row(const ConvGeometry& g, std::size_t ky, std::size_t kx, RowFn&& row_fn) {
  const TapRange ry = tap_range(g.out_h, g.in_h, ky, g.stride, g.pad);
  const TapRange rx = tap_range(g.out_w, g.in_w, kx, g.stride, g.pad);
  if (ry.lo >= ry.hi || rx.lo >= rx.hi) return;
  for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
    const std::size_t iy = oy * g.stride + ky - g.pad;
    row_fn(oy, iy, rx.lo, rx.hi, rx.lo * g.stride + kx - g.pad);
  }
}

template <typename T, typename W>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const W> weight, const W* bias,
                    std::span<double> out) {
  const std::size_t plane = g.out_plane();
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    double* acc = out.data() + o * plane;
    std::fill(acc, acc + plane, bias ? static_cast<double>(bias[o]) : 0.0);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const T* src = in.data() + c * g.in_plane();
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const double wv = static_cast<double>(weight[g.weight_index(o, c, ky, kx)]);
          if (wv == 0.0) continue;
          for_each_tap_row(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi, std::size_t ix0) {
            double* arow = acc + oy * g.out_w;
            const T* irow = src + iy * g.in_w + ix0;
            for (std::size_t ox = lo, j = 0; ox < hi; ++ox, j += g.stride) arow[ox] += wv * static_cast<double>(irow[j]);
          });
        }
      }
    }
  }
}

/// Positive and negative parts of the pre-activation, split per contribution:
/// pos = sum (a*w)^+ + bias^+, neg = sum (a*w)^- + bias^-.
template <typename T, typename W>
void conv2d_forward_split(const ConvGeometry& g, std::span<const T> in, std::span<const W> weight, const W* bias,
                          std::span<double> pos, std::span<double> neg) {
  const std::size_t plane = g.out_plane();
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    double* accp = pos.data() + o * plane;
    double* accn = neg.data() + o * plane;
    const double b = bias ? static_cast<double>(bias[o]) : 0.0;
    std::fill(accp, accp + plane, std::max(b, 0.0));
    std::fill(accn, accn + plane, std::min(b, 0.0));
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const T* src = in.data() + c * g.in_plane();
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const double wv = static_cast<double>(weight[g.weight_index(o, c, ky, kx)]);
          if (wv == 0.0) continue;
          for_each_tap_row(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi, std::size_t ix0) {
            double* prow = accp + oy * g.out_w;
            double* nrow = accn + oy * g.out_w;
            const T* irow = src + iy * g.in_w + ix0;
            for (std::size_t ox = lo, j = 0; ox < hi; ++ox, j += g.stride) {
              const double p = wv * static_cast<double>(irow[j]);
              prow[ox] += std::max(p, 0.0);
              nrow[ox] += std::min(p, 0.0);
            }
          });
        }
      }
    }
  }
}

/// grad_in += W^T grad_out (transposed convolution).
template <typename G, typename W>
void conv2d_backward_input(const ConvGeometry& g, std::span<const G> grad_out, std::span<const W> weight,
                           std::span<double> grad_in) {
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const G* gsrc = grad_out.data() + o * g.out_plane();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      double* dst = grad_in.data() + c * g.in_plane();
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const double wv = static_cast<double>(weight[g.weight_index(o, c, ky, kx)]);
          if (wv == 0.0) continue;
          for_each_tap_row(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi, std::size_t ix0) {
            const G* grow = gsrc + oy * g.out_w;
            double* drow = dst + iy * g.in_w + ix0;
            for (std::size_t ox = lo, j = 0; ox < hi; ++ox, j += g.stride) drow[j] += wv * static_cast<double>(grow[ox]);
          });
        }
      }
    }
  }
}

/// Sign-routed transposed convolution for the alpha-beta rule.
/// `for_pos_input` receives w^+ s_pos + w^- s_neg (used where a > 0);
/// `for_neg_input`, when non-empty, receives w^+ s_neg + w^- s_pos (used where a < 0).
template <typename W>
void conv2d_backward_split(const ConvGeometry& g, std::span<const double> s_pos, std::span<const double> s_neg,
                           std::span<const W> weight, std::span<double> for_pos_input,
                           std::span<double> for_neg_input) {
  const bool both = !for_neg_input.empty();
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double* sp = s_pos.data() + o * g.out_plane();
    const double* sn = s_neg.data() + o * g.out_plane();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      double* d1 = for_pos_input.data() + c * g.in_plane();
      double* d2 = both ? for_neg_input.data() + c * g.in_plane() : nullptr;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const double wv = static_cast<double>(weight[g.weight_index(o, c, ky, kx)]);
          if (wv == 0.0) continue;
          const double* first = wv > 0.0 ? sp : sn;
          const double* second = wv > 0.0 ? sn : sp;
          for_each_tap_row(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi, std::size_t ix0) {
            const double* frow = first + oy * g.out_w;
            double* drow = d1 + iy * g.in_w + ix0;
            for (std::size_t ox = lo, j = 0; ox < hi; ++ox, j += g.stride) drow[j] += wv * frow[ox];
            if (both) {
              const double* srow = second + oy * g.out_w;
              double* erow = d2 + iy * g.in_w + ix0;
              for (std::size_t ox = lo, j = 0; ox < hi; ++ox, j += g.stride) erow[j] += wv * srow[ox];
            }
          });
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> in,
                            std::span<double> grad_weight, std::span<double> grad_bias) {
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const T* gsrc = grad_out.data() + o * g.out_plane();
    if (!grad_bias.empty()) {
      double s = 0.0;
      for (std::size_t i = 0; i < g.out_plane(); ++i) s += static_cast<double>(gsrc[i]);
      grad_bias[o] += s;
    }
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const T* src = in.data() + c * g.in_plane();
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          double s = 0.0;
          for_each_tap_row(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi, std::size_t ix0) {
            const T* grow = gsrc + oy * g.out_w;
            const T* irow = src + iy * g.in_w + ix0;
            for (std::size_t ox = lo, j = 0; ox < hi; ++ox, j += g.stride)
              s += static_cast<double>(grow[ox]) * static_cast<double>(irow[j]);
          });
          grad_weight[g.weight_index(o, c, ky, kx)] += s;
        }
      }
    }
  }
}

template <typename T, typename W>
void dense_forward(std::size_t in_features, std::size_t out_features, std::span<const T> in, std::span<const W> weight,
                   const W* bias, std::span<double> out) {
  for (std::size_t o = 0; o < out_features; ++o) {
    const W* row = weight.data() + o * in_features;
    double s = bias ? static_cast<double>(bias[o]) : 0.0;
    for (std::size_t i = 0; i < in_features; ++i) s += static_cast<double>(row[i]) * static_cast<double>(in[i]);
    out[o] = s;
  }
}

template <typename T, typename W>
void dense_forward_split(std::size_t in_features, std::size_t out_features, std::span<const T> in,
                         std::span<const W> weight, const W* bias, std::span<double> pos, std::span<double> neg) {
  for (std::size_t o = 0; o < out_features; ++o) {
    const W* row = weight.data() + o * in_features;
    const double b = bias ? static_cast<double>(bias[o]) : 0.0;
    double p = std::max(b, 0.0), n = std::min(b, 0.0);
    for (std::size_t i = 0; i < in_features; ++i) {
      const double z = static_cast<double>(row[i]) * static_cast<double>(in[i]);
      p += std::max(z, 0.0);
      n += std::min(z, 0.0);
    }
    pos[o] = p;
    neg[o] = n;
  }
}

template <typename G, typename W>
void dense_backward_input(std::size_t in_features, std::size_t out_features, std::span<const G> grad_out,
                          std::span<const W> weight, std::span<double> grad_in) {
  for (std::size_t o = 0; o < out_features; ++o) {
    const double go = static_cast<double>(grad_out[o]);
    if (go == 0.0) continue;
    const W* row = weight.data() + o * in_features;
    for (std::size_t i = 0; i < in_features; ++i) grad_in[i] += go * static_cast<double>(row[i]);
  }
}

template <typename W>
void dense_backward_split(std::size_t in_features, std::size_t out_features, std::span<const double> s_pos,
                          std::span<const double> s_neg, std::span<const W> weight, std::span<double> for_pos_input,
                          std::span<double> for_neg_input) {
  const bool both = !for_neg_input.empty();
  for (std::size_t o = 0; o < out_features; ++o) {
    const W* row = weight.data() + o * in_features;
    const double sp = s_pos[o], sn = s_neg[o];
    for (std::size_t i = 0; i < in_features; ++i) {
      const double w = static_cast<double>(row[i]);
      for_pos_input[i] += w * (w > 0.0 ? sp : sn);
      if (both) for_neg_input[i] += w * (w > 0.0 ? sn : sp);
    }
  }
}

template <typename T>
void dense_backward_params(std::size_t in_features, std::size_t out_features, std::span<const T> grad_out,
                           std::span<const T> in, std::span<double> grad_weight, std::span<double> grad_bias) {
  for (std::size_t o = 0; o < out_features; ++o) {
    const double go = static_cast<double>(grad_out[o]);
    if (!grad_bias.empty()) grad_bias[o] += go;
    double* row = grad_weight.data() + o * in_features;
    for (std::size_t i = 0; i < in_features; ++i) row[i] += go * static_cast<double>(in[i]);
  }
}

/// Flat index of the maximum of 2x2 window (c, oy, ox); ties go to the first
/// element in row-major order.
template <typename T>
std::size_t maxpool_argmax(std::span<const T> in, std::size_t h, std::size_t w, std::size_t c, std::size_t oy,
                           std::size_t ox) {
  const std::size_t base = c * h * w;
  std::size_t best = base + (2 * oy) * w + 2 * ox;
  for (std::size_t dy = 0; dy < 2; ++dy) {
    for (std::size_t dx = 0; dx < 2; ++dx) {
      const std::size_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
      if (in[idx] > in[best]) best = idx;
    }
  }
  return best;
}

}  // namespace evolrp::kernels
