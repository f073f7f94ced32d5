#pragma once

// Raw-array convolution kernels. The kern:: versions parallelize over
// independent output (or weight) elements with OpenMP; every element is
// accumulated in a fixed inner-loop order, so results are bit-identical to
// the serial ref:: versions at any thread count. ref:: is the naive
// nested-loop reference kept for testing and as the benchmark baseline.

#include <cstddef>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace itmn {

struct ConvDims {
  int n, c, h, w;       // input
  int oc, k;            // out channels, square kernel
  int stride, pad;
  int oh, ow;           // output spatial extents
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace ref {

template <typename T>
void conv2d_fwd(const T* x, const T* wt, const T* bias, T* y, const ConvDims& d) {
  for (int n = 0; n < d.n; ++n)
    for (int o = 0; o < d.oc; ++o)
      for (int oy = 0; oy < d.oh; ++oy)
        for (int ox = 0; ox < d.ow; ++ox) {
          T acc = bias ? bias[o] : T(0);
          for (int c = 0; c < d.c; ++c)
            for (int ky = 0; ky < d.k; ++ky)
              for (int kx = 0; kx < d.k; ++kx) {
                const int iy = oy * d.stride - d.pad + ky;
                const int ix = ox * d.stride - d.pad + kx;
                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                acc += x[((static_cast<std::size_t>(n) * d.c + c) * d.h + iy) * d.w + ix] *
                       wt[((static_cast<std::size_t>(o) * d.c + c) * d.k + ky) * d.k + kx];
              }
          y[((static_cast<std::size_t>(n) * d.oc + o) * d.oh + oy) * d.ow + ox] = acc;
        }
}

template <typename T>
void dwconv2d_fwd(const T* x, const T* wt, const T* bias, T* y, const ConvDims& d) {
  // weight layout [c,1,k,k]; d.oc == d.c
  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c)
      for (int oy = 0; oy < d.oh; ++oy)
        for (int ox = 0; ox < d.ow; ++ox) {
          T acc = bias ? bias[c] : T(0);
          for (int ky = 0; ky < d.k; ++ky)
            for (int kx = 0; kx < d.k; ++kx) {
              const int iy = oy * d.stride - d.pad + ky;
              const int ix = ox * d.stride - d.pad + kx;
              if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
              acc += x[((static_cast<std::size_t>(n) * d.c + c) * d.h + iy) * d.w + ix] *
                     wt[(static_cast<std::size_t>(c) * d.k + ky) * d.k + kx];
            }
          y[((static_cast<std::size_t>(n) * d.c + c) * d.oh + oy) * d.ow + ox] = acc;
        }
}

}  // namespace ref

namespace kern {

// 1x1 stride-1 convolution is a channel-mixing matmul over contiguous
// pixel rows; the dedicated loop keeps memory access sequential.
template <typename T>
void pointwise_fwd(const T* x, const T* wt, const T* bias, T* y, const ConvDims& d) {
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::int64_t planes = static_cast<std::int64_t>(d.n) * d.oc;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / d.oc);
    const int o = static_cast<int>(p % d.oc);
    const T* xb = x + static_cast<std::size_t>(n) * d.c * hw;
    const T* wb = wt + static_cast<std::size_t>(o) * d.c;
    T* yb = y + (static_cast<std::size_t>(n) * d.oc + o) * hw;
    const T b = bias ? bias[o] : T(0);
    for (std::size_t i = 0; i < hw; ++i) yb[i] = b;
    for (int c = 0; c < d.c; ++c) {
      const T wv = wb[c];
      const T* xc = xb + static_cast<std::size_t>(c) * hw;
      for (std::size_t i = 0; i < hw; ++i) yb[i] += wv * xc[i];
    }
  }
}

template <typename T>
void pointwise_bwd_input(const T* gy, const T* wt, T* gx, const ConvDims& d) {
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::int64_t planes = static_cast<std::int64_t>(d.n) * d.c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / d.c);
    const int c = static_cast<int>(p % d.c);
    T* gxb = gx + (static_cast<std::size_t>(n) * d.c + c) * hw;
    for (int o = 0; o < d.oc; ++o) {
      const T wv = wt[static_cast<std::size_t>(o) * d.c + c];
      const T* gyb = gy + (static_cast<std::size_t>(n) * d.oc + o) * hw;
      for (std::size_t i = 0; i < hw; ++i) gxb[i] += wv * gyb[i];
    }
  }
}

template <typename T>
void pointwise_bwd_weight(const T* gy, const T* x, T* gw, T* gb, const ConvDims& d) {
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::int64_t wplanes = static_cast<std::int64_t>(d.oc) * d.c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < wplanes; ++p) {
    const int o = static_cast<int>(p / d.c);
    const int c = static_cast<int>(p % d.c);
    T acc = 0;
    for (int n = 0; n < d.n; ++n) {
      const T* gyb = gy + (static_cast<std::size_t>(n) * d.oc + o) * hw;
      const T* xb = x + (static_cast<std::size_t>(n) * d.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) acc += gyb[i] * xb[i];
    }
    gw[static_cast<std::size_t>(o) * d.c + c] += acc;
  }
  if (gb) {
    for (int o = 0; o < d.oc; ++o) {
      T acc = 0;
      for (int n = 0; n < d.n; ++n) {
        const T* gyb = gy + (static_cast<std::size_t>(n) * d.oc + o) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += gyb[i];
      }
      gb[o] += acc;
    }
  }
}

inline bool is_pointwise(const ConvDims& d) { return d.k == 1 && d.stride == 1 && d.pad == 0; }

template <typename T>
void conv2d_fwd(const T* x, const T* wt, const T* bias, T* y, const ConvDims& d) {
  if (is_pointwise(d)) {
    pointwise_fwd(x, wt, bias, y, d);
    return;
  }
  const std::int64_t planes = static_cast<std::int64_t>(d.n) * d.oc;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / d.oc);
    const int o = static_cast<int>(p % d.oc);
    const T* xb = x + static_cast<std::size_t>(n) * d.c * d.h * d.w;
    const T* wb = wt + static_cast<std::size_t>(o) * d.c * d.k * d.k;
    T* yb = y + (static_cast<std::size_t>(n) * d.oc + o) * d.oh * d.ow;
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        T acc = bias ? bias[o] : T(0);
        for (int c = 0; c < d.c; ++c) {
          const T* xc = xb + static_cast<std::size_t>(c) * d.h * d.w;
          const T* wc = wb + static_cast<std::size_t>(c) * d.k * d.k;
          for (int ky = 0; ky < d.k; ++ky) {
            const int iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int kx = 0; kx < d.k; ++kx) {
              const int ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += xc[static_cast<std::size_t>(iy) * d.w + ix] * wc[ky * d.k + kx];
            }
          }
        }
        yb[static_cast<std::size_t>(oy) * d.ow + ox] = acc;
      }
  }
}

// dL/dx in gather form: each input element sums the output-gradient
// contributions that read it, in a fixed order.
template <typename T>
void conv2d_bwd_input(const T* gy, const T* wt, T* gx, const ConvDims& d) {
  if (is_pointwise(d)) {
    pointwise_bwd_input(gy, wt, gx, d);
    return;
  }
  const std::int64_t planes = static_cast<std::int64_t>(d.n) * d.c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / d.c);
    const int c = static_cast<int>(p % d.c);
    T* gxb = gx + (static_cast<std::size_t>(n) * d.c + c) * d.h * d.w;
    for (int iy = 0; iy < d.h; ++iy)
      for (int ix = 0; ix < d.w; ++ix) {
        T acc = 0;
        for (int o = 0; o < d.oc; ++o) {
          const T* gyb = gy + (static_cast<std::size_t>(n) * d.oc + o) * d.oh * d.ow;
          const T* wb = wt + ((static_cast<std::size_t>(o) * d.c + c) * d.k) * d.k;
          for (int ky = 0; ky < d.k; ++ky) {
            const int num_y = iy + d.pad - ky;
            if (num_y < 0 || num_y % d.stride != 0) continue;
            const int oy = num_y / d.stride;
            if (oy >= d.oh) continue;
            for (int kx = 0; kx < d.k; ++kx) {
              const int num_x = ix + d.pad - kx;
              if (num_x < 0 || num_x % d.stride != 0) continue;
              const int ox = num_x / d.stride;
              if (ox >= d.ow) continue;
              acc += gyb[static_cast<std::size_t>(oy) * d.ow + ox] * wb[ky * d.k + kx];
            }
          }
        }
        gxb[static_cast<std::size_t>(iy) * d.w + ix] += acc;
      }
  }
}

template <typename T>
void conv2d_bwd_weight(const T* gy, const T* x, T* gw, T* gb, const ConvDims& d) {
  if (is_pointwise(d)) {
    pointwise_bwd_weight(gy, x, gw, gb, d);
    return;
  }
  const std::int64_t wplanes = static_cast<std::int64_t>(d.oc) * d.c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < wplanes; ++p) {
    const int o = static_cast<int>(p / d.c);
    const int c = static_cast<int>(p % d.c);
    for (int ky = 0; ky < d.k; ++ky)
      for (int kx = 0; kx < d.k; ++kx) {
        T acc = 0;
        for (int n = 0; n < d.n; ++n) {
          const T* gyb = gy + (static_cast<std::size_t>(n) * d.oc + o) * d.oh * d.ow;
          const T* xb = x + (static_cast<std::size_t>(n) * d.c + c) * d.h * d.w;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int ox = 0; ox < d.ow; ++ox) {
              const int ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += gyb[static_cast<std::size_t>(oy) * d.ow + ox] * xb[static_cast<std::size_t>(iy) * d.w + ix];
            }
          }
        }
        gw[((static_cast<std::size_t>(o) * d.c + c) * d.k + ky) * d.k + kx] += acc;
      }
  }
  if (gb) {
    for (int o = 0; o < d.oc; ++o) {
      T acc = 0;
      for (int n = 0; n < d.n; ++n) {
        const T* gyb = gy + (static_cast<std::size_t>(n) * d.oc + o) * d.oh * d.ow;
        for (int i = 0; i < d.oh * d.ow; ++i) acc += gyb[i];
      }
      gb[o] += acc;
    }
  }
}

template <typename T>
void dwconv2d_fwd(const T* x, const T* wt, const T* bias, T* y, const ConvDims& d) {
  const std::int64_t planes = static_cast<std::int64_t>(d.n) * d.c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / d.c);
    const int c = static_cast<int>(p % d.c);
    const T* xb = x + (static_cast<std::size_t>(n) * d.c + c) * d.h * d.w;
    const T* wb = wt + static_cast<std::size_t>(c) * d.k * d.k;
    T* yb = y + (static_cast<std::size_t>(n) * d.c + c) * d.oh * d.ow;
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        T acc = bias ? bias[c] : T(0);
        for (int ky = 0; ky < d.k; ++ky) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          for (int kx = 0; kx < d.k; ++kx) {
            const int ix = ox * d.stride - d.pad + kx;
            if (ix < 0 || ix >= d.w) continue;
            acc += xb[static_cast<std::size_t>(iy) * d.w + ix] * wb[ky * d.k + kx];
          }
        }
        yb[static_cast<std::size_t>(oy) * d.ow + ox] = acc;
      }
  }
}

template <typename T>
void dwconv2d_bwd_input(const T* gy, const T* wt, T* gx, const ConvDims& d) {
  const std::int64_t planes = static_cast<std::int64_t>(d.n) * d.c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / d.c);
    const int c = static_cast<int>(p % d.c);
    const T* gyb = gy + (static_cast<std::size_t>(n) * d.c + c) * d.oh * d.ow;
    const T* wb = wt + static_cast<std::size_t>(c) * d.k * d.k;
    T* gxb = gx + (static_cast<std::size_t>(n) * d.c + c) * d.h * d.w;
    for (int iy = 0; iy < d.h; ++iy)
      for (int ix = 0; ix < d.w; ++ix) {
        T acc = 0;
        for (int ky = 0; ky < d.k; ++ky) {
          const int num_y = iy + d.pad - ky;
          if (num_y < 0 || num_y % d.stride != 0) continue;
          const int oy = num_y / d.stride;
          if (oy >= d.oh) continue;
          for (int kx = 0; kx < d.k; ++kx) {
            const int num_x = ix + d.pad - kx;
            if (num_x < 0 || num_x % d.stride != 0) continue;
            const int ox = num_x / d.stride;
            if (ox >= d.ow) continue;
            acc += gyb[static_cast<std::size_t>(oy) * d.ow + ox] * wb[ky * d.k + kx];
          }
        }
        gxb[static_cast<std::size_t>(iy) * d.w + ix] += acc;
      }
  }
}

template <typename T>
void dwconv2d_bwd_weight(const T* gy, const T* x, T* gw, T* gb, const ConvDims& d) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int c = 0; c < d.c; ++c) {
    for (int ky = 0; ky < d.k; ++ky)
      for (int kx = 0; kx < d.k; ++kx) {
        T acc = 0;
        for (int n = 0; n < d.n; ++n) {
          const T* gyb = gy + (static_cast<std::size_t>(n) * d.c + c) * d.oh * d.ow;
          const T* xb = x + (static_cast<std::size_t>(n) * d.c + c) * d.h * d.w;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int ox = 0; ox < d.ow; ++ox) {
              const int ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += gyb[static_cast<std::size_t>(oy) * d.ow + ox] * xb[static_cast<std::size_t>(iy) * d.w + ix];
            }
          }
        }
        gw[(static_cast<std::size_t>(c) * d.k + ky) * d.k + kx] += acc;
      }
    if (gb) {
      T acc = 0;
      for (int n = 0; n < d.n; ++n) {
        const T* gyb = gy + (static_cast<std::size_t>(n) * d.c + c) * d.oh * d.ow;
        for (int i = 0; i < d.oh * d.ow; ++i) acc += gyb[i];
      }
      gb[c] += acc;
    }
  }
}

// Integer convolution for the quantized path: int8 operands, zero points
// subtracted inside the loop, 32-bit accumulation. Dequantization happens
// at the caller (layer boundary).
inline void qconv2d_fwd(const std::int8_t* x, int zx, const std::int8_t* wt, int zw, std::int32_t* acc_out,
                        const ConvDims& d) {
  if (is_pointwise(d)) {
    const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
    const std::int64_t pw_planes = static_cast<std::int64_t>(d.n) * d.oc;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t p = 0; p < pw_planes; ++p) {
      const int n = static_cast<int>(p / d.oc);
      const int o = static_cast<int>(p % d.oc);
      const std::int8_t* xb = x + static_cast<std::size_t>(n) * d.c * hw;
      const std::int8_t* wb = wt + static_cast<std::size_t>(o) * d.c;
      std::int32_t* yb = acc_out + (static_cast<std::size_t>(n) * d.oc + o) * hw;
      for (std::size_t i = 0; i < hw; ++i) yb[i] = 0;
      for (int c = 0; c < d.c; ++c) {
        const std::int32_t wv = static_cast<std::int32_t>(wb[c]) - zw;
        const std::int8_t* xc = xb + static_cast<std::size_t>(c) * hw;
        for (std::size_t i = 0; i < hw; ++i) yb[i] += wv * (static_cast<std::int32_t>(xc[i]) - zx);
      }
    }
    return;
  }
  const std::int64_t planes = static_cast<std::int64_t>(d.n) * d.oc;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / d.oc);
    const int o = static_cast<int>(p % d.oc);
    const std::int8_t* xb = x + static_cast<std::size_t>(n) * d.c * d.h * d.w;
    const std::int8_t* wb = wt + static_cast<std::size_t>(o) * d.c * d.k * d.k;
    std::int32_t* yb = acc_out + (static_cast<std::size_t>(n) * d.oc + o) * d.oh * d.ow;
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        std::int32_t acc = 0;
        for (int c = 0; c < d.c; ++c)
          for (int ky = 0; ky < d.k; ++ky) {
            const int iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int kx = 0; kx < d.k; ++kx) {
              const int ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.w) continue;
              const std::int32_t xv =
                  static_cast<std::int32_t>(xb[((static_cast<std::size_t>(c) * d.h) + iy) * d.w + ix]) - zx;
              const std::int32_t wv =
                  static_cast<std::int32_t>(wb[(static_cast<std::size_t>(c) * d.k + ky) * d.k + kx]) - zw;
              acc += xv * wv;
            }
          }
        yb[static_cast<std::size_t>(oy) * d.ow + ox] = acc;
      }
  }
}

inline void qdwconv2d_fwd(const std::int8_t* x, int zx, const std::int8_t* wt, int zw, std::int32_t* acc_out,
                          const ConvDims& d) {
  const std::int64_t planes = static_cast<std::int64_t>(d.n) * d.c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / d.c);
    const int c = static_cast<int>(p % d.c);
    const std::int8_t* xb = x + (static_cast<std::size_t>(n) * d.c + c) * d.h * d.w;
    const std::int8_t* wb = wt + static_cast<std::size_t>(c) * d.k * d.k;
    std::int32_t* yb = acc_out + (static_cast<std::size_t>(n) * d.c + c) * d.oh * d.ow;
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        std::int32_t acc = 0;
        for (int ky = 0; ky < d.k; ++ky) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          for (int kx = 0; kx < d.k; ++kx) {
            const int ix = ox * d.stride - d.pad + kx;
            if (ix < 0 || ix >= d.w) continue;
            acc += (static_cast<std::int32_t>(xb[static_cast<std::size_t>(iy) * d.w + ix]) - zx) *
                   (static_cast<std::int32_t>(wb[ky * d.k + kx]) - zw);
          }
        }
        yb[static_cast<std::size_t>(oy) * d.ow + ox] = acc;
      }
  }
}

}  // namespace kern

}  // namespace itmn
