#pragma once

// Differentiable network building blocks on top of the tensor core:
// dense and depthwise convolution, batch normalization, pooling, fully
// connected, head flattening, and the training losses.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "itmn/kernels.hpp"
#include "itmn/rng.hpp"
#include "itmn/tensor.hpp"

namespace itmn {

template <typename T>
ConvDims make_conv_dims(const Tensor<T>& x, int oc, int k, int stride, int pad, const char* op) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(op) + ": input must be [N,C,H,W]");
  ConvDims d;
  d.n = x.shape()[0];
  d.c = x.shape()[1];
  d.h = x.shape()[2];
  d.w = x.shape()[3];
  d.oc = oc;
  d.k = k;
  d.stride = stride;
  d.pad = pad;
  d.oh = conv_out_extent(d.h, k, stride, pad);
  d.ow = conv_out_extent(d.w, k, stride, pad);
  if (d.oh <= 0 || d.ow <= 0)
    throw std::invalid_argument(std::string(op) + ": non-positive output extent for input " + shape_str(x.shape()));
  return d;
}

// x [N,C,H,W], w [OC,C,k,k], optional bias [OC].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  if (w.rank() != 4) throw std::invalid_argument("conv2d: weight must be [OC,C,k,k]");
  const int oc = w.shape()[0], wc = w.shape()[1], k = w.shape()[2];
  ConvDims d = make_conv_dims(x, oc, k, stride, pad, "conv2d");
  if (wc != d.c)
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape()) + " vs weight " +
                                shape_str(w.shape()));
  std::vector<T> v(static_cast<std::size_t>(d.n) * d.oc * d.oh * d.ow);
  kern::conv2d_fwd(x.data().data(), w.data().data(), b.defined() ? b.data().data() : nullptr, v.data(), d);
  Tensor<T> out({d.n, d.oc, d.oh, d.ow}, std::move(v));
  if (detail::track(x) || detail::track(w) || (b.defined() && detail::track(b))) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = b.defined() ? b.node() : nullptr;
    detail::finish_op(out, [xn, wn, bn, on, d] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        kern::conv2d_bwd_input(on->grad.data(), wn->value.data(), xn->grad.data(), d);
      }
      if (wn->requires_grad || (bn && bn->requires_grad)) {
        wn->ensure_grad();
        if (bn) bn->ensure_grad();
        kern::conv2d_bwd_weight(on->grad.data(), xn->value.data(), wn->grad.data(),
                                bn && bn->requires_grad ? bn->grad.data() : nullptr, d);
      }
    });
  }
  return out;
}

// x [N,C,H,W], w [C,1,k,k], optional bias [C].
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  if (w.rank() != 4 || w.shape()[1] != 1) throw std::invalid_argument("depthwise_conv2d: weight must be [C,1,k,k]");
  const int k = w.shape()[2];
  ConvDims d = make_conv_dims(x, x.shape()[1], k, stride, pad, "depthwise_conv2d");
  if (w.shape()[0] != d.c)
    throw std::invalid_argument("depthwise_conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                " vs weight " + shape_str(w.shape()));
  std::vector<T> v(static_cast<std::size_t>(d.n) * d.c * d.oh * d.ow);
  kern::dwconv2d_fwd(x.data().data(), w.data().data(), b.defined() ? b.data().data() : nullptr, v.data(), d);
  Tensor<T> out({d.n, d.c, d.oh, d.ow}, std::move(v));
  if (detail::track(x) || detail::track(w) || (b.defined() && detail::track(b))) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = b.defined() ? b.node() : nullptr;
    detail::finish_op(out, [xn, wn, bn, on, d] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        kern::dwconv2d_bwd_input(on->grad.data(), wn->value.data(), xn->grad.data(), d);
      }
      if (wn->requires_grad || (bn && bn->requires_grad)) {
        wn->ensure_grad();
        if (bn) bn->ensure_grad();
        kern::dwconv2d_bwd_weight(on->grad.data(), xn->value.data(), wn->grad.data(),
                                  bn && bn->requires_grad ? bn->grad.data() : nullptr, d);
      }
    });
  }
  return out;
}

// 2x2 window, stride 2, floor extents; ties route the adjoint to the first
// occurrence in row-major window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  if (x.rank() != 4) throw std::invalid_argument("maxpool2d: input must be [N,C,H,W]");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (h < 2 || w < 2) throw std::invalid_argument("maxpool2d: degenerate input extent " + shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  std::vector<T> v(static_cast<std::size_t>(n) * c * oh * ow);
  std::vector<std::size_t> arg(v.size());
  for (int p = 0; p < n * c; ++p) {
    const T* xb = x.data().data() + static_cast<std::size_t>(p) * h * w;
    T* yb = v.data() + static_cast<std::size_t>(p) * oh * ow;
    std::size_t* ab = arg.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        std::size_t best = static_cast<std::size_t>(2 * oy) * w + 2 * ox;
        T bv = xb[best];
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t i = static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
            if (xb[i] > bv) {
              bv = xb[i];
              best = i;
            }
          }
        yb[static_cast<std::size_t>(oy) * ow + ox] = bv;
        ab[static_cast<std::size_t>(oy) * ow + ox] = static_cast<std::size_t>(p) * h * w + best;
      }
  }
  Tensor<T> out({n, c, oh, ow}, std::move(v));
  if (detail::track(x)) {
    auto xn = x.node(), on = out.node();
    auto argp = std::make_shared<std::vector<std::size_t>>(std::move(arg));
    detail::finish_op(out, [xn, on, argp] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->value.size(); ++i) xn->grad[(*argp)[i]] += on->grad[i];
    });
  }
  return out;
}

// [N,C,H,W] -> [N,C] per-channel spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw std::invalid_argument("global_avg_pool: input must be [N,C,H,W]");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const T inv = T(1) / static_cast<T>(h * w);
  std::vector<T> v(static_cast<std::size_t>(n) * c);
  for (int p = 0; p < n * c; ++p) {
    const T* xb = x.data().data() + static_cast<std::size_t>(p) * h * w;
    T acc = 0;
    for (int i = 0; i < h * w; ++i) acc += xb[i];
    v[p] = acc * inv;
  }
  Tensor<T> out({n, c}, std::move(v));
  if (detail::track(x)) {
    auto xn = x.node(), on = out.node();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    detail::finish_op(out, [xn, on, hw, inv] {
      xn->ensure_grad();
      for (std::size_t p = 0; p < on->value.size(); ++p) {
        const T g = on->grad[p] * inv;
        T* gx = xn->grad.data() + p * hw;
        for (std::size_t i = 0; i < hw; ++i) gx[i] += g;
      }
    });
  }
  return out;
}

// x [N,din], w [dout,din], b [dout] -> x.w^T + b.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2) throw std::invalid_argument("linear: rank-2 input and weight required");
  const int n = x.shape()[0], din = x.shape()[1], dout = w.shape()[0];
  if (w.shape()[1] != din)
    throw std::invalid_argument("linear: dimension mismatch, input " + shape_str(x.shape()) + " vs weight " +
                                shape_str(w.shape()));
  std::vector<T> v(static_cast<std::size_t>(n) * dout);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dout; ++j) {
      T acc = b.defined() ? b.data()[j] : T(0);
      for (int t = 0; t < din; ++t) acc += x.data()[i * din + t] * w.data()[j * din + t];
      v[static_cast<std::size_t>(i) * dout + j] = acc;
    }
  Tensor<T> out({n, dout}, std::move(v));
  if (detail::track(x) || detail::track(w) || (b.defined() && detail::track(b))) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = b.defined() ? b.node() : nullptr;
    detail::finish_op(out, [xn, wn, bn, on, n, din, dout] {
      const T* g = on->grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int t = 0; t < din; ++t) {
            T acc = 0;
            for (int j = 0; j < dout; ++j) acc += g[i * dout + j] * wn->value[j * din + t];
            xn->grad[static_cast<std::size_t>(i) * din + t] += acc;
          }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        for (int j = 0; j < dout; ++j)
          for (int t = 0; t < din; ++t) {
            T acc = 0;
            for (int i = 0; i < n; ++i) acc += g[i * dout + j] * xn->value[i * din + t];
            wn->grad[static_cast<std::size_t>(j) * din + t] += acc;
          }
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < dout; ++j) {
          T acc = 0;
          for (int i = 0; i < n; ++i) acc += g[i * dout + j];
          bn->grad[j] += acc;
        }
      }
    });
  }
  return out;
}

// Training-mode batch normalization over (N,H,W) per channel with biased
// variance. Batch statistics are written to *out_mean / *out_var so the
// caller can maintain running estimates.
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                          std::vector<T>* out_mean, std::vector<T>* out_var) {
  if (x.rank() != 4) throw std::invalid_argument("batchnorm: input must be [N,C,H,W]");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t m = static_cast<std::size_t>(n) * h * w;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<T> mean(c, T(0)), var(c, T(0)), inv(c);
  for (int ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (int b = 0; b < n; ++b) {
      const T* xb = x.data().data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) acc += xb[i];
    }
    mean[ch] = acc / static_cast<T>(m);
    T acc2 = 0;
    for (int b = 0; b < n; ++b) {
      const T* xb = x.data().data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T d = xb[i] - mean[ch];
        acc2 += d * d;
      }
    }
    var[ch] = acc2 / static_cast<T>(m);
    inv[ch] = T(1) / std::sqrt(var[ch] + eps);
  }
  std::vector<T> v(x.numel());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T* xb = x.data().data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      T* yb = v.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      const T g = gamma.data()[ch], bt = beta.data()[ch], mu = mean[ch], iv = inv[ch];
      for (std::size_t i = 0; i < hw; ++i) yb[i] = g * (xb[i] - mu) * iv + bt;
    }
  if (out_mean) *out_mean = mean;
  if (out_var) *out_var = var;
  Tensor<T> out(x.shape(), std::move(v));
  if (detail::track(x) || detail::track(gamma) || detail::track(beta)) {
    auto xn = x.node(), gn = gamma.node(), btn = beta.node(), on = out.node();
    auto meanp = std::make_shared<std::vector<T>>(std::move(mean));
    auto invp = std::make_shared<std::vector<T>>(std::move(inv));
    detail::finish_op(out, [xn, gn, btn, on, meanp, invp, n, c, hw, m] {
      for (int ch = 0; ch < c; ++ch) {
        const T mu = (*meanp)[ch], iv = (*invp)[ch], gm = gn->value[ch];
        T sum_g = 0, sum_gx = 0;  // sum of grads and grads*xhat
        for (int b = 0; b < n; ++b) {
          const T* gy = on->grad.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
          const T* xb = xn->value.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_g += gy[i];
            sum_gx += gy[i] * (xb[i] - mu) * iv;
          }
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          gn->grad[ch] += sum_gx;
        }
        if (btn->requires_grad) {
          btn->ensure_grad();
          btn->grad[ch] += sum_g;
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const T scale = gm * iv / static_cast<T>(m);
          for (int b = 0; b < n; ++b) {
            const T* gy = on->grad.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            const T* xb = xn->value.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            T* gx = xn->grad.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const T xhat = (xb[i] - mu) * iv;
              gx[i] += scale * (static_cast<T>(m) * gy[i] - sum_g - xhat * sum_gx);
            }
          }
        }
      }
    });
  }
  return out;
}

// Inference-mode batch normalization: per-channel affine from running stats.
template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const std::vector<T>& running_mean, const std::vector<T>& running_var, T eps) {
  if (x.rank() != 4) throw std::invalid_argument("batchnorm: input must be [N,C,H,W]");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<T> scale(c), shift(c);
  for (int ch = 0; ch < c; ++ch) {
    scale[ch] = gamma.data()[ch] / std::sqrt(running_var[ch] + eps);
    shift[ch] = beta.data()[ch] - scale[ch] * running_mean[ch];
  }
  std::vector<T> v(x.numel());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T* xb = x.data().data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      T* yb = v.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) yb[i] = scale[ch] * xb[i] + shift[ch];
    }
  Tensor<T> out(x.shape(), std::move(v));
  if (detail::track(x) || detail::track(gamma) || detail::track(beta)) {
    auto xn = x.node(), gn = gamma.node(), btn = beta.node(), on = out.node();
    auto scalep = std::make_shared<std::vector<T>>(std::move(scale));
    auto rmp = std::make_shared<std::vector<T>>(running_mean);
    auto rvp = std::make_shared<std::vector<T>>(running_var);
    detail::finish_op(out, [xn, gn, btn, on, scalep, rmp, rvp, eps, n, c, hw] {
      for (int ch = 0; ch < c; ++ch) {
        const T iv = T(1) / std::sqrt((*rvp)[ch] + eps);
        T sum_g = 0, sum_gx = 0;
        for (int b = 0; b < n; ++b) {
          const T* gy = on->grad.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
          const T* xb = xn->value.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_g += gy[i];
            sum_gx += gy[i] * (xb[i] - (*rmp)[ch]) * iv;
          }
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          gn->grad[ch] += sum_gx;
        }
        if (btn->requires_grad) {
          btn->ensure_grad();
          btn->grad[ch] += sum_g;
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const T s = (*scalep)[ch];
          for (int b = 0; b < n; ++b) {
            const T* gy = on->grad.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            T* gx = xn->grad.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) gx[i] += s * gy[i];
          }
        }
      }
    });
  }
  return out;
}

// Head output [1, Dn*K, f, f] -> [f*f*Dn, K]. Row order is row-major cell
// then box index; this ordering is the cross-module contract shared with
// default-box generation.
template <typename T>
Tensor<T> flatten_head(const Tensor<T>& x, int dn, int k) {
  if (x.rank() != 4 || x.shape()[0] != 1) throw std::invalid_argument("flatten_head: input must be [1,C,H,W]");
  const int c = x.shape()[1], fh = x.shape()[2], fw = x.shape()[3];
  if (c != dn * k) throw std::invalid_argument("flatten_head: channel count " + std::to_string(c) +
                                               " != Dn*K = " + std::to_string(dn * k));
  const int rows = fh * fw * dn;
  std::vector<T> v(static_cast<std::size_t>(rows) * k);
  const std::size_t hw = static_cast<std::size_t>(fh) * fw;
  for (int y = 0; y < fh; ++y)
    for (int xx = 0; xx < fw; ++xx)
      for (int d = 0; d < dn; ++d)
        for (int j = 0; j < k; ++j) {
          const std::size_t src = (static_cast<std::size_t>(d * k + j)) * hw + static_cast<std::size_t>(y) * fw + xx;
          v[(static_cast<std::size_t>((y * fw + xx) * dn + d)) * k + j] = x.data()[src];
        }
  Tensor<T> out({rows, k}, std::move(v));
  if (detail::track(x)) {
    auto xn = x.node(), on = out.node();
    detail::finish_op(out, [xn, on, fh, fw, dn, k, hw] {
      xn->ensure_grad();
      for (int y = 0; y < fh; ++y)
        for (int xx = 0; xx < fw; ++xx)
          for (int d = 0; d < dn; ++d)
            for (int j = 0; j < k; ++j) {
              const std::size_t src =
                  (static_cast<std::size_t>(d * k + j)) * hw + static_cast<std::size_t>(y) * fw + xx;
              xn->grad[src] += on->grad[(static_cast<std::size_t>((y * fw + xx) * dn + d)) * k + j];
            }
    });
  }
  return out;
}

// Focal classification loss over softmax probabilities, averaged over all
// rows: FL(p_t) = -(1-p_t)^gamma * log(p_t), p_t clamped at 1e-7.
template <typename T>
Tensor<T> softmax_focal_loss(const Tensor<T>& scores, const std::vector<int>& labels, T gamma) {
  if (scores.rank() != 2) throw std::invalid_argument("softmax_focal_loss: scores must be [M,Cls]");
  const int m = scores.shape()[0], cls = scores.shape()[1];
  if (static_cast<int>(labels.size()) != m)
    throw std::invalid_argument("softmax_focal_loss: label count mismatch");
  const T clampv = T(1e-7);
  std::vector<T> probs(scores.numel());
  T total = 0;
  for (int i = 0; i < m; ++i) {
    const T* s = scores.data().data() + static_cast<std::size_t>(i) * cls;
    T* p = probs.data() + static_cast<std::size_t>(i) * cls;
    T mx = s[0];
    for (int j = 1; j < cls; ++j) mx = std::max(mx, s[j]);
    T z = 0;
    for (int j = 0; j < cls; ++j) {
      p[j] = std::exp(s[j] - mx);
      z += p[j];
    }
    for (int j = 0; j < cls; ++j) p[j] /= z;
    const T pt = std::max(p[labels[i]], clampv);
    total += -std::pow(T(1) - pt, gamma) * std::log(pt);
  }
  const T invm = T(1) / static_cast<T>(m);
  Tensor<T> out({1}, {total * invm});
  if (detail::track(scores)) {
    auto sn = scores.node(), on = out.node();
    auto probsp = std::make_shared<std::vector<T>>(std::move(probs));
    auto labelsp = std::make_shared<std::vector<int>>(labels);
    detail::finish_op(out, [sn, on, probsp, labelsp, m, cls, gamma, clampv, invm] {
      sn->ensure_grad();
      const T g0 = on->grad[0] * invm;
      for (int i = 0; i < m; ++i) {
        const T* p = probsp->data() + static_cast<std::size_t>(i) * cls;
        const int t = (*labelsp)[i];
        const T pt = std::max(p[t], clampv);
        // dFL/dp_t
        T dfl;
        if (gamma == T(0)) {
          dfl = -T(1) / pt;
        } else {
          dfl = gamma * std::pow(T(1) - pt, gamma - T(1)) * std::log(pt) - std::pow(T(1) - pt, gamma) / pt;
        }
        for (int j = 0; j < cls; ++j) {
          const T dptds = pt * ((j == t ? T(1) : T(0)) - p[j]);
          sn->grad[static_cast<std::size_t>(i) * cls + j] += g0 * dfl * dptds;
        }
      }
    });
  }
  return out;
}

// Smooth-L1 regression loss, mean over rows (each row sums its K
// coordinate terms). Targets are constants.
template <typename T>
Tensor<T> smooth_l1_mean(const Tensor<T>& pred, const std::vector<T>& target) {
  if (pred.rank() != 2) throw std::invalid_argument("smooth_l1_mean: pred must be rank-2");
  if (pred.numel() != target.size()) throw std::invalid_argument("smooth_l1_mean: target size mismatch");
  const int rows = pred.shape()[0];
  if (rows == 0) return Tensor<T>::scalar(T(0));
  T total = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const T d = pred.data()[i] - target[i];
    const T a = std::abs(d);
    total += a < T(1) ? T(0.5) * d * d : a - T(0.5);
  }
  const T invr = T(1) / static_cast<T>(rows);
  Tensor<T> out({1}, {total * invr});
  if (detail::track(pred)) {
    auto pn = pred.node(), on = out.node();
    auto targetp = std::make_shared<std::vector<T>>(target);
    detail::finish_op(out, [pn, on, targetp, invr] {
      pn->ensure_grad();
      const T g0 = on->grad[0] * invr;
      for (std::size_t i = 0; i < pn->value.size(); ++i) {
        const T d = pn->value[i] - (*targetp)[i];
        pn->grad[i] += g0 * (d > T(1) ? T(1) : d < T(-1) ? T(-1) : d);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter-holder layers.

template <typename T>
Tensor<T> uniform_init(Rng& rng, std::vector<int> shape, int fan_in) {
  const double r = std::sqrt(1.0 / std::max(1, fan_in));
  std::vector<T> d(shape_numel(shape));
  for (auto& v : d) v = static_cast<T>(rng.uniform(-r, r));
  return Tensor<T>(std::move(shape), std::move(d), true);
}

template <typename T>
struct Conv2dLayer {
  Tensor<T> w, b;
  int stride = 1, pad = 1;

  static Conv2dLayer create(Rng& rng, int in_c, int out_c, int k, int stride, int pad, bool bias = true) {
    Conv2dLayer l;
    l.w = uniform_init<T>(rng, {out_c, in_c, k, k}, in_c * k * k);
    if (bias) l.b = uniform_init<T>(rng, {out_c}, in_c * k * k);
    l.stride = stride;
    l.pad = pad;
    return l;
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w", w);
    if (b.defined()) fn(prefix + ".b", b);
  }
};

// Depthwise spatial filter followed by a 1x1 pointwise mix; bias-free, the
// following batch norm supplies the shift.
template <typename T>
struct SeparableConv2dLayer {
  Tensor<T> dw, pw;
  int stride = 1, pad = 1;

  static SeparableConv2dLayer create(Rng& rng, int in_c, int out_c, int k, int stride, int pad) {
    SeparableConv2dLayer l;
    l.dw = uniform_init<T>(rng, {in_c, 1, k, k}, k * k);
    l.pw = uniform_init<T>(rng, {out_c, in_c, 1, 1}, in_c);
    l.stride = stride;
    l.pad = pad;
    return l;
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> none;
    Tensor<T> mid = depthwise_conv2d(x, dw, none, stride, pad);
    return conv2d(mid, pw, none, 1, 0);
  }
  std::size_t param_count() const { return dw.numel() + pw.numel(); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".dw", dw);
    fn(prefix + ".pw", pw);
  }
};

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  // EMA of the raw per-channel square mean; keeping it separately lets the
  // variance estimate include variance BETWEEN images, which an EMA of
  // per-image variances misses entirely (each training forward carries a
  // single image, so its batch variance is purely spatial).
  std::vector<T> running_sqmean;
  T eps = T(1e-5);
  T momentum = T(0.1);

  static BatchNormLayer create(int channels) {
    BatchNormLayer l;
    l.gamma = Tensor<T>::full({channels}, T(1), true);
    l.beta = Tensor<T>::zeros({channels}, true);
    l.running_mean.assign(channels, T(0));
    l.running_var.assign(channels, T(1));
    l.running_sqmean.assign(channels, T(1));
    return l;
  }

  // Exact input moments gathered across a calibration set, used to replace
  // the EMA estimates after training.
  bool accumulate_stats = false;
  std::vector<double> stat_sum, stat_sqsum;
  double stat_count = 0;

  // Training normalizes with the same running statistics inference uses
  // (updated first from the incoming activation's raw moments), so the
  // network optimizes the exact function it is evaluated as. Gradients
  // treat the statistics as constants.
  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    if (!training) return batchnorm_infer(x, gamma, beta, running_mean, running_var, eps);
    if (accumulate_stats) gather_stats(x);
    update_ema(x);
    return batchnorm_infer(x, gamma, beta, running_mean, running_var, eps);
  }

  void update_ema(const Tensor<T>& x) {
    const int n = x.shape()[0], ch = x.shape()[1];
    const std::size_t hw = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
    const T count = static_cast<T>(static_cast<double>(n) * hw);
    for (int c = 0; c < ch; ++c) {
      T sum = 0, sq = 0;
      for (int b = 0; b < n; ++b) {
        const T* p = x.data().data() + (static_cast<std::size_t>(b) * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum += p[i];
          sq += p[i] * p[i];
        }
      }
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * (sum / count);
      running_sqmean[c] = (T(1) - momentum) * running_sqmean[c] + momentum * (sq / count);
      running_var[c] = std::max(T(0), running_sqmean[c] - running_mean[c] * running_mean[c]);
    }
  }

  void begin_stats() {
    const std::size_t ch = running_mean.size();
    accumulate_stats = true;
    stat_sum.assign(ch, 0.0);
    stat_sqsum.assign(ch, 0.0);
    stat_count = 0;
  }

  void gather_stats(const Tensor<T>& x) {
    const int n = x.shape()[0], ch = x.shape()[1];
    const std::size_t hw = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < ch; ++c) {
        const T* p = x.data().data() + (static_cast<std::size_t>(b) * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          stat_sum[c] += p[i];
          stat_sqsum[c] += static_cast<double>(p[i]) * p[i];
        }
      }
    stat_count += static_cast<double>(n) * hw;
  }

  void finish_stats() {
    accumulate_stats = false;
    if (stat_count <= 0) return;
    for (std::size_t c = 0; c < running_mean.size(); ++c) {
      const double m = stat_sum[c] / stat_count;
      const double sq = stat_sqsum[c] / stat_count;
      running_mean[c] = static_cast<T>(m);
      running_sqmean[c] = static_cast<T>(sq);
      running_var[c] = static_cast<T>(std::max(0.0, sq - m * m));
    }
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

template <typename T>
struct LinearLayer {
  Tensor<T> w, b;

  static LinearLayer create(Rng& rng, int in_d, int out_d) {
    LinearLayer l;
    l.w = uniform_init<T>(rng, {out_d, in_d}, in_d);
    l.b = uniform_init<T>(rng, {out_d}, in_d);
    return l;
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
};

// NIN merge: 1x1 conv halving an even channel count, then ReLU.
template <typename T>
struct NinBlock {
  Conv2dLayer<T> conv;

  static NinBlock create(Rng& rng, int in_c) {
    if (in_c % 2 != 0) throw std::invalid_argument("nin_block: odd channel count " + std::to_string(in_c));
    NinBlock b;
    b.conv = Conv2dLayer<T>::create(rng, in_c, in_c / 2, 1, 1, 0);
    return b;
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.shape()[1] % 2 != 0) throw std::invalid_argument("nin_block: odd channel count at runtime");
    return relu(conv(x));
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    conv.visit(prefix + ".conv", fn);
  }
};

}  // namespace itmn
