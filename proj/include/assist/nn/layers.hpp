#ifndef ASSIST_NN_LAYERS_HPP_
#define ASSIST_NN_LAYERS_HPP_

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "assist/nn/config.hpp"
#include "assist/nn/tensor.hpp"

// Batched NCHW kernels with explicit forward/backward pairs. Convolutions go
// through im2col + GEMM; every per-channel or per-example reduction
// accumulates in double.
namespace assist::nn::ops {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

// Output columns [lo, hi) read an in-bounds input column for kernel offset kj.
inline std::pair<int, int> valid_cols(int kj, int stride, int pad, int width, int out_w) {
  int lo = 0;
  while (lo < out_w && lo * stride - pad + kj < 0) ++lo;
  int hi = out_w;
  while (hi > lo && (hi - 1) * stride - pad + kj >= width) --hi;
  return {lo, hi};
}

template <typename S>
void im2col(const S* x, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, S* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c)
    for (int ki = 0; ki < kernel; ++ki)
      for (int kj = 0; kj < kernel; ++kj) {
        S* row = col + static_cast<std::size_t>((c * kernel + ki) * kernel + kj) * plane;
        const S* src = x + static_cast<std::size_t>(c) * height * width;
        const auto [lo, hi] = valid_cols(kj, stride, pad, width, out_w);
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          S* dst = row + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, S(0));
            continue;
          }
          std::fill(dst, dst + lo, S(0));
          std::fill(dst + hi, dst + out_w, S(0));
          const S* in = src + ih * width - pad + kj;
          if (stride == 1) {
            std::copy(in + lo, in + hi, dst + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow] = in[ow * stride];
          }
        }
      }
}

template <typename S>
void col2im_add(const S* col, int channels, int height, int width, int kernel, int stride, int pad,
                int out_h, int out_w, S* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c)
    for (int ki = 0; ki < kernel; ++ki)
      for (int kj = 0; kj < kernel; ++kj) {
        const S* row = col + static_cast<std::size_t>((c * kernel + ki) * kernel + kj) * plane;
        S* dst = x + static_cast<std::size_t>(c) * height * width;
        const auto [lo, hi] = valid_cols(kj, stride, pad, width, out_w);
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          S* out = dst + ih * width - pad + kj;
          const S* in = row + oh * out_w;
          if (stride == 1) {
            for (int ow = lo; ow < hi; ++ow) out[ow] += in[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) out[ow * stride] += in[ow];
          }
        }
      }
}

// weight: (out_c, in_c, k, k); no bias.
template <typename S>
Tensor<S> conv_forward(const Tensor<S>& x, const Tensor<S>& weight, int stride, int pad) {
  const int n = static_cast<int>(x.dim(0)), c = static_cast<int>(x.dim(1));
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  const int oc = static_cast<int>(weight.dim(0)), k = static_cast<int>(weight.dim(2));
  require(static_cast<int>(weight.dim(1)) == c, "conv input channels mismatch");
  const int oh = conv_out_extent(h, k, stride, pad), ow = conv_out_extent(w, k, stride, pad);
  require(oh > 0 && ow > 0, "conv output would be empty");
  Tensor<S> y({std::size_t(n), std::size_t(oc), std::size_t(oh), std::size_t(ow)});
  const int ckk = c * k * k, plane = oh * ow;
  ConstMatMap<S> wm(weight.data(), oc, ckk);
  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  std::vector<S> col(pointwise ? 0 : static_cast<std::size_t>(ckk) * plane);
  for (int i = 0; i < n; ++i) {
    const S* xi = x.data() + static_cast<std::size_t>(i) * c * h * w;
    if (!pointwise) im2col(xi, c, h, w, k, stride, pad, oh, ow, col.data());
    ConstMatMap<S> cm(pointwise ? xi : col.data(), ckk, plane);
    MatMap<S> ym(y.data() + static_cast<std::size_t>(i) * oc * plane, oc, plane);
    ym.noalias() = wm * cm;
  }
  return y;
}

// Accumulates into grad_weight; returns grad wrt x when need_input_grad.
template <typename S>
Tensor<S> conv_backward(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& grad_y,
                        int stride, int pad, Tensor<S>& grad_weight, bool need_input_grad) {
  const int n = static_cast<int>(x.dim(0)), c = static_cast<int>(x.dim(1));
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  const int oc = static_cast<int>(weight.dim(0)), k = static_cast<int>(weight.dim(2));
  const int oh = static_cast<int>(grad_y.dim(2)), ow = static_cast<int>(grad_y.dim(3));
  const int ckk = c * k * k, plane = oh * ow;
  ConstMatMap<S> wm(weight.data(), oc, ckk);
  MatMap<S> gwm(grad_weight.data(), oc, ckk);
  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  std::vector<S> col(pointwise ? 0 : static_cast<std::size_t>(ckk) * plane);
  std::vector<S> gcol(need_input_grad && !pointwise ? static_cast<std::size_t>(ckk) * plane : 0);
  Tensor<S> gx;
  if (need_input_grad) gx = Tensor<S>(x.shape());
  for (int i = 0; i < n; ++i) {
    const S* xi = x.data() + static_cast<std::size_t>(i) * c * h * w;
    if (!pointwise) im2col(xi, c, h, w, k, stride, pad, oh, ow, col.data());
    ConstMatMap<S> cm(pointwise ? xi : col.data(), ckk, plane);
    ConstMatMap<S> gym(grad_y.data() + static_cast<std::size_t>(i) * oc * plane, oc, plane);
    gwm.noalias() += gym * cm.transpose();
    if (!need_input_grad) continue;
    S* gxi = gx.data() + static_cast<std::size_t>(i) * c * h * w;
    if (pointwise) {
      MatMap<S> gxm(gxi, ckk, plane);
      gxm.noalias() = wm.transpose() * gym;
    } else {
      MatMap<S> gcm(gcol.data(), ckk, plane);
      gcm.noalias() = wm.transpose() * gym;
      col2im_add(gcol.data(), c, h, w, k, stride, pad, oh, ow, gxi);
    }
  }
  return gx;
}

struct BnBatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased (population) variance of the batch
  std::size_t count = 0;    // values per channel
};

template <typename S>
struct BnCache {
  Tensor<S> xhat;
  std::vector<double> inv_std;
  bool training = false;
};

// Per-channel batch normalization. In training mode normalizes with batch
// statistics (returned through `stats`); in eval mode with the running buffers.
template <typename S>
Tensor<S> bn_forward(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     const Tensor<S>& running_mean, const Tensor<S>& running_var, bool training,
                     double eps, BnCache<S>* cache, BnBatchStats* stats) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  require(gamma.size() == c, "batch norm channel mismatch");
  std::vector<double> mean(c), var(c);
  if (training) {
    const double m = static_cast<double>(n * plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const S* p = x.data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) sum += p[j];
      }
      mean[ch] = sum / m;
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const S* p = x.data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = p[j] - mean[ch];
          ss += d * d;
        }
      }
      var[ch] = ss / m;
    }
    if (stats) *stats = {mean, var, n * plane};
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      var[ch] = running_var[ch];
    }
  }
  Tensor<S> y(x.shape());
  Tensor<S> xhat;
  if (cache) xhat = Tensor<S>(x.shape());
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
    const S mu = static_cast<S>(mean[ch]), is = static_cast<S>(inv_std[ch]);
    const S g = gamma[ch], b = beta[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const S xh = (x[off + j] - mu) * is;
        if (cache) xhat[off + j] = xh;
        y[off + j] = g * xh + b;
      }
    }
  }
  if (cache) *cache = {std::move(xhat), std::move(inv_std), training};
  return y;
}

template <typename S>
Tensor<S> bn_backward(const BnCache<S>& cache, const Tensor<S>& gamma, const Tensor<S>& grad_y,
                      Tensor<S>& grad_gamma, Tensor<S>& grad_beta) {
  const auto& xhat = cache.xhat;
  const std::size_t n = xhat.dim(0), c = xhat.dim(1), plane = xhat.dim(2) * xhat.dim(3);
  const double m = static_cast<double>(n * plane);
  Tensor<S> gx(xhat.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_g += grad_y[off + j];
        sum_gx += static_cast<double>(grad_y[off + j]) * xhat[off + j];
      }
    }
    grad_gamma[ch] += static_cast<S>(sum_gx);
    grad_beta[ch] += static_cast<S>(sum_g);
    const double scale = gamma[ch] * cache.inv_std[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        double g = grad_y[off + j];
        if (cache.training) g -= (sum_g + xhat[off + j] * sum_gx) / m;
        gx[off + j] = static_cast<S>(scale * g);
      }
    }
  }
  return gx;
}

template <typename S>
void relu_inplace(Tensor<S>& x) {
  for (auto& v : x.values()) v = v > S(0) ? v : S(0);
}

// grad wrt relu input, given relu output.
template <typename S>
void relu_backward_inplace(const Tensor<S>& out, Tensor<S>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(out[i] > S(0))) grad[i] = S(0);
}

struct PoolCache {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;  // max pooling only
};

// Average pooling counts padded cells as zeros (count_include_pad).
template <typename S>
Tensor<S> pool_forward(const Tensor<S>& x, const PoolSpec& spec, PoolCache* cache) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  const int oh = conv_out_extent(h, spec.kernel, spec.stride, spec.pad);
  const int ow = conv_out_extent(w, spec.kernel, spec.stride, spec.pad);
  require(oh > 0 && ow > 0, "pool output would be empty");
  Tensor<S> y({n, c, std::size_t(oh), std::size_t(ow)});
  std::vector<std::uint32_t> argmax;
  if (spec.kind == PoolKind::max) argmax.resize(y.size());
  const double area = static_cast<double>(spec.kernel) * spec.kernel;
  for (std::size_t p = 0; p < n * c; ++p) {
    const S* src = x.data() + p * h * w;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const std::size_t o = (p * oh + i) * ow + j;
        double acc = 0.0;
        S best = -std::numeric_limits<S>::infinity();
        std::uint32_t best_idx = 0;
        for (int ki = 0; ki < spec.kernel; ++ki) {
          const int ih = i * spec.stride - spec.pad + ki;
          if (ih < 0 || ih >= h) continue;
          for (int kj = 0; kj < spec.kernel; ++kj) {
            const int iw = j * spec.stride - spec.pad + kj;
            if (iw < 0 || iw >= w) continue;
            const S v = src[ih * w + iw];
            acc += v;
            if (v > best) {
              best = v;
              best_idx = static_cast<std::uint32_t>(ih * w + iw);
            }
          }
        }
        if (spec.kind == PoolKind::max) {
          y[o] = best;
          argmax[o] = best_idx;
        } else {
          y[o] = static_cast<S>(acc / area);
        }
      }
  }
  if (cache) *cache = {x.shape(), std::move(argmax)};
  return y;
}

template <typename S>
Tensor<S> pool_backward(const PoolCache& cache, const PoolSpec& spec, const Tensor<S>& grad_y) {
  Tensor<S> gx(cache.input_shape);
  const std::size_t planes = gx.dim(0) * gx.dim(1);
  const int h = static_cast<int>(gx.dim(2)), w = static_cast<int>(gx.dim(3));
  const int oh = static_cast<int>(grad_y.dim(2)), ow = static_cast<int>(grad_y.dim(3));
  const S inv_area = S(1) / static_cast<S>(spec.kernel * spec.kernel);
  for (std::size_t p = 0; p < planes; ++p) {
    S* dst = gx.data() + p * h * w;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const std::size_t o = (p * oh + i) * ow + j;
        if (spec.kind == PoolKind::max) {
          dst[cache.argmax[o]] += grad_y[o];
          continue;
        }
        for (int ki = 0; ki < spec.kernel; ++ki) {
          const int ih = i * spec.stride - spec.pad + ki;
          if (ih < 0 || ih >= h) continue;
          for (int kj = 0; kj < spec.kernel; ++kj) {
            const int iw = j * spec.stride - spec.pad + kj;
            if (iw >= 0 && iw < w) dst[ih * w + iw] += grad_y[o] * inv_area;
          }
        }
      }
  }
  return gx;
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<S> y({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) acc += x[p * plane + j];
    y[p] = static_cast<S>(acc / static_cast<double>(plane));
  }
  return y;
}

template <typename S>
Tensor<S> global_avg_pool_backward(const Shape& input_shape, const Tensor<S>& grad_y) {
  Tensor<S> gx(input_shape);
  const std::size_t plane = input_shape[2] * input_shape[3];
  for (std::size_t p = 0; p < grad_y.size(); ++p) {
    const S g = static_cast<S>(grad_y[p] / static_cast<double>(plane));
    std::fill(gx.data() + p * plane, gx.data() + (p + 1) * plane, g);
  }
  return gx;
}

// logits(n, j) = bias(j) + sum_k weight(j, k) * x(n, k)
template <typename S>
Tensor<S> linear_forward(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  const std::size_t n = x.dim(0), k = x.dim(1), o = weight.dim(0);
  require(weight.dim(1) == k, "linear input mismatch");
  Tensor<S> y({n, o});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) {
      double acc = bias[j];
      for (std::size_t q = 0; q < k; ++q) acc += static_cast<double>(weight[j * k + q]) * x[i * k + q];
      y[i * o + j] = static_cast<S>(acc);
    }
  return y;
}

template <typename S>
Tensor<S> linear_backward(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& grad_y,
                          Tensor<S>& grad_weight, Tensor<S>& grad_bias) {
  const std::size_t n = x.dim(0), k = x.dim(1), o = weight.dim(0);
  Tensor<S> gx({n, k});
  for (std::size_t j = 0; j < o; ++j) {
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) gb += grad_y[i * o + j];
    grad_bias[j] += static_cast<S>(gb);
    for (std::size_t q = 0; q < k; ++q) {
      double gw = 0.0;
      for (std::size_t i = 0; i < n; ++i) gw += static_cast<double>(grad_y[i * o + j]) * x[i * k + q];
      grad_weight[j * k + q] += static_cast<S>(gw);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < k; ++q) {
      double acc = 0.0;
      for (std::size_t j = 0; j < o; ++j) acc += static_cast<double>(grad_y[i * o + j]) * weight[j * k + q];
      gx[i * k + q] = static_cast<S>(acc);
    }
  return gx;
}

// Row-wise softmax of (N, C) logits, computed in double.
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor<S> p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, double(logits[i * c + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(double(logits[i * c + j]) - mx);
    for (std::size_t j = 0; j < c; ++j)
      p[i * c + j] = static_cast<S>(std::exp(double(logits[i * c + j]) - mx) / z);
  }
  return p;
}

// Mean softmax cross-entropy; writes d(loss)/d(logits) into grad.
template <typename S>
double cross_entropy(const Tensor<S>& logits, std::span<const int> labels, Tensor<S>* grad) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  require(labels.size() == n, "one label per example required");
  if (grad) *grad = Tensor<S>(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < c, "label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, double(logits[i * c + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(double(logits[i * c + j]) - mx);
    const double lse = mx + std::log(z);
    total += lse - double(logits[i * c + y]);
    if (grad)
      for (std::size_t j = 0; j < c; ++j) {
        const double pj = std::exp(double(logits[i * c + j]) - lse);
        (*grad)[i * c + j] = static_cast<S>((pj - (static_cast<int>(j) == y ? 1.0 : 0.0)) / n);
      }
  }
  return total / static_cast<double>(n);
}

}  // namespace assist::nn::ops

#endif  // ASSIST_NN_LAYERS_HPP_
