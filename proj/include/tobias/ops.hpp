#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tobias/errors.hpp"
#include "tobias/tensor.hpp"

namespace tobias {

// C (m x n) += A (m x k) * B (k x n), all row-major. Tiled for cache: the
// j axis is processed in 8 KB segments so the active C rows stay in L1, and
// rows are grouped in fours so each streamed B row feeds four outputs. The
// k loop stays outside the streaming j loop, so every output element still
// accumulates in ascending k order, matching the naive per-element loop.
template <class T>
void gemm_accum(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  constexpr int64_t NB = 8192 / static_cast<int64_t>(sizeof(T));
  for (int64_t jb = 0; jb < n; jb += NB) {
    const int64_t je = std::min(n, jb + NB);
    int64_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* __restrict c0 = c + i * n;
      T* __restrict c1 = c + (i + 1) * n;
      T* __restrict c2 = c + (i + 2) * n;
      T* __restrict c3 = c + (i + 3) * n;
      const T* a0 = a + i * k;
      const T* a1 = a + (i + 1) * k;
      const T* a2 = a + (i + 2) * k;
      const T* a3 = a + (i + 3) * k;
      for (int64_t p = 0; p < k; ++p) {
        const T av0 = a0[p], av1 = a1[p], av2 = a2[p], av3 = a3[p];
        const T* __restrict brow = b + p * n;
        for (int64_t j = jb; j < je; ++j) {
          const T bv = brow[j];
          c0[j] += av0 * bv;
          c1[j] += av1 * bv;
          c2[j] += av2 * bv;
          c3[j] += av3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* __restrict crow = c + i * n;
      const T* arow = a + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* __restrict brow = b + p * n;
        for (int64_t j = jb; j < je; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <class T>
std::vector<T> transpose(const T* a, int64_t rows, int64_t cols) {
  std::vector<T> at(static_cast<size_t>(rows * cols));
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) at[static_cast<size_t>(j * rows + i)] = a[i * cols + j];
  return at;
}

inline int64_t conv_out_size(int64_t in, int64_t kernel, int64_t stride, int64_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Output extent of a pooling window; ceil mode keeps partial right/bottom
// windows but never a window that starts past the input.
inline int64_t pool_out_size(int64_t in, int64_t kernel, int64_t stride, bool ceil_mode) {
  int64_t out;
  if (ceil_mode) {
    out = (in - kernel + stride - 1) / stride + 1;
    if ((out - 1) * stride >= in) --out;
  } else {
    out = (in - kernel) / stride + 1;
  }
  return out;
}

// x: (C,H,W) single image -> cols: (C*K*K) x (Ho*Wo), zero padded.
template <class T>
void im2col(const T* x, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo, T* cols) {
  const int64_t spatial = ho * wo;
  for (int64_t c = 0; c < c_in; ++c) {
    const T* plane = x + c * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * spatial;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          T* dst = row + oh * wo;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + ih * w;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of column gradients back to the input image.
template <class T>
void col2im_accum(const T* cols, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
                  int64_t stride, int64_t pad, int64_t ho, int64_t wo, T* gx) {
  const int64_t spatial = ho * wo;
  for (int64_t c = 0; c < c_in; ++c) {
    T* plane = gx + c * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * spatial;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          const T* src = row + oh * wo;
          T* dst = plane + ih * w;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Cross-correlation (no kernel flip). x: (N,C,H,W), w: (Co,C,Kh,Kw),
// bias: (Co) or empty.
template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                          int64_t stride, int64_t pad) {
  if (x.order() != 4) throw DimensionError("conv2d: input must be order-4, got " + x.shape_string());
  if (w.order() != 4) throw DimensionError("conv2d: weight must be order-4, got " + w.shape_string());
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (pad < 0) throw DimensionError("conv2d: padding must be >= 0");
  const int64_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wdt = x.dim(3);
  const int64_t c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c_in) {
    throw DimensionError("conv2d: input channel axis " + std::to_string(c_in) +
                         " does not match weight input-channel axis " + std::to_string(w.dim(1)));
  }
  if (!bias.empty() && (bias.order() != 1 || bias.dim(0) != c_out)) {
    throw DimensionError("conv2d: bias axis " + bias.shape_string() + " does not match " +
                         std::to_string(c_out) + " output channels");
  }
  const int64_t ho = conv_out_size(h, kh, stride, pad);
  const int64_t wo = conv_out_size(wdt, kw, stride, pad);
  if (ho < 1 || wo < 1) {
    throw DimensionError("conv2d: empty output for input " + x.shape_string() + ", kernel " +
                         w.shape_string());
  }
  TensorT<T> out({n, c_out, ho, wo});
  const int64_t ckk = c_in * kh * kw;
  const int64_t spatial = ho * wo;
  std::vector<T> cols(static_cast<size_t>(ckk * spatial));
  for (int64_t ni = 0; ni < n; ++ni) {
    im2col(x.data() + ni * c_in * h * wdt, c_in, h, wdt, kh, kw, stride, pad, ho, wo, cols.data());
    T* out_mat = out.data() + ni * c_out * spatial;
    if (!bias.empty()) {
      for (int64_t co = 0; co < c_out; ++co)
        std::fill(out_mat + co * spatial, out_mat + (co + 1) * spatial, bias[co]);
    } else {
      std::fill(out_mat, out_mat + c_out * spatial, T(0));
    }
    gemm_accum(w.data(), cols.data(), out_mat, c_out, ckk, spatial);
  }
  return out;
}

// Gradients of conv2d w.r.t. input, weight and bias. gb may be null when
// the convolution has no bias.
template <class T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gout,
                     int64_t stride, int64_t pad, TensorT<T>* gx, TensorT<T>* gw, TensorT<T>* gb) {
  const int64_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wdt = x.dim(3);
  const int64_t c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t ho = gout.dim(2), wo = gout.dim(3);
  const int64_t ckk = c_in * kh * kw;
  const int64_t spatial = ho * wo;

  if (gx) *gx = TensorT<T>(x.dims());
  if (gw) *gw = TensorT<T>(w.dims());
  if (gb) {
    *gb = TensorT<T>({c_out});
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t co = 0; co < c_out; ++co) {
        const T* row = gout.data() + (ni * c_out + co) * spatial;
        T acc = T(0);
        for (int64_t s = 0; s < spatial; ++s) acc += row[s];
        (*gb)[co] += acc;
      }
  }

  std::vector<T> cols(static_cast<size_t>(ckk * spatial));
  std::vector<T> wt;
  if (gx) wt = transpose(w.data(), c_out, ckk);  // (ckk x c_out)
  std::vector<T> gcols(static_cast<size_t>(ckk * spatial));
  for (int64_t ni = 0; ni < n; ++ni) {
    const T* gout_mat = gout.data() + ni * c_out * spatial;
    if (gw) {
      im2col(x.data() + ni * c_in * h * wdt, c_in, h, wdt, kh, kw, stride, pad, ho, wo,
             cols.data());
      auto cols_t = transpose(cols.data(), ckk, spatial);  // (spatial x ckk)
      gemm_accum(gout_mat, cols_t.data(), gw->data(), c_out, spatial, ckk);
    }
    if (gx) {
      std::fill(gcols.begin(), gcols.end(), T(0));
      gemm_accum(wt.data(), gout_mat, gcols.data(), ckk, c_out, spatial);
      col2im_accum(gcols.data(), c_in, h, wdt, kh, kw, stride, pad, ho, wo,
                   gx->data() + ni * c_in * h * wdt);
    }
  }
}

// Windowed maximum. argmax, when given, receives the flat spatial index of
// each selected element for the backward scatter.
template <class T>
TensorT<T> maxpool2d(const TensorT<T>& x, int64_t kernel, int64_t stride, bool ceil_mode,
                     std::vector<int32_t>* argmax = nullptr) {
  if (x.order() != 4) throw DimensionError("maxpool2d: input must be order-4, got " + x.shape_string());
  if (kernel < 1 || stride < 1) throw DimensionError("maxpool2d: kernel and stride must be >= 1");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = pool_out_size(h, kernel, stride, ceil_mode);
  const int64_t wo = pool_out_size(w, kernel, stride, ceil_mode);
  if (ho < 1 || wo < 1)
    throw DimensionError("maxpool2d: empty output for input " + x.shape_string());
  TensorT<T> out({n, c, ho, wo});
  if (argmax) argmax->assign(static_cast<size_t>(out.size()), 0);
  int64_t idx = 0;
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* plane = x.data() + (ni * c + ci) * h * w;
      for (int64_t oh = 0; oh < ho; ++oh) {
        const int64_t h0 = oh * stride;
        const int64_t h1 = std::min(h0 + kernel, h);
        for (int64_t ow = 0; ow < wo; ++ow, ++idx) {
          const int64_t w0 = ow * stride;
          const int64_t w1 = std::min(w0 + kernel, w);
          T best = plane[h0 * w + w0];
          int64_t best_at = h0 * w + w0;
          for (int64_t ih = h0; ih < h1; ++ih)
            for (int64_t iw = w0; iw < w1; ++iw) {
              const T v = plane[ih * w + iw];
              if (v > best) {
                best = v;
                best_at = ih * w + iw;
              }
            }
          out[idx] = best;
          if (argmax) (*argmax)[static_cast<size_t>(idx)] = static_cast<int32_t>(best_at);
        }
      }
    }
  }
  return out;
}

template <class T>
TensorT<T> maxpool2d_backward(const TensorT<T>& gout, const std::vector<int32_t>& argmax,
                              const std::vector<int64_t>& x_dims) {
  TensorT<T> gx(x_dims);
  const int64_t n = gout.dim(0), c = gout.dim(1);
  const int64_t spatial_out = gout.dim(2) * gout.dim(3);
  const int64_t spatial_in = x_dims[2] * x_dims[3];
  for (int64_t nc = 0; nc < n * c; ++nc) {
    T* gplane = gx.data() + nc * spatial_in;
    const T* gorow = gout.data() + nc * spatial_out;
    const int32_t* arow = argmax.data() + nc * spatial_out;
    for (int64_t s = 0; s < spatial_out; ++s) gplane[arow[s]] += gorow[s];
  }
  return gx;
}

// Per-channel spatial mean, shape (N,C,1,1).
template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  if (x.order() != 4) throw DimensionError("global_avg_pool: input must be order-4");
  const int64_t n = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  TensorT<T> out({n, c, 1, 1});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* plane = x.data() + nc * spatial;
    T acc = T(0);
    for (int64_t s = 0; s < spatial; ++s) acc += plane[s];
    out[nc] = acc / static_cast<T>(spatial);
  }
  return out;
}

template <class T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& gout, const std::vector<int64_t>& x_dims) {
  TensorT<T> gx(x_dims);
  const int64_t spatial = x_dims[2] * x_dims[3];
  const T inv = T(1) / static_cast<T>(spatial);
  for (int64_t nc = 0; nc < x_dims[0] * x_dims[1]; ++nc) {
    T* plane = gx.data() + nc * spatial;
    const T g = gout[nc] * inv;
    for (int64_t s = 0; s < spatial; ++s) plane[s] = g;
  }
  return gx;
}

template <class T>
struct BnCache {
  TensorT<T> xhat;
  std::vector<T> invstd;  // per channel
  std::vector<int64_t> x_dims;
};

// Batch-statistics normalization (training-mode semantics). A randomly
// initialized network has no meaningful running statistics, so this is
// also what inference uses; see the identity toggle at the layer level.
template <class T>
TensorT<T> batchnorm_forward(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                             T eps, BnCache<T>* cache = nullptr) {
  if (x.order() != 4) throw DimensionError("batchnorm: input must be order-4");
  const int64_t n = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  if (gamma.size() != c || beta.size() != c) {
    throw DimensionError("batchnorm: gamma/beta length " + std::to_string(gamma.size()) + "/" +
                         std::to_string(beta.size()) + " does not match channel axis " +
                         std::to_string(c));
  }
  const int64_t m = n * spatial;
  TensorT<T> out(x.dims());
  if (cache) {
    cache->xhat = TensorT<T>(x.dims());
    cache->invstd.assign(static_cast<size_t>(c), T(0));
    cache->x_dims = x.dims();
  }
  for (int64_t ci = 0; ci < c; ++ci) {
    T mean = T(0);
    for (int64_t ni = 0; ni < n; ++ni) {
      const T* plane = x.data() + (ni * c + ci) * spatial;
      for (int64_t s = 0; s < spatial; ++s) mean += plane[s];
    }
    mean /= static_cast<T>(m);
    T var = T(0);
    for (int64_t ni = 0; ni < n; ++ni) {
      const T* plane = x.data() + (ni * c + ci) * spatial;
      for (int64_t s = 0; s < spatial; ++s) {
        const T d = plane[s] - mean;
        var += d * d;
      }
    }
    var /= static_cast<T>(m);
    const T invstd = T(1) / std::sqrt(var + eps);
    if (cache) cache->invstd[static_cast<size_t>(ci)] = invstd;
    const T g = gamma[ci], b = beta[ci];
    for (int64_t ni = 0; ni < n; ++ni) {
      const T* plane = x.data() + (ni * c + ci) * spatial;
      T* oplane = out.data() + (ni * c + ci) * spatial;
      T* hplane = cache ? cache->xhat.data() + (ni * c + ci) * spatial : nullptr;
      for (int64_t s = 0; s < spatial; ++s) {
        const T xh = (plane[s] - mean) * invstd;
        if (hplane) hplane[s] = xh;
        oplane[s] = g * xh + b;
      }
    }
  }
  return out;
}

template <class T>
void batchnorm_backward(const TensorT<T>& gout, const TensorT<T>& gamma, const BnCache<T>& cache,
                        TensorT<T>* gx, TensorT<T>* ggamma, TensorT<T>* gbeta) {
  const int64_t n = cache.x_dims[0], c = cache.x_dims[1];
  const int64_t spatial = cache.x_dims[2] * cache.x_dims[3];
  const int64_t m = n * spatial;
  if (gx) *gx = TensorT<T>(cache.x_dims);
  if (ggamma) *ggamma = TensorT<T>({c});
  if (gbeta) *gbeta = TensorT<T>({c});
  for (int64_t ci = 0; ci < c; ++ci) {
    T sum_g = T(0), sum_gx = T(0);
    for (int64_t ni = 0; ni < n; ++ni) {
      const T* grow = gout.data() + (ni * c + ci) * spatial;
      const T* hrow = cache.xhat.data() + (ni * c + ci) * spatial;
      for (int64_t s = 0; s < spatial; ++s) {
        sum_g += grow[s];
        sum_gx += grow[s] * hrow[s];
      }
    }
    if (ggamma) (*ggamma)[ci] = sum_gx;
    if (gbeta) (*gbeta)[ci] = sum_g;
    if (gx) {
      const T scale = gamma[ci] * cache.invstd[static_cast<size_t>(ci)] / static_cast<T>(m);
      for (int64_t ni = 0; ni < n; ++ni) {
        const T* grow = gout.data() + (ni * c + ci) * spatial;
        const T* hrow = cache.xhat.data() + (ni * c + ci) * spatial;
        T* xrow = gx->data() + (ni * c + ci) * spatial;
        for (int64_t s = 0; s < spatial; ++s)
          xrow[s] = scale * (static_cast<T>(m) * grow[s] - sum_g - hrow[s] * sum_gx);
      }
    }
  }
}

// y = x * W^T + b. x: (N,Din), w: (Dout,Din), b: (Dout) or empty.
template <class T>
TensorT<T> linear_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (x.order() != 2 || w.order() != 2)
    throw DimensionError("linear: expected order-2 input and weight");
  const int64_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  if (w.dim(1) != din)
    throw DimensionError("linear: input axis " + std::to_string(din) +
                         " does not match weight axis " + std::to_string(w.dim(1)));
  TensorT<T> out({n, dout});
  if (!b.empty()) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dout; ++j) out.at(i, j) = b[j];
  }
  auto wt = transpose(w.data(), dout, din);  // (din x dout)
  gemm_accum(x.data(), wt.data(), out.data(), n, din, dout);
  return out;
}

template <class T>
void linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gout,
                     TensorT<T>* gx, TensorT<T>* gw, TensorT<T>* gb) {
  const int64_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  if (gx) {
    *gx = TensorT<T>({n, din});
    gemm_accum(gout.data(), w.data(), gx->data(), n, dout, din);
  }
  if (gw) {
    *gw = TensorT<T>({dout, din});
    auto gout_t = transpose(gout.data(), n, dout);  // (dout x n)
    gemm_accum(gout_t.data(), x.data(), gw->data(), dout, n, din);
  }
  if (gb) {
    *gb = TensorT<T>({dout});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dout; ++j) (*gb)[j] += gout.at(i, j);
  }
}

// Row-wise L2 normalization of an (N,D) matrix.
template <class T>
TensorT<T> l2normalize_rows(const TensorT<T>& x, std::vector<T>* norms = nullptr) {
  if (x.order() != 2) throw DimensionError("l2normalize: expected order-2 input");
  const int64_t n = x.dim(0), d = x.dim(1);
  TensorT<T> out(x.dims());
  if (norms) norms->assign(static_cast<size_t>(n), T(0));
  for (int64_t i = 0; i < n; ++i) {
    const T* row = x.data() + i * d;
    T sq = T(0);
    for (int64_t j = 0; j < d; ++j) sq += row[j] * row[j];
    const T norm = std::max(std::sqrt(sq), T(1e-12));
    if (norms) (*norms)[static_cast<size_t>(i)] = norm;
    T* orow = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j) orow[j] = row[j] / norm;
  }
  return out;
}

template <class T>
TensorT<T> l2normalize_rows_backward(const TensorT<T>& z, const std::vector<T>& norms,
                                     const TensorT<T>& gout) {
  const int64_t n = z.dim(0), d = z.dim(1);
  TensorT<T> gx(z.dims());
  for (int64_t i = 0; i < n; ++i) {
    const T* zrow = z.data() + i * d;
    const T* grow = gout.data() + i * d;
    T dot = T(0);
    for (int64_t j = 0; j < d; ++j) dot += zrow[j] * grow[j];
    T* xrow = gx.data() + i * d;
    const T inv = T(1) / norms[static_cast<size_t>(i)];
    for (int64_t j = 0; j < d; ++j) xrow[j] = (grow[j] - zrow[j] * dot) * inv;
  }
  return gx;
}

}  // namespace tobias
