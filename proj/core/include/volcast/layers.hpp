#pragma once

#include <cmath>
#include <type_traits>
#include <vector>

#include "volcast/common.hpp"
#include "volcast/tensor.hpp"

// Differentiable primitives. All backward functions ACCUMULATE into their
// output gradient buffers; callers zero them at step start. Statistics are
// accumulated in f64 regardless of T.

namespace volcast {

// y[p, co] = b[co] + sum_{k in 3x3x3, ci} x[p + k - 1, ci] * K[k, ci, co]
// Zero ("same") padding, stride 1. Kernel layout [3][3][3][Cin][Cout],
// Cout fastest, so the inner loop is a contiguous FMA over co.
template <typename T>
void conv3d(const Tensor4<T>& x, const std::vector<T>& k, const std::vector<T>& b,
            std::int64_t cout, Tensor4<T>& y) {
  const std::int64_t X = x.shape[0], Y = x.shape[1], Z = x.shape[2], cin = x.shape[3];
  if (static_cast<std::int64_t>(k.size()) != 27 * cin * cout)
    throw ConfigError("conv3d: kernel size mismatch");
  if (static_cast<std::int64_t>(b.size()) != cout) throw ConfigError("conv3d: bias size mismatch");
  if (y.shape != Vec4i{X, Y, Z, cout}) y = Tensor4<T>({X, Y, Z, cout});

  for (std::int64_t xi = 0; xi < X; ++xi) {
    for (std::int64_t yi = 0; yi < Y; ++yi) {
      for (std::int64_t zi = 0; zi < Z; ++zi) {
        T* out = y.ptr(xi, yi, zi);
        for (std::int64_t co = 0; co < cout; ++co) out[co] = b[static_cast<std::size_t>(co)];
        const std::int64_t kx0 = xi > 0 ? 0 : 1, kx1 = xi < X - 1 ? 3 : 2;
        const std::int64_t ky0 = yi > 0 ? 0 : 1, ky1 = yi < Y - 1 ? 3 : 2;
        const std::int64_t kz0 = zi > 0 ? 0 : 1, kz1 = zi < Z - 1 ? 3 : 2;
        for (std::int64_t kx = kx0; kx < kx1; ++kx)
          for (std::int64_t ky = ky0; ky < ky1; ++ky)
            for (std::int64_t kz = kz0; kz < kz1; ++kz) {
              const T* xr = x.ptr(xi + kx - 1, yi + ky - 1, zi + kz - 1);
              const T* kr = k.data() + (((kx * 3 + ky) * 3 + kz) * cin) * cout;
              for (std::int64_t ci = 0; ci < cin; ++ci) {
                const T xv = xr[ci];
                const T* kc = kr + ci * cout;
                for (std::int64_t co = 0; co < cout; ++co) out[co] += xv * kc[co];
              }
            }
      }
    }
  }
}

template <typename T>
void conv3d_backward(const Tensor4<T>& x, const std::vector<T>& k, const Tensor4<T>& dy,
                     Tensor4<T>& dx, std::vector<T>& dk, std::vector<T>& db) {
  const std::int64_t X = x.shape[0], Y = x.shape[1], Z = x.shape[2], cin = x.shape[3];
  const std::int64_t cout = dy.shape[3];
  if (dx.shape != x.shape) throw ConfigError("conv3d_backward: dx shape mismatch");
  if (dk.size() != k.size() || static_cast<std::int64_t>(db.size()) != cout)
    throw ConfigError("conv3d_backward: grad buffer size mismatch");

  for (std::int64_t xi = 0; xi < X; ++xi) {
    for (std::int64_t yi = 0; yi < Y; ++yi) {
      for (std::int64_t zi = 0; zi < Z; ++zi) {
        const T* dyr = dy.ptr(xi, yi, zi);
        for (std::int64_t co = 0; co < cout; ++co) db[static_cast<std::size_t>(co)] += dyr[co];
        const std::int64_t kx0 = xi > 0 ? 0 : 1, kx1 = xi < X - 1 ? 3 : 2;
        const std::int64_t ky0 = yi > 0 ? 0 : 1, ky1 = yi < Y - 1 ? 3 : 2;
        const std::int64_t kz0 = zi > 0 ? 0 : 1, kz1 = zi < Z - 1 ? 3 : 2;
        for (std::int64_t kx = kx0; kx < kx1; ++kx)
          for (std::int64_t ky = ky0; ky < ky1; ++ky)
            for (std::int64_t kz = kz0; kz < kz1; ++kz) {
              const std::int64_t px = xi + kx - 1, py = yi + ky - 1, pz = zi + kz - 1;
              const T* xr = x.ptr(px, py, pz);
              T* dxr = dx.ptr(px, py, pz);
              const T* kr = k.data() + (((kx * 3 + ky) * 3 + kz) * cin) * cout;
              T* dkr = dk.data() + (((kx * 3 + ky) * 3 + kz) * cin) * cout;
              for (std::int64_t ci = 0; ci < cin; ++ci) {
                const T* kc = kr + ci * cout;
                T* dkc = dkr + ci * cout;
                const T xv = xr[ci];
                T acc = T(0);
                for (std::int64_t co = 0; co < cout; ++co) {
                  acc += dyr[co] * kc[co];
                  dkc[co] += xv * dyr[co];
                }
                dxr[ci] += acc;
              }
            }
      }
    }
  }
}

inline std::int64_t conv3d_flops(std::int64_t cin, std::int64_t cout, std::int64_t out_voxels) {
  return 2 * 27 * cin * cout * out_voxels;
}

template <typename T>
struct GroupNormCache {
  std::vector<double> mean, istd;  // per group
};

// Normalizes over all spatial positions and in-group channels, then applies
// the per-channel affine. frozen=true skips the statistics entirely (affine
// only), the mode used for sharded execution and receptive-field probes.
template <typename T>
void group_norm(const Tensor4<T>& x, const std::vector<T>& scale, const std::vector<T>& offset,
                std::int64_t groups, double eps, bool frozen, Tensor4<T>& y,
                std::type_identity_t<GroupNormCache<T>*> cache = nullptr) {
  const std::int64_t C = x.shape[3];
  if (C % groups != 0)
    throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                      std::to_string(groups));
  if (static_cast<std::int64_t>(scale.size()) != C ||
      static_cast<std::int64_t>(offset.size()) != C)
    throw ConfigError("group_norm: affine size mismatch");
  if (y.shape != x.shape) y = Tensor4<T>(x.shape);
  const std::int64_t cg = C / groups;
  const std::int64_t space = x.shape[0] * x.shape[1] * x.shape[2];

  if (frozen) {
    for (std::int64_t p = 0; p < space; ++p) {
      const T* xr = x.data.data() + p * C;
      T* yr = y.data.data() + p * C;
      for (std::int64_t c = 0; c < C; ++c)
        yr[c] = xr[c] * scale[static_cast<std::size_t>(c)] + offset[static_cast<std::size_t>(c)];
    }
    return;
  }

  std::vector<double> mean(static_cast<std::size_t>(groups), 0.0);
  std::vector<double> sq(static_cast<std::size_t>(groups), 0.0);
  for (std::int64_t p = 0; p < space; ++p) {
    const T* xr = x.data.data() + p * C;
    for (std::int64_t g = 0; g < groups; ++g) {
      double s = 0.0, s2 = 0.0;
      for (std::int64_t c = g * cg; c < (g + 1) * cg; ++c) {
        const double v = static_cast<double>(xr[c]);
        s += v;
        s2 += v * v;
      }
      mean[static_cast<std::size_t>(g)] += s;
      sq[static_cast<std::size_t>(g)] += s2;
    }
  }
  const double inv_m = 1.0 / static_cast<double>(space * cg);
  std::vector<double> istd(static_cast<std::size_t>(groups));
  for (std::int64_t g = 0; g < groups; ++g) {
    const double mu = mean[static_cast<std::size_t>(g)] * inv_m;
    const double var = sq[static_cast<std::size_t>(g)] * inv_m - mu * mu;
    mean[static_cast<std::size_t>(g)] = mu;
    istd[static_cast<std::size_t>(g)] = 1.0 / std::sqrt(var + eps);
  }
  for (std::int64_t p = 0; p < space; ++p) {
    const T* xr = x.data.data() + p * C;
    T* yr = y.data.data() + p * C;
    for (std::int64_t g = 0; g < groups; ++g) {
      const double mu = mean[static_cast<std::size_t>(g)];
      const double is = istd[static_cast<std::size_t>(g)];
      for (std::int64_t c = g * cg; c < (g + 1) * cg; ++c)
        yr[c] = static_cast<T>((static_cast<double>(xr[c]) - mu) * is *
                                   static_cast<double>(scale[static_cast<std::size_t>(c)]) +
                               static_cast<double>(offset[static_cast<std::size_t>(c)]));
    }
  }
  if (cache != nullptr) {
    cache->mean = std::move(mean);
    cache->istd = std::move(istd);
  }
}

template <typename T>
void group_norm_backward(const Tensor4<T>& x, const std::vector<T>& scale, std::int64_t groups,
                         bool frozen, const GroupNormCache<T>& cache, const Tensor4<T>& dy,
                         Tensor4<T>& dx, std::vector<T>& dscale, std::vector<T>& doffset) {
  const std::int64_t C = x.shape[3];
  const std::int64_t cg = C / groups;
  const std::int64_t space = x.shape[0] * x.shape[1] * x.shape[2];

  if (frozen) {
    for (std::int64_t p = 0; p < space; ++p) {
      const T* xr = x.data.data() + p * C;
      const T* dyr = dy.data.data() + p * C;
      T* dxr = dx.data.data() + p * C;
      for (std::int64_t c = 0; c < C; ++c) {
        dxr[c] += dyr[c] * scale[static_cast<std::size_t>(c)];
        dscale[static_cast<std::size_t>(c)] += dyr[c] * xr[c];
        doffset[static_cast<std::size_t>(c)] += dyr[c];
      }
    }
    return;
  }

  // Per group: dx = istd * (u - mean(u) - xhat * mean(u * xhat)), u = dy * scale.
  std::vector<double> sum_u(static_cast<std::size_t>(groups), 0.0);
  std::vector<double> sum_ux(static_cast<std::size_t>(groups), 0.0);
  for (std::int64_t p = 0; p < space; ++p) {
    const T* xr = x.data.data() + p * C;
    const T* dyr = dy.data.data() + p * C;
    for (std::int64_t g = 0; g < groups; ++g) {
      const double mu = cache.mean[static_cast<std::size_t>(g)];
      const double is = cache.istd[static_cast<std::size_t>(g)];
      for (std::int64_t c = g * cg; c < (g + 1) * cg; ++c) {
        const double xhat = (static_cast<double>(xr[c]) - mu) * is;
        const double u = static_cast<double>(dyr[c]) *
                         static_cast<double>(scale[static_cast<std::size_t>(c)]);
        sum_u[static_cast<std::size_t>(g)] += u;
        sum_ux[static_cast<std::size_t>(g)] += u * xhat;
        dscale[static_cast<std::size_t>(c)] += static_cast<T>(static_cast<double>(dyr[c]) * xhat);
        doffset[static_cast<std::size_t>(c)] += dyr[c];
      }
    }
  }
  const double inv_m = 1.0 / static_cast<double>(space * cg);
  for (std::int64_t p = 0; p < space; ++p) {
    const T* xr = x.data.data() + p * C;
    const T* dyr = dy.data.data() + p * C;
    T* dxr = dx.data.data() + p * C;
    for (std::int64_t g = 0; g < groups; ++g) {
      const double mu = cache.mean[static_cast<std::size_t>(g)];
      const double is = cache.istd[static_cast<std::size_t>(g)];
      const double mu_u = sum_u[static_cast<std::size_t>(g)] * inv_m;
      const double mu_ux = sum_ux[static_cast<std::size_t>(g)] * inv_m;
      for (std::int64_t c = g * cg; c < (g + 1) * cg; ++c) {
        const double xhat = (static_cast<double>(xr[c]) - mu) * is;
        const double u = static_cast<double>(dyr[c]) *
                         static_cast<double>(scale[static_cast<std::size_t>(c)]);
        dxr[c] += static_cast<T>(is * (u - mu_u - xhat * mu_ux));
      }
    }
  }
}

template <typename T>
inline T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
void swish(const Tensor4<T>& x, Tensor4<T>& y) {
  if (y.shape != x.shape) y = Tensor4<T>(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const T v = x.data[i];
    y.data[i] = v * sigmoid(v);
  }
}

template <typename T>
void swish_backward(const Tensor4<T>& x, const Tensor4<T>& dy, Tensor4<T>& dx) {
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const T v = x.data[i];
    const T s = sigmoid(v);
    dx.data[i] += dy.data[i] * (s + v * s * (T(1) - s));
  }
}

// e[2i] = sin(h / 10000^(2i/dim)), e[2i+1] = cos(h / 10000^(2i/dim)).
template <typename T>
std::vector<T> sinusoidal_embed(std::int64_t h, std::int64_t dim) {
  if (h < 0) throw ConfigError("sinusoidal_embed: lead time must be non-negative");
  if (dim < 2 || dim % 2 != 0) throw ConfigError("sinusoidal_embed: dim must be even, >= 2");
  std::vector<T> e(static_cast<std::size_t>(dim));
  for (std::int64_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    const double a = static_cast<double>(h) * freq;
    e[static_cast<std::size_t>(2 * i)] = static_cast<T>(std::sin(a));
    e[static_cast<std::size_t>(2 * i + 1)] = static_cast<T>(std::cos(a));
  }
  return e;
}

// gb[j] = b[j] + sum_e embed[e] * W[e][j], j in [0, 2F): gamma then beta.
// y = (1 + gamma[c]) * x + beta[c].
template <typename T>
std::vector<T> film_project(const std::vector<T>& embed, const std::vector<T>& w,
                            const std::vector<T>& b) {
  const std::size_t E = embed.size();
  const std::size_t twoF = b.size();
  if (w.size() != E * twoF) throw ConfigError("film: projection size mismatch");
  std::vector<T> gb(b);
  for (std::size_t e = 0; e < E; ++e) {
    const T ev = embed[e];
    const T* wr = w.data() + e * twoF;
    for (std::size_t j = 0; j < twoF; ++j) gb[j] += ev * wr[j];
  }
  return gb;
}

template <typename T>
void film(const Tensor4<T>& x, const std::vector<T>& gb, Tensor4<T>& y) {
  const std::int64_t C = x.shape[3];
  if (static_cast<std::int64_t>(gb.size()) != 2 * C) throw ConfigError("film: gb size mismatch");
  if (y.shape != x.shape) y = Tensor4<T>(x.shape);
  const std::int64_t space = x.shape[0] * x.shape[1] * x.shape[2];
  for (std::int64_t p = 0; p < space; ++p) {
    const T* xr = x.data.data() + p * C;
    T* yr = y.data.data() + p * C;
    for (std::int64_t c = 0; c < C; ++c)
      yr[c] = (T(1) + gb[static_cast<std::size_t>(c)]) * xr[c] +
              gb[static_cast<std::size_t>(C + c)];
  }
}

// Accumulates dW/db of the projection and dx; embed carries no gradient.
template <typename T>
void film_backward(const Tensor4<T>& x, const std::vector<T>& embed, const std::vector<T>& gb,
                   const Tensor4<T>& dy, Tensor4<T>& dx, std::vector<T>& dw, std::vector<T>& db) {
  const std::int64_t C = x.shape[3];
  const std::int64_t space = x.shape[0] * x.shape[1] * x.shape[2];
  std::vector<double> dgb(static_cast<std::size_t>(2 * C), 0.0);
  for (std::int64_t p = 0; p < space; ++p) {
    const T* xr = x.data.data() + p * C;
    const T* dyr = dy.data.data() + p * C;
    T* dxr = dx.data.data() + p * C;
    for (std::int64_t c = 0; c < C; ++c) {
      dxr[c] += dyr[c] * (T(1) + gb[static_cast<std::size_t>(c)]);
      dgb[static_cast<std::size_t>(c)] += static_cast<double>(dyr[c]) * static_cast<double>(xr[c]);
      dgb[static_cast<std::size_t>(C + c)] += static_cast<double>(dyr[c]);
    }
  }
  const std::size_t E = embed.size();
  for (std::size_t j = 0; j < static_cast<std::size_t>(2 * C); ++j)
    db[j] += static_cast<T>(dgb[j]);
  for (std::size_t e = 0; e < E; ++e) {
    T* dwr = dw.data() + e * static_cast<std::size_t>(2 * C);
    const double ev = static_cast<double>(embed[e]);
    for (std::size_t j = 0; j < static_cast<std::size_t>(2 * C); ++j)
      dwr[j] += static_cast<T>(ev * dgb[j]);
  }
}

// Whole feature channels zeroed with probability rate, survivors scaled by
// 1/(1-rate). mask[c] is 0 or the survivor scale.
template <typename T>
std::vector<T> channel_dropout_mask(std::int64_t channels, double rate, Rng& rng) {
  std::vector<T> mask(static_cast<std::size_t>(channels));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::int64_t c = 0; c < channels; ++c)
    mask[static_cast<std::size_t>(c)] = rng.uniform() < rate ? T(0) : keep_scale;
  return mask;
}

template <typename T>
void channel_scale(const Tensor4<T>& x, const std::vector<T>& mask, Tensor4<T>& y) {
  const std::int64_t C = x.shape[3];
  if (y.shape != x.shape) y = Tensor4<T>(x.shape);
  const std::int64_t space = x.shape[0] * x.shape[1] * x.shape[2];
  for (std::int64_t p = 0; p < space; ++p) {
    const T* xr = x.data.data() + p * C;
    T* yr = y.data.data() + p * C;
    for (std::int64_t c = 0; c < C; ++c) yr[c] = xr[c] * mask[static_cast<std::size_t>(c)];
  }
}

template <typename T>
void channel_scale_backward(const std::vector<T>& mask, const Tensor4<T>& dy, Tensor4<T>& dx) {
  const std::int64_t C = dy.shape[3];
  const std::int64_t space = dy.shape[0] * dy.shape[1] * dy.shape[2];
  for (std::int64_t p = 0; p < space; ++p) {
    const T* dyr = dy.data.data() + p * C;
    T* dxr = dx.data.data() + p * C;
    for (std::int64_t c = 0; c < C; ++c) dxr[c] += dyr[c] * mask[static_cast<std::size_t>(c)];
  }
}

// Block-mean pooling by integer factors; extents must divide.
template <typename T>
void resample_down(const Tensor4<T>& x, const Vec3i& f, Tensor4<T>& y) {
  for (int a = 0; a < 3; ++a)
    if (x.shape[static_cast<std::size_t>(a)] % f[static_cast<std::size_t>(a)] != 0)
      throw ConfigError("resample_down: extent " +
                        std::to_string(x.shape[static_cast<std::size_t>(a)]) +
                        " not divisible by factor " +
                        std::to_string(f[static_cast<std::size_t>(a)]) + " on axis " +
                        std::to_string(a));
  const std::int64_t C = x.shape[3];
  const Vec4i os{x.shape[0] / f[0], x.shape[1] / f[1], x.shape[2] / f[2], C};
  if (y.shape != os) y = Tensor4<T>(os);
  const T inv = T(1) / static_cast<T>(prod(f));
  for (std::int64_t xo = 0; xo < os[0]; ++xo)
    for (std::int64_t yo = 0; yo < os[1]; ++yo)
      for (std::int64_t zo = 0; zo < os[2]; ++zo) {
        T* out = y.ptr(xo, yo, zo);
        for (std::int64_t c = 0; c < C; ++c) out[c] = T(0);
        for (std::int64_t dx = 0; dx < f[0]; ++dx)
          for (std::int64_t dy = 0; dy < f[1]; ++dy)
            for (std::int64_t dz = 0; dz < f[2]; ++dz) {
              const T* in = x.ptr(xo * f[0] + dx, yo * f[1] + dy, zo * f[2] + dz);
              for (std::int64_t c = 0; c < C; ++c) out[c] += in[c];
            }
        for (std::int64_t c = 0; c < C; ++c) out[c] *= inv;
      }
}

template <typename T>
void resample_down_backward(const Vec3i& f, const Tensor4<T>& dy, Tensor4<T>& dx) {
  const std::int64_t C = dy.shape[3];
  const T inv = T(1) / static_cast<T>(prod(f));
  for (std::int64_t xo = 0; xo < dy.shape[0]; ++xo)
    for (std::int64_t yo = 0; yo < dy.shape[1]; ++yo)
      for (std::int64_t zo = 0; zo < dy.shape[2]; ++zo) {
        const T* g = dy.ptr(xo, yo, zo);
        for (std::int64_t dx_ = 0; dx_ < f[0]; ++dx_)
          for (std::int64_t dy_ = 0; dy_ < f[1]; ++dy_)
            for (std::int64_t dz_ = 0; dz_ < f[2]; ++dz_) {
              T* in = dx.ptr(xo * f[0] + dx_, yo * f[1] + dy_, zo * f[2] + dz_);
              for (std::int64_t c = 0; c < C; ++c) in[c] += g[c] * inv;
            }
      }
}

// Nearest-neighbor repeat; the model follows it with a 3^3 convolution.
template <typename T>
void repeat_up(const Tensor4<T>& x, const Vec3i& f, Tensor4<T>& y) {
  const std::int64_t C = x.shape[3];
  const Vec4i os{x.shape[0] * f[0], x.shape[1] * f[1], x.shape[2] * f[2], C};
  if (y.shape != os) y = Tensor4<T>(os);
  for (std::int64_t xo = 0; xo < os[0]; ++xo)
    for (std::int64_t yo = 0; yo < os[1]; ++yo)
      for (std::int64_t zo = 0; zo < os[2]; ++zo) {
        const T* in = x.ptr(xo / f[0], yo / f[1], zo / f[2]);
        T* out = y.ptr(xo, yo, zo);
        for (std::int64_t c = 0; c < C; ++c) out[c] = in[c];
      }
}

template <typename T>
void repeat_up_backward(const Vec3i& f, const Tensor4<T>& dy, Tensor4<T>& dx) {
  const std::int64_t C = dy.shape[3];
  for (std::int64_t xo = 0; xo < dy.shape[0]; ++xo)
    for (std::int64_t yo = 0; yo < dy.shape[1]; ++yo)
      for (std::int64_t zo = 0; zo < dy.shape[2]; ++zo) {
        const T* g = dy.ptr(xo, yo, zo);
        T* in = dx.ptr(xo / f[0], yo / f[1], zo / f[2]);
        for (std::int64_t c = 0; c < C; ++c) in[c] += g[c];
      }
}

}  // namespace volcast
