#include "geoadapt/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace geoadapt::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

struct ConvDims {
  int h, w, ho, wo;
  int pad_top, pad_left;
  int patch;  // k*k*in_ch
};

ConvDims conv_dims(const Conv2d& layer, const Tensor& x) {
  if (x.rank() != 4)
    throw std::invalid_argument("conv2d: expected [B,H,W,C], got " + x.shape_str());
  if (x.dim(3) != layer.in_ch)
    throw std::invalid_argument("conv2d: channel mismatch, input " + x.shape_str() +
                                " vs in_ch " + std::to_string(layer.in_ch));
  ConvDims d;
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.ho = conv_out_dim(d.h, layer.stride);
  d.wo = conv_out_dim(d.w, layer.stride);
  const int pad_h = std::max(0, (d.ho - 1) * layer.stride + layer.kernel - d.h);
  const int pad_w = std::max(0, (d.wo - 1) * layer.stride + layer.kernel - d.w);
  d.pad_top = pad_h / 2;
  d.pad_left = pad_w / 2;
  d.patch = layer.kernel * layer.kernel * layer.in_ch;
  return d;
}

// Gather conv patches for one batch item into rows of [ho*wo, k*k*cin].
void im2col(const Tensor& x, int item, const Conv2d& layer, const ConvDims& d, double* col) {
  const int cin = layer.in_ch, k = layer.kernel, s = layer.stride;
  const double* src = x.data() + static_cast<std::size_t>(item) * d.h * d.w * cin;
  std::size_t p = 0;
  for (int oy = 0; oy < d.ho; ++oy) {
    for (int ox = 0; ox < d.wo; ++ox) {
      const int y0 = oy * s - d.pad_top;
      const int x0 = ox * s - d.pad_left;
      for (int ky = 0; ky < k; ++ky) {
        const int y = y0 + ky;
        if (y < 0 || y >= d.h) {
          for (int i = 0; i < k * cin; ++i) col[p++] = 0.0;
          continue;
        }
        for (int kx = 0; kx < k; ++kx) {
          const int xx = x0 + kx;
          if (xx < 0 || xx >= d.w) {
            for (int c = 0; c < cin; ++c) col[p++] = 0.0;
          } else {
            const double* px = src + (static_cast<std::size_t>(y) * d.w + xx) * cin;
            for (int c = 0; c < cin; ++c) col[p++] = px[c];
          }
        }
      }
    }
  }
}

// Scatter-add the transpose of im2col.
void col2im(const double* col, int item, const Conv2d& layer, const ConvDims& d, Tensor& dx) {
  const int cin = layer.in_ch, k = layer.kernel, s = layer.stride;
  double* dst = dx.data() + static_cast<std::size_t>(item) * d.h * d.w * cin;
  std::size_t p = 0;
  for (int oy = 0; oy < d.ho; ++oy) {
    for (int ox = 0; ox < d.wo; ++ox) {
      const int y0 = oy * s - d.pad_top;
      const int x0 = ox * s - d.pad_left;
      for (int ky = 0; ky < k; ++ky) {
        const int y = y0 + ky;
        if (y < 0 || y >= d.h) {
          p += static_cast<std::size_t>(k) * cin;
          continue;
        }
        for (int kx = 0; kx < k; ++kx) {
          const int xx = x0 + kx;
          if (xx < 0 || xx >= d.w) {
            p += cin;
          } else {
            double* px = dst + (static_cast<std::size_t>(y) * d.w + xx) * cin;
            for (int c = 0; c < cin; ++c) px[c] += col[p++];
          }
        }
      }
    }
  }
}

struct UpsampleTap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<UpsampleTap> upsample_taps(int out_n, int in_n) {
  std::vector<UpsampleTap> taps(static_cast<std::size_t>(out_n));
  for (int i = 0; i < out_n; ++i) {
    const double xc = (i + 0.5) / 2.0 - 0.5;
    double f = std::floor(xc);
    int i0 = static_cast<int>(f);
    double w1 = xc - f;
    int i1 = i0 + 1;
    if (i0 < 0) i0 = 0;
    if (i1 > in_n - 1) i1 = in_n - 1;
    taps[i] = {i0, i1, w1};
  }
  return taps;
}

}  // namespace

Conv2d::Conv2d(int in, int out, int k, int s)
    : in_ch(in), out_ch(out), kernel(k), stride(s), w({k, k, in, out}), b({out}) {}

void Conv2d::init(Rng& rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(kernel) * kernel * in_ch));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, stddev);
  b.fill(0.0);
}

Tensor conv2d_forward(const Conv2d& layer, const Tensor& x) {
  const ConvDims d = conv_dims(layer, x);
  const int batch = x.dim(0);
  Tensor y({batch, d.ho, d.wo, layer.out_ch});
  std::vector<double> col(static_cast<std::size_t>(d.ho) * d.wo * d.patch);
  MapConst wm(layer.w.data(), d.patch, layer.out_ch);
  for (int item = 0; item < batch; ++item) {
    im2col(x, item, layer, d, col.data());
    MapConst cm(col.data(), d.ho * d.wo, d.patch);
    MapMat ym(y.data() + static_cast<std::size_t>(item) * d.ho * d.wo * layer.out_ch,
              d.ho * d.wo, layer.out_ch);
    ym.noalias() = cm * wm;
    MapConst bm(layer.b.data(), 1, layer.out_ch);
    ym.rowwise() += bm.row(0);
  }
  return y;
}

void conv2d_backward(const Conv2d& layer, const Tensor& x, const Tensor& dy, Tensor* dx,
                     Conv2dGrads* grads) {
  const ConvDims d = conv_dims(layer, x);
  const int batch = x.dim(0);
  if (dy.rank() != 4 || dy.dim(0) != batch || dy.dim(1) != d.ho || dy.dim(2) != d.wo ||
      dy.dim(3) != layer.out_ch)
    throw std::invalid_argument("conv2d_backward: dy shape mismatch " + dy.shape_str());

  if (grads) {
    if (!grads->dw.same_shape(layer.w)) grads->dw = Tensor(layer.w.shape());
    if (!grads->db.same_shape(layer.b)) grads->db = Tensor(layer.b.shape());
  }
  if (dx) {
    if (!dx->same_shape(x)) *dx = Tensor(x.shape());
    else dx->fill(0.0);
  }

  std::vector<double> col(static_cast<std::size_t>(d.ho) * d.wo * d.patch);
  std::vector<double> dcol(dx ? col.size() : 0);
  MapConst wm(layer.w.data(), d.patch, layer.out_ch);
  for (int item = 0; item < batch; ++item) {
    MapConst dym(dy.data() + static_cast<std::size_t>(item) * d.ho * d.wo * layer.out_ch,
                 d.ho * d.wo, layer.out_ch);
    if (grads) {
      im2col(x, item, layer, d, col.data());
      MapConst cm(col.data(), d.ho * d.wo, d.patch);
      MapMat dwm(grads->dw.data(), d.patch, layer.out_ch);
      dwm.noalias() += cm.transpose() * dym;
      // scalar loop: Eigen reductions reorder by pointer alignment, which
      // would break bit-exact replay of identical configurations
      const double* dyp = dy.data() + static_cast<std::size_t>(item) * d.ho * d.wo * layer.out_ch;
      for (int r = 0; r < d.ho * d.wo; ++r)
        for (int c = 0; c < layer.out_ch; ++c)
          grads->db[static_cast<std::size_t>(c)] += dyp[static_cast<std::size_t>(r) * layer.out_ch + c];
    }
    if (dx) {
      MapMat dcm(dcol.data(), d.ho * d.wo, d.patch);
      dcm.noalias() = dym * wm.transpose();
      col2im(dcol.data(), item, layer, d, *dx);
    }
  }
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope) {
  check_same_shape(x, dy, "leaky_relu_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : slope * dy[i];
  return dx;
}

Tensor upsample2x_forward(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("upsample2x: expected [B,H,W,C]");
  const int batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int ho = 2 * h, wo = 2 * w;
  const auto ys = upsample_taps(ho, h);
  const auto xs = upsample_taps(wo, w);
  Tensor y({batch, ho, wo, c});
  for (int item = 0; item < batch; ++item)
    for (int oy = 0; oy < ho; ++oy) {
      const auto& ty = ys[oy];
      for (int ox = 0; ox < wo; ++ox) {
        const auto& tx = xs[ox];
        for (int ch = 0; ch < c; ++ch) {
          const double top = (1.0 - tx.w1) * x.at(item, ty.i0, tx.i0, ch) +
                             tx.w1 * x.at(item, ty.i0, tx.i1, ch);
          const double bot = (1.0 - tx.w1) * x.at(item, ty.i1, tx.i0, ch) +
                             tx.w1 * x.at(item, ty.i1, tx.i1, ch);
          y.at(item, oy, ox, ch) = (1.0 - ty.w1) * top + ty.w1 * bot;
        }
      }
    }
  return y;
}

Tensor upsample2x_backward(const Tensor& dy, int in_h, int in_w) {
  if (dy.rank() != 4) throw std::invalid_argument("upsample2x_backward: expected [B,H,W,C]");
  const int batch = dy.dim(0), ho = dy.dim(1), wo = dy.dim(2), c = dy.dim(3);
  if (ho != 2 * in_h || wo != 2 * in_w)
    throw std::invalid_argument("upsample2x_backward: size mismatch");
  const auto ys = upsample_taps(ho, in_h);
  const auto xs = upsample_taps(wo, in_w);
  Tensor dx({batch, in_h, in_w, c});
  for (int item = 0; item < batch; ++item)
    for (int oy = 0; oy < ho; ++oy) {
      const auto& ty = ys[oy];
      for (int ox = 0; ox < wo; ++ox) {
        const auto& tx = xs[ox];
        for (int ch = 0; ch < c; ++ch) {
          const double g = dy.at(item, oy, ox, ch);
          dx.at(item, ty.i0, tx.i0, ch) += (1.0 - ty.w1) * (1.0 - tx.w1) * g;
          dx.at(item, ty.i0, tx.i1, ch) += (1.0 - ty.w1) * tx.w1 * g;
          dx.at(item, ty.i1, tx.i0, ch) += ty.w1 * (1.0 - tx.w1) * g;
          dx.at(item, ty.i1, tx.i1, ch) += ty.w1 * tx.w1 * g;
        }
      }
    }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) ||
      a.dim(2) != b.dim(2))
    throw std::invalid_argument("concat_channels: incompatible shapes " + a.shape_str() +
                                " vs " + b.shape_str());
  const int batch = a.dim(0), h = a.dim(1), w = a.dim(2);
  const int ca = a.dim(3), cb = b.dim(3);
  Tensor y({batch, h, w, ca + cb});
  const std::size_t pixels = static_cast<std::size_t>(batch) * h * w;
  for (std::size_t p = 0; p < pixels; ++p) {
    double* dst = y.data() + p * (ca + cb);
    const double* pa = a.data() + p * ca;
    const double* pb = b.data() + p * cb;
    for (int c = 0; c < ca; ++c) dst[c] = pa[c];
    for (int c = 0; c < cb; ++c) dst[ca + c] = pb[c];
  }
  return y;
}

void split_channels_backward(const Tensor& dy, int a_channels, Tensor* da, Tensor* db) {
  const int batch = dy.dim(0), h = dy.dim(1), w = dy.dim(2), ct = dy.dim(3);
  const int cb = ct - a_channels;
  if (cb < 0) throw std::invalid_argument("split_channels_backward: channel count");
  const std::size_t pixels = static_cast<std::size_t>(batch) * h * w;
  if (da) *da = Tensor({batch, h, w, a_channels});
  if (db) *db = Tensor({batch, h, w, cb});
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* src = dy.data() + p * ct;
    if (da) {
      double* pa = da->data() + p * a_channels;
      for (int c = 0; c < a_channels; ++c) pa[c] = src[c];
    }
    if (db) {
      double* pb = db->data() + p * cb;
      for (int c = 0; c < cb; ++c) pb[c] = src[a_channels + c];
    }
  }
}

}  // namespace geoadapt::nn
