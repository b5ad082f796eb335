#include "triseg/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "triseg/error.hpp"

namespace triseg::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

void require_rank4(const Tensor& t, const char* what) {
  require(t.rank() == 4, ErrorCode::ShapeError, std::string(what) + " must be rank 4, got " + shape_string(t.shape()));
}

void im2col(const double* x, int channels, int h, int w, int k, double* col) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const double* xc = x + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          double* row = dst + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(sy) * w;
          const int shift = kx - pad;
          std::fill(row, row + x_lo, 0.0);
          for (int xx = x_lo; xx < x_hi; ++xx) row[xx] = src[xx + shift];
          std::fill(row + std::max(x_hi, x_lo), row + w, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* col, int channels, int h, int w, int k, double* x) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    double* xc = x + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const double* row = src + static_cast<std::size_t>(y) * w;
          double* dst = xc + static_cast<std::size_t>(sy) * w;
          const int shift = kx - pad;
          for (int xx = x_lo; xx < x_hi; ++xx) dst[xx + shift] += row[xx];
        }
      }
    }
  }
}

struct AxisWeights {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};

AxisWeights bilinear_axis(int in, int out) {
  AxisWeights a;
  a.i0.resize(static_cast<std::size_t>(out));
  a.i1.resize(static_cast<std::size_t>(out));
  a.w0.resize(static_cast<std::size_t>(out));
  a.w1.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double l1 = src - i0;
    const auto u = static_cast<std::size_t>(o);
    a.i0[u] = i0;
    a.i1[u] = i1;
    a.w0[u] = 1.0 - l1;
    a.w1[u] = l1;
  }
  return a;
}


}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  require_rank4(x, "conv2d input");
  require_rank4(weight, "conv2d weight");
  const int n = x.n(), ci = x.c(), h = x.h(), w = x.w();
  const int co = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == ci, ErrorCode::ShapeError,
          "conv2d weight expects " + std::to_string(weight.dim(1)) + " input channels, got " + std::to_string(ci));
  require(k % 2 == 1 && weight.dim(3) == k, ErrorCode::ShapeError, "conv2d kernel must be odd and square");
  require(!bias || static_cast<int>(bias->size()) == co, ErrorCode::ShapeError, "conv2d bias size mismatch");

  const int hw = h * w;
  const int rows = ci * k * k;
  Tensor y({n, co, h, w});
  ConstMatMap wm(weight.data(), co, rows);
  Storage col(k == 1 ? 0 : static_cast<std::size_t>(rows) * hw);
  for (int s = 0; s < n; ++s) {
    const double* src = x.sample(s);
    if (k != 1) {
      im2col(src, ci, h, w, k, col.data());
      src = col.data();
    }
    MatMap ym(y.sample(s), co, hw);
    ym.noalias() = wm * ConstMatMap(src, rows, hw);
    if (bias) {
      for (int c = 0; c < co; ++c) ym.row(c).array() += (*bias)[static_cast<std::size_t>(c)];
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor* dx, Tensor* dweight,
                     Tensor* dbias) {
  const int n = x.n(), ci = x.c(), h = x.h(), w = x.w();
  const int co = weight.dim(0), k = weight.dim(2);
  const int hw = h * w;
  const int rows = ci * k * k;
  require(dy.shape() == Shape({n, co, h, w}), ErrorCode::ShapeError, "conv2d gradient shape mismatch");
  ConstMatMap wm(weight.data(), co, rows);
  Storage col(k == 1 ? 0 : static_cast<std::size_t>(rows) * hw);
  Storage dcol(static_cast<std::size_t>(rows) * hw);
  for (int s = 0; s < n; ++s) {
    ConstMatMap dym(dy.sample(s), co, hw);
    if (dweight) {
      const double* src = x.sample(s);
      if (k != 1) {
        im2col(src, ci, h, w, k, col.data());
        src = col.data();
      }
      MatMap dwm(dweight->data(), co, rows);
      dwm.noalias() += dym * ConstMatMap(src, rows, hw).transpose();
    }
    if (dbias) {
      for (int c = 0; c < co; ++c) (*dbias)[static_cast<std::size_t>(c)] += dym.row(c).sum();
    }
    if (dx) {
      if (k == 1) {
        MatMap dxm(dx->sample(s), ci, hw);
        dxm.noalias() += wm.transpose() * dym;
      } else {
        MatMap dcm(dcol.data(), rows, hw);
        dcm.noalias() = wm.transpose() * dym;
        col2im_add(dcol.data(), ci, h, w, k, dx->sample(s));
      }
    }
  }
}

Tensor conv_transpose2x2(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank4(x, "transposed conv input");
  const int n = x.n(), ci = x.c(), h = x.h(), w = x.w();
  require(weight.rank() == 4 && weight.dim(0) == ci && weight.dim(2) == 2 && weight.dim(3) == 2,
          ErrorCode::ShapeError, "transposed conv weight must be (Ci, Co, 2, 2)");
  const int co = weight.dim(1);
  const int hw = h * w;
  Tensor y({n, co, 2 * h, 2 * w});
  ConstMatMap wm(weight.data(), ci, co * 4);
  RowMat t(co * 4, hw);
  for (int s = 0; s < n; ++s) {
    t.noalias() = wm.transpose() * ConstMatMap(x.sample(s), ci, hw);
    for (int c = 0; c < co; ++c) {
      double* yc = y.channel(s, c);
      const double b = bias[static_cast<std::size_t>(c)];
      for (int a = 0; a < 2; ++a)
        for (int bb = 0; bb < 2; ++bb) {
          const double* row = t.data() + static_cast<std::size_t>(c * 4 + a * 2 + bb) * hw;
          for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) yc[static_cast<std::size_t>(2 * i + a) * (2 * w) + 2 * j + bb] = row[i * w + j] + b;
        }
    }
  }
  return y;
}

void conv_transpose2x2_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor* dx,
                                Tensor* dweight, Tensor* dbias) {
  const int n = x.n(), ci = x.c(), h = x.h(), w = x.w();
  const int co = weight.dim(1);
  const int hw = h * w;
  require(dy.shape() == Shape({n, co, 2 * h, 2 * w}), ErrorCode::ShapeError, "transposed conv gradient mismatch");
  ConstMatMap wm(weight.data(), ci, co * 4);
  RowMat dt(co * 4, hw);
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < co; ++c) {
      const double* dyc = dy.channel(s, c);
      double bsum = 0.0;
      for (int a = 0; a < 2; ++a)
        for (int bb = 0; bb < 2; ++bb) {
          double* row = dt.data() + static_cast<std::size_t>(c * 4 + a * 2 + bb) * hw;
          for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
              const double g = dyc[static_cast<std::size_t>(2 * i + a) * (2 * w) + 2 * j + bb];
              row[i * w + j] = g;
              bsum += g;
            }
        }
      if (dbias) (*dbias)[static_cast<std::size_t>(c)] += bsum;
    }
    if (dweight) {
      MatMap dwm(dweight->data(), ci, co * 4);
      dwm.noalias() += ConstMatMap(x.sample(s), ci, hw) * dt.transpose();
    }
    if (dx) {
      MatMap dxm(dx->sample(s), ci, hw);
      dxm.noalias() += wm * dt;
    }
  }
}

Tensor instance_norm(const Tensor& x, InstanceNormCache* cache, double eps) {
  require_rank4(x, "instance norm input");
  Tensor y(x.shape());
  const std::size_t hw = x.plane();
  const std::size_t groups = static_cast<std::size_t>(x.n()) * x.c();
  if (cache) cache->inv_std.assign(groups, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    const double* src = x.data() + g * hw;
    double* dst = y.data() + g * hw;
    double mean = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mean += src[i];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t i = 0; i < hw; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(hw);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < hw; ++i) dst[i] = (src[i] - mean) * inv;
    if (cache) cache->inv_std[g] = inv;
  }
  if (cache) cache->normalized = y;
  return y;
}

Tensor instance_norm_backward(const Tensor& dy, const InstanceNormCache& cache) {
  const Tensor& yn = cache.normalized;
  Tensor dx(dy.shape());
  const std::size_t hw = dy.plane();
  const std::size_t groups = static_cast<std::size_t>(dy.n()) * dy.c();
  const double inv_count = 1.0 / static_cast<double>(hw);
  for (std::size_t g = 0; g < groups; ++g) {
    const double* gy = dy.data() + g * hw;
    const double* y = yn.data() + g * hw;
    double* gx = dx.data() + g * hw;
    double mean_g = 0.0, mean_gy = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      mean_g += gy[i];
      mean_gy += gy[i] * y[i];
    }
    mean_g *= inv_count;
    mean_gy *= inv_count;
    const double inv = cache.inv_std[g];
    for (std::size_t i = 0; i < hw; ++i) gx[i] = inv * (gy[i] - mean_g - y[i] * mean_gy);
  }
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& dy, const Tensor& x) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  return y;
}

Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax) {
  require_rank4(x, "max pool input");
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const int oh = h / 2, ow = w / 2;
  require(oh >= 1 && ow >= 1, ErrorCode::ShapeError, "max pool input too small: " + shape_string(x.shape()));
  Tensor y({n, c, oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const double* src = x.channel(s, ch);
      const std::size_t base = static_cast<std::size_t>(src - x.data());
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j, ++o) {
          std::size_t best = static_cast<std::size_t>(2 * i) * w + 2 * j;
          for (std::size_t cand : {best + 1, best + static_cast<std::size_t>(w), best + static_cast<std::size_t>(w) + 1}) {
            if (src[cand] > src[best]) best = cand;
          }
          y[o] = src[best];
          if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(base + best);
        }
    }
  return y;
}

Tensor maxpool2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, const Shape& input_shape) {
  Tensor dx(input_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  require_rank4(x, "resize input");
  if (x.h() == out_h && x.w() == out_w) return x;
  const AxisWeights ay = bilinear_axis(x.h(), out_h);
  const AxisWeights ax = bilinear_axis(x.w(), out_w);
  Tensor y({x.n(), x.c(), out_h, out_w});
  const int in_w = x.w();
  for (int s = 0; s < x.n(); ++s)
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.channel(s, c);
      double* dst = y.channel(s, c);
      for (int oy = 0; oy < out_h; ++oy) {
        const auto uy = static_cast<std::size_t>(oy);
        const double* r0 = src + static_cast<std::size_t>(ay.i0[uy]) * in_w;
        const double* r1 = src + static_cast<std::size_t>(ay.i1[uy]) * in_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const auto ux = static_cast<std::size_t>(ox);
          const double top = ax.w0[ux] * r0[ax.i0[ux]] + ax.w1[ux] * r0[ax.i1[ux]];
          const double bot = ax.w0[ux] * r1[ax.i0[ux]] + ax.w1[ux] * r1[ax.i1[ux]];
          dst[static_cast<std::size_t>(oy) * out_w + ox] = ay.w0[uy] * top + ay.w1[uy] * bot;
        }
      }
    }
  return y;
}

Tensor resize_bilinear_backward(const Tensor& dy, int in_h, int in_w) {
  const int out_h = dy.h(), out_w = dy.w();
  if (in_h == out_h && in_w == out_w) return dy;
  const AxisWeights ay = bilinear_axis(in_h, out_h);
  const AxisWeights ax = bilinear_axis(in_w, out_w);
  Tensor dx({dy.n(), dy.c(), in_h, in_w});
  for (int s = 0; s < dy.n(); ++s)
    for (int c = 0; c < dy.c(); ++c) {
      const double* g = dy.channel(s, c);
      double* dst = dx.channel(s, c);
      for (int oy = 0; oy < out_h; ++oy) {
        const auto uy = static_cast<std::size_t>(oy);
        double* r0 = dst + static_cast<std::size_t>(ay.i0[uy]) * in_w;
        double* r1 = dst + static_cast<std::size_t>(ay.i1[uy]) * in_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const auto ux = static_cast<std::size_t>(ox);
          const double v = g[static_cast<std::size_t>(oy) * out_w + ox];
          const double top = ay.w0[uy] * v, bot = ay.w1[uy] * v;
          r0[ax.i0[ux]] += ax.w0[ux] * top;
          r0[ax.i1[ux]] += ax.w1[ux] * top;
          r1[ax.i0[ux]] += ax.w0[ux] * bot;
          r1[ax.i1[ux]] += ax.w1[ux] * bot;
        }
      }
    }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(), ErrorCode::ShapeError,
          "cannot concatenate " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  Tensor y({a.n(), a.c() + b.c(), a.h(), a.w()});
  const std::size_t sa = static_cast<std::size_t>(a.c()) * a.plane();
  const std::size_t sb = static_cast<std::size_t>(b.c()) * b.plane();
  for (int s = 0; s < a.n(); ++s) {
    std::copy_n(a.sample(s), sa, y.sample(s));
    std::copy_n(b.sample(s), sb, y.sample(s) + sa);
  }
  return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, int first_channels) {
  const int second = x.c() - first_channels;
  Tensor a({x.n(), first_channels, x.h(), x.w()});
  Tensor b({x.n(), second, x.h(), x.w()});
  const std::size_t sa = static_cast<std::size_t>(first_channels) * x.plane();
  const std::size_t sb = static_cast<std::size_t>(second) * x.plane();
  for (int s = 0; s < x.n(); ++s) {
    std::copy_n(x.sample(s), sa, a.sample(s));
    std::copy_n(x.sample(s) + sa, sb, b.sample(s));
  }
  return {std::move(a), std::move(b)};
}

Tensor softmax_channels(const Tensor& logits) {
  require_rank4(logits, "softmax input");
  Tensor p(logits.shape());
  const int c = logits.c();
  const std::size_t hw = logits.plane();
  for (int s = 0; s < logits.n(); ++s) {
    const double* z = logits.sample(s);
    double* out = p.sample(s);
    for (std::size_t i = 0; i < hw; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < c; ++k) mx = std::max(mx, z[k * hw + i]);
      double sum = 0.0;
      for (int k = 0; k < c; ++k) {
        const double e = std::exp(z[k * hw + i] - mx);
        out[k * hw + i] = e;
        sum += e;
      }
      for (int k = 0; k < c; ++k) out[k * hw + i] /= sum;
    }
  }
  return p;
}

Tensor softmax_channels_backward(const Tensor& dprobs, const Tensor& probs) {
  Tensor dz(probs.shape());
  const int c = probs.c();
  const std::size_t hw = probs.plane();
  for (int s = 0; s < probs.n(); ++s) {
    const double* p = probs.sample(s);
    const double* g = dprobs.sample(s);
    double* out = dz.sample(s);
    for (std::size_t i = 0; i < hw; ++i) {
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += g[k * hw + i] * p[k * hw + i];
      for (int k = 0; k < c; ++k) out[k * hw + i] = p[k * hw + i] * (g[k * hw + i] - dot);
    }
  }
  return dz;
}

}  // namespace triseg::nn
