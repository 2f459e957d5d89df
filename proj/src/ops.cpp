// Copyright 2026 The USKT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "uskt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "detail.hpp"

namespace uskt {
namespace detail {

// Output columns ow in [lo, hi) map to input columns inside [0, width).
inline void valid_cols(Index width, Index out_w, int stride, Index offset, Index& lo,
                       Index& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = width - offset <= 0 ? 0 : (width - offset + stride - 1) / stride;
  hi = std::min(hi, out_w);
  lo = std::min(lo, hi);
}

template <typename T>
void im2col(const T* img, Index channels, Index height, Index width, int k, int stride,
            int padding, Index out_h, Index out_w, T* cols) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * plane;
        const Index off = kj - padding;
        Index lo = 0, hi = 0;
        valid_cols(width, out_w, stride, off, lo, hi);
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * stride - padding + ki;
          T* dst = row + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = img + (c * height + ih) * width;
          std::fill(dst, dst + lo, T(0));
          for (Index ow = lo; ow < hi; ++ow) dst[ow] = src[ow * stride + off];
          std::fill(dst + hi, dst + out_w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, Index channels, Index height, Index width, int k, int stride,
            int padding, Index out_h, Index out_w, T* img) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * plane;
        const Index off = kj - padding;
        Index lo = 0, hi = 0;
        valid_cols(width, out_w, stride, off, lo, hi);
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * stride - padding + ki;
          if (ih < 0 || ih >= height) continue;
          const T* src = row + oh * out_w;
          T* dst = img + (c * height + ih) * width;
          if (stride == 1) {
            for (Index ow = lo; ow < hi; ++ow) dst[ow + off] += src[ow];
          } else {
            for (Index ow = lo; ow < hi; ++ow) dst[ow * stride + off] += src[ow];
          }
        }
      }
    }
  }
}

template void im2col<float>(const float*, Index, Index, Index, int, int, int, Index, Index, float*);
template void im2col<double>(const double*, Index, Index, Index, int, int, int, Index, Index,
                             double*);
template void col2im<float>(const float*, Index, Index, Index, int, int, int, Index, Index, float*);
template void col2im<double>(const double*, Index, Index, Index, int, int, int, Index, Index,
                             double*);

}  // namespace detail

namespace ops {

using detail::as_mat;
using detail::make_output;
using detail::require;
using detail::wants_grad;

namespace {

template <typename T>
void accumulate(const Tensor<T>& dst, std::span<const T> src) {
  auto g = dst.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

// Scratch storage that the caller fully overwrites.
template <typename T>
std::shared_ptr<T[]> uninit_buffer(Index n) {
  constexpr std::align_val_t align{64};
  T* p = static_cast<T*>(::operator new(static_cast<std::size_t>(n) * sizeof(T), align));
  return std::shared_ptr<T[]>(p, [](T* q) { ::operator delete(q, align); });
}

template <typename T>
void check_image(const char* op, const Tensor<T>& t) {
  require(t.defined() && t.rank() == 3,
          std::string(op) + ": expected a C×H×W tensor, got " +
              (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int padding) {
  check_image("conv2d", input);
  require(weight.defined() && weight.rank() == 4 && weight.dim(2) == weight.dim(3),
          "conv2d: weight must be C_out×C_in×k×k");
  const Index c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const Index c_out = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  require(weight.dim(1) == c_in, "conv2d: input " + shape_str(input.shape()) +
                                     " has a channel count that does not match weight " +
                                     shape_str(weight.shape()));
  require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  require(h + 2 * padding >= k && w + 2 * padding >= k,
          "conv2d: kernel larger than padded input " + shape_str(input.shape()));
  require(!bias.defined() || (bias.rank() == 1 && bias.dim(0) == c_out),
          "conv2d: bias must have C_out elements");
  const Index out_h = (h + 2 * padding - k) / stride + 1;
  const Index out_w = (w + 2 * padding - k) / stride + 1;
  const Index plane = out_h * out_w;
  const Index patch = c_in * k * k;
  const bool direct = (k == 1 && stride == 1 && padding == 0);

  std::shared_ptr<T[]> cols;
  if (!direct) {
    cols = uninit_buffer<T>(patch * plane);
    detail::im2col(input.data().data(), c_in, h, w, k, stride, padding, out_h, out_w,
                   cols.get());
  }
  const T* col_ptr = direct ? input.data().data() : cols.get();

  Buffer<T> out(static_cast<std::size_t>(c_out * plane));
  auto out_m = as_mat(out.data(), c_out, plane);
  out_m.noalias() = as_mat(weight.data().data(), c_out, patch) * as_mat(col_ptr, patch, plane);
  if (bias.defined()) {
    for (Index o = 0; o < c_out; ++o) out_m.row(o).array() += bias.data()[o];
  }

  const bool rg = detail::any_wants_grad<T>({&input, &weight, &bias});
  Tensor<T> result = make_output<T>("conv2d", {c_out, out_h, out_w}, std::move(out), rg);
  if (rg) {
    if (!wants_grad(weight)) cols.reset();
    tape.record("conv2d", [input, weight, bias, result, cols, stride, padding, c_in, h, w, c_out,
                           k, out_h, out_w, plane, patch, direct]() mutable {
      if (!result.has_grad()) return;
      auto g = as_mat(result.grad().data(), c_out, plane);
      Tensor<T> b = bias;
      if (wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (Index o = 0; o < c_out; ++o) gb[o] += g.row(o).sum();
      }
      const T* cp = direct ? input.data().data() : cols.get();
      if (wants_grad(weight)) {
        auto gw = as_mat(weight.grad_buffer().data(), c_out, patch);
        gw.noalias() += g * as_mat(cp, patch, plane).transpose();
      }
      if (wants_grad(input)) {
        auto wm = as_mat(weight.data().data(), c_out, patch);
        if (direct) {
          auto gi = as_mat(input.grad_buffer().data(), c_in, plane);
          gi.noalias() += wm.transpose() * g;
        } else {
          auto dcols = uninit_buffer<T>(patch * plane);
          as_mat(dcols.get(), patch, plane).noalias() = wm.transpose() * g;
          detail::col2im(dcols.get(), c_in, h, w, k, stride, padding, out_h, out_w,
                         input.grad_buffer().data());
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> conv_transpose2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, int stride, int padding) {
  check_image("conv_transpose2d", input);
  require(weight.defined() && weight.rank() == 4 && weight.dim(2) == weight.dim(3),
          "conv_transpose2d: weight must be C_in×C_out×k×k");
  const Index c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(weight.dim(0) == c_in, "conv_transpose2d: input " + shape_str(input.shape()) +
                                     " has a channel count that does not match weight " +
                                     shape_str(weight.shape()));
  require(stride >= 1 && padding >= 0, "conv_transpose2d: stride must be >= 1, padding >= 0");
  const Index c_out = weight.dim(1);
  const int k = static_cast<int>(weight.dim(2));
  const Index out_h = (h - 1) * stride - 2 * padding + k;
  const Index out_w = (w - 1) * stride - 2 * padding + k;
  require(out_h >= 1 && out_w >= 1, "conv_transpose2d: padding too large for input");
  require(!bias.defined() || (bias.rank() == 1 && bias.dim(0) == c_out),
          "conv_transpose2d: bias must have C_out elements");
  const Index plane = h * w;
  const Index patch = c_out * k * k;

  auto cols = uninit_buffer<T>(patch * plane);
  as_mat(cols.get(), patch, plane).noalias() =
      as_mat(weight.data().data(), c_in, patch).transpose() *
      as_mat(input.data().data(), c_in, plane);
  Buffer<T> out(static_cast<std::size_t>(c_out * out_h * out_w), T(0));
  detail::col2im(cols.get(), c_out, out_h, out_w, k, stride, padding, h, w, out.data());
  if (bias.defined()) {
    const Index out_plane = out_h * out_w;
    for (Index o = 0; o < c_out; ++o) {
      const T bv = bias.data()[o];
      for (Index i = 0; i < out_plane; ++i) out[o * out_plane + i] += bv;
    }
  }

  const bool rg = detail::any_wants_grad<T>({&input, &weight, &bias});
  Tensor<T> result =
      make_output<T>("conv_transpose2d", {c_out, out_h, out_w}, std::move(out), rg);
  if (rg) {
    tape.record("conv_transpose2d", [input, weight, bias, result, stride, padding, c_in, h, w,
                                     c_out, k, out_h, out_w, plane, patch]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      Tensor<T> b = bias;
      if (wants_grad(b)) {
        const Index out_plane = out_h * out_w;
        auto gb = b.grad_buffer();
        for (Index o = 0; o < c_out; ++o) {
          T s = 0;
          for (Index i = 0; i < out_plane; ++i) s += g[o * out_plane + i];
          gb[o] += s;
        }
      }
      if (!wants_grad(input) && !wants_grad(weight)) return;
      auto gcols = uninit_buffer<T>(patch * plane);
      detail::im2col(g.data(), c_out, out_h, out_w, k, stride, padding, h, w, gcols.get());
      auto gc = as_mat(gcols.get(), patch, plane);
      if (wants_grad(weight)) {
        as_mat(weight.grad_buffer().data(), c_in, patch).noalias() +=
            as_mat(input.data().data(), c_in, plane) * gc.transpose();
      }
      if (wants_grad(input)) {
        as_mat(input.grad_buffer().data(), c_in, plane).noalias() +=
            as_mat(weight.data().data(), c_in, patch) * gc;
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  require(input.defined() && weight.defined() && weight.rank() == 2,
          "linear: weight must be F_out×F_in");
  const Index f_in = weight.dim(1), f_out = weight.dim(0);
  require(input.shape().back() == f_in, "linear: input " + shape_str(input.shape()) +
                                            " last extent does not match weight " +
                                            shape_str(weight.shape()));
  require(!bias.defined() || (bias.rank() == 1 && bias.dim(0) == f_out),
          "linear: bias must have F_out elements");
  const Index rows = input.numel() / f_in;
  Buffer<T> out(static_cast<std::size_t>(rows * f_out));
  auto om = as_mat(out.data(), rows, f_out);
  om.noalias() = as_mat(input.data().data(), rows, f_in) *
                 as_mat(weight.data().data(), f_out, f_in).transpose();
  if (bias.defined()) {
    for (Index r = 0; r < rows; ++r) {
      for (Index o = 0; o < f_out; ++o) om(r, o) += bias.data()[o];
    }
  }
  Shape shape = input.shape();
  shape.back() = f_out;
  const bool rg = detail::any_wants_grad<T>({&input, &weight, &bias});
  Tensor<T> result = make_output<T>("linear", std::move(shape), std::move(out), rg);
  if (rg) {
    tape.record("linear", [input, weight, bias, result, rows, f_in, f_out]() mutable {
      if (!result.has_grad()) return;
      auto g = as_mat(result.grad().data(), rows, f_out);
      Tensor<T> b = bias;
      if (wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (Index o = 0; o < f_out; ++o) gb[o] += g.col(o).sum();
      }
      if (wants_grad(weight)) {
        as_mat(weight.grad_buffer().data(), f_out, f_in).noalias() +=
            g.transpose() * as_mat(input.data().data(), rows, f_in);
      }
      if (wants_grad(input)) {
        as_mat(input.grad_buffer().data(), rows, f_in).noalias() +=
            g * as_mat(weight.data().data(), f_out, f_in);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> silu(Tape<T>& tape, const Tensor<T>& input) {
  const auto x = input.data();
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / (T(1) + std::exp(-x[i]));
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("silu", input.shape(), std::move(out), rg);
  if (rg) {
    tape.record("silu", [input, result]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto xv = input.data();
      auto gi = input.grad_buffer();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-xv[i]));
        gi[i] += g[i] * s * (T(1) + xv[i] * (T(1) - s));
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto x = a.data(), y = b.data();
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  const bool rg = detail::any_wants_grad<T>({&a, &b});
  Tensor<T> result = make_output<T>("add", a.shape(), std::move(out), rg);
  if (rg) {
    tape.record("add", [a, b, result]() mutable {
      if (!result.has_grad()) return;
      if (wants_grad(a)) accumulate(a, result.grad());
      if (wants_grad(b)) accumulate(b, result.grad());
    });
  }
  return result;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto x = a.data(), y = b.data();
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const bool rg = detail::any_wants_grad<T>({&a, &b});
  Tensor<T> result = make_output<T>("mul", a.shape(), std::move(out), rg);
  if (rg) {
    tape.record("mul", [a, b, result]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      if (wants_grad(a)) {
        auto ga = a.grad_buffer();
        const auto yv = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
      }
      if (wants_grad(b)) {
        auto gb = b.grad_buffer();
        const auto xv = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xv[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor) {
  const auto x = input.data();
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("scale", input.shape(), std::move(out), rg);
  if (rg) {
    tape.record("scale", [input, result, factor]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gi = input.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * factor;
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input) {
  T s = 0;
  for (T v : input.data()) s += v;
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("sum", {1}, {s}, rg);
  if (rg) {
    tape.record("sum", [input, result]() mutable {
      if (!result.has_grad()) return;
      const T g = result.grad()[0];
      for (T& v : input.grad_buffer()) v += g;
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& input) {
  return scale(tape, sum(tape, input), T(1) / static_cast<T>(input.numel()));
}

template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weights) {
  require(input.shape() == weights.shape(), "weighted_sum: shape mismatch " +
                                                shape_str(input.shape()) + " vs " +
                                                shape_str(weights.shape()));
  T s = 0;
  const auto x = input.data(), wv = weights.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * wv[i];
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("weighted_sum", {1}, {s}, rg);
  if (rg) {
    tape.record("weighted_sum", [input, weights, result]() mutable {
      if (!result.has_grad()) return;
      const T g = result.grad()[0];
      auto gi = input.grad_buffer();
      const auto wv2 = weights.data();
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g * wv2[i];
    });
  }
  return result;
}

namespace {

// Source taps for one axis of a 2× half-pixel-centre upsample.
struct Taps {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

Taps upsample_taps(Index in) {
  Taps t;
  const Index out = 2 * in;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const Index i0 = std::min(static_cast<Index>(src), in - 1);
    t.lo[o] = i0;
    t.hi[o] = std::min(i0 + 1, in - 1);
    t.frac[o] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample2x(Tape<T>& tape, const Tensor<T>& input) {
  check_image("bilinear_upsample2x", input);
  const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const Index oh = 2 * h, ow = 2 * w;
  const Taps ty = upsample_taps(h), tx = upsample_taps(w);
  const auto x = input.data();
  Buffer<T> out(static_cast<std::size_t>(c * oh * ow));
  for (Index ch = 0; ch < c; ++ch) {
    const T* src = x.data() + ch * h * w;
    T* dst = out.data() + ch * oh * ow;
    for (Index y = 0; y < oh; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      const T* r0 = src + ty.lo[y] * w;
      const T* r1 = src + ty.hi[y] * w;
      for (Index xo = 0; xo < ow; ++xo) {
        const T fx = static_cast<T>(tx.frac[xo]);
        const Index a = tx.lo[xo], b = tx.hi[xo];
        const T top = r0[a] + fx * (r0[b] - r0[a]);
        const T bot = r1[a] + fx * (r1[b] - r1[a]);
        dst[y * ow + xo] = top + fy * (bot - top);
      }
    }
  }
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("bilinear_upsample2x", {c, oh, ow}, std::move(out), rg);
  if (rg) {
    tape.record("bilinear_upsample2x", [input, result, ty, tx, c, h, w, oh, ow]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gi = input.grad_buffer();
      for (Index ch = 0; ch < c; ++ch) {
        const T* gs = g.data() + ch * oh * ow;
        T* gd = gi.data() + ch * h * w;
        for (Index y = 0; y < oh; ++y) {
          const T fy = static_cast<T>(ty.frac[y]);
          T* r0 = gd + ty.lo[y] * w;
          T* r1 = gd + ty.hi[y] * w;
          for (Index xo = 0; xo < ow; ++xo) {
            const T fx = static_cast<T>(tx.frac[xo]);
            const T gv = gs[y * ow + xo];
            const Index a = tx.lo[xo], b = tx.hi[xo];
            r0[a] += gv * (1 - fy) * (1 - fx);
            r0[b] += gv * (1 - fy) * fx;
            r1[a] += gv * fy * (1 - fx);
            r1[b] += gv * fy * fx;
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& input, int k) {
  check_image("avg_pool2d", input);
  const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(k >= 1 && h % k == 0 && w % k == 0,
          "avg_pool2d: window " + std::to_string(k) + " does not divide " +
              shape_str(input.shape()));
  const Index oh = h / k, ow = w / k;
  const T inv = T(1) / static_cast<T>(k * k);
  const auto x = input.data();
  Buffer<T> out(static_cast<std::size_t>(c * oh * ow), T(0));
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      for (Index xi = 0; xi < w; ++xi) {
        out[(ch * oh + y / k) * ow + xi / k] += x[(ch * h + y) * w + xi];
      }
    }
  }
  for (T& v : out) v *= inv;
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("avg_pool2d", {c, oh, ow}, std::move(out), rg);
  if (rg) {
    tape.record("avg_pool2d", [input, result, c, h, w, oh, ow, k, inv]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gi = input.grad_buffer();
      for (Index ch = 0; ch < c; ++ch) {
        for (Index y = 0; y < h; ++y) {
          for (Index xi = 0; xi < w; ++xi) {
            gi[(ch * h + y) * w + xi] += g[(ch * oh + y / k) * ow + xi / k] * inv;
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input) {
  check_image("global_avg_pool", input);
  const Index c = input.dim(0), plane = input.dim(1) * input.dim(2);
  const auto x = input.data();
  Buffer<T> out(static_cast<std::size_t>(c));
  for (Index ch = 0; ch < c; ++ch) {
    T s = 0;
    for (Index i = 0; i < plane; ++i) s += x[ch * plane + i];
    out[ch] = s / static_cast<T>(plane);
  }
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("global_avg_pool", {c}, std::move(out), rg);
  if (rg) {
    tape.record("global_avg_pool", [input, result, c, plane]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gi = input.grad_buffer();
      for (Index ch = 0; ch < c; ++ch) {
        const T gv = g[ch] / static_cast<T>(plane);
        for (Index i = 0; i < plane; ++i) gi[ch * plane + i] += gv;
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  check_image("concat_channels", a);
  check_image("concat_channels", b);
  require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
          "concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  Buffer<T> out;
  out.reserve(static_cast<std::size_t>(a.numel() + b.numel()));
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const bool rg = detail::any_wants_grad<T>({&a, &b});
  Tensor<T> result =
      make_output<T>("concat_channels", {a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out), rg);
  if (rg) {
    tape.record("concat_channels", [a, b, result]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const std::size_t na = static_cast<std::size_t>(a.numel());
      if (wants_grad(a)) accumulate(a, g.subspan(0, na));
      if (wants_grad(b)) accumulate(b, g.subspan(na));
    });
  }
  return result;
}

template <typename T>
Tensor<T> reverse_seq(Tape<T>& tape, const Tensor<T>& input) {
  require(input.defined() && input.rank() == 2,
          "reverse_seq: expected an L×E tensor, got " + shape_str(input.shape()));
  const Index len = input.dim(0), e = input.dim(1);
  const auto x = input.data();
  Buffer<T> out(x.size());
  for (Index t = 0; t < len; ++t) {
    std::copy_n(x.data() + (len - 1 - t) * e, e, out.data() + t * e);
  }
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("reverse_seq", input.shape(), std::move(out), rg);
  if (rg) {
    tape.record("reverse_seq", [input, result, len, e]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gi = input.grad_buffer();
      for (Index t = 0; t < len; ++t) {
        for (Index j = 0; j < e; ++j) gi[(len - 1 - t) * e + j] += g[t * e + j];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> flatten_spatial(Tape<T>& tape, const Tensor<T>& input) {
  check_image("flatten_spatial", input);
  const Index c = input.dim(0), plane = input.dim(1) * input.dim(2);
  Buffer<T> out(static_cast<std::size_t>(c * plane));
  as_mat(out.data(), plane, c) = as_mat(input.data().data(), c, plane).transpose();
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("flatten_spatial", {plane, c}, std::move(out), rg);
  if (rg) {
    tape.record("flatten_spatial", [input, result, c, plane]() mutable {
      if (!result.has_grad()) return;
      as_mat(input.grad_buffer().data(), c, plane) +=
          as_mat(result.grad().data(), plane, c).transpose();
    });
  }
  return result;
}

template <typename T>
Tensor<T> unflatten_spatial(Tape<T>& tape, const Tensor<T>& input, Index height, Index width) {
  require(input.defined() && input.rank() == 2 && input.dim(0) == height * width,
          "unflatten_spatial: " + shape_str(input.shape()) + " cannot be viewed as " +
              std::to_string(height) + "×" + std::to_string(width));
  const Index c = input.dim(1), plane = height * width;
  Buffer<T> out(static_cast<std::size_t>(c * plane));
  as_mat(out.data(), c, plane) = as_mat(input.data().data(), plane, c).transpose();
  const bool rg = wants_grad(input);
  Tensor<T> result = make_output<T>("unflatten_spatial", {c, height, width}, std::move(out), rg);
  if (rg) {
    tape.record("unflatten_spatial", [input, result, c, plane]() mutable {
      if (!result.has_grad()) return;
      as_mat(input.grad_buffer().data(), plane, c) +=
          as_mat(result.grad().data(), c, plane).transpose();
    });
  }
  return result;
}

template <typename T>
Tensor<T> depthwise_conv1d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias) {
  require(input.defined() && input.rank() == 2, "depthwise_conv1d: expected an L×E input");
  const Index len = input.dim(0), e = input.dim(1);
  require(weight.defined() && weight.rank() == 2 && weight.dim(0) == e && weight.dim(1) % 2 == 1,
          "depthwise_conv1d: weight must be E×k with odd k, got " + shape_str(weight.shape()) +
              " for input " + shape_str(input.shape()));
  require(!bias.defined() || (bias.rank() == 1 && bias.dim(0) == e),
          "depthwise_conv1d: bias must have E elements");
  const Index k = weight.dim(1), half = k / 2;
  const auto x = input.data(), wv = weight.data();
  Buffer<T> out(x.size(), T(0));
  for (Index t = 0; t < len; ++t) {
    for (Index j = 0; j < k; ++j) {
      const Index src = t + j - half;
      if (src < 0 || src >= len) continue;
      for (Index c = 0; c < e; ++c) out[t * e + c] += wv[c * k + j] * x[src * e + c];
    }
    if (bias.defined()) {
      for (Index c = 0; c < e; ++c) out[t * e + c] += bias.data()[c];
    }
  }
  const bool rg = detail::any_wants_grad<T>({&input, &weight, &bias});
  Tensor<T> result = make_output<T>("depthwise_conv1d", input.shape(), std::move(out), rg);
  if (rg) {
    tape.record("depthwise_conv1d", [input, weight, bias, result, len, e, k, half]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      Tensor<T> b = bias;
      if (wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (Index t = 0; t < len; ++t) {
          for (Index c = 0; c < e; ++c) gb[c] += g[t * e + c];
        }
      }
      const auto xv = input.data();
      const auto wv2 = weight.data();
      std::span<T> gw, gx;
      if (wants_grad(weight)) gw = weight.grad_buffer();
      if (wants_grad(input)) gx = input.grad_buffer();
      for (Index t = 0; t < len; ++t) {
        for (Index j = 0; j < k; ++j) {
          const Index src = t + j - half;
          if (src < 0 || src >= len) continue;
          for (Index c = 0; c < e; ++c) {
            const T gv = g[t * e + c];
            if (!gw.empty()) gw[c * k + j] += gv * xv[src * e + c];
            if (!gx.empty()) gx[src * e + c] += gv * wv2[c * k + j];
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.defined() && b.defined() && a.shape() == b.shape(),
          "mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto x = a.data(), y = b.data();
  const T n = static_cast<T>(x.size());
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  const bool rg = detail::any_wants_grad<T>({&a, &b});
  Tensor<T> result =
      make_output<T>("mse", {1}, {static_cast<T>(s / static_cast<double>(x.size()))}, rg);
  if (rg) {
    tape.record("mse", [a, b, result, n]() mutable {
      if (!result.has_grad()) return;
      const T g = result.grad()[0] * T(2) / n;
      const auto xv = a.data(), yv = b.data();
      if (wants_grad(a)) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (xv[i] - yv[i]);
      }
      if (wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * (xv[i] - yv[i]);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> group_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Index groups, double eps) {
  require(input.defined() && input.rank() == 3, "group_norm: expected a C×H×W input");
  const Index c = input.dim(0), hw = input.dim(1) * input.dim(2);
  require(groups >= 1 && c % groups == 0,
          "group_norm: " + std::to_string(c) + " channels do not split into " +
              std::to_string(groups) + " groups");
  require(gamma.defined() && gamma.shape() == Shape{c} && beta.defined() &&
              beta.shape() == Shape{c},
          "group_norm: gamma and beta must be [" + std::to_string(c) + "]");
  const Index per = c / groups, n = per * hw;
  const auto x = input.data(), g = gamma.data(), b = beta.data();
  Buffer<T> xhat(x.size()), out(x.size());
  std::vector<double> inv_std(static_cast<std::size_t>(groups));
  for (Index gi = 0; gi < groups; ++gi) {
    const Index base = gi * n;
    double mean = 0.0;
    for (Index i = 0; i < n; ++i) mean += x[base + i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double d = x[base + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[gi] = inv;
    for (Index i = 0; i < n; ++i) {
      const Index ch = gi * per + i / hw;
      const T xh = static_cast<T>((x[base + i] - mean) * inv);
      xhat[base + i] = xh;
      out[base + i] = g[ch] * xh + b[ch];
    }
  }
  const bool rg = detail::any_wants_grad<T>({&input, &gamma, &beta});
  Tensor<T> result = make_output<T>("group_norm", input.shape(), std::move(out), rg);
  if (rg) {
    tape.record("group_norm", [input, gamma, beta, result, xhat = std::move(xhat),
                               inv_std = std::move(inv_std), groups, per, hw, n]() mutable {
      if (!result.has_grad()) return;
      const auto gy = result.grad();
      const auto gm = gamma.data();
      if (wants_grad(gamma) || wants_grad(beta)) {
        std::vector<double> dg(static_cast<std::size_t>(groups * per), 0.0), db(dg.size(), 0.0);
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const std::size_t ch = i / static_cast<std::size_t>(hw);
          dg[ch] += static_cast<double>(gy[i]) * xhat[i];
          db[ch] += gy[i];
        }
        if (wants_grad(gamma)) {
          auto gg = gamma.grad_buffer();
          for (std::size_t ch = 0; ch < gg.size(); ++ch) gg[ch] += static_cast<T>(dg[ch]);
        }
        if (wants_grad(beta)) {
          auto gb = beta.grad_buffer();
          for (std::size_t ch = 0; ch < gb.size(); ++ch) gb[ch] += static_cast<T>(db[ch]);
        }
      }
      if (wants_grad(input)) {
        auto gx = input.grad_buffer();
        for (Index gi = 0; gi < groups; ++gi) {
          const Index base = gi * n;
          double s1 = 0.0, s2 = 0.0;  // sums of dxhat and dxhat * xhat
          for (Index i = 0; i < n; ++i) {
            const double d = static_cast<double>(gy[base + i]) * gm[gi * per + i / hw];
            s1 += d;
            s2 += d * xhat[base + i];
          }
          const double inv = inv_std[gi], nn = static_cast<double>(n);
          for (Index i = 0; i < n; ++i) {
            const double d = static_cast<double>(gy[base + i]) * gm[gi * per + i / hw];
            gx[base + i] += static_cast<T>(inv / nn * (nn * d - s1 - xhat[base + i] * s2));
          }
        }
      }
    });
  }
  return result;
}

#define USKT_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> group_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Index, double); \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, \
                            int);                                                                 \
  template Tensor<T> conv_transpose2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                      const Tensor<T>&, int, int);                                \
  template Tensor<T> linear(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> silu(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                       \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mean(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> weighted_sum(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> bilinear_upsample2x(Tape<T>&, const Tensor<T>&);                            \
  template Tensor<T> avg_pool2d(Tape<T>&, const Tensor<T>&, int);                                \
  template Tensor<T> global_avg_pool(Tape<T>&, const Tensor<T>&);                                \
  template Tensor<T> concat_channels(Tape<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> reverse_seq(Tape<T>&, const Tensor<T>&);                                    \
  template Tensor<T> flatten_spatial(Tape<T>&, const Tensor<T>&);                                \
  template Tensor<T> unflatten_spatial(Tape<T>&, const Tensor<T>&, Index, Index);                \
  template Tensor<T> depthwise_conv1d(Tape<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                      const Tensor<T>&);                                          \
  template Tensor<T> mse(Tape<T>&, const Tensor<T>&, const Tensor<T>&);

USKT_INSTANTIATE_OPS(float)
USKT_INSTANTIATE_OPS(double)

#undef USKT_INSTANTIATE_OPS

}  // namespace ops
}  // namespace uskt
