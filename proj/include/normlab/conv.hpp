#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "normlab/ops.hpp"

namespace normlab {

enum class Padding { Same, Valid };

namespace detail {

struct ConvDims {
  int n, h, w, cin;
  int kh, kw, cout;
  int stride;
  int oh, ow;
  int pad_top, pad_left;
};

inline ConvDims conv_dims(const Shape& x, const Shape& w, int stride, Padding padding) {
  if (x.size() != 4 || w.size() != 4) {
    throw std::invalid_argument("conv2d: input must be [N,H,W,C], kernel [KH,KW,Cin,Cout]");
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (w[2] != x[3]) {
    throw std::invalid_argument("conv2d: kernel channel extent " + std::to_string(w[2]) +
                                " does not match input channels " + std::to_string(x[3]));
  }
  ConvDims d{};
  d.n = x[0];
  d.h = x[1];
  d.w = x[2];
  d.cin = x[3];
  d.kh = w[0];
  d.kw = w[1];
  d.cout = w[3];
  d.stride = stride;
  if (padding == Padding::Same) {
    d.oh = (d.h + stride - 1) / stride;
    d.ow = (d.w + stride - 1) / stride;
    const int pad_h = std::max((d.oh - 1) * stride + d.kh - d.h, 0);
    const int pad_w = std::max((d.ow - 1) * stride + d.kw - d.w, 0);
    d.pad_top = pad_h / 2;
    d.pad_left = pad_w / 2;
  } else {
    if (d.h < d.kh || d.w < d.kw) {
      throw std::invalid_argument("conv2d: kernel larger than input under valid padding");
    }
    d.oh = (d.h - d.kh) / stride + 1;
    d.ow = (d.w - d.kw) / stride + 1;
    d.pad_top = 0;
    d.pad_left = 0;
  }
  return d;
}

/// Patch matrix [N*OH*OW, KH*KW*Cin]; out-of-image taps are zero.
template <typename S>
std::shared_ptr<std::vector<S>> im2col(const std::vector<S>& x, const ConvDims& d) {
  const std::int64_t patch = static_cast<std::int64_t>(d.kh) * d.kw * d.cin;
  const std::int64_t rows = static_cast<std::int64_t>(d.n) * d.oh * d.ow;
  auto cols = std::make_shared<std::vector<S>>(rows * patch, S(0));
  S* out = cols->data();
  for (int n = 0; n < d.n; ++n) {
    for (int oh = 0; oh < d.oh; ++oh) {
      for (int ow = 0; ow < d.ow; ++ow) {
        S* row = out + (((static_cast<std::int64_t>(n) * d.oh + oh) * d.ow) + ow) * patch;
        for (int kh = 0; kh < d.kh; ++kh) {
          const int ih = oh * d.stride - d.pad_top + kh;
          if (ih < 0 || ih >= d.h) continue;
          for (int kw = 0; kw < d.kw; ++kw) {
            const int iw = ow * d.stride - d.pad_left + kw;
            if (iw < 0 || iw >= d.w) continue;
            const S* src = x.data() + (((static_cast<std::int64_t>(n) * d.h + ih) * d.w) + iw) * d.cin;
            std::copy(src, src + d.cin, row + (static_cast<std::int64_t>(kh) * d.kw + kw) * d.cin);
          }
        }
      }
    }
  }
  return cols;
}

template <typename S>
void col2im_add(const std::vector<S>& cols, const ConvDims& d, std::vector<S>& dx) {
  const std::int64_t patch = static_cast<std::int64_t>(d.kh) * d.kw * d.cin;
  for (int n = 0; n < d.n; ++n) {
    for (int oh = 0; oh < d.oh; ++oh) {
      for (int ow = 0; ow < d.ow; ++ow) {
        const S* row = cols.data() + (((static_cast<std::int64_t>(n) * d.oh + oh) * d.ow) + ow) * patch;
        for (int kh = 0; kh < d.kh; ++kh) {
          const int ih = oh * d.stride - d.pad_top + kh;
          if (ih < 0 || ih >= d.h) continue;
          for (int kw = 0; kw < d.kw; ++kw) {
            const int iw = ow * d.stride - d.pad_left + kw;
            if (iw < 0 || iw >= d.w) continue;
            S* dst = dx.data() + (((static_cast<std::int64_t>(n) * d.h + ih) * d.w) + iw) * d.cin;
            const S* src = row + (static_cast<std::int64_t>(kh) * d.kw + kw) * d.cin;
            for (int c = 0; c < d.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation in NHWC, kernel [KH,KW,Cin,Cout], fused bias.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride = 1,
                 Padding padding = Padding::Same) {
  const detail::ConvDims d = detail::conv_dims(x.shape(), w.shape(), stride, padding);
  if (b.size() != d.cout) {
    throw std::invalid_argument("conv2d: bias length must equal output channels");
  }
  const std::int64_t rows = static_cast<std::int64_t>(d.n) * d.oh * d.ow;
  const std::int64_t patch = static_cast<std::int64_t>(d.kh) * d.kw * d.cin;
  auto cols = detail::im2col(x.data(), d);

  Tensor<S> out({d.n, d.oh, d.ow, d.cout});
  {
    ConstMatrixMap<S> cm(cols->data(), rows, patch);
    ConstMatrixMap<S> wm(w.data().data(), patch, d.cout);
    MatrixMap<S> om(out.mutable_data().data(), rows, d.cout);
    om.noalias() = cm * wm;
    om.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.data().data(), d.cout);
  }
  check_finite(out, "conv2d");

  if (grad_enabled() && (x.tracked() || w.tracked() || b.tracked())) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.tracked() ? x.grad_ptr() : nullptr;
    auto gw = w.tracked() ? w.grad_ptr() : nullptr;
    auto gb = b.tracked() ? b.grad_ptr() : nullptr;
    auto wd = w.data_ptr();
    out.attach_node({x, w, b}, [og, gx, gw, gb, wd, cols, d, rows, patch] {
      ConstMatrixMap<S> gm(og->data(), rows, d.cout);
      if (gw) {
        ConstMatrixMap<S> cm(cols->data(), rows, patch);
        MatrixMap<S> gwm(gw->data(), patch, d.cout);
        gwm.noalias() += cm.transpose() * gm;
      }
      if (gb) {
        for (int c = 0; c < d.cout; ++c) {
          S acc = S(0);
          for (std::int64_t r = 0; r < rows; ++r) acc += (*og)[r * d.cout + c];
          (*gb)[static_cast<std::size_t>(c)] += acc;
        }
      }
      if (gx) {
        std::vector<S> dcols(static_cast<std::size_t>(rows * patch));
        {
          ConstMatrixMap<S> wm(wd->data(), patch, d.cout);
          MatrixMap<S> dcm(dcols.data(), rows, patch);
          dcm.noalias() = gm * wm.transpose();
        }
        detail::col2im_add(dcols, d, *gx);
      }
    });
  }
  return out;
}

/// 2x2 max-pool, stride 2; odd trailing rows/columns are dropped.
template <typename S>
Tensor<S> maxpool2x2(const Tensor<S>& x) {
  if (x.rank() != 4) throw std::invalid_argument("maxpool2x2: input must be [N,H,W,C]");
  const int n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const int oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw std::invalid_argument("maxpool2x2: spatial extents below 2");
  Tensor<S> out({n, oh, ow, c});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  std::int64_t oi = 0;
  for (int in = 0; in < n; ++in) {
    for (int ih = 0; ih < oh; ++ih) {
      for (int iw = 0; iw < ow; ++iw) {
        for (int ic = 0; ic < c; ++ic, ++oi) {
          std::int64_t best = nhwc_index(x.shape(), in, 2 * ih, 2 * iw, ic);
          S best_v = xv[static_cast<std::size_t>(best)];
          for (int dh = 0; dh < 2; ++dh) {
            for (int dw = 0; dw < 2; ++dw) {
              const std::int64_t idx = nhwc_index(x.shape(), in, 2 * ih + dh, 2 * iw + dw, ic);
              if (xv[static_cast<std::size_t>(idx)] > best_v) {
                best_v = xv[static_cast<std::size_t>(idx)];
                best = idx;
              }
            }
          }
          ov[static_cast<std::size_t>(oi)] = best_v;
          (*argmax)[static_cast<std::size_t>(oi)] = best;
        }
      }
    }
  }
  if (grad_enabled() && x.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.grad_ptr();
    out.attach_node({x}, [og, gx, argmax] {
      for (std::size_t i = 0; i < og->size(); ++i) {
        (*gx)[static_cast<std::size_t>((*argmax)[i])] += (*og)[i];
      }
    });
  }
  return out;
}

/// Rotate the spatial (H,W) plane counterclockwise k quarter turns.
template <typename S>
Tensor<S> rot90(const Tensor<S>& x, int k) {
  if (x.rank() != 4) throw std::invalid_argument("rot90: input must be [N,H,W,C]");
  if (k < 0 || k > 3) throw std::invalid_argument("rot90: k must be in {0,1,2,3}");
  const int n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const Shape out_shape = (k % 2 == 0) ? Shape{n, h, w, c} : Shape{n, w, h, c};
  const int out_h = out_shape[1], out_w = out_shape[2];

  std::vector<std::int32_t> map(static_cast<std::size_t>(x.size()));
  for (int in = 0; in < n; ++in) {
    for (int oh = 0; oh < out_h; ++oh) {
      for (int ow = 0; ow < out_w; ++ow) {
        int ih, iw;
        switch (k) {
          case 1: ih = ow; iw = w - 1 - oh; break;
          case 2: ih = h - 1 - oh; iw = w - 1 - ow; break;
          case 3: ih = h - 1 - ow; iw = oh; break;
          default: ih = oh; iw = ow; break;
        }
        const std::int64_t src = nhwc_index(x.shape(), in, ih, iw, 0);
        const std::int64_t dst = nhwc_index(out_shape, in, oh, ow, 0);
        for (int ic = 0; ic < c; ++ic) {
          map[static_cast<std::size_t>(dst + ic)] = static_cast<std::int32_t>(src + ic);
        }
      }
    }
  }
  auto shared_map = make_index_map(std::move(map));
  Tensor<S> out(out_shape);
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    ov[i] = xv[static_cast<std::size_t>((*shared_map)[i])];
  }
  if (grad_enabled() && x.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.grad_ptr();
    out.attach_node({x}, [og, gx, shared_map] {
      for (std::size_t i = 0; i < og->size(); ++i) {
        (*gx)[static_cast<std::size_t>((*shared_map)[i])] += (*og)[i];
      }
    });
  }
  return out;
}

}  // namespace normlab
