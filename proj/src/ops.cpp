#include "nfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "nfuse/error.hpp"
#include "nfuse/tape.hpp"

namespace nfuse::ops {

namespace {

using std::size_t;
using Index = long long;

// Records `output` on the active tape when any input is tracked.
template <typename T, typename Fn>
void maybe_record(const char* op, std::vector<BasicTensor<T>> inputs, BasicTensor<T>& output, Fn&& backward) {
  auto* tape = BasicTape<T>::active();
  if (tape == nullptr) return;
  if (std::none_of(inputs.begin(), inputs.end(), [](const BasicTensor<T>& t) { return t.tracked(); })) return;
  output.set_tracked(true);
  tape->record(op, std::move(inputs), output, std::forward<Fn>(backward));
}

void require_rank(const Shape& shape, size_t rank, const char* what) {
  if (shape.size() != rank) {
    fail(ErrorCategory::kShape, std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                                    shape_to_string(shape));
  }
}

// Half-open range of output positions whose tap lands inside [0, in).
struct TapRange {
  size_t lo = 0;
  size_t hi = 0;
};

TapRange tap_range(size_t in, size_t out, size_t stride, Index offset) {
  const auto s = static_cast<Index>(stride);
  Index lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  Index last = static_cast<Index>(in) - 1 - offset;
  if (last < 0) return {};
  Index hi = std::min<Index>(static_cast<Index>(out), last / s + 1);
  if (hi <= lo) return {};
  return {static_cast<size_t>(lo), static_cast<size_t>(hi)};
}

struct ConvDims {
  size_t n, ci, co, k;
  size_t d, h, w;
  size_t od, oh, ow;
  ConvGeometry g;
  std::vector<TapRange> rd, rh, rw;  // per kernel tap
};

ConvDims conv_dims(const Shape& x, const Shape& wt, const ConvGeometry& g) {
  ConvDims c{};
  c.n = x[0];
  c.ci = x[1];
  c.d = x[2];
  c.h = x[3];
  c.w = x[4];
  c.co = wt[0];
  c.k = wt[2];
  c.g = g;
  c.od = conv_output_extent(c.d, c.k, g);
  c.oh = conv_output_extent(c.h, c.k, g);
  c.ow = conv_output_extent(c.w, c.k, g);
  for (size_t t = 0; t < c.k; ++t) {
    const Index off = static_cast<Index>(t * g.dilation) - static_cast<Index>(g.padding);
    c.rd.push_back(tap_range(c.d, c.od, g.stride, off));
    c.rh.push_back(tap_range(c.h, c.oh, g.stride, off));
    c.rw.push_back(tap_range(c.w, c.ow, g.stride, off));
  }
  return c;
}

inline Index tap_offset(const ConvDims& c, size_t t) {
  return static_cast<Index>(t * c.g.dilation) - static_cast<Index>(c.g.padding);
}

template <typename T>
void conv_forward(const ConvDims& c, const T* x, const T* wt, const T* b, T* out) {
  const size_t in_plane = c.d * c.h * c.w;
  const size_t out_plane = c.od * c.oh * c.ow;
  const size_t k3 = c.k * c.k * c.k;
  const size_t s = c.g.stride;
  for (size_t n = 0; n < c.n; ++n) {
    for (size_t co = 0; co < c.co; ++co) {
      T* op = out + (n * c.co + co) * out_plane;
      std::fill(op, op + out_plane, b[co]);
      for (size_t z = 0; z < c.od; ++z) {
        for (size_t y = 0; y < c.oh; ++y) {
          T* orow = op + (z * c.oh + y) * c.ow;
          for (size_t ci = 0; ci < c.ci; ++ci) {
            const T* ip = x + (n * c.ci + ci) * in_plane;
            const T* wp = wt + (co * c.ci + ci) * k3;
            for (size_t kd = 0; kd < c.k; ++kd) {
              if (z < c.rd[kd].lo || z >= c.rd[kd].hi) continue;
              const size_t iz = static_cast<size_t>(static_cast<Index>(z * s) + tap_offset(c, kd));
              for (size_t kh = 0; kh < c.k; ++kh) {
                if (y < c.rh[kh].lo || y >= c.rh[kh].hi) continue;
                const size_t iy = static_cast<size_t>(static_cast<Index>(y * s) + tap_offset(c, kh));
                const T* irow = ip + (iz * c.h + iy) * c.w;
                for (size_t kw = 0; kw < c.k; ++kw) {
                  const T wv = wp[(kd * c.k + kh) * c.k + kw];
                  const auto [lo, hi] = c.rw[kw];
                  const Index off = tap_offset(c, kw);
                  if (s == 1) {
                    const T* src = irow + off;
                    for (size_t x0 = lo; x0 < hi; ++x0) orow[x0] += wv * src[x0];
                  } else {
                    for (size_t x0 = lo; x0 < hi; ++x0) orow[x0] += wv * irow[static_cast<Index>(x0 * s) + off];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvDims& c, const T* x, const T* wt, const T* gout, T* gx, T* gw, T* gb) {
  const size_t in_plane = c.d * c.h * c.w;
  const size_t out_plane = c.od * c.oh * c.ow;
  const size_t k3 = c.k * c.k * c.k;
  const size_t s = c.g.stride;
  if (gb != nullptr) {
    for (size_t co = 0; co < c.co; ++co) {
      double acc = 0;
      for (size_t n = 0; n < c.n; ++n) {
        const T* gp = gout + (n * c.co + co) * out_plane;
        for (size_t i = 0; i < out_plane; ++i) acc += gp[i];
      }
      gb[co] += static_cast<T>(acc);
    }
  }
  // Weight gradients sum hundreds of thousands of row dots; keep the running
  // total in double so the float path stays close to the exact value.
  std::vector<double> gw_acc(gw != nullptr ? c.co * c.ci * k3 : 0, 0.0);
  for (size_t n = 0; n < c.n; ++n) {
    for (size_t co = 0; co < c.co; ++co) {
      const T* gp = gout + (n * c.co + co) * out_plane;
      for (size_t z = 0; z < c.od; ++z) {
        for (size_t y = 0; y < c.oh; ++y) {
          const T* grow = gp + (z * c.oh + y) * c.ow;
          for (size_t ci = 0; ci < c.ci; ++ci) {
            const size_t in_base = (n * c.ci + ci) * in_plane;
            const T* wp = wt + (co * c.ci + ci) * k3;
            double* gwp = gw != nullptr ? gw_acc.data() + (co * c.ci + ci) * k3 : nullptr;
            for (size_t kd = 0; kd < c.k; ++kd) {
              if (z < c.rd[kd].lo || z >= c.rd[kd].hi) continue;
              const size_t iz = static_cast<size_t>(static_cast<Index>(z * s) + tap_offset(c, kd));
              for (size_t kh = 0; kh < c.k; ++kh) {
                if (y < c.rh[kh].lo || y >= c.rh[kh].hi) continue;
                const size_t iy = static_cast<size_t>(static_cast<Index>(y * s) + tap_offset(c, kh));
                const size_t row = in_base + (iz * c.h + iy) * c.w;
                for (size_t kw = 0; kw < c.k; ++kw) {
                  const size_t tap = (kd * c.k + kh) * c.k + kw;
                  const auto [lo, hi] = c.rw[kw];
                  const Index off = tap_offset(c, kw);
                  if (gx != nullptr) {
                    const T wv = wp[tap];
                    if (s == 1) {
                      T* dst = gx + row + off;
                      for (size_t x0 = lo; x0 < hi; ++x0) dst[x0] += wv * grow[x0];
                    } else {
                      T* dst = gx + row;
                      for (size_t x0 = lo; x0 < hi; ++x0) dst[static_cast<Index>(x0 * s) + off] += wv * grow[x0];
                    }
                  }
                  if (gwp != nullptr) {
                    T dot = 0;
                    if (s == 1) {
                      const T* src = x + row + off;
#pragma omp simd reduction(+ : dot)
                      for (size_t x0 = lo; x0 < hi; ++x0) dot += grow[x0] * src[x0];
                    } else {
                      const T* src = x + row;
                      for (size_t x0 = lo; x0 < hi; ++x0) dot += grow[x0] * src[static_cast<Index>(x0 * s) + off];
                    }
                    gwp[tap] += dot;
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  for (size_t i = 0; i < gw_acc.size(); ++i) gw[i] += static_cast<T>(gw_acc[i]);
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  if (kernel == 0 || g.stride == 0 || g.dilation == 0) {
    fail(ErrorCategory::kArgument, "convolution kernel, stride and dilation must be positive");
  }
  const std::size_t window = g.dilation * (kernel - 1) + 1;
  const std::size_t padded = in + 2 * g.padding;
  if (in == 0 || padded < window) {
    fail(ErrorCategory::kShape, "convolution window " + std::to_string(window) + " exceeds padded extent " +
                                    std::to_string(padded));
  }
  return (padded - window) / g.stride + 1;
}

std::size_t pool_output_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) fail(ErrorCategory::kArgument, "pool kernel and stride must be positive");
  if (in < kernel) {
    fail(ErrorCategory::kShape, "pool window " + std::to_string(kernel) + " exceeds extent " + std::to_string(in));
  }
  return (in - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      const ConvGeometry& geometry) {
  require_rank(input.shape(), 5, "conv3d input");
  require_rank(weight.shape(), 5, "conv3d weight");
  const auto& ws = weight.shape();
  if (ws[1] != input.extent(1)) {
    fail(ErrorCategory::kShape, "conv3d input " + shape_to_string(input.shape()) + " has " +
                                    std::to_string(input.extent(1)) + " channels but weight " + shape_to_string(ws) +
                                    " expects " + std::to_string(ws[1]));
  }
  if (ws[2] != ws[3] || ws[2] != ws[4]) fail(ErrorCategory::kShape, "conv3d kernel must be cubic, got " + shape_to_string(ws));
  if (bias.shape() != Shape{ws[0]}) {
    fail(ErrorCategory::kShape, "conv3d bias " + shape_to_string(bias.shape()) + " does not match weight " + shape_to_string(ws));
  }
  auto dims = conv_dims(input.shape(), ws, geometry);
  BasicTensor<T> out(Shape{dims.n, dims.co, dims.od, dims.oh, dims.ow});
  conv_forward(dims, input.data().data(), weight.data().data(), bias.data().data(), out.mutable_data().data());

  maybe_record<T>("conv3d", {input, weight, bias}, out, [dims, input, weight, bias, out]() mutable {
    T* gx = input.tracked() ? input.mutable_grad().data() : nullptr;
    T* gw = weight.tracked() ? weight.mutable_grad().data() : nullptr;
    T* gb = bias.tracked() ? bias.mutable_grad().data() : nullptr;
    conv_backward(dims, input.data().data(), weight.data().data(), out.grad().data(), gx, gw, gb);
  });
  return out;
}

template <typename T>
BasicTensor<T> maxpool3d(const BasicTensor<T>& input, std::size_t kernel, std::size_t stride) {
  require_rank(input.shape(), 5, "maxpool3d input");
  const auto& sh = input.shape();
  const size_t od = pool_output_extent(sh[2], kernel, stride);
  const size_t oh = pool_output_extent(sh[3], kernel, stride);
  const size_t ow = pool_output_extent(sh[4], kernel, stride);
  const size_t planes = sh[0] * sh[1];
  const size_t in_plane = sh[2] * sh[3] * sh[4];
  const size_t out_plane = od * oh * ow;
  BasicTensor<T> out(Shape{sh[0], sh[1], od, oh, ow});
  std::vector<std::uint32_t> argmax(planes * out_plane);

  const T* x = input.data().data();
  T* o = out.mutable_data().data();
  for (size_t p = 0; p < planes; ++p) {
    const T* ip = x + p * in_plane;
    size_t oi = p * out_plane;
    for (size_t z = 0; z < od; ++z) {
      for (size_t y = 0; y < oh; ++y) {
        for (size_t w = 0; w < ow; ++w, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          size_t best_idx = 0;
          bool first = true;
          for (size_t kz = 0; kz < kernel; ++kz) {
            for (size_t ky = 0; ky < kernel; ++ky) {
              const size_t base = ((z * stride + kz) * sh[3] + (y * stride + ky)) * sh[4] + w * stride;
              for (size_t kx = 0; kx < kernel; ++kx) {
                const T v = ip[base + kx];
                if (first || v > best) {
                  best = v;
                  best_idx = base + kx;
                  first = false;
                }
              }
            }
          }
          o[oi] = best;
          argmax[oi] = static_cast<std::uint32_t>(best_idx);
        }
      }
    }
  }

  maybe_record<T>("maxpool3d", {input}, out, [input, out, argmax = std::move(argmax), in_plane, out_plane]() mutable {
    T* gx = input.mutable_grad().data();
    const T* go = out.grad().data();
    for (size_t i = 0; i < argmax.size(); ++i) gx[(i / out_plane) * in_plane + argmax[i]] += go[i];
  });
  return out;
}

template <typename T>
BasicTensor<T> instance_norm3d(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                               double eps) {
  require_rank(input.shape(), 5, "instance_norm3d input");
  const auto& sh = input.shape();
  const size_t channels = sh[1];
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    fail(ErrorCategory::kShape, "instance_norm3d affine parameters must have shape [" + std::to_string(channels) +
                                    "], got " + shape_to_string(gamma.shape()) + " and " + shape_to_string(beta.shape()));
  }
  const size_t m = sh[2] * sh[3] * sh[4];
  if (m < 2) fail(ErrorCategory::kShape, "instance_norm3d needs at least 2 spatial elements");
  const size_t planes = sh[0] * channels;

  BasicTensor<T> out(sh);
  std::vector<double> xhat(input.numel());
  std::vector<double> inv_std(planes);
  const T* x = input.data().data();
  const T* g = gamma.data().data();
  const T* b = beta.data().data();
  T* o = out.mutable_data().data();
  for (size_t p = 0; p < planes; ++p) {
    const T* xp = x + p * m;
    double mean = 0;
    for (size_t i = 0; i < m; ++i) mean += xp[i];
    mean /= static_cast<double>(m);
    double var = 0;
    for (size_t i = 0; i < m; ++i) {
      const double dlt = xp[i] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[p] = is;
    const size_t c = p % channels;
    double* xh = xhat.data() + p * m;
    T* op = o + p * m;
    for (size_t i = 0; i < m; ++i) {
      xh[i] = (xp[i] - mean) * is;
      op[i] = static_cast<T>(g[c] * xh[i] + b[c]);
    }
  }

  maybe_record<T>("instance_norm3d", {input, gamma, beta}, out,
                  [input, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), m, channels,
                   planes]() mutable {
                    const T* go = out.grad().data();
                    const T* g = gamma.data().data();
                    T* gx = input.tracked() ? input.mutable_grad().data() : nullptr;
                    T* gg = gamma.tracked() ? gamma.mutable_grad().data() : nullptr;
                    T* gb = beta.tracked() ? beta.mutable_grad().data() : nullptr;
                    for (size_t p = 0; p < planes; ++p) {
                      const size_t c = p % channels;
                      const T* gop = go + p * m;
                      const double* xh = xhat.data() + p * m;
                      double sum_dy = 0;
                      double sum_dy_xh = 0;
                      for (size_t i = 0; i < m; ++i) {
                        sum_dy += gop[i];
                        sum_dy_xh += gop[i] * xh[i];
                      }
                      if (gg != nullptr) gg[c] += static_cast<T>(sum_dy_xh);
                      if (gb != nullptr) gb[c] += static_cast<T>(sum_dy);
                      if (gx != nullptr) {
                        // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
                        const double scale = static_cast<double>(g[c]) * inv_std[p];
                        const double mdy = sum_dy / static_cast<double>(m);
                        const double mdyx = sum_dy_xh / static_cast<double>(m);
                        T* gxp = gx + p * m;
                        for (size_t i = 0; i < m; ++i) {
                          gxp[i] += static_cast<T>(scale * (gop[i] - mdy - xh[i] * mdyx));
                        }
                      }
                    }
                  });
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  const auto x = input.data();
  auto o = out.mutable_data();
  for (size_t i = 0; i < x.size(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
  maybe_record<T>("relu", {input}, out, [input, out]() mutable {
    const auto x = input.data();
    const auto go = out.grad();
    auto gx = input.mutable_grad();
    for (size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) gx[i] += go[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const size_t n = input.extent(0);
  const size_t fi = input.extent(1);
  const size_t fo = weight.extent(0);
  if (weight.extent(1) != fi) {
    fail(ErrorCategory::kShape, "linear input " + shape_to_string(input.shape()) + " does not match weight " +
                                    shape_to_string(weight.shape()));
  }
  if (bias.shape() != Shape{fo}) {
    fail(ErrorCategory::kShape, "linear bias " + shape_to_string(bias.shape()) + " does not match weight " +
                                    shape_to_string(weight.shape()));
  }
  BasicTensor<T> out(Shape{n, fo});
  const T* x = input.data().data();
  const T* w = weight.data().data();
  const T* b = bias.data().data();
  T* o = out.mutable_data().data();
  for (size_t r = 0; r < n; ++r) {
    for (size_t j = 0; j < fo; ++j) {
      T acc = 0;
      const T* wr = w + j * fi;
      const T* xr = x + r * fi;
      for (size_t i = 0; i < fi; ++i) acc += xr[i] * wr[i];
      o[r * fo + j] = acc + b[j];
    }
  }
  maybe_record<T>("linear", {input, weight, bias}, out, [input, weight, bias, out, n, fi, fo]() mutable {
    const T* go = out.grad().data();
    const T* x = input.data().data();
    const T* w = weight.data().data();
    if (input.tracked()) {
      T* gx = input.mutable_grad().data();
      for (size_t r = 0; r < n; ++r) {
        for (size_t j = 0; j < fo; ++j) {
          const T g = go[r * fo + j];
          const T* wr = w + j * fi;
          T* gxr = gx + r * fi;
          for (size_t i = 0; i < fi; ++i) gxr[i] += g * wr[i];
        }
      }
    }
    if (weight.tracked()) {
      T* gw = weight.mutable_grad().data();
      for (size_t j = 0; j < fo; ++j) {
        T* gwr = gw + j * fi;
        for (size_t r = 0; r < n; ++r) {
          const T g = go[r * fo + j];
          const T* xr = x + r * fi;
          for (size_t i = 0; i < fi; ++i) gwr[i] += g * xr[i];
        }
      }
    }
    if (bias.tracked()) {
      T* gb = bias.mutable_grad().data();
      for (size_t j = 0; j < fo; ++j) {
        T acc = 0;
        for (size_t r = 0; r < n; ++r) acc += go[r * fo + j];
        gb[j] += acc;
      }
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCategory::kShape, "add operands differ in shape: " + shape_to_string(a.shape()) + " vs " +
                                    shape_to_string(b.shape()));
  }
  BasicTensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  maybe_record<T>("add", {a, b}, out, [a, b, out]() mutable {
    const auto go = out.grad();
    for (auto* t : {&a, &b}) {
      if (!t->tracked()) continue;
      auto g = t->mutable_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCategory::kShape, "mul operands differ in shape: " + shape_to_string(a.shape()) + " vs " +
                                    shape_to_string(b.shape()));
  }
  BasicTensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  maybe_record<T>("mul", {a, b}, out, [a, b, out]() mutable {
    const auto go = out.grad();
    if (a.tracked()) {
      auto g = a.mutable_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += go[i] * b.data()[i];
    }
    if (b.tracked()) {
      auto g = b.mutable_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += go[i] * a.data()[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> concat(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "concat lhs");
  require_rank(b.shape(), 2, "concat rhs");
  if (a.extent(0) != b.extent(0)) {
    fail(ErrorCategory::kShape, "concat operands differ in leading extent: " + shape_to_string(a.shape()) + " vs " +
                                    shape_to_string(b.shape()));
  }
  const size_t n = a.extent(0);
  const size_t fa = a.extent(1);
  const size_t fb = b.extent(1);
  BasicTensor<T> out(Shape{n, fa + fb});
  auto o = out.mutable_data();
  for (size_t r = 0; r < n; ++r) {
    std::copy_n(a.data().begin() + r * fa, fa, o.begin() + r * (fa + fb));
    std::copy_n(b.data().begin() + r * fb, fb, o.begin() + r * (fa + fb) + fa);
  }
  maybe_record<T>("concat", {a, b}, out, [a, b, out, n, fa, fb]() mutable {
    const auto go = out.grad();
    if (a.tracked()) {
      auto g = a.mutable_grad();
      for (size_t r = 0; r < n; ++r)
        for (size_t i = 0; i < fa; ++i) g[r * fa + i] += go[r * (fa + fb) + i];
    }
    if (b.tracked()) {
      auto g = b.mutable_grad();
      for (size_t r = 0; r < n; ++r)
        for (size_t i = 0; i < fb; ++i) g[r * fb + i] += go[r * (fa + fb) + fa + i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& input, Shape shape) {
  if (shape_numel(shape) != input.numel()) {
    fail(ErrorCategory::kShape, "cannot reshape " + shape_to_string(input.shape()) + " to " + shape_to_string(shape));
  }
  BasicTensor<T> out(std::move(shape), std::vector<T>(input.data().begin(), input.data().end()));
  maybe_record<T>("reshape", {input}, out, [input, out]() mutable {
    const auto go = out.grad();
    auto g = input.mutable_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
  });
  return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& input) {
  T acc = 0;
  for (T v : input.data()) acc += v;
  auto out = BasicTensor<T>::scalar(acc);
  maybe_record<T>("sum", {input}, out, [input, out]() mutable {
    const T g0 = out.grad()[0];
    for (auto& g : input.mutable_grad()) g += g0;
  });
  return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax logits");
  const size_t n = logits.extent(0);
  const size_t c = logits.extent(1);
  BasicTensor<T> out(logits.shape());
  const auto z = logits.data();
  auto p = out.mutable_data();
  for (size_t r = 0; r < n; ++r) {
    T mx = z[r * c];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, z[r * c + j]);
    double total = 0;
    for (size_t j = 0; j < c; ++j) total += std::exp(static_cast<double>(z[r * c + j] - mx));
    for (size_t j = 0; j < c; ++j) p[r * c + j] = static_cast<T>(std::exp(static_cast<double>(z[r * c + j] - mx)) / total);
  }
  return out;
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
  require_rank(logits.shape(), 2, "cross-entropy logits");
  if (logits.extent(1) != kNumClasses) {
    fail(ErrorCategory::kShape, "cross-entropy expects 3 classes, logits are " + shape_to_string(logits.shape()));
  }
  const size_t n = logits.extent(0);
  if (targets.size() != n) {
    fail(ErrorCategory::kShape, "cross-entropy got " + std::to_string(targets.size()) + " targets for " +
                                    std::to_string(n) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || t >= static_cast<int>(kNumClasses)) {
      fail(ErrorCategory::kArgument, "cross-entropy target " + std::to_string(t) + " outside {0,1,2}");
    }
  }
  auto probs = softmax(logits);
  const auto z = logits.data();
  double total = 0;
  for (size_t r = 0; r < n; ++r) {
    const T* row = z.data() + r * kNumClasses;
    const T mx = std::max({row[0], row[1], row[2]});
    double lse = 0;
    for (size_t j = 0; j < kNumClasses; ++j) lse += std::exp(static_cast<double>(row[j] - mx));
    total += std::log(lse) - static_cast<double>(row[targets[r]] - mx);
  }
  auto loss = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  std::vector<int> tgt(targets.begin(), targets.end());
  maybe_record<T>("softmax_cross_entropy", {logits}, loss, [logits, probs, loss, tgt = std::move(tgt), n]() mutable {
    const T scale = loss.grad()[0] / static_cast<T>(n);
    auto g = logits.mutable_grad();
    const auto p = probs.data();
    for (size_t r = 0; r < n; ++r) {
      for (size_t j = 0; j < kNumClasses; ++j) {
        const T onehot = static_cast<int>(j) == tgt[r] ? T(1) : T(0);
        g[r * kNumClasses + j] += scale * (p[r * kNumClasses + j] - onehot);
      }
    }
  });
  return {loss, probs};
}

#define NFUSE_INSTANTIATE_OPS(T)                                                                         \
  template BasicTensor<T> conv3d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,      \
                                 const ConvGeometry&);                                                   \
  template BasicTensor<T> maxpool3d(const BasicTensor<T>&, std::size_t, std::size_t);                     \
  template BasicTensor<T> instance_norm3d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                          const BasicTensor<T>&, double);                                \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> concat(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                         \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                                \
  template CrossEntropyResult<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);

NFUSE_INSTANTIATE_OPS(float)
NFUSE_INSTANTIATE_OPS(double)

#undef NFUSE_INSTANTIATE_OPS

}  // namespace nfuse::ops
