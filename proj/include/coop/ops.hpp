#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "coop/tensor.hpp"

namespace coop {

// Continuous grid coordinate: u runs along rows (extent H), v along columns (W).
struct GridPoint {
  double u = 0.0;
  double v = 0.0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

namespace detail {

inline void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul lhs");
  detail::require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += aip * b(p, j);
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
  return t;
}

// out[i,:] = x[i,:] W + b
inline Tensor linear_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  detail::require_rank(x, 2, "linear input");
  detail::require_rank(weights, 2, "linear weights");
  if (x.dim(1) != weights.dim(0) || bias.size() != weights.dim(1)) {
    throw DimensionError("linear_forward: x " + shape_str(x.shape()) + ", W " +
                         shape_str(weights.shape()) + ", b " + shape_str(bias.shape()));
  }
  Tensor out = matmul(x, weights);
  for (std::size_t i = 0; i < out.dim(0); ++i)
    for (std::size_t j = 0; j < out.dim(1); ++j) out(i, j) += bias[j];
  return out;
}

// Row-wise softmax of scale * x; rows are shifted by their max first.
inline Tensor scaled_softmax_rows(const Tensor& x, double scale) {
  detail::require_rank(x, 2, "scaled_softmax_rows");
  if (x.dim(1) == 0) throw DimensionError("scaled_softmax_rows: zero columns");
  if (!(scale > 0.0)) throw std::invalid_argument("scaled_softmax_rows: scale must be > 0");
  Tensor y(x.shape());
  const std::size_t c = x.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y(i, j) = std::exp(scale * (x(i, j) - mx));
      z += y(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) y(i, j) /= z;
  }
  return y;
}

// Interpolation stencil for one point. Points outside [0,H-1]x[0,W-1] have
// no taps (border-zero policy).
struct BilinearTaps {
  bool inside = false;
  std::array<std::size_t, 4> cell{};  // flat h*W+w indices
  std::array<double, 4> weight{};
  std::array<double, 4> dweight_du{};
  std::array<double, 4> dweight_dv{};
};

inline BilinearTaps bilinear_taps(std::size_t height, std::size_t width, GridPoint p) {
  BilinearTaps t;
  if (!(p.u >= 0.0 && p.v >= 0.0 && p.u <= static_cast<double>(height - 1) &&
        p.v <= static_cast<double>(width - 1))) {
    return t;
  }
  t.inside = true;
  const auto base = [](double x, std::size_t extent) {
    if (extent < 2) return std::size_t{0};
    return std::min(static_cast<std::size_t>(std::floor(x)), extent - 2);
  };
  const std::size_t u0 = base(p.u, height), v0 = base(p.v, width);
  const std::size_t u1 = height < 2 ? u0 : u0 + 1;
  const std::size_t v1 = width < 2 ? v0 : v0 + 1;
  const double fu = p.u - static_cast<double>(u0);
  const double fv = p.v - static_cast<double>(v0);
  t.cell = {u0 * width + v0, u0 * width + v1, u1 * width + v0, u1 * width + v1};
  t.weight = {(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv};
  if (height >= 2) t.dweight_du = {-(1 - fv), -fv, 1 - fv, fv};
  if (width >= 2) t.dweight_dv = {-(1 - fu), 1 - fu, -fu, fu};
  return t;
}

// feat: [H x W x C]. Returns [P x C].
inline Tensor bilinear_sample(const Tensor& feat, std::span<const GridPoint> points) {
  detail::require_rank(feat, 3, "bilinear_sample feature");
  const std::size_t h = feat.dim(0), w = feat.dim(1), c = feat.dim(2);
  Tensor out({points.size(), c});
  const double* f = feat.data().data();
  for (std::size_t p = 0; p < points.size(); ++p) {
    const BilinearTaps taps = bilinear_taps(h, w, points[p]);
    if (!taps.inside) continue;
    auto dst = out.row(p);
    for (int k = 0; k < 4; ++k) {
      const double wk = taps.weight[k];
      const double* src = f + taps.cell[k] * c;
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += wk * src[ch];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analytic backward passes.

struct MatmulGrads {
  Tensor a;
  Tensor b;
};

inline MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& upstream) {
  return {matmul(upstream, transpose(b)), matmul(transpose(a), upstream)};
}

struct LinearGrads {
  Tensor x;
  Tensor weights;
  Tensor bias;
};

inline LinearGrads linear_backward(const Tensor& x, const Tensor& weights, const Tensor& upstream) {
  LinearGrads g{matmul(upstream, transpose(weights)), matmul(transpose(x), upstream),
                Tensor({weights.dim(1)})};
  for (std::size_t i = 0; i < upstream.dim(0); ++i)
    for (std::size_t j = 0; j < upstream.dim(1); ++j) g.bias[j] += upstream(i, j);
  return g;
}

// Gradient w.r.t. the softmax input given its output y.
inline Tensor scaled_softmax_rows_backward(const Tensor& y, double scale, const Tensor& upstream) {
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.dim(0); ++i) {
    const double s = dot(y.row(i), upstream.row(i));
    for (std::size_t j = 0; j < y.dim(1); ++j) dx(i, j) = scale * y(i, j) * (upstream(i, j) - s);
  }
  return dx;
}

struct BilinearGrads {
  Tensor feat;                    // [H x W x C]
  std::vector<GridPoint> points;  // d/du, d/dv per point
};

inline BilinearGrads bilinear_sample_backward(const Tensor& feat, std::span<const GridPoint> points,
                                              const Tensor& upstream) {
  const std::size_t h = feat.dim(0), w = feat.dim(1), c = feat.dim(2);
  BilinearGrads g{Tensor(feat.shape()), std::vector<GridPoint>(points.size())};
  for (std::size_t p = 0; p < points.size(); ++p) {
    const BilinearTaps taps = bilinear_taps(h, w, points[p]);
    if (!taps.inside) continue;
    const auto up = upstream.row(p);
    for (int k = 0; k < 4; ++k) {
      const std::size_t off = taps.cell[k] * c;
      double proj = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        g.feat[off + ch] += taps.weight[k] * up[ch];
        proj += feat[off + ch] * up[ch];
      }
      g.points[p].u += taps.dweight_du[k] * proj;
      g.points[p].v += taps.dweight_dv[k] * proj;
    }
  }
  return g;
}

enum class OpTag { kMatmul, kScaledSoftmaxRows, kBilinearSample, kLinearForward };

class UnknownOpError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline OpTag op_tag_from_string(std::string_view name) {
  if (name == "matmul") return OpTag::kMatmul;
  if (name == "scaled_softmax_rows") return OpTag::kScaledSoftmaxRows;
  if (name == "bilinear_sample") return OpTag::kBilinearSample;
  if (name == "linear_forward") return OpTag::kLinearForward;
  throw UnknownOpError("no backward for op '" + std::string(name) + "'");
}

inline std::vector<GridPoint> points_from_tensor(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 2) throw DimensionError("points tensor must be [P x 2]");
  std::vector<GridPoint> pts(t.dim(0));
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {t(i, 0), t(i, 1)};
  return pts;
}

// Gradients with respect to each input, in input order.
//   matmul:              {a, b}
//   linear_forward:      {x, weights, bias}
//   scaled_softmax_rows: {x}            (uses `scale`)
//   bilinear_sample:     {feat, points [P x 2]}
inline std::vector<Tensor> backward(OpTag tag, std::span<const Tensor> inputs,
                                    const Tensor& upstream, double scale = 1.0) {
  const auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument("backward: expected " + std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
    }
  };
  switch (tag) {
    case OpTag::kMatmul: {
      need(2);
      auto g = matmul_backward(inputs[0], inputs[1], upstream);
      return {std::move(g.a), std::move(g.b)};
    }
    case OpTag::kLinearForward: {
      need(3);
      auto g = linear_backward(inputs[0], inputs[1], upstream);
      return {std::move(g.x), std::move(g.weights), std::move(g.bias)};
    }
    case OpTag::kScaledSoftmaxRows: {
      need(1);
      return {scaled_softmax_rows_backward(scaled_softmax_rows(inputs[0], scale), scale, upstream)};
    }
    case OpTag::kBilinearSample: {
      need(2);
      const auto pts = points_from_tensor(inputs[1]);
      auto g = bilinear_sample_backward(inputs[0], pts, upstream);
      Tensor dp({pts.size(), 2});
      for (std::size_t i = 0; i < pts.size(); ++i) {
        dp(i, 0) = g.points[i].u;
        dp(i, 1) = g.points[i].v;
      }
      return {std::move(g.feat), std::move(dp)};
    }
  }
  throw UnknownOpError("backward: unknown op tag");
}

inline std::vector<Tensor> backward(std::string_view tag, std::span<const Tensor> inputs,
                                    const Tensor& upstream, double scale = 1.0) {
  return backward(op_tag_from_string(tag), inputs, upstream, scale);
}

// Small helpers used by the network modules.

inline void relu_inplace(Tensor& t) {
  for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace coop
