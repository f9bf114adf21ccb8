#pragma once

#include <cmath>
#include <mutex>
#include <span>
#include <vector>

#include "coop/ops.hpp"
#include "coop/tensor.hpp"

namespace coop {

// Collects how far each softmax row strays from summing to one.
struct AttentionAudit {
  double max_deviation = 0.0;
  std::size_t rows = 0;

  void record(std::span<const double> weights) {
    double s = 0.0;
    for (double w : weights) s += w;
    std::lock_guard lock(mu_);
    max_deviation = std::max(max_deviation, std::abs(s - 1.0));
    ++rows;
  }

 private:
  std::mutex mu_;
};

// Weights for one deformable attention block.
//
// Per query and head, `points` sampling locations are predicted on each of
// `maps` value maps as offsets (in map cells) from a reference point. Keys
// and values are read from the projected maps by bilinear sampling, and the
// attention logit for a location is q_h . k_h plus a query-only bias from
// the attention-weight net. Logits are softmax-normalized over all
// locations of a head with scale 1/sqrt(C).
struct DeformableAttnParams {
  std::size_t channels = 0;
  std::size_t heads = 1;
  std::size_t points = 1;
  std::size_t maps = 1;

  Tensor query_w, query_b;    // W^q: [C x C], [C]
  Tensor key_w, key_b;        // W^k
  Tensor value_w, value_b;    // W^v
  Tensor offset_w, offset_b;  // [C x heads*maps*points*2]
  Tensor attn_w, attn_b;      // [C x heads*maps*points]
  Tensor out_w, out_b;        // [C x C], [C]

  std::size_t locations() const { return maps * points; }
  std::size_t head_dim() const { return channels / heads; }

  void validate() const {
    if (heads < 1 || points < 1 || maps < 1) throw std::invalid_argument("deformable attention needs heads, points, maps >= 1");
    if (channels == 0 || channels % heads != 0) {
      throw std::invalid_argument("channels (" + std::to_string(channels) +
                                  ") must be a positive multiple of heads (" + std::to_string(heads) + ")");
    }
  }

  static DeformableAttnParams zeros(std::size_t c, std::size_t heads, std::size_t points,
                                    std::size_t maps = 1) {
    DeformableAttnParams p;
    p.channels = c;
    p.heads = heads;
    p.points = points;
    p.maps = maps;
    p.validate();
    const std::size_t hl = heads * maps * points;
    p.query_w = Tensor({c, c});
    p.query_b = Tensor({c});
    p.key_w = Tensor({c, c});
    p.key_b = Tensor({c});
    p.value_w = Tensor({c, c});
    p.value_b = Tensor({c});
    p.offset_w = Tensor({c, hl * 2});
    p.offset_b = Tensor({hl * 2});
    p.attn_w = Tensor({c, hl});
    p.attn_b = Tensor({hl});
    p.out_w = Tensor({c, c});
    p.out_b = Tensor({c});
    return p;
  }

  // Identity projections, zero offsets, uniform attention bias.
  static DeformableAttnParams passthrough(std::size_t c, std::size_t heads = 1,
                                          std::size_t points = 1, std::size_t maps = 1) {
    auto p = zeros(c, heads, points, maps);
    p.query_w = Tensor::identity(c);
    p.key_w = Tensor::identity(c);
    p.value_w = Tensor::identity(c);
    p.out_w = Tensor::identity(c);
    return p;
  }

  // Seeded uniform init. Offsets start within `offset_scale` cells.
  static DeformableAttnParams seeded(std::size_t c, std::size_t heads, std::size_t points,
                                     std::size_t maps, RngSeed seed, double offset_scale = 1.5) {
    auto p = zeros(c, heads, points, maps);
    const double a = 1.0 / std::sqrt(static_cast<double>(c));
    const std::size_t hl = heads * maps * points;
    p.query_w = seeded_init({c, c}, derive(seed, 1), Init::uniform(a));
    p.key_w = seeded_init({c, c}, derive(seed, 2), Init::uniform(a));
    p.value_w = seeded_init({c, c}, derive(seed, 3), Init::uniform(a));
    p.offset_w = seeded_init({c, hl * 2}, derive(seed, 4), Init::uniform(0.1 * a));
    p.offset_b = seeded_init({hl * 2}, derive(seed, 5), Init::uniform(offset_scale));
    p.attn_w = seeded_init({c, hl}, derive(seed, 6), Init::uniform(a));
    p.out_w = seeded_init({c, c}, derive(seed, 7), Init::uniform(a));
    return p;
  }

  // Applies f(member, other_member) to every weight tensor pair.
  template <typename Self, typename Other, typename Fn>
  static void for_each_pair(Self& a, Other& b, Fn&& fn) {
    fn(a.query_w, b.query_w);
    fn(a.query_b, b.query_b);
    fn(a.key_w, b.key_w);
    fn(a.key_b, b.key_b);
    fn(a.value_w, b.value_w);
    fn(a.value_b, b.value_b);
    fn(a.offset_w, b.offset_w);
    fn(a.offset_b, b.offset_b);
    fn(a.attn_w, b.attn_w);
    fn(a.attn_b, b.attn_b);
    fn(a.out_w, b.out_w);
    fn(a.out_b, b.out_b);
  }
};

namespace detail {

inline Tensor project_map(const Tensor& map, const Tensor& w, const Tensor& b) {
  const Tensor flat = map.reshaped({map.dim(0) * map.dim(1), map.dim(2)});
  return linear_forward(flat, w, b).reshaped(map.shape());
}

inline void check_deformable_inputs(const Tensor& query, std::span<const Tensor> value_maps,
                                    std::span<const std::vector<GridPoint>> refs,
                                    const DeformableAttnParams& p) {
  p.validate();
  if (query.rank() != 2 || query.dim(1) != p.channels) {
    throw DimensionError("deformable_attention: query " + shape_str(query.shape()) +
                         " vs channels " + std::to_string(p.channels));
  }
  if (value_maps.size() != p.maps || refs.size() != p.maps) {
    throw DimensionError("deformable_attention: expected " + std::to_string(p.maps) +
                         " value maps and reference sets");
  }
  for (std::size_t m = 0; m < p.maps; ++m) {
    if (value_maps[m].rank() != 3 || value_maps[m].dim(2) != p.channels) {
      throw DimensionError("deformable_attention: value map " + shape_str(value_maps[m].shape()));
    }
    if (refs[m].size() != query.dim(0)) {
      throw DimensionError("deformable_attention: " + std::to_string(refs[m].size()) +
                           " reference points for " + std::to_string(query.dim(0)) + " queries");
    }
  }
}

// Forward state of one deformable attention evaluation.
struct DeformableForward {
  Tensor query_proj;  // [Nq x C]
  Tensor offsets;     // [Nq x H*L*2]
  Tensor attn_bias;   // [Nq x H*L]
  Tensor weights;     // [Nq x H*L] softmax output
  Tensor keys;        // [Nq x H*L x Dh]
  Tensor vals;        // [Nq x H*L x Dh]
  Tensor mixed;       // [Nq x C] concatenated heads
  Tensor out;         // [Nq x C]
  std::vector<Tensor> key_maps, value_maps;
};

inline GridPoint sample_location(const DeformableForward& f, std::span<const std::vector<GridPoint>> refs,
                                 const DeformableAttnParams& p, std::size_t n, std::size_t h,
                                 std::size_t loc) {
  const std::size_t m = loc / p.points;
  const std::size_t idx = (h * p.locations() + loc) * 2;
  return {refs[m][n].u + f.offsets(n, idx), refs[m][n].v + f.offsets(n, idx + 1)};
}

inline DeformableForward deformable_forward(const Tensor& query, std::span<const Tensor> value_maps,
                                            std::span<const std::vector<GridPoint>> refs,
                                            const DeformableAttnParams& p) {
  check_deformable_inputs(query, value_maps, refs, p);
  const std::size_t nq = query.dim(0), c = p.channels, hd = p.head_dim(), nl = p.locations();
  DeformableForward f;
  for (std::size_t m = 0; m < p.maps; ++m) {
    f.key_maps.push_back(project_map(value_maps[m], p.key_w, p.key_b));
    f.value_maps.push_back(project_map(value_maps[m], p.value_w, p.value_b));
  }
  f.query_proj = linear_forward(query, p.query_w, p.query_b);
  f.offsets = linear_forward(f.query_proj, p.offset_w, p.offset_b);
  f.attn_bias = linear_forward(f.query_proj, p.attn_w, p.attn_b);
  f.weights = Tensor({nq, p.heads * nl});
  f.keys = Tensor({nq, p.heads * nl, hd});
  f.vals = Tensor({nq, p.heads * nl, hd});
  f.mixed = Tensor({nq, c});
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));

  parallel_for(nq, [&](std::size_t n) {
    Tensor logits({1, nl});
    for (std::size_t h = 0; h < p.heads; ++h) {
      const std::size_t ch0 = h * hd;
      for (std::size_t l = 0; l < nl; ++l) {
        const std::size_t m = l / p.points;
        const Tensor& km = f.key_maps[m];
        const Tensor& vm = f.value_maps[m];
        const BilinearTaps taps =
            bilinear_taps(km.dim(0), km.dim(1), sample_location(f, refs, p, n, h, l));
        const std::size_t s = h * nl + l;
        double* kd = &f.keys(n, s, 0);
        double* vd = &f.vals(n, s, 0);
        if (taps.inside) {
          for (int t = 0; t < 4; ++t) {
            const double w = taps.weight[t];
            const double* ks = km.data().data() + taps.cell[t] * c + ch0;
            const double* vs = vm.data().data() + taps.cell[t] * c + ch0;
            for (std::size_t d = 0; d < hd; ++d) {
              kd[d] += w * ks[d];
              vd[d] += w * vs[d];
            }
          }
        }
        double qk = 0.0;
        for (std::size_t d = 0; d < hd; ++d) qk += f.query_proj(n, ch0 + d) * kd[d];
        logits[l] = qk + f.attn_bias(n, s);
      }
      const Tensor w = scaled_softmax_rows(logits, scale);
      for (std::size_t l = 0; l < nl; ++l) {
        const std::size_t s = h * nl + l;
        f.weights(n, s) = w[l];
        for (std::size_t d = 0; d < hd; ++d) f.mixed(n, ch0 + d) += w[l] * f.vals(n, s, d);
      }
    }
  });
  f.out = linear_forward(f.mixed, p.out_w, p.out_b);
  return f;
}

}  // namespace detail

// query: [Nq x C]; value_maps[m]: [Hm x Wm x C]; ref_points[m][n] in cells of map m.
inline Tensor deformable_attention(const Tensor& query, std::span<const Tensor> value_maps,
                                   std::span<const std::vector<GridPoint>> ref_points,
                                   const DeformableAttnParams& params,
                                   AttentionAudit* audit = nullptr) {
  auto f = detail::deformable_forward(query, value_maps, ref_points, params);
  if (audit) {
    const std::size_t nl = params.locations();
    for (std::size_t n = 0; n < query.dim(0); ++n)
      for (std::size_t h = 0; h < params.heads; ++h)
        audit->record(f.weights.row(n).subspan(h * nl, nl));
  }
  return std::move(f.out);
}

// Single value map convenience overload.
inline Tensor deformable_attention(const Tensor& query, const Tensor& value_map,
                                   const std::vector<GridPoint>& ref_points,
                                   const DeformableAttnParams& params,
                                   AttentionAudit* audit = nullptr) {
  return deformable_attention(query, std::span<const Tensor>(&value_map, 1),
                              std::span<const std::vector<GridPoint>>(&ref_points, 1), params, audit);
}

// Softmax weights of every (query, head) row, [Nq x heads*locations].
inline Tensor deformable_attention_weights(const Tensor& query, std::span<const Tensor> value_maps,
                                           std::span<const std::vector<GridPoint>> ref_points,
                                           const DeformableAttnParams& params) {
  return detail::deformable_forward(query, value_maps, ref_points, params).weights;
}

struct DeformableAttnGrads {
  Tensor query;
  std::vector<Tensor> value_maps;
  DeformableAttnParams params;  // gradient for each weight tensor
};

inline DeformableAttnGrads deformable_attention_backward(const Tensor& query,
                                                         std::span<const Tensor> value_maps,
                                                         std::span<const std::vector<GridPoint>> refs,
                                                         const DeformableAttnParams& p,
                                                         const Tensor& upstream) {
  const auto f = detail::deformable_forward(query, value_maps, refs, p);
  const std::size_t nq = query.dim(0), c = p.channels, hd = p.head_dim(), nl = p.locations();
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));

  DeformableAttnGrads g;
  g.params = DeformableAttnParams::zeros(c, p.heads, p.points, p.maps);

  auto out_g = linear_backward(f.mixed, p.out_w, upstream);
  g.params.out_w = std::move(out_g.weights);
  g.params.out_b = std::move(out_g.bias);
  const Tensor& d_mixed = out_g.x;

  Tensor d_qproj({nq, c});
  Tensor d_offsets(f.offsets.shape());
  Tensor d_bias(f.attn_bias.shape());
  std::vector<Tensor> d_kmaps, d_vmaps;
  for (std::size_t m = 0; m < p.maps; ++m) {
    d_kmaps.emplace_back(f.key_maps[m].shape());
    d_vmaps.emplace_back(f.value_maps[m].shape());
  }

  for (std::size_t n = 0; n < nq; ++n) {
    for (std::size_t h = 0; h < p.heads; ++h) {
      const std::size_t ch0 = h * hd;
      std::vector<double> dw(nl);
      double wdw = 0.0;
      for (std::size_t l = 0; l < nl; ++l) {
        const std::size_t s = h * nl + l;
        double acc = 0.0;
        for (std::size_t d = 0; d < hd; ++d) acc += d_mixed(n, ch0 + d) * f.vals(n, s, d);
        dw[l] = acc;
        wdw += f.weights(n, s) * acc;
      }
      for (std::size_t l = 0; l < nl; ++l) {
        const std::size_t s = h * nl + l;
        const double w = f.weights(n, s);
        const double dlogit = scale * w * (dw[l] - wdw);
        d_bias(n, s) = dlogit;
        std::vector<double> dk(hd), dv(hd);
        for (std::size_t d = 0; d < hd; ++d) {
          d_qproj(n, ch0 + d) += dlogit * f.keys(n, s, d);
          dk[d] = dlogit * f.query_proj(n, ch0 + d);
          dv[d] = w * d_mixed(n, ch0 + d);
        }
        const std::size_t m = l / p.points;
        const Tensor& km = f.key_maps[m];
        const Tensor& vm = f.value_maps[m];
        const BilinearTaps taps =
            bilinear_taps(km.dim(0), km.dim(1), detail::sample_location(f, refs, p, n, h, l));
        if (!taps.inside) continue;
        double du = 0.0, dvv = 0.0;
        for (int t = 0; t < 4; ++t) {
          const std::size_t off = taps.cell[t] * c + ch0;
          double proj = 0.0;
          for (std::size_t d = 0; d < hd; ++d) {
            d_kmaps[m][off + d] += taps.weight[t] * dk[d];
            d_vmaps[m][off + d] += taps.weight[t] * dv[d];
            proj += km[off + d] * dk[d] + vm[off + d] * dv[d];
          }
          du += taps.dweight_du[t] * proj;
          dvv += taps.dweight_dv[t] * proj;
        }
        const std::size_t idx = (h * nl + l) * 2;
        d_offsets(n, idx) = du;
        d_offsets(n, idx + 1) = dvv;
      }
    }
  }

  auto off_g = linear_backward(f.query_proj, p.offset_w, d_offsets);
  auto att_g = linear_backward(f.query_proj, p.attn_w, d_bias);
  g.params.offset_w = std::move(off_g.weights);
  g.params.offset_b = std::move(off_g.bias);
  g.params.attn_w = std::move(att_g.weights);
  g.params.attn_b = std::move(att_g.bias);
  d_qproj += off_g.x;
  d_qproj += att_g.x;

  auto q_g = linear_backward(query, p.query_w, d_qproj);
  g.query = std::move(q_g.x);
  g.params.query_w = std::move(q_g.weights);
  g.params.query_b = std::move(q_g.bias);

  for (std::size_t m = 0; m < p.maps; ++m) {
    const Tensor& map = value_maps[m];
    const std::size_t cells = map.dim(0) * map.dim(1);
    const Tensor flat = map.reshaped({cells, c});
    auto kg = linear_backward(flat, p.key_w, d_kmaps[m].reshaped({cells, c}));
    auto vg = linear_backward(flat, p.value_w, d_vmaps[m].reshaped({cells, c}));
    g.params.key_w += kg.weights;
    g.params.key_b += kg.bias;
    g.params.value_w += vg.weights;
    g.params.value_b += vg.bias;
    g.value_maps.push_back((kg.x + vg.x).reshaped(map.shape()));
  }
  return g;
}

inline DeformableAttnGrads deformable_attention_backward(const Tensor& query, const Tensor& value_map,
                                                         const std::vector<GridPoint>& refs,
                                                         const DeformableAttnParams& p,
                                                         const Tensor& upstream) {
  return deformable_attention_backward(query, std::span<const Tensor>(&value_map, 1),
                                       std::span<const std::vector<GridPoint>>(&refs, 1), p, upstream);
}

// ---------------------------------------------------------------------------
// Dense multi-head attention over a small key set (track queries, detection
// queries). Keys and values are projections of the same source rows.

struct MultiHeadAttnParams {
  std::size_t channels = 0;
  std::size_t heads = 1;
  Tensor query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b;

  static MultiHeadAttnParams seeded(std::size_t c, std::size_t heads, RngSeed seed) {
    if (c % heads != 0) throw std::invalid_argument("channels must be a multiple of heads");
    const double a = 1.0 / std::sqrt(static_cast<double>(c));
    MultiHeadAttnParams p;
    p.channels = c;
    p.heads = heads;
    p.query_w = seeded_init({c, c}, derive(seed, 1), Init::uniform(a));
    p.key_w = seeded_init({c, c}, derive(seed, 2), Init::uniform(a));
    p.value_w = seeded_init({c, c}, derive(seed, 3), Init::uniform(a));
    p.out_w = seeded_init({c, c}, derive(seed, 4), Init::uniform(a));
    p.query_b = p.key_b = p.value_b = p.out_b = Tensor({c});
    return p;
  }
};

// Returns [Nq x C]; with no source rows the output is the projected zero context.
inline Tensor multi_head_attention(const Tensor& query, const Tensor& source,
                                   const MultiHeadAttnParams& p, AttentionAudit* audit = nullptr) {
  const std::size_t nq = query.dim(0), c = p.channels, hd = c / p.heads;
  Tensor mixed({nq, c});
  if (source.dim(0) > 0) {
    const Tensor q = linear_forward(query, p.query_w, p.query_b);
    const Tensor k = linear_forward(source, p.key_w, p.key_b);
    const Tensor v = linear_forward(source, p.value_w, p.value_b);
    const std::size_t nk = source.dim(0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    for (std::size_t h = 0; h < p.heads; ++h) {
      Tensor logits({nq, nk});
      for (std::size_t i = 0; i < nq; ++i)
        for (std::size_t j = 0; j < nk; ++j)
          logits(i, j) = dot(q.row(i).subspan(h * hd, hd), k.row(j).subspan(h * hd, hd));
      const Tensor w = scaled_softmax_rows(logits, scale);
      for (std::size_t i = 0; i < nq; ++i) {
        if (audit) audit->record(w.row(i));
        for (std::size_t j = 0; j < nk; ++j)
          for (std::size_t d = 0; d < hd; ++d) mixed(i, h * hd + d) += w(i, j) * v(j, h * hd + d);
      }
    }
  }
  return linear_forward(mixed, p.out_w, p.out_b);
}

// ---------------------------------------------------------------------------
// Per-row two-layer perceptron with ReLU.

struct Mlp {
  Tensor w1, b1, w2, b2;

  static Mlp seeded(std::size_t in, std::size_t hidden, std::size_t out, RngSeed seed,
                    double gain = 1.0) {
    Mlp m;
    m.w1 = seeded_init({in, hidden}, derive(seed, 1),
                       Init::uniform(gain / std::sqrt(static_cast<double>(in))));
    m.b1 = Tensor({hidden});
    m.w2 = seeded_init({hidden, out}, derive(seed, 2),
                       Init::uniform(gain / std::sqrt(static_cast<double>(hidden))));
    m.b2 = Tensor({out});
    return m;
  }
  static Mlp zeros(std::size_t in, std::size_t hidden, std::size_t out) {
    return {Tensor({in, hidden}), Tensor({hidden}), Tensor({hidden, out}), Tensor({out})};
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h = linear_forward(x, w1, b1);
    relu_inplace(h);
    return linear_forward(h, w2, b2);
  }
};

}  // namespace coop
