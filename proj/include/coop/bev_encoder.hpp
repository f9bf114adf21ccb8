#pragma once

// Multi-view images -> BEV feature map for one agent.
//
// A shared convolutional backbone turns every camera image into a feature
// map; a stack of spatial cross-attention rounds then refines a learnable
// H*W x C query grid by letting each cell attend, through deformable
// attention, to the image features around the projection of its pillar.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "coop/attention.hpp"
#include "coop/geometry.hpp"
#include "coop/ops.hpp"
#include "coop/tensor.hpp"

namespace coop {

struct MultiViewImages {
  std::vector<Tensor> views;  // each [h x w x 3], values in [0, 1]
  int timestamp = 0;
};

struct MultiViewFeatures {
  std::vector<Tensor> maps;  // each [h/stride x w/stride x C]
  std::size_t stride = 1;
};

// 3x3 convolution, zero padding 1.
struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 2;
  Tensor weights;  // [out x in*9], tap order (in, ky, kx)
  Tensor bias;     // [out]
};

inline Tensor conv3x3_relu(const Tensor& x, const ConvLayer& layer) {
  if (x.rank() != 3 || x.dim(2) != layer.in_channels) {
    throw DimensionError("conv3x3: input " + shape_str(x.shape()) + " vs " +
                         std::to_string(layer.in_channels) + " channels");
  }
  const std::size_t h = x.dim(0), w = x.dim(1), s = layer.stride;
  const std::size_t ho = (h + s - 1) / s, wo = (w + s - 1) / s;
  const std::size_t ci = layer.in_channels, co = layer.out_channels;
  Tensor out({ho, wo, co});
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t xo = 0; xo < wo; ++xo) {
      double* dst = &out(y, xo, 0);
      for (std::size_t o = 0; o < co; ++o) dst[o] = layer.bias[o];
      for (int ky = 0; ky < 3; ++ky) {
        const long iy = static_cast<long>(y * s) + ky - 1;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const long ix = static_cast<long>(xo * s) + kx - 1;
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const double* src = x.data().data() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * ci;
          for (std::size_t o = 0; o < co; ++o) {
            const double* wr = layer.weights.data().data() + o * ci * 9;
            double acc = 0.0;
            for (std::size_t i = 0; i < ci; ++i) acc += wr[(i * 3 + ky) * 3 + kx] * src[i];
            dst[o] += acc;
          }
        }
      }
      for (std::size_t o = 0; o < co; ++o) dst[o] = dst[o] > 0.0 ? dst[o] : 0.0;
    }
  }
  return out;
}

struct BackboneWeights {
  std::vector<ConvLayer> layers;

  std::size_t stride() const {
    std::size_t s = 1;
    for (const auto& l : layers) s *= l.stride;
    return s;
  }
  std::size_t out_channels() const { return layers.empty() ? 3 : layers.back().out_channels; }

  // Channel widths 3 -> ... -> widths.back(), stride 2 per layer.
  static BackboneWeights seeded(const std::vector<std::size_t>& widths, RngSeed seed) {
    BackboneWeights b;
    std::size_t in = 3;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      ConvLayer l{in, widths[k], 2, {}, Tensor({widths[k]})};
      const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
      l.weights = seeded_init({widths[k], in * 9}, derive(seed, k), Init::uniform(bound));
      b.layers.push_back(std::move(l));
      in = widths[k];
    }
    return b;
  }
};

inline MultiViewFeatures backbone_extract(const MultiViewImages& images, const BackboneWeights& weights,
                                          std::size_t stride, std::size_t expected_views = 6) {
  if (images.views.size() != expected_views) {
    throw std::invalid_argument("backbone_extract: got " + std::to_string(images.views.size()) +
                                " views, expected " + std::to_string(expected_views));
  }
  if (stride != weights.stride()) {
    throw std::invalid_argument("backbone_extract: stride " + std::to_string(stride) +
                                " does not match backbone stride " + std::to_string(weights.stride()));
  }
  MultiViewFeatures out{{}, stride};
  for (const Tensor& img : images.views) {
    if (img.rank() != 3 || img.dim(2) != 3 || img.shape() != images.views.front().shape()) {
      throw DimensionError("backbone_extract: view shape " + shape_str(img.shape()));
    }
    if (img.dim(0) % stride != 0 || img.dim(1) % stride != 0) {
      throw DimensionError("backbone_extract: image " + shape_str(img.shape()) +
                           " not divisible by stride " + std::to_string(stride));
    }
    Tensor x = img;
    for (const auto& layer : weights.layers) x = conv3x3_relu(x, layer);
    out.maps.push_back(std::move(x));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pillar visibility: for every view, which BEV cells project into the image
// and where (in feature-map coordinates) their reference point lies.

struct ViewVisibility {
  std::vector<std::size_t> cells;  // flat cell indices, ascending
  std::vector<GridPoint> refs;     // feature-map coordinates, same order
};

inline std::vector<ViewVisibility> compute_visibility(const BEVGrid& grid, const CameraRig& rig,
                                                      std::span<const double> pillar_heights,
                                                      std::size_t stride) {
  std::vector<ViewVisibility> out(rig.views.size());
  const double s = static_cast<double>(stride);
  for (std::size_t v = 0; v < rig.views.size(); ++v) {
    const double fh = static_cast<double>(rig.views[v].image_height) / s;
    const double fw = static_cast<double>(rig.views[v].image_width) / s;
    for (std::size_t i = 0; i < grid.height; ++i) {
      for (std::size_t j = 0; j < grid.width; ++j) {
        double su = 0.0, sv = 0.0;
        int hits = 0;
        for (const auto& p : project_pillar(grid, i, j, pillar_heights, rig, v)) {
          if (!p.visible) continue;
          su += p.v / s - 0.5;
          sv += p.u / s - 0.5;
          ++hits;
        }
        if (hits == 0) continue;
        out[v].cells.push_back(i * grid.width + j);
        out[v].refs.push_back({std::clamp(su / hits, 0.0, fh - 1.0), std::clamp(sv / hits, 0.0, fw - 1.0)});
      }
    }
  }
  return out;
}

// One encoder round: cross-attention into the views, then a per-cell MLP.
// Each cell attends separately into every view that sees it; the updates
// are averaged in view order and added to the query. Cells no camera sees
// keep their query unchanged.
inline Tensor spatial_cross_attention(const Tensor& bev_query, const MultiViewFeatures& feats,
                                      const std::vector<ViewVisibility>& visibility,
                                      const DeformableAttnParams& params, AttentionAudit* audit = nullptr) {
  const std::size_t c = bev_query.dim(1);
  if (visibility.size() != feats.maps.size()) {
    throw DimensionError("spatial_cross_attention: visibility for " + std::to_string(visibility.size()) +
                         " views, features for " + std::to_string(feats.maps.size()));
  }
  Tensor acc(bev_query.shape());
  std::vector<int> count(bev_query.dim(0), 0);
  for (std::size_t v = 0; v < feats.maps.size(); ++v) {
    const auto& vis = visibility[v];
    if (vis.cells.empty()) continue;
    Tensor q({vis.cells.size(), c});
    for (std::size_t k = 0; k < vis.cells.size(); ++k) {
      const auto src = bev_query.row(vis.cells[k]);
      std::copy(src.begin(), src.end(), q.row(k).begin());
    }
    const Tensor upd = deformable_attention(q, feats.maps[v], vis.refs, params, audit);
    for (std::size_t k = 0; k < vis.cells.size(); ++k) {
      auto dst = acc.row(vis.cells[k]);
      const auto u = upd.row(k);
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += u[ch];
      ++count[vis.cells[k]];
    }
  }
  Tensor out = bev_query;
  for (std::size_t n = 0; n < out.dim(0); ++n) {
    if (count[n] == 0) continue;
    auto dst = out.row(n);
    const auto a = acc.row(n);
    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += a[ch] / count[n];
  }
  return out;
}

inline Tensor spatial_cross_attention(const Tensor& bev_query, const MultiViewFeatures& feats,
                                      const CameraRig& rig, const BEVGrid& grid,
                                      std::span<const double> pillar_heights,
                                      const DeformableAttnParams& params, AttentionAudit* audit = nullptr) {
  return spatial_cross_attention(bev_query, feats, compute_visibility(grid, rig, pillar_heights, feats.stride),
                                 params, audit);
}

struct EncoderLayer {
  DeformableAttnParams attention;
  Mlp mlp;
};

struct EncoderWeights {
  BackboneWeights backbone;
  Tensor bev_query;  // [H*W x C], the learnable initial query
  std::vector<EncoderLayer> layers;
};

struct EncoderConfig {
  std::size_t channels = 32;
  std::size_t heads = 2;
  std::size_t sample_points = 4;
  std::size_t layers = 6;
  bool share_layer_weights = false;
  std::vector<double> pillar_heights{-1.0, 0.0, 1.0, 2.0};
  std::size_t views = 6;
};

inline EncoderWeights make_encoder_weights(const EncoderConfig& cfg, const BEVGrid& grid, RngSeed seed) {
  if (cfg.layers < 1) throw std::invalid_argument("encoder needs at least one layer");
  EncoderWeights w;
  const std::size_t c = cfg.channels;
  w.backbone = BackboneWeights::seeded({std::max<std::size_t>(c / 4, 1), std::max<std::size_t>(c / 2, 1), c},
                                       derive(seed, 1));
  w.bev_query = seeded_init({grid.cells(), c}, derive(seed, 2), Init::uniform(0.5));
  for (std::size_t k = 0; k < cfg.layers; ++k) {
    const RngSeed ls = derive(seed, cfg.share_layer_weights ? 100 : 100 + k);
    w.layers.push_back({DeformableAttnParams::seeded(c, cfg.heads, cfg.sample_points, 1, derive(ls, 1)),
                        Mlp::seeded(c, 2 * c, c, derive(ls, 2), 0.5)});
  }
  return w;
}

inline BEVFeature encode_bev(const MultiViewImages& images, const CameraRig& rig, const BEVGrid& grid,
                             const EncoderWeights& weights, const EncoderConfig& cfg,
                             AttentionAudit* audit = nullptr, int agent_id = 0) {
  grid.validate();
  rig.validate(cfg.views);
  if (weights.layers.empty()) throw std::invalid_argument("encode_bev: no encoder layers");
  if (weights.bev_query.dim(0) != grid.cells()) {
    throw DimensionError("encode_bev: query grid has " + std::to_string(weights.bev_query.dim(0)) +
                         " cells, BEV grid has " + std::to_string(grid.cells()));
  }
  const MultiViewFeatures feats = backbone_extract(images, weights.backbone, weights.backbone.stride(), cfg.views);
  const auto visibility = compute_visibility(grid, rig, cfg.pillar_heights, feats.stride);
  Tensor q = weights.bev_query;
  for (const auto& layer : weights.layers) {
    q = spatial_cross_attention(q, feats, visibility, layer.attention, audit);
    q += layer.mlp(q);
  }
  return {grid, q.reshaped({grid.height, grid.width, q.dim(1)}), agent_id, images.timestamp};
}

}  // namespace coop
