#include <limits>
#include <numeric>

#include "xltal/model.hpp"

namespace xltal {

namespace {

AdditiveMask prepend_column(const AdditiveMask& mask, bool visible) {
  AdditiveMask out(mask.rows(), mask.cols() + 1);
  out.col(0).setConstant(visible ? 0.0 : -std::numeric_limits<double>::infinity());
  out.rightCols(mask.cols()) = mask;
  return out;
}

Array conv(const Parameters& p, const ConvParams& cp, const Array& x, Index stride) {
  return add_row(temporal_conv1d(x, p[cp.kernel], stride), p[cp.bias]);
}

Array run_head(const Parameters& p, const HeadParams& head, const Array& x) {
  Array h = x;
  for (const auto& hidden : head.hidden) h = gelu(conv(p, hidden, h, 1));
  return conv(p, head.out, h, 1);
}

}  // namespace

Array project_input(const Model& model, const Array& features) {
  const auto& c = model.config();
  if (features.rows() != c.input_len) {
    throw ShapeError("project_input: sequence has " + std::to_string(features.rows()) +
                     " steps, model expects " + std::to_string(c.input_len));
  }
  if (features.cols() != c.input_dim) {
    throw ShapeError("project_input: sequence has " + std::to_string(features.cols()) +
                     " channels, model expects " + std::to_string(c.input_dim));
  }
  const auto& p = model.parameters();
  const auto& lp = model.layout().input_proj;
  return add_row(matmul(features, p[lp.weight]), p[lp.bias]);
}

Array encode_masked(const Model& model, std::span<const TransformerLayerParams> layers,
                    const Array& x, const AdditiveMask& mask, AttentionCounter* counter) {
  const auto& c = model.config();
  Array h = x;
  for (const auto& layer : layers) {
    h = transformer_layer(model.parameters(), layer, h, nullptr, mask, AttentionGeometry{},
                          c.num_heads, c.segment_len, counter);
  }
  return h;
}

Array recurrent_encode(const Model& model, const Array& x, const ForwardOptions& options,
                       RecurrenceTrace* trace) {
  const auto& c = model.config();
  const auto& p = model.parameters();
  const auto& layers = model.layout().level0;
  const auto& qs = model.layout().query_stream;
  const Index seg = c.segment_len;
  if (c.encoder_mode != EncoderMode::kRecurrence) {
    throw std::invalid_argument("recurrent_encode: model was not built in recurrence mode");
  }
  const std::vector<Array> segments = segment_split(x, seg);
  const std::size_t depth = layers.size();

  std::vector<Array> cache(depth);
  std::vector<Array> outputs;
  std::vector<std::vector<Array>> content_trace(depth), query_trace(depth);

  for (std::size_t k = 0; k < segments.size(); ++k) {
    std::vector<Index> order;
    if (options.training && options.rng) {
      order = options.rng->permutation(seg);
    } else {
      order.resize(static_cast<std::size_t>(seg));
      std::iota(order.begin(), order.end(), Index{0});
    }
    const Index memory_len = k == 0 ? 0 : seg;
    const PermutationMasks masks = build_permutation_masks(order, memory_len);
    AdditiveMask content_mask = masks.content_mask;
    AdditiveMask query_mask = masks.query_mask;
    const QueryStreamParams* null_kv = nullptr;
    if (memory_len == 0) {
      // Only the query rows can see the null column; the first position in
      // the order would otherwise have nothing to attend to.
      content_mask = prepend_column(content_mask, false);
      query_mask = prepend_column(query_mask, true);
      null_kv = &qs;
    }
    AttentionGeometry geo;
    geo.query_start = static_cast<Index>(k) * seg;
    geo.key_start = geo.query_start - memory_len;

    Array h = segments[k];
    Array g = broadcast_rows(p[qs.query_seed], seg);
    std::vector<Array> next_cache(depth);
    for (std::size_t l = 0; l < depth; ++l) {
      next_cache[l] = stop_gradient(h);
      const Array* memory = memory_len > 0 ? &cache[l] : nullptr;
      TwoStreamOutput out = two_stream_layer(p, layers[l], h, g, memory, content_mask, query_mask,
                                             geo, c.num_heads, c.segment_len, null_kv,
                                             options.counter);
      h = std::move(out.content);
      g = std::move(out.query);
      if (trace) {
        content_trace[l].push_back(h);
        query_trace[l].push_back(g);
      }
    }
    if (options.memory && k + 1 < segments.size()) {
      auto& caches = options.memory->caches;
      if (options.memory->replay) {
        if (caches.size() <= k) throw std::invalid_argument("recurrent_encode: no cache to replay");
        for (std::size_t l = 0; l < depth; ++l) next_cache[l] = Array(caches[k][l]);
      } else {
        caches.resize(k + 1);
        caches[k].clear();
        for (const auto& c_l : next_cache) caches[k].push_back(c_l.value());
      }
    }
    cache = std::move(next_cache);
    outputs.push_back(g);
    if (trace) {
      trace->memory_len.push_back(memory_len);
      trace->orders.push_back(order);
    }
  }
  if (trace) {
    trace->content.clear();
    trace->query.clear();
    for (std::size_t l = 0; l < depth; ++l) {
      trace->content.push_back(concat_rows(content_trace[l]));
      trace->query.push_back(concat_rows(query_trace[l]));
    }
  }
  return concat_rows(outputs);
}

Array encode_level0(const Model& model, const Array& x, const ForwardOptions& options) {
  const auto& c = model.config();
  const auto& layers = model.layout().level0;
  switch (c.encoder_mode) {
    case EncoderMode::kBase:
      return encode_masked(model, layers, x, window_mask(x.rows(), c.attention_window),
                           options.counter);
    case EncoderMode::kSplit: {
      std::vector<Array> parts;
      for (const Array& s : segment_split(x, c.segment_len)) {
        parts.push_back(encode_masked(model, layers, s, full_mask(s.rows(), s.rows()), options.counter));
      }
      return concat_rows(parts);
    }
    case EncoderMode::kRecurrence:
      return recurrent_encode(model, x, options);
  }
  throw std::logic_error("unreachable encoder mode");
}

PyramidFeatures build_pyramid(const Model& model, const Array& level0, AttentionCounter* counter) {
  const auto& c = model.config();
  const auto& p = model.parameters();
  if (level0.rows() != c.input_len) {
    throw ShapeError("build_pyramid: level 0 has " + std::to_string(level0.rows()) +
                     " steps, expected " + std::to_string(c.input_len));
  }
  PyramidFeatures pyr;
  pyr.levels.push_back(level0);
  for (Index l = 1; l < c.fpn_levels; ++l) {
    const Array& prev = pyr.levels.back();
    if (prev.rows() % 2 != 0) throw ShapeError("build_pyramid: level length is not even");
    const Array down = conv(p, model.layout().downsample[l - 1], prev, 2);
    AttentionGeometry geo;
    geo.level = l;
    pyr.levels.push_back(transformer_layer(p, model.layout().level_layers[l - 1], down, nullptr,
                                           window_mask(down.rows(), c.attention_window), geo,
                                           c.num_heads, c.segment_len, counter));
  }
  return pyr;
}

RawPredictions forward(const Model& model, const Mat& features, const ForwardOptions& options) {
  const auto& p = model.parameters();
  const auto& layout = model.layout();
  const Array x = project_input(model, Array(features));
  const PyramidFeatures pyr = build_pyramid(model, encode_level0(model, x, options), options.counter);
  RawPredictions raw;
  for (const Array& level : pyr.levels) {
    raw.logits.push_back(run_head(p, layout.cls_head, level));
    raw.offsets.push_back(softplus(run_head(p, layout.reg_head, level)));
  }
  return raw;
}

RawPredictions forward(const Model& model, const FeatureSequence& seq, const ForwardOptions& options) {
  return forward(model, seq.features, options);
}

}  // namespace xltal
