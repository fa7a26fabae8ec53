#include <cmath>
#include <limits>

#include "xltal/model.hpp"

namespace xltal {

namespace {

Array linear(const Parameters& p, const LinearParams& lp, const Array& x) {
  return add_row(matmul(x, p[lp.weight]), p[lp.bias]);
}

Array norm(const Parameters& p, const NormParams& np, const Array& x) {
  return layer_norm(x, p[np.gain], p[np.bias]);
}

Array mlp(const Parameters& p, const TransformerLayerParams& layer, const Array& x) {
  return linear(p, layer.mlp_out, gelu(linear(p, layer.mlp_in, norm(p, layer.mlp_norm, x))));
}

}  // namespace

Array attend(const Parameters& params, const AttentionParams& attn, const Array& queries,
             const Array& keys, const AdditiveMask& mask, const AttentionGeometry& geo,
             Index num_heads, Index clip, const QueryStreamParams* null_kv,
             AttentionCounter* counter) {
  const Index n = queries.rows();
  const Index s = keys.rows();
  const Index d = queries.cols();
  const Index extra = null_kv ? 1 : 0;
  if (d % num_heads != 0) throw ShapeError("attention: width not divisible by head count");
  if (mask.rows() != n || mask.cols() != s + extra) {
    throw ShapeError("attention: mask is " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + ", expected " + std::to_string(n) + "x" +
                     std::to_string(s + extra));
  }
  const Index dh = d / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Index span = 2 * clip + 1;

  const Array q = linear(params, attn.query, queries);
  const Array k = linear(params, attn.key, keys);
  const Array v = linear(params, attn.value, keys);
  const Array& table = params[attn.rel_bias];
  if (table.rows() != num_heads || table.cols() != span) {
    throw ShapeError("attention: relative bias table does not match heads/clip");
  }

  IndexMat rel(n, s);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < s; ++j) {
      const Index delta = (geo.key_start + j) - (geo.query_start + i);
      rel(i, j) = std::clamp(delta, -clip, clip) + clip;
    }
  }

  std::vector<Array> heads;
  heads.reserve(static_cast<std::size_t>(num_heads));
  for (Index h = 0; h < num_heads; ++h) {
    const Array qh = slice_cols(q, h * dh, dh);
    Array kh = slice_cols(k, h * dh, dh);
    Array vh = slice_cols(v, h * dh, dh);
    const IndexMat idx = (rel.array() + h * span).matrix();
    Array scores = add(scale(matmul_nt(qh, kh), inv_sqrt), gather(table, idx));
    if (null_kv) {
      const Array nk = slice_cols(params[null_kv->null_key], h * dh, dh);
      const Array nv = slice_cols(params[null_kv->null_value], h * dh, dh);
      scores = concat_cols({scale(matmul_nt(qh, nk), inv_sqrt), scores});
      vh = concat_rows({nv, vh});
    }
    heads.push_back(matmul(masked_softmax(scores, mask), vh));
  }
  if (counter) counter->record(geo.level, geo.stream, n * (s + extra));
  return linear(params, attn.output, num_heads == 1 ? heads.front() : concat_cols(heads));
}

Array self_attention(const Parameters& params, const AttentionParams& attn, const Array& x,
                     const Array* memory, const AdditiveMask& mask, const AttentionGeometry& geo,
                     Index num_heads, Index clip, AttentionCounter* counter) {
  const Array keys = memory ? concat_rows({*memory, x}) : x;
  return attend(params, attn, x, keys, mask, geo, num_heads, clip, nullptr, counter);
}

Array transformer_layer(const Parameters& params, const TransformerLayerParams& layer,
                        const Array& x, const Array* memory, const AdditiveMask& mask,
                        const AttentionGeometry& geo, Index num_heads, Index clip,
                        AttentionCounter* counter) {
  const Array xn = norm(params, layer.attn_norm, x);
  const Array keys = memory ? concat_rows({norm(params, layer.attn_norm, *memory), xn}) : xn;
  const Array h = add(x, attend(params, layer.attn, xn, keys, mask, geo, num_heads, clip, nullptr,
                                counter));
  return add(h, mlp(params, layer, h));
}

TwoStreamOutput two_stream_layer(const Parameters& params, const TransformerLayerParams& layer,
                                 const Array& content, const Array& query, const Array* memory,
                                 const AdditiveMask& content_mask, const AdditiveMask& query_mask,
                                 const AttentionGeometry& geo, Index num_heads, Index clip,
                                 const QueryStreamParams* null_kv, AttentionCounter* counter) {
  const Array hn = norm(params, layer.attn_norm, content);
  const Array keys = memory ? concat_rows({norm(params, layer.attn_norm, *memory), hn}) : hn;
  const Array gn = norm(params, layer.attn_norm, query);

  AttentionGeometry cgeo = geo;
  cgeo.stream = Stream::kContent;
  AttentionGeometry qgeo = geo;
  qgeo.stream = Stream::kQuery;

  const Array h = add(content, attend(params, layer.attn, hn, keys, content_mask, cgeo, num_heads,
                                      clip, null_kv, counter));
  const Array g = add(query, attend(params, layer.attn, gn, keys, query_mask, qgeo, num_heads, clip,
                                    null_kv, counter));
  return {add(h, mlp(params, layer, h)), add(g, mlp(params, layer, g))};
}

}  // namespace xltal
