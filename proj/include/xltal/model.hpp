#pragma once

#include <span>
#include <string>
#include <vector>

#include "xltal/data.hpp"
#include "xltal/numerics.hpp"

namespace xltal {

enum class EncoderMode { kBase, kSplit, kRecurrence };

std::string to_string(EncoderMode mode);
EncoderMode encoder_mode_from_string(const std::string& name);

struct ModelConfig {
  Index input_len = 1024;
  Index input_dim = 16;
  Index embed_dim = 256;
  Index num_heads = 4;
  Index fpn_levels = 8;
  EncoderMode encoder_mode = EncoderMode::kBase;
  /// Segment length for split/recurrence; also the relative-position clip.
  Index segment_len = 256;
  /// Transformer (or two-stream) layers at pyramid level 0.
  Index encoder_layers = 2;
  Index head_layers = 3;
  Index mlp_ratio = 2;
  int num_classes = 1;
  /// Local attention window (odd) for level 0 in base mode and for every
  /// deeper level; 0 means unrestricted.
  Index attention_window = 19;
  double prior_prob = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
  Index level_length(Index level) const { return input_len >> level; }
};

// ---- parameters -----------------------------------------------------------

struct ParamRef {
  std::size_t index = 0;
};

/// Named trainable arrays. Layers hold ParamRefs into a store, so an
/// optimizer can swap in updated values without touching the layer graph.
class Parameters {
 public:
  ParamRef add(std::string name, Mat value, Shape shape = {}, bool decay = true);

  const Array& operator[](ParamRef r) const { return values_[r.index]; }
  std::size_t size() const { return values_.size(); }
  const Array& at(std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool decays(std::size_t i) const { return decay_[i]; }
  void set(std::size_t i, Mat value);
  Index total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Array> values_;
  std::vector<bool> decay_;
};

struct LinearParams {
  ParamRef weight;  // d_in x d_out
  ParamRef bias;    // 1 x d_out
};

struct NormParams {
  ParamRef gain;
  ParamRef bias;
};

struct AttentionParams {
  LinearParams query, key, value, output;
  /// heads x (2 * clip + 1) learned bias indexed by key - query distance.
  ParamRef rel_bias;
};

struct TransformerLayerParams {
  NormParams attn_norm;
  NormParams mlp_norm;
  AttentionParams attn;
  LinearParams mlp_in, mlp_out;
};

/// Extra state of the two-stream encoder: the position-only query seed and
/// the null key/value column used when a segment has no memory.
struct QueryStreamParams {
  ParamRef query_seed;  // 1 x d
  ParamRef null_key;    // 1 x d
  ParamRef null_value;  // 1 x d
};

struct ConvParams {
  ParamRef kernel;  // (w, d_in, d_out)
  ParamRef bias;    // 1 x d_out
};

struct HeadParams {
  std::vector<ConvParams> hidden;
  ConvParams out;
};

struct ModelLayout {
  LinearParams input_proj;
  std::vector<TransformerLayerParams> level0;
  QueryStreamParams query_stream;
  std::vector<ConvParams> downsample;                // one per level >= 1
  std::vector<TransformerLayerParams> level_layers;  // one per level >= 1
  HeadParams cls_head, reg_head;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ModelLayout& layout() const { return layout_; }
  const Parameters& parameters() const { return params_; }
  Parameters& parameters() { return params_; }

 private:
  ModelConfig config_;
  ModelLayout layout_;
  Parameters params_;
};

// ---- forward instrumentation ---------------------------------------------

enum class Stream { kContent, kQuery };

/// Counts materialized attention-score elements (one per query/key pair,
/// heads share the count) at pyramid level 0 and above.
struct AttentionCounter {
  Index level0_content = 0;
  Index level0_query = 0;
  Index upper_levels = 0;

  void record(Index level, Stream stream, Index elements);
  Index level0_total() const { return level0_content + level0_query; }
};

/// Recurrence caches by [segment - 1][layer]. With `replay` the stored
/// values are read back instead of being recomputed, which freezes the
/// gradient-blocked memory (used by finite-difference checks).
struct MemoryCapture {
  std::vector<std::vector<Mat>> caches;
  bool replay = false;
};

struct ForwardOptions {
  /// Samples a fresh permutation per segment; identity otherwise.
  bool training = false;
  Rng* rng = nullptr;
  AttentionCounter* counter = nullptr;
  MemoryCapture* memory = nullptr;
};

// ---- attention ------------------------------------------------------------

/// Global positions of the first query row and first key row, used to index
/// the relative-position bias.
struct AttentionGeometry {
  Index query_start = 0;
  Index key_start = 0;
  Index level = 0;
  Stream stream = Stream::kContent;
};

AdditiveMask full_mask(Index rows, Index cols);
/// Band mask |i - j| <= window / 2 over an n x n sequence; window 0 = full.
AdditiveMask window_mask(Index n, Index window);
inline bool visible(const AdditiveMask& mask, Index i, Index j) { return mask(i, j) == 0.0; }

/// Multi-head scaled dot-product attention of `queries` over `keys`, both
/// already normalized; keys also provide values. With `null_kv`, a learned
/// null column is prepended and `mask` must have one extra leading column.
Array attend(const Parameters& params, const AttentionParams& attn, const Array& queries,
             const Array& keys, const AdditiveMask& mask, const AttentionGeometry& geo,
             Index num_heads, Index clip, const QueryStreamParams* null_kv = nullptr,
             AttentionCounter* counter = nullptr);

/// Attention of x over [memory ; x]. Mask is n x (m + n).
Array self_attention(const Parameters& params, const AttentionParams& attn, const Array& x,
                     const Array* memory, const AdditiveMask& mask, const AttentionGeometry& geo,
                     Index num_heads, Index clip, AttentionCounter* counter = nullptr);

/// Pre-norm block: x + attn(LN(x), LN([memory ; x])), then x + MLP(LN(x)).
Array transformer_layer(const Parameters& params, const TransformerLayerParams& layer,
                        const Array& x, const Array* memory, const AdditiveMask& mask,
                        const AttentionGeometry& geo, Index num_heads, Index clip,
                        AttentionCounter* counter = nullptr);

struct TwoStreamOutput {
  Array content;
  Array query;
};

/// One layer of the content/query pair. Both streams read keys and values
/// from [memory ; content]; `null_kv` adds the null column when memory is
/// empty (masks then carry one extra leading column).
TwoStreamOutput two_stream_layer(const Parameters& params, const TransformerLayerParams& layer,
                                 const Array& content, const Array& query, const Array* memory,
                                 const AdditiveMask& content_mask, const AdditiveMask& query_mask,
                                 const AttentionGeometry& geo, Index num_heads, Index clip,
                                 const QueryStreamParams* null_kv = nullptr,
                                 AttentionCounter* counter = nullptr);

// ---- encoder --------------------------------------------------------------

struct PermutationMasks {
  std::vector<Index> order;
  AdditiveMask content_mask;  // n x (m + n)
  AdditiveMask query_mask;    // n x (m + n)
  Index memory_len = 0;
};

/// `order` lists positions in factorization order: position j is visible in
/// row i iff j comes before i; the content mask also shows i itself. Memory
/// columns are always visible.
PermutationMasks build_permutation_masks(std::span<const Index> order, Index memory_len);

std::vector<Array> segment_split(const Array& x, Index segment_len);

Array project_input(const Model& model, const Array& features);

/// Stack of transformer layers over the whole sequence with one mask.
Array encode_masked(const Model& model, std::span<const TransformerLayerParams> layers,
                    const Array& x, const AdditiveMask& mask, AttentionCounter* counter = nullptr);

struct RecurrenceTrace {
  /// Content-stream output after each layer, concatenated over segments.
  std::vector<Array> content;
  std::vector<Array> query;
  /// Memory length read by each segment.
  std::vector<Index> memory_len;
  std::vector<std::vector<Index>> orders;
};

/// Segment-level recurrence over level 0: each segment attends to the
/// gradient-blocked cache of the previous segment. Returns query-stream
/// states concatenated over segments.
Array recurrent_encode(const Model& model, const Array& x, const ForwardOptions& options,
                       RecurrenceTrace* trace = nullptr);

/// Level-0 encoder for the configured mode.
Array encode_level0(const Model& model, const Array& x, const ForwardOptions& options);

struct PyramidFeatures {
  std::vector<Array> levels;
  static Index stride(Index level) { return Index{1} << level; }
};

/// Level 0 is `level0`; level l+1 is a stride-2 convolution of level l
/// followed by a windowed transformer layer.
PyramidFeatures build_pyramid(const Model& model, const Array& level0,
                              AttentionCounter* counter = nullptr);

/// Level lengths and strides of the pyramid, in level-0 index units.
struct PyramidGeometry {
  Index input_len = 0;
  Index levels = 0;

  static PyramidGeometry of(const ModelConfig& c) { return {c.input_len, c.fpn_levels}; }
  Index length(Index level) const { return input_len >> level; }
  static Index stride(Index level) { return Index{1} << level; }
};

struct RawPredictions {
  std::vector<Array> logits;   // per level: n_l x K
  std::vector<Array> offsets;  // per level: n_l x 2 (start, end) in level-stride units
};

RawPredictions forward(const Model& model, const Mat& features, const ForwardOptions& options = {});
RawPredictions forward(const Model& model, const FeatureSequence& seq,
                       const ForwardOptions& options = {});

}  // namespace xltal
