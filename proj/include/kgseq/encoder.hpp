#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgseq/random.hpp"
#include "kgseq/textseq.hpp"

namespace kgseq {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Additive bias applied to masked attention logits before the softmax.
inline constexpr double kAttentionMaskBias = -1e9;
inline constexpr double kLayerNormEpsilon = 1e-12;
inline constexpr int kSegmentTypes = 2;

struct EncoderConfig {
  int num_layers = 2;
  int num_heads = 4;
  int hidden_size = 128;
  int ffn_size = 512;
  int max_positions = 64;
  int vocab_size = 0;
  double dropout_rate = 0.1;
  std::uint64_t seed = 42;

  int head_size() const { return hidden_size / num_heads; }
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

template <class S>
struct LayerParams {
  Matrix<S> query_weight, key_weight, value_weight, output_weight;  // H × H
  RowVector<S> query_bias, key_bias, value_bias, output_bias;
  RowVector<S> attention_ln_gamma, attention_ln_beta;
  Matrix<S> ffn_in_weight;  // H × F
  RowVector<S> ffn_in_bias;
  Matrix<S> ffn_out_weight;  // F × H
  RowVector<S> ffn_out_bias;
  RowVector<S> output_ln_gamma, output_ln_beta;
};

/// Every trainable tensor of the encoder. Token vectors are rows; a linear
/// map is applied as X * W + b.
template <class S>
struct EncoderParams {
  Matrix<S> token_embedding;     // V × H
  Matrix<S> segment_embedding;   // 2 × H
  Matrix<S> position_embedding;  // P × H
  RowVector<S> embedding_ln_gamma, embedding_ln_beta;
  std::vector<LayerParams<S>> layers;
};

/// Named, contiguous view over one parameter tensor (row-major).
template <class S>
struct TensorView {
  std::string name;
  S* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const noexcept { return rows * cols; }
  std::span<S> span() const noexcept { return {data, static_cast<std::size_t>(size())}; }
};

/// Views in canonical order (the checkpoint order).
template <class S>
std::vector<TensorView<S>> tensors(EncoderParams<S>& params);
template <class S>
std::vector<TensorView<const S>> tensors(const EncoderParams<S>& params);

/// All-zero parameters shaped for `cfg`.
template <class S>
EncoderParams<S> zero_params(const EncoderConfig& cfg);

/// Truncated-normal weights (std 0.02, cut at ±2 std), zero biases, unit
/// layer-norm scales; deterministic in cfg.seed.
template <class S>
EncoderParams<S> init_params(const EncoderConfig& cfg);

/// Fills `values` with N(0, stddev²) draws resampled until within ±2 stddev.
template <class S>
void fill_truncated_normal(std::span<S> values, Rng& rng, double stddev);

template <class T, class S>
EncoderParams<T> cast_params(const EncoderConfig& cfg, const EncoderParams<S>& params);

template <class S>
bool all_finite(const EncoderParams<S>& params);

/// Throws ConfigMismatchError when tensor shapes disagree with cfg.
template <class S>
void check_shapes(const EncoderConfig& cfg, const EncoderParams<S>& params);

enum class Mode { train, eval };

template <class S>
struct EncoderOutput {
  RowVector<S> cls;           // C
  Matrix<S> token_vectors;    // seq_len × H; empty unless requested
  std::vector<Matrix<S>> attention;  // layer * num_heads + head → seq_len × seq_len
  std::vector<std::uint8_t> attention_mask;
  int num_heads = 0;

  const Matrix<S>& attention_map(int layer, int head) const;
};

template <class S>
struct LayerNormCache {
  Matrix<S> normalized;  // pre scale/offset
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std;
};

template <class S>
struct LayerTrace {
  Matrix<S> input, query, key, value;
  std::vector<Matrix<S>> probs;          // per (sequence, head), before dropout
  std::vector<Matrix<S>> probs_dropout;  // matching masks; empty without dropout
  Matrix<S> context;
  LayerNormCache<S> attention_ln;
  Matrix<S> attention_ln_out;
  Matrix<S> ffn_pre, ffn_act;
  Matrix<S> ffn_dropout;  // empty without dropout
  LayerNormCache<S> output_ln;
};

/// Everything a train-mode forward records for the exact backward pass,
/// including the sampled dropout masks.
template <class S>
struct ForwardTrace {
  EncoderConfig config;
  std::vector<Eigen::Index> offsets;  // row offset of each sequence, plus the total
  std::vector<TokenId> token_ids;
  std::vector<std::int8_t> segment_ids;
  std::vector<std::int32_t> position_ids;
  LayerNormCache<S> embedding_ln;
  Matrix<S> embedding_dropout;
  std::vector<LayerTrace<S>> layers;

  std::size_t batch_size() const noexcept { return offsets.empty() ? 0 : offsets.size() - 1; }
};

struct ForwardOptions {
  Mode mode = Mode::eval;
  std::uint64_t dropout_seed = 0;
  bool token_vectors = false;
  bool attention_maps = false;
  /// Keep the trace even in eval mode (for gradients without dropout).
  bool record_trace = false;
};

template <class S>
struct ForwardResult {
  std::vector<EncoderOutput<S>> outputs;
  std::optional<ForwardTrace<S>> trace;  // train mode or record_trace
};

/// Post-norm Transformer encoder over a batch of packed sequences. Dropout is
/// active only in train mode, with masks drawn per sequence from
/// derive_seed(dropout_seed, index), so a sequence's result does not depend on
/// which other sequences share its batch.
template <class S>
ForwardResult<S> forward(const EncoderParams<S>& params, const EncoderConfig& cfg,
                         std::span<const PackedSequence> batch, const ForwardOptions& options = {});

/// Gradients of sum_i <dcls.row(i), C_i> with respect to every parameter,
/// added into `grads`.
template <class S>
void backward_accumulate(const EncoderParams<S>& params, const ForwardTrace<S>& trace, const Matrix<S>& dcls,
                         EncoderParams<S>& grads);

template <class S>
EncoderParams<S> backward(const EncoderParams<S>& params, const ForwardTrace<S>& trace, const Matrix<S>& dcls);

struct ClsAttention {
  std::vector<int> positions;              // unmasked key positions
  std::vector<std::vector<double>> heads;  // one row per head, over `positions`
};

/// Attention row of the [CLS] query at `layer`, one vector per head.
template <class S>
ClsAttention extract_cls_attention(const EncoderOutput<S>& output, int layer);

// Elementwise pieces, exposed for tests.
template <class S>
S gelu(S x);
template <class S>
S gelu_derivative(S x);

}  // namespace kgseq
