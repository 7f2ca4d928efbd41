#include "kgseq/encoder.hpp"

#include <cmath>

#include "kgseq/error.hpp"
#include "kgseq/random.hpp"

namespace kgseq {

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (num_heads < 1) throw ConfigError("num_heads must be >= 1");
  if (hidden_size < 1 || hidden_size % num_heads != 0)
    throw ConfigError("hidden_size " + std::to_string(hidden_size) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  if (ffn_size < 1) throw ConfigError("ffn_size must be >= 1");
  if (max_positions < 1 || max_positions > 512) throw ConfigError("max_positions must lie in [1, 512]");
  if (vocab_size < special::count) throw ConfigError("vocab_size must cover the special tokens");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
}

namespace {

template <class P, class F>
void visit_params(P& p, F&& f) {
  f(std::string("embeddings.token"), p.token_embedding);
  f(std::string("embeddings.segment"), p.segment_embedding);
  f(std::string("embeddings.position"), p.position_embedding);
  f(std::string("embeddings.ln.gamma"), p.embedding_ln_gamma);
  f(std::string("embeddings.ln.beta"), p.embedding_ln_beta);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layer." + std::to_string(i) + ".";
    f(pre + "attention.query.weight", l.query_weight);
    f(pre + "attention.query.bias", l.query_bias);
    f(pre + "attention.key.weight", l.key_weight);
    f(pre + "attention.key.bias", l.key_bias);
    f(pre + "attention.value.weight", l.value_weight);
    f(pre + "attention.value.bias", l.value_bias);
    f(pre + "attention.output.weight", l.output_weight);
    f(pre + "attention.output.bias", l.output_bias);
    f(pre + "attention.ln.gamma", l.attention_ln_gamma);
    f(pre + "attention.ln.beta", l.attention_ln_beta);
    f(pre + "ffn.in.weight", l.ffn_in_weight);
    f(pre + "ffn.in.bias", l.ffn_in_bias);
    f(pre + "ffn.out.weight", l.ffn_out_weight);
    f(pre + "ffn.out.bias", l.ffn_out_bias);
    f(pre + "ffn.ln.gamma", l.output_ln_gamma);
    f(pre + "ffn.ln.beta", l.output_ln_beta);
  }
}

template <class S>
void layer_norm_forward(const Matrix<S>& x, const RowVector<S>& gamma, const RowVector<S>& beta, Matrix<S>& out,
                        LayerNormCache<S>* cache) {
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean = x.rowwise().mean();
  Matrix<S> centered = x.colwise() - mean;
  const Eigen::Matrix<S, Eigen::Dynamic, 1> var = centered.array().square().rowwise().mean();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std =
      (var.array() + static_cast<S>(kLayerNormEpsilon)).rsqrt().matrix();
  centered = inv_std.asDiagonal() * centered;
  out = (centered.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->normalized = std::move(centered);
    cache->inv_std = inv_std;
  }
}

template <class S>
Matrix<S> layer_norm_backward(const Matrix<S>& dy, const LayerNormCache<S>& cache, const RowVector<S>& gamma,
                              RowVector<S>& dgamma, RowVector<S>& dbeta) {
  const auto& xhat = cache.normalized;
  dgamma += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Matrix<S> dxhat = dy.array().rowwise() * gamma.array();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean_d = dxhat.rowwise().mean();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean_dx = (dxhat.array() * xhat.array()).rowwise().mean();
  Matrix<S> dx = dxhat.colwise() - mean_d;
  dx -= mean_dx.asDiagonal() * xhat;
  return cache.inv_std.asDiagonal() * dx;
}

template <class S>
void softmax_rows(Matrix<S>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}


bool ends_with(const std::string& s, std::string_view suffix) { return s.ends_with(suffix); }

template <class S>
class DropoutSampler {
 public:
  DropoutSampler(double rate, std::uint64_t seed, std::size_t sequences) : keep_(1.0 - rate) {
    rngs_.reserve(sequences);
    for (std::size_t i = 0; i < sequences; ++i) rngs_.emplace_back(derive_seed(seed, i));
  }

  // Inverted-dropout mask: entries are 0 or 1/keep.
  Matrix<S> mask(std::size_t sequence, Eigen::Index rows, Eigen::Index cols) {
    std::bernoulli_distribution keep(keep_);
    auto& rng = rngs_[sequence];
    const S scale = static_cast<S>(1.0 / keep_);
    Matrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : S(0);
    return m;
  }

 private:
  double keep_;
  std::vector<Rng> rngs_;
};

template <class S>
void check_input(const EncoderConfig& cfg, const PackedSequence& seq, std::size_t index) {
  const auto n = seq.size();
  const auto where = " (sequence " + std::to_string(index) + ")";
  if (n == 0) throw InputError("empty sequence" + where);
  if (n > static_cast<std::size_t>(cfg.max_positions))
    throw InputError("sequence length " + std::to_string(n) + " exceeds max_positions " +
                     std::to_string(cfg.max_positions) + where);
  if (seq.segment_ids.size() != n || seq.position_ids.size() != n || seq.attention_mask.size() != n)
    throw InputError("packed sequence fields differ in length" + where);
  for (std::size_t j = 0; j < n; ++j) {
    if (seq.token_ids[j] < 0 || seq.token_ids[j] >= cfg.vocab_size) throw InputError("token id out of range" + where);
    if (seq.segment_ids[j] < 0 || seq.segment_ids[j] >= kSegmentTypes) throw InputError("segment id out of range" + where);
    if (seq.position_ids[j] < 0 || seq.position_ids[j] >= cfg.max_positions)
      throw InputError("position id out of range" + where);
  }
}

}  // namespace

template <class S>
std::vector<TensorView<S>> tensors(EncoderParams<S>& params) {
  std::vector<TensorView<S>> views;
  visit_params(params, [&](std::string name, auto& t) { views.push_back({std::move(name), t.data(), t.rows(), t.cols()}); });
  return views;
}

template <class S>
std::vector<TensorView<const S>> tensors(const EncoderParams<S>& params) {
  std::vector<TensorView<const S>> views;
  visit_params(params, [&](std::string name, const auto& t) {
    views.push_back({std::move(name), t.data(), t.rows(), t.cols()});
  });
  return views;
}

template <class S>
void fill_truncated_normal(std::span<S> values, Rng& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : values) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = static_cast<S>(z * stddev);
  }
}

template <class S>
EncoderParams<S> zero_params(const EncoderConfig& cfg) {
  cfg.validate();
  const Eigen::Index h = cfg.hidden_size, f = cfg.ffn_size;
  EncoderParams<S> p;
  p.token_embedding = Matrix<S>::Zero(cfg.vocab_size, h);
  p.segment_embedding = Matrix<S>::Zero(kSegmentTypes, h);
  p.position_embedding = Matrix<S>::Zero(cfg.max_positions, h);
  p.embedding_ln_gamma = RowVector<S>::Zero(h);
  p.embedding_ln_beta = RowVector<S>::Zero(h);
  p.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& l : p.layers) {
    for (auto* w : {&l.query_weight, &l.key_weight, &l.value_weight, &l.output_weight}) *w = Matrix<S>::Zero(h, h);
    for (auto* b : {&l.query_bias, &l.key_bias, &l.value_bias, &l.output_bias, &l.attention_ln_gamma,
                    &l.attention_ln_beta, &l.ffn_out_bias, &l.output_ln_gamma, &l.output_ln_beta})
      *b = RowVector<S>::Zero(h);
    l.ffn_in_weight = Matrix<S>::Zero(h, f);
    l.ffn_in_bias = RowVector<S>::Zero(f);
    l.ffn_out_weight = Matrix<S>::Zero(f, h);
  }
  return p;
}

template <class S>
EncoderParams<S> init_params(const EncoderConfig& cfg) {
  auto p = zero_params<S>(cfg);
  Rng rng(cfg.seed);
  visit_params(p, [&](const std::string& name, auto& t) {
    if (ends_with(name, ".gamma")) {
      t.setOnes();
    } else if (ends_with(name, ".weight") || (name.starts_with("embeddings.") && !name.starts_with("embeddings.ln"))) {
      fill_truncated_normal(std::span<S>(t.data(), static_cast<std::size_t>(t.size())), rng, 0.02);
    }
  });
  return p;
}

template <class T, class S>
EncoderParams<T> cast_params(const EncoderConfig& cfg, const EncoderParams<S>& params) {
  auto out = zero_params<T>(cfg);
  auto dst = tensors(out);
  const auto src = tensors(params);
  if (dst.size() != src.size()) throw ConfigMismatchError("parameter layout differs from config");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].size() != src[i].size()) throw ConfigMismatchError("tensor " + src[i].name + " differs from config");
    for (Eigen::Index k = 0; k < dst[i].size(); ++k) dst[i].data[k] = static_cast<T>(src[i].data[k]);
  }
  return out;
}

template <class S>
bool all_finite(const EncoderParams<S>& params) {
  for (const auto& v : tensors(params))
    for (Eigen::Index k = 0; k < v.size(); ++k)
      if (!std::isfinite(v.data[k])) return false;
  return true;
}

namespace {

// Shapes in visit_params order.
std::vector<std::pair<Eigen::Index, Eigen::Index>> expected_shapes(const EncoderConfig& cfg) {
  const Eigen::Index h = cfg.hidden_size, f = cfg.ffn_size;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> s{
      {cfg.vocab_size, h}, {kSegmentTypes, h}, {cfg.max_positions, h}, {1, h}, {1, h}};
  for (int l = 0; l < cfg.num_layers; ++l) {
    for (int i = 0; i < 4; ++i) {
      s.emplace_back(h, h);
      s.emplace_back(1, h);
    }
    s.insert(s.end(), {{1, h}, {1, h}, {h, f}, {1, f}, {f, h}, {1, h}, {1, h}, {1, h}});
  }
  return s;
}

}  // namespace

template <class S>
void check_shapes(const EncoderConfig& cfg, const EncoderParams<S>& params) {
  const auto want = expected_shapes(cfg);
  const auto got = tensors(params);
  if (want.size() != got.size())
    throw ConfigMismatchError("expected " + std::to_string(want.size()) + " tensors, found " + std::to_string(got.size()));
  for (std::size_t i = 0; i < want.size(); ++i)
    if (want[i].first != got[i].rows || want[i].second != got[i].cols)
      throw ConfigMismatchError("tensor " + got[i].name + " has shape " + std::to_string(got[i].rows) + "x" +
                                std::to_string(got[i].cols) + ", config implies " + std::to_string(want[i].first) +
                                "x" + std::to_string(want[i].second));
}

template <class S>
const Matrix<S>& EncoderOutput<S>::attention_map(int layer, int head) const {
  const auto idx = static_cast<std::size_t>(layer * num_heads + head);
  if (layer < 0 || head < 0 || head >= num_heads || idx >= attention.size())
    throw ArgumentError("attention map (" + std::to_string(layer) + ", " + std::to_string(head) + ") not available");
  return attention[idx];
}

template <class S>
S gelu(S x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double a = 0.044715;
  const S u = static_cast<S>(c) * (x + static_cast<S>(a) * x * x * x);
  return static_cast<S>(0.5) * x * (S(1) + std::tanh(u));
}

template <class S>
S gelu_derivative(S x) {
  constexpr double c = 0.7978845608028654;
  constexpr double a = 0.044715;
  const S u = static_cast<S>(c) * (x + static_cast<S>(a) * x * x * x);
  const S th = std::tanh(u);
  const S du = static_cast<S>(c) * (S(1) + static_cast<S>(3 * a) * x * x);
  return static_cast<S>(0.5) * (S(1) + th) + static_cast<S>(0.5) * x * (S(1) - th * th) * du;
}

template <class S>
ForwardResult<S> forward(const EncoderParams<S>& params, const EncoderConfig& cfg,
                         std::span<const PackedSequence> batch, const ForwardOptions& options) {
  cfg.validate();
  check_shapes(cfg, params);
  if (!all_finite(params)) throw NumericError("encoder parameters contain non-finite values");

  const bool train = options.mode == Mode::train;
  const bool use_dropout = train && cfg.dropout_rate > 0.0;
  const Eigen::Index hidden = cfg.hidden_size;
  const int heads = cfg.num_heads;
  const Eigen::Index d = cfg.head_size();
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));

  std::vector<Eigen::Index> offsets{0};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_input<S>(cfg, batch[i], i);
    offsets.push_back(offsets.back() + static_cast<Eigen::Index>(batch[i].size()));
  }
  const Eigen::Index rows = offsets.back();

  ForwardResult<S> result;
  result.outputs.resize(batch.size());
  std::optional<DropoutSampler<S>> dropout;
  if (use_dropout) dropout.emplace(cfg.dropout_rate, options.dropout_seed, batch.size());

  ForwardTrace<S>* trace = nullptr;
  if (train || options.record_trace) {
    result.trace.emplace();
    trace = &*result.trace;
    trace->config = cfg;
    trace->offsets = offsets;
    trace->layers.resize(static_cast<std::size_t>(cfg.num_layers));
  }

  Matrix<S> x(rows, hidden);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& seq = batch[i];
    for (std::size_t j = 0; j < seq.size(); ++j) {
      x.row(offsets[i] + static_cast<Eigen::Index>(j)) = params.token_embedding.row(seq.token_ids[j]) +
                                                         params.segment_embedding.row(seq.segment_ids[j]) +
                                                         params.position_embedding.row(seq.position_ids[j]);
    }
    if (trace) {
      trace->token_ids.insert(trace->token_ids.end(), seq.token_ids.begin(), seq.token_ids.end());
      trace->segment_ids.insert(trace->segment_ids.end(), seq.segment_ids.begin(), seq.segment_ids.end());
      trace->position_ids.insert(trace->position_ids.end(), seq.position_ids.begin(), seq.position_ids.end());
    }
  }
  {
    Matrix<S> normed;
    layer_norm_forward<S>(x, params.embedding_ln_gamma, params.embedding_ln_beta, normed,
                          trace ? &trace->embedding_ln : nullptr);
    x = std::move(normed);
  }
  if (dropout) {
    Matrix<S> mask(rows, hidden);
    for (std::size_t i = 0; i < batch.size(); ++i)
      mask.middleRows(offsets[i], offsets[i + 1] - offsets[i]) = dropout->mask(i, offsets[i + 1] - offsets[i], hidden);
    x.array() *= mask.array();
    trace->embedding_dropout = std::move(mask);
  }

  if (options.attention_maps)
    for (std::size_t i = 0; i < batch.size(); ++i) {
      result.outputs[i].attention.resize(static_cast<std::size_t>(cfg.num_layers * heads));
      result.outputs[i].num_heads = heads;
    }

  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    Matrix<S> q = x * lp.query_weight;
    q.rowwise() += lp.query_bias;
    Matrix<S> k = x * lp.key_weight;
    k.rowwise() += lp.key_bias;
    Matrix<S> v = x * lp.value_weight;
    v.rowwise() += lp.value_bias;

    Matrix<S> context = Matrix<S>::Zero(rows, hidden);
    std::vector<Matrix<S>> probs_all, masks_all;
    if (trace) {
      probs_all.reserve(batch.size() * static_cast<std::size_t>(heads));
      if (dropout) masks_all.reserve(batch.size() * static_cast<std::size_t>(heads));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Eigen::Index o = offsets[i], n = offsets[i + 1] - offsets[i];
      RowVector<S> key_bias(n);
      for (Eigen::Index j = 0; j < n; ++j)
        key_bias(j) = batch[i].attention_mask[static_cast<std::size_t>(j)] ? S(0) : static_cast<S>(kAttentionMaskBias);
      for (int h = 0; h < heads; ++h) {
        Matrix<S> probs = q.block(o, h * d, n, d) * k.block(o, h * d, n, d).transpose();
        probs *= scale;
        probs.rowwise() += key_bias;
        softmax_rows(probs);
        // exp of the mask bias can underflow to a denormal instead of 0
        for (Eigen::Index j = 0; j < n; ++j)
          if (!batch[i].attention_mask[static_cast<std::size_t>(j)]) probs.col(j).setZero();
        if (options.attention_maps)
          result.outputs[i].attention[static_cast<std::size_t>(l * heads + h)] = probs;
        if (dropout) {
          Matrix<S> mask = dropout->mask(i, n, n);
          context.block(o, h * d, n, d).noalias() = (probs.array() * mask.array()).matrix() * v.block(o, h * d, n, d);
          masks_all.push_back(std::move(mask));
        } else {
          context.block(o, h * d, n, d).noalias() = probs * v.block(o, h * d, n, d);
        }
        if (trace) probs_all.push_back(std::move(probs));
      }
    }

    Matrix<S> residual = x + context * lp.output_weight;
    residual.rowwise() += lp.output_bias;
    Matrix<S> h1;
    LayerTrace<S>* lt = trace ? &trace->layers[static_cast<std::size_t>(l)] : nullptr;
    layer_norm_forward<S>(residual, lp.attention_ln_gamma, lp.attention_ln_beta, h1, lt ? &lt->attention_ln : nullptr);

    Matrix<S> pre = h1 * lp.ffn_in_weight;
    pre.rowwise() += lp.ffn_in_bias;
    Matrix<S> act = pre.unaryExpr([](S z) { return gelu(z); });
    Matrix<S> ffn = act * lp.ffn_out_weight;
    ffn.rowwise() += lp.ffn_out_bias;
    Matrix<S> ffn_mask;
    if (dropout) {
      ffn_mask.resize(rows, hidden);
      for (std::size_t i = 0; i < batch.size(); ++i)
        ffn_mask.middleRows(offsets[i], offsets[i + 1] - offsets[i]) =
            dropout->mask(i, offsets[i + 1] - offsets[i], hidden);
      ffn.array() *= ffn_mask.array();
    }
    residual = h1 + ffn;
    Matrix<S> out;
    layer_norm_forward<S>(residual, lp.output_ln_gamma, lp.output_ln_beta, out, lt ? &lt->output_ln : nullptr);

    if (lt) {
      lt->input = std::move(x);
      lt->query = std::move(q);
      lt->key = std::move(k);
      lt->value = std::move(v);
      lt->probs = std::move(probs_all);
      lt->probs_dropout = std::move(masks_all);
      lt->context = std::move(context);
      lt->attention_ln_out = std::move(h1);
      lt->ffn_pre = std::move(pre);
      lt->ffn_act = std::move(act);
      lt->ffn_dropout = std::move(ffn_mask);
    }
    x = std::move(out);
  }

  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& o = result.outputs[i];
    o.cls = x.row(offsets[i]);
    if (options.token_vectors) o.token_vectors = x.middleRows(offsets[i], offsets[i + 1] - offsets[i]);
    o.attention_mask = batch[i].attention_mask;
    o.num_heads = heads;
  }
  return result;
}

template <class S>
void backward_accumulate(const EncoderParams<S>& params, const ForwardTrace<S>& trace, const Matrix<S>& dcls,
                         EncoderParams<S>& grads) {
  const auto& cfg = trace.config;
  if (trace.layers.size() != params.layers.size() || trace.layers.empty())
    throw PreconditionError("trace was recorded for a different encoder");
  check_shapes(cfg, params);
  check_shapes(cfg, grads);
  const Eigen::Index hidden = cfg.hidden_size;
  const auto batch = trace.batch_size();
  if (dcls.rows() != static_cast<Eigen::Index>(batch) || dcls.cols() != hidden)
    throw PreconditionError("upstream gradient shape does not match the traced batch");
  if (trace.layers.front().input.cols() != hidden)
    throw PreconditionError("trace hidden size does not match the parameters");

  const int heads = cfg.num_heads;
  const Eigen::Index d = cfg.head_size();
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
  const Eigen::Index rows = trace.offsets.back();

  Matrix<S> dx = Matrix<S>::Zero(rows, hidden);
  for (std::size_t i = 0; i < batch; ++i) dx.row(trace.offsets[i]) = dcls.row(static_cast<Eigen::Index>(i));

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    auto& lg = grads.layers[static_cast<std::size_t>(l)];
    const auto& lt = trace.layers[static_cast<std::size_t>(l)];

    const Matrix<S> dres2 = layer_norm_backward<S>(dx, lt.output_ln, lp.output_ln_gamma, lg.output_ln_gamma, lg.output_ln_beta);
    Matrix<S> dffn = dres2;
    if (lt.ffn_dropout.size() > 0) dffn.array() *= lt.ffn_dropout.array();
    lg.ffn_out_weight.noalias() += lt.ffn_act.transpose() * dffn;
    lg.ffn_out_bias += dffn.colwise().sum();
    Matrix<S> dpre = dffn * lp.ffn_out_weight.transpose();
    dpre.array() *= lt.ffn_pre.unaryExpr([](S z) { return gelu_derivative(z); }).array();
    lg.ffn_in_weight.noalias() += lt.attention_ln_out.transpose() * dpre;
    lg.ffn_in_bias += dpre.colwise().sum();
    Matrix<S> dh1 = dres2;
    dh1.noalias() += dpre * lp.ffn_in_weight.transpose();

    const Matrix<S> dres1 = layer_norm_backward<S>(dh1, lt.attention_ln, lp.attention_ln_gamma, lg.attention_ln_gamma, lg.attention_ln_beta);
    lg.output_weight.noalias() += lt.context.transpose() * dres1;
    lg.output_bias += dres1.colwise().sum();
    const Matrix<S> dcontext = dres1 * lp.output_weight.transpose();

    Matrix<S> dq = Matrix<S>::Zero(rows, hidden), dk = Matrix<S>::Zero(rows, hidden), dv = Matrix<S>::Zero(rows, hidden);
    const bool attn_dropout = !lt.probs_dropout.empty();
    for (std::size_t i = 0; i < batch; ++i) {
      const Eigen::Index o = trace.offsets[i], n = trace.offsets[i + 1] - trace.offsets[i];
      for (int h = 0; h < heads; ++h) {
        const std::size_t idx = i * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h);
        const Matrix<S>& probs = lt.probs[idx];
        const auto dctx_h = dcontext.block(o, h * d, n, d);
        Matrix<S> dprobs = dctx_h * lt.value.block(o, h * d, n, d).transpose();
        if (attn_dropout) {
          const Matrix<S> dropped = probs.array() * lt.probs_dropout[idx].array();
          dv.block(o, h * d, n, d).noalias() = dropped.transpose() * dctx_h;
          dprobs.array() *= lt.probs_dropout[idx].array();
        } else {
          dv.block(o, h * d, n, d).noalias() = probs.transpose() * dctx_h;
        }
        const Eigen::Matrix<S, Eigen::Dynamic, 1> dot = (dprobs.array() * probs.array()).rowwise().sum();
        Matrix<S> dscores = probs.array() * (dprobs.colwise() - dot).array();
        dscores *= scale;
        dq.block(o, h * d, n, d).noalias() = dscores * lt.key.block(o, h * d, n, d);
        dk.block(o, h * d, n, d).noalias() = dscores.transpose() * lt.query.block(o, h * d, n, d);
      }
    }
    lg.query_weight.noalias() += lt.input.transpose() * dq;
    lg.query_bias += dq.colwise().sum();
    lg.key_weight.noalias() += lt.input.transpose() * dk;
    lg.key_bias += dk.colwise().sum();
    lg.value_weight.noalias() += lt.input.transpose() * dv;
    lg.value_bias += dv.colwise().sum();

    dx = dres1;
    dx.noalias() += dq * lp.query_weight.transpose();
    dx.noalias() += dk * lp.key_weight.transpose();
    dx.noalias() += dv * lp.value_weight.transpose();
  }

  if (trace.embedding_dropout.size() > 0) dx.array() *= trace.embedding_dropout.array();
  const Matrix<S> demb = layer_norm_backward<S>(dx, trace.embedding_ln, params.embedding_ln_gamma,
                                                grads.embedding_ln_gamma, grads.embedding_ln_beta);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto j = static_cast<std::size_t>(r);
    grads.token_embedding.row(trace.token_ids[j]) += demb.row(r);
    grads.segment_embedding.row(trace.segment_ids[j]) += demb.row(r);
    grads.position_embedding.row(trace.position_ids[j]) += demb.row(r);
  }
}

template <class S>
EncoderParams<S> backward(const EncoderParams<S>& params, const ForwardTrace<S>& trace, const Matrix<S>& dcls) {
  auto grads = zero_params<S>(trace.config);
  backward_accumulate(params, trace, dcls, grads);
  return grads;
}

template <class S>
ClsAttention extract_cls_attention(const EncoderOutput<S>& output, int layer) {
  if (output.num_heads <= 0 || output.attention.empty())
    throw PreconditionError("forward was run without attention maps");
  const int layers = static_cast<int>(output.attention.size()) / output.num_heads;
  if (layer < 0 || layer >= layers)
    throw ArgumentError("layer " + std::to_string(layer) + " out of range (valid 0.." + std::to_string(layers - 1) + ")");
  ClsAttention out;
  for (std::size_t j = 0; j < output.attention_mask.size(); ++j)
    if (output.attention_mask[j]) out.positions.push_back(static_cast<int>(j));
  for (int h = 0; h < output.num_heads; ++h) {
    const auto& map = output.attention_map(layer, h);
    std::vector<double> row;
    row.reserve(out.positions.size());
    for (int p : out.positions) row.push_back(static_cast<double>(map(0, p)));
    out.heads.push_back(std::move(row));
  }
  return out;
}

#define KGSEQ_INSTANTIATE(S)                                                                                    \
  template std::vector<TensorView<S>> tensors(EncoderParams<S>&);                                              \
  template std::vector<TensorView<const S>> tensors(const EncoderParams<S>&);                                  \
  template EncoderParams<S> zero_params<S>(const EncoderConfig&);                                              \
  template EncoderParams<S> init_params<S>(const EncoderConfig&);                                              \
  template bool all_finite(const EncoderParams<S>&);                                                           \
  template void check_shapes(const EncoderConfig&, const EncoderParams<S>&);                                   \
  template struct EncoderOutput<S>;                                                                            \
  template ForwardResult<S> forward(const EncoderParams<S>&, const EncoderConfig&, std::span<const PackedSequence>, \
                                    const ForwardOptions&);                                                    \
  template void backward_accumulate(const EncoderParams<S>&, const ForwardTrace<S>&, const Matrix<S>&,         \
                                    EncoderParams<S>&);                                                        \
  template EncoderParams<S> backward(const EncoderParams<S>&, const ForwardTrace<S>&, const Matrix<S>&);       \
  template ClsAttention extract_cls_attention(const EncoderOutput<S>&, int);                                   \
  template void fill_truncated_normal(std::span<S>, Rng&, double);                                           \
  template S gelu(S);                                                                                          \
  template S gelu_derivative(S);

KGSEQ_INSTANTIATE(float)
KGSEQ_INSTANTIATE(double)
#undef KGSEQ_INSTANTIATE

template EncoderParams<double> cast_params<double, float>(const EncoderConfig&, const EncoderParams<float>&);
template EncoderParams<float> cast_params<float, double>(const EncoderConfig&, const EncoderParams<double>&);
template EncoderParams<float> cast_params<float, float>(const EncoderConfig&, const EncoderParams<float>&);
template EncoderParams<double> cast_params<double, double>(const EncoderConfig&, const EncoderParams<double>&);

}  // namespace kgseq
