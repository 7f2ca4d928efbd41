#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "kgseq/error.hpp"
#include "kgseq/encoder.hpp"
#include "kgseq/textseq.hpp"

using namespace kgseq;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

EncoderConfig tiny_config(int layers, int heads, int hidden, int ffn, int vocab) {
  EncoderConfig cfg;
  cfg.num_layers = layers;
  cfg.num_heads = heads;
  cfg.hidden_size = hidden;
  cfg.ffn_size = ffn;
  cfg.max_positions = 16;
  cfg.vocab_size = vocab;
  cfg.dropout_rate = 0.0;
  cfg.seed = 3;
  return cfg;
}

// Uniform(-0.5, 0.5) everywhere, layer-norm scales near 1; far from the
// init scale so that every term contributes visibly.
EncoderParams<double> random_params(const EncoderConfig& cfg, std::uint64_t seed) {
  auto p = zero_params<double>(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& v : tensors(p)) {
    const bool gamma = v.name.ends_with("gamma");
    for (auto& x : v.span()) x = gamma ? 1.0 + u(rng) : u(rng);
  }
  return p;
}

PackedSequence sequence(std::vector<TokenId> ids, std::vector<std::int8_t> segs, std::size_t real) {
  PackedSequence s;
  s.token_ids = std::move(ids);
  s.segment_ids = std::move(segs);
  for (std::size_t i = 0; i < s.token_ids.size(); ++i) {
    s.position_ids.push_back(static_cast<std::int32_t>(i));
    s.attention_mask.push_back(i < real ? 1 : 0);
  }
  return s;
}

// ---- straight-line reference forward --------------------------------------

Vec row_of(const Matrix<double>& m, Eigen::Index r) {
  Vec out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

Mat affine(const Mat& x, const Matrix<double>& w, const RowVector<double>& b) {
  Mat out(x.size(), Vec(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      double s = b(c);
      for (Eigen::Index k = 0; k < w.rows(); ++k) s += x[i][static_cast<std::size_t>(k)] * w(k, c);
      out[i][static_cast<std::size_t>(c)] = s;
    }
  return out;
}

Mat layer_norm(const Mat& x, const RowVector<double>& g, const RowVector<double>& b) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0, var = 0;
    for (double v : x[i]) mean += v;
    mean /= n;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-12) * g(static_cast<Eigen::Index>(j)) +
                  b(static_cast<Eigen::Index>(j));
  }
  return out;
}

double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
}

Mat reference_forward(const EncoderParams<double>& p, const EncoderConfig& cfg, const PackedSequence& s) {
  const std::size_t n = s.size();
  const auto H = static_cast<std::size_t>(cfg.hidden_size);
  Mat x(n, Vec(H));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < H; ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      x[i][j] = p.token_embedding(s.token_ids[i], c) + p.segment_embedding(s.segment_ids[i], c) +
                p.position_embedding(s.position_ids[i], c);
    }
  x = layer_norm(x, p.embedding_ln_gamma, p.embedding_ln_beta);
  const auto dh = H / static_cast<std::size_t>(cfg.num_heads);
  for (const auto& lp : p.layers) {
    const Mat q = affine(x, lp.query_weight, lp.query_bias);
    const Mat k = affine(x, lp.key_weight, lp.key_bias);
    const Mat v = affine(x, lp.value_weight, lp.value_bias);
    Mat ctx(n, Vec(H, 0.0));
    for (std::size_t h = 0; h < static_cast<std::size_t>(cfg.num_heads); ++h)
      for (std::size_t i = 0; i < n; ++i) {
        Vec sc(n);
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0;
          for (std::size_t d = 0; d < dh; ++d) dot += q[i][h * dh + d] * k[j][h * dh + d];
          sc[j] = dot / std::sqrt(static_cast<double>(dh)) + (s.attention_mask[j] ? 0.0 : -1e9);
          mx = std::max(mx, sc[j]);
        }
        double z = 0;
        for (auto& e : sc) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t d = 0; d < dh; ++d) ctx[i][h * dh + d] += sc[j] / z * v[j][h * dh + d];
      }
    Mat attn = affine(ctx, lp.output_weight, lp.output_bias);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < H; ++j) attn[i][j] += x[i][j];
    const Mat h1 = layer_norm(attn, lp.attention_ln_gamma, lp.attention_ln_beta);
    Mat inner = affine(h1, lp.ffn_in_weight, lp.ffn_in_bias);
    for (auto& r : inner)
      for (auto& e : r) e = gelu_ref(e);
    Mat ffn = affine(inner, lp.ffn_out_weight, lp.ffn_out_bias);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < H; ++j) ffn[i][j] += h1[i][j];
    x = layer_norm(ffn, lp.output_ln_gamma, lp.output_ln_beta);
  }
  return x;
}

// Weighted sum of the [CLS] outputs, the scalar the gradient tests differentiate.
double cls_objective(const EncoderParams<double>& p, const EncoderConfig& cfg, std::span<const PackedSequence> batch,
                     const Matrix<double>& weights, const ForwardOptions& opt) {
  const auto r = forward(p, cfg, batch, opt);
  double s = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) s += r.outputs[i].cls.dot(weights.row(static_cast<Eigen::Index>(i)));
  return s;
}

}  // namespace

TEST_CASE("forward matches a straight-line reference implementation") {
  for (int heads : {1, 2}) {
    CAPTURE(heads);
    const auto cfg = tiny_config(1, heads, 4, 8, 10);
    const auto p = random_params(cfg, 21);
    const auto s = sequence({2, 7, 3}, {0, 1, 1}, 3);
    ForwardOptions opt;
    opt.token_vectors = true;
    const auto out = forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt).outputs[0];
    const Mat ref = reference_forward(p, cfg, s);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(std::abs(out.token_vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - ref[i][j]) < 1e-10);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out.cls(static_cast<Eigen::Index>(j)) - ref[0][j]) < 1e-10);
  }
  SUBCASE("two layers with padding") {
    const auto cfg = tiny_config(2, 2, 8, 12, 10);
    const auto p = random_params(cfg, 5);
    const auto s = sequence({2, 5, 3, 6, 3, 0, 0}, {0, 0, 0, 1, 1, 0, 0}, 5);
    ForwardOptions opt;
    opt.token_vectors = true;
    const auto out = forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt).outputs[0];
    const Mat ref = reference_forward(p, cfg, s);
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(out.cls(static_cast<Eigen::Index>(j)) - ref[0][j]) < 1e-10);
  }
}

TEST_CASE("analytic gradients match central differences") {
  for (double dropout : {0.0, 0.1}) {
    CAPTURE(dropout);
    auto cfg = tiny_config(1, 2, 8, 16, 12);
    cfg.dropout_rate = dropout;
    auto p = random_params(cfg, 77);
    const std::vector<PackedSequence> batch{sequence({2, 5, 3, 9, 3, 11, 3}, {0, 0, 0, 1, 1, 0, 0}, 7),
                                            sequence({2, 4, 3, 8, 3, 0, 0}, {0, 0, 0, 1, 1, 0, 0}, 5)};
    Matrix<double> w(2, 8);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1, 1);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);

    ForwardOptions opt;
    opt.mode = dropout > 0 ? Mode::train : Mode::eval;
    opt.record_trace = true;
    opt.dropout_seed = 1234;
    const auto fr = forward(p, cfg, std::span<const PackedSequence>(batch), opt);
    const auto grads = backward(p, *fr.trace, w);

    const double step = 1e-4;
    auto gviews = tensors(grads);
    auto pviews = tensors(p);
    for (std::size_t k = 0; k < pviews.size(); ++k) {
      double max_diff = 0, max_mag = 0;
      for (Eigen::Index i = 0; i < pviews[k].size(); ++i) {
        double& x = pviews[k].data[i];
        const double saved = x;
        x = saved + step;
        const double up = cls_objective(p, cfg, batch, w, opt);
        x = saved - step;
        const double down = cls_objective(p, cfg, batch, w, opt);
        x = saved;
        const double numeric = (up - down) / (2 * step);
        const double analytic = gviews[k].data[i];
        max_diff = std::max(max_diff, std::abs(numeric - analytic));
        max_mag = std::max({max_mag, std::abs(numeric), std::abs(analytic)});
      }
      // The key bias has an identically zero gradient (softmax shift
      // invariance), so the denominator has an absolute floor.
      CAPTURE(pviews[k].name);
      CHECK(max_diff / std::max(max_mag, 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  const auto cfg = tiny_config(2, 2, 8, 16, 12);
  const auto p = random_params(cfg, 4);
  const auto s = sequence({2, 5, 3, 9, 3}, {0, 0, 0, 1, 1}, 5);
  ForwardOptions opt;
  opt.record_trace = true;
  const auto fr = forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt);
  const auto g = backward(p, *fr.trace, Matrix<double>(Matrix<double>::Zero(1, 8)));
  for (const auto& v : tensors(g))
    for (double x : v.span()) CHECK(x == 0.0);
}

TEST_CASE("backward rejects a mismatched trace") {
  const auto cfg = tiny_config(1, 2, 8, 16, 12);
  const auto p = random_params(cfg, 4);
  const auto s = sequence({2, 5, 3}, {0, 0, 0}, 3);
  ForwardOptions opt;
  opt.record_trace = true;
  const auto fr = forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt);
  CHECK_THROWS_AS(backward(p, *fr.trace, Matrix<double>(Matrix<double>::Zero(2, 8))), PreconditionError);
  const auto other_cfg = tiny_config(2, 2, 8, 16, 12);
  const auto other = random_params(other_cfg, 4);
  CHECK_THROWS_AS(backward(other, *fr.trace, Matrix<double>(Matrix<double>::Zero(1, 8))), PreconditionError);
}

TEST_CASE("train-mode gradients are reproducible from the recorded masks") {
  auto cfg = tiny_config(1, 2, 8, 16, 12);
  cfg.dropout_rate = 0.3;
  const auto p = random_params(cfg, 9);
  const auto s = sequence({2, 5, 3, 9, 3}, {0, 0, 0, 1, 1}, 5);
  ForwardOptions opt;
  opt.mode = Mode::train;
  opt.dropout_seed = 55;
  const Matrix<double> w = Matrix<double>::Ones(1, 8);
  const auto a = forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt);
  const auto b = forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt);
  CHECK(a.outputs[0].cls == b.outputs[0].cls);
  const auto ga = backward(p, *a.trace, w), gb = backward(p, *b.trace, w);
  const auto va = tensors(ga), vb = tensors(gb);
  for (std::size_t k = 0; k < va.size(); ++k)
    CHECK(std::equal(va[k].span().begin(), va[k].span().end(), vb[k].span().begin()));
  opt.dropout_seed = 56;
  CHECK(forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt).outputs[0].cls != a.outputs[0].cls);
}

TEST_CASE("attention rows are distributions over unmasked keys") {
  const auto cfg = tiny_config(2, 2, 8, 16, 12);
  const auto p = random_params(cfg, 31);
  const auto s = sequence({2, 5, 3, 9, 3, 0, 0, 0}, {0, 0, 0, 1, 1, 0, 0, 0}, 5);
  ForwardOptions opt;
  opt.attention_maps = true;
  const auto out = forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt).outputs[0];
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) {
      const auto& m = out.attention_map(l, h);
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        CHECK(std::abs(m.row(i).sum() - 1.0) < 1e-6);
        for (Eigen::Index j = 5; j < m.cols(); ++j) CHECK(m(i, j) == 0.0);
      }
    }
  const auto cls = extract_cls_attention(out, 1);
  CHECK(cls.positions == std::vector<int>{0, 1, 2, 3, 4});
  REQUIRE(cls.heads.size() == 2);
  for (int h = 0; h < 2; ++h)
    for (std::size_t j = 0; j < 5; ++j) CHECK(cls.heads[static_cast<std::size_t>(h)][j] == out.attention_map(1, h)(0, static_cast<Eigen::Index>(j)));
  CHECK_THROWS_AS(extract_cls_attention(out, 2), ArgumentError);
  CHECK_THROWS_AS(extract_cls_attention(out, -1), ArgumentError);
}

TEST_CASE("a lone [CLS] attends only to itself") {
  const auto cfg = tiny_config(1, 2, 8, 16, 12);
  const auto p = random_params(cfg, 2);
  const auto s = sequence({2, 0, 0, 0}, {0, 0, 0, 0}, 1);
  ForwardOptions opt;
  opt.attention_maps = true;
  const auto out = forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt).outputs[0];
  const auto cls = extract_cls_attention(out, 0);
  REQUIRE(cls.positions == std::vector<int>{0});
  for (const auto& h : cls.heads) CHECK(h[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("attention export needs maps") {
  const auto cfg = tiny_config(1, 2, 8, 16, 12);
  const auto p = random_params(cfg, 2);
  const auto s = sequence({2, 5, 3}, {0, 0, 0}, 3);
  const auto out = forward(p, cfg, std::span<const PackedSequence>(&s, 1)).outputs[0];
  CHECK_THROWS_AS(extract_cls_attention(out, 0), PreconditionError);
}

TEST_CASE("layer norm outputs are standardized") {
  const auto cfg = tiny_config(2, 2, 8, 16, 12);
  const auto p = random_params(cfg, 12);
  const auto s = sequence({2, 5, 3, 9, 3, 11, 3}, {0, 0, 0, 1, 1, 0, 0}, 7);
  ForwardOptions opt;
  opt.record_trace = true;
  const auto fr = forward(p, cfg, std::span<const PackedSequence>(&s, 1), opt);
  auto check = [](const LayerNormCache<double>& c) {
    for (Eigen::Index i = 0; i < c.normalized.rows(); ++i) {
      const auto r = c.normalized.row(i);
      const double mean = r.mean();
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs((r.array() - mean).square().mean() - 1.0) < 1e-6);
    }
  };
  check(fr.trace->embedding_ln);
  for (const auto& lt : fr.trace->layers) {
    check(lt.attention_ln);
    check(lt.output_ln);
  }
}

TEST_CASE("batch composition does not leak between examples") {
  const auto cfg = tiny_config(2, 2, 8, 16, 12);
  const auto p = random_params(cfg, 13);
  std::vector<PackedSequence> batch{sequence({2, 5, 3, 9, 3}, {0, 0, 0, 1, 1}, 5),
                                    sequence({2, 4, 4, 3, 7, 3, 0}, {0, 0, 0, 0, 1, 1, 0}, 6),
                                    sequence({2, 6, 3, 8, 8, 3, 10, 3}, {0, 0, 0, 1, 1, 1, 0, 0}, 8)};
  const auto a = forward(p, cfg, std::span<const PackedSequence>(batch)).outputs;
  std::vector<PackedSequence> permuted{batch[2], batch[0], batch[1]};
  const auto b = forward(p, cfg, std::span<const PackedSequence>(permuted)).outputs;
  CHECK((a[0].cls - b[1].cls).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a[1].cls - b[2].cls).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a[2].cls - b[0].cls).cwiseAbs().maxCoeff() < 1e-12);
  const auto single = forward(p, cfg, std::span<const PackedSequence>(&batch[1], 1)).outputs;
  CHECK((single[0].cls - a[1].cls).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("eval-mode forward is deterministic") {
  auto cfg = tiny_config(2, 2, 8, 16, 12);
  cfg.dropout_rate = 0.5;
  const auto p = init_params<float>(cfg);
  const auto s = sequence({2, 5, 3, 9, 3}, {0, 0, 0, 1, 1}, 5);
  const auto a = forward(p, cfg, std::span<const PackedSequence>(&s, 1)).outputs[0].cls;
  const auto b = forward(p, cfg, std::span<const PackedSequence>(&s, 1)).outputs[0].cls;
  CHECK(a == b);
}

TEST_CASE("initialization") {
  const auto cfg = tiny_config(2, 2, 8, 16, 12);
  const auto a = init_params<float>(cfg);
  const auto b = init_params<float>(cfg);
  const auto va = tensors(a), vb = tensors(b);
  for (std::size_t k = 0; k < va.size(); ++k) {
    CAPTURE(va[k].name);
    CHECK(std::equal(va[k].span().begin(), va[k].span().end(), vb[k].span().begin()));
    for (float x : va[k].span()) {
      if (va[k].name.ends_with("gamma")) CHECK(x == 1.0f);
      else if (va[k].name.ends_with("bias") || va[k].name.ends_with("beta")) CHECK(x == 0.0f);
      else CHECK(std::abs(x) <= 0.04f);
    }
  }
  auto other = cfg;
  other.seed = 4;
  CHECK(init_params<float>(other).token_embedding != a.token_embedding);
}

TEST_CASE("configuration and input errors") {
  auto cfg = tiny_config(1, 4, 6, 8, 10);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(init_params<float>(cfg), ConfigError);
  cfg = tiny_config(1, 2, 8, 16, 12);
  cfg.max_positions = 600;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config(1, 2, 8, 16, 12);
  auto p = init_params<double>(cfg);
  std::vector<TokenId> ids(17, 5);
  const auto long_seq = sequence(ids, std::vector<std::int8_t>(17, 0), 17);
  CHECK_THROWS_AS(forward(p, cfg, std::span<const PackedSequence>(&long_seq, 1)), InputError);
  const auto bad_token = sequence({2, 99, 3}, {0, 0, 0}, 3);
  CHECK_THROWS_AS(forward(p, cfg, std::span<const PackedSequence>(&bad_token, 1)), InputError);

  p.layers[0].ffn_in_weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto ok = sequence({2, 5, 3}, {0, 0, 0}, 3);
  CHECK_THROWS_AS(forward(p, cfg, std::span<const PackedSequence>(&ok, 1)), NumericError);

  auto wrong = init_params<double>(cfg);
  wrong.layers[0].query_weight.resize(4, 4);
  CHECK_THROWS_AS(forward(wrong, cfg, std::span<const PackedSequence>(&ok, 1)), ConfigMismatchError);
}

TEST_CASE("GELU derivative") {
  for (double x : {-3.0, -1.0, -0.2, 0.0, 0.4, 1.5, 4.0}) {
    const double h = 1e-6;
    const double numeric = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(gelu_derivative(x) == doctest::Approx(numeric).epsilon(1e-7));
    CHECK(gelu(x) == doctest::Approx(gelu_ref(x)).epsilon(1e-15));
  }
}
