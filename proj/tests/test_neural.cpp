#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cpdrums/model.h"
#include "cpdrums/token_dataset.h"
#include "cpdrums/train.h"
#include "oracles.h"
#include "test_support.h"

using namespace cpdrums;
using namespace cpdrums::nn;

namespace {

Mat<double> random_mat(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2 * uniform01(rng) - 1) * scale;
  return m;
}

Param<double> random_param(std::mt19937_64& rng, const std::string& name, int r, int c, double scale = 1.0) {
  Param<double> p;
  p.name = name;
  p.value = random_mat(rng, r, c, scale);
  p.zero_grad();
  return p;
}

/// Scalar test loss: sum(out * C) for a fixed random C.
struct Projector {
  std::mt19937_64 rng{99};
  std::map<std::pair<Eigen::Index, Eigen::Index>, Mat<double>> weights;

  Var operator()(Tape<double>& t, Var out) {
    const auto key = std::make_pair(t.value(out).rows(), t.value(out).cols());
    if (!weights.count(key)) weights[key] = random_mat(rng, static_cast<int>(key.first), static_cast<int>(key.second));
    return nn::sum(t, nn::mul(t, out, t.constant(weights[key])));
  }
};

struct Corpus {
  std::vector<Phrase> phrases;
  VocabPair vocab;
  std::vector<TokenizedPhrase> tokens;
};

Corpus small_corpus(int n, int max_bars, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Corpus c;
  for (int i = 0; i < n; ++i) {
    auto p = testing::random_phrase(rng, 4, max_bars);
    p.source_id = "p" + std::to_string(i);
    c.phrases.push_back(p);
  }
  c.vocab = build_vocab(c.phrases, CodecOptions{});
  for (const auto& p : c.phrases) c.tokens.push_back(tokenize_phrase(p, c.vocab));
  return c;
}

ModelConfig toy_config(const VocabPair& v) {
  ModelConfig c;
  c.enc_emb_sizes = {3, 2, 2, 3, 3};
  c.dec_emb_sizes = {3, 3};
  c.model_dim = 8;
  c.bilstm_layers = 2;
  c.bilstm_hidden = 4;
  c.dec_layers = 2;
  c.heads = 2;
  c.ffn_dim = 8;
  c.dropout = 0.0;
  c.max_enc_len = 64;
  c.max_dec_len = 12;
  c.set_vocab(v);
  return c;
}

template <class T>
std::vector<T> head(const std::vector<T>& v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size()))};
}

constexpr double kTol = 1e-3;

}  // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
  std::mt19937_64 rng(1);
  auto a = random_param(rng, "a", 3, 4);
  auto b = random_param(rng, "b", 4, 5);
  auto c = random_param(rng, "c", 3, 4);
  auto bias = random_param(rng, "bias", 1, 4);
  auto row = random_param(rng, "row", 1, 4);
  Projector proj;
  const std::vector<Param<double>*> ps = {&a, &b, &c, &bias, &row};

  auto check = [&](const char* what, auto build) {
    const auto r = oracle::grad_check(ps, [&](Tape<double>& t) { return proj(t, build(t)); });
    INFO(what << ": " << r.worst);
    CHECK(r.elementwise_ok(kTol));
  };
  check("matmul", [&](Tape<double>& t) { return matmul(t, t.param(a), t.param(b)); });
  check("add", [&](Tape<double>& t) { return nn::add(t, t.param(a), t.param(c)); });
  check("mul", [&](Tape<double>& t) { return nn::mul(t, t.param(a), t.param(c)); });
  check("scale", [&](Tape<double>& t) { return nn::scale(t, t.param(a), -2.5); });
  check("add_row", [&](Tape<double>& t) { return add_row(t, t.param(a), t.param(bias)); });
  check("tanh", [&](Tape<double>& t) { return nn::tanh(t, t.param(a)); });
  check("sigmoid", [&](Tape<double>& t) { return sigmoid(t, t.param(a)); });
  check("relu", [&](Tape<double>& t) { return relu(t, t.param(a)); });
  check("gelu", [&](Tape<double>& t) { return gelu(t, t.param(a)); });
  check("concat", [&](Tape<double>& t) { return concat_cols(t, {t.param(a), t.param(c), t.param(a)}); });
  check("take_row", [&](Tape<double>& t) { return take_row(t, t.param(a), 2); });
  check("repeat_rows", [&](Tape<double>& t) { return repeat_rows(t, t.param(row), 5); });
  check("layer_norm", [&](Tape<double>& t) { return layer_norm(t, t.param(a), t.param(row), t.param(bias)); });
  check("dropout", [&](Tape<double>& t) {
    std::mt19937_64 mask_rng(5);  // same mask on every evaluation
    return dropout(t, t.param(a), 0.4, mask_rng);
  });
}

TEST_CASE("embedding and cross entropy match finite differences") {
  std::mt19937_64 rng(2);
  auto table = random_param(rng, "table", 6, 3);
  auto logits = random_param(rng, "logits", 5, 6, 2.0);
  Projector proj;
  const std::vector<Param<double>*> ps = {&table, &logits};
  auto r = oracle::grad_check(ps, [&](Tape<double>& t) { return proj(t, embed(t, t.param(table), {0, 3, 3, 5})); });
  CHECK_MESSAGE(r.elementwise_ok(kTol), r.worst);
  r = oracle::grad_check(ps, [&](Tape<double>& t) { return cross_entropy(t, t.param(logits), {1, 0, 5, 2, 2}, 0); });
  CHECK_MESSAGE(r.elementwise_ok(kTol), r.worst);
  Tape<double> t;
  CHECK_THROWS_AS(embed(t, t.param(table), {6}), ShapeError);
  CHECK_THROWS_AS(embed(t, t.param(table), {-1}), ShapeError);
}

TEST_CASE("lstm gates match finite differences at hidden 4") {
  std::mt19937_64 rng(3);
  const int H = 4, L = 7;
  auto x = random_param(rng, "x", L, 3);
  auto wx = random_param(rng, "wx", 3, 4 * H, 0.7);
  auto wh = random_param(rng, "wh", H, 4 * H, 0.7);
  auto b = random_param(rng, "b", 1, 4 * H, 0.5);
  Projector proj;
  for (bool reverse : {false, true}) {
    const auto r = oracle::grad_check({&x, &wx, &wh, &b}, [&](Tape<double>& t) {
      return proj(t, lstm(t, linear(t, t.param(x), t.param(wx), t.param(b)), t.param(wh), reverse));
    });
    INFO("reverse " << reverse << ": " << r.worst);
    CHECK(r.elementwise_ok(kTol));
  }
}

TEST_CASE("attention matches finite differences") {
  std::mt19937_64 rng(4);
  const int L = 9, D = 8, heads = 2, window = 3;
  auto q = random_param(rng, "q", L, D);
  auto k = random_param(rng, "k", L, D);
  auto v = random_param(rng, "v", L, D);
  auto rel = random_param(rng, "rel", heads * (window + 1), D / heads);
  auto kx = random_param(rng, "kx", 5, D);
  auto vx = random_param(rng, "vx", 5, D);
  Projector proj;
  auto r = oracle::grad_check({&q, &k, &v, &rel}, [&](Tape<double>& t) {
    return proj(t, attention(t, t.param(q), t.param(k), t.param(v), t.param(rel), {heads, true, window}));
  });
  CHECK_MESSAGE(r.elementwise_ok(kTol), "relative: " << r.worst);
  r = oracle::grad_check({&q, &k, &v}, [&](Tape<double>& t) {
    return proj(t, attention(t, t.param(q), t.param(k), t.param(v), Var{}, {heads, true, 0}));
  });
  CHECK_MESSAGE(r.elementwise_ok(kTol), "causal: " << r.worst);
  r = oracle::grad_check({&q, &kx, &vx}, [&](Tape<double>& t) {
    return proj(t, attention(t, t.param(q), t.param(kx), t.param(vx), Var{}, {heads, false, 0}));
  });
  CHECK_MESSAGE(r.elementwise_ok(kTol), "cross: " << r.worst);
}

TEST_CASE("skewed relative attention equals the direct computation") {
  std::mt19937_64 rng(6);
  for (int L : {1, 2, 4, 7, 16}) {
    for (int window : {0, 1, L / 2, L + 3}) {
      const int heads = 2, D = 8;
      const auto q = random_mat(rng, L, D), k = random_mat(rng, L, D), v = random_mat(rng, L, D);
      const auto rel = random_mat(rng, heads * (window + 1), D / heads);
      Tape<double> t;
      const auto got = t.value(attention(t, t.constant(q), t.constant(k), t.constant(v), t.constant(rel),
                                         {heads, true, window}));
      const auto want = oracle::naive_attention<double>(q, k, v, rel, heads, window);
      CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12);

      Tape<float> tf;
      const Mat<float> qf = q.cast<float>(), kf = k.cast<float>(), vf = v.cast<float>(), rf = rel.cast<float>();
      const auto gotf = tf.value(attention(tf, tf.constant(qf), tf.constant(kf), tf.constant(vf), tf.constant(rf),
                                           {heads, true, window}));
      CHECK((gotf.cast<double>() - want).cwiseAbs().maxCoeff() <= 1e-5);

      // zero relative table is plain causal attention
      const Mat<double> zero = Mat<double>::Zero(rel.rows(), rel.cols());
      const auto vanilla = t.value(attention(t, t.constant(q), t.constant(k), t.constant(v), t.constant(zero),
                                             {heads, true, window}));
      const auto plain = t.value(attention(t, t.constant(q), t.constant(k), t.constant(v), Var{}, {heads, true, 0}));
      CHECK((vanilla - plain).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((plain - oracle::naive_attention<double>(q, k, v, Mat<double>(), heads, 0)).cwiseAbs().maxCoeff() <=
            1e-12);
    }
  }
}

TEST_CASE("single position attention returns the value row") {
  std::mt19937_64 rng(7);
  const auto q = random_mat(rng, 1, 4), k = random_mat(rng, 1, 4), v = random_mat(rng, 1, 4);
  const auto rel = random_mat(rng, 2 * 1, 2);
  Tape<double> t;
  const auto out = t.value(attention(t, t.constant(q), t.constant(k), t.constant(v), t.constant(rel), {2, true, 0}));
  CHECK((out - v).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS_AS(attention(t, t.constant(q), t.constant(random_mat(rng, 1, 6)), t.constant(v), Var{}, {2, true, 0}),
                  ShapeError);
  CHECK_THROWS_AS(attention(t, t.constant(q), t.constant(k), t.constant(v), t.constant(random_mat(rng, 3, 2)),
                            {2, true, 0}),
                  ShapeError);
}

TEST_CASE("skew rearranges distance columns to key columns") {
  const int L = 4;
  Mat<double> qer(L, L);
  for (int i = 0; i < L; ++i) {
    for (int m = 0; m < L; ++m) qer(i, m) = 10 * i + m;
  }
  const auto s = skew<double>(qer);
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j <= i; ++j) CHECK(s(i, j) == qer(i, L - 1 - (i - j)));
  }
}

TEST_CASE("full model gradients match finite differences") {
  for (std::uint64_t draw = 0; draw < 4; ++draw) {
    const auto corpus = small_corpus(4, 1, 11 + draw);
    for (bool cross : {false, true}) {
      auto cfg = toy_config(corpus.vocab);
      cfg.cross_attention = cross;
      Model<double> model(cfg, 3 + draw);
      const auto& p = corpus.tokens[0];
      const auto condition = head(p.condition, 12);
      const auto tf = teacher_forcing(head(p.drums, 12));
      // the cross-attention variant is more curved at these widths; checked with a finer step
      const double eps = cross ? 1e-4 : 1e-3;
      const auto r = oracle::grad_check(
          model.params(),
          [&](Tape<double>& t) {
            const auto f = model.forward(t, condition, tf.inputs, false, nullptr);
            return nn::scale(t, model.loss_sum(t, f, tf), 1.0 / static_cast<double>(tf.onset_targets.size()));
          },
          eps);
      INFO("draw " << draw << " cross " << cross << ": " << r.checked << " entries, per-tensor " << r.max_rel
                   << ", worst entry " << r.max_elem << " (" << r.worst << "), refined " << r.worst_refined);
      CHECK(r.ok(kTol));
      CHECK(r.worst_refined <= kTol);
    }
  }
}

TEST_CASE("encoder embedding fusion") {
  const auto corpus = small_corpus(6, 2, 12);
  auto cfg = paper_preset();
  cfg.set_vocab(corpus.vocab);
  cfg.bilstm_layers = 1;
  cfg.bilstm_hidden = 8;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.dec_layers = 1;
  cfg.ffn_dim = 8;
  Model<float> model(cfg, 1);
  Tape<float> t;
  Var concat;
  const auto out = model.embed_encoder(t, {corpus.tokens[0].condition[0], EncoderWord{}}, &concat);
  CHECK(t.value(concat).cols() == 240);
  CHECK(t.value(out).cols() == cfg.model_dim);
  // PAD word picks row 0 of every table
  Eigen::Index at = 0;
  for (int d = 0; d < 5; ++d) {
    const auto& table = model.param("enc.emb" + std::to_string(d)).value;
    CHECK(t.value(concat).row(1).segment(at, table.cols()) == table.row(0));
    at += table.cols();
  }
  EncoderWord bad;
  bad.value = cfg.enc_vocab[4];
  CHECK_THROWS_AS(model.embed_encoder(t, {bad}), ShapeError);
}

TEST_CASE("encoder latent") {
  const auto corpus = small_corpus(4, 1, 13);
  auto cfg = toy_config(corpus.vocab);
  Model<double> model(cfg, 2);
  {
    Tape<double> t;
    auto [z, states] = model.encode(t, {corpus.tokens[0].condition[0]}, false, nullptr);
    CHECK(t.value(z).cols() == cfg.model_dim);
    CHECK(t.value(z).allFinite());
    CHECK(t.value(states).cols() == 2 * cfg.bilstm_hidden);
  }
  for (auto* p : model.params()) {
    if (p->name != "enc.z.b") p->value.setZero();
  }
  Tape<double> t;
  auto [z, states] = model.encode(t, corpus.tokens[0].condition, false, nullptr);
  CHECK(t.value(z) == model.param("enc.z.b").value);
  cfg.max_enc_len = 2;
  Model<double> short_model(cfg, 2);
  CHECK_THROWS_AS(short_model.encode(t, head(corpus.tokens[0].condition, 3), false, nullptr), ModelError);
  CHECK_THROWS_AS(short_model.encode(t, {}, false, nullptr), ModelError);
}

TEST_CASE("decoder heads") {
  const auto corpus = small_corpus(6, 2, 14);
  auto cfg = toy_config(corpus.vocab);
  cfg.max_dec_len = 64;
  Model<float> model(cfg, 4);
  const auto& p = corpus.tokens[1];
  const auto tf = teacher_forcing(head(p.drums, 40));
  Tape<float> t;
  const auto f = model.forward(t, p.condition, tf.inputs, false, nullptr);
  CHECK(t.value(f.drums_logits).cols() == 16);
  for (const Var logits : {f.onset_logits, f.drums_logits}) {
    const auto& l = t.value(logits);
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
      const Mat<double> row = l.row(r).cast<double>();
      const double sum = (row.array() - row.maxCoeff()).exp().sum();
      const Mat<double> prob = (row.array() - row.maxCoeff()).exp() / sum;
      CHECK(std::abs(prob.sum() - 1.0) <= 1e-5);
    }
  }
  CHECK_THROWS_AS(model.decode(t, tf.inputs, Var{}, Var{}, false, nullptr), ModelError);
}

TEST_CASE("decoder is causal") {
  const auto corpus = small_corpus(6, 2, 15);
  auto cfg = toy_config(corpus.vocab);
  cfg.max_dec_len = 32;
  Model<float> model(cfg, 5);
  const auto& p = corpus.tokens[2];
  const auto words = head(p.drums, 30);
  Tape<float> base;
  const auto f0 = model.forward(base, p.condition, words, false, nullptr);
  const DecoderSpecials sp(corpus.vocab.decoder);
  for (std::size_t pos = 0; pos < words.size(); ++pos) {
    auto changed = words;
    changed[pos].onset = changed[pos].onset == sp.onset_bar ? sp.first_position : sp.onset_bar;
    changed[pos].drums = changed[pos].drums == sp.first_component ? sp.drums_eos : sp.first_component;
    Tape<float> t;
    const auto f = model.forward(t, p.condition, changed, false, nullptr);
    const auto n = static_cast<Eigen::Index>(pos);
    CHECK(t.value(f.onset_logits).topRows(n) == base.value(f0.onset_logits).topRows(n));
    CHECK(t.value(f.drums_logits).topRows(n) == base.value(f0.drums_logits).topRows(n));
    CHECK(t.value(f.onset_logits).row(n) != base.value(f0.onset_logits).row(n));
  }
}

TEST_CASE("loss conventions") {
  const auto corpus = small_corpus(4, 1, 16);
  auto cfg = toy_config(corpus.vocab);
  Model<double> model(cfg, 6);
  const int vo = cfg.dec_vocab[0], vd = cfg.dec_vocab[1];
  const DecoderSpecials sp(corpus.vocab.decoder);
  TeacherForcing tf;
  tf.onset_targets = {sp.first_position, sp.first_position + 1, sp.onset_eos};
  tf.drums_targets = {sp.first_component, sp.first_component + 3, sp.drums_eos};
  const int L = 3;

  Tape<double> t;
  ForwardResult<double> uniform{Var{}, Var{}, t.constant(Mat<double>::Zero(L, vo)), t.constant(Mat<double>::Zero(L, vd))};
  int count = 0;
  const double u = t.value(model.loss_sum(t, uniform, tf, &count))(0, 0) / count;
  CHECK(count == 3);
  CHECK(u == doctest::Approx(std::log(vo) + std::log(vd)).epsilon(1e-12));

  Mat<double> on = Mat<double>::Constant(L, vo, -1e4), dr = Mat<double>::Constant(L, vd, -1e4);
  for (int i = 0; i < L; ++i) {
    on(i, tf.onset_targets[static_cast<std::size_t>(i)]) = 1e4;
    dr(i, tf.drums_targets[static_cast<std::size_t>(i)]) = 1e4;
  }
  ForwardResult<double> perfect{Var{}, Var{}, t.constant(on), t.constant(dr)};
  CHECK(t.value(model.loss_sum(t, perfect, tf))(0, 0) == 0.0);

  // padding rows change nothing
  std::mt19937_64 rng(3);
  const auto lo = random_mat(rng, L, vo), ld = random_mat(rng, L, vd);
  ForwardResult<double> plain{Var{}, Var{}, t.constant(lo), t.constant(ld)};
  const double before = t.value(model.loss_sum(t, plain, tf, &count))(0, 0) / count;
  auto padded_tf = tf;
  padded_tf.onset_targets.insert(padded_tf.onset_targets.end(), 4, kPadId);
  padded_tf.drums_targets.insert(padded_tf.drums_targets.end(), 4, kPadId);
  Mat<double> lo2(L + 4, vo), ld2(L + 4, vd);
  lo2 << lo, random_mat(rng, 4, vo);
  ld2 << ld, random_mat(rng, 4, vd);
  ForwardResult<double> padded{Var{}, Var{}, t.constant(lo2), t.constant(ld2)};
  const double after = t.value(model.loss_sum(t, padded, padded_tf, &count))(0, 0) / count;
  CHECK(count == 3);
  CHECK(after == before);
}

TEST_CASE("training step") {
  const auto corpus = small_corpus(6, 2, 17);
  auto cfg = toy_config(corpus.vocab);
  cfg.max_dec_len = 200;
  cfg.lr = 0.0;
  std::vector<const TokenizedPhrase*> batch;
  for (const auto& p : corpus.tokens) batch.push_back(&p);

  SUBCASE("zero learning rate leaves parameters untouched") {
    for (double wd : {0.0, 0.01}) {
      cfg.weight_decay = wd;
      Model<float> model(cfg, 1);
      Model<float> ref(cfg, 1);
      AdamW opt(model, cfg.lr, cfg.weight_decay);
      train_step(model, opt, batch, 9);
      for (std::size_t i = 0; i < model.params().size(); ++i) {
        CHECK(model.params()[i]->value == ref.params()[i]->value);
      }
    }
  }
  SUBCASE("all-PAD targets are rejected") {
    Model<float> model(cfg, 1);
    AdamW opt(model, cfg.lr, cfg.weight_decay);
    auto pad = corpus.tokens[0];
    pad.drums = {DecoderWord{}, DecoderWord{}, DecoderWord{}};
    CHECK_THROWS_AS(train_step(model, opt, {&pad}, 1), TrainingError);
  }
  SUBCASE("loss decreases and runs repeat exactly") {
    cfg.lr = 3e-3;
    cfg.dropout = 0.1;
    std::vector<std::vector<double>> curves;
    std::vector<std::vector<float>> finals;
    for (int run = 0; run < 2; ++run) {
      Model<float> model(cfg, 21);
      AdamW opt(model, cfg.lr, cfg.weight_decay);
      std::vector<double> curve;
      for (int s = 0; s < 50; ++s) curve.push_back(train_step(model, opt, batch, 77).loss);
      curves.push_back(curve);
      std::vector<float> flat;
      for (const auto* p : model.params()) flat.insert(flat.end(), p->value.data(), p->value.data() + p->value.size());
      finals.push_back(flat);
    }
    CHECK(curves[0] == curves[1]);
    CHECK(finals[0] == finals[1]);
    const double first = (curves[0][0] + curves[0][1] + curves[0][2]) / 3;
    const double last = (curves[0][47] + curves[0][48] + curves[0][49]) / 3;
    MESSAGE("loss " << first << " -> " << last);
    CHECK(last < first);
  }
}

TEST_CASE("sampling") {
  std::mt19937_64 rng(8);
  const std::vector<double> dist = {0.1, 0.2, 0.0, 0.7};
  CHECK_THROWS_AS(sample(dist, 0.0, rng), ModelError);
  CHECK_THROWS_AS(sample(dist, -1.0, rng), ModelError);
  for (int i = 0; i < 200; ++i) CHECK(sample(dist, 1e-6, rng) == 3);

  for (double tau : {1.0, 0.5, 1.2}) {
    std::vector<double> logits;
    for (double p : dist) logits.push_back(p > 0 ? std::log(p) : -INFINITY);
    std::vector<double> expect(dist.size());
    double z = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) z += (expect[i] = dist[i] > 0 ? std::pow(dist[i], 1.0 / tau) : 0.0);
    for (auto& e : expect) e /= z;
    const int n = 100000;
    std::vector<int> counts(dist.size(), 0);
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample(dist, tau, rng))];
    for (std::size_t i = 0; i < dist.size(); ++i) {
      const double sigma = std::sqrt(n * expect[i] * (1 - expect[i]));
      INFO("tau " << tau << " token " << i);
      CHECK(std::abs(counts[i] - n * expect[i]) <= 3 * sigma + 1e-9);
    }
  }
  Temperature uniform{true, 1.0};
  for (int i = 0; i < 100; ++i) {
    const double tau = uniform.resolve(rng);
    CHECK(tau >= 0.8);
    CHECK(tau < 1.2);
  }
}

TEST_CASE("generation stop rules") {
  const auto corpus = small_corpus(8, 3, 18);
  auto cfg = toy_config(corpus.vocab);
  cfg.max_dec_len = 120;
  Model<float> model(cfg, 7);
  std::mt19937_64 rng(4);
  const DecoderSpecials sp(corpus.vocab.decoder);
  for (const auto& p : corpus.tokens) {
    GenerateOptions opts;
    const auto g = generate(model, p.condition, p.bars, corpus.vocab.decoder, opts, rng);
    CHECK(g.words.front() == sp.bos());
    CHECK(g.words.back() == sp.eos());
    CHECK(static_cast<int>(g.words.size()) <= cfg.max_dec_len);
    const auto bars = std::count(g.words.begin(), g.words.end(), sp.bar());
    if (static_cast<int>(g.words.size()) < cfg.max_dec_len) {
      CHECK(bars == static_cast<long>(p.bars.size()));
      CHECK(check_decoder_grammar(g.words, corpus.vocab.decoder, static_cast<int>(p.bars.size())).empty());
      const auto decoded = decode_drums(g.words, corpus.vocab.decoder, p.bars);
      Phrase back = corpus.phrases[0];
      back.bars = p.bars;
      back.drums = decoded.events;
      CHECK(encode_drums(back, corpus.vocab.decoder) == g.words);
    }
    opts.max_len = 3;
    const auto tiny = generate(model, p.condition, p.bars, corpus.vocab.decoder, opts, rng);
    CHECK(tiny.words.size() <= 3);
  }
}

TEST_CASE("checkpoints and resume") {
  namespace fs = std::filesystem;
  const auto corpus = small_corpus(10, 2, 19);
  auto cfg = toy_config(corpus.vocab);
  cfg.max_dec_len = 200;
  cfg.batch_size = 3;
  cfg.dropout = 0.1;
  const std::vector<TokenizedPhrase> train_set(corpus.tokens.begin(), corpus.tokens.begin() + 8);
  const std::vector<TokenizedPhrase> valid_set(corpus.tokens.begin() + 8, corpus.tokens.end());
  const auto root = fs::temp_directory_path() / "cpdrums_test_ckpt";
  fs::remove_all(root);

  TrainOptions full;
  full.out_dir = (root / "full").string();
  full.max_epochs = 4;
  Model<float> a(cfg, 3);
  const auto ra = train(a, train_set, valid_set, 42, full);
  CHECK(ra.step_losses.size() == 12);
  CHECK(fs::exists(root / "full" / "best.ckpt"));
  CHECK(fs::exists(root / "full" / "epoch-3.ckpt"));

  TrainOptions part = full;
  part.out_dir = (root / "part").string();
  part.max_steps = 5;  // stops inside the second epoch
  Model<float> b(cfg, 3);
  const auto rb1 = train(b, train_set, valid_set, 42, part);
  CHECK(rb1.step_losses.size() == 5);
  part.max_steps = 0;
  Model<float> c(cfg, 99);  // weights come from the checkpoint
  const auto rb2 = train(c, train_set, valid_set, 42, part);
  std::vector<double> joined = rb1.step_losses;
  joined.insert(joined.end(), rb2.step_losses.begin(), rb2.step_losses.end());
  REQUIRE(joined.size() == ra.step_losses.size());
  for (std::size_t i = 0; i < joined.size(); ++i) CHECK(std::abs(joined[i] - ra.step_losses[i]) <= 1e-6);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i]->value == c.params()[i]->value);

  const auto ckpt = load_checkpoint((root / "full" / "last.ckpt").string());
  CHECK(ckpt.config == cfg);
  CHECK(ckpt.state.step == 12);
  Model<float> d(cfg, 1234);
  restore(ckpt, d, nullptr);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i]->value == d.params()[i]->value);

  auto other = cfg;
  other.ffn_dim = 16;
  Model<float> e(other, 1);
  CHECK_THROWS_AS(restore(ckpt, e, nullptr), TrainingError);
  {
    std::ofstream f(root / "broken.ckpt", std::ios::binary);
    f << "CPCK";
  }
  CHECK_THROWS_AS(load_checkpoint((root / "broken.ckpt").string()), TrainingError);
  const auto lines = read_text_file((root / "full" / "train_log.jsonl").string());
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 16);
  fs::remove_all(root);
}

TEST_CASE("early stopping") {
  namespace fs = std::filesystem;
  const auto corpus = small_corpus(6, 1, 20);
  auto cfg = toy_config(corpus.vocab);
  cfg.max_dec_len = 200;
  cfg.lr = 0.0;  // validation never improves after the first epoch
  cfg.patience = 2;
  const auto dir = fs::temp_directory_path() / "cpdrums_test_early";
  fs::remove_all(dir);
  TrainOptions opts;
  opts.out_dir = dir.string();
  opts.max_epochs = 50;
  Model<float> m(cfg, 1);
  const auto r = train(m, corpus.tokens, corpus.tokens, 1, opts);
  CHECK(r.early_stopped);
  CHECK(r.state.epoch == 3);
  CHECK(r.state.best_epoch == 0);
  fs::remove_all(dir);
}

TEST_CASE("presets") {
  const auto p = paper_preset();
  CHECK(p.enc_fused_dim() == 240);
  CHECK(p.dec_fused_dim() == 192);
  CHECK(p.bilstm_layers == 3);
  CHECK(p.bilstm_hidden == 512);
  CHECK(p.dec_layers == 4);
  CHECK(p.heads == 8);
  CHECK(p.ffn_dim == 1024);
  CHECK(p.dropout == 0.3);
  CHECK(p.lr == 2e-5);
  CHECK(p.weight_decay == 0.01);
  CHECK(p.max_enc_len == 597);
  CHECK(p.max_dec_len == 545);
  CHECK(p.rel_window() == 272);
  const auto d = desk_preset();
  CHECK(d.model_dim == 64);
  CHECK(d.dec_layers == 2);
  CHECK(d.heads == 2);
  CHECK(d.ffn_dim == 128);
  CHECK(config_from_json(config_to_json(p)) == p);
  CHECK_THROWS_AS(preset("huge"), ModelError);
}
