#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "antispoof/errors.hpp"
#include "antispoof/model.hpp"
#include "antispoof/nn.hpp"

using namespace antispoof;
using nn::Tensor;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor t(n, c, h, w);
  for (auto& v : t.v) v = d(rng);
  return t;
}

void randomize(nn::Parameter& p, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : p.value) v = d(rng);
}

// Direct "same" convolution, TF padding convention, no im2col.
Tensor naive_conv(const Tensor& x, const nn::Parameter& w, int k, int sh, int sw) {
  const int out_c = w.shape[0];
  const int oh = (x.h + sh - 1) / sh, ow = (x.w + sw - 1) / sw;
  const int pt = std::max((oh - 1) * sh + k - x.h, 0) / 2, pl = std::max((ow - 1) * sw + k - x.w, 0) / 2;
  Tensor y(x.n, out_c, oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < out_c; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (int c = 0; c < x.c; ++c)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int r = i * sh - pt + a, q = j * sw - pl + b;
                if (r < 0 || r >= x.h || q < 0 || q >= x.w) continue;
                acc += w.value[((static_cast<std::size_t>(o) * x.c + c) * k + a) * k + b] * x.at(n, c, r, q);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
  return s;
}

ModelSpec tiny_spec(bool decoder, Pooling pooling) {
  ModelSpec s;
  s.input_kind = FeatureKind::kLfbank;
  s.pooling = pooling;
  s.with_decoder = decoder;
  s.stage_filters = {2, 2, 2, 2};
  s.stage_blocks = {1, 1, 1, 1};
  return s;
}

FeatureMatrix random_feature(FeatureKind kind, int bins, int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FeatureMatrix f;
  f.kind = kind;
  f.data.resize(bins, frames);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data(i) = u(rng);
  return f;
}

}  // namespace

TEST(Layers, ConvMatchesDirectLoopForEveryStride) {
  std::mt19937_64 rng(1);
  for (auto [sh, sw] : {std::pair{1, 1}, std::pair{2, 2}, std::pair{1, 2}, std::pair{2, 1}}) {
    for (int k : {1, 3}) {
      nn::Conv2d conv("c", 3, 4, k, {sh, sw}, false);
      randomize(conv.weight, rng, 1.0);
      const Tensor x = random_tensor(2, 3, 9, 10, 7);
      const Tensor y = conv.forward(x);
      const Tensor e = naive_conv(x, conv.weight, k, sh, sw);
      ASSERT_TRUE(y.same_shape(e));
      for (std::size_t i = 0; i < y.v.size(); ++i) ASSERT_NEAR(y.v[i], e.v[i], 1e-12);
    }
  }
}

TEST(Layers, TransposedConvIsAdjointOfStridedConv) {
  std::mt19937_64 rng(2);
  nn::ConvTranspose2d up("u", 5, 3, 3);
  randomize(up.weight, rng, 1.0);
  nn::Conv2d down("d", 3, 5, 3, {2, 2}, false);
  down.weight.value = up.weight.value;  // [in=5, out=3] of the transpose is [out=5, in=3] of the conv
  const Tensor y = random_tensor(1, 5, 4, 6, 3);
  const Tensor x = random_tensor(1, 3, 8, 12, 4);
  const Tensor uy = up.forward(y);
  ASSERT_EQ(uy.h, 8);
  ASSERT_EQ(uy.w, 12);
  EXPECT_NEAR(dot(uy, x), dot(y, down.forward(x)), 1e-10);
}

TEST(Layers, PreActivationOrderingWithIdentityNormalization) {
  nn::PreActBlock block("b", 2, 2, {1, 1});
  ASSERT_FALSE(block.shortcut.has_value());
  for (auto* bn : {&block.bn1, &block.bn2})
    for (auto& v : bn->running_var.value) v = 1.0 - bn->eps;  // 1 / sqrt(var + eps) == 1
  std::mt19937_64 rng(3);
  randomize(block.conv_a.weight, rng, 0.5);
  randomize(block.conv_b.weight, rng, 0.5);
  Tensor x(1, 2, 4, 5);
  for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = (static_cast<double>(i % 7) - 3.0) * 0.5;
  nn::PreActBlock::Tape tape;
  const Tensor y = block.forward(x, false, tape);
  auto relu = [](Tensor t) {
    for (auto& v : t.v) v = std::max(v, 0.0);
    return t;
  };
  const Tensor e = naive_conv(relu(naive_conv(relu(x), block.conv_a.weight, 3, 1, 1)), block.conv_b.weight, 3, 1, 1);
  for (std::size_t i = 0; i < y.v.size(); ++i) EXPECT_NEAR(y.v[i], e.v[i] + x.v[i], 1e-12);
}

TEST(Layers, BatchNormRunningStatsUseMomentum) {
  nn::BatchNorm2d bn("bn", 1);
  Tensor x(2, 1, 1, 2);
  x.v = {1.0, 3.0, 5.0, 7.0};  // mean 4, population variance 5
  nn::BatchNorm2d::Cache cache;
  bn.forward(x, true, cache);
  bn.update_running(cache);
  EXPECT_NEAR(bn.running_mean.value[0], 0.1 * 4.0, 1e-12);
  EXPECT_NEAR(bn.running_var.value[0], 0.9 + 0.1 * 5.0, 1e-12);
}

TEST(Pooling, GapConstantAndTwoValueChannels) {
  Tensor t(1, 2, 2, 2);
  for (int i = 0; i < 4; ++i) {
    t.v[i] = 3.5;
    t.v[4 + i] = i % 2 ? 2.0 : 0.0;
  }
  const Eigen::VectorXd g = gap(t);
  EXPECT_DOUBLE_EQ(g[0], 3.5);
  EXPECT_DOUBLE_EQ(g[1], 1.0);
}

TEST(Pooling, GavpConstantAndPlusMinusOne) {
  Tensor t(1, 2, 2, 2);
  for (int i = 0; i < 4; ++i) {
    t.v[i] = -2.0;
    t.v[4 + i] = i % 2 ? 1.0 : -1.0;
  }
  const Eigen::VectorXd g = gavp(t);
  ASSERT_EQ(g.size(), 4);
  EXPECT_DOUBLE_EQ(g[0], -2.0);
  EXPECT_DOUBLE_EQ(g[1], 0.0);
  EXPECT_DOUBLE_EQ(g[2], 0.0);
  EXPECT_DOUBLE_EQ(g[3], 1.0);
}

TEST(Pooling, MatchLoopOracles) {
  const Tensor t = random_tensor(1, 128, 11, 13, 5);
  const Eigen::VectorXd g = gap(t), v = gavp(t);
  ASSERT_EQ(g.size(), 128);
  ASSERT_EQ(v.size(), 256);
  for (int c = 0; c < 128; ++c) {
    double sum = 0.0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 13; ++j) sum += t.at(0, c, i, j);
    const double mean = sum / 143.0;
    double sq = 0.0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 13; ++j) sq += (t.at(0, c, i, j) - mean) * (t.at(0, c, i, j) - mean);
    EXPECT_NEAR(g[c], mean, 1e-9);
    EXPECT_NEAR(v[c], mean, 1e-9);
    EXPECT_NEAR(v[128 + c], sq / 143.0, 1e-9);
  }
}

TEST(Spec, StrideTablesPerInputKind) {
  ModelSpec s;
  for (auto kind : {FeatureKind::kLogSpec, FeatureKind::kGdGram}) {
    s.input_kind = kind;
    const auto st = s.strides();
    const nn::Stride expected[5] = {{2, 2}, {2, 2}, {2, 2}, {1, 1}, {1, 1}};
    for (int i = 0; i < 5; ++i) EXPECT_EQ(st[i], expected[i]);
  }
  s.input_kind = FeatureKind::kLfbank;
  const auto st = s.strides();
  const nn::Stride expected[5] = {{2, 2}, {1, 1}, {1, 2}, {2, 2}, {2, 2}};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(st[i], expected[i]);
}

TEST(Spec, InvalidSpecIsRejected) {
  ModelSpec s;
  s.stage_filters = {16, 0, 64, 128};
  EXPECT_THROW(build_model(s), InvalidConfig);
  s = ModelSpec{};
  s.stage_blocks = {3, 4, -1, 3};
  EXPECT_THROW(build_model(s), InvalidConfig);
}

TEST(Shapes, ConvOutputMatchesAnalyticPropagation) {
  for (auto kind : {FeatureKind::kLogSpec, FeatureKind::kGdGram, FeatureKind::kLfbank}) {
    ModelSpec s;
    s.input_kind = kind;
    const Model m(s);
    int h = s.input_bins(), w = 566;
    for (const auto& st : s.strides()) {
      h = (h + st.h - 1) / st.h;
      w = (w + st.w - 1) / st.w;
    }
    EXPECT_EQ(m.conv_output_shape(s.input_bins(), 566), std::make_pair(h, w));
  }
  ModelSpec s;
  EXPECT_EQ(Model(s).conv_output_shape(401, 566), std::make_pair(51, 71));
  s.input_kind = FeatureKind::kLfbank;
  EXPECT_EQ(Model(s).conv_output_shape(80, 566), std::make_pair(10, 36));
}

TEST(Budget, GapLogspecNear134Million) {
  ModelSpec s;
  const auto n = static_cast<double>(Model(s).trainable_parameter_count());
  EXPECT_NEAR(n / 1.34e6, 1.0, 0.02);
}

TEST(Budget, AllVariantsWithinBandAndPoolingVariantsAgree) {
  for (bool dec : {false, true}) {
    ModelSpec gap_spec, gavp_spec;
    gap_spec.with_decoder = gavp_spec.with_decoder = dec;
    gavp_spec.pooling = Pooling::kGavp;
    const Model a(gap_spec), b(gavp_spec);
    const double na = static_cast<double>(a.trainable_parameter_count() - a.decoder_parameter_count());
    const double nb = static_cast<double>(b.trainable_parameter_count() - b.decoder_parameter_count());
    EXPECT_GE(na, 1.31e6);
    EXPECT_LE(na, 1.37e6);
    EXPECT_GE(nb, 1.31e6);
    EXPECT_LE(nb, 1.37e6);
    EXPECT_LT(std::abs(na - nb) / na, 0.01);
  }
}

TEST(Budget, CountMatchesLayerShapeSum) {
  // Summed by hand from the architecture: conv1, 16 pre-activation blocks,
  // three projection shortcuts, post-BN and the GAP head.
  const int f[4] = {16, 32, 64, 128}, blocks[4] = {3, 4, 6, 3};
  std::size_t total = 9 * 16;  // conv1, no bias
  int in = 16;
  for (int s = 0; s < 4; ++s)
    for (int b = 0; b < blocks[s]; ++b) {
      const int out = f[s];
      total += 2 * in + 9 * in * out + 2 * out + 9 * out * out;
      // Stage 1 keeps 16 channels; for LOGSPEC its stride is 2, so it projects too.
      if (b == 0 && (in != out || s < 2)) total += in * out;
      in = out;
    }
  total += 2 * 128 + 128 * 64 + 64 + 64 + 1;
  EXPECT_EQ(Model(ModelSpec{}).trainable_parameter_count(), total);
}

TEST(Budget, DecoderIsUnderTwoPercentOfTotal) {
  ModelSpec s;
  s.with_decoder = true;
  const Model m(s);
  EXPECT_EQ(m.decoder_parameter_count(), 128u * 32 * 9 + 32 + 32 * 16 * 9 + 16 + 16 * 8 * 9 + 8);
  EXPECT_LT(static_cast<double>(m.decoder_parameter_count()) / static_cast<double>(m.trainable_parameter_count()),
            0.02);
}

TEST(Forward, FullSizeLogspecScoreIsAProbability) {
  const Model m = build_model(ModelSpec{}, 3);
  const auto f = random_feature(FeatureKind::kLogSpec, 401, 566, 4);
  const auto r = embed(m, f);
  EXPECT_GT(r.score, 0.0);
  EXPECT_LT(r.score, 1.0);
  EXPECT_EQ(r.embedding.size(), 64);
  EXPECT_EQ(r.conv_out.c, 128);
}

TEST(Embed, DimensionsAndDeterminism) {
  for (auto pooling : {Pooling::kGap, Pooling::kGavp}) {
    const Model m = build_model(tiny_spec(false, pooling), 5);
    const auto f = random_feature(FeatureKind::kLfbank, 80, 20, 6);
    const auto a = embed(m, f), b = embed(m, f);
    EXPECT_EQ(a.embedding.size(), pooling == Pooling::kGap ? 64 : 32);
    EXPECT_EQ(a.embedding, b.embedding);
    EXPECT_EQ(a.score, b.score);
    EXPECT_GT(a.score, 0.0);
    EXPECT_LT(a.score, 1.0);
    EXPECT_GE(a.embedding.minCoeff(), 0.0);
  }
}

TEST(Embed, RejectsMismatchedInput) {
  const Model m = build_model(tiny_spec(false, Pooling::kGap), 5);
  EXPECT_THROW(embed(m, random_feature(FeatureKind::kLogSpec, 80, 20, 1)), InvalidInput);
  EXPECT_THROW(embed(m, random_feature(FeatureKind::kLfbank, 81, 20, 1)), InvalidInput);
}

TEST(Decoder, OutputShapeEqualsInputForEveryKind) {
  for (auto kind : {FeatureKind::kLogSpec, FeatureKind::kGdGram, FeatureKind::kLfbank}) {
    ModelSpec s;
    s.input_kind = kind;
    s.with_decoder = true;
    s.stage_filters = {4, 4, 4, 4};
    s.stage_blocks = {1, 1, 1, 1};
    const Model m = build_model(s, 1);
    const auto f = random_feature(kind, s.input_bins(), 566, 2);
    const auto tape = m.forward(stack_features({&f}), false, true);
    ASSERT_EQ(tape.reconstructions.size(), 1u);
    EXPECT_EQ(tape.reconstructions[0].rows(), s.input_bins());
    EXPECT_EQ(tape.reconstructions[0].cols(), 566);
    const auto d = decode(m, tape.conv_out, s.input_bins(), 566);
    EXPECT_EQ(d, tape.reconstructions[0]);
  }
}

TEST(Decoder, ZeroInputWithZeroBiasesGivesZeros) {
  const Model m = build_model(tiny_spec(true, Pooling::kGap), 1);
  Tensor zero(1, 2, 10, 4);
  const auto d = decode(m, zero, 80, 30);
  EXPECT_EQ(d.rows(), 80);
  EXPECT_EQ(d.cols(), 30);
  EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decoder, RequiresDecoderInSpec) {
  const Model m = build_model(tiny_spec(false, Pooling::kGap), 1);
  const auto f = random_feature(FeatureKind::kLfbank, 80, 8, 1);
  EXPECT_THROW(m.forward(stack_features({&f}), true, true), InvalidConfig);
}

// Central differences of a scalar objective built from every model output:
// sum(scores) + <r, embeddings> + <R, reconstructions>.
TEST(Gradient, AnalyticMatchesFiniteDifferencesForEveryParameter) {
  for (auto pooling : {Pooling::kGap, Pooling::kGavp}) {
    Model m = build_model(tiny_spec(true, pooling), 11);
    // Non-trivial BN affine and biases so every path carries gradient.
    std::mt19937_64 rng(12);
    for (auto* p : m.parameters())
      if (p->trainable && p->name.find("weight") == std::string::npos) randomize(*p, rng, 0.3);
    for (auto* p : m.parameters())
      if (p->name.find("gamma") != std::string::npos)
        for (auto& v : p->value) v += 1.0;

    const auto f1 = random_feature(FeatureKind::kLfbank, 80, 12, 13);
    const auto f2 = random_feature(FeatureKind::kLfbank, 80, 12, 14);
    const Tensor x = stack_features({&f1, &f2});
    const int emb = m.spec().embedding_dim();
    const Eigen::MatrixXd r = Eigen::MatrixXd::Random(2, emb);
    std::vector<Eigen::MatrixXd> big_r = {Eigen::MatrixXd::Random(80, 12), Eigen::MatrixXd::Random(80, 12)};

    auto objective = [&](const Model& model) {
      const ModelTape t = model.forward(x, true, true);
      double v = t.scores.sum() + (r.array() * t.embeddings.array()).sum();
      for (int i = 0; i < 2; ++i) v += (big_r[i].array() * t.reconstructions[i].array()).sum();
      return v;
    };

    m.zero_grad();
    const ModelTape tape = m.forward(x, true, true);
    ModelGrad g;
    g.d_scores = Eigen::VectorXd::Ones(2);
    g.d_embeddings = r;
    g.d_reconstructions = big_r;
    m.backward(tape, g);

    int checked = 0;
    const double h = 1e-5;
    for (auto* p : m.parameters()) {
      if (!p->trainable) continue;
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double saved = p->value[i];
        p->value[i] = saved + h;
        const double up = objective(m);
        p->value[i] = saved - h;
        const double down = objective(m);
        p->value[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = p->grad[i];
        ASSERT_LE(std::abs(numeric - analytic), 1e-4 * std::max(std::abs(numeric), std::abs(analytic)) + 1e-7)
            << p->name << "[" << i << "] numeric " << numeric << " analytic " << analytic;
        ++checked;
      }
    }
    EXPECT_EQ(static_cast<std::size_t>(checked), m.trainable_parameter_count());
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelSpec s = tiny_spec(true, Pooling::kGavp);
  s.stage_filters = {3, 4, 5, 6};
  Model m = build_model(s, 21);
  // Move running statistics off their defaults.
  const auto f = random_feature(FeatureKind::kLfbank, 80, 16, 22);
  const auto g = random_feature(FeatureKind::kLfbank, 80, 16, 23);
  m.update_running(m.forward(stack_features({&f, &g}), true));
  m.round_to_float();

  const auto path = std::filesystem::temp_directory_path() / "antispoof_model_test.ckpt";
  save_checkpoint(path, m);
  const Model back = load_checkpoint(path);
  EXPECT_EQ(back.spec(), m.spec());
  const auto pa = m.parameters();
  const auto pb = back.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
  }
  EXPECT_EQ(score_features(m, {&f, &g}), score_features(back, {&f, &g}));
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFileIsRejected) {
  const auto path = std::filesystem::temp_directory_path() / "antispoof_bad.ckpt";
  {
    std::ofstream out(path);
    out << "not a checkpoint\n";
  }
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
}
