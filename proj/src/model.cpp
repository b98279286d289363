#include "antispoof/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "antispoof/dataset.hpp"
#include "antispoof/errors.hpp"

namespace antispoof {

using nn::Tensor;

std::string_view to_string(Pooling pooling) {
  return pooling == Pooling::kGap ? "gap" : "gavp";
}

Pooling parse_pooling(std::string_view name) {
  if (name == "gap" || name == "GAP") return Pooling::kGap;
  if (name == "gavp" || name == "GAVP") return Pooling::kGavp;
  throw InvalidConfig("unknown pooling '" + std::string(name) + "'");
}

std::array<nn::Stride, 5> ModelSpec::strides() const {
  if (input_kind == FeatureKind::kLfbank)
    return {{{2, 2}, {1, 1}, {1, 2}, {2, 2}, {2, 2}}};
  return {{{2, 2}, {2, 2}, {2, 2}, {1, 1}, {1, 1}}};
}

int ModelSpec::pooled_dim() const {
  return pooling == Pooling::kGap ? stage_filters[3] : 2 * stage_filters[3];
}

int ModelSpec::input_bins() const {
  return input_kind == FeatureKind::kLfbank ? kDefaultFilters : 401;
}

void ModelSpec::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (stage_filters[i] < 1) throw InvalidConfig("stage_filters entries must be >= 1");
    if (stage_blocks[i] < 1) throw InvalidConfig("stage_blocks entries must be >= 1");
  }
}

Model::Model(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  const auto strides = spec_.strides();
  const auto& f = spec_.stage_filters;
  conv1_ = nn::Conv2d("conv1", 1, f[0], 3, strides[0], false);
  int in_c = f[0];
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < spec_.stage_blocks[s]; ++b) {
      const std::string name = "res" + std::to_string(s + 1) + ".block" + std::to_string(b);
      blocks_.emplace_back(name, in_c, f[s], b == 0 ? strides[s + 1] : nn::Stride{1, 1});
      in_c = f[s];
    }
  }
  post_bn_ = nn::BatchNorm2d("post_bn", f[3]);
  dense_ = nn::Dense("head.dense", spec_.pooled_dim(), spec_.embedding_dim());
  out_ = nn::Dense("head.out", spec_.embedding_dim(), 1);
  if (spec_.with_decoder) {
    decoder_[0] = nn::ConvTranspose2d("decoder.deconv1", f[3], kDecoderMaps[0], 3);
    decoder_[1] = nn::ConvTranspose2d("decoder.deconv2", kDecoderMaps[0], kDecoderMaps[1], 3);
    decoder_[2] = nn::ConvTranspose2d("decoder.deconv3", kDecoderMaps[1], kDecoderMaps[2], 3);
  }
}

std::vector<nn::Parameter*> Model::parameters() {
  std::vector<nn::Parameter*> out;
  conv1_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  post_bn_.collect(out);
  dense_.collect(out);
  out_.collect(out);
  if (spec_.with_decoder)
    for (auto& d : decoder_) d.collect(out);
  return out;
}

std::vector<const nn::Parameter*> Model::parameters() const {
  std::vector<const nn::Parameter*> out;
  conv1_.collect(out);
  for (const auto& b : blocks_) b.collect(out);
  post_bn_.collect(out);
  dense_.collect(out);
  out_.collect(out);
  if (spec_.with_decoder)
    for (const auto& d : decoder_) d.collect(out);
  return out;
}

nn::Parameter* Model::find(std::string_view name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void Model::init_weights(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x1417));
  for (auto* p : parameters()) {
    if (p->decay) {
      // [out, in, k, k] for convolutions, [in, out, k, k] for transposed ones,
      // [out, in] for dense layers.
      std::size_t fan_in = 1;
      if (p->shape.size() == 2)
        fan_in = static_cast<std::size_t>(p->shape[1]);
      else if (p->name.starts_with("decoder."))
        fan_in = static_cast<std::size_t>(p->shape[0]) * p->shape[2] * p->shape[3];
      else
        fan_in = static_cast<std::size_t>(p->shape[1]) * p->shape[2] * p->shape[3];
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& v : p->value) v = stddev * standard_normal(rng);
    } else if (p->name.ends_with(".gamma") || p->name.ends_with(".running_var")) {
      std::fill(p->value.begin(), p->value.end(), 1.0);
    } else {
      std::fill(p->value.begin(), p->value.end(), 0.0);
    }
  }
  round_to_float();
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

void Model::round_to_float() {
  for (auto* p : parameters())
    for (double& v : p->value) v = static_cast<double>(static_cast<float>(v));
}

std::size_t Model::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters())
    if (p->trainable) n += p->size();
  return n;
}

std::size_t Model::decoder_parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters())
    if (p->trainable && p->name.starts_with("decoder.")) n += p->size();
  return n;
}

std::pair<int, int> Model::conv_output_shape(int bins, int frames) const {
  for (const auto& s : spec_.strides()) {
    bins = nn::ceil_div(bins, s.h);
    frames = nn::ceil_div(frames, s.w);
  }
  return {bins, frames};
}

ModelTape Model::forward(const Tensor& x, bool training, bool decode) const {
  if (x.c != 1 || x.h != spec_.input_bins())
    throw InvalidInput("model expects " + std::to_string(spec_.input_bins()) + " input bins, got " +
                       std::to_string(x.h));
  if (x.n < 1 || x.w < 1) throw InvalidInput("empty model input");
  if (decode && !spec_.with_decoder) throw InvalidConfig("model was built without a decoder");

  ModelTape tape;
  tape.training = training;
  tape.input = x;
  tape.blocks.resize(blocks_.size());
  Tensor h = conv1_.forward(x);
  for (std::size_t b = 0; b < blocks_.size(); ++b) h = blocks_[b].forward(h, training, tape.blocks[b]);
  tape.conv_out = nn::relu(post_bn_.forward(h, training, tape.post_bn));

  tape.pooled = spec_.pooling == Pooling::kGap ? nn::global_average_pool(tape.conv_out)
                                               : nn::global_average_variance_pool(tape.conv_out);
  tape.embeddings = dense_.forward(tape.pooled).unaryExpr([](double v) { return v < 0.0 ? 0.0 : v; });
  tape.logits = out_.forward(tape.embeddings).col(0);
  tape.scores = tape.logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });

  if (decode) decode_forward(tape.conv_out, x.h, x.w, tape);
  return tape;
}

Tensor Model::decode_forward(const Tensor& o, int bins, int frames, ModelTape& tape) const {
  tape.dec_a1 = nn::relu(decoder_[0].forward(o));
  tape.dec_a2 = nn::relu(decoder_[1].forward(tape.dec_a1));
  tape.dec_y3 = decoder_[2].forward(tape.dec_a2);
  const Tensor& y = tape.dec_y3;
  const int rows = std::min(bins, y.h), cols = std::min(frames, y.w);
  tape.reconstructions.assign(static_cast<std::size_t>(y.n), Eigen::MatrixXd::Zero(bins, frames));
  for (int i = 0; i < y.n; ++i) {
    auto& rec = tape.reconstructions[i];
    for (int ch = 0; ch < y.c; ++ch)
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) rec(r, c) += y.at(i, ch, r, c);
    rec /= static_cast<double>(y.c);
  }
  return y;
}

Tensor Model::decode_backward(const ModelTape& tape, const std::vector<Eigen::MatrixXd>& d_rec) {
  const Tensor& y = tape.dec_y3;
  Tensor dy(y.n, y.c, y.h, y.w);
  for (int i = 0; i < y.n; ++i) {
    const auto& d = d_rec[i];
    const int rows = std::min<int>(static_cast<int>(d.rows()), y.h);
    const int cols = std::min<int>(static_cast<int>(d.cols()), y.w);
    for (int ch = 0; ch < y.c; ++ch)
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) dy.at(i, ch, r, c) = d(r, c) / y.c;
  }
  Tensor da2 = nn::relu_backward(tape.dec_a2, decoder_[2].backward(tape.dec_a2, dy));
  Tensor da1 = nn::relu_backward(tape.dec_a1, decoder_[1].backward(tape.dec_a1, da2));
  return decoder_[0].backward(tape.conv_out, da1);
}

std::vector<Eigen::MatrixXd> Model::reconstruct(const Tensor& conv_out, int bins,
                                                int frames) const {
  if (!spec_.with_decoder) throw InvalidConfig("model was built without a decoder");
  ModelTape tape;
  decode_forward(conv_out, bins, frames, tape);
  return tape.reconstructions;
}

void Model::backward(const ModelTape& tape, const ModelGrad& grad) {
  const auto n = static_cast<Eigen::Index>(tape.input.n);
  Eigen::MatrixXd d_emb = Eigen::MatrixXd::Zero(n, spec_.embedding_dim());
  if (grad.d_scores.size() > 0) {
    const Eigen::MatrixXd d_logit =
        (grad.d_scores.array() * tape.scores.array() * (1.0 - tape.scores.array())).matrix();
    d_emb += out_.backward(tape.embeddings, d_logit);
  }
  if (grad.d_embeddings.size() > 0) d_emb += grad.d_embeddings;
  const Eigen::MatrixXd d_hidden = (tape.embeddings.array() > 0.0).select(d_emb, 0.0);
  const Eigen::MatrixXd d_pooled = dense_.backward(tape.pooled, d_hidden);

  Tensor d_out = spec_.pooling == Pooling::kGap
                     ? nn::global_average_pool_backward(tape.conv_out, d_pooled)
                     : nn::global_average_variance_pool_backward(tape.conv_out, d_pooled);
  if (!grad.d_reconstructions.empty()) {
    if (tape.reconstructions.empty()) throw InvalidInput("reconstruction gradient without decode pass");
    const Tensor d_dec = decode_backward(tape, grad.d_reconstructions);
    for (std::size_t i = 0; i < d_out.v.size(); ++i) d_out.v[i] += d_dec.v[i];
  }
  Tensor dh = post_bn_.backward(tape.post_bn, nn::relu_backward(tape.conv_out, d_out));
  for (std::size_t b = blocks_.size(); b-- > 0;) dh = blocks_[b].backward(tape.blocks[b], dh);
  conv1_.backward(tape.input, dh);
}

void Model::update_running(const ModelTape& tape) {
  if (!tape.training) return;
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].update_running(tape.blocks[b]);
  post_bn_.update_running(tape.post_bn);
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  Model model(spec);
  model.init_weights(seed);
  return model;
}

Tensor stack_features(const std::vector<const FeatureMatrix*>& feats) {
  if (feats.empty()) throw InvalidInput("cannot stack an empty batch");
  const auto bins = static_cast<int>(feats.front()->bins());
  const auto frames = static_cast<int>(feats.front()->frames());
  Tensor x(static_cast<int>(feats.size()), 1, bins, frames);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const auto& f = *feats[i];
    if (f.bins() != bins || f.frames() != frames || f.kind != feats.front()->kind)
      throw InvalidInput("batch features differ in kind or shape");
    double* dst = x.sample(static_cast<int>(i));
    for (int r = 0; r < bins; ++r)
      for (int c = 0; c < frames; ++c) dst[r * frames + c] = f.data(r, c);
  }
  return x;
}

Eigen::VectorXd gap(const Tensor& conv_out) {
  if (conv_out.v.empty()) throw InvalidInput("empty conv output");
  return nn::global_average_pool(conv_out).row(0).transpose();
}

Eigen::VectorXd gavp(const Tensor& conv_out) {
  if (conv_out.v.empty()) throw InvalidInput("empty conv output");
  return nn::global_average_variance_pool(conv_out).row(0).transpose();
}

Eigen::MatrixXd decode(const Model& model, const Tensor& conv_out, int bins, int frames) {
  if (conv_out.n != 1) throw InvalidInput("decode expects a single conv output");
  return model.reconstruct(conv_out, bins, frames).front();
}

EmbedResult embed(const Model& model, const FeatureMatrix& x) {
  if (x.kind != model.spec().input_kind)
    throw InvalidInput("feature kind does not match the model input kind");
  const ModelTape tape = model.forward(stack_features({&x}), false);
  EmbedResult out;
  out.embedding = tape.embeddings.row(0).transpose();
  out.conv_out = tape.conv_out;
  out.score = tape.scores[0];
  return out;
}

std::vector<double> score_features(const Model& model, const std::vector<const FeatureMatrix*>& feats,
                                   int batch_size) {
  std::vector<double> scores;
  scores.reserve(feats.size());
  for (std::size_t start = 0; start < feats.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(feats.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<const FeatureMatrix*> batch(feats.begin() + static_cast<std::ptrdiff_t>(start),
                                                  feats.begin() + static_cast<std::ptrdiff_t>(end));
    const ModelTape tape = model.forward(stack_features(batch), false);
    for (Eigen::Index i = 0; i < tape.scores.size(); ++i) scores.push_back(tape.scores[i]);
  }
  return scores;
}

}  // namespace antispoof
