#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "antispoof/features.hpp"
#include "antispoof/nn.hpp"

namespace antispoof {

enum class Pooling : std::uint8_t { kGap, kGavp };

std::string_view to_string(Pooling pooling);
Pooling parse_pooling(std::string_view name);

inline constexpr int kDecoderMaps[3] = {32, 16, 8};

struct ModelSpec {
  FeatureKind input_kind = FeatureKind::kLogSpec;
  Pooling pooling = Pooling::kGap;
  bool with_decoder = false;
  std::array<int, 4> stage_filters = {16, 32, 64, 128};
  std::array<int, 4> stage_blocks = {3, 4, 6, 3};

  // Conv1 followed by Res1..Res4, as (frequency, time) strides.
  std::array<nn::Stride, 5> strides() const;
  // 128 -> 64 for GAP, 256 -> 32 for GAVP at full width.
  int embedding_dim() const { return pooling == Pooling::kGap ? 64 : 32; }
  int pooled_dim() const;
  // 401 for LOGSPEC / GD gram, 80 for LFBANK.
  int input_bins() const;
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

// Everything a forward pass records for the backward pass. `conv_out` is the
// activation of the last convolutional layer, `embeddings` the post-ReLU
// dense activation and `scores` the sigmoid output, one row per batch item.
struct ModelTape {
  bool training = false;
  nn::Tensor input;
  std::vector<nn::PreActBlock::Tape> blocks;
  nn::BatchNorm2d::Cache post_bn;
  nn::Tensor conv_out;
  Eigen::MatrixXd pooled;
  Eigen::MatrixXd embeddings;
  Eigen::VectorXd logits;
  Eigen::VectorXd scores;

  // Populated only when decoding.
  nn::Tensor dec_a1, dec_a2, dec_y3;
  std::vector<Eigen::MatrixXd> reconstructions;
};

// Gradients flowing into a tape. Any member may be empty.
struct ModelGrad {
  Eigen::VectorXd d_scores;
  Eigen::MatrixXd d_embeddings;
  std::vector<Eigen::MatrixXd> d_reconstructions;
};

// Thin pre-activation ResNet-34 with GAP/GAVP head and optional
// reconstruction decoder. Branches of a Siamese pair share one instance.
class Model {
 public:
  explicit Model(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }

  // Variance-scaling (fan-in) normal init for kernels, zero biases, identity
  // batch norm; values are rounded to float32.
  void init_weights(std::uint64_t seed);

  ModelTape forward(const nn::Tensor& x, bool training, bool decode = false) const;
  // Accumulates parameter gradients.
  void backward(const ModelTape& tape, const ModelGrad& grad);
  // Decoder output for each item of `conv_out`, cropped or zero-padded to
  // (bins, frames).
  std::vector<Eigen::MatrixXd> reconstruct(const nn::Tensor& conv_out, int bins, int frames) const;
  // Folds the batch statistics of a training-mode tape into the running averages.
  void update_running(const ModelTape& tape);

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  nn::Parameter* find(std::string_view name);

  void zero_grad();
  // Rounds every stored value to the nearest float32 so checkpoints are exact.
  void round_to_float();

  std::size_t trainable_parameter_count() const;
  std::size_t decoder_parameter_count() const;

  // Spatial shape of the last convolutional layer for a given input.
  std::pair<int, int> conv_output_shape(int bins, int frames) const;

  nn::Parameter& output_bias() { return out_.bias; }
  nn::Dense& embedding_layer() { return dense_; }
  nn::Dense& output_layer() { return out_; }

 private:
  nn::Tensor decode_forward(const nn::Tensor& o, int bins, int frames, ModelTape& tape) const;
  nn::Tensor decode_backward(const ModelTape& tape, const std::vector<Eigen::MatrixXd>& d_rec);

  ModelSpec spec_;
  nn::Conv2d conv1_;
  std::vector<nn::PreActBlock> blocks_;
  nn::BatchNorm2d post_bn_;
  nn::Dense dense_;
  nn::Dense out_;
  std::array<nn::ConvTranspose2d, 3> decoder_;
};

Model build_model(const ModelSpec& spec, std::uint64_t seed = 0);

// Stacks feature matrices into a [batch, 1, bins, frames] tensor.
nn::Tensor stack_features(const std::vector<const FeatureMatrix*>& feats);

Eigen::VectorXd gap(const nn::Tensor& conv_out);
Eigen::VectorXd gavp(const nn::Tensor& conv_out);

// Reconstruction of one input from its conv output, cropped or zero-padded
// to (bins, frames).
Eigen::MatrixXd decode(const Model& model, const nn::Tensor& conv_out, int bins, int frames);

struct EmbedResult {
  Eigen::VectorXd embedding;
  nn::Tensor conv_out;
  double score = 0.0;
};

// Inference-mode forward pass on a single feature matrix.
EmbedResult embed(const Model& model, const FeatureMatrix& x);

// Inference-mode P(spoofed) for each matrix, in batches.
std::vector<double> score_features(const Model& model, const std::vector<const FeatureMatrix*>& feats,
                                   int batch_size = 16);

// Checkpoint: text header with the ModelSpec and a tensor directory, followed
// by row-major float32 LE tensor data in directory order.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace antispoof
