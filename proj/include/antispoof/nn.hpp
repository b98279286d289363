#pragma once

// Minimal CPU layers with hand-written backward passes. Tensors are NCHW,
// arithmetic is double precision.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace antispoof::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return c * plane(); }
  double* sample(int i) { return v.data() + i * sample_size(); }
  const double* sample(int i) const { return v.data() + i * sample_size(); }
  double& at(int i, int ch, int y, int x) {
    return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  double at(int i, int ch, int y, int x) const {
    return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;
  bool decay = false;  // weight decay applies (convolution and dense kernels)

  Parameter() = default;
  Parameter(std::string name_, std::vector<int> shape_, bool trainable_ = true, bool decay_ = false);
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

struct Stride {
  int h = 1;
  int w = 1;
  bool operator==(const Stride&) const = default;
};

// "Same" padding: out = ceil(in / stride), the odd padding element goes after.
struct ConvGeometry {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  int k = 1;
  Stride stride;
  int pad_top = 0, pad_left = 0;
};

ConvGeometry same_geometry(int in_h, int in_w, int k, Stride stride);
int ceil_div(int a, int b);

// col is [channels * k * k, out_h * out_w], row-major.
void im2col(const double* x, int channels, const ConvGeometry& g, double* col);
// Adjoint of im2col; accumulates into x.
void col2im(const double* col, int channels, const ConvGeometry& g, double* x);

Tensor relu(const Tensor& x);
// dy masked by y > 0, where y is the ReLU output.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_c, int out_c, int k, Stride stride, bool with_bias);

  Tensor forward(const Tensor& x) const;
  // Accumulates parameter gradients and returns dL/dx.
  Tensor backward(const Tensor& x, const Tensor& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  Parameter weight;  // [out_c, in_c, k, k]
  Parameter bias;    // [out_c], empty when disabled
  int in_channels = 0, out_channels = 0, kernel = 1;
  Stride stride;
};

// Transposed 2x upsampling convolution, the adjoint of a stride-2 "same"
// convolution, so out = 2 * in in both dimensions.
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in_c, int out_c, int k);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  Parameter weight;  // [in_c, out_c, k, k]
  Parameter bias;    // [out_c]
  int in_channels = 0, out_channels = 0, kernel = 3;
};

class BatchNorm2d {
 public:
  struct Cache {
    Tensor xhat;
    std::vector<double> mean, var, inv_std;
    bool training = false;
  };

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  // Training mode normalizes with batch statistics, inference with running ones.
  Tensor forward(const Tensor& x, bool training, Cache& cache) const;
  Tensor backward(const Cache& cache, const Tensor& dy);
  void update_running(const Cache& cache);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  Parameter gamma, beta;
  Parameter running_mean, running_var;  // not trainable
  double eps = 1e-3;
  double momentum = 0.9;
};

class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, int in, int out);

  // x is [batch, in]
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  Parameter weight;  // [out, in]
  Parameter bias;    // [out]
  int in_features = 0, out_features = 0;
};

// Full pre-activation residual unit:
//   y = conv_b(relu(bn2(conv_a(relu(bn1(x)))))) + shortcut
// The shortcut is identity, or a strided 1x1 convolution of relu(bn1(x)) when
// the shape changes.
class PreActBlock {
 public:
  struct Tape {
    BatchNorm2d::Cache bn1, bn2;
    Tensor a1, a2;
  };

  PreActBlock() = default;
  PreActBlock(const std::string& name, int in_c, int out_c, Stride stride);

  Tensor forward(const Tensor& x, bool training, Tape& tape) const;
  Tensor backward(const Tape& tape, const Tensor& dy);
  void update_running(const Tape& tape);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  BatchNorm2d bn1, bn2;
  Conv2d conv_a, conv_b;
  std::optional<Conv2d> shortcut;
};

// Pooling over both spatial axes; outputs are [batch, C] and [batch, 2C].
Eigen::MatrixXd global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(const Tensor& x, const Eigen::MatrixXd& dy);
// Per-channel mean followed by per-channel population variance.
Eigen::MatrixXd global_average_variance_pool(const Tensor& x);
Tensor global_average_variance_pool_backward(const Tensor& x, const Eigen::MatrixXd& dy);

}  // namespace antispoof::nn
