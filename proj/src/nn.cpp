#include "antispoof/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "antispoof/errors.hpp"

namespace antispoof::nn {

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

std::size_t shape_size(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

}  // namespace

Parameter::Parameter(std::string name_, std::vector<int> shape_, bool trainable_, bool decay_)
    : name(std::move(name_)),
      shape(std::move(shape_)),
      value(shape_size(shape), 0.0),
      grad(value.size(), 0.0),
      trainable(trainable_),
      decay(decay_) {}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

ConvGeometry same_geometry(int in_h, int in_w, int k, Stride stride) {
  ConvGeometry g;
  g.in_h = in_h;
  g.in_w = in_w;
  g.k = k;
  g.stride = stride;
  g.out_h = ceil_div(in_h, stride.h);
  g.out_w = ceil_div(in_w, stride.w);
  g.pad_top = std::max((g.out_h - 1) * stride.h + k - in_h, 0) / 2;
  g.pad_left = std::max((g.out_w - 1) * stride.w + k - in_w, 0) / 2;
  return g;
}

void im2col(const double* x, int channels, const ConvGeometry& g, double* col) {
  const std::size_t out_hw = static_cast<std::size_t>(g.out_h) * g.out_w;
  for (int ch = 0; ch < channels; ++ch) {
    const double* plane = x + static_cast<std::size_t>(ch) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(ch) * g.k + ky) * g.k + kx) * out_hw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride.h - g.pad_top + ky;
          double* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride.w - g.pad_left + kx;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, const ConvGeometry& g, double* x) {
  const std::size_t out_hw = static_cast<std::size_t>(g.out_h) * g.out_w;
  for (int ch = 0; ch < channels; ++ch) {
    double* plane = x + static_cast<std::size_t>(ch) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((static_cast<std::size_t>(ch) * g.k + ky) * g.k + kx) * out_hw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride.h - g.pad_top + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.out_w;
          double* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride.w - g.pad_left + kx;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.v) v = v < 0.0 ? 0.0 : v;  // NaN passes through so divergence surfaces
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i)
    if (!(y.v[i] > 0.0)) dx.v[i] = 0.0;
  return dx;
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int in_c, int out_c, int k, Stride s, bool with_bias)
    : weight(name + ".weight", {out_c, in_c, k, k}, true, true),
      in_channels(in_c),
      out_channels(out_c),
      kernel(k),
      stride(s) {
  if (with_bias) bias = Parameter(name + ".bias", {out_c});
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.c != in_channels) throw InvalidInput("conv channel mismatch for " + weight.name);
  const ConvGeometry g = same_geometry(x.h, x.w, kernel, stride);
  Tensor y(x.n, out_channels, g.out_h, g.out_w);
  const int rows = in_channels * kernel * kernel;
  const int cols = g.out_h * g.out_w;
  RowMatrix col(rows, cols);
  const ConstRowMap w(weight.value.data(), out_channels, rows);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), in_channels, g, col.data());
    RowMap out(y.sample(i), out_channels, cols);
    out.noalias() = w * col;
    if (!bias.value.empty())
      for (int oc = 0; oc < out_channels; ++oc) out.row(oc).array() += bias.value[oc];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy) {
  const ConvGeometry g = same_geometry(x.h, x.w, kernel, stride);
  Tensor dx(x.n, x.c, x.h, x.w);
  const int rows = in_channels * kernel * kernel;
  const int cols = g.out_h * g.out_w;
  RowMatrix col(rows, cols);
  RowMatrix dcol(rows, cols);
  const ConstRowMap w(weight.value.data(), out_channels, rows);
  RowMap dw(weight.grad.data(), out_channels, rows);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), in_channels, g, col.data());
    const ConstRowMap d(dy.sample(i), out_channels, cols);
    dw.noalias() += d * col.transpose();
    if (!bias.value.empty())
      for (int oc = 0; oc < out_channels; ++oc) bias.grad[oc] += d.row(oc).sum();
    dcol.noalias() = w.transpose() * d;
    col2im(dcol.data(), in_channels, g, dx.sample(i));
  }
  return dx;
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (!bias.value.empty()) out.push_back(&bias);
}

void Conv2d::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight);
  if (!bias.value.empty()) out.push_back(&bias);
}

// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(const std::string& name, int in_c, int out_c, int k)
    : weight(name + ".weight", {in_c, out_c, k, k}, true, true),
      bias(name + ".bias", {out_c}),
      in_channels(in_c),
      out_channels(out_c),
      kernel(k) {}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  if (x.c != in_channels) throw InvalidInput("deconv channel mismatch for " + weight.name);
  const ConvGeometry g = same_geometry(2 * x.h, 2 * x.w, kernel, {2, 2});
  Tensor y(x.n, out_channels, g.in_h, g.in_w);
  const int rows = out_channels * kernel * kernel;
  const int cols = x.h * x.w;
  RowMatrix col(rows, cols);
  const ConstRowMap w(weight.value.data(), in_channels, rows);
  for (int i = 0; i < x.n; ++i) {
    const ConstRowMap in(x.sample(i), in_channels, cols);
    col.noalias() = w.transpose() * in;
    col2im(col.data(), out_channels, g, y.sample(i));
    for (int oc = 0; oc < out_channels; ++oc) {
      double* p = y.sample(i) + oc * y.plane();
      for (std::size_t j = 0; j < y.plane(); ++j) p[j] += bias.value[oc];
    }
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& x, const Tensor& dy) {
  const ConvGeometry g = same_geometry(2 * x.h, 2 * x.w, kernel, {2, 2});
  Tensor dx(x.n, x.c, x.h, x.w);
  const int rows = out_channels * kernel * kernel;
  const int cols = x.h * x.w;
  RowMatrix dcol(rows, cols);
  const ConstRowMap w(weight.value.data(), in_channels, rows);
  RowMap dw(weight.grad.data(), in_channels, rows);
  for (int i = 0; i < x.n; ++i) {
    im2col(dy.sample(i), out_channels, g, dcol.data());
    const ConstRowMap in(x.sample(i), in_channels, cols);
    dw.noalias() += in * dcol.transpose();
    RowMap d(dx.sample(i), in_channels, cols);
    d.noalias() = w * dcol;
    for (int oc = 0; oc < out_channels; ++oc) {
      const double* p = dy.sample(i) + oc * dy.plane();
      bias.grad[oc] += std::accumulate(p, p + dy.plane(), 0.0);
    }
  }
  return dx;
}

void ConvTranspose2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void ConvTranspose2d::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(const std::string& name, int channels)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean(name + ".running_mean", {channels}, false),
      running_var(name + ".running_var", {channels}, false) {
  std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
  std::fill(running_var.value.begin(), running_var.value.end(), 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training, Cache& cache) const {
  const int channels = static_cast<int>(gamma.size());
  if (x.c != channels) throw InvalidInput("batch norm channel mismatch for " + gamma.name);
  cache.training = training;
  cache.mean.assign(channels, 0.0);
  cache.var.assign(channels, 0.0);
  cache.inv_std.assign(channels, 0.0);
  const std::size_t plane = x.plane();
  const double count = static_cast<double>(x.n) * plane;

  for (int ch = 0; ch < channels; ++ch) {
    double mean = running_mean.value[ch], var = running_var.value[ch];
    if (training) {
      double s = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const double* p = x.sample(i) + ch * plane;
        s += std::accumulate(p, p + plane, 0.0);
      }
      mean = s / count;
      double q = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const double* p = x.sample(i) + ch * plane;
        for (std::size_t j = 0; j < plane; ++j) q += (p[j] - mean) * (p[j] - mean);
      }
      var = q / count;
    }
    cache.mean[ch] = mean;
    cache.var[ch] = var;
    cache.inv_std[ch] = 1.0 / std::sqrt(var + eps);
  }

  cache.xhat = Tensor(x.n, x.c, x.h, x.w);
  Tensor y(x.n, x.c, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < channels; ++ch) {
      const double* p = x.sample(i) + ch * plane;
      double* xh = cache.xhat.sample(i) + ch * plane;
      double* out = y.sample(i) + ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        xh[j] = (p[j] - cache.mean[ch]) * cache.inv_std[ch];
        out[j] = gamma.value[ch] * xh[j] + beta.value[ch];
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Cache& cache, const Tensor& dy) {
  const int channels = static_cast<int>(gamma.size());
  const std::size_t plane = dy.plane();
  const double count = static_cast<double>(dy.n) * plane;
  Tensor dx(dy.n, dy.c, dy.h, dy.w);
  for (int ch = 0; ch < channels; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < dy.n; ++i) {
      const double* d = dy.sample(i) + ch * plane;
      const double* xh = cache.xhat.sample(i) + ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_dy += d[j];
        sum_dy_xhat += d[j] * xh[j];
      }
    }
    gamma.grad[ch] += sum_dy_xhat;
    beta.grad[ch] += sum_dy;
    const double scale = gamma.value[ch] * cache.inv_std[ch];
    for (int i = 0; i < dy.n; ++i) {
      const double* d = dy.sample(i) + ch * plane;
      const double* xh = cache.xhat.sample(i) + ch * plane;
      double* out = dx.sample(i) + ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        out[j] = cache.training
                     ? scale * (d[j] - sum_dy / count - xh[j] * sum_dy_xhat / count)
                     : scale * d[j];
      }
    }
  }
  return dx;
}

void BatchNorm2d::update_running(const Cache& cache) {
  if (!cache.training) return;
  for (std::size_t ch = 0; ch < gamma.size(); ++ch) {
    running_mean.value[ch] = momentum * running_mean.value[ch] + (1.0 - momentum) * cache.mean[ch];
    running_var.value[ch] = momentum * running_var.value[ch] + (1.0 - momentum) * cache.var[ch];
  }
}

void BatchNorm2d::collect(std::vector<Parameter*>& out) {
  out.insert(out.end(), {&gamma, &beta, &running_mean, &running_var});
}

void BatchNorm2d::collect(std::vector<const Parameter*>& out) const {
  out.insert(out.end(), {&gamma, &beta, &running_mean, &running_var});
}

// ---------------------------------------------------------------------------

Dense::Dense(const std::string& name, int in, int out)
    : weight(name + ".weight", {out, in}, true, true),
      bias(name + ".bias", {out}),
      in_features(in),
      out_features(out) {}

Eigen::MatrixXd Dense::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != in_features) throw InvalidInput("dense input width mismatch for " + weight.name);
  const ConstRowMap w(weight.value.data(), out_features, in_features);
  const Eigen::Map<const Eigen::RowVectorXd> b(bias.value.data(), out_features);
  Eigen::MatrixXd y = x * w.transpose();
  y.rowwise() += b;
  return y;
}

Eigen::MatrixXd Dense::backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
  RowMap dw(weight.grad.data(), out_features, in_features);
  Eigen::Map<Eigen::RowVectorXd> db(bias.grad.data(), out_features);
  dw.noalias() += dy.transpose() * x;
  db += dy.colwise().sum();
  const ConstRowMap w(weight.value.data(), out_features, in_features);
  return dy * w;
}

void Dense::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void Dense::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------------------

PreActBlock::PreActBlock(const std::string& name, int in_c, int out_c, Stride stride)
    : bn1(name + ".bn1", in_c),
      bn2(name + ".bn2", out_c),
      conv_a(name + ".conv_a", in_c, out_c, 3, stride, false),
      conv_b(name + ".conv_b", out_c, out_c, 3, {1, 1}, false) {
  if (in_c != out_c || stride != Stride{1, 1})
    shortcut.emplace(name + ".shortcut", in_c, out_c, 1, stride, false);
}

Tensor PreActBlock::forward(const Tensor& x, bool training, Tape& tape) const {
  tape.a1 = relu(bn1.forward(x, training, tape.bn1));
  tape.a2 = relu(bn2.forward(conv_a.forward(tape.a1), training, tape.bn2));
  Tensor y = conv_b.forward(tape.a2);
  const Tensor& skip = shortcut ? shortcut->forward(tape.a1) : x;
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += skip.v[i];
  return y;
}

Tensor PreActBlock::backward(const Tape& tape, const Tensor& dy) {
  const Tensor da2 = conv_b.backward(tape.a2, dy);
  const Tensor dh1 = bn2.backward(tape.bn2, relu_backward(tape.a2, da2));
  Tensor da1 = conv_a.backward(tape.a1, dh1);
  if (shortcut) {
    const Tensor ds = shortcut->backward(tape.a1, dy);
    for (std::size_t i = 0; i < da1.v.size(); ++i) da1.v[i] += ds.v[i];
  }
  Tensor dx = bn1.backward(tape.bn1, relu_backward(tape.a1, da1));
  if (!shortcut)
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy.v[i];
  return dx;
}

void PreActBlock::update_running(const Tape& tape) {
  bn1.update_running(tape.bn1);
  bn2.update_running(tape.bn2);
}

void PreActBlock::collect(std::vector<Parameter*>& out) {
  bn1.collect(out);
  conv_a.collect(out);
  bn2.collect(out);
  conv_b.collect(out);
  if (shortcut) shortcut->collect(out);
}

void PreActBlock::collect(std::vector<const Parameter*>& out) const {
  bn1.collect(out);
  conv_a.collect(out);
  bn2.collect(out);
  conv_b.collect(out);
  if (shortcut) shortcut->collect(out);
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd global_average_pool(const Tensor& x) {
  Eigen::MatrixXd out(x.n, x.c);
  const std::size_t plane = x.plane();
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const double* p = x.sample(i) + ch * plane;
      out(i, ch) = std::accumulate(p, p + plane, 0.0) / static_cast<double>(plane);
    }
  return out;
}

Tensor global_average_pool_backward(const Tensor& x, const Eigen::MatrixXd& dy) {
  Tensor dx(x.n, x.c, x.h, x.w);
  const std::size_t plane = x.plane();
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch)
      std::fill_n(dx.sample(i) + ch * plane, plane, dy(i, ch) / static_cast<double>(plane));
  return dx;
}

Eigen::MatrixXd global_average_variance_pool(const Tensor& x) {
  Eigen::MatrixXd out(x.n, 2 * x.c);
  const std::size_t plane = x.plane();
  const double count = static_cast<double>(plane);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const double* p = x.sample(i) + ch * plane;
      const double mean = std::accumulate(p, p + plane, 0.0) / count;
      double q = 0.0;
      for (std::size_t j = 0; j < plane; ++j) q += (p[j] - mean) * (p[j] - mean);
      out(i, ch) = mean;
      out(i, x.c + ch) = q / count;
    }
  return out;
}

Tensor global_average_variance_pool_backward(const Tensor& x, const Eigen::MatrixXd& dy) {
  Tensor dx(x.n, x.c, x.h, x.w);
  const std::size_t plane = x.plane();
  const double count = static_cast<double>(plane);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const double* p = x.sample(i) + ch * plane;
      const double mean = std::accumulate(p, p + plane, 0.0) / count;
      double* d = dx.sample(i) + ch * plane;
      const double dmean = dy(i, ch) / count;
      const double dvar = dy(i, x.c + ch) * 2.0 / count;
      for (std::size_t j = 0; j < plane; ++j) d[j] = dmean + dvar * (p[j] - mean);
    }
  return dx;
}

}  // namespace antispoof::nn
