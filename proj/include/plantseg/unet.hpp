#pragma once

// A small U-Net trained on the CPU: 3x3 convolutions through im2col + Eigen
// GEMM, 2x2 max-pooling, 2x2 stride-2 transposed convolutions, skip concats,
// a 1x1 head producing one logit per pixel. No batch normalisation.
//
// Activations are Eigen matrices of shape channels x (height*width), column
// index y*width + x, so one pixel's channels are contiguous.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "plantseg/container.hpp"
#include "plantseg/error.hpp"

namespace plantseg::nn {

using Matrix = Eigen::MatrixXf;
using Vector = Eigen::VectorXf;

struct Tensor {
  int c = 0, h = 0, w = 0;
  Matrix data;  // c x (h*w)

  Tensor() = default;
  Tensor(int channels, int height, int width)
      : c(channels), h(height), w(width), data(Matrix::Zero(channels, static_cast<Eigen::Index>(height) * width)) {}
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(h) * w; }
};

struct Param {
  Matrix value, grad, m, v;

  void init(Eigen::Index rows, Eigen::Index cols) {
    value = Matrix::Zero(rows, cols);
    grad = m = v = value;
  }
};

/// PyTorch's default for conv layers: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
/// weights and biases alike.
inline void uniform_init(Param& p, int fan_in, std::mt19937_64& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> u(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng);
}

class Conv3x3 {
 public:
  Conv3x3(int cin, int cout) : cin_(cin), cout_(cout) {
    weight.init(cout, 9 * cin);  // column k*cin + ci, k = (dy+1)*3 + (dx+1)
    bias.init(cout, 1);
  }

  void reset(std::mt19937_64& rng) {
    uniform_init(weight, 9 * cin_, rng);
    uniform_init(bias, 9 * cin_, rng);
  }

  Tensor forward(const Tensor& in) {
    input_ = in;
    Tensor out(cout_, in.h, in.w);
    out.data.noalias() = weight.value * im2col(in);
    out.data.colwise() += bias.value.col(0);
    return out;
  }

  Tensor backward(const Tensor& grad_out) {
    const Matrix cols = im2col(input_);
    weight.grad.noalias() += grad_out.data * cols.transpose();
    bias.grad.col(0) += grad_out.data.rowwise().sum();
    const Matrix dcols = weight.value.transpose() * grad_out.data;
    return col2im(dcols, input_.c, input_.h, input_.w);
  }

  std::vector<Param*> params() { return {&weight, &bias}; }

  Param weight, bias;

 private:
  static Matrix im2col(const Tensor& in) {
    const int C = in.c, H = in.h, W = in.w;
    Matrix cols = Matrix::Zero(9 * C, in.pixels());
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float* dst = cols.col(static_cast<Eigen::Index>(y) * W + x).data();
        for (int k = 0; k < 9; ++k) {
          const int sy = y + k / 3 - 1, sx = x + k % 3 - 1;
          if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
          std::memcpy(dst + k * C, in.data.col(static_cast<Eigen::Index>(sy) * W + sx).data(), sizeof(float) * C);
        }
      }
    return cols;
  }

  static Tensor col2im(const Matrix& dcols, int C, int H, int W) {
    Tensor out(C, H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const Eigen::Index p = static_cast<Eigen::Index>(y) * W + x;
        for (int k = 0; k < 9; ++k) {
          const int sy = y + k / 3 - 1, sx = x + k % 3 - 1;
          if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
          out.data.col(static_cast<Eigen::Index>(sy) * W + sx) += dcols.block(k * C, p, C, 1);
        }
      }
    return out;
  }

  int cin_, cout_;
  Tensor input_;
};

class Relu {
 public:
  Tensor forward(Tensor in) {
    mask_ = (in.data.array() > 0.0f).cast<float>().matrix();
    in.data = in.data.cwiseMax(0.0f);
    return in;
  }
  Tensor backward(Tensor grad) {
    grad.data = grad.data.cwiseProduct(mask_);
    return grad;
  }

 private:
  Matrix mask_;
};

class MaxPool2 {
 public:
  Tensor forward(const Tensor& in) {
    Tensor out(in.c, in.h / 2, in.w / 2);
    argmax_.assign(static_cast<std::size_t>(out.data.size()), 0);
    in_c_ = in.c, in_h_ = in.h, in_w_ = in.w;
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        const Eigen::Index q = static_cast<Eigen::Index>(y) * out.w + x;
        for (int c = 0; c < in.c; ++c) {
          Eigen::Index best = static_cast<Eigen::Index>(2 * y) * in.w + 2 * x;
          for (int d = 1; d < 4; ++d) {
            const Eigen::Index p = static_cast<Eigen::Index>(2 * y + d / 2) * in.w + 2 * x + d % 2;
            if (in.data(c, p) > in.data(c, best)) best = p;
          }
          out.data(c, q) = in.data(c, best);
          argmax_[static_cast<std::size_t>(q * in.c + c)] = best;
        }
      }
    return out;
  }

  Tensor backward(const Tensor& grad) {
    Tensor out(in_c_, in_h_, in_w_);
    for (Eigen::Index q = 0; q < grad.pixels(); ++q)
      for (int c = 0; c < grad.c; ++c) out.data(c, argmax_[static_cast<std::size_t>(q * grad.c + c)]) += grad.data(c, q);
    return out;
  }

 private:
  std::vector<Eigen::Index> argmax_;
  int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

/// 2x2 kernel, stride 2: doubles height and width.
class UpConv2 {
 public:
  UpConv2(int cin, int cout) : cin_(cin), cout_(cout) {
    weight.init(4 * cout, cin);  // row d*cout + co, d = dy*2 + dx
    bias.init(cout, 1);
  }

  void reset(std::mt19937_64& rng) {
    // torch computes fan_in of ConvTranspose2d from weight dim 1: cout * 2 * 2
    uniform_init(weight, 4 * cout_, rng);
    uniform_init(bias, 4 * cout_, rng);
  }

  Tensor forward(const Tensor& in) {
    input_ = in;
    const Matrix y = weight.value * in.data;
    Tensor out(cout_, 2 * in.h, 2 * in.w);
    for (int r = 0; r < in.h; ++r)
      for (int c = 0; c < in.w; ++c) {
        const Eigen::Index p = static_cast<Eigen::Index>(r) * in.w + c;
        for (int d = 0; d < 4; ++d) {
          const Eigen::Index q = static_cast<Eigen::Index>(2 * r + d / 2) * out.w + 2 * c + d % 2;
          out.data.col(q) = y.block(d * cout_, p, cout_, 1) + bias.value.col(0);
        }
      }
    return out;
  }

  Tensor backward(const Tensor& grad) {
    Matrix gy(4 * cout_, input_.pixels());
    for (int r = 0; r < input_.h; ++r)
      for (int c = 0; c < input_.w; ++c) {
        const Eigen::Index p = static_cast<Eigen::Index>(r) * input_.w + c;
        for (int d = 0; d < 4; ++d) {
          const Eigen::Index q = static_cast<Eigen::Index>(2 * r + d / 2) * grad.w + 2 * c + d % 2;
          gy.block(d * cout_, p, cout_, 1) = grad.data.col(q);
        }
      }
    weight.grad.noalias() += gy * input_.data.transpose();
    bias.grad.col(0) += grad.data.rowwise().sum();
    Tensor out(cin_, input_.h, input_.w);
    out.data.noalias() = weight.value.transpose() * gy;
    return out;
  }

  std::vector<Param*> params() { return {&weight, &bias}; }

  Param weight, bias;

 private:
  int cin_, cout_;
  Tensor input_;
};

class Conv1x1 {
 public:
  Conv1x1(int cin, int cout) : cin_(cin) {
    weight.init(cout, cin);
    bias.init(cout, 1);
  }
  void reset(std::mt19937_64& rng) {
    uniform_init(weight, cin_, rng);
    uniform_init(bias, cin_, rng);
  }
  Tensor forward(const Tensor& in) {
    input_ = in;
    Tensor out(static_cast<int>(weight.value.rows()), in.h, in.w);
    out.data.noalias() = weight.value * in.data;
    out.data.colwise() += bias.value.col(0);
    return out;
  }
  Tensor backward(const Tensor& grad) {
    weight.grad.noalias() += grad.data * input_.data.transpose();
    bias.grad.col(0) += grad.data.rowwise().sum();
    Tensor out(cin_, input_.h, input_.w);
    out.data.noalias() = weight.value.transpose() * grad.data;
    return out;
  }
  std::vector<Param*> params() { return {&weight, &bias}; }

  Param weight, bias;

 private:
  int cin_;
  Tensor input_;
};

/// conv3x3 -> relu -> conv3x3 -> relu
class DoubleConv {
 public:
  DoubleConv(int cin, int cout) : a_(cin, cout), b_(cout, cout) {}
  void reset(std::mt19937_64& rng) {
    a_.reset(rng);
    b_.reset(rng);
  }
  Tensor forward(const Tensor& in) { return rb_.forward(b_.forward(ra_.forward(a_.forward(in)))); }
  Tensor backward(const Tensor& g) { return a_.backward(ra_.backward(b_.backward(rb_.backward(g)))); }
  std::vector<Param*> params() { return {&a_.weight, &a_.bias, &b_.weight, &b_.bias}; }

 private:
  Conv3x3 a_, b_;
  Relu ra_, rb_;
};

inline Tensor concat(const Tensor& a, const Tensor& b) {
  Tensor out(a.c + b.c, a.h, a.w);
  out.data.topRows(a.c) = a.data;
  out.data.bottomRows(b.c) = b.data;
  return out;
}

struct UNetConfig {
  int in_channels = 3;
  int base_width = 64;
  int depth = 4;  // number of 2x downsamplings

  int multiple() const { return 1 << depth; }
};

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"in_channels", c.in_channels}, {"base_width", c.base_width}, {"depth", c.depth}};
}
inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  c.in_channels = j.at("in_channels");
  c.base_width = j.at("base_width");
  c.depth = j.at("depth");
}

class UNet {
 public:
  explicit UNet(UNetConfig config) : config_(config) {
    if (config.depth < 1 || config.base_width < 1) throw UsageError("unet: depth and base width must be positive");
    int cin = config.in_channels;
    for (int l = 0; l < config.depth; ++l) {
      const int width = config.base_width << l;
      down_.push_back(std::make_unique<DoubleConv>(cin, width));
      pools_.emplace_back();
      cin = width;
    }
    bottom_ = std::make_unique<DoubleConv>(cin, config.base_width << config.depth);
    for (int l = config.depth - 1; l >= 0; --l) {
      const int width = config.base_width << l;
      ups_.push_back(std::make_unique<UpConv2>(2 * width, width));
      up_convs_.push_back(std::make_unique<DoubleConv>(2 * width, width));
    }
    head_ = std::make_unique<Conv1x1>(config.base_width, 1);
  }

  const UNetConfig& config() const { return config_; }

  /// Fresh weights in a fixed layer order, so a seed fully determines them.
  void reset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& d : down_) d->reset(rng);
    bottom_->reset(rng);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      ups_[i]->reset(rng);
      up_convs_[i]->reset(rng);
    }
    head_->reset(rng);
  }

  /// Logits, 1 x (h*w). Height and width must be multiples of 2^depth.
  Tensor forward(const Tensor& x) {
    if (x.c != config_.in_channels || x.h % config_.multiple() || x.w % config_.multiple() || x.h == 0 || x.w == 0) {
      throw SizingError("unet: input " + std::to_string(x.c) + "x" + std::to_string(x.h) + "x" +
                        std::to_string(x.w) + " must have " + std::to_string(config_.in_channels) +
                        " channels and sides divisible by " + std::to_string(config_.multiple()));
    }
    skips_.clear();
    Tensor t = x;
    for (std::size_t l = 0; l < down_.size(); ++l) {
      t = down_[l]->forward(t);
      skips_.push_back(t);
      t = pools_[l].forward(t);
    }
    t = bottom_->forward(t);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      t = ups_[i]->forward(t);
      t = up_convs_[i]->forward(concat(skips_[skips_.size() - 1 - i], t));
    }
    return head_->forward(t);
  }

  /// Accumulates parameter gradients for the last forward pass.
  void backward(const Tensor& grad_logits) {
    Tensor g = head_->backward(grad_logits);
    std::vector<Tensor> skip_grads(skips_.size());
    for (std::size_t i = ups_.size(); i-- > 0;) {
      const std::size_t level = skips_.size() - 1 - i;
      Tensor gc = up_convs_[i]->backward(g);
      const int skip_c = skips_[level].c;
      Tensor gs(skip_c, gc.h, gc.w), gu(gc.c - skip_c, gc.h, gc.w);
      gs.data = gc.data.topRows(skip_c);
      gu.data = gc.data.bottomRows(gc.c - skip_c);
      skip_grads[level] = std::move(gs);
      g = ups_[i]->backward(gu);
    }
    g = bottom_->backward(g);
    for (int l = static_cast<int>(down_.size()) - 1; l >= 0; --l) {
      g = pools_[static_cast<std::size_t>(l)].backward(g);
      g.data += skip_grads[static_cast<std::size_t>(l)].data;
      g = down_[static_cast<std::size_t>(l)]->backward(g);
    }
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    auto add = [&](std::vector<Param*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
    for (auto& d : down_) add(d->params());
    add(bottom_->params());
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      add(ups_[i]->params());
      add(up_convs_[i]->params());
    }
    add(head_->params());
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.setZero();
  }

  std::vector<float> flatten() {
    std::vector<float> out;
    for (auto* p : params()) out.insert(out.end(), p->value.data(), p->value.data() + p->value.size());
    return out;
  }

  void assign(const std::vector<float>& flat) {
    std::size_t off = 0;
    for (auto* p : params()) {
      const auto n = static_cast<std::size_t>(p->value.size());
      if (off + n > flat.size()) throw DataError("unet: weight vector too short");
      std::memcpy(p->value.data(), flat.data() + off, n * sizeof(float));
      off += n;
    }
    if (off != flat.size()) throw DataError("unet: weight vector too long");
  }

 private:
  UNetConfig config_;
  std::vector<std::unique_ptr<DoubleConv>> down_;
  std::vector<MaxPool2> pools_;
  std::unique_ptr<DoubleConv> bottom_;
  std::vector<std::unique_ptr<UpConv2>> ups_;
  std::vector<std::unique_ptr<DoubleConv>> up_convs_;
  std::unique_ptr<Conv1x1> head_;
  std::vector<Tensor> skips_;
};

struct AdamOptions {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Bias-corrected Adam, same update as torch.optim.Adam without weight decay.
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void step(const std::vector<Param*>& params) {
    ++t_;
    const float c1 = 1.0f - std::pow(opts_.beta1, static_cast<float>(t_));
    const float c2 = 1.0f - std::pow(opts_.beta2, static_cast<float>(t_));
    for (auto* p : params) {
      p->m = opts_.beta1 * p->m + (1.0f - opts_.beta1) * p->grad;
      p->v = opts_.beta2 * p->v + (1.0f - opts_.beta2) * p->grad.cwiseProduct(p->grad);
      const float step = opts_.learning_rate / c1;
      const float root_c2 = std::sqrt(c2);
      p->value.array() -= step * p->m.array() / (p->v.array().sqrt() / root_c2 + opts_.eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamOptions opts_;
  long t_ = 0;
};

/// Mean binary cross-entropy on logits over pixels with weight 1; returns the
/// summed loss and writes d(sum)/d(logit) into grad.
inline double bce_with_logits(const Tensor& logits, const Eigen::VectorXf& target,
                              const Eigen::VectorXf& weight, Tensor& grad) {
  grad = Tensor(1, logits.h, logits.w);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.pixels(); ++i) {
    if (weight[i] == 0.0f) continue;
    const double z = logits.data(0, i), y = target[i];
    // max(z,0) - z*y + log(1 + exp(-|z|)), numerically stable
    total += weight[i] * (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
    const double s = 1.0 / (1.0 + std::exp(-z));
    grad.data(0, i) = static_cast<float>(weight[i] * (s - y));
  }
  return total;
}

inline constexpr std::string_view kUNetMagic = "PSUNET1\n";

inline void save_unet(UNet& net, const std::filesystem::path& path, const nlohmann::json& extra = {}) {
  const auto flat = net.flatten();
  nlohmann::json header{{"format", "plantseg-unet"},
                        {"version", 1},
                        {"config", net.config()},
                        {"parameters", flat.size()},
                        {"dtype", "f32"},
                        {"meta", extra}};
  write_container(path, kUNetMagic, header, flat.data(), flat.size() * sizeof(float));
}

inline std::unique_ptr<UNet> load_unet(const std::filesystem::path& path, nlohmann::json* meta = nullptr) {
  auto c = read_container(path, kUNetMagic);
  auto net = std::make_unique<UNet>(c.header.at("config").get<UNetConfig>());
  const auto n = c.header.at("parameters").get<std::size_t>();
  if (c.payload.size() != n * sizeof(float)) throw DataError(path.string() + ": payload size mismatch");
  std::vector<float> flat(n);
  std::memcpy(flat.data(), c.payload.data(), c.payload.size());
  net->assign(flat);
  if (meta) *meta = c.header.value("meta", nlohmann::json::object());
  return net;
}

}  // namespace plantseg::nn
