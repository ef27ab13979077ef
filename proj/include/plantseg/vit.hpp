#pragma once

// DinoV2-family vision transformer, inference only, reading a Hugging Face
// style directory (config.json + model.safetensors). Output is the final
// layer-normed patch tokens; class and register tokens are dropped.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "plantseg/encoder.hpp"
#include "plantseg/error.hpp"
#include "plantseg/safetensors.hpp"

namespace plantseg {

struct VitConfig {
  int hidden = 768;
  int layers = 12;
  int heads = 12;
  int mlp_hidden = 3072;
  int patch = 14;
  int image_size = 518;
  int registers = 0;
  float eps = 1e-6f;
  bool antialias = false;  // position-grid resampling; register models use it

  static VitConfig from_json(const nlohmann::json& j) {
    VitConfig c;
    c.hidden = j.value("hidden_size", c.hidden);
    c.layers = j.value("num_hidden_layers", c.layers);
    c.heads = j.value("num_attention_heads", c.heads);
    c.mlp_hidden = static_cast<int>(std::lround(c.hidden * j.value("mlp_ratio", 4.0)));
    c.patch = j.value("patch_size", c.patch);
    c.image_size = j.value("image_size", c.image_size);
    c.registers = j.value("num_register_tokens", 0);
    c.eps = static_cast<float>(j.value("layer_norm_eps", 1e-6));
    c.antialias = j.value("pos_embed_antialias", c.registers > 0);
    if (j.value("use_swiglu_ffn", false)) throw BackendError("vit: SwiGLU feed-forward checkpoints are not supported");
    const std::string act = j.value("hidden_act", std::string("gelu"));
    if (act != "gelu") throw BackendError("vit: unsupported activation '" + act + "'");
    if (c.hidden % c.heads != 0) throw BackendError("vit: hidden size not divisible by head count");
    return c;
  }
};

namespace vit {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// torch's bicubic kernel (a = -0.75)
inline float cubic_near(float x) {
  constexpr float a = -0.75f;
  return ((a + 2) * x - (a + 3)) * x * x + 1;
}
inline float cubic_far(float x) {
  constexpr float a = -0.75f;
  return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
}

struct Taps {
  std::vector<std::vector<int>> index;
  std::vector<std::vector<float>> weight;
};

/// Plain bicubic taps: half-pixel centres, four taps clamped at the border.
inline Taps bicubic_taps(int src, int dst) {
  Taps t;
  const float scale = static_cast<float>(src) / static_cast<float>(dst);
  for (int o = 0; o < dst; ++o) {
    const float real = scale * (static_cast<float>(o) + 0.5f) - 0.5f;
    const int base = static_cast<int>(std::floor(real));
    const float f = real - static_cast<float>(base);
    t.weight.push_back({cubic_far(f + 1), cubic_near(f), cubic_near(1 - f), cubic_far(2 - f)});
    std::vector<int> idx;
    for (int k = 0; k < 4; ++k) idx.push_back(std::clamp(base - 1 + k, 0, src - 1));
    t.index.push_back(idx);
  }
  return t;
}

/// Antialiased bicubic taps as torch computes them (a = -0.5, support
/// widened by the scale when shrinking, weights normalised to sum 1).
inline Taps bicubic_aa_taps(int src, int dst) {
  auto filter = [](double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x < 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
    if (x < 2) return (((x - 5) * x + 8) * x - 4) * a;
    return 0.0;
  };
  Taps t;
  const double scale = static_cast<double>(src) / dst;
  const double support = scale >= 1.0 ? 2.0 * scale : 2.0;
  const double inv = scale >= 1.0 ? 1.0 / scale : 1.0;
  for (int o = 0; o < dst; ++o) {
    const double centre = scale * (o + 0.5);
    const int lo = std::max(static_cast<int>(centre - support + 0.5), 0);
    const int hi = std::min(static_cast<int>(centre + support + 0.5), src);
    std::vector<int> idx;
    std::vector<double> w;
    double total = 0;
    for (int j = lo; j < hi; ++j) {
      idx.push_back(j);
      w.push_back(filter((j - centre + 0.5) * inv));
      total += w.back();
    }
    std::vector<float> wf;
    for (double v : w) wf.push_back(static_cast<float>(total != 0 ? v / total : 0.0));
    t.index.push_back(idx);
    t.weight.push_back(wf);
  }
  return t;
}

/// Resamples a (src_h*src_w) x D grid of row vectors to (dst_h*dst_w) x D,
/// separably, with the given tap builder.
inline RowMatrix resample(const RowMatrix& grid, int src_h, int src_w, int dst_h, int dst_w, bool antialias) {
  const Taps ty = antialias ? bicubic_aa_taps(src_h, dst_h) : bicubic_taps(src_h, dst_h);
  const Taps tx = antialias ? bicubic_aa_taps(src_w, dst_w) : bicubic_taps(src_w, dst_w);
  RowMatrix out = RowMatrix::Zero(static_cast<Eigen::Index>(dst_h) * dst_w, grid.cols());
  for (int y = 0; y < dst_h; ++y)
    for (int x = 0; x < dst_w; ++x) {
      auto dst = out.row(static_cast<Eigen::Index>(y) * dst_w + x);
      const auto& iy = ty.index[static_cast<std::size_t>(y)];
      const auto& ix = tx.index[static_cast<std::size_t>(x)];
      for (std::size_t a = 0; a < iy.size(); ++a)
        for (std::size_t b = 0; b < ix.size(); ++b)
          dst += (ty.weight[static_cast<std::size_t>(y)][a] * tx.weight[static_cast<std::size_t>(x)][b]) *
                 grid.row(static_cast<Eigen::Index>(iy[a]) * src_w + ix[b]);
    }
  return out;
}

inline RowMatrix bicubic_resize(const RowMatrix& grid, int src_h, int src_w, int dst_h, int dst_w) {
  return resample(grid, src_h, src_w, dst_h, dst_w, false);
}

inline void layer_norm(RowMatrix& x, const Eigen::VectorXf& gamma, const Eigen::VectorXf& beta, float eps) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    const float mean = r.mean();
    r.array() -= mean;
    const float var = r.squaredNorm() / static_cast<float>(r.size());
    r *= 1.0f / std::sqrt(var + eps);
    r.array() = r.array() * gamma.transpose().array() + beta.transpose().array();
  }
}

struct Linear {
  RowMatrix wt;  // in x out, so y = x * wt + b
  Eigen::RowVectorXf b;

  RowMatrix operator()(const RowMatrix& x) const {
    RowMatrix y = x * wt;
    y.rowwise() += b;
    return y;
  }
};

struct Block {
  Eigen::VectorXf n1w, n1b, n2w, n2b, ls1, ls2;
  Linear q, k, v, proj, fc1, fc2;
};

}  // namespace vit

class VitModel {
public:
  /// Loads `dir`/config.json and `dir`/model.safetensors.
  explicit VitModel(const std::filesystem::path& dir) : dir_(dir) {
    namespace fs = std::filesystem;
    const auto cfg_path = dir / "config.json";
    const auto weights_path = dir / "model.safetensors";
    if (!fs::exists(cfg_path) || !fs::exists(weights_path)) {
      throw BackendError("vit: expected config.json and model.safetensors under '" + dir.string() +
                         "' (convert timm checkpoints with tools/convert_checkpoint.py)");
    }
    nlohmann::json j;
    try {
      std::ifstream(cfg_path) >> j;
    } catch (const nlohmann::json::exception& e) {
      throw BackendError("vit: cannot parse '" + cfg_path.string() + "': " + e.what());
    }
    config_ = VitConfig::from_json(j);
    const SafeTensors st(weights_path);
    prefix_ = st.contains("embeddings.cls_token") ? "" : "dinov2.";
    load(st);
  }

  const VitConfig& config() const { return config_; }

  /// Patch tokens for an RGB u8 image whose sides are multiples of the patch.
  vit::RowMatrix forward(const cv::Mat& rgb) const {
    using vit::RowMatrix;
    const int P = config_.patch, D = config_.hidden;
    if (rgb.type() != CV_8UC3 || rgb.rows % P != 0 || rgb.cols % P != 0)
      throw SizingError("vit: input must be RGB with sides divisible by " + std::to_string(P));
    const int gh = rgb.rows / P, gw = rgb.cols / P;
    const Eigen::Index n = static_cast<Eigen::Index>(gh) * gw;

    // imagenet normalisation, then patch embedding as one GEMM
    static constexpr float mean[3] = {0.485f, 0.456f, 0.406f};
    static constexpr float stdv[3] = {0.229f, 0.224f, 0.225f};
    RowMatrix patches(n, 3 * P * P);
    for (int r = 0; r < gh; ++r)
      for (int c = 0; c < gw; ++c) {
        float* dst = patches.row(static_cast<Eigen::Index>(r) * gw + c).data();
        for (int ky = 0; ky < P; ++ky) {
          const auto* src = rgb.ptr<std::uint8_t>(r * P + ky) + 3 * c * P;
          for (int kx = 0; kx < P; ++kx)
            for (int ch = 0; ch < 3; ++ch)
              dst[(ch * P + ky) * P + kx] = (static_cast<float>(src[3 * kx + ch]) / 255.0f - mean[ch]) / stdv[ch];
        }
      }
    const RowMatrix embedded = patch_embed_(patches);

    const int src = config_.image_size / P;
    const RowMatrix pos = vit::resample(pos_patches_, src, src, gh, gw, config_.antialias);
    const Eigen::Index R = config_.registers;
    RowMatrix x(1 + R + n, D);
    x.row(0) = cls_ + pos_cls_;
    if (R > 0) x.middleRows(1, R) = registers_;
    x.bottomRows(n) = embedded + pos;

    for (const auto& blk : blocks_) {
      RowMatrix h = x;
      vit::layer_norm(h, blk.n1w, blk.n1b, config_.eps);
      RowMatrix a = attention(h, blk);
      x += (a.array().rowwise() * blk.ls1.transpose().array()).matrix();
      h = x;
      vit::layer_norm(h, blk.n2w, blk.n2b, config_.eps);
      RowMatrix m = blk.fc1(h);
      m = m.unaryExpr([](float v) { return 0.5f * v * (1.0f + std::erf(v * static_cast<float>(M_SQRT1_2))); });
      m = blk.fc2(m);
      x += (m.array().rowwise() * blk.ls2.transpose().array()).matrix();
    }
    RowMatrix out = x.bottomRows(n);
    vit::layer_norm(out, norm_w_, norm_b_, config_.eps);
    return out;
  }

private:
  vit::RowMatrix attention(const vit::RowMatrix& h, const vit::Block& blk) const {
    using vit::RowMatrix;
    const int H = config_.heads, dh = config_.hidden / H;
    const RowMatrix q = blk.q(h), k = blk.k(h), v = blk.v(h);
    const Eigen::Index n = h.rows();
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    RowMatrix ctx(n, config_.hidden);
    constexpr Eigen::Index chunk = 1024;  // bounds the score matrix at chunk x n
    for (int head = 0; head < H; ++head) {
      const RowMatrix kh = k.middleCols(head * dh, dh);
      const RowMatrix vh = v.middleCols(head * dh, dh);
      for (Eigen::Index start = 0; start < n; start += chunk) {
        const Eigen::Index rows = std::min(chunk, n - start);
        RowMatrix s = (q.block(start, head * dh, rows, dh) * scale) * kh.transpose();
        for (Eigen::Index i = 0; i < rows; ++i) {
          auto r = s.row(i);
          r.array() = (r.array() - r.maxCoeff()).exp();
          r /= r.sum();
        }
        ctx.block(start, head * dh, rows, dh) = s * vh;
      }
    }
    return blk.proj(ctx);
  }

  std::vector<float> need(const SafeTensors& st, const std::string& name, std::int64_t numel) const {
    const std::string key = prefix_ + name;
    if (!st.contains(key)) throw BackendError("vit: '" + dir_.string() + "' is missing tensor '" + key + "'");
    if (st.info(key).numel() != numel)
      throw BackendError("vit: tensor '" + key + "' has " + std::to_string(st.info(key).numel()) +
                         " values, config implies " + std::to_string(numel));
    return st.floats(key);
  }

  Eigen::VectorXf vec(const SafeTensors& st, const std::string& name, int n) const {
    const auto v = need(st, name, n);
    return Eigen::Map<const Eigen::VectorXf>(v.data(), n);
  }

  vit::Linear linear(const SafeTensors& st, const std::string& name, int in, int out) const {
    const auto w = need(st, name + ".weight", static_cast<std::int64_t>(in) * out);
    vit::Linear l;
    l.wt = Eigen::Map<const vit::RowMatrix>(w.data(), out, in).transpose();
    l.b = vec(st, name + ".bias", out).transpose();
    return l;
  }

  void load(const SafeTensors& st) {
    const int D = config_.hidden, P = config_.patch;
    const int src = config_.image_size / P;
    patch_embed_ = linear(st, "embeddings.patch_embeddings.projection", 3 * P * P, D);
    cls_ = vec(st, "embeddings.cls_token", D).transpose();
    const auto pos = need(st, "embeddings.position_embeddings", static_cast<std::int64_t>(1 + src * src) * D);
    const Eigen::Map<const vit::RowMatrix> pm(pos.data(), 1 + src * src, D);
    pos_cls_ = pm.row(0);
    pos_patches_ = pm.bottomRows(src * src);
    if (config_.registers > 0) {
      const auto r = need(st, "embeddings.register_tokens", static_cast<std::int64_t>(config_.registers) * D);
      registers_ = Eigen::Map<const vit::RowMatrix>(r.data(), config_.registers, D);
    }
    for (int i = 0; i < config_.layers; ++i) {
      const std::string p = "encoder.layer." + std::to_string(i) + ".";
      vit::Block b;
      b.n1w = vec(st, p + "norm1.weight", D);
      b.n1b = vec(st, p + "norm1.bias", D);
      b.q = linear(st, p + "attention.attention.query", D, D);
      b.k = linear(st, p + "attention.attention.key", D, D);
      b.v = linear(st, p + "attention.attention.value", D, D);
      b.proj = linear(st, p + "attention.output.dense", D, D);
      b.ls1 = vec(st, p + "layer_scale1.lambda1", D);
      b.n2w = vec(st, p + "norm2.weight", D);
      b.n2b = vec(st, p + "norm2.bias", D);
      b.fc1 = linear(st, p + "mlp.fc1", D, config_.mlp_hidden);
      b.fc2 = linear(st, p + "mlp.fc2", config_.mlp_hidden, D);
      b.ls2 = vec(st, p + "layer_scale2.lambda1", D);
      blocks_.push_back(std::move(b));
    }
    norm_w_ = vec(st, "layernorm.weight", D);
    norm_b_ = vec(st, "layernorm.bias", D);
  }

  std::filesystem::path dir_;
  VitConfig config_;
  std::string prefix_;
  vit::Linear patch_embed_;
  Eigen::RowVectorXf cls_, pos_cls_;
  vit::RowMatrix pos_patches_, registers_;
  std::vector<vit::Block> blocks_;
  Eigen::VectorXf norm_w_, norm_b_;
};

/// Encoder backend over a DinoV2-family checkpoint directory. `id` is the
/// backend id recorded in grids (plantnet-dinov2 or dinov2-base).
class VitEncoder final : public Encoder {
public:
  VitEncoder(std::string id, const std::filesystem::path& dir) : id_(std::move(id)), model_(dir) {
    if (model_.config().patch != kPatchSize)
      throw BackendError("vit: checkpoint patch size " + std::to_string(model_.config().patch) + " is not " +
                         std::to_string(kPatchSize));
  }

  std::string id() const override { return id_; }
  int dim() const override { return model_.config().hidden; }

protected:
  FeatureMatrix do_encode(const cv::Mat& padded_rgb, const GeometrySpec&) override {
    return model_.forward(padded_rgb);
  }

private:
  std::string id_;
  VitModel model_;
};

}  // namespace plantseg
