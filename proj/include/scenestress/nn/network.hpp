#pragma once

#include <cmath>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "scenestress/common.hpp"

namespace scenestress::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Channels x (height * width); spatial index is y * width + x.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix::Zero(c, h * w)) {}
  int spatial() const noexcept { return height * width; }
};

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

/// Convolutional feature extractor: VGG-style blocks of 3x3 convolutions (+ReLU),
/// each block closed by 2x2 max pooling.
struct BackboneSpec {
  std::string architecture = "tiny";
  std::string weights;  // checkpoint to initialize from; empty = seeded random init
  int input_width = 16;
  int input_height = 16;
  int input_channels = 3;
  std::vector<std::vector<int>> blocks{{8}, {16}};
  int trainable_from_block = 1;  // blocks before this index are frozen
  bool conv_bias = false;         // false: convolutions have no bias (held at zero)

  static BackboneSpec tiny() { return {}; }

  static BackboneSpec vgg16() {
    BackboneSpec s;
    s.architecture = "vgg16";
    s.input_width = s.input_height = 224;
    s.blocks = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
    s.trainable_from_block = 4;
    s.conv_bias = true;
    return s;
  }

  static BackboneSpec named(std::string_view name) {
    if (name == "tiny") return tiny();
    if (name == "vgg16") return vgg16();
    throw ConfigError("unknown backbone '" + std::string(name) + "'");
  }

  void validate() const {
    if (blocks.empty()) throw ConfigError("backbone needs at least one block");
    for (const auto& b : blocks)
      if (b.empty()) throw ConfigError("backbone block without convolutions");
    if (trainable_from_block < 0 || trainable_from_block > static_cast<int>(blocks.size()))
      throw ConfigError("trainable_from_block out of range");
    int h = input_height, w = input_width;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      h /= 2;
      w /= 2;
    }
    if (h < 1 || w < 1) throw ConfigError("input resolution too small for the backbone depth");
  }

  nlohmann::json to_json() const {
    return {{"architecture", architecture}, {"weights", weights},
            {"input_width", input_width},   {"input_height", input_height},
            {"input_channels", input_channels}, {"blocks", blocks},
            {"trainable_from_block", trainable_from_block}, {"conv_bias", conv_bias}};
  }

  static BackboneSpec from_json(const nlohmann::json& j) {
    BackboneSpec s;
    s.architecture = j.value("architecture", s.architecture);
    s.weights = j.value("weights", s.weights);
    s.input_width = j.value("input_width", s.input_width);
    s.input_height = j.value("input_height", s.input_height);
    s.input_channels = j.value("input_channels", s.input_channels);
    if (j.contains("blocks")) s.blocks = j.at("blocks").get<std::vector<std::vector<int>>>();
    s.trainable_from_block = j.value("trainable_from_block", s.trainable_from_block);
    s.conv_bias = j.value("conv_bias", s.conv_bias);
    return s;
  }
};

/// Fully connected head: hidden layers (ReLU + dropout) then a 3-way output.
struct ImageHeadSpec {
  int hidden_units = 512;
  int hidden_layers = 2;
  double dropout = 0.5;
  int classes = 3;

  void validate() const {
    if (hidden_units < 1 || hidden_layers < 0 || classes < 2)
      throw ConfigError("invalid head dimensions");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
  }

  nlohmann::json to_json() const {
    return {{"hidden_units", hidden_units}, {"hidden_layers", hidden_layers},
            {"dropout", dropout}, {"classes", classes}};
  }

  static ImageHeadSpec from_json(const nlohmann::json& j) {
    ImageHeadSpec s;
    s.hidden_units = j.value("hidden_units", s.hidden_units);
    s.hidden_layers = j.value("hidden_layers", s.hidden_layers);
    s.dropout = j.value("dropout", s.dropout);
    s.classes = j.value("classes", s.classes);
    return s;
  }
};

enum class Mode { train, eval };

/// Everything one forward pass leaves behind for the backward pass.
struct FrameTrace {
  struct Conv {
    Matrix cols;  // im2col of the layer input
    Matrix out;   // post-ReLU output
    int height = 0, width = 0;
  };
  struct Pool {
    std::vector<int> argmax;
    int channels = 0, in_height = 0, in_width = 0;
  };

  int start_block = 0;
  std::vector<Conv> conv;                // indexed by global conv index
  std::vector<std::optional<Pool>> pool;  // indexed by block
  Vector flat;
  std::vector<Vector> hidden_pre;   // pre-activation of hidden layers
  std::vector<Vector> hidden_out;   // post ReLU and dropout
  std::vector<Vector> dropout_mask;
  Vector logits;

  // Set by backward() when a conv layer's output gradient is requested.
  std::optional<Matrix> captured_grad;
};

struct BackwardOptions {
  bool accumulate_param_grads = true;
  int capture_conv = -1;  // global conv index whose d(score)/d(output) to keep
};

// 3x3 convolution, stride 1, zero padding 1.
inline Matrix im2col3x3(const Matrix& in, int channels, int h, int w) {
  Matrix cols = Matrix::Zero(channels * 9, h * w);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            cols(row, y * w + x) = in(c, sy * w + sx);
          }
        }
      }
  return cols;
}

inline Matrix col2im3x3(const Matrix& cols, int channels, int h, int w) {
  Matrix out = Matrix::Zero(channels, h * w);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            out(c, sy * w + sx) += cols(row, y * w + x);
          }
        }
      }
  return out;
}

/// The per-frame network F: backbone followed by the classification head.
class FrameNet {
 public:
  FrameNet() = default;

  FrameNet(BackboneSpec backbone, ImageHeadSpec head, std::uint64_t seed)
      : backbone_(std::move(backbone)), head_(head) {
    backbone_.validate();
    head_.validate();
    Rng rng(seed);
    int in_c = backbone_.input_channels;
    int h = backbone_.input_height, w = backbone_.input_width;
    for (std::size_t b = 0; b < backbone_.blocks.size(); ++b) {
      const bool trainable = static_cast<int>(b) >= backbone_.trainable_from_block;
      for (std::size_t k = 0; k < backbone_.blocks[b].size(); ++k) {
        const int out_c = backbone_.blocks[b][k];
        const std::string name = "block" + std::to_string(b + 1) + "_conv" + std::to_string(k + 1);
        convs_.push_back({static_cast<int>(b), in_c, out_c,
                          make_param(name + ".weight", out_c, in_c * 9, in_c * 9, trainable, rng),
                          zero_param(name + ".bias", out_c, 1, trainable && backbone_.conv_bias)});
        in_c = out_c;
      }
      h /= 2;
      w /= 2;
    }
    int fan_in = in_c * h * w;
    for (int i = 0; i < head_.hidden_layers; ++i) {
      const std::string name = "fc" + std::to_string(i + 1);
      dense_.push_back({make_param(name + ".weight", head_.hidden_units, fan_in, fan_in, true, rng),
                        zero_param(name + ".bias", head_.hidden_units, 1, true)});
      fan_in = head_.hidden_units;
    }
    dense_.push_back({make_param("predictions.weight", head_.classes, fan_in, fan_in, true, rng),
                      zero_param("predictions.bias", head_.classes, 1, true)});
  }

  const BackboneSpec& backbone() const noexcept { return backbone_; }
  const ImageHeadSpec& head() const noexcept { return head_; }
  int num_blocks() const noexcept { return static_cast<int>(backbone_.blocks.size()); }
  int num_convs() const noexcept { return static_cast<int>(convs_.size()); }
  int last_conv() const noexcept { return num_convs() - 1; }
  int first_trainable_block() const noexcept { return backbone_.trainable_from_block; }

  std::string conv_name(int index) const {
    const auto& n = convs_.at(static_cast<std::size_t>(index)).weight.name;
    return n.substr(0, n.find('.'));
  }

  int conv_index(std::string_view name) const {
    for (int i = 0; i < num_convs(); ++i)
      if (conv_name(i) == name) return i;
    throw ConfigError("network has no conv layer named '" + std::string(name) + "'");
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    for (auto& c : convs_) {
      out.push_back(&c.weight);
      out.push_back(&c.bias);
    }
    for (auto& d : dense_) {
      out.push_back(&d.weight);
      out.push_back(&d.bias);
    }
    return out;
  }

  std::vector<const Param*> parameters() const {
    std::vector<const Param*> out;
    for (auto* p : const_cast<FrameNet*>(this)->parameters()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.setZero();
  }

  /// FNV-1a over parameter bytes; `frozen_only` restricts to non-trainable ones.
  std::uint64_t checksum(bool frozen_only = false) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* p : parameters()) {
      if (frozen_only && p->trainable) continue;
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p->value.data()),
                                   static_cast<std::size_t>(p->value.size()) * sizeof(double)),
                  h);
    }
    return h;
  }

  /// Runs blocks [0, end_block) without recording a trace.
  FeatureMap forward_prefix(const FeatureMap& input, int end_block) const {
    FeatureMap x = input;
    for (int b = 0; b < end_block; ++b) x = run_block(b, x, nullptr);
    return x;
  }

  /// Pre-softmax scores for one frame. `input` is the output of blocks
  /// [0, start_block) (the raw preprocessed frame when start_block is 0).
  Vector forward(const FeatureMap& input, int start_block, Mode mode, Rng* rng,
                 FrameTrace* trace) const {
    if (trace) {
      *trace = FrameTrace{};
      trace->start_block = start_block;
      trace->conv.resize(convs_.size());
      trace->pool.resize(backbone_.blocks.size());
    }
    FeatureMap x = input;
    for (int b = start_block; b < num_blocks(); ++b) x = run_block(b, x, trace);
    // Flatten in (y, x, channel) order like a channels-last framework.
    Vector a(x.data.size());
    for (int c = 0; c < x.channels; ++c)
      for (int s = 0; s < x.spatial(); ++s) a(s * x.channels + c) = x.data(c, s);
    if (trace) trace->flat = a;
    for (std::size_t i = 0; i + 1 < dense_.size(); ++i) {
      Vector pre = dense_[i].weight.value * a + dense_[i].bias.value.col(0);
      Vector out = pre.cwiseMax(0.0);
      Vector mask;
      if (mode == Mode::train && head_.dropout > 0.0) {
        if (!rng) throw std::logic_error("training-mode forward needs an RNG for dropout");
        mask.resize(out.size());
        const double keep = 1.0 - head_.dropout;
        for (Eigen::Index k = 0; k < mask.size(); ++k) mask(k) = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
        out = out.cwiseProduct(mask);
      }
      if (trace) {
        trace->hidden_pre.push_back(pre);
        trace->hidden_out.push_back(out);
        trace->dropout_mask.push_back(mask);
      }
      a = std::move(out);
    }
    Vector logits = dense_.back().weight.value * a + dense_.back().bias.value.col(0);
    if (trace) trace->logits = logits;
    return logits;
  }

  /// Backpropagates d(objective)/d(logits). Parameter gradients accumulate into
  /// Param::grad for trainable parameters only.
  void backward(const Vector& dlogits, FrameTrace& trace, const BackwardOptions& opt = {}) {
    Vector g = dlogits;
    const Vector& last_in = dense_.size() > 1 ? trace.hidden_out.back() : trace.flat;
    if (opt.accumulate_param_grads) {
      dense_.back().weight.grad.noalias() += g * last_in.transpose();
      dense_.back().bias.grad.col(0) += g;
    }
    g = dense_.back().weight.value.transpose() * g;
    for (std::size_t ii = dense_.size() - 1; ii-- > 0;) {
      if (trace.dropout_mask[ii].size() != 0) g = g.cwiseProduct(trace.dropout_mask[ii]);
      for (Eigen::Index k = 0; k < g.size(); ++k)
        if (trace.hidden_pre[ii](k) <= 0.0) g(k) = 0.0;
      const Vector& in = ii == 0 ? trace.flat : trace.hidden_out[ii - 1];
      if (opt.accumulate_param_grads) {
        dense_[ii].weight.grad.noalias() += g * in.transpose();
        dense_[ii].bias.grad.col(0) += g;
      }
      g = dense_[ii].weight.value.transpose() * g;
    }

    // Unflatten into the last feature map layout.
    const auto& last_block = backbone_.blocks.size() - 1;
    const int channels = backbone_.blocks[last_block].back();
    const int spatial = static_cast<int>(g.size()) / channels;
    Matrix d(channels, spatial);
    for (int c = 0; c < channels; ++c)
      for (int s = 0; s < spatial; ++s) d(c, s) = g(s * channels + c);

    const int stop_block = std::min(
        std::max(trace.start_block, backbone_.trainable_from_block),
        opt.capture_conv >= 0 ? convs_[static_cast<std::size_t>(opt.capture_conv)].block : num_blocks());
    const int lowest_block = std::max(stop_block, trace.start_block);
    for (int b = num_blocks() - 1; b >= lowest_block; --b) {
      if (const auto& pool = trace.pool[static_cast<std::size_t>(b)]) {
        Matrix up = Matrix::Zero(pool->channels, pool->in_height * pool->in_width);
        for (int c = 0; c < pool->channels; ++c)
          for (int s = 0; s < d.cols(); ++s) up(c, pool->argmax[static_cast<std::size_t>(c * d.cols() + s)]) += d(c, s);
        d = std::move(up);
      }
      const auto [first, last] = block_conv_range(b);
      for (int ci = last - 1; ci >= first; --ci) {
        auto& layer = convs_[static_cast<std::size_t>(ci)];
        auto& t = trace.conv[static_cast<std::size_t>(ci)];
        if (ci == opt.capture_conv) trace.captured_grad = d;
        d = d.cwiseProduct((t.out.array() > 0.0).cast<double>().matrix());
        if (opt.accumulate_param_grads && layer.weight.trainable) {
          layer.weight.grad.noalias() += d * t.cols.transpose();
          if (layer.bias.trainable) layer.bias.grad.col(0) += d.rowwise().sum();
        }
        if (ci == first && b == lowest_block) break;
        Matrix dcols = layer.weight.value.transpose() * d;
        d = col2im3x3(dcols, layer.in_channels, t.height, t.width);
      }
    }
  }

  // --- serialization -------------------------------------------------------

  nlohmann::json to_json() const {
    nlohmann::json params = nlohmann::json::object();
    for (const auto* p : parameters()) {
      std::vector<double> v(p->value.data(), p->value.data() + p->value.size());
      params[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"values", v}};
    }
    return {{"backbone", backbone_.to_json()}, {"head", head_.to_json()}, {"parameters", params}};
  }

  static FrameNet from_json(const nlohmann::json& j) {
    FrameNet net(BackboneSpec::from_json(j.at("backbone")), ImageHeadSpec::from_json(j.at("head")), 0);
    net.load_parameters(j.at("parameters"));
    return net;
  }

  /// Copies matching parameter values (by name and shape) from a checkpoint.
  void load_parameters(const nlohmann::json& params) {
    for (auto* p : parameters()) {
      if (!params.contains(p->name)) throw DataError("checkpoint lacks parameter " + p->name);
      const auto& e = params.at(p->name);
      if (e.at("rows").get<Eigen::Index>() != p->value.rows() ||
          e.at("cols").get<Eigen::Index>() != p->value.cols())
        throw DataError("checkpoint parameter " + p->name + " has the wrong shape");
      const auto v = e.at("values").get<std::vector<double>>();
      std::memcpy(p->value.data(), v.data(), v.size() * sizeof(double));
    }
  }

  void copy_parameters_from(const FrameNet& other) {
    auto dst = parameters();
    auto src = other.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
  }

 private:
  struct ConvLayer {
    int block;
    int in_channels;
    int out_channels;
    Param weight;  // out x (in * 9)
    Param bias;    // out x 1
  };
  struct DenseLayer {
    Param weight;
    Param bias;
  };

  static Param make_param(std::string name, int rows, int cols, int fan_in, bool trainable, Rng& rng) {
    Param p{std::move(name), Matrix(rows, cols), Matrix::Zero(rows, cols), trainable};
    const double sd = std::sqrt(2.0 / fan_in);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = sd * standard_normal(rng);
    return p;
  }

  static Param zero_param(std::string name, int rows, int cols, bool trainable) {
    return {std::move(name), Matrix::Zero(rows, cols), Matrix::Zero(rows, cols), trainable};
  }

  std::pair<int, int> block_conv_range(int block) const {
    int first = 0;
    for (int b = 0; b < block; ++b) first += static_cast<int>(backbone_.blocks[static_cast<std::size_t>(b)].size());
    return {first, first + static_cast<int>(backbone_.blocks[static_cast<std::size_t>(block)].size())};
  }

  FeatureMap run_block(int b, FeatureMap x, FrameTrace* trace) const {
    const auto [first, last] = block_conv_range(b);
    for (int ci = first; ci < last; ++ci) {
      const auto& layer = convs_[static_cast<std::size_t>(ci)];
      if (x.channels != layer.in_channels)
        throw DataError("conv input has " + std::to_string(x.channels) + " channels, expected " +
                        std::to_string(layer.in_channels));
      Matrix cols = im2col3x3(x.data, x.channels, x.height, x.width);
      FeatureMap y(layer.out_channels, x.height, x.width);
      y.data.noalias() = layer.weight.value * cols;
      y.data.colwise() += layer.bias.value.col(0);
      y.data = y.data.cwiseMax(0.0);
      if (trace) {
        auto& t = trace->conv[static_cast<std::size_t>(ci)];
        t.cols = std::move(cols);
        t.out = y.data;
        t.height = x.height;
        t.width = x.width;
      }
      x = std::move(y);
    }
    const int oh = x.height / 2, ow = x.width / 2;
    FeatureMap p(x.channels, oh, ow);
    FrameTrace::Pool pt{std::vector<int>(static_cast<std::size_t>(x.channels * oh * ow)), x.channels,
                        x.height, x.width};
    for (int c = 0; c < x.channels; ++c)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          int best = (2 * y) * x.width + 2 * xx;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int s = (2 * y + dy) * x.width + 2 * xx + dx;
              if (x.data(c, s) > x.data(c, best)) best = s;
            }
          p.data(c, y * ow + xx) = x.data(c, best);
          pt.argmax[static_cast<std::size_t>(c * oh * ow + y * ow + xx)] = best;
        }
    if (trace) trace->pool[static_cast<std::size_t>(b)] = std::move(pt);
    return p;
  }

  BackboneSpec backbone_;
  ImageHeadSpec head_;
  std::vector<ConvLayer> convs_;
  std::vector<DenseLayer> dense_;
};

/// RMSprop: v = rho v + (1 - rho) g^2; w -= lr g / (sqrt(v) + eps). Frozen
/// parameters are never touched.
class RmsProp {
 public:
  RmsProp(double learning_rate, double rho = 0.9, double epsilon = 1e-7)
      : lr_(learning_rate), rho_(rho), eps_(epsilon) {}

  void step(std::vector<Param*> params, double grad_scale = 1.0) {
    if (state_.size() != params.size()) {
      state_.clear();
      for (auto* p : params) state_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      if (!p->trainable) continue;
      const Matrix g = p->grad * grad_scale;
      state_[i] = rho_ * state_[i] + (1.0 - rho_) * g.cwiseProduct(g);
      p->value.array() -= lr_ * g.array() / (state_[i].array().sqrt() + eps_);
    }
  }

  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_, rho_, eps_;
  std::vector<Matrix> state_;
};

inline Vector softmax(const Vector& z) {
  const double m = z.maxCoeff();
  Vector e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

}  // namespace scenestress::nn
