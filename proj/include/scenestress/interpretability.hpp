#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "scenestress/common.hpp"
#include "scenestress/deep.hpp"

namespace scenestress {

/// Heat map over a frame, row-major, values in [0,1].
struct CamMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  StressClass target = StressClass::low;
  std::string layer;
  double raw_max = 0.0;  // max before normalization; 0 for a degenerate map

  double at(int x, int y) const { return values[static_cast<std::size_t>(y * width + x)]; }
  double total() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
};

/// Bilinear resize with pixel-center alignment and edge clamping.
inline std::vector<double> bilinear_upsample(std::span<const double> src, int sw, int sh, int dw, int dh) {
  std::vector<double> out(static_cast<std::size_t>(dw * dh));
  const double fx = static_cast<double>(sw) / dw, fy = static_cast<double>(sh) / dh;
  for (int y = 0; y < dh; ++y) {
    const double sy = std::clamp((y + 0.5) * fy - 0.5, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = sy - y0;
    for (int x = 0; x < dw; ++x) {
      const double sx = std::clamp((x + 0.5) * fx - 0.5, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = sx - x0;
      auto s = [&](int yy, int xx) { return src[static_cast<std::size_t>(yy * sw + xx)]; };
      out[static_cast<std::size_t>(y * dw + x)] =
          (1 - wy) * ((1 - wx) * s(y0, x0) + wx * s(y0, x1)) + wy * ((1 - wx) * s(y1, x0) + wx * s(y1, x1));
    }
  }
  return out;
}

/// Rectified gradient-weighted sum of feature maps at the layer's resolution.
/// `activations` and `gradients` are channels x (h * w).
inline std::vector<double> gradcam_raw(const nn::Matrix& activations, const nn::Matrix& gradients, int h, int w) {
  if (h < 1 || w < 1 || activations.cols() != h * w)
    throw ConfigError("GradCAM layer has no spatial extent");
  if (gradients.rows() != activations.rows() || gradients.cols() != activations.cols())
    throw std::invalid_argument("activation and gradient shapes differ");
  const nn::Vector alpha = gradients.rowwise().mean();
  const nn::Vector cam = (activations.transpose() * alpha).cwiseMax(0.0);
  return {cam.data(), cam.data() + cam.size()};
}

/// Upsamples a raw map to width x height and scales it so its max is 1.
/// An all-zero map stays all zero.
inline CamMap finish_cam(std::span<const double> raw, int h, int w, int width, int height) {
  CamMap m;
  m.width = width;
  m.height = height;
  m.values = bilinear_upsample(raw, w, h, width, height);
  m.raw_max = *std::max_element(m.values.begin(), m.values.end());
  if (m.raw_max > 0.0)
    for (auto& v : m.values) v = std::clamp(v / m.raw_max, 0.0, 1.0);
  else
    std::fill(m.values.begin(), m.values.end(), 0.0);
  return m;
}

inline CamMap gradcam_from_activations(const nn::Matrix& activations, const nn::Matrix& gradients, int h, int w,
                                       int width, int height) {
  const auto raw = gradcam_raw(activations, gradients, h, w);
  return finish_cam(raw, h, w, width, height);
}

struct GradCamOptions {
  std::optional<StressClass> target;  // default: the predicted class
  std::string layer;                  // default: last convolution
};

namespace detail {

inline int resolve_layer(const nn::FrameNet& net, const std::string& layer) {
  return layer.empty() ? net.last_conv() : net.conv_index(layer);
}

/// Places a CAM computed at network resolution onto the frame's crop region.
inline CamMap to_frame(const std::vector<double>& raw, int h, int w, const Preprocess& pre, int frame_w,
                       int frame_h) {
  if (frame_w == pre.width && frame_h == pre.height) return finish_cam(raw, h, w, frame_w, frame_h);
  const auto r = pre.crop_region(frame_w, frame_h);
  const int rx = static_cast<int>(std::lround(r.x)), ry = static_cast<int>(std::lround(r.y));
  const int rw = std::max(1, static_cast<int>(std::lround(r.width)));
  const int rh = std::max(1, static_cast<int>(std::lround(r.height)));
  const auto inner = bilinear_upsample(raw, w, h, rw, rh);
  std::vector<double> full(static_cast<std::size_t>(frame_w * frame_h), 0.0);
  for (int y = 0; y < rh; ++y)
    for (int x = 0; x < rw; ++x) {
      const int fx = rx + x, fy = ry + y;
      if (fx >= 0 && fy >= 0 && fx < frame_w && fy < frame_h)
        full[static_cast<std::size_t>(fy * frame_w + fx)] = inner[static_cast<std::size_t>(y * rw + x)];
    }
  CamMap m;
  m.width = frame_w;
  m.height = frame_h;
  m.values = std::move(full);
  m.raw_max = *std::max_element(m.values.begin(), m.values.end());
  if (m.raw_max > 0.0)
    for (auto& v : m.values) v = std::clamp(v / m.raw_max, 0.0, 1.0);
  return m;
}

}  // namespace detail

/// GradCAM maps for frames whose logits are averaged (one frame = image model).
/// The score differentiated is the target entry of the averaged logits.
inline std::vector<CamMap> gradcam_consensus(StressModel& model, std::span<const cv::Mat> frames,
                                             const GradCamOptions& opt = {}) {
  if (frames.empty()) throw DataError("no frames to explain");
  auto& net = model.net();
  const int layer = detail::resolve_layer(net, opt.layer);
  const auto& pre = model.config().preprocess;

  std::vector<nn::FeatureMap> inputs;
  for (const auto& f : frames) inputs.push_back(pre(f));
  std::vector<const nn::FeatureMap*> ptrs;
  for (const auto& x : inputs) ptrs.push_back(&x);
  std::vector<nn::FrameTrace> traces;
  const nn::Vector z = model.consensus_logits(ptrs, 0, nn::Mode::eval, nullptr, &traces);

  Eigen::Index t = 0;
  if (opt.target) {
    t = static_cast<Eigen::Index>(index_of(*opt.target));
  } else {
    z.maxCoeff(&t);
  }
  if (t < 0 || t >= z.size()) throw ConfigError("target class out of range");

  nn::Vector dz = nn::Vector::Zero(z.size());
  dz(t) = 1.0 / static_cast<double>(frames.size());
  std::vector<CamMap> maps;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    net.backward(dz, traces[k], {.accumulate_param_grads = false, .capture_conv = layer});
    const auto& conv = traces[k].conv[static_cast<std::size_t>(layer)];
    const auto raw = gradcam_raw(conv.out, *traces[k].captured_grad, conv.height, conv.width);
    auto m = detail::to_frame(raw, conv.height, conv.width, pre, frames[k].cols, frames[k].rows);
    m.target = class_at(static_cast<std::size_t>(t));
    m.layer = net.conv_name(layer);
    maps.push_back(std::move(m));
  }
  return maps;
}

inline CamMap gradcam(StressModel& model, const cv::Mat& frame, const GradCamOptions& opt = {}) {
  const cv::Mat frames[] = {frame};
  return gradcam_consensus(model, frames, opt).front();
}

/// One map per sampled segment frame of a TSN clip.
inline std::vector<CamMap> cam_for_clip(StressModel& model, const ClipSample& clip, FrameStore& store,
                                        const GradCamOptions& opt = {}) {
  const auto idx = model.sampled_frames(clip, store.sessions().at(clip.session));
  std::vector<cv::Mat> frames;
  for (auto i : idx) frames.push_back(store.image(clip.session, i));
  return gradcam_consensus(model, frames, opt);
}

/// Share of the map's total mass where `inside` is true (row-major, frame-sized).
inline double mass_fraction(const CamMap& m, const std::vector<bool>& inside) {
  double in = 0.0, all = 0.0;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    all += m.values[i];
    if (inside[i]) in += m.values[i];
  }
  return all > 0.0 ? in / all : 0.0;
}

// --- export ------------------------------------------------------------------

inline cv::Mat overlay(const CamMap& m, const cv::Mat& frame_bgr, double alpha = 0.5) {
  cv::Mat gray(m.height, m.width, CV_8UC1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      gray.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(255.0 * m.at(x, y)));
  cv::Mat heat, out;
  cv::applyColorMap(gray, heat, cv::COLORMAP_JET);
  cv::Mat base = frame_bgr;
  if (base.size() != heat.size()) cv::resize(frame_bgr, base, heat.size());
  cv::addWeighted(heat, alpha, base, 1.0 - alpha, 0.0, out);
  return out;
}

/// Writes <stem>.bin (float32, little-endian, row-major), <stem>.json and
/// optionally <stem>.png (overlay).
inline void write_cam(const std::filesystem::path& stem, const CamMap& m, const std::string& clip_key,
                      const cv::Mat* frame = nullptr, const nlohmann::json& extra = {}) {
  std::string bytes(m.values.size() * sizeof(float), '\0');
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const float f = static_cast<float>(m.values[i]);
    std::memcpy(bytes.data() + i * sizeof(float), &f, sizeof(float));
  }
  write_text_file(stem.string() + ".bin", bytes);
  nlohmann::ordered_json j;
  j["width"] = m.width;
  j["height"] = m.height;
  j["dtype"] = "float32";
  j["order"] = "row-major";
  j["class"] = std::string(to_string(m.target));
  j["layer"] = m.layer;
  j["clip_key"] = clip_key;
  j["raw_max"] = m.raw_max;
  for (auto it = extra.begin(); extra.is_object() && it != extra.end(); ++it) j[it.key()] = it.value();
  write_text_file(stem.string() + ".json", j.dump(2) + "\n");
  if (frame && !cv::imwrite(stem.string() + ".png", overlay(m, *frame)))
    throw DataError("cannot write " + stem.string() + ".png");
}

}  // namespace scenestress
