#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "evolrp/image_io.hpp"
#include "evolrp/lrp.hpp"

namespace evolrp {

/// Mean of the LRP maps of every class (one forward pass).
inline RelevanceMap all_class_map(const Model& model, const Tensor& input, const LayerRuleConfig& config) {
  const auto trace = forward(model, input);
  const std::size_t classes = model.num_classes();
  std::vector<double> acc;
  Shape shape;
  for (std::size_t c = 0; c < classes; ++c) {
    const Tensor m = explain_lrp(model, trace, c, config).values;
    if (acc.empty()) {
      acc.assign(m.size(), 0.0);
      shape = m.shape();
    }
    for (std::size_t i = 0; i < m.size(); ++i) acc[i] += m[i];
  }
  Tensor out(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(classes));
  return {std::move(out), 0, "all_class", config};
}

/// Contrast maps of every class, R_c - mean_k R_k, from one forward pass.
inline std::vector<RelevanceMap> class_contrast_maps(const Model& model, const Tensor& input,
                                                     const LayerRuleConfig& config) {
  const auto trace = forward(model, input);
  const std::size_t classes = model.num_classes();
  std::vector<Tensor> maps;
  for (std::size_t c = 0; c < classes; ++c) maps.push_back(explain_lrp(model, trace, c, config).values);
  std::vector<double> mean(maps.front().size(), 0.0);
  for (const auto& m : maps)
    for (std::size_t i = 0; i < m.size(); ++i) mean[i] += m[i];
  for (auto& v : mean) v /= static_cast<double>(classes);
  std::vector<RelevanceMap> out;
  for (std::size_t c = 0; c < classes; ++c) {
    Tensor t(maps[c].shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(static_cast<double>(maps[c][i]) - mean[i]);
    out.push_back({std::move(t), c, "contrast", config});
  }
  return out;
}

inline RelevanceMap class_contrast_map(const Model& model, const Tensor& input, std::size_t target,
                                       const LayerRuleConfig& config) {
  if (target >= model.num_classes()) throw std::invalid_argument("target class out of range");
  return std::move(class_contrast_maps(model, input, config)[target]);
}

/// Quantile of ascending `sorted` data by linear interpolation between order
/// statistics at position q * (n - 1).
inline double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Clamp bounds (the p and 1 - p quantiles) of `map`.
inline std::pair<double, double> percentile_bounds(const Tensor& map, double p) {
  if (!(p >= 0.0 && p < 0.5)) throw std::invalid_argument("clamp percentile must be in [0, 0.5)");
  std::vector<double> v(map.values().begin(), map.values().end());
  std::sort(v.begin(), v.end());
  return {sorted_quantile(v, p), sorted_quantile(v, 1.0 - p)};
}

inline Tensor clamp_percentiles(const Tensor& map, double p) {
  const auto [lo, hi] = percentile_bounds(map, p);
  if (p == 0.0) return map;
  const auto flo = static_cast<float>(lo), fhi = static_cast<float>(hi);
  Tensor out = map;
  for (auto& v : out.values()) v = std::clamp(v, flo, fhi);
  return out;
}

inline RelevanceMap clamp_percentiles(const RelevanceMap& map, double p) {
  RelevanceMap out = map;
  out.values = clamp_percentiles(map.values, p);
  return out;
}

inline constexpr double kCompositeClampPercentile = 0.01;

/// Unclamped sum of the target's contrast maps under each configuration.
inline Tensor composite_sum(const Model& model, const Tensor& input, std::size_t target,
                            std::span<const LayerRuleConfig> configs) {
  if (configs.empty()) throw std::invalid_argument("composite needs at least one configuration");
  std::vector<double> acc;
  Shape shape;
  for (const auto& cfg : configs) {
    const Tensor m = class_contrast_map(model, input, target, cfg).values;
    if (acc.empty()) {
      acc.assign(m.size(), 0.0);
      shape = m.shape();
    }
    for (std::size_t i = 0; i < m.size(); ++i) acc[i] += m[i];
  }
  Tensor out(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

/// Sum of the target's contrast maps under the faithfulness-, sensitivity-
/// and sparseness-optimized configurations, clamped at the 1% / 99% quantiles.
inline RelevanceMap composite_map(const Model& model, const Tensor& input, std::size_t target,
                                  const std::array<LayerRuleConfig, 3>& configs,
                                  double clamp_p = kCompositeClampPercentile) {
  return {clamp_percentiles(composite_sum(model, input, target, configs), clamp_p), target, "composite", {}};
}

// -------------------------------------------------------------------- rendering

enum class HeatmapFormat { Pgm, Png, Csv };

inline std::optional<HeatmapFormat> heatmap_format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".pgm") return HeatmapFormat::Pgm;
  if (ext == ".png") return HeatmapFormat::Png;
  if (ext == ".csv") return HeatmapFormat::Csv;
  return std::nullopt;
}

/// Map values divided by max |value|, so they lie in [-1, 1].
struct HeatmapImage {
  std::size_t height = 0, width = 0;
  std::vector<double> values;

  static HeatmapImage from_map(const Tensor& map) {
    const auto [h, w] = map.rank() == 2 ? std::pair{map.dim(0), map.dim(1)} : image_extent(map);
    HeatmapImage img{h, w, std::vector<double>(map.size(), 0.0)};
    double peak = 0.0;
    for (float v : map.values()) peak = std::max(peak, std::abs(static_cast<double>(v)));
    if (peak > 0.0)
      for (std::size_t i = 0; i < map.size(); ++i) img.values[i] = std::clamp(map[i] / peak, -1.0, 1.0);
    return img;
  }

  /// Blue (-1) through white (0) to red (+1).
  static std::array<std::uint8_t, 3> diverging(double t) {
    const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(t))));
    if (t >= 0.0) return {255, fade, fade};
    return {fade, fade, 255};
  }

  std::vector<std::uint8_t> rgb() const {
    std::vector<std::uint8_t> out;
    out.reserve(values.size() * 3);
    for (double t : values) {
      const auto c = diverging(t);
      out.insert(out.end(), c.begin(), c.end());
    }
    return out;
  }

  std::vector<std::uint8_t> grey() const {
    std::vector<std::uint8_t> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = to_byte(std::abs(values[i]));
    return out;
  }
};

inline std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_map_csv(const std::filesystem::path& path, const Tensor& map) {
  const auto [h, w] = map.rank() == 2 ? std::pair{map.dim(0), map.dim(1)} : image_extent(map);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "row,col,value\n";
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out << r << ',' << c << ',' << format_float(map[r * w + c]) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline Tensor read_map_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "row,col,value") throw std::runtime_error(path.string() + ": missing CSV header");
  struct Entry { std::size_t r, c; float v; };
  std::vector<Entry> entries;
  std::size_t h = 0, w = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Entry e{};
    const char* p = line.data();
    const char* end = p + line.size();
    auto bad = [&] { return std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed row"); };
    auto r1 = std::from_chars(p, end, e.r);
    if (r1.ec != std::errc{} || r1.ptr == end || *r1.ptr != ',') throw bad();
    auto r2 = std::from_chars(r1.ptr + 1, end, e.c);
    if (r2.ec != std::errc{} || r2.ptr == end || *r2.ptr != ',') throw bad();
    auto r3 = std::from_chars(r2.ptr + 1, end, e.v);
    if (r3.ec != std::errc{} || r3.ptr != end) throw bad();
    h = std::max(h, e.r + 1);
    w = std::max(w, e.c + 1);
    entries.push_back(e);
  }
  if (entries.size() != h * w) throw std::runtime_error(path.string() + ": CSV does not cover a full grid");
  Tensor map({h, w});
  for (const auto& e : entries) map[e.r * w + e.c] = e.v;
  return map;
}

/// Writes `map` as a P5 greymap of |value|, a diverging-colormap PNG, or exact CSV.
inline void render_heatmap(const Tensor& map, const std::filesystem::path& path, HeatmapFormat format) {
  if (format == HeatmapFormat::Csv) return write_map_csv(path, map);
  const auto img = HeatmapImage::from_map(map);
  if (format == HeatmapFormat::Pgm)
    write_pgm_bytes(path, img.height, img.width, img.grey());
  else
    write_png_rgb(path, img.height, img.width, img.rgb());
}

inline void render_heatmap(const Tensor& map, const std::filesystem::path& path) {
  const auto format = heatmap_format_from_path(path);
  if (!format) throw std::invalid_argument("cannot infer heatmap format from " + path.string());
  render_heatmap(map, path, *format);
}

}  // namespace evolrp
