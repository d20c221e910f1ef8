#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <optional>
#include <utility>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolrp/image_io.hpp"
#include "evolrp/rng.hpp"
#include "evolrp/tensor.hpp"

namespace evolrp {

enum class ShapeClass : std::size_t { Square = 0, Circle = 1, Cross = 2, Triangle = 3 };

inline const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{"square", "circle", "cross", "triangle"};
  return names;
}

inline constexpr std::size_t kShapeClassCount = 4;

/// Inclusive-exclusive pixel rectangle [row0, row1) x [col0, col1).
struct BoundingBox {
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;

  bool contains(std::size_t r, std::size_t c) const noexcept { return r >= row0 && r < row1 && c >= col0 && c < col1; }
  bool intersects(const BoundingBox& o) const noexcept {
    return row0 < o.row1 && o.row0 < row1 && col0 < o.col1 && o.col0 < col1;
  }
  /// This box grown by `margin` pixels on every side (clamped at zero).
  BoundingBox grown(std::size_t margin) const noexcept {
    return {row0 > margin ? row0 - margin : 0, col0 > margin ? col0 - margin : 0, row1 + margin, col1 + margin};
  }
  std::size_t area() const noexcept { return (row1 - row0) * (col1 - col0); }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Labeled single-object images, shape (1, H, W), pixels in [0, 1].
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::vector<BoundingBox> boxes;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return images.size(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Two distinct non-overlapping objects per image.
struct MultiObjectDataset {
  std::vector<Tensor> images;
  std::vector<std::array<std::size_t, 2>> labels;
  std::vector<std::array<BoundingBox, 2>> boxes;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return images.size(); }
  friend bool operator==(const MultiObjectDataset&, const MultiObjectDataset&) = default;
};

namespace detail {

struct Placement {
  long cy, cx, half;
};

inline bool shape_covers(ShapeClass cls, long dy, long dx, long half) {
  const long ady = std::abs(dy), adx = std::abs(dx);
  switch (cls) {
    case ShapeClass::Square:
      return ady <= half && adx <= half;
    case ShapeClass::Circle:
      return dy * dy + dx * dx <= half * half + half / 2;
    case ShapeClass::Cross: {
      const long arm = std::max(1L, half / 3);
      return (ady <= arm && adx <= half) || (adx <= arm && ady <= half);
    }
    case ShapeClass::Triangle:
      // apex on top, base on the bottom row of the box
      return ady <= half && 2 * adx <= dy + half;
  }
  return false;
}

inline void draw_shape(Tensor& image, ShapeClass cls, const Placement& p, float intensity) {
  const long h = static_cast<long>(image.dim(1)), w = static_cast<long>(image.dim(2));
  for (long r = p.cy - p.half; r <= p.cy + p.half; ++r) {
    for (long c = p.cx - p.half; c <= p.cx + p.half; ++c) {
      if (r < 0 || c < 0 || r >= h || c >= w) continue;
      if (shape_covers(cls, r - p.cy, c - p.cx, p.half)) image[static_cast<std::size_t>(r * w + c)] = intensity;
    }
  }
}

inline BoundingBox box_of(const Placement& p) {
  return {static_cast<std::size_t>(p.cy - p.half), static_cast<std::size_t>(p.cx - p.half),
          static_cast<std::size_t>(p.cy + p.half + 1), static_cast<std::size_t>(p.cx + p.half + 1)};
}

inline Placement random_placement(Rng& rng, std::size_t image_size, long min_half, long max_half) {
  const long n = static_cast<long>(image_size);
  long half = std::uniform_int_distribution<long>(min_half, max_half)(rng);
  // one pixel of margin to the border
  std::uniform_int_distribution<long> pos(half + 1, n - half - 2);
  long cy = pos(rng);
  long cx = pos(rng);
  return {cy, cx, half};
}

inline void add_noise(Tensor& image, Rng& rng, double noise_std) {
  if (noise_std <= 0.0) return;
  std::normal_distribution<double> noise(0.0, noise_std);
  for (auto& v : image.values()) v = static_cast<float>(std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0));
}

inline long min_half_extent(std::size_t image_size) {
  return std::max(3L, std::lround(0.15 * static_cast<double>(image_size)));
}

}  // namespace detail

/// Single-object images, classes interleaved (index i has label i % 4), so
/// every prefix whose length is a multiple of four is class balanced.
inline Dataset generate_shapes(std::size_t n_per_class, std::size_t image_size, double noise_std, std::uint64_t seed) {
  if (image_size < 16) throw std::invalid_argument("image_size must be at least 16");
  if (noise_std < 0.0) throw std::invalid_argument("noise_std must be non-negative");
  const long min_half = detail::min_half_extent(image_size);
  const long max_half = std::max(min_half, std::lround(0.3 * static_cast<double>(image_size)));

  Dataset ds;
  ds.class_names = shape_class_names();
  const std::size_t total = n_per_class * kShapeClassCount;
  ds.images.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng = make_rng(seed, "shapes.image", i);
    const auto cls = static_cast<ShapeClass>(i % kShapeClassCount);
    Tensor image({1, image_size, image_size});
    const auto place = detail::random_placement(rng, image_size, min_half, max_half);
    const float intensity = std::uniform_real_distribution<float>(0.6f, 1.0f)(rng);
    detail::draw_shape(image, cls, place, intensity);
    detail::add_noise(image, rng, noise_std);
    ds.images.push_back(std::move(image));
    ds.labels.push_back(static_cast<std::size_t>(cls));
    ds.boxes.push_back(detail::box_of(place));
  }
  return ds;
}

/// Two-object scenes with disjoint bounding boxes separated by at least one
/// pixel. Throws if a placement cannot be found within `max_retries` tries.
inline MultiObjectDataset generate_multiobject(std::size_t n, std::size_t image_size, std::uint64_t seed,
                                               double noise_std = 0.0, std::size_t max_retries = 200) {
  if (image_size < 16) throw std::invalid_argument("image_size must be at least 16");
  const long min_half = detail::min_half_extent(image_size);
  const long max_half = min_half + 2;

  MultiObjectDataset ds;
  ds.class_names = shape_class_names();
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, "multiobject.image", i);
    std::uniform_int_distribution<std::size_t> pick(0, kShapeClassCount - 1);
    const std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    while (b == a) b = pick(rng);

    std::optional<std::pair<detail::Placement, detail::Placement>> placed;
    for (std::size_t attempt = 0; attempt < max_retries && !placed; ++attempt) {
      const auto first = detail::random_placement(rng, image_size, min_half, max_half);
      const auto candidate = detail::random_placement(rng, image_size, min_half, max_half);
      if (!detail::box_of(candidate).intersects(detail::box_of(first).grown(1))) placed.emplace(first, candidate);
    }
    if (!placed) {
      throw std::runtime_error("could not place two non-overlapping objects on a " + std::to_string(image_size) +
                               "x" + std::to_string(image_size) + " canvas after " + std::to_string(max_retries) +
                               " attempts (image " + std::to_string(i) + ")");
    }

    Tensor image({1, image_size, image_size});
    std::uniform_real_distribution<float> intensity(0.6f, 1.0f);
    const auto& [first, second] = *placed;
    detail::draw_shape(image, static_cast<ShapeClass>(a), first, intensity(rng));
    detail::draw_shape(image, static_cast<ShapeClass>(b), second, intensity(rng));
    detail::add_noise(image, rng, noise_std);
    ds.images.push_back(std::move(image));
    ds.labels.push_back({a, b});
    ds.boxes.push_back({detail::box_of(first), detail::box_of(second)});
  }
  return ds;
}

/// Writes image_NNNNN.pgm files plus labels.csv into `dir`.
inline void export_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "labels.csv");
  if (!index) throw std::runtime_error("cannot write " + (dir / "labels.csv").string());
  index << "file,label,class_name,row0,col0,row1,col1\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "image_%05zu.pgm", i);
    write_pgm(dir / name, ds.images[i]);
    const auto& b = ds.boxes[i];
    index << name << ',' << ds.labels[i] << ',' << ds.class_names[ds.labels[i]] << ',' << b.row0 << ',' << b.col0
          << ',' << b.row1 << ',' << b.col1 << '\n';
  }
}

inline void export_dataset(const MultiObjectDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "labels.csv");
  if (!index) throw std::runtime_error("cannot write " + (dir / "labels.csv").string());
  index << "file,label_a,label_b,a_row0,a_col0,a_row1,a_col1,b_row0,b_col0,b_row1,b_col1\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "image_%05zu.pgm", i);
    write_pgm(dir / name, ds.images[i]);
    index << name << ',' << ds.labels[i][0] << ',' << ds.labels[i][1];
    for (const auto& b : ds.boxes[i]) index << ',' << b.row0 << ',' << b.col0 << ',' << b.row1 << ',' << b.col1;
    index << '\n';
  }
}

}  // namespace evolrp
