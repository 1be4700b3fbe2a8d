#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace catseg {

struct Shape3 {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t d = 0;

  std::int64_t voxels() const { return h * w * d; }
  std::int64_t operator[](int axis) const { return axis == 0 ? h : axis == 1 ? w : d; }
  bool operator==(const Shape3&) const = default;
  std::string str() const;
};

/// Voxel spacing in millimetres along (h, w, d).
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  bool operator==(const Spacing&) const = default;
};

/// Half-open voxel box [lo, hi).
struct BoundingBox {
  std::array<std::int64_t, 3> lo{};
  std::array<std::int64_t, 3> hi{};

  Shape3 extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  bool operator==(const BoundingBox&) const = default;
};

/// Dense scalar grid, row-major over (h, w, d).
class Volume {
 public:
  Volume() = default;
  Volume(Shape3 shape, Spacing spacing, float fill = 0.0F);
  Volume(Shape3 shape, Spacing spacing, std::vector<float> data);

  const Shape3& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }

  std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return (i * shape_.w + j) * shape_.d + k;
  }
  float& at(std::int64_t i, std::int64_t j, std::int64_t k) { return data_[index(i, j, k)]; }
  float at(std::int64_t i, std::int64_t j, std::int64_t k) const { return data_[index(i, j, k)]; }
  bool contains(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < shape_.h && j < shape_.w && k < shape_.d;
  }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  bool all_finite() const;
  std::int64_t count_nonzero() const;
  bool operator==(const Volume&) const = default;

 private:
  Shape3 shape_;
  Spacing spacing_;
  std::vector<float> data_;
};

/// Tight box around the nonzero voxels, or nullopt for an empty mask.
std::optional<BoundingBox> bounding_box(const Volume& mask);

/// Copies the box out of `src` into a new volume of the box's extent.
Volume crop(const Volume& src, const BoundingBox& box);

/// Corner-aligned trilinear resample of the box region of `src` to `out`.
/// Sample i along an axis of extent n maps to box coordinate i * (n_src - 1) / (n_out - 1).
Volume resample_trilinear(const Volume& src, const BoundingBox& box, Shape3 out);

/// Binarizes at `threshold` (value > threshold -> 1).
Volume binarize(const Volume& v, float threshold);

}  // namespace catseg
