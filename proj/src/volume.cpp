#include "catseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "catseg/errors.hpp"

namespace catseg {

std::string Shape3::str() const {
  std::ostringstream os;
  os << h << "x" << w << "x" << d;
  return os.str();
}

Volume::Volume(Shape3 shape, Spacing spacing, float fill)
    : shape_(shape), spacing_(spacing) {
  if (shape.h <= 0 || shape.w <= 0 || shape.d <= 0) {
    throw ShapeError("volume extents must be positive, got " + shape.str());
  }
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) {
    throw InputError("voxel spacing must be positive");
  }
  data_.assign(static_cast<std::size_t>(shape.voxels()), fill);
}

Volume::Volume(Shape3 shape, Spacing spacing, std::vector<float> data)
    : Volume(shape, spacing) {
  if (static_cast<std::int64_t>(data.size()) != shape.voxels()) {
    throw ShapeError("volume data has " + std::to_string(data.size()) + " values, shape " +
                     shape.str() + " needs " + std::to_string(shape.voxels()));
  }
  data_ = std::move(data);
}

bool Volume::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::int64_t Volume::count_nonzero() const {
  return std::count_if(data_.begin(), data_.end(), [](float v) { return v != 0.0F; });
}

std::optional<BoundingBox> bounding_box(const Volume& mask) {
  const Shape3& s = mask.shape();
  BoundingBox box{{s.h, s.w, s.d}, {0, 0, 0}};
  bool any = false;
  for (std::int64_t i = 0; i < s.h; ++i) {
    for (std::int64_t j = 0; j < s.w; ++j) {
      for (std::int64_t k = 0; k < s.d; ++k) {
        if (mask.at(i, j, k) == 0.0F) continue;
        any = true;
        const std::array<std::int64_t, 3> p{i, j, k};
        for (int a = 0; a < 3; ++a) {
          box.lo[a] = std::min(box.lo[a], p[a]);
          box.hi[a] = std::max(box.hi[a], p[a] + 1);
        }
      }
    }
  }
  if (!any) return std::nullopt;
  return box;
}

namespace {

void check_box(const Volume& src, const BoundingBox& box) {
  for (int a = 0; a < 3; ++a) {
    if (box.lo[a] < 0 || box.hi[a] > src.shape()[a] || box.hi[a] <= box.lo[a]) {
      throw ShapeError("box outside volume of shape " + src.shape().str());
    }
  }
}

}  // namespace

Volume crop(const Volume& src, const BoundingBox& box) {
  check_box(src, box);
  Volume out(box.extent(), src.spacing());
  const Shape3 e = box.extent();
  for (std::int64_t i = 0; i < e.h; ++i) {
    for (std::int64_t j = 0; j < e.w; ++j) {
      for (std::int64_t k = 0; k < e.d; ++k) {
        out.at(i, j, k) = src.at(box.lo[0] + i, box.lo[1] + j, box.lo[2] + k);
      }
    }
  }
  return out;
}

Volume resample_trilinear(const Volume& src, const BoundingBox& box, Shape3 out_shape) {
  check_box(src, box);
  const Shape3 e = box.extent();
  Volume out(out_shape, src.spacing());

  // Per-axis source coordinate (lower index + weight) for every output index.
  struct Tap {
    std::int64_t i0;
    std::int64_t i1;
    double t;
  };
  auto taps = [&](int axis) {
    const std::int64_t n_in = e[axis];
    const std::int64_t n_out = out_shape[axis];
    std::vector<Tap> result(static_cast<std::size_t>(n_out));
    for (std::int64_t o = 0; o < n_out; ++o) {
      const double pos =
          n_out == 1 ? 0.5 * static_cast<double>(n_in - 1)
                     : static_cast<double>(o) * static_cast<double>(n_in - 1) /
                           static_cast<double>(n_out - 1);
      auto i0 = static_cast<std::int64_t>(std::floor(pos));
      i0 = std::clamp<std::int64_t>(i0, 0, n_in - 1);
      const std::int64_t i1 = std::min(i0 + 1, n_in - 1);
      result[static_cast<std::size_t>(o)] = {box.lo[axis] + i0, box.lo[axis] + i1,
                                             pos - static_cast<double>(i0)};
    }
    return result;
  };
  const auto th = taps(0);
  const auto tw = taps(1);
  const auto td = taps(2);

  for (std::int64_t i = 0; i < out_shape.h; ++i) {
    const Tap& a = th[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < out_shape.w; ++j) {
      const Tap& b = tw[static_cast<std::size_t>(j)];
      for (std::int64_t k = 0; k < out_shape.d; ++k) {
        const Tap& c = td[static_cast<std::size_t>(k)];
        // Exact grid hits short-circuit so an identity resample copies bit-for-bit.
        if (a.t == 0.0 && b.t == 0.0 && c.t == 0.0) {
          out.at(i, j, k) = src.at(a.i0, b.i0, c.i0);
          continue;
        }
        const double c00 = src.at(a.i0, b.i0, c.i0) * (1 - c.t) + src.at(a.i0, b.i0, c.i1) * c.t;
        const double c01 = src.at(a.i0, b.i1, c.i0) * (1 - c.t) + src.at(a.i0, b.i1, c.i1) * c.t;
        const double c10 = src.at(a.i1, b.i0, c.i0) * (1 - c.t) + src.at(a.i1, b.i0, c.i1) * c.t;
        const double c11 = src.at(a.i1, b.i1, c.i0) * (1 - c.t) + src.at(a.i1, b.i1, c.i1) * c.t;
        const double c0 = c00 * (1 - b.t) + c01 * b.t;
        const double c1 = c10 * (1 - b.t) + c11 * b.t;
        out.at(i, j, k) = static_cast<float>(c0 * (1 - a.t) + c1 * a.t);
      }
    }
  }
  return out;
}

Volume binarize(const Volume& v, float threshold) {
  Volume out(v.shape(), v.spacing());
  auto src = v.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > threshold ? 1.0F : 0.0F;
  return out;
}

}  // namespace catseg
