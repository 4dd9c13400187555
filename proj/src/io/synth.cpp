#include "voxseg/synth.hpp"

#include <algorithm>
#include <cmath>

#include "voxseg/errors.hpp"
#include "voxseg/random.hpp"

namespace voxseg {

void SynthSpec::validate() const {
  if (n_lesions < 0) throw ConfigError("synth: n_lesions must be >= 0");
  if (radius_min < 1.0 || radius_max < radius_min) {
    throw ConfigError("synth: lesion radius range must satisfy 1 <= min <= max");
  }
  for (Index d : dims) {
    if (d <= 0) throw ConfigError("synth: dims must be positive");
    if (n_lesions > 0 && static_cast<double>(d) < 2.0 * radius_max + 1.0) {
      throw ConfigError("synth: dims too small to contain a lesion of radius " + std::to_string(radius_max));
    }
  }
  if (!(lesion_intensity > 0.0)) throw ConfigError("synth: lesion_intensity must be positive");
  if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
}

bool Ellipsoid::contains(Index z, Index y, Index x) const {
  const double dz = (static_cast<double>(z) - center[0]) / radii[0];
  const double dy = (static_cast<double>(y) - center[1]) / radii[1];
  const double dx = (static_cast<double>(x) - center[2]) / radii[2];
  return dz * dz + dy * dy + dx * dx <= 1.0;
}

namespace {

// One box-blur pass of the given radius along `axis`, clamping at borders.
void box_blur_axis(std::vector<double>& v, const Dims& dims, int axis, int radius) {
  const Index n = dims[static_cast<std::size_t>(axis)];
  const Index stride = axis == 0 ? dims[1] * dims[2] : (axis == 1 ? dims[2] : 1);
  const Index lines = voxel_count(dims) / n;
  std::vector<double> line(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
  for (Index l = 0; l < lines; ++l) {
    // decompose line index into the base offset of the line
    Index base;
    if (axis == 0) {
      base = l;
    } else if (axis == 1) {
      base = (l / dims[2]) * dims[1] * dims[2] + l % dims[2];
    } else {
      base = l * dims[2];
    }
    for (Index i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(base + i * stride)];
    for (Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (Index k = -radius; k <= radius; ++k) {
        const Index j = std::clamp<Index>(i + k, 0, n - 1);
        acc += line[static_cast<std::size_t>(j)];
      }
      out[static_cast<std::size_t>(i)] = acc / static_cast<double>(2 * radius + 1);
    }
    for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(base + i * stride)] = out[static_cast<std::size_t>(i)];
  }
}

}  // namespace

SynthSubject generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Dims& dims = spec.dims;
  const auto n = static_cast<std::size_t>(voxel_count(dims));

  std::vector<double> field(n);
  for (auto& f : field) f = rng.uniform();
  for (int pass = 0; pass < 3; ++pass)
    for (int axis = 0; axis < 3; ++axis) box_blur_axis(field, dims, axis, 2);
  const auto [lo_it, hi_it] = std::minmax_element(field.begin(), field.end());
  const double lo = *lo_it, span = std::max(*hi_it - *lo_it, 1e-12);
  for (auto& f : field) f = 0.3 + 0.2 * ((f - lo) / span);

  SynthSubject s;
  s.lesions.reserve(static_cast<std::size_t>(spec.n_lesions));
  for (int i = 0; i < spec.n_lesions; ++i) {
    Ellipsoid e{};
    for (std::size_t a = 0; a < 3; ++a) {
      const double margin = spec.radius_max;
      e.center[a] = rng.uniform(margin, static_cast<double>(dims[a]) - 1.0 - margin);
      e.radii[a] = rng.uniform(spec.radius_min, spec.radius_max);
    }
    s.lesions.push_back(e);
  }

  s.image = Volume(dims);
  s.mask = LabelVolume(dims);
  for (Index z = 0; z < dims[0]; ++z)
    for (Index y = 0; y < dims[1]; ++y)
      for (Index x = 0; x < dims[2]; ++x) {
        const auto at = static_cast<std::size_t>(flat_index(dims, z, y, x));
        bool inside = false;
        for (const auto& e : s.lesions) {
          if (e.contains(z, y, x)) {
            inside = true;
            break;
          }
        }
        double v = field[at];
        if (inside) {
          v *= spec.lesion_intensity;
          s.mask.data[at] = 1;
        }
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        s.image.data[at] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return s;
}

}  // namespace voxseg
