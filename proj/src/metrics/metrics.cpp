#include "voxseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "voxseg/errors.hpp"

namespace voxseg {

namespace {

struct Offset {
  Index dz, dy, dx;
};

std::vector<Offset> neighbours18() {
  std::vector<Offset> out;
  for (Index dz = -1; dz <= 1; ++dz)
    for (Index dy = -1; dy <= 1; ++dy)
      for (Index dx = -1; dx <= 1; ++dx) {
        const int nonzero = (dz != 0) + (dy != 0) + (dx != 0);
        if (nonzero >= 1 && nonzero <= 2) out.push_back({dz, dy, dx});
      }
  return out;
}

void require_same_dims(const LabelVolume& a, const LabelVolume& b) {
  if (a.dims != b.dims) {
    throw ShapeError("mask dims differ: [" + std::to_string(a.dims[0]) + "," + std::to_string(a.dims[1]) + "," +
                     std::to_string(a.dims[2]) + "] vs [" + std::to_string(b.dims[0]) + "," +
                     std::to_string(b.dims[1]) + "," + std::to_string(b.dims[2]) + "]");
  }
}

// Flags for each component of `labels` telling whether it shares a voxel
// with `other`.
std::vector<bool> touched(const ComponentLabeling& cc, const LabelVolume& other) {
  std::vector<bool> hit(static_cast<std::size_t>(cc.n_components), false);
  for (std::size_t i = 0; i < cc.labels.size(); ++i) {
    if (cc.labels[i] > 0 && other.data[i]) hit[static_cast<std::size_t>(cc.labels[i] - 1)] = true;
  }
  return hit;
}

double voxel_mm3(const LabelVolume& v) { return v.voxel_mm[0] * v.voxel_mm[1] * v.voxel_mm[2]; }

}  // namespace

ComponentLabeling connected_components_18(const LabelVolume& mask) {
  require_binary(mask);
  static const std::vector<Offset> nbrs = neighbours18();
  const Dims& d = mask.dims;
  ComponentLabeling cc;
  cc.dims = d;
  cc.labels.assign(mask.data.size(), 0);
  std::vector<Index> queue;
  for (Index start = 0; start < static_cast<Index>(mask.data.size()); ++start) {
    if (!mask.data[static_cast<std::size_t>(start)] || cc.labels[static_cast<std::size_t>(start)]) continue;
    const std::int32_t label = ++cc.n_components;
    Index size = 0;
    queue.assign(1, start);
    cc.labels[static_cast<std::size_t>(start)] = label;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const Index v = queue[head];
      ++size;
      const Index z = v / (d[1] * d[2]), y = (v / d[2]) % d[1], x = v % d[2];
      for (const auto& o : nbrs) {
        const Index nz = z + o.dz, ny = y + o.dy, nx = x + o.dx;
        if (nz < 0 || ny < 0 || nx < 0 || nz >= d[0] || ny >= d[1] || nx >= d[2]) continue;
        const auto n = static_cast<std::size_t>(flat_index(d, nz, ny, nx));
        if (mask.data[n] && !cc.labels[n]) {
          cc.labels[n] = label;
          queue.push_back(static_cast<Index>(n));
        }
      }
    }
    cc.sizes.push_back(size);
  }
  return cc;
}

double dsc(const LabelVolume& pred, const LabelVolume& gt) {
  require_same_dims(pred, gt);
  Index a = 0, r = 0, both = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    a += pred.data[i] != 0;
    r += gt.data[i] != 0;
    both += pred.data[i] && gt.data[i];
  }
  if (a + r == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + r);
}

double ltpr(const LabelVolume& pred, const LabelVolume& gt) {
  require_same_dims(pred, gt);
  const auto cc = connected_components_18(gt);
  if (cc.n_components == 0) return 1.0;
  const auto hit = touched(cc, pred);
  return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / cc.n_components;
}

double lfpr(const LabelVolume& pred, const LabelVolume& gt) {
  require_same_dims(pred, gt);
  const auto cc = connected_components_18(pred);
  if (cc.n_components == 0) return 0.0;
  const auto hit = touched(cc, gt);
  return static_cast<double>(std::count(hit.begin(), hit.end(), false)) / cc.n_components;
}

double avd(const LabelVolume& pred, const LabelVolume& gt, AvdDenominator denom) {
  require_same_dims(pred, gt);
  const Index a = pred.count(), r = gt.count();
  const Index base = denom == AvdDenominator::prediction ? a : r;
  if (base == 0) {
    throw UndefinedMetric(std::string("avd undefined: the ") +
                          (denom == AvdDenominator::prediction ? "predicted" : "reference") + " mask is empty");
  }
  return static_cast<double>(std::max(a, r) - std::min(a, r)) / static_cast<double>(base);
}

std::vector<VolumePair> lesion_volume_pairs(const LabelVolume& pred, const LabelVolume& gt) {
  require_same_dims(pred, gt);
  const auto gcc = connected_components_18(gt);
  const auto pcc = connected_components_18(pred);
  const double mm3 = voxel_mm3(gt);
  // Predicted components overlapping each GT component.
  std::vector<std::vector<std::int32_t>> linked(static_cast<std::size_t>(gcc.n_components));
  for (std::size_t i = 0; i < gcc.labels.size(); ++i) {
    const auto g = gcc.labels[i], p = pcc.labels[i];
    if (g > 0 && p > 0) {
      auto& l = linked[static_cast<std::size_t>(g - 1)];
      if (std::find(l.begin(), l.end(), p) == l.end()) l.push_back(p);
    }
  }
  std::vector<VolumePair> out;
  for (std::size_t g = 0; g < linked.size(); ++g) {
    if (linked[g].empty()) continue;
    Index pv = 0;
    for (auto p : linked[g]) pv += pcc.sizes[static_cast<std::size_t>(p - 1)];
    out.push_back({static_cast<double>(gcc.sizes[g]) * mm3, static_cast<double>(pv) * mm3});
  }
  return out;
}

Agreement volume_agreement(const std::vector<VolumePair>& pairs) {
  if (pairs.size() < 2) throw UndefinedMetric("volume agreement needs at least 2 lesion pairs");
  const double n = static_cast<double>(pairs.size());
  double mx = 0, my = 0;
  for (const auto& p : pairs) {
    mx += p.gt_volume;
    my += p.pred_volume;
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& p : pairs) {
    const double dx = p.gt_volume - mx, dy = p.pred_volume - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0 || syy == 0) throw UndefinedMetric("volume agreement undefined: zero variance in a volume series");
  Agreement a;
  a.n = static_cast<Index>(pairs.size());
  a.pearson_r = sxy / std::sqrt(sxx * syy);
  a.slope = sxy / sxx;
  a.intercept = my - a.slope * mx;
  return a;
}

EvalReport evaluate(const LabelVolume& pred, const LabelVolume& gt, const std::string& subject,
                    AvdDenominator denom) {
  EvalReport r;
  r.subject = subject;
  r.dsc = dsc(pred, gt);
  r.ltpr = ltpr(pred, gt);
  r.lfpr = lfpr(pred, gt);
  try {
    r.avd = avd(pred, gt, denom);
  } catch (const UndefinedMetric&) {
    r.avd = std::nan("");
  }
  r.n_gt_lesions = connected_components_18(gt).n_components;
  r.n_pred_lesions = connected_components_18(pred).n_components;
  r.pairs = lesion_volume_pairs(pred, gt);
  return r;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.precision(17);
  return os;
}

void put(std::ostream& os, double v) {
  if (std::isnan(v)) {
    os << "nan";
  } else {
    os << v;
  }
}

}  // namespace

void write_eval_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "subject,dsc,ltpr,lfpr,avd,n_gt,n_pred\n";
  double sums[6] = {0, 0, 0, 0, 0, 0};
  int counts[6] = {0, 0, 0, 0, 0, 0};
  for (const auto& r : reports) {
    const double vals[6] = {r.dsc, r.ltpr, r.lfpr, r.avd, static_cast<double>(r.n_gt_lesions),
                            static_cast<double>(r.n_pred_lesions)};
    os << r.subject;
    for (int k = 0; k < 6; ++k) {
      os << ',';
      put(os, vals[k]);
      if (!std::isnan(vals[k])) {
        sums[k] += vals[k];
        ++counts[k];
      }
    }
    os << '\n';
  }
  os << "mean";
  for (int k = 0; k < 6; ++k) {
    os << ',';
    put(os, counts[k] ? sums[k] / counts[k] : std::nan(""));
  }
  os << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

void write_pairs_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "subject,gt_volume,pred_volume\n";
  for (const auto& r : reports)
    for (const auto& p : r.pairs) os << r.subject << ',' << p.gt_volume << ',' << p.pred_volume << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<VolumePair> read_pairs_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DegenerateInput(path.string() + ": empty CSV");
  if (line != "subject,gt_volume,pred_volume") throw IoError(path.string() + ": unexpected header '" + line + "'");
  std::vector<VolumePair> out;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    VolumePair p;
    try {
      if (c1 == std::string::npos || c2 == std::string::npos) throw std::invalid_argument("columns");
      std::size_t used = 0;
      const std::string a = line.substr(c1 + 1, c2 - c1 - 1), b = line.substr(c2 + 1);
      p.gt_volume = std::stod(a, &used);
      if (used != a.size()) throw std::invalid_argument("gt");
      p.pred_volume = std::stod(b, &used);
      if (used != b.size()) throw std::invalid_argument("pred");
    } catch (const std::exception&) {
      throw IoError(path.string() + ": malformed row " + std::to_string(row) + ": '" + line + "'");
    }
    out.push_back(p);
  }
  if (out.empty()) throw DegenerateInput(path.string() + ": CSV has no data rows");
  return out;
}

}  // namespace voxseg
