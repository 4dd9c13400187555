#include "voxseg/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace voxseg {

namespace {

constexpr double kWidth = 640, kHeight = 480;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;

struct Frame {
  double x0, x1, y0, y1;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

std::string num(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void pad_range(double& lo, double& hi) {
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

void open_svg(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << title << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  const double left = kLeft, right = kWidth - kRight, top = kTop, bottom = kHeight - kBottom;
  os << "<g stroke=\"black\" fill=\"none\"><line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right
     << "\" y2=\"" << bottom << "\"/><line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
     << bottom << "\"/></g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4, yv = f.y0 + (f.y1 - f.y0) * i / 4;
    os << "<text x=\"" << num(f.px(xv), 1) << "\" y=\"" << bottom + 16 << "\" text-anchor=\"middle\">" << num(xv, 3)
       << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << num(f.py(yv) + 4, 1) << "\" text-anchor=\"end\">" << num(yv, 3)
       << "</text>\n";
  }
  os << "<text x=\"" << (left + right) / 2 << "\" y=\"" << kHeight - 16 << "\" text-anchor=\"middle\">" << xlabel
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << (top + bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (top + bottom) / 2 << ")\">" << ylabel << "</text>\n";
  os << "</g>\n";
}

}  // namespace

std::string loss_curve_svg(const std::vector<EpochRecord>& history) {
  double x0 = history.front().epoch, x1 = history.back().epoch;
  double y0 = INFINITY, y1 = -INFINITY;
  std::size_t best = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& r = history[i];
    y0 = std::min({y0, r.train_loss, r.val_loss});
    y1 = std::max({y1, r.train_loss, r.val_loss});
    if (r.val_loss < history[best].val_loss) best = i;
  }
  pad_range(x0, x1);
  pad_range(y0, y1);
  const Frame f{x0, x1, y0, y1};
  std::ostringstream os;
  open_svg(os, "Loss per epoch");
  axes(os, f, "epoch", "loss");
  auto line = [&](const char* id, const char* colour, auto value) {
    os << "<polyline id=\"" << id << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < history.size(); ++i) {
      if (i) os << ' ';
      os << num(f.px(history[i].epoch), 2) << ',' << num(f.py(value(history[i])), 2);
    }
    os << "\"/>\n";
  };
  line("train", "#1f77b4", [](const EpochRecord& r) { return r.train_loss; });
  line("validation", "#d62728", [](const EpochRecord& r) { return r.val_loss; });
  const auto& b = history[best];
  os << "<circle id=\"best\" cx=\"" << num(f.px(b.epoch), 2) << "\" cy=\"" << num(f.py(b.val_loss), 2)
     << "\" r=\"6\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"12\">"
     << "<text x=\"" << kWidth - 200 << "\" y=\"" << kTop + 14 << "\" fill=\"#1f77b4\">train</text>"
     << "<text x=\"" << kWidth - 200 << "\" y=\"" << kTop + 30 << "\" fill=\"#d62728\">validation</text>"
     << "<text x=\"" << kWidth - 200 << "\" y=\"" << kTop + 46 << "\">best epoch " << b.epoch << "</text></g>\n";
  os << "</svg>\n";
  return os.str();
}

std::string volume_scatter_svg(const std::vector<VolumePair>& pairs, const Agreement& fit) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& p : pairs) {
    lo = std::min({lo, p.gt_volume, p.pred_volume});
    hi = std::max({hi, p.gt_volume, p.pred_volume});
  }
  lo = std::min(lo, 0.0);
  pad_range(lo, hi);
  const Frame f{lo, hi, lo, hi};
  std::ostringstream os;
  open_svg(os, "Lesion volume agreement");
  axes(os, f, "ground-truth volume (mm^3)", "predicted volume (mm^3)");
  os << "<line id=\"identity\" x1=\"" << num(f.px(lo)) << "\" y1=\"" << num(f.py(lo)) << "\" x2=\"" << num(f.px(hi))
     << "\" y2=\"" << num(f.py(hi)) << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  os << "<line id=\"fit\" x1=\"" << num(f.px(lo)) << "\" y1=\"" << num(f.py(fit.intercept + fit.slope * lo))
     << "\" x2=\"" << num(f.px(hi)) << "\" y2=\"" << num(f.py(fit.intercept + fit.slope * hi))
     << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
  os << "<g fill=\"#1f77b4\">\n";
  for (const auto& p : pairs) {
    os << "<circle cx=\"" << num(f.px(p.gt_volume)) << "\" cy=\"" << num(f.py(p.pred_volume)) << "\" r=\"4\"/>\n";
  }
  os << "</g>\n";
  os << "<text id=\"annotation\" x=\"" << kLeft + 12 << "\" y=\"" << kTop + 16
     << "\" font-family=\"sans-serif\" font-size=\"13\">r = " << num(fit.pearson_r) << ", slope = " << num(fit.slope)
     << ", n = " << fit.n << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace voxseg
