#include "antlab/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "antlab/common.hpp"
#include "antlab/csv.hpp"

namespace antlab {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 440;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  // -0.00 and 0.00 must print the same
  return std::string(buf) == "-0.00" ? "0.00" : buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

Frame frame_for(const std::vector<const std::vector<double>*>& xs, const std::vector<const std::vector<double>*>& ys,
                bool equal_aspect = false) {
  auto range = [](const std::vector<const std::vector<double>*>& vs, double& lo, double& hi) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (const auto* v : vs) {
      for (double d : *v) {
        if (!std::isfinite(d)) continue;
        lo = std::min(lo, d);
        hi = std::max(hi, d);
      }
    }
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad, hi += pad;
  };
  Frame f{};
  range(xs, f.x0, f.x1);
  range(ys, f.y0, f.y1);
  if (equal_aspect) {
    const double sx = (f.x1 - f.x0) / (kWidth - kLeft - kRight);
    const double sy = (f.y1 - f.y0) / (kHeight - kTop - kBottom);
    const double s = std::max(sx, sy);
    const double cx = 0.5 * (f.x0 + f.x1), cy = 0.5 * (f.y0 + f.y1);
    f.x0 = cx - 0.5 * s * (kWidth - kLeft - kRight);
    f.x1 = cx + 0.5 * s * (kWidth - kLeft - kRight);
    f.y0 = cy - 0.5 * s * (kHeight - kTop - kBottom);
    f.y1 = cy + 0.5 * s * (kHeight - kTop - kBottom);
  }
  return f;
}

std::string open_svg(const ChartLabels& labels, const Frame& f) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
                  num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + ' ' + num(kHeight) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
       escape(labels.title) + "</text>\n";
  const double l = kLeft, r = kWidth - kRight, t = kTop, b = kHeight - kBottom;
  s += "<rect x=\"" + num(l) + "\" y=\"" + num(t) + "\" width=\"" + num(r - l) + "\" height=\"" + num(b - t) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";
  // five ticks per axis
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(b + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + num(xv) + "</text>\n";
    s += "<text x=\"" + num(l - 6) + "\" y=\"" + num(f.py(yv) + 3) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + num(yv) + "</text>\n";
  }
  s += "<text x=\"" + num((l + r) / 2) + "\" y=\"" + num(kHeight - 12) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + escape(labels.x) + "</text>\n";
  s += "<text x=\"16\" y=\"" + num((t + b) / 2) + "\" transform=\"rotate(-90 16 " + num((t + b) / 2) +
       ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + escape(labels.y) + "</text>\n";
  return s;
}

std::string points_attr(const Frame& f, const std::vector<double>& x, const std::vector<double>& y) {
  std::string s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i) s += ' ';
    s += num(f.px(x[i])) + ',' + num(f.py(y[i]));
  }
  return s;
}

CsvTable load(const fs::path& path) {
  if (!fs::exists(path)) throw RuntimeFailure("plot: missing CSV " + path.string());
  try {
    return read_csv(path);
  } catch (const std::exception& e) {
    throw RuntimeFailure("plot: malformed CSV " + path.string() + ": " + e.what());
  }
}

std::vector<double> column(const CsvTable& t, const std::string& name, const fs::path& path) {
  std::vector<double> v;
  try {
    v.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) v.push_back(t.number(r, name));
  } catch (const std::exception& e) {
    throw RuntimeFailure("plot: malformed CSV " + path.string() + ": " + e.what());
  }
  return v;
}

}  // namespace

std::string line_chart_svg(const ChartLabels& labels, const std::vector<Series>& series) {
  std::vector<const std::vector<double>*> xs, ys;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "line chart: x and y lengths differ in series '" + s.name + "'");
    xs.push_back(&s.x);
    ys.push_back(&s.y);
  }
  const Frame f = frame_for(xs, ys);
  std::string s = open_svg(labels, f);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& se = series[i];
    const std::string color = kPalette[i % std::size(kPalette)];
    s += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" +
         points_attr(f, se.x, se.y) + "\"/>\n";
    if (se.markers) {
      for (std::size_t j = 0; j < se.x.size(); ++j) {
        s += "<circle cx=\"" + num(f.px(se.x[j])) + "\" cy=\"" + num(f.py(se.y[j])) + "\" r=\"2.5\" fill=\"" + color +
             "\"/>\n";
      }
    }
    const double ly = kTop + 14 + 18.0 * static_cast<double>(i);
    s += "<line x1=\"" + num(kWidth - kRight + 10) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(kWidth - kRight + 30) +
         "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(kWidth - kRight + 34) + "\" y=\"" + num(ly + 4) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(se.name) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string paths_svg(const ChartLabels& labels, const std::vector<double>& bg_x, const std::vector<double>& bg_y,
                      const std::vector<Polyline>& paths) {
  require(bg_x.size() == bg_y.size(), "paths plot: background x and y lengths differ");
  std::vector<const std::vector<double>*> xs{&bg_x}, ys{&bg_y};
  for (const auto& p : paths) {
    require(p.x.size() == p.y.size(), "paths plot: polyline x and y lengths differ");
    xs.push_back(&p.x);
    ys.push_back(&p.y);
  }
  const Frame f = frame_for(xs, ys, true);
  std::string s = open_svg(labels, f);
  s += "<g fill=\"#bbbbbb\">\n";
  for (std::size_t i = 0; i < bg_x.size(); ++i) {
    s += "<circle cx=\"" + num(f.px(bg_x[i])) + "\" cy=\"" + num(f.py(bg_y[i])) + "\" r=\"1\"/>\n";
  }
  s += "</g>\n";
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto& p = paths[i];
    const std::string color = kPalette[i % std::size(kPalette)];
    s += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1\" points=\"" + points_attr(f, p.x, p.y) +
         "\"/>\n";
    if (!p.x.empty()) {
      s += "<circle cx=\"" + num(f.px(p.x.back())) + "\" cy=\"" + num(f.py(p.y.back())) + "\" r=\"3\" fill=\"" +
           color + "\"/>\n";
    }
  }
  return s + "</svg>\n";
}

void plot_loss(const fs::path& loss_csv, const fs::path& out) {
  const CsvTable t = load(loss_csv);
  write_file_atomic(out, line_chart_svg({"pretraining loss", "step", "smoothed loss"},
                                        {{"loss", column(t, "step", loss_csv), column(t, "loss", loss_csv), false}}));
}

void plot_sweep(const fs::path& sweep_csv, const fs::path& out) {
  const CsvTable t = load(sweep_csv);
  const auto x = column(t, "t_prime", sweep_csv);
  write_file_atomic(out, line_chart_svg({"reversal step sweep", "t'", "fraction"},
                                        {{"target", x, column(t, "frac_classified_as_target", sweep_csv)},
                                         {"off-manifold", x, column(t, "off_manifold_frac", sweep_csv)}}));
}

void plot_saliency_curve(const fs::path& curve_csv, const fs::path& out) {
  const CsvTable t = load(curve_csv);
  write_file_atomic(out, line_chart_svg({"saliency intersection", "maps intersected", "active parameters"},
                                        {{"active", column(t, "n_maps", curve_csv),
                                          column(t, "active_params", curve_csv), false}}));
}

void plot_trajectories(const fs::path& traj_csv, const fs::path& data_csv, const fs::path& out) {
  const CsvTable t = load(traj_csv);
  const auto chain = column(t, "chain", traj_csv);
  const auto step = column(t, "step", traj_csv);
  const auto x = column(t, "x", traj_csv);
  const auto y = column(t, "y", traj_csv);
  std::map<long, std::vector<std::pair<long, std::size_t>>> by_chain;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    by_chain[std::lround(chain[i])].push_back({std::lround(step[i]), i});
  }
  std::vector<Polyline> paths;
  for (auto& [id, rows] : by_chain) {
    std::sort(rows.begin(), rows.end());
    Polyline p;
    for (const auto& [s, i] : rows) {
      p.x.push_back(x[i]);
      p.y.push_back(y[i]);
    }
    paths.push_back(std::move(p));
  }
  std::vector<double> bx, by;
  if (!data_csv.empty() && fs::exists(data_csv)) {
    const CsvTable d = load(data_csv);
    bx = column(d, "x", data_csv);
    by = column(d, "y", data_csv);
    // a thinned backdrop is enough to show the modes
    const std::size_t stride = std::max<std::size_t>(1, bx.size() / 4000);
    std::vector<double> tx, ty;
    for (std::size_t i = 0; i < bx.size(); i += stride) tx.push_back(bx[i]), ty.push_back(by[i]);
    bx.swap(tx);
    by.swap(ty);
  }
  write_file_atomic(out, paths_svg({"sampling trajectories", "x", "y"}, bx, by, paths));
}

std::vector<fs::path> plot_run_dir(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw RuntimeFailure("plot: run directory " + run_dir.string() + " does not exist");
  std::vector<fs::path> written;
  auto maybe = [&](const char* csv, const char* svg, auto&& fn) {
    if (!fs::exists(run_dir / csv)) return;
    fn(run_dir / csv, run_dir / svg);
    written.push_back(run_dir / svg);
  };
  maybe("pretrain_loss.csv", "pretrain_loss.svg", plot_loss);
  maybe("sweep_tprime.csv", "sweep_tprime.svg", plot_sweep);
  maybe("saliency_curve.csv", "saliency_curve.svg", plot_saliency_curve);
  maybe("trajectories.csv", "trajectories.svg",
        [&](const fs::path& in, const fs::path& out) { plot_trajectories(in, run_dir / "data.csv", out); });
  if (written.empty()) throw RuntimeFailure("plot: no plottable CSV in " + run_dir.string());
  return written;
}

}  // namespace antlab
