#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace antlab {

// Plots are fixed 640x440 canvases with a fixed palette and two-decimal
// coordinates, so the same inputs always give the same bytes.

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = true;
};

struct Polyline {
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartLabels {
  std::string title;
  std::string x;
  std::string y;
};

std::string line_chart_svg(const ChartLabels& labels, const std::vector<Series>& series);

// Background points as dots plus one polyline per path; endpoints get a marker.
std::string paths_svg(const ChartLabels& labels, const std::vector<double>& bg_x, const std::vector<double>& bg_y,
                      const std::vector<Polyline>& paths);

// CSV-driven plots. Each throws RuntimeFailure naming the file when it is
// missing or lacks the expected columns.
void plot_loss(const std::filesystem::path& loss_csv, const std::filesystem::path& out);
void plot_sweep(const std::filesystem::path& sweep_csv, const std::filesystem::path& out);
void plot_saliency_curve(const std::filesystem::path& curve_csv, const std::filesystem::path& out);
// Trajectory CSV `chain,step,t,x,y`; dataset CSV `x,y,concept,context` is optional.
void plot_trajectories(const std::filesystem::path& traj_csv, const std::filesystem::path& data_csv,
                       const std::filesystem::path& out);

// Renders every known CSV present in run_dir; returns the SVGs written.
std::vector<std::filesystem::path> plot_run_dir(const std::filesystem::path& run_dir);

}  // namespace antlab
