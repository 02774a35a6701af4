#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "antlab/adam.hpp"
#include "antlab/ant_finetune.hpp"

namespace antlab {

struct SaliencyMask {
  std::vector<std::uint8_t> bits;  // aligned with ModelParams::flat()
  int n_maps = 0;
  std::string gamma_rule;
  std::vector<int> prompts;  // context ids
  std::vector<std::uint64_t> seeds;

  std::size_t size() const { return bits.size(); }
  std::size_t active() const;
  double active_fraction() const { return bits.empty() ? 0.0 : static_cast<double>(active()) / bits.size(); }
};

struct SaliencyConfig {
  int n_prompts = 20;
  int n_seeds = 5;
  double gamma_quantile = 0.9;
  std::uint64_t seed = 0;
  // Latent pairs averaged into each map's gradient; one pair gives maps so
  // noisy that the intersection empties long before 100 maps.
  int latents_per_map = 256;
  AntLossConfig loss;

  void validate() const;
};

// The q-quantile of |g|: the smallest value such that ceil((1-q) P) entries
// are at or above it.
double quantile_threshold(std::span<const double> grad, double q);

// 1(|g| >= gamma)
std::vector<std::uint8_t> threshold_mask(std::span<const double> grad, double gamma);

// One map: gradient of the ANT loss for (target, context) under `seed`,
// thresholded at its q-quantile. Throws RuntimeFailure on an all-zero gradient.
SaliencyMask single_map(const ModelParams& params, const ModelParams& frozen, const NoiseSchedule& schedule,
                        int target, int context, std::uint64_t seed, const AntLossConfig& loss_cfg, double q);

SaliencyMask intersect(std::span<const SaliencyMask> masks);

struct CurvePoint {
  int n_maps = 0;
  std::size_t active = 0;
};

struct ConceptMask {
  SaliencyMask mask;
  std::vector<CurvePoint> curve;  // running intersection; map k uses prompt k mod N_c, seed k / N_c
  bool fallback = false;
};

// Intersects n_prompts x n_seeds maps. An empty intersection falls back to the
// union of the per-map masks, with a warning.
ConceptMask build_concept_mask(const ModelParams& params, const ModelParams& frozen, const NoiseSchedule& schedule,
                               int target, const SaliencyConfig& cfg);

// One optimizer step restricted to the mask held by `opt`.
void masked_update(std::span<double> params, std::span<const double> grad, MaskedAdam& opt, double lr);

// Run-length encoded text: meta header, then alternating run lengths starting
// with a run of zeros.
void save_mask(const SaliencyMask& mask, const std::filesystem::path& path);
SaliencyMask load_mask(const std::filesystem::path& path);

void write_saliency_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);

}  // namespace antlab
