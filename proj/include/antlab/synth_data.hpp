#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "antlab/common.hpp"

namespace antlab {

// Labeled 2-D Gaussian mixture. Concepts are angular positions, contexts are
// radii; every (concept, context) pair owns one isotropic mode.
struct MixtureSpec {
  int n_concepts = 0;
  int n_contexts = 0;
  double mode_std = 0.0;
  std::vector<Vec2> centers;     // index concept * n_contexts + context
  std::vector<double> weights;   // same indexing, sums to 1

  int mode_index(int concept_id, int context) const { return concept_id * n_contexts + context; }
  const Vec2& center(int concept_id, int context) const { return centers[mode_index(concept_id, context)]; }
  double weight(int concept_id, int context) const { return weights[mode_index(concept_id, context)]; }
  int n_modes() const { return n_concepts * n_contexts; }

  // Throws InvalidInput when an invariant is broken.
  void validate() const;
};

struct LabeledPoint {
  Vec2 x;
  int concept_id = 0;
  int context_id = 0;
};

struct Dataset {
  std::vector<LabeledPoint> points;
  MixtureSpec spec;
  std::uint64_t seed = 0;
};

// Center of (k, c) is r_c (cos 2πk/K, sin 2πk/K) with r_c = radius_base (1 + c/2).
MixtureSpec make_mixture(int n_concepts, int n_contexts, double radius_base, double std);

Dataset sample_dataset(const MixtureSpec& spec, int n, std::uint64_t seed);

// Log of sum over contexts of w N(x; mu, std^2 I), one entry per concept.
std::vector<double> concept_log_densities(const MixtureSpec& spec, const Vec2& x);

// Bayes-optimal concept label; ties go to the lowest id.
int bayes_classify(const MixtureSpec& spec, const Vec2& x);

// Exact mixture log-density, evaluated with log-sum-exp.
double log_density(const MixtureSpec& spec, const Vec2& x);

// CSV `x,y,concept,context`.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const MixtureSpec& spec, const std::filesystem::path& path);

}  // namespace antlab
