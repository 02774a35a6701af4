#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace antlab {

using Vec2 = Eigen::Vector2d;
using Points = Eigen::Matrix2Xd;  // one point per column
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Caller supplied something outside the documented domain. The CLI maps this
// to exit code 1.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation failed at run time (divergence, non-finite values, missing
// artifacts). The CLI maps this to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

// ---------------------------------------------------------------------------
// Random numbers
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The uniform and normal transforms are hand-rolled because the
// standard distributions are implementation-defined.
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);

// Stable sub-seed for a named stream: derive_seed(seed, "pretrain", step).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer on the closed range [lo, hi].
  int uniform_int(int lo, int hi);
  double normal();
  Vec2 normal2();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Logging. Messages go to stderr; `quiet` silences info-level output.
// ---------------------------------------------------------------------------

void set_log_quiet(bool quiet);
void log_info(const std::string& msg);
void log_warn(const std::string& msg);

// 64-bit FNV-1a over raw bytes, used for checkpoint and artifact checksums.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t checksum(const std::vector<double>& values);
std::string hex64(std::uint64_t v);

// %.17g; round-trips every finite double through strtod.
std::string format_double(double v);

// Number of worker threads: ANT_LAB_THREADS if set, else hardware concurrency.
int worker_threads();

}  // namespace antlab
