#pragma once

#include <atomic>
#include <cstdint>
#include <limits>
#include <mutex>
#include <vector>

#include "subvox/geometry.h"
#include "subvox/tsdf_map.h"

namespace subvox {

enum class IntegratorMode { kSimple, kFast };

struct IntegratorConfig {
  double max_ray_length = 10.0;  // meters
  double truncation = 0.08;      // meters, must exceed the voxel size
  float max_weight = 1.0e4f;
  int thread_count = 1;          // fast mode only
  double time_budget = std::numeric_limits<double>::infinity();  // seconds
  IntegratorMode mode = IntegratorMode::kSimple;
};

struct IntegrationStats {
  std::uint64_t rays_cast = 0;
  std::uint64_t points_discarded_rule1 = 0;
  std::uint64_t rays_terminated_rule2 = 0;
  std::uint64_t voxels_updated = 0;
  std::uint64_t blocks_allocated = 0;
  double elapsed_seconds = 0.0;
  bool budget_exceeded = false;

  IntegrationStats& operator+=(const IntegrationStats& o);
};

/// Fixed-size hash set with one element per bucket. Colliding inserts simply
/// overwrite the previous occupant, which allows lock-free concurrent use at
/// the cost of occasional false negatives.
class TerminationSet {
 public:
  explicit TerminationSet(int bucket_count_log2 = 20);

  /// Publishes the index into its bucket and reports whether the same index
  /// was already stored there. A different colliding index is evicted and
  /// reported as not-present.
  bool insert(const Index3& index);

  void clear();
  std::size_t bucketCount() const { return buckets_.size(); }

  static std::uint64_t bucketOf(const Index3& index, std::uint64_t mask);

 private:
  std::vector<std::atomic<std::uint64_t>> buckets_;
  std::uint64_t mask_;
};

/// Fuses camera-frame pointclouds into a submap. The simple mode is the
/// single-threaded reference; the fast mode adds the two early-termination
/// rules, a per-frame time budget, and multi-threading. The termination sets
/// persist across calls and are cleared at the end of each integration.
class Integrator {
 public:
  explicit Integrator(const IntegratorConfig& cfg);

  const IntegratorConfig& config() const { return cfg_; }
  IntegratorConfig& config() { return cfg_; }

  /// Dispatches on cfg.mode. Cloud points are in the camera frame;
  /// t_submap_camera maps them into the submap frame.
  IntegrationStats integrate(Submap& map, const std::vector<ColoredPoint>& cloud,
                             const RigidTransform& t_submap_camera);

  IntegrationStats integrateSimple(Submap& map,
                                   const std::vector<ColoredPoint>& cloud,
                                   const RigidTransform& t_submap_camera);
  IntegrationStats integrateFast(Submap& map,
                                 const std::vector<ColoredPoint>& cloud,
                                 const RigidTransform& t_submap_camera);

 private:
  IntegratorConfig cfg_;
  TerminationSet start_set_;
  TerminationSet observed_set_;
};

}  // namespace subvox
