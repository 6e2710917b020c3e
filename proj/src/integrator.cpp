#include "subvox/integrator.h"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace subvox {

namespace {

constexpr std::uint64_t kEmptyBucket = ~0ULL;

using Clock = std::chrono::steady_clock;

double secondsSince(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Visits every voxel a segment passes through (Amanatides & Woo traversal).
class RayCaster {
 public:
  RayCaster(const Eigen::Vector3d& start, const Eigen::Vector3d& end,
            double voxel_size) {
    const Eigen::Vector3d delta = end - start;
    for (int i = 0; i < 3; ++i) {
      cur_[i] = static_cast<int>(std::floor(start[i] / voxel_size));
      end_[i] = static_cast<int>(std::floor(end[i] / voxel_size));
      step_[i] = delta[i] > 0 ? 1 : (delta[i] < 0 ? -1 : 0);
      if (step_[i] == 0) {
        t_max_[i] = std::numeric_limits<double>::infinity();
        t_delta_[i] = std::numeric_limits<double>::infinity();
      } else {
        const double boundary =
            (cur_[i] + (step_[i] > 0 ? 1 : 0)) * voxel_size;
        t_max_[i] = (boundary - start[i]) / delta[i];
        t_delta_[i] = voxel_size / std::abs(delta[i]);
      }
    }
    steps_left_ = std::abs(end_[0] - cur_[0]) + std::abs(end_[1] - cur_[1]) +
                  std::abs(end_[2] - cur_[2]) + 1;
  }

  bool next(Index3* out) {
    if (steps_left_ <= 0) return false;
    *out = {cur_[0], cur_[1], cur_[2]};
    --steps_left_;
    if (steps_left_ > 0) {
      int axis = 0;
      if (t_max_[1] < t_max_[axis]) axis = 1;
      if (t_max_[2] < t_max_[axis]) axis = 2;
      cur_[axis] += step_[axis];
      t_max_[axis] += t_delta_[axis];
    }
    return true;
  }

 private:
  int cur_[3];
  int end_[3];
  int step_[3];
  double t_max_[3];
  double t_delta_[3];
  int steps_left_;
};

void validateCloud(const std::vector<ColoredPoint>& cloud) {
  for (const ColoredPoint& p : cloud) {
    if (!p.position.allFinite()) {
      throw std::invalid_argument("pointcloud contains non-finite points");
    }
  }
}

/// Standard weighted-average TSDF update with w_new = 1. Color is blended only
/// within the truncation band.
void updateVoxel(TsdfVoxel& v, double raw_distance, const Color& color,
                 const IntegratorConfig& cfg) {
  const double tau = cfg.truncation;
  const double d_new = std::clamp(raw_distance, -tau, tau);
  const double w_old = v.weight;
  const double w_sum = w_old + 1.0;
  const double d = (w_old * v.distance + d_new) / w_sum;
  v.distance = static_cast<float>(std::clamp(d, -tau, tau));
  v.weight = static_cast<float>(
      std::min(w_sum, static_cast<double>(cfg.max_weight)));
  if (std::abs(raw_distance) <= tau) {
    const auto blend = [&](std::uint8_t old_c, std::uint8_t new_c) {
      const double c = (w_old * old_c + new_c) / w_sum;
      return static_cast<std::uint8_t>(std::clamp(std::lround(c), 0L, 255L));
    };
    v.color = {blend(v.color.r, color.r), blend(v.color.g, color.g),
               blend(v.color.b, color.b)};
  }
}

/// Find-or-create block access with a per-worker pointer cache. The shared map
/// is guarded by map_mutex; cached pointers stay valid because unordered_map
/// never moves its nodes.
class BlockAccessor {
 public:
  BlockAccessor(Submap& map, std::mutex& map_mutex, IntegrationStats& stats)
      : map_(map), map_mutex_(map_mutex), stats_(stats) {}

  VoxelBlock* get(const Index3& block_index) {
    auto it = cache_.find(block_index);
    if (it != cache_.end()) return it->second;
    std::lock_guard<std::mutex> lock(map_mutex_);
    bool created = false;
    VoxelBlock& blk = map_.allocateBlock(block_index, &created);
    if (created) ++stats_.blocks_allocated;
    cache_.emplace(block_index, &blk);
    return &blk;
  }

 private:
  Submap& map_;
  std::mutex& map_mutex_;
  IntegrationStats& stats_;
  std::unordered_map<Index3, VoxelBlock*, Index3Hash> cache_;
};

}  // namespace

IntegrationStats& IntegrationStats::operator+=(const IntegrationStats& o) {
  rays_cast += o.rays_cast;
  points_discarded_rule1 += o.points_discarded_rule1;
  rays_terminated_rule2 += o.rays_terminated_rule2;
  voxels_updated += o.voxels_updated;
  blocks_allocated += o.blocks_allocated;
  elapsed_seconds = std::max(elapsed_seconds, o.elapsed_seconds);
  budget_exceeded = budget_exceeded || o.budget_exceeded;
  return *this;
}

TerminationSet::TerminationSet(int bucket_count_log2)
    : buckets_(std::size_t{1} << bucket_count_log2),
      mask_((std::size_t{1} << bucket_count_log2) - 1) {
  clear();
}

std::uint64_t TerminationSet::bucketOf(const Index3& index,
                                       std::uint64_t mask) {
  std::uint64_t h = packIndex(index);
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h & mask;
}

bool TerminationSet::insert(const Index3& index) {
  const std::uint64_t key = packIndex(index);
  const std::uint64_t bucket = bucketOf(index, mask_);
  const std::uint64_t previous =
      buckets_[bucket].exchange(key, std::memory_order_relaxed);
  return previous == key;
}

void TerminationSet::clear() {
  for (auto& b : buckets_) b.store(kEmptyBucket, std::memory_order_relaxed);
}

Integrator::Integrator(const IntegratorConfig& cfg)
    : cfg_(cfg), start_set_(20), observed_set_(20) {}

IntegrationStats Integrator::integrate(Submap& map,
                                       const std::vector<ColoredPoint>& cloud,
                                       const RigidTransform& t_submap_camera) {
  return cfg_.mode == IntegratorMode::kSimple
             ? integrateSimple(map, cloud, t_submap_camera)
             : integrateFast(map, cloud, t_submap_camera);
}

IntegrationStats Integrator::integrateSimple(
    Submap& map, const std::vector<ColoredPoint>& cloud,
    const RigidTransform& t_submap_camera) {
  validateCloud(cloud);
  const auto t0 = Clock::now();
  IntegrationStats stats;
  const double voxel_size = map.voxelSize();
  const Eigen::Vector3d origin = t_submap_camera.translation;

  for (const ColoredPoint& pt : cloud) {
    const Eigen::Vector3d p = t_submap_camera.apply(pt.position);
    const Eigen::Vector3d to_point = p - origin;
    const double range = to_point.norm();
    if (range < 1e-9 || range > cfg_.max_ray_length) continue;
    const Eigen::Vector3d dir = to_point / range;
    const Eigen::Vector3d end = p + cfg_.truncation * dir;

    RayCaster caster(origin, end, voxel_size);
    Index3 idx;
    while (caster.next(&idx)) {
      const double d_raw = (p - map.voxelCenter(idx)).dot(dir);
      bool created = false;
      TsdfVoxel& voxel = map.voxelRef(idx, &created);
      if (created) ++stats.blocks_allocated;
      updateVoxel(voxel, d_raw, pt.color, cfg_);
      ++stats.voxels_updated;
    }
    ++stats.rays_cast;
  }
  stats.elapsed_seconds = secondsSince(t0);
  return stats;
}

IntegrationStats Integrator::integrateFast(
    Submap& map, const std::vector<ColoredPoint>& cloud,
    const RigidTransform& t_submap_camera) {
  validateCloud(cloud);
  const auto t0 = Clock::now();
  const double voxel_size = map.voxelSize();
  const double half_voxel = 0.5 * voxel_size;
  const Eigen::Vector3d origin = t_submap_camera.translation;

  std::mutex map_mutex;
  std::array<std::mutex, 128> block_locks;
  std::atomic<bool> aborted{false};

  const int threads =
      std::max(1, std::min<int>(cfg_.thread_count,
                                static_cast<int>(cloud.size()) + 1));
  std::vector<IntegrationStats> worker_stats(threads);

  const auto worker = [&](int worker_idx, std::size_t begin, std::size_t end) {
    IntegrationStats& stats = worker_stats[worker_idx];
    BlockAccessor blocks(map, map_mutex, stats);
    std::size_t processed = 0;

    for (std::size_t i = begin; i < end; ++i, ++processed) {
      if ((processed & 63) == 0) {
        if (aborted.load(std::memory_order_relaxed)) break;
        if (secondsSince(t0) >= cfg_.time_budget) {
          stats.budget_exceeded = true;
          aborted.store(true, std::memory_order_relaxed);
          break;
        }
      }

      const ColoredPoint& pt = cloud[i];
      const Eigen::Vector3d p = t_submap_camera.apply(pt.position);
      const Eigen::Vector3d to_point = p - origin;
      const double range = to_point.norm();
      if (range < 1e-9 || range > cfg_.max_ray_length) continue;

      // Rule 1: cap the density of ray starting points on a grid with twice
      // the resolution of the voxel map.
      const Index3 start_cell{static_cast<int>(std::floor(p.x() / half_voxel)),
                              static_cast<int>(std::floor(p.y() / half_voxel)),
                              static_cast<int>(std::floor(p.z() / half_voxel))};
      if (start_set_.insert(start_cell)) {
        ++stats.points_discarded_rule1;
        continue;
      }

      const Eigen::Vector3d dir = to_point / range;
      // March from just past the surface back toward the camera, so rule 2
      // prunes shared free space while the band around the surface is kept.
      RayCaster caster(p + cfg_.truncation * dir, origin, voxel_size);
      Index3 idx;
      int consecutive_hits = 0;
      int locked_stripe = -1;
      while (caster.next(&idx)) {
        if (observed_set_.insert(idx)) {
          if (++consecutive_hits >= 2) {
            ++stats.rays_terminated_rule2;
            break;
          }
        } else {
          consecutive_hits = 0;
        }

        const Index3 block_idx = map.blockIndexOfVoxel(idx);
        VoxelBlock* blk = blocks.get(block_idx);
        const int lsx = idx.x - block_idx.x * map.blockSide();
        const int lsy = idx.y - block_idx.y * map.blockSide();
        const int lsz = idx.z - block_idx.z * map.blockSide();
        const int stripe =
            static_cast<int>(Index3Hash{}(block_idx) & (block_locks.size() - 1));
        if (stripe != locked_stripe) {
          if (locked_stripe >= 0) block_locks[locked_stripe].unlock();
          block_locks[stripe].lock();
          locked_stripe = stripe;
        }
        const double d_raw = (p - map.voxelCenter(idx)).dot(dir);
        updateVoxel(blk->at(lsx, lsy, lsz), d_raw, pt.color, cfg_);
        ++stats.voxels_updated;
      }
      if (locked_stripe >= 0) block_locks[locked_stripe].unlock();
      ++stats.rays_cast;
    }
  };

  if (threads == 1) {
    worker(0, 0, cloud.size());
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (cloud.size() + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(cloud.size(), t * chunk);
      const std::size_t end = std::min(cloud.size(), begin + chunk);
      pool.emplace_back(worker, t, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  start_set_.clear();
  observed_set_.clear();

  IntegrationStats total;
  for (const IntegrationStats& s : worker_stats) total += s;
  total.elapsed_seconds = secondsSince(t0);
  return total;
}

}  // namespace subvox
