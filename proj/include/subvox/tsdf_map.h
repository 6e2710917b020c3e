#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "subvox/geometry.h"

namespace subvox {

/// One sample of the truncated signed distance function. weight == 0 means
/// unobserved; distance and color are then meaningless.
struct TsdfVoxel {
  float distance = 0.0f;
  float weight = 0.0f;
  Color color;
};

struct Index3 {
  int x = 0;
  int y = 0;
  int z = 0;

  bool operator==(const Index3&) const = default;
  bool operator<(const Index3& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
};

std::uint64_t packIndex(const Index3& idx);

struct Index3Hash {
  std::size_t operator()(const Index3& idx) const {
    // splitmix64 finalizer over the packed index
    std::uint64_t h = packIndex(idx);
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebULL;
    h ^= h >> 31;
    return static_cast<std::size_t>(h);
  }
};

/// Dense cube of side^3 voxels, allocated as a unit.
class VoxelBlock {
 public:
  explicit VoxelBlock(int side) : side_(side), voxels_(side * side * side) {}

  int side() const { return side_; }
  TsdfVoxel& at(int lx, int ly, int lz) {
    return voxels_[(lz * side_ + ly) * side_ + lx];
  }
  const TsdfVoxel& at(int lx, int ly, int lz) const {
    return voxels_[(lz * side_ + ly) * side_ + lx];
  }
  std::vector<TsdfVoxel>& voxels() { return voxels_; }
  const std::vector<TsdfVoxel>& voxels() const { return voxels_; }

 private:
  int side_;
  std::vector<TsdfVoxel> voxels_;
};

struct InterpolatedTsdf {
  float distance = 0.0f;
  float weight = 0.0f;
  Color color;
};

/// A TSDF grid with its own coordinate frame, stored sparsely as block-hashed
/// voxels. Queries never allocate; writers use allocateBlock/voxelRef.
class Submap {
 public:
  Submap(int id, double voxel_size, int block_side = 16,
         const RigidTransform& frame = RigidTransform())
      : id_(id), frame_(frame), voxel_size_(voxel_size),
        block_side_(block_side) {}

  int id() const { return id_; }
  const RigidTransform& frame() const { return frame_; }
  void setFrame(const RigidTransform& f) { frame_ = f; }
  double voxelSize() const { return voxel_size_; }
  int blockSide() const { return block_side_; }

  const std::vector<int>& contributingKeyframes() const {
    return contributing_keyframes_;
  }
  void addContributingKeyframe(int keyframe_id) {
    contributing_keyframes_.push_back(keyframe_id);
  }
  void appendContributingKeyframes(const std::vector<int>& ids) {
    contributing_keyframes_.insert(contributing_keyframes_.end(), ids.begin(),
                                   ids.end());
  }
  /// First contributing keyframe, or -1 when none has been attached yet.
  int anchorKeyframe() const {
    return contributing_keyframes_.empty() ? -1 : contributing_keyframes_[0];
  }

  // Index arithmetic. Voxel centers sit at (index + 0.5) * voxel_size; a point
  // exactly on a boundary belongs to the higher-index cell (floor convention).
  Index3 voxelIndexOf(const Eigen::Vector3d& p) const;
  Index3 blockIndexOfVoxel(const Index3& voxel) const;
  Eigen::Vector3d voxelCenter(const Index3& voxel) const;

  const VoxelBlock* block(const Index3& block_index) const;
  VoxelBlock* block(const Index3& block_index);
  VoxelBlock& allocateBlock(const Index3& block_index, bool* created = nullptr);

  /// Voxel containing the point, or nullptr when its block is unallocated.
  const TsdfVoxel* voxelAt(const Eigen::Vector3d& p) const;
  const TsdfVoxel* voxelAtIndex(const Index3& voxel) const;
  /// Mutable access, allocating the owning block on demand.
  TsdfVoxel& voxelRef(const Index3& voxel, bool* created_block = nullptr);

  /// Trilinear interpolation over the 8 voxel centers surrounding p. Collapses
  /// to the single nearest voxel when p coincides with a center; otherwise all
  /// 8 neighbors must be allocated and observed.
  std::optional<InterpolatedTsdf> interpolate(const Eigen::Vector3d& p) const;

  std::size_t blockCount() const { return blocks_.size(); }
  std::vector<Index3> sortedBlockIndices() const;
  const std::unordered_map<Index3, VoxelBlock, Index3Hash>& blocks() const {
    return blocks_;
  }

 private:
  int id_;
  RigidTransform frame_;  // T_G_M: submap frame in the global frame
  double voxel_size_;
  int block_side_;
  std::unordered_map<Index3, VoxelBlock, Index3Hash> blocks_;
  std::vector<int> contributing_keyframes_;
};

/// Binary submap file, little-endian. Header: magic "CBLX", version u32,
/// voxel_size f64, block side u32, frame as 7 f64 (qw qx qy qz tx ty tz),
/// block count u64. Then per block: 3 i32 index, side^3 voxels as
/// f32 distance, f32 weight, 3 u8 color. Blocks sorted by index.
void saveSubmap(const Submap& map, const std::string& path);
Submap loadSubmap(const std::string& path, int id = 0);

}  // namespace subvox
