#include "subvox/tsdf_map.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace subvox {

namespace {

constexpr char kMagic[4] = {'C', 'B', 'L', 'X'};
constexpr std::uint32_t kVersion = 1;

int floorDiv(int a, int b) {
  int q = a / b;
  if (a % b != 0 && ((a % b < 0) != (b < 0))) --q;
  return q;
}

template <typename T>
void writeRaw(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T readRaw(std::istream& is) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

}  // namespace

std::uint64_t packIndex(const Index3& idx) {
  constexpr std::uint64_t mask = (1ULL << 21) - 1;
  const auto enc = [](int v) {
    return static_cast<std::uint64_t>(static_cast<std::int64_t>(v) +
                                      (1LL << 20)) &
           mask;
  };
  return (enc(idx.x) << 42) | (enc(idx.y) << 21) | enc(idx.z);
}

Index3 Submap::voxelIndexOf(const Eigen::Vector3d& p) const {
  return {static_cast<int>(std::floor(p.x() / voxel_size_)),
          static_cast<int>(std::floor(p.y() / voxel_size_)),
          static_cast<int>(std::floor(p.z() / voxel_size_))};
}

Index3 Submap::blockIndexOfVoxel(const Index3& voxel) const {
  return {floorDiv(voxel.x, block_side_), floorDiv(voxel.y, block_side_),
          floorDiv(voxel.z, block_side_)};
}

Eigen::Vector3d Submap::voxelCenter(const Index3& voxel) const {
  return {(voxel.x + 0.5) * voxel_size_, (voxel.y + 0.5) * voxel_size_,
          (voxel.z + 0.5) * voxel_size_};
}

const VoxelBlock* Submap::block(const Index3& block_index) const {
  auto it = blocks_.find(block_index);
  return it == blocks_.end() ? nullptr : &it->second;
}

VoxelBlock* Submap::block(const Index3& block_index) {
  auto it = blocks_.find(block_index);
  return it == blocks_.end() ? nullptr : &it->second;
}

VoxelBlock& Submap::allocateBlock(const Index3& block_index, bool* created) {
  auto [it, inserted] = blocks_.try_emplace(block_index, block_side_);
  if (created != nullptr) *created = inserted;
  return it->second;
}

const TsdfVoxel* Submap::voxelAt(const Eigen::Vector3d& p) const {
  return voxelAtIndex(voxelIndexOf(p));
}

const TsdfVoxel* Submap::voxelAtIndex(const Index3& voxel) const {
  const Index3 bi = blockIndexOfVoxel(voxel);
  const VoxelBlock* blk = block(bi);
  if (blk == nullptr) return nullptr;
  return &blk->at(voxel.x - bi.x * block_side_, voxel.y - bi.y * block_side_,
                  voxel.z - bi.z * block_side_);
}

TsdfVoxel& Submap::voxelRef(const Index3& voxel, bool* created_block) {
  const Index3 bi = blockIndexOfVoxel(voxel);
  VoxelBlock& blk = allocateBlock(bi, created_block);
  return blk.at(voxel.x - bi.x * block_side_, voxel.y - bi.y * block_side_,
                voxel.z - bi.z * block_side_);
}

std::optional<InterpolatedTsdf> Submap::interpolate(
    const Eigen::Vector3d& p) const {
  // Grid coordinates in which integer points are voxel centers.
  const Eigen::Vector3d g = p / voxel_size_ - Eigen::Vector3d::Constant(0.5);
  const Eigen::Vector3d rounded = g.array().round();
  if ((g - rounded).cwiseAbs().maxCoeff() < 1e-9) {
    const Index3 idx{static_cast<int>(rounded.x()),
                     static_cast<int>(rounded.y()),
                     static_cast<int>(rounded.z())};
    const TsdfVoxel* v = voxelAtIndex(idx);
    if (v == nullptr || v->weight <= 0.0f) return std::nullopt;
    return InterpolatedTsdf{v->distance, v->weight, v->color};
  }

  const Index3 base{static_cast<int>(std::floor(g.x())),
                    static_cast<int>(std::floor(g.y())),
                    static_cast<int>(std::floor(g.z()))};
  const Eigen::Vector3d frac = g - Eigen::Vector3d(base.x, base.y, base.z);

  double distance = 0.0;
  double weight = 0.0;
  double rgb[3] = {0.0, 0.0, 0.0};
  for (int dz = 0; dz <= 1; ++dz) {
    for (int dy = 0; dy <= 1; ++dy) {
      for (int dx = 0; dx <= 1; ++dx) {
        const TsdfVoxel* v =
            voxelAtIndex({base.x + dx, base.y + dy, base.z + dz});
        if (v == nullptr || v->weight <= 0.0f) return std::nullopt;
        const double w = (dx ? frac.x() : 1.0 - frac.x()) *
                         (dy ? frac.y() : 1.0 - frac.y()) *
                         (dz ? frac.z() : 1.0 - frac.z());
        distance += w * v->distance;
        weight += w * v->weight;
        rgb[0] += w * v->color.r;
        rgb[1] += w * v->color.g;
        rgb[2] += w * v->color.b;
      }
    }
  }
  const auto channel = [](double c) {
    return static_cast<std::uint8_t>(
        std::clamp(std::lround(c), 0L, 255L));
  };
  return InterpolatedTsdf{static_cast<float>(distance),
                          static_cast<float>(weight),
                          {channel(rgb[0]), channel(rgb[1]), channel(rgb[2])}};
}

std::vector<Index3> Submap::sortedBlockIndices() const {
  std::vector<Index3> indices;
  indices.reserve(blocks_.size());
  for (const auto& [idx, blk] : blocks_) indices.push_back(idx);
  std::sort(indices.begin(), indices.end());
  return indices;
}

void saveSubmap(const Submap& map, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);

  os.write(kMagic, 4);
  writeRaw(os, kVersion);
  writeRaw(os, map.voxelSize());
  writeRaw(os, static_cast<std::uint32_t>(map.blockSide()));
  const RigidTransform& f = map.frame();
  const double frame7[7] = {f.rotation.w(), f.rotation.x(), f.rotation.y(),
                            f.rotation.z(), f.translation.x(),
                            f.translation.y(), f.translation.z()};
  os.write(reinterpret_cast<const char*>(frame7), sizeof(frame7));
  writeRaw(os, static_cast<std::uint64_t>(map.blockCount()));

  for (const Index3& idx : map.sortedBlockIndices()) {
    writeRaw(os, static_cast<std::int32_t>(idx.x));
    writeRaw(os, static_cast<std::int32_t>(idx.y));
    writeRaw(os, static_cast<std::int32_t>(idx.z));
    for (const TsdfVoxel& v : map.block(idx)->voxels()) {
      writeRaw(os, v.distance);
      writeRaw(os, v.weight);
      writeRaw(os, v.color.r);
      writeRaw(os, v.color.g);
      writeRaw(os, v.color.b);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

Submap loadSubmap(const std::string& path, int id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("bad submap magic in " + path);
  }
  const auto version = readRaw<std::uint32_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("unsupported submap version in " + path);
  }
  const auto voxel_size = readRaw<double>(is);
  const auto block_side = readRaw<std::uint32_t>(is);
  double frame7[7];
  is.read(reinterpret_cast<char*>(frame7), sizeof(frame7));
  const auto block_count = readRaw<std::uint64_t>(is);
  if (!is) throw std::runtime_error("truncated submap header in " + path);

  RigidTransform frame(
      Eigen::Quaterniond(frame7[0], frame7[1], frame7[2], frame7[3]),
      Eigen::Vector3d(frame7[4], frame7[5], frame7[6]));
  Submap map(id, voxel_size, static_cast<int>(block_side), frame);

  for (std::uint64_t i = 0; i < block_count; ++i) {
    Index3 idx;
    idx.x = readRaw<std::int32_t>(is);
    idx.y = readRaw<std::int32_t>(is);
    idx.z = readRaw<std::int32_t>(is);
    VoxelBlock& blk = map.allocateBlock(idx);
    for (TsdfVoxel& v : blk.voxels()) {
      v.distance = readRaw<float>(is);
      v.weight = readRaw<float>(is);
      v.color.r = readRaw<std::uint8_t>(is);
      v.color.g = readRaw<std::uint8_t>(is);
      v.color.b = readRaw<std::uint8_t>(is);
    }
    if (!is) throw std::runtime_error("truncated submap data in " + path);
  }
  return map;
}

}  // namespace subvox
