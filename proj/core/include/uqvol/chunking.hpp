#pragma once

#include <array>
#include <vector>

#include "uqvol/volume.hpp"

namespace uqvol {

/// Fixed chunk size plus overlap control. step 1 = no overlap, 2 = half
/// overlap, 3 = two-thirds overlap; the axis stride is chunk_size[i] / step.
struct ChunkSpec {
  std::array<i64, 3> chunk_size{0, 0, 0};
  int step = 1;
};

/// Ordered chunks, their origin coordinates in the source volume, and the
/// source shape. coords[i] is the (z, x, y) top-left corner of chunks[i].
struct ChunkSet {
  std::vector<Volume> chunks;
  std::vector<std::array<i64, 3>> coords;
  std::array<i64, 4> original_shape{0, 0, 0, 0};
};

/// Decompose a volume into overlapping fixed-size chunks. Iteration order,
/// boundary clamping, and the modulo early-break cases follow the reference
/// chunking procedure exactly. Throws VolumeTooSmall when any axis of v is
/// smaller than the chunk size.
ChunkSet chunk(const Volume& v, const ChunkSpec& spec);

/// Per-voxel count of chunks containing that voxel (single-channel volume).
Volume coverage_counts(const ChunkSet& cs);

}  // namespace uqvol
