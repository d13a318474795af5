#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "uqvol/model.hpp"
#include "uqvol/volume.hpp"

namespace uqvol {

// ---------------------------------------------------------------------------
// BVOL: minimal binary voxel container.
//   magic "BVOL" | version u16 | dtype u8 (0 = float32, 1 = uint8) |
//   ndim u8 | dims ndim x u32 | payload, row-major, little-endian.
// ---------------------------------------------------------------------------
constexpr std::uint16_t kBvolVersion = 1;
constexpr std::uint8_t kBvolF32 = 0;
constexpr std::uint8_t kBvolU8 = 1;

struct BvolHeader {
  std::uint16_t version = kBvolVersion;
  std::uint8_t dtype = kBvolF32;
  std::vector<std::uint32_t> dims;
};

std::uint64_t bvol_payload_bytes(const BvolHeader& h);
BvolHeader read_bvol_header(std::istream& in);
void write_bvol_header(std::ostream& out, const BvolHeader& h);

/// Volumes are stored as float32 with 4 dims; labels as uint8 with 3 dims.
void write_bvol(const Volume& v, const std::string& path);
void write_bvol(const LabelVolume& v, const std::string& path);
Volume read_bvol_volume(const std::string& path);
LabelVolume read_bvol_label(const std::string& path);
/// Reads either dtype as a Volume (uint8 payloads are widened; 3-dim files
/// gain a singleton channel axis).
Volume read_bvol_any(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoint: "BVCK" magic, a JSON architecture header, then one
// shape-tagged little-endian float32 tensor per parameter path.
// ---------------------------------------------------------------------------
void save_checkpoint(const ModelState& m, const std::string& path);
ModelState load_checkpoint(const std::string& path);

/// 8-bit grayscale PGM slice export, min-max scaled. axis: 0 = depth,
/// 1 = height, 2 = width.
void write_pgm_slice(const Volume& v, int axis, i64 index, const std::string& path);

/// Whole-file atomic write (temp file + rename).
void atomic_write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace uqvol
