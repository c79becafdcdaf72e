#pragma once

// Dense tensor container (DTEN), scene ingestion, patch extraction,
// stratified splits and a synthetic co-registered HSI/LiDAR scene.
//
// DTEN layout, all little-endian:
//   "DTEN" | u16 version=1 | u8 dtype (1=f32, 2=i32) | u8 ndim | ndim × u32 dims | payload (row-major)

#include "hdcaps/geometry.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace hdcaps {

enum class DType : std::uint8_t { f32 = 1, i32 = 2 };

class DenseTensor {
 public:
  DenseTensor() = default;
  static DenseTensor f32(std::vector<std::uint32_t> dims, std::vector<float> data = {});
  static DenseTensor i32(std::vector<std::uint32_t> dims, std::vector<std::int32_t> data = {});

  DType dtype() const { return dtype_; }
  const std::vector<std::uint32_t>& dims() const { return dims_; }
  std::size_t size() const;

  std::span<const float> f32_data() const;
  std::span<float> f32_data();
  std::span<const std::int32_t> i32_data() const;
  std::span<std::int32_t> i32_data();

  bool operator==(const DenseTensor& other) const;

 private:
  DType dtype_ = DType::f32;
  std::vector<std::uint32_t> dims_;
  std::vector<float> f32_;
  std::vector<std::int32_t> i32_;
};

std::vector<std::uint8_t> encode_tensor(const DenseTensor& t);
// Throws FormatError naming the offending byte offset.
DenseTensor decode_tensor(std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const DenseTensor& t);
DenseTensor load_tensor(const std::filesystem::path& path);

// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// Co-registered rasters: hsi h×w×C (f32), lidar h×w (f32), labels h×w (i32, 0 = unlabeled).
struct Scene {
  DenseTensor hsi;
  DenseTensor lidar;
  DenseTensor labels;

  int height() const { return static_cast<int>(labels.dims().at(0)); }
  int width() const { return static_cast<int>(labels.dims().at(1)); }
  int bands() const { return static_cast<int>(hsi.dims().at(2)); }
  void validate() const;
};

// hsi.dten, lidar.dten, labels.dten inside `dir`.
Scene load_scene(const std::filesystem::path& dir);
void save_scene(const std::filesystem::path& dir, const Scene& scene);

struct PatchPair {
  Eigen::MatrixXd hsi;  // b² × C_spec, row-major pixel order
  PointSet lidar;       // b² × 3: (x, y, z) with x,y in [−1,1]
  int row = 0;
  int col = 0;
  int label = 0;
};

// Mirror reflection without edge repetition: −1 → 1, n → n−2.
int reflect_index(int i, int n);

// One patch per labeled pixel in row-major order.
std::vector<PatchPair> extract_patches(const Scene& scene, int patch_size);

// Flattened raw patch: b²·C_spec standardized spectra followed by b² elevations.
Eigen::VectorXd raw_patch_features(const PatchPair& patch);

struct SplitSpec {
  // class id → flat pixel indices (row·w + col)
  std::map<int, std::vector<std::size_t>> train;
  std::map<int, std::vector<std::size_t>> test;
  double fraction = 0.0;
  std::uint64_t seed = 0;

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> test_indices() const;
};

// Per class: seeded shuffle, floor(fraction·n) (at least 1) to train, rest to test.
SplitSpec stratified_split(std::span<const std::int32_t> labels, double fraction, std::uint64_t seed);

struct SyntheticOptions {
  // Per-pixel Gaussian noise as a fraction of the class signature's range.
  double noise_fraction = 0.1;
};

struct SyntheticScene {
  Scene scene;
  Eigen::MatrixXd signatures;  // n_classes × C_spec, noiseless
};

SyntheticScene gen_synthetic(int height, int width, int n_classes, int bands, std::uint64_t seed,
                             const SyntheticOptions& options = {});

}  // namespace hdcaps
