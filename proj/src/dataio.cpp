#include "hdcaps/dataio.hpp"

#include "hdcaps/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace hdcaps {
namespace {

constexpr std::uint16_t kTensorVersion = 1;
constexpr std::size_t kHeaderFixed = 8;

std::size_t product(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
  out.insert(out.end(), std::begin(raw), std::end(raw));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, bytes.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

DenseTensor DenseTensor::f32(std::vector<std::uint32_t> dims, std::vector<float> data) {
  DenseTensor t;
  t.dtype_ = DType::f32;
  t.dims_ = std::move(dims);
  if (data.empty()) data.assign(product(t.dims_), 0.0f);
  if (data.size() != product(t.dims_)) throw std::invalid_argument("DenseTensor: payload length does not match dims");
  t.f32_ = std::move(data);
  return t;
}

DenseTensor DenseTensor::i32(std::vector<std::uint32_t> dims, std::vector<std::int32_t> data) {
  DenseTensor t;
  t.dtype_ = DType::i32;
  t.dims_ = std::move(dims);
  if (data.empty()) data.assign(product(t.dims_), 0);
  if (data.size() != product(t.dims_)) throw std::invalid_argument("DenseTensor: payload length does not match dims");
  t.i32_ = std::move(data);
  return t;
}

std::size_t DenseTensor::size() const { return product(dims_); }

std::span<const float> DenseTensor::f32_data() const {
  if (dtype_ != DType::f32) throw std::invalid_argument("DenseTensor: not an f32 tensor");
  return f32_;
}
std::span<float> DenseTensor::f32_data() {
  if (dtype_ != DType::f32) throw std::invalid_argument("DenseTensor: not an f32 tensor");
  return f32_;
}
std::span<const std::int32_t> DenseTensor::i32_data() const {
  if (dtype_ != DType::i32) throw std::invalid_argument("DenseTensor: not an i32 tensor");
  return i32_;
}
std::span<std::int32_t> DenseTensor::i32_data() {
  if (dtype_ != DType::i32) throw std::invalid_argument("DenseTensor: not an i32 tensor");
  return i32_;
}

bool DenseTensor::operator==(const DenseTensor& other) const {
  if (dtype_ != other.dtype_ || dims_ != other.dims_) return false;
  if (dtype_ == DType::i32) return i32_ == other.i32_;
  // Bitwise, so NaN payloads compare equal to themselves.
  return f32_.size() == other.f32_.size() &&
         std::memcmp(f32_.data(), other.f32_.data(), f32_.size() * sizeof(float)) == 0;
}

std::vector<std::uint8_t> encode_tensor(const DenseTensor& t) {
  if (t.dims().size() > 255) throw std::invalid_argument("encode_tensor: at most 255 dimensions");
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderFixed + 4 * t.dims().size() + 4 * t.size());
  out.insert(out.end(), {'D', 'T', 'E', 'N'});
  put_le<std::uint16_t>(out, kTensorVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims().size()));
  for (auto d : t.dims()) put_le<std::uint32_t>(out, d);
  if (t.dtype() == DType::f32) {
    for (float v : t.f32_data()) put_le<float>(out, v);
  } else {
    for (std::int32_t v : t.i32_data()) put_le<std::int32_t>(out, v);
  }
  return out;
}

DenseTensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("truncated DTEN header", bytes.size());
  if (std::memcmp(bytes.data(), "DTEN", 4) != 0) throw FormatError("bad DTEN magic", 0);
  if (bytes.size() < kHeaderFixed) throw FormatError("truncated DTEN header", bytes.size());
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kTensorVersion) throw FormatError("unsupported DTEN version " + std::to_string(version), 4);
  const auto dtype = get_le<std::uint8_t>(bytes, 6);
  if (dtype != 1 && dtype != 2) throw FormatError("unknown DTEN dtype " + std::to_string(dtype), 6);
  const auto ndim = get_le<std::uint8_t>(bytes, 7);
  std::size_t offset = kHeaderFixed;
  std::vector<std::uint32_t> dims;
  for (int i = 0; i < ndim; ++i) {
    if (offset + 4 > bytes.size()) throw FormatError("truncated DTEN dims", bytes.size());
    dims.push_back(get_le<std::uint32_t>(bytes, offset));
    offset += 4;
  }
  const std::size_t count = product(dims);
  if (bytes.size() - offset < count * 4) throw FormatError("truncated DTEN payload", bytes.size());
  if (bytes.size() - offset > count * 4) throw FormatError("trailing bytes after DTEN payload", offset + count * 4);
  if (dtype == 1) {
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) data[i] = get_le<float>(bytes, offset + 4 * i);
    return DenseTensor::f32(std::move(dims), std::move(data));
  }
  std::vector<std::int32_t> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = get_le<std::int32_t>(bytes, offset + 4 * i);
  return DenseTensor::i32(std::move(dims), std::move(data));
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_tensor(const std::filesystem::path& path, const DenseTensor& t) {
  write_file_atomic(path, encode_tensor(t));
}

DenseTensor load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_tensor(bytes);
}

void Scene::validate() const {
  if (labels.dtype() != DType::i32 || labels.dims().size() != 2) throw std::invalid_argument("labels must be h×w i32");
  if (lidar.dtype() != DType::f32 || lidar.dims() != labels.dims()) {
    throw std::invalid_argument("lidar must be an h×w f32 raster matching labels");
  }
  if (hsi.dtype() != DType::f32 || hsi.dims().size() != 3 || hsi.dims()[0] != labels.dims()[0] ||
      hsi.dims()[1] != labels.dims()[1] || hsi.dims()[2] < 1) {
    throw std::invalid_argument("hsi must be an h×w×C f32 cube matching labels");
  }
}

Scene load_scene(const std::filesystem::path& dir) {
  Scene s{load_tensor(dir / "hsi.dten"), load_tensor(dir / "lidar.dten"), load_tensor(dir / "labels.dten")};
  s.validate();
  return s;
}

void save_scene(const std::filesystem::path& dir, const Scene& scene) {
  scene.validate();
  std::filesystem::create_directories(dir);
  save_tensor(dir / "hsi.dten", scene.hsi);
  save_tensor(dir / "lidar.dten", scene.lidar);
  save_tensor(dir / "labels.dten", scene.labels);
}

int reflect_index(int i, int n) {
  if (n <= 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<PatchPair> extract_patches(const Scene& scene, int patch_size) {
  scene.validate();
  if (patch_size < 1 || patch_size % 2 == 0) throw std::invalid_argument("extract_patches: patch size must be odd");
  const int h = scene.height();
  const int w = scene.width();
  const int bands = scene.bands();
  const auto labels = scene.labels.i32_data();
  const auto cube = scene.hsi.f32_data();
  const auto elev = scene.lidar.f32_data();

  // Per-band z-score over labeled pixels.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(bands);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(bands);
  std::size_t labeled = 0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] == 0) continue;
    ++labeled;
    for (int c = 0; c < bands; ++c) mean(c) += cube[p * bands + c];
  }
  if (labeled == 0) return {};
  mean /= static_cast<double>(labeled);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] == 0) continue;
    for (int c = 0; c < bands; ++c) sq(c) += std::pow(cube[p * bands + c] - mean(c), 2);
  }
  Eigen::VectorXd stdev = (sq / static_cast<double>(labeled)).cwiseSqrt();
  for (int c = 0; c < bands; ++c)
    if (!(stdev(c) > 0.0)) stdev(c) = 1.0;

  // Elevation z-score over the whole scene.
  double emean = 0.0;
  for (float v : elev) emean += v;
  emean /= static_cast<double>(elev.size());
  double evar = 0.0;
  for (float v : elev) evar += (v - emean) * (v - emean);
  double estd = std::sqrt(evar / static_cast<double>(elev.size()));
  if (!(estd > 0.0)) estd = 1.0;

  const int radius = (patch_size - 1) / 2;
  const double scale = radius > 0 ? static_cast<double>(radius) : 1.0;
  std::vector<PatchPair> out;
  out.reserve(labeled);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int label = labels[static_cast<std::size_t>(r) * w + c];
      if (label == 0) continue;
      Eigen::MatrixXd spectra(patch_size * patch_size, bands);
      Eigen::MatrixXd points(patch_size * patch_size, 3);
      int p = 0;
      for (int i = r - radius; i <= r + radius; ++i) {
        const int ri = reflect_index(i, h);
        for (int j = c - radius; j <= c + radius; ++j, ++p) {
          const int cj = reflect_index(j, w);
          const std::size_t src = static_cast<std::size_t>(ri) * w + cj;
          for (int b = 0; b < bands; ++b) spectra(p, b) = (cube[src * bands + b] - mean(b)) / stdev(b);
          points(p, 0) = (j - c) / scale;
          points(p, 1) = (i - r) / scale;
          points(p, 2) = (elev[src] - emean) / estd;
        }
      }
      out.push_back(PatchPair{std::move(spectra), PointSet(std::move(points)), r, c, label});
    }
  }
  return out;
}

Eigen::VectorXd raw_patch_features(const PatchPair& patch) {
  const Eigen::Index pixels = patch.hsi.rows();
  const Eigen::Index bands = patch.hsi.cols();
  Eigen::VectorXd v(pixels * bands + pixels);
  for (Eigen::Index p = 0; p < pixels; ++p) {
    v.segment(p * bands, bands) = patch.hsi.row(p).transpose();
    v(pixels * bands + p) = patch.lidar.points()(p, 2);
  }
  return v;
}

std::vector<std::size_t> SplitSpec::train_indices() const {
  std::vector<std::size_t> out;
  for (const auto& [cls, idx] : train) out.insert(out.end(), idx.begin(), idx.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> SplitSpec::test_indices() const {
  std::vector<std::size_t> out;
  for (const auto& [cls, idx] : test) out.insert(out.end(), idx.begin(), idx.end());
  std::sort(out.begin(), out.end());
  return out;
}

SplitSpec stratified_split(std::span<const std::int32_t> labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("stratified_split: fraction must be in (0,1)");
  std::map<int, std::vector<std::size_t>> by_class;
  int max_label = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw std::invalid_argument("stratified_split: negative label");
    if (labels[i] == 0) continue;
    by_class[labels[i]].push_back(i);
    max_label = std::max(max_label, static_cast<int>(labels[i]));
  }
  for (int c = 1; c <= max_label; ++c) {
    if (!by_class.contains(c)) std::cerr << "warning: class " << c << " has no samples; skipped\n";
  }
  SplitSpec split;
  split.fraction = fraction;
  split.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& [cls, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size());
    std::vector<std::size_t> tr(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> te(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    std::sort(tr.begin(), tr.end());
    std::sort(te.begin(), te.end());
    split.train[cls] = std::move(tr);
    split.test[cls] = std::move(te);
  }
  return split;
}

SyntheticScene gen_synthetic(int height, int width, int n_classes, int bands, std::uint64_t seed,
                             const SyntheticOptions& options) {
  if (height < 1 || width < 1 || n_classes < 1 || bands < 1) {
    throw std::invalid_argument("gen_synthetic: all sizes must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  // Voronoi sites, one per class.
  std::vector<std::pair<double, double>> sites;
  for (int k = 0; k < n_classes; ++k) sites.emplace_back(unit(rng) * height, unit(rng) * width);

  // Smooth spectral signatures: three random sinusoids plus an offset, redrawn
  // until every pair differs by at least 1 in L2.
  Eigen::MatrixXd sig(n_classes, bands);
  for (int k = 0; k < n_classes; ++k) {
    for (int attempt = 0;; ++attempt) {
      const double offset = 2.0 * unit(rng) - 1.0;
      for (int b = 0; b < bands; ++b) sig(k, b) = offset;
      for (int term = 0; term < 3; ++term) {
        const double amp = 0.5 + unit(rng);
        const double freq = 0.5 + 2.5 * unit(rng);
        const double phase = two_pi * unit(rng);
        for (int b = 0; b < bands; ++b) {
          const double t = bands > 1 ? static_cast<double>(b) / (bands - 1) : 0.0;
          sig(k, b) += amp * std::sin(two_pi * freq * t + phase);
        }
      }
      bool distinct = true;
      for (int j = 0; j < k; ++j) distinct = distinct && (sig.row(k) - sig.row(j)).norm() >= 1.0;
      if (distinct || attempt > 1000) break;
    }
  }
  Eigen::VectorXd noise_sigma(n_classes);
  for (int k = 0; k < n_classes; ++k) {
    const double range = sig.row(k).maxCoeff() - sig.row(k).minCoeff();
    noise_sigma(k) = options.noise_fraction * (range > 0.0 ? range : 1.0);
  }

  // Elevation: per-class base offsets spaced 3 noise sigmas apart in shuffled
  // order, a gentle terrain surface, and per-pixel noise.
  const double elev_sigma = 0.1;
  std::vector<int> order(static_cast<std::size_t>(n_classes));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::VectorXd base(n_classes);
  for (int k = 0; k < n_classes; ++k) base(order[static_cast<std::size_t>(k)]) = 3.0 * elev_sigma * k;
  const double fx = 0.5 + unit(rng);
  const double fy = 0.5 + unit(rng);
  const double px = two_pi * unit(rng);
  const double py = two_pi * unit(rng);

  const auto h = static_cast<std::uint32_t>(height);
  const auto w = static_cast<std::uint32_t>(width);
  const auto c = static_cast<std::uint32_t>(bands);
  SyntheticScene out{Scene{DenseTensor::f32({h, w, c}), DenseTensor::f32({h, w}), DenseTensor::i32({h, w})}, sig};
  auto cube = out.scene.hsi.f32_data();
  auto elev = out.scene.lidar.f32_data();
  auto labels = out.scene.labels.i32_data();
  for (int r = 0; r < height; ++r) {
    for (int col = 0; col < width; ++col) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int k = 0; k < n_classes; ++k) {
        const double d = std::pow(r + 0.5 - sites[k].first, 2) + std::pow(col + 0.5 - sites[k].second, 2);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      const std::size_t p = static_cast<std::size_t>(r) * width + col;
      labels[p] = best + 1;
      for (int b = 0; b < bands; ++b) {
        const double noise = options.noise_fraction > 0.0 ? noise_sigma(best) * normal(rng) : 0.0;
        cube[p * bands + b] = static_cast<float>(sig(best, b) + noise);
      }
      const double terrain = 0.1 * std::sin(two_pi * fx * r / height + px) * std::cos(two_pi * fy * col / width + py);
      const double enoise = options.noise_fraction > 0.0 ? elev_sigma * normal(rng) : 0.0;
      elev[p] = static_cast<float>(base(best) + terrain + enoise);
    }
  }
  return out;
}

}  // namespace hdcaps
