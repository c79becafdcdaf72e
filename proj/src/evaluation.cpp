#include "hdcaps/evaluation.hpp"

#include "hdcaps/errors.hpp"

#include "json.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace hdcaps {
namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
  out.insert(out.end(), std::begin(raw), std::end(raw));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + sizeof(T) > bytes.size()) throw FormatError("feature file truncated", offset);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, bytes.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

// Sign convention: the largest-magnitude entry of every column is positive.
void fix_signs(Eigen::MatrixXd& vectors) {
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    Eigen::Index arg = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, c) < 0.0) vectors.col(c) *= -1.0;
  }
}

}  // namespace

int center_index(int patch_size) {
  if (patch_size < 1 || patch_size % 2 == 0) throw std::invalid_argument("center_index: patch size must be odd");
  return (patch_size * patch_size - 1) / 2;
}

Eigen::VectorXd fuse_features(const FeatureMap& hsi, const FeatureMap& lidar, int center) {
  const Eigen::MatrixXd& fh = hsi.values;
  const Eigen::MatrixXd& fl = lidar.values;
  if (fh.rows() != fl.rows() || fh.cols() != fl.cols() || fh.rows() == 0) {
    throw std::invalid_argument("fuse_features: feature maps must have matching non-empty shapes");
  }
  if (center < 0 || center >= fh.rows()) throw std::invalid_argument("fuse_features: center index out of range");
  const Eigen::Index c = fh.cols();
  Eigen::VectorXd out(4 * c);
  out.segment(0, c) = fh.row(center).transpose();
  out.segment(c, c) = fh.colwise().mean().transpose();
  out.segment(2 * c, c) = fl.row(center).transpose();
  out.segment(3 * c, c) = fl.colwise().mean().transpose();
  return out;
}

FeatureTable extract_features(const ModelState& state, const TrainConfig& config, std::span<const PatchPair> patches) {
  FeatureTable table;
  if (patches.empty()) return table;
  const int center = center_index(config.patch_size);
  table.features.resize(static_cast<Eigen::Index>(patches.size()), 4 * config.channels);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const PatchPair& p = patches[i];
    if (p.hsi.rows() != config.patch_size * config.patch_size) {
      throw std::invalid_argument("extract_features: patch size does not match the model config");
    }
    const PointSet prelim = extract_preliminary(state.capsule_block, p.hsi);
    const auto [att_h, feat_h] = encode(state.hsi_encoder, prelim);
    const auto [att_l, feat_l] = encode(state.lidar_encoder, p.lidar);
    table.features.row(static_cast<Eigen::Index>(i)) = fuse_features(feat_h, feat_l, center).transpose();
    table.rows.push_back(p.row);
    table.cols.push_back(p.col);
    table.labels.push_back(p.label);
  }
  if (!table.features.allFinite()) throw DivergenceError("extracted features");
  return table;
}

FeatureTable raw_features(std::span<const PatchPair> patches) {
  FeatureTable table;
  if (patches.empty()) return table;
  const Eigen::VectorXd first = raw_patch_features(patches.front());
  table.features.resize(static_cast<Eigen::Index>(patches.size()), first.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Eigen::VectorXd f = raw_patch_features(patches[i]);
    if (f.size() != first.size()) throw std::invalid_argument("raw_features: patches differ in shape");
    table.features.row(static_cast<Eigen::Index>(i)) = f.transpose();
    table.rows.push_back(patches[i].row);
    table.cols.push_back(patches[i].col);
    table.labels.push_back(patches[i].label);
  }
  return table;
}

// ---------------------------------------------------------------- HDCF

std::vector<std::uint8_t> encode_features(const FeatureTable& table) {
  const auto n = static_cast<std::uint32_t>(table.size());
  const auto dim = static_cast<std::uint32_t>(table.features.cols());
  if (static_cast<std::size_t>(table.features.rows()) != table.size() || table.rows.size() != table.size() ||
      table.cols.size() != table.size()) {
    throw std::invalid_argument("encode_features: inconsistent table");
  }
  std::vector<std::uint8_t> out{'H', 'D', 'C', 'F'};
  put_le(out, n);
  put_le(out, dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    put_le(out, static_cast<std::uint32_t>(table.rows[i]));
    put_le(out, static_cast<std::uint32_t>(table.cols[i]));
    put_le(out, static_cast<std::int32_t>(table.labels[i]));
    for (std::uint32_t j = 0; j < dim; ++j) put_le(out, static_cast<float>(table.features(i, j)));
  }
  return out;
}

FeatureTable decode_features(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "HDCF", 4) != 0) throw FormatError("bad feature file magic", 0);
  const auto n = get_le<std::uint32_t>(bytes, 4);
  const auto dim = get_le<std::uint32_t>(bytes, 8);
  const std::size_t row_bytes = 12 + 4 * static_cast<std::size_t>(dim);
  const std::size_t expected = 12 + row_bytes * n;
  if (bytes.size() < expected) throw FormatError("feature file truncated", bytes.size());
  if (bytes.size() > expected) throw FormatError("trailing bytes after feature rows", expected);
  FeatureTable table;
  table.features.resize(n, dim);
  std::size_t off = 12;
  for (std::uint32_t i = 0; i < n; ++i) {
    table.rows.push_back(static_cast<int>(get_le<std::uint32_t>(bytes, off)));
    table.cols.push_back(static_cast<int>(get_le<std::uint32_t>(bytes, off + 4)));
    table.labels.push_back(get_le<std::int32_t>(bytes, off + 8));
    off += 12;
    for (std::uint32_t j = 0; j < dim; ++j, off += 4) table.features(i, j) = get_le<float>(bytes, off);
  }
  return table;
}

void save_features(const std::filesystem::path& path, const FeatureTable& table) {
  write_file_atomic(path, encode_features(table));
}

FeatureTable load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_features(bytes);
}

// ---------------------------------------------------------------- classifier

Standardizer Standardizer::fit(const Eigen::MatrixXd& data) {
  if (data.rows() == 0) throw std::invalid_argument("Standardizer: no rows");
  Standardizer s;
  s.mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - s.mean;
  s.scale = (centered.cwiseAbs2().colwise().sum() / static_cast<double>(data.rows())).cwiseSqrt();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j)
    if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& data) const {
  if (data.cols() != mean.size()) throw std::invalid_argument("Standardizer: column count mismatch");
  return (data.rowwise() - mean).array().rowwise() / scale.array();
}

Eigen::MatrixXd LinearModel::scores(const Eigen::MatrixXd& features) const {
  return (standardizer.apply(features) * weights.transpose()).rowwise() + bias.transpose();
}

LinearModel train_classifier(const Eigen::MatrixXd& features, std::span<const int> labels, std::uint64_t seed,
                             const ClassifierOptions& options) {
  if (static_cast<std::size_t>(features.rows()) != labels.size() || labels.empty()) {
    throw std::invalid_argument("train_classifier: one label per feature row required");
  }
  if (!(options.lambda > 0.0) || options.epochs < 1) throw std::invalid_argument("train_classifier: bad options");
  LinearModel model;
  model.classes.assign(labels.begin(), labels.end());
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
  if (model.classes.size() < 2) throw std::invalid_argument("train_classifier: need at least two classes");

  model.standardizer = Standardizer::fit(features);
  const Eigen::MatrixXd x = model.standardizer.apply(features);
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const auto n_classes = static_cast<Eigen::Index>(model.classes.size());
  // Augmented weights: last column multiplies the constant input 1.
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n_classes, d + 1);
  const double lambda = options.lambda;
  const double radius = 1.0 / std::sqrt(lambda);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<Eigen::Index> class_of(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    class_of[static_cast<std::size_t>(i)] =
        std::lower_bound(model.classes.begin(), model.classes.end(), labels[static_cast<std::size_t>(i)]) -
        model.classes.begin();
  }
  std::mt19937_64 rng(seed);
  Eigen::VectorXd xi(d + 1);
  // The last iterate of 1/(λt) steps is noisy for small λ; the returned model
  // averages the iterates of the second half of training.
  Eigen::MatrixXd w_sum = Eigen::MatrixXd::Zero(n_classes, d + 1);
  std::int64_t averaged = 0;
  const int average_from = options.epochs / 2;
  std::int64_t t = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (const Eigen::Index i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      xi.head(d) = x.row(i).transpose();
      xi(d) = 1.0;
      const Eigen::VectorXd margins = w * xi;
      w *= (1.0 - eta * lambda);
      for (Eigen::Index c = 0; c < n_classes; ++c) {
        const double y = class_of[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
        if (y * margins(c) < 1.0) w.row(c) += eta * y * xi.transpose();
        const double norm = w.row(c).norm();
        if (norm > radius) w.row(c) *= radius / norm;
      }
      if (epoch >= average_from) {
        w_sum += w;
        ++averaged;
      }
    }
  }
  w = w_sum / static_cast<double>(averaged);
  model.weights = w.leftCols(d);
  model.bias = w.col(d);
  return model;
}

std::vector<int> predict(const LinearModel& model, const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd s = model.scores(features);
  std::vector<int> out(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < s.cols(); ++c)
      if (s(i, c) > s(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = model.classes[static_cast<std::size_t>(best)];
  }
  return out;
}

// ---------------------------------------------------------------- metrics

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("confusion_matrix: length mismatch");
  ConfusionMatrix conf;
  conf.classes.assign(truth.begin(), truth.end());
  conf.classes.insert(conf.classes.end(), predicted.begin(), predicted.end());
  std::sort(conf.classes.begin(), conf.classes.end());
  conf.classes.erase(std::unique(conf.classes.begin(), conf.classes.end()), conf.classes.end());
  const auto l = static_cast<Eigen::Index>(conf.classes.size());
  conf.counts = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>::Zero(l, l);
  auto index = [&](int c) { return std::lower_bound(conf.classes.begin(), conf.classes.end(), c) - conf.classes.begin(); };
  for (std::size_t i = 0; i < truth.size(); ++i) ++conf.counts(index(truth[i]), index(predicted[i]));
  return conf;
}

Metrics metrics(const ConfusionMatrix& conf) {
  const auto& m = conf.counts;
  if (m.rows() == 0 || m.rows() != m.cols()) throw std::invalid_argument("metrics: empty or non-square matrix");
  if ((m.array() < 0).any()) throw std::invalid_argument("metrics: negative count");
  const double n = static_cast<double>(m.sum());
  if (n <= 0.0) throw std::invalid_argument("metrics: no samples");
  Metrics out;
  out.oa = static_cast<double>(m.trace()) / n;
  double p_e = 0.0;
  double recall_sum = 0.0;
  int counted = 0;
  for (Eigen::Index c = 0; c < m.rows(); ++c) {
    const double row = static_cast<double>(m.row(c).sum());
    const double col = static_cast<double>(m.col(c).sum());
    p_e += (row / n) * (col / n);
    if (row > 0.0) {
      const double recall = static_cast<double>(m(c, c)) / row;
      out.per_class.emplace_back(recall);
      recall_sum += recall;
      ++counted;
    } else {
      const std::string name = c < static_cast<Eigen::Index>(conf.classes.size())
                                   ? std::to_string(conf.classes[static_cast<std::size_t>(c)])
                                   : std::to_string(c);
      std::cerr << "warning: class " << name << " has no true samples; excluded from AA\n";
      out.per_class.emplace_back(std::nullopt);
    }
  }
  out.aa = recall_sum / counted;
  out.kappa = p_e < 1.0 ? (out.oa - p_e) / (1.0 - p_e) : 1.0;
  return out;
}

// ---------------------------------------------------------------- PCA

Pca pca_fit(const Eigen::MatrixXd& data, int out_dim) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (out_dim < 1 || out_dim > std::min<Eigen::Index>(n - 1, d)) {
    throw std::invalid_argument("pca_fit: out_dim must be in [1, min(n-1, d)]");
  }
  Pca pca;
  pca.mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - pca.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca_fit: eigendecomposition failed");
  // Ascending eigenvalues; take the top out_dim in reverse.
  pca.components = solver.eigenvectors().rightCols(out_dim).rowwise().reverse();
  pca.explained = solver.eigenvalues().tail(out_dim).reverse();
  fix_signs(pca.components);
  return pca;
}

Eigen::MatrixXd pca_transform(const Pca& pca, const Eigen::MatrixXd& data) {
  if (data.cols() != pca.mean.size()) throw std::invalid_argument("pca_transform: column count mismatch");
  return (data.rowwise() - pca.mean) * pca.components;
}

// ---------------------------------------------------------------- Laplacian Eigenmaps

Eigenmap laplacian_eigenmaps(const Eigen::MatrixXd& data, int out_dim, const EigenmapOptions& options) {
  const Eigen::Index n = data.rows();
  if (out_dim < 1 || n <= out_dim + 1) throw std::invalid_argument("laplacian_eigenmaps: need n > out_dim + 1");
  if (options.k_nn < 1) throw std::invalid_argument("laplacian_eigenmaps: k_nn must be >= 1");
  if (static_cast<std::size_t>(n) > options.max_points) {
    throw std::invalid_argument("laplacian_eigenmaps: " + std::to_string(n) + " points exceed the dense solver cap of " +
                                std::to_string(options.max_points));
  }
  const Eigen::Index k = std::min<Eigen::Index>(options.k_nn, n - 1);

  // Squared distances and symmetric k-NN adjacency.
  const Eigen::VectorXd sq = data.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * data * data.transpose());
  d2 = d2.cwiseMax(0.0);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> edge = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::erase(idx, i);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Eigen::Index a, Eigen::Index b) {
      return d2(i, a) < d2(i, b) || (d2(i, a) == d2(i, b) && a < b);
    });
    for (Eigen::Index j = 0; j < k; ++j) {
      edge(i, idx[static_cast<std::size_t>(j)]) = true;
      edge(idx[static_cast<std::size_t>(j)], i) = true;
    }
  }

  double sigma = options.sigma;
  if (!(sigma > 0.0)) {
    std::vector<double> lengths;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j)
        if (edge(i, j)) lengths.push_back(std::sqrt(d2(i, j)));
    std::nth_element(lengths.begin(), lengths.begin() + static_cast<std::ptrdiff_t>(lengths.size() / 2), lengths.end());
    sigma = lengths[lengths.size() / 2];
    if (!(sigma > 0.0)) sigma = 1.0;
  }

  // Largest connected component (lowest index wins ties).
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  int n_comp = 0;
  std::vector<std::size_t> sizes;
  for (Eigen::Index s = 0; s < n; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    std::vector<Eigen::Index> stack{s};
    comp[static_cast<std::size_t>(s)] = n_comp;
    std::size_t size = 0;
    while (!stack.empty()) {
      const Eigen::Index u = stack.back();
      stack.pop_back();
      ++size;
      for (Eigen::Index v = 0; v < n; ++v) {
        if (edge(u, v) && comp[static_cast<std::size_t>(v)] < 0) {
          comp[static_cast<std::size_t>(v)] = n_comp;
          stack.push_back(v);
        }
      }
    }
    sizes.push_back(size);
    ++n_comp;
  }
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  Eigenmap out;
  for (Eigen::Index i = 0; i < n; ++i)
    if (comp[static_cast<std::size_t>(i)] == keep) out.component.push_back(static_cast<std::size_t>(i));
  if (n_comp > 1) {
    std::cerr << "warning: k-NN graph has " << n_comp << " components; embedding the largest (" << out.component.size()
              << " of " << n << " points)\n";
  }
  const auto m = static_cast<Eigen::Index>(out.component.size());
  if (m <= out_dim + 1) throw std::invalid_argument("laplacian_eigenmaps: largest component too small");

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      const auto i = static_cast<Eigen::Index>(out.component[static_cast<std::size_t>(a)]);
      const auto j = static_cast<Eigen::Index>(out.component[static_cast<std::size_t>(b)]);
      if (i != j && edge(i, j)) w(a, b) = std::exp(-d2(i, j) / (sigma * sigma));
    }
  }
  const Eigen::VectorXd degree = w.rowwise().sum();
  if ((degree.array() <= 0.0).any()) throw std::runtime_error("laplacian_eigenmaps: heat kernel underflowed; raise sigma");
  const Eigen::VectorXd inv_sqrt = degree.cwiseSqrt().cwiseInverse();

  // L y = λ D y  ⇔  (I − D^{-1/2} W D^{-1/2}) v = λ v with y = D^{-1/2} v. The
  // trivial pair (0, D^{1/2}1) is lifted above the spectrum (which is ≤ 2).
  Eigen::MatrixXd sym = -(inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal());
  sym.diagonal().array() += 1.0;
  const Eigen::VectorXd u0 = degree.cwiseSqrt().normalized();
  sym += 3.0 * u0 * u0.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw std::runtime_error("laplacian_eigenmaps: eigendecomposition failed");
  Eigen::MatrixXd y = inv_sqrt.asDiagonal() * solver.eigenvectors().leftCols(out_dim);
  for (Eigen::Index c = 0; c < y.cols(); ++c) y.col(c) /= std::sqrt((y.col(c).cwiseAbs2().cwiseProduct(degree)).sum());
  fix_signs(y);
  out.eigenvalues = solver.eigenvalues().head(out_dim);
  out.embedding = Eigen::MatrixXd::Zero(n, out_dim);
  for (Eigen::Index a = 0; a < m; ++a) out.embedding.row(static_cast<Eigen::Index>(out.component[static_cast<std::size_t>(a)])) = y.row(a);
  return out;
}

// ---------------------------------------------------------------- split evaluation

EvaluationReport evaluate_split(const FeatureTable& table, const DenseTensor& labels, double fraction,
                                std::uint64_t seed, const ClassifierOptions& options) {
  if (labels.dtype() != DType::i32 || labels.dims().size() != 2) {
    throw FormatError("labels must be a 2-D i32 tensor", 6);
  }
  const auto height = static_cast<std::size_t>(labels.dims()[0]);
  const auto width = static_cast<std::size_t>(labels.dims()[1]);
  std::unordered_map<std::size_t, Eigen::Index> row_of;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table.rows[i] < 0 || table.cols[i] < 0 || static_cast<std::size_t>(table.rows[i]) >= height ||
        static_cast<std::size_t>(table.cols[i]) >= width) {
      throw std::invalid_argument("evaluate_split: feature row " + std::to_string(i) + " lies outside the label raster");
    }
    row_of[static_cast<std::size_t>(table.rows[i]) * width + static_cast<std::size_t>(table.cols[i])] =
        static_cast<Eigen::Index>(i);
  }
  const auto label_data = labels.i32_data();
  const SplitSpec split = stratified_split(label_data, fraction, seed);
  auto gather = [&](const std::vector<std::size_t>& pixels, Eigen::MatrixXd& x, std::vector<int>& y) {
    x.resize(static_cast<Eigen::Index>(pixels.size()), table.features.cols());
    y.clear();
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const auto it = row_of.find(pixels[i]);
      if (it == row_of.end()) {
        throw std::invalid_argument("evaluate_split: labeled pixel (" + std::to_string(pixels[i] / width) + "," +
                                    std::to_string(pixels[i] % width) + ") has no feature row");
      }
      x.row(static_cast<Eigen::Index>(i)) = table.features.row(it->second);
      y.push_back(label_data[pixels[i]]);
    }
  };
  Eigen::MatrixXd x_train, x_test;
  std::vector<int> y_train, y_test;
  gather(split.train_indices(), x_train, y_train);
  gather(split.test_indices(), x_test, y_test);
  if (y_test.empty()) throw std::invalid_argument("evaluate_split: empty test set");

  const LinearModel model = train_classifier(x_train, y_train, seed, options);
  const std::vector<int> predicted = predict(model, x_test);
  EvaluationReport report;
  report.confusion = confusion_matrix(y_test, predicted);
  report.metrics = metrics(report.confusion);
  report.n_train = y_train.size();
  report.n_test = y_test.size();
  return report;
}

std::string report_json(const EvaluationReport& report, const std::string& method) {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["oa"] = report.metrics.oa;
  j["aa"] = report.metrics.aa;
  j["kappa"] = report.metrics.kappa;
  j["classes"] = report.confusion.classes;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
  for (const auto& v : report.metrics.per_class) per_class.push_back(v ? nlohmann::ordered_json(*v) : nullptr);
  j["per_class"] = per_class;
  nlohmann::ordered_json conf = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < report.confusion.counts.rows(); ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < report.confusion.counts.cols(); ++c) row.push_back(report.confusion.counts(r, c));
    conf.push_back(row);
  }
  j["confusion"] = conf;
  j["n_train"] = report.n_train;
  j["n_test"] = report.n_test;
  return j.dump(2) + "\n";
}

}  // namespace hdcaps
