#pragma once

// Downstream evaluation: fused per-pixel features, a one-vs-rest linear
// hinge classifier, PCA and Laplacian-Eigenmaps baselines, and OA/AA/kappa.

#include "hdcaps/canonical_encoder.hpp"
#include "hdcaps/dataio.hpp"
#include "hdcaps/training.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hdcaps {

// Index of the center pixel in a row-major b×b patch.
int center_index(int patch_size);

// [F^H center row ‖ mean F^H row ‖ F^L center row ‖ mean F^L row], length 4·C.
Eigen::VectorXd fuse_features(const FeatureMap& hsi, const FeatureMap& lidar, int center);

// One row per patch plus where it came from.
struct FeatureTable {
  Eigen::MatrixXd features;  // n × dim
  std::vector<int> rows;
  std::vector<int> cols;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

FeatureTable extract_features(const ModelState& state, const TrainConfig& config, std::span<const PatchPair> patches);
FeatureTable raw_features(std::span<const PatchPair> patches);

// HDCF: "HDCF", u32 n, u32 dim, then per row u32 row, u32 col, i32 label, dim × f32.
std::vector<std::uint8_t> encode_features(const FeatureTable& table);
FeatureTable decode_features(std::span<const std::uint8_t> bytes);
void save_features(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable load_features(const std::filesystem::path& path);

// Column z-score; zero-variance columns keep scale 1.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& data);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& data) const;
};

struct ClassifierOptions {
  double lambda = 1e-4;
  int epochs = 100;
};

// One weight row and bias per class over standardized inputs.
struct LinearModel {
  std::vector<int> classes;  // ascending
  Standardizer standardizer;
  Eigen::MatrixXd weights;  // L × dim
  Eigen::VectorXd bias;     // L

  Eigen::MatrixXd scores(const Eigen::MatrixXd& features) const;
};

// Hinge loss + L2 per class, trained by seeded per-sample subgradient steps
// of size 1/(λt) with the bias carried as a constant input; the returned
// weights average the iterates of the second half of the epochs.
LinearModel train_classifier(const Eigen::MatrixXd& features, std::span<const int> labels, std::uint64_t seed,
                             const ClassifierOptions& options = {});
// Highest score wins; ties go to the lowest class id.
std::vector<int> predict(const LinearModel& model, const Eigen::MatrixXd& features);

struct ConfusionMatrix {
  std::vector<int> classes;  // ascending
  Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic> counts;  // rows true, cols predicted

  long long total() const { return counts.sum(); }
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted);

struct Metrics {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<std::optional<double>> per_class;  // empty for classes with no true samples
};

Metrics metrics(const ConfusionMatrix& conf);

struct Pca {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // d × k, columns by decreasing variance
  Eigen::VectorXd explained;   // k eigenvalues of the sample covariance
};

Pca pca_fit(const Eigen::MatrixXd& data, int out_dim);
Eigen::MatrixXd pca_transform(const Pca& pca, const Eigen::MatrixXd& data);

struct EigenmapOptions {
  int k_nn = 10;
  double sigma = 0.0;  // <= 0: median k-NN edge length
  std::size_t max_points = 8000;
};

struct Eigenmap {
  Eigen::MatrixXd embedding;    // n × out_dim; rows outside the kept component are zero
  Eigen::VectorXd eigenvalues;  // out_dim smallest nonzero generalized eigenvalues
  std::vector<std::size_t> component;  // indices embedded
};

Eigenmap laplacian_eigenmaps(const Eigen::MatrixXd& data, int out_dim, const EigenmapOptions& options = {});

struct EvaluationReport {
  Metrics metrics;
  ConfusionMatrix confusion;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

// Splits the labeled pixels of `labels` (h×w i32), trains on the train rows of
// `table` and scores the test rows. Every labeled pixel must be in the table.
EvaluationReport evaluate_split(const FeatureTable& table, const DenseTensor& labels, double fraction,
                                std::uint64_t seed, const ClassifierOptions& options = {});

std::string report_json(const EvaluationReport& report, const std::string& method);

}  // namespace hdcaps
