#include "doctest.h"
#include "oracles.hpp"

#include "hdcaps/errors.hpp"
#include "hdcaps/evaluation.hpp"

#include <numeric>

using namespace hdcaps;

namespace {

ConfusionMatrix make_conf(std::initializer_list<std::initializer_list<long long>> rows) {
  ConfusionMatrix c;
  const auto n = static_cast<Eigen::Index>(rows.size());
  c.counts.resize(n, n);
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index k = 0;
    for (long long v : row) c.counts(r, k++) = v;
    ++r;
  }
  for (Eigen::Index i = 0; i < n; ++i) c.classes.push_back(static_cast<int>(i + 1));
  return c;
}

double accuracy(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("fuse_features fixtures") {
  const FeatureMap z{Eigen::MatrixXd::Zero(25, 6)};
  CHECK(fuse_features(z, z, 12) == Eigen::VectorXd::Zero(24));

  Eigen::MatrixXd fh(2, 1), fl(2, 1);
  fh << 1, 3;
  fl << 10, 20;
  const Eigen::VectorXd v = fuse_features(FeatureMap{fh}, FeatureMap{fl}, 0);
  Eigen::VectorXd expect(4);
  expect << 1, 2, 10, 15;
  CHECK(v == expect);
  CHECK_THROWS_AS(fuse_features(FeatureMap{fh}, FeatureMap{fl}, 2), std::invalid_argument);
  CHECK(center_index(5) == 12);
  CHECK(center_index(3) == 4);

  // Every permutation of the non-center points of a 3-point instance.
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd h3 = oracle::random_matrix(3, 2, rng), l3 = oracle::random_matrix(3, 2, rng);
  const Eigen::VectorXd ref = fuse_features(FeatureMap{h3}, FeatureMap{l3}, 0);
  std::vector<int> rest{1, 2};
  do {
    Eigen::MatrixXd hp(3, 2), lp(3, 2);
    hp.row(0) = h3.row(0);
    lp.row(0) = l3.row(0);
    for (int i = 0; i < 2; ++i) {
      hp.row(i + 1) = h3.row(rest[std::size_t(i)]);
      lp.row(i + 1) = l3.row(rest[std::size_t(i)]);
    }
    CHECK((fuse_features(FeatureMap{hp}, FeatureMap{lp}, 0) - ref).cwiseAbs().maxCoeff() < 1e-15);
  } while (std::next_permutation(rest.begin(), rest.end()));
}

TEST_CASE("HDCF round trip and rejection") {
  FeatureTable t;
  t.features = Eigen::MatrixXd(2, 3);
  t.features << 1, 2, 3, 4.5, -5, 6;
  t.rows = {0, 7};
  t.cols = {1, 2};
  t.labels = {3, 1};
  const auto bytes = encode_features(t);
  CHECK(bytes.size() == 12 + 2 * (12 + 12));
  const FeatureTable back = decode_features(bytes);
  CHECK(back.features == t.features);
  CHECK(back.rows == t.rows);
  CHECK(back.cols == t.cols);
  CHECK(back.labels == t.labels);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_features(bad), FormatError);
  bad.assign(bytes.begin(), bytes.end() - 2);
  CHECK_THROWS_AS(decode_features(bad), FormatError);
}

TEST_CASE("classifier: separable 1-D toy and boundary") {
  Eigen::MatrixXd x(4, 1);
  x << -2, -1, 1, 2;
  const std::vector<int> y{1, 1, 2, 2};
  const LinearModel m = train_classifier(x, y, 1);
  CHECK(predict(m, x) == y);
  Eigen::MatrixXd probe(2, 1);
  probe << -1, 1;
  CHECK(predict(m, probe) == std::vector<int>{1, 2});

  CHECK_THROWS_AS(train_classifier(x, std::vector<int>{1, 1, 1, 1}, 1), std::invalid_argument);
}

TEST_CASE("classifier: uninformative features give majority accuracy") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(20, 3, 4.0);
  std::vector<int> y(20, 3);
  for (int i = 0; i < 5; ++i) y[std::size_t(i)] = 1;
  for (int i = 5; i < 8; ++i) y[std::size_t(i)] = 2;
  const LinearModel m = train_classifier(x, y, 2);
  CHECK(accuracy(predict(m, x), y) == doctest::Approx(12.0 / 20.0));
}

TEST_CASE("classifier: deterministic and stable under duplication") {
  std::mt19937_64 rng(4);
  Eigen::MatrixXd x = oracle::random_matrix(60, 5, rng);
  std::vector<int> y(60);
  for (Eigen::Index i = 0; i < 60; ++i) {
    y[std::size_t(i)] = i % 3 + 1;
    x(i, y[std::size_t(i)] - 1) += 4.0;
  }
  const LinearModel a = train_classifier(x, y, 9), b = train_classifier(x, y, 9);
  CHECK(a.weights == b.weights);
  CHECK(a.bias == b.bias);
  CHECK(accuracy(predict(a, x), y) == 1.0);

  Eigen::MatrixXd x2(120, 5);
  x2 << x, x;
  std::vector<int> y2 = y;
  y2.insert(y2.end(), y.begin(), y.end());
  const LinearModel d = train_classifier(x2, y2, 9);
  Eigen::MatrixXd fresh = oracle::random_matrix(60, 5, rng);
  for (Eigen::Index i = 0; i < 60; ++i) fresh(i, i % 3) += 4.0;
  CHECK(predict(d, x) == predict(a, x));
  CHECK(accuracy(predict(d, fresh), predict(a, fresh)) >= 0.95);
}

TEST_CASE("metrics fixtures") {
  const Metrics perfect = metrics(make_conf({{2, 0}, {0, 2}}));
  CHECK(perfect.oa == 1.0);
  CHECK(perfect.aa == 1.0);
  CHECK(perfect.kappa == 1.0);

  const Metrics chance = metrics(make_conf({{1, 1}, {1, 1}}));
  CHECK(chance.oa == 0.5);
  CHECK(chance.kappa == 0.0);

  const Metrics m = metrics(make_conf({{4, 1}, {2, 3}}));
  CHECK(m.oa == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(m.aa == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(m.kappa == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(*m.per_class[0] == doctest::Approx(0.8));
  CHECK(*m.per_class[1] == doctest::Approx(0.6));

  // Consistent relabeling leaves every score unchanged.
  const Metrics swapped = metrics(make_conf({{3, 2}, {1, 4}}));
  CHECK(swapped.oa == doctest::Approx(m.oa));
  CHECK(swapped.aa == doctest::Approx(m.aa));
  CHECK(swapped.kappa == doctest::Approx(m.kappa));

  const Metrics hole = metrics(make_conf({{3, 0}, {0, 0}}));
  CHECK(!hole.per_class[1].has_value());
  CHECK(hole.aa == 1.0);

  CHECK_THROWS_AS(metrics(ConfusionMatrix{}), std::invalid_argument);
  CHECK_THROWS_AS(metrics(make_conf({{0, 0}, {0, 0}})), std::invalid_argument);

  const std::vector<int> truth{1, 1, 2, 5}, pred{1, 2, 2, 5};
  const ConfusionMatrix c = confusion_matrix(truth, pred);
  CHECK(c.classes == std::vector<int>{1, 2, 5});
  CHECK(c.total() == 4);
  CHECK(c.counts(0, 1) == 1);
}

TEST_CASE("pca fixtures") {
  Eigen::MatrixXd line(4, 2);
  line << 1, 1, -1, -1, 2, 2, -2, -2;
  const Pca p = pca_fit(line, 1);
  CHECK(std::abs(std::abs(p.components(0, 0)) - 1.0 / std::sqrt(2.0)) < 1e-12);
  CHECK(std::abs(std::abs(p.components(1, 0)) - 1.0 / std::sqrt(2.0)) < 1e-12);
  CHECK(std::abs(pca_fit(line, 2).explained(1)) < 1e-12);

  // Centered, axis-aligned, sample variances (4, 1).
  Eigen::MatrixXd axis(4, 2);
  const double a = std::sqrt(6.0), b = std::sqrt(1.5);
  axis << a, 0, -a, 0, 0, b, 0, -b;
  const Pca q = pca_fit(axis, 1);
  CHECK(std::abs(q.components(0, 0) - 1.0) < 1e-12);
  CHECK(std::abs(q.explained(0) - 4.0) < 1e-12);

  CHECK_THROWS_AS(pca_fit(line, 3), std::invalid_argument);
  CHECK_THROWS_AS(pca_fit(line, 0), std::invalid_argument);
}

TEST_CASE("pca matches a Jacobi eigendecomposition and contracts norms") {
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd x = oracle::random_matrix(10, 5, rng);
  const Pca p = pca_fit(x, 3);
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const auto [vals, vecs] = oracle::jacobi_eigen(c.transpose() * c / 9.0);
  for (int k = 0; k < 3; ++k) {
    const Eigen::VectorXd ref = vecs.col(4 - k);
    const double sign = ref.dot(p.components.col(k)) < 0 ? -1.0 : 1.0;
    CHECK((sign * ref - p.components.col(k)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(vals(4 - k) - p.explained(k)) < 1e-8);
  }
  const Eigen::MatrixXd y = pca_transform(p, x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) CHECK(y.row(i).norm() <= c.row(i).norm() + 1e-8);
}

TEST_CASE("laplacian eigenmaps: two clusters split by sign") {
  std::mt19937_64 rng(6);
  Eigen::MatrixXd x = oracle::random_matrix(40, 2, rng);
  x.bottomRows(20).col(0).array() += 10.0;
  EigenmapOptions o;
  o.k_nn = 20;
  const Eigenmap e = laplacian_eigenmaps(x, 1, o);
  const bool first_positive = e.embedding(0, 0) > 0;
  for (Eigen::Index i = 0; i < 40; ++i) CHECK((e.embedding(i, 0) > 0) == (i < 20 ? first_positive : !first_positive));
}

TEST_CASE("laplacian eigenmaps: generalized eigenvalues match a dense oracle") {
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 3;
  EigenmapOptions o;
  o.k_nn = 2;
  o.sigma = 1.5;
  const Eigenmap e = laplacian_eigenmaps(x, 1, o);
  // Full graph on three points; solve L y = λ D y via D^{-1/2} L D^{-1/2}.
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) w(i, j) = std::exp(-std::pow(x(i, 0) - x(j, 0), 2) / (1.5 * 1.5));
  const Eigen::VectorXd d = w.rowwise().sum();
  Eigen::MatrixXd l = Eigen::MatrixXd(d.asDiagonal()) - w;
  const Eigen::VectorXd s = d.cwiseSqrt().cwiseInverse();
  const auto [vals, vecs] = oracle::jacobi_eigen(s.asDiagonal() * l * s.asDiagonal());
  CHECK(std::abs(vals(0)) < 1e-12);
  CHECK(std::abs(e.eigenvalues(0) - vals(1)) < 1e-8);

  CHECK_THROWS_AS(laplacian_eigenmaps(x, 2, o), std::invalid_argument);
}

TEST_CASE("laplacian eigenmaps: duplicated points keep relative geometry") {
  std::mt19937_64 rng(12);
  const Eigen::MatrixXd x = oracle::random_matrix(15, 3, rng);
  Eigen::MatrixXd twice(30, 3);
  twice << x, x;
  EigenmapOptions o;
  // twin plus four whole twin pairs, so ties never split a pair
  o.k_nn = 9;
  o.sigma = 2.0;
  const Eigenmap e = laplacian_eigenmaps(twice, 2, o);
  for (Eigen::Index i = 0; i < 15; ++i) CHECK((e.embedding.row(i) - e.embedding.row(i + 15)).norm() < 1e-6);
}

TEST_CASE("evaluate_split on separable features") {
  const SyntheticScene s = gen_synthetic(20, 20, 3, 4, 2);
  const auto patches = extract_patches(s.scene, 3);
  FeatureTable t = raw_features(patches);
  const EvaluationReport r = evaluate_split(t, s.scene.labels, 0.2, 5);
  CHECK(r.n_train + r.n_test == 400);
  CHECK(r.metrics.oa > 0.9);
  const std::string json = report_json(r, "raw");
  CHECK(json.find("\"oa\"") != std::string::npos);
  CHECK(json.find("\"kappa\"") != std::string::npos);
  CHECK(json == report_json(evaluate_split(t, s.scene.labels, 0.2, 5), "raw"));

  t.rows.pop_back();
  t.cols.pop_back();
  t.labels.pop_back();
  t.features.conservativeResize(t.features.rows() - 1, Eigen::NoChange);
  CHECK_THROWS_AS(evaluate_split(t, s.scene.labels, 0.2, 5), std::invalid_argument);
}
