#include "doctest.h"
#include "oracles.hpp"

#include "hdcaps/dataio.hpp"
#include "hdcaps/errors.hpp"

#include <filesystem>
#include <numeric>
#include <set>

using namespace hdcaps;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("hdcaps_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Scene constant_scene(int h, int w, int bands, float value) {
  Scene s;
  s.hsi = DenseTensor::f32({std::uint32_t(h), std::uint32_t(w), std::uint32_t(bands)},
                           std::vector<float>(std::size_t(h * w * bands), value));
  s.lidar = DenseTensor::f32({std::uint32_t(h), std::uint32_t(w)}, std::vector<float>(std::size_t(h * w), value));
  s.labels = DenseTensor::i32({std::uint32_t(h), std::uint32_t(w)}, std::vector<std::int32_t>(std::size_t(h * w), 1));
  return s;
}

}  // namespace

TEST_CASE("DTEN byte layout and round trip") {
  const DenseTensor t = DenseTensor::f32({2, 2}, {1, 2, 3, 4});
  const auto bytes = encode_tensor(t);
  CHECK(bytes.size() == 4 + 2 + 1 + 1 + 8 + 16);
  CHECK(bytes[0] == 'D');
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 1);
  CHECK(bytes[7] == 2);
  CHECK(decode_tensor(bytes) == t);

  const auto dir = scratch("dten");
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int32_t> ints(-1000, 1000);
  std::vector<std::int32_t> iv(60);
  for (auto& v : iv) v = ints(rng);
  const DenseTensor ti = DenseTensor::i32({3, 4, 5}, iv);
  save_tensor(dir / "i.dten", ti);
  CHECK(load_tensor(dir / "i.dten") == ti);

  std::vector<float> fv(7);
  for (auto& v : fv) v = static_cast<float>(ints(rng)) / 7.0f;
  const DenseTensor tf = DenseTensor::f32({7}, fv);
  save_tensor(dir / "f.dten", tf);
  CHECK(load_tensor(dir / "f.dten") == tf);
}

TEST_CASE("DTEN rejects malformed input with byte offsets") {
  auto bytes = encode_tensor(DenseTensor::f32({2, 2}, {1, 2, 3, 4}));
  auto bad = bytes;
  bad[0] = bad[1] = bad[2] = bad[3] = 'X';
  try {
    decode_tensor(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_AS(decode_tensor(bad), FormatError);
  bad = bytes;
  bad[6] = 9;
  CHECK_THROWS_AS(decode_tensor(bad), FormatError);
  bad.assign(bytes.begin(), bytes.end() - 1);
  CHECK_THROWS_AS(decode_tensor(bad), FormatError);
}

TEST_CASE("reflect_index mirrors without repeating the edge") {
  CHECK(reflect_index(-1, 4) == 1);
  CHECK(reflect_index(0, 4) == 0);
  CHECK(reflect_index(1, 4) == 1);
  CHECK(reflect_index(4, 4) == 2);
  CHECK(reflect_index(-2, 4) == 2);
  CHECK(reflect_index(0, 1) == 0);
  CHECK(reflect_index(5, 1) == 0);
}

TEST_CASE("extract_patches: constant field, grid and corner reflection") {
  Scene s = constant_scene(6, 6, 3, 2.0f);
  const auto patches = extract_patches(s, 5);
  CHECK(patches.size() == 36);
  const PatchPair& p = patches[2 * 6 + 3];
  CHECK(p.row == 2);
  CHECK(p.col == 3);
  CHECK(p.hsi.cwiseAbs().maxCoeff() == 0.0);  // a constant band standardizes to 0
  const std::set<double> grid{-1.0, -0.5, 0.0, 0.5, 1.0};
  for (Eigen::Index i = 0; i < 25; ++i) {
    CHECK(grid.contains(p.lidar.points()(i, 0)));
    CHECK(grid.contains(p.lidar.points()(i, 1)));
    // Row-major alignment: point i sits at patch offset (i / 5, i % 5).
    CHECK(p.lidar.points()(i, 0) == doctest::Approx((i % 5 - 2) / 2.0));
    CHECK(p.lidar.points()(i, 1) == doctest::Approx((i / 5 - 2) / 2.0));
  }

  // 4×4 raster whose elevation encodes the pixel index; corner (0,0) with b=3
  // must read source rows/cols (1,0,1).
  Scene r = constant_scene(4, 4, 1, 0.0f);
  auto z = r.lidar.f32_data();
  for (int i = 0; i < 16; ++i) z[std::size_t(i)] = static_cast<float>(i);
  auto hsi = r.hsi.f32_data();
  for (int i = 0; i < 16; ++i) hsi[std::size_t(i)] = static_cast<float>(i);
  const auto rp = extract_patches(r, 3);
  const PatchPair& corner = rp[0];
  const Eigen::VectorXd zs = corner.lidar.points().col(2);
  const double mean = 7.5, sd = std::sqrt((16.0 * 16.0 - 1.0) / 12.0);
  const int src[3] = {1, 0, 1};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) CHECK(zs(a * 3 + b) == doctest::Approx((src[a] * 4 + src[b] - mean) / sd).epsilon(1e-6));

  CHECK_THROWS_AS(extract_patches(s, 4), std::invalid_argument);
}

TEST_CASE("extract_patches: standardization over labeled pixels and unlabeled skipping") {
  const SyntheticScene syn = gen_synthetic(20, 20, 3, 5, 4);
  Scene s = syn.scene;
  auto labels = s.labels.i32_data();
  for (std::size_t i = 0; i < labels.size(); i += 3) labels[i] = 0;
  const auto patches = extract_patches(s, 3);
  const auto labeled = std::count_if(labels.begin(), labels.end(), [](std::int32_t v) { return v != 0; });
  CHECK(patches.size() == static_cast<std::size_t>(labeled));
  Eigen::MatrixXd centers(static_cast<Eigen::Index>(patches.size()), 5);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    CHECK(patches[i].label != 0);
    centers.row(static_cast<Eigen::Index>(i)) = patches[i].hsi.row(4);
  }
  const Eigen::RowVectorXd mu = centers.colwise().mean();
  const Eigen::RowVectorXd sd = ((centers.rowwise() - mu).cwiseAbs2().colwise().mean()).cwiseSqrt();
  CHECK(mu.cwiseAbs().maxCoeff() < 1e-6);
  CHECK((sd.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("extract_patches on a 325x220 raster") {
  Scene s = constant_scene(325, 220, 1, 1.0f);
  auto labels = s.labels.i32_data();
  std::fill(labels.begin(), labels.end(), 0);
  std::fill(labels.begin(), labels.begin() + 53687, 3);
  CHECK(extract_patches(s, 5).size() == 53687);
}

TEST_CASE("stratified_split fixtures") {
  {
    std::vector<std::int32_t> labels(466, 6);
    const SplitSpec s = stratified_split(labels, 0.05, 1);
    CHECK(s.train.at(6).size() == 23);
    CHECK(s.test.at(6).size() == 443);
  }
  {
    const std::vector<int> houston{1251, 1254, 697, 1244, 1242, 325, 1268, 1244, 1252, 1227, 1235, 1233, 469, 428, 660};
    std::vector<std::int32_t> labels;
    for (std::size_t c = 0; c < houston.size(); ++c) labels.insert(labels.end(), std::size_t(houston[c]), std::int32_t(c + 1));
    const SplitSpec s = stratified_split(labels, 0.05, 2);
    CHECK(labels.size() == 15029);
    CHECK(s.train_indices().size() == 745);
    CHECK(s.test_indices().size() == 14284);
  }
  {
    std::vector<std::int32_t> labels{0, 4, 0, 4};
    const SplitSpec s = stratified_split(labels, 0.5, 3);
    CHECK(s.train.at(4).size() == 1);
    CHECK(s.test.at(4).size() == 1);
  }
}

TEST_CASE("stratified_split: partition and determinism") {
  const SyntheticScene syn = gen_synthetic(30, 30, 5, 2, 9);
  const auto labels = syn.scene.labels.i32_data();
  const SplitSpec a = stratified_split(labels, 0.1, 77);
  const SplitSpec b = stratified_split(labels, 0.1, 77);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  auto train = a.train_indices(), test = a.test_indices();
  std::vector<std::size_t> all = train;
  all.insert(all.end(), test.begin(), test.end());
  std::sort(all.begin(), all.end());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  CHECK(all.size() == 900);
  for (const auto& [cls, idx] : a.train) {
    const std::size_t n = idx.size() + a.test.at(cls).size();
    CHECK(idx.size() == std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.1 * double(n)))));
  }
  CHECK_THROWS_AS(stratified_split(labels, 1.0, 1), std::invalid_argument);
}

TEST_CASE("gen_synthetic: determinism, degenerate case, separable noiseless signatures") {
  const SyntheticScene a = gen_synthetic(16, 16, 4, 8, 5);
  const SyntheticScene b = gen_synthetic(16, 16, 4, 8, 5);
  CHECK(a.scene.hsi == b.scene.hsi);
  CHECK(a.scene.lidar == b.scene.lidar);
  CHECK(a.scene.labels == b.scene.labels);

  const SyntheticScene one = gen_synthetic(8, 8, 1, 4, 1);
  for (auto v : one.scene.labels.i32_data()) CHECK(v == 1);

  // Nearest class mean on noiseless pixels.
  SyntheticOptions clean;
  clean.noise_fraction = 0.0;
  const SyntheticScene s = gen_synthetic(64, 64, 4, 16, 12, clean);
  const auto labels = s.scene.labels.i32_data();
  const auto cube = s.scene.hsi.f32_data();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(4, 16);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(4);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    for (int c = 0; c < 16; ++c) sum(labels[p] - 1, c) += cube[p * 16 + std::size_t(c)];
    count(labels[p] - 1) += 1;
  }
  REQUIRE(count.minCoeff() > 0);
  const Eigen::MatrixXd means = sum.array().colwise() / count.array();
  std::size_t correct = 0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    Eigen::RowVectorXd x(16);
    for (int c = 0; c < 16; ++c) x(c) = cube[p * 16 + std::size_t(c)];
    Eigen::Index best = 0;
    (means.rowwise() - x).rowwise().squaredNorm().minCoeff(&best);
    correct += (best + 1 == labels[p]);
  }
  CHECK(correct == labels.size());
}

TEST_CASE("scene save/load round trip") {
  const auto dir = scratch("scene");
  const SyntheticScene s = gen_synthetic(10, 12, 3, 4, 6);
  save_scene(dir, s.scene);
  const Scene back = load_scene(dir);
  CHECK(back.hsi == s.scene.hsi);
  CHECK(back.lidar == s.scene.lidar);
  CHECK(back.labels == s.scene.labels);
  CHECK_THROWS(load_scene(dir / "missing"));
}
