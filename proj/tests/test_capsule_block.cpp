#include "doctest.h"
#include "oracles.hpp"

#include "hdcaps/capsule_block.hpp"

using namespace hdcaps;

TEST_CASE("squash fixtures") {
  CHECK(squash(Eigen::VectorXd::Zero(3)).norm() == 0.0);

  Eigen::VectorXd v(2);
  v << 3, 4;
  const Eigen::VectorXd s = squash(v);
  CHECK(std::abs(s(0) - 15.0 / 26.0) < 1e-6);
  CHECK(std::abs(s(1) - 20.0 / 26.0) < 1e-6);

  Eigen::VectorXd big(2);
  big << 1e6, 0;
  const double n = squash(big).norm();
  CHECK(n > 1.0 - 1e-6);
  CHECK(n < 1.0);
}

TEST_CASE("extract_preliminary fixtures") {
  std::mt19937_64 rng(1);
  CapsuleBlockParams p = CapsuleBlockParams::init(5, 4, 4, rng);
  p.weight.setZero();
  const PointSet zero = extract_preliminary(p, oracle::random_matrix(9, 5, rng));
  CHECK(zero.count() == 9);
  CHECK(zero.dim() == 16);
  CHECK(zero.points().cwiseAbs().maxCoeff() == 0.0);

  CapsuleBlockParams id;
  id.weight = Eigen::MatrixXd::Identity(2, 2);
  id.bias = Eigen::MatrixXd::Zero(1, 2);
  id.groups = 1;
  id.cap_dim = 2;
  Eigen::MatrixXd pixel(1, 2);
  pixel << 3, 4;
  const Eigen::MatrixXd out = extract_preliminary(id, pixel).points();
  CHECK(std::abs(out(0, 0) - 15.0 / 26.0) < 1e-6);
  CHECK(std::abs(out(0, 1) - 20.0 / 26.0) < 1e-6);

  CHECK_THROWS_AS(extract_preliminary(id, Eigen::MatrixXd::Zero(1, 3)), std::invalid_argument);
}

TEST_CASE("extract_preliminary: per-pixel locality and norm bound") {
  std::mt19937_64 rng(7);
  const CapsuleBlockParams p = CapsuleBlockParams::init(6, 4, 4, rng);
  Eigen::MatrixXd pixels = oracle::random_matrix(25, 6, rng, 3.0);
  const Eigen::MatrixXd before = extract_preliminary(p, pixels).points();
  for (Eigen::Index i = 0; i < before.rows(); ++i) CHECK(before.row(i).norm() < 2.0);  // √G
  pixels.row(12) *= -2.0;
  const Eigen::MatrixXd after = extract_preliminary(p, pixels).points();
  for (Eigen::Index i = 0; i < before.rows(); ++i) {
    if (i == 12)
      CHECK((after.row(i) - before.row(i)).norm() > 0.0);
    else
      CHECK(after.row(i) == before.row(i));
  }
}

TEST_CASE("capsule block gradients match central differences") {
  std::mt19937_64 rng(17);
  CapsuleBlockParams p = CapsuleBlockParams::init(5, 2, 3, rng);
  p.bias = oracle::random_matrix(1, 6, rng, 0.2);
  const Eigen::MatrixXd pixels = oracle::random_matrix(9, 5, rng);
  const Eigen::MatrixXd probe = oracle::random_matrix(9, 6, rng);
  auto f = [&] { return extract_preliminary(p, pixels).points().cwiseProduct(probe).sum(); };

  ad::Tape<double> tape;
  ad::Binder<double> bind(tape, true);
  ad::Var<double> scalar = oracle::inner(extract_preliminary(bind, p, tape.constant(pixels)), probe);
  CHECK(std::abs(scalar.scalar() - f()) < 1e-12);
  tape.backward(scalar);
  const Eigen::MatrixXd gw = bind.gradient(p.weight);
  const Eigen::MatrixXd gb = bind.gradient(p.bias);
  CHECK(oracle::max_rel_error(gw, oracle::central_difference(p.weight, f)) < 1e-4);
  CHECK(oracle::max_rel_error(gb, oracle::central_difference(p.bias, f)) < 1e-4);
}
