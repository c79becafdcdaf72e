#include "doctest.h"
#include "oracles.hpp"

#include "hdcaps/decoder_losses.hpp"

#include <cmath>

using namespace hdcaps;

namespace {

// Σ_p Σ_k a_pk ln(a_pk / b_pk) / X, for strictly positive rows.
double kl_brute(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double total = 0.0;
  for (Eigen::Index p = 0; p < a.rows(); ++p)
    for (Eigen::Index k = 0; k < a.cols(); ++k) total += a(p, k) * std::log(a(p, k) / b(p, k));
  return total / static_cast<double>(a.rows());
}

}  // namespace

TEST_CASE("decode with zero MLP") {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd theta = oracle::random_matrix(3, 3, rng);
  const Eigen::MatrixXd beta = oracle::random_matrix(3, 6, rng);

  DecoderParams lidar = DecoderParams::init(DecoderMode::lidar, 6, 3, 3, 2, 64, rng);
  lidar.visit("", [](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
  const Eigen::MatrixXd out = decode(lidar, CapsulePose{theta}, CapsuleDescriptor{beta}).points();
  REQUIRE(out.rows() == 6);
  for (Eigen::Index k = 0; k < 3; ++k) {
    CHECK(out.row(2 * k) == theta.row(k));
    CHECK(out.row(2 * k + 1) == theta.row(k));
  }

  DecoderParams hsi = DecoderParams::init(DecoderMode::hsi, 6, 3, 10, 4, 64, rng);
  hsi.visit("", [](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
  const Eigen::MatrixXd h = decode(hsi, CapsulePose{theta}, CapsuleDescriptor{beta}).points();
  CHECK(h.rows() == 12);
  CHECK(h.cols() == 10);
  CHECK(h.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(decode(lidar, CapsulePose{theta}, CapsuleDescriptor{beta.leftCols(5)}), std::invalid_argument);
}

TEST_CASE("loss_equ and loss_inv fixtures") {
  Eigen::MatrixXd t(1, 1), th(1, 1), te(1, 1);
  t << 1;
  th << 2;
  te << 5;
  CHECK(loss_equ(CapsulePose{th}, CapsulePose{te}, RotationMatrix::from_matrix(t)) == 9.0);

  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 1, 1, 2, 2;
  b << 0, 1, 2, 0;
  CHECK(loss_equ(CapsulePose{a}, CapsulePose{b}, RotationMatrix::identity(2)) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(loss_inv(CapsuleDescriptor{a}, CapsuleDescriptor{b}) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(loss_inv(CapsuleDescriptor{a}, CapsuleDescriptor{a}) == 0.0);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const RotationMatrix r = sample_rotation(16, rng);
    const Eigen::MatrixXd theta = oracle::random_matrix(15, 16, rng);
    CHECK(loss_equ(CapsulePose{theta}, CapsulePose{theta * r.matrix().transpose()}, r) < 1e-12);
  }
  CHECK_THROWS_AS(loss_inv(CapsuleDescriptor{a}, CapsuleDescriptor{a.topRows(1)}), std::invalid_argument);
}

TEST_CASE("loss_kl fixtures and Gibbs inequality") {
  Eigen::MatrixXd h(1, 2), l(1, 2);
  h << 0.5, 0.5;
  l << 0.25, 0.75;
  CHECK(std::abs(loss_kl(AttentionMap{h}, AttentionMap{l}) - 0.5 * std::log(4.0 / 3.0)) < 1e-7);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Eigen::MatrixXd a = oracle::random_stochastic(25, 3, rng);
    const Eigen::MatrixXd b = oracle::random_stochastic(25, 3, rng);
    const double kl = loss_kl(AttentionMap{a}, AttentionMap{b});
    CHECK(kl >= 0.0);
    CHECK(std::abs(kl - kl_brute(a, b)) < 1e-6);
    CHECK(loss_kl(AttentionMap{a}, AttentionMap{a}) < 1e-12);
  }
}

TEST_CASE("branch and total loss combinations") {
  CHECK(branch_loss(0, 0, 0) == 0.0);
  CHECK(branch_loss(1, 2, 3) == 6.0);
  CHECK(branch_loss(0.5, 0, 0.25) == 0.75);
  const LossWeights w;
  CHECK(w.alpha == 0.5);
  CHECK(w.beta == 0.5);
  CHECK(w.gamma == 0.1);
  CHECK(total_loss(0, 0, 0, w) == 0.0);
  CHECK(total_loss(1, 1, 1, w) == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(total_loss(2, 4, 10, w) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("decoder and loss gradients match central differences") {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd theta = oracle::random_matrix(3, 4, rng);
  const Eigen::MatrixXd beta = oracle::random_matrix(3, 6, rng);
  const Eigen::MatrixXd target = oracle::random_matrix(8, 4, rng);
  for (DecoderMode mode : {DecoderMode::lidar, DecoderMode::hsi}) {
    DecoderParams p = DecoderParams::init(mode, 6, 4, 4, 3, 16, rng);
    p.hidden_bias = oracle::random_matrix(1, 16, rng, 0.5);
    p.out_bias = oracle::random_matrix(1, 12, rng, 0.1);
    auto f = [&] { return chamfer(decode(p, CapsulePose{theta}, CapsuleDescriptor{beta}), PointSet(target)); };
    ad::Tape<double> tape;
    ad::Binder<double> bind(tape, true);
    ad::Var<double> loss = ad::chamfer(decode(bind, p, tape.constant(theta), tape.constant(beta)), tape.constant(target));
    CHECK(std::abs(loss.scalar() - f()) < 1e-12);
    tape.backward(loss);
    p.visit("", [&](const std::string& name, Eigen::MatrixXd& m) {
      CAPTURE(name);
      CHECK(oracle::max_rel_error(bind.gradient(m), oracle::central_difference(m, f)) < 1e-4);
    });
  }

  // KL and pose losses with respect to their inputs.
  Eigen::MatrixXd logits_h = oracle::random_matrix(8, 3, rng), logits_l = oracle::random_matrix(8, 3, rng);
  Eigen::MatrixXd rot_view = oracle::random_matrix(3, 4, rng);
  Eigen::MatrixXd theta_v = theta;
  const RotationMatrix r = sample_rotation(4, rng);
  auto softmax = [](const Eigen::MatrixXd& z) {
    Eigen::MatrixXd e = (z.colwise() - z.rowwise().maxCoeff()).array().exp();
    return Eigen::MatrixXd(e.array().colwise() / e.rowwise().sum().array());
  };
  auto f = [&] {
    return loss_kl(AttentionMap{softmax(logits_h)}, AttentionMap{softmax(logits_l)}) +
           loss_equ(CapsulePose{theta_v}, CapsulePose{rot_view}, r);
  };
  ad::Tape<double> tape;
  ad::Binder<double> bind(tape, true);
  ad::Var<double> kl = loss_kl(ad::softmax_rows(bind(logits_h)), ad::softmax_rows(bind(logits_l)));
  ad::Var<double> equ = loss_equ(bind(theta_v), bind(rot_view), r);
  ad::Var<double> total = ad::weighted_sum<double>({kl, equ}, {1.0, 1.0});
  CHECK(std::abs(total.scalar() - f()) < 1e-12);
  tape.backward(total);
  CHECK(oracle::max_rel_error(bind.gradient(logits_h), oracle::central_difference(logits_h, f)) < 1e-4);
  CHECK(oracle::max_rel_error(bind.gradient(logits_l), oracle::central_difference(logits_l, f)) < 1e-4);
  CHECK(oracle::max_rel_error(bind.gradient(theta_v), oracle::central_difference(theta_v, f)) < 1e-4);
  CHECK(oracle::max_rel_error(bind.gradient(rot_view), oracle::central_difference(rot_view, f)) < 1e-4);
}
