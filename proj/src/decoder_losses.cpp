#include "hdcaps/decoder_losses.hpp"

#include <cmath>
#include <stdexcept>

namespace hdcaps {
namespace {

Eigen::MatrixXd uniform_fan(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> uni(-limit, limit);
  Eigen::MatrixXd m(fan_in, fan_out);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = uni(rng);
  return m;
}

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() == 0) throw std::invalid_argument(what);
}

}  // namespace

DecoderParams DecoderParams::init(DecoderMode mode, int descriptor_dim, int pose_dim, int out_dim,
                                  int points_per_capsule, int hidden, std::mt19937_64& rng) {
  if (descriptor_dim < 1 || pose_dim < 1 || out_dim < 1 || points_per_capsule < 1 || hidden < 1) {
    throw std::invalid_argument("DecoderParams: dimensions must be positive");
  }
  if (mode == DecoderMode::lidar && out_dim != pose_dim) {
    throw std::invalid_argument("DecoderParams: lidar mode emits points in pose space");
  }
  DecoderParams p;
  p.mode = mode;
  p.points_per_capsule = points_per_capsule;
  p.out_dim = out_dim;
  p.pose_dim = pose_dim;
  const int in = mode == DecoderMode::hsi ? descriptor_dim + pose_dim : descriptor_dim;
  p.hidden_weight = uniform_fan(in, hidden, rng);
  p.hidden_bias = Eigen::MatrixXd::Zero(1, hidden);
  p.out_weight = uniform_fan(hidden, points_per_capsule * out_dim, rng);
  p.out_bias = Eigen::MatrixXd::Zero(1, points_per_capsule * out_dim);
  return p;
}

PointSet decode(const DecoderParams& params, const CapsulePose& poses, const CapsuleDescriptor& descriptors) {
  ad::Tape<double> tape;
  ad::Binder<double> bind(tape, false);
  return PointSet(decode(bind, params, tape.constant(poses.values), tape.constant(descriptors.values)).value());
}

double loss_equ(const CapsulePose& poses, const CapsulePose& rotated_view_poses, const RotationMatrix& rotation) {
  require_same_shape(poses.values, rotated_view_poses.values, "loss_equ: pose shapes differ");
  ad::Tape<double> tape;
  return loss_equ(tape.constant(poses.values), tape.constant(rotated_view_poses.values), rotation).scalar();
}

double loss_inv(const CapsuleDescriptor& descriptors, const CapsuleDescriptor& rotated_view_descriptors) {
  require_same_shape(descriptors.values, rotated_view_descriptors.values, "loss_inv: descriptor shapes differ");
  ad::Tape<double> tape;
  return loss_inv(tape.constant(descriptors.values), tape.constant(rotated_view_descriptors.values)).scalar();
}

double loss_kl(const AttentionMap& hsi, const AttentionMap& lidar) {
  require_same_shape(hsi.values, lidar.values, "loss_kl: attention shapes differ");
  ad::Tape<double> tape;
  return loss_kl(tape.constant(hsi.values), tape.constant(lidar.values)).scalar();
}

double branch_loss(double equ, double inv, double chamfer) { return equ + inv + chamfer; }

double total_loss(double hsi, double lidar, double kl, const LossWeights& w) {
  return w.alpha * hsi + w.beta * lidar + w.gamma * kl;
}

}  // namespace hdcaps
