#pragma once

// Per-capsule point decoders and the training objective:
//   equivariance  (1/K) Σ_k ‖T θ_k − θ_k^e‖²
//   invariance    (1/K) Σ_k ‖β_k − β_k^e‖²
//   branch        equ + inv + chamfer
//   alignment     mean_p KL(A^H_p ‖ A^L_p)
//   total         α·L_HSI + β·L_LiDAR + γ·L_KL

#include "hdcaps/autodiff.hpp"
#include "hdcaps/canonical_encoder.hpp"
#include "hdcaps/geometry.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>

namespace hdcaps {

inline constexpr double kKlFloor = 1e-8;

enum class DecoderMode {
  // MLP(β_k) emits offsets in pose space, translated by +θ_k.
  lidar,
  // MLP([β_k, θ_k]) emits points in spectral space, no translation.
  hsi,
};

struct DecoderParams {
  DecoderMode mode = DecoderMode::lidar;
  int points_per_capsule = 2;
  int out_dim = 3;
  int pose_dim = 3;
  Eigen::MatrixXd hidden_weight;  // in × hidden
  Eigen::MatrixXd hidden_bias;    // 1 × hidden
  Eigen::MatrixXd out_weight;     // hidden × (m · out_dim)
  Eigen::MatrixXd out_bias;       // 1 × (m · out_dim)

  int input_dim() const { return static_cast<int>(hidden_weight.rows()); }

  static DecoderParams init(DecoderMode mode, int descriptor_dim, int pose_dim, int out_dim, int points_per_capsule,
                            int hidden, std::mt19937_64& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "hidden_weight", hidden_weight);
    f(prefix + "hidden_bias", hidden_bias);
    f(prefix + "out_weight", out_weight);
    f(prefix + "out_bias", out_bias);
  }
};

struct LossWeights {
  double alpha = 0.5;
  double beta = 0.5;
  double gamma = 0.1;
};

struct BranchLosses {
  double equ = 0.0;
  double inv = 0.0;
  double chamfer = 0.0;
};

struct LossReport {
  BranchLosses hsi;
  BranchLosses lidar;
  double kl = 0.0;
  double total = 0.0;
};

PointSet decode(const DecoderParams& params, const CapsulePose& poses, const CapsuleDescriptor& descriptors);

double loss_equ(const CapsulePose& poses, const CapsulePose& rotated_view_poses, const RotationMatrix& rotation);
double loss_inv(const CapsuleDescriptor& descriptors, const CapsuleDescriptor& rotated_view_descriptors);
double loss_kl(const AttentionMap& hsi, const AttentionMap& lidar);
double branch_loss(double equ, double inv, double chamfer);
double total_loss(double hsi, double lidar, double kl, const LossWeights& w);

template <typename S>
ad::Var<S> decode(ad::Binder<S>& bind, const DecoderParams& params, ad::Var<S> poses, ad::Var<S> descriptors) {
  if (poses.rows() != descriptors.rows() || poses.cols() != params.pose_dim) {
    throw std::invalid_argument("decode: pose/descriptor shapes disagree with decoder");
  }
  ad::Var<S> input = params.mode == DecoderMode::hsi ? ad::concat_cols(descriptors, poses) : descriptors;
  if (input.cols() != params.input_dim()) {
    throw std::invalid_argument("decode: decoder expects input width " + std::to_string(params.input_dim()) + ", got " +
                                std::to_string(input.cols()));
  }
  ad::Var<S> hidden = ad::relu(ad::affine(input, bind(params.hidden_weight), bind(params.hidden_bias)));
  ad::Var<S> flat = ad::affine(hidden, bind(params.out_weight), bind(params.out_bias));
  ad::Var<S> points = ad::split_rows(flat, params.points_per_capsule);
  if (params.mode == DecoderMode::lidar) points = ad::add(points, ad::repeat_rows(poses, params.points_per_capsule));
  return points;
}

// θ·Tᵀ compared row-wise with θ^e.
template <typename S>
ad::Var<S> loss_equ(ad::Var<S> poses, ad::Var<S> rotated_view_poses, const RotationMatrix& rotation) {
  if (poses.cols() != rotation.dim()) throw std::invalid_argument("loss_equ: rotation and pose dimensions differ");
  ad::Var<S> rot_t = poses.tape->constant(rotation.matrix().transpose().template cast<S>());
  return ad::mean_row_sq_dist(ad::matmul(poses, rot_t), rotated_view_poses);
}

template <typename S>
ad::Var<S> loss_inv(ad::Var<S> descriptors, ad::Var<S> rotated_view_descriptors) {
  return ad::mean_row_sq_dist(descriptors, rotated_view_descriptors);
}

template <typename S>
ad::Var<S> loss_kl(ad::Var<S> hsi_attention, ad::Var<S> lidar_attention) {
  return ad::kl_rows(hsi_attention, lidar_attention, kKlFloor);
}

}  // namespace hdcaps
