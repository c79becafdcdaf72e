#pragma once

// Per-pixel primary-capsule layer that turns an HSI patch into a point set
// in D_H = groups * cap_dim dimensions.

#include "hdcaps/autodiff.hpp"
#include "hdcaps/geometry.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>

namespace hdcaps {

inline constexpr double kSquashEps = 1e-8;

struct CapsuleBlockParams {
  Eigen::MatrixXd weight;  // C_spec × D_H
  Eigen::MatrixXd bias;    // 1 × D_H
  int groups = 4;
  int cap_dim = 4;

  int input_dim() const { return static_cast<int>(weight.rows()); }
  int output_dim() const { return groups * cap_dim; }

  // Zero bias, weights uniform in ±sqrt(6 / (C_spec + D_H)).
  static CapsuleBlockParams init(int spectral_bands, int groups, int cap_dim, std::mt19937_64& rng);

  void validate() const;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
};

// (‖v‖² / (1 + ‖v‖²)) · v / (‖v‖ + 1e-8)
Eigen::VectorXd squash(const Eigen::VectorXd& v);

// b² × C_spec spectra, pixels in row-major order, to a b²-point set.
PointSet extract_preliminary(const CapsuleBlockParams& params, const Eigen::MatrixXd& patch_pixels);

template <typename S>
ad::Var<S> extract_preliminary(ad::Binder<S>& bind, const CapsuleBlockParams& params, ad::Var<S> patch_pixels) {
  if (patch_pixels.cols() != params.input_dim()) {
    throw std::invalid_argument("extract_preliminary: patch has " + std::to_string(patch_pixels.cols()) +
                                " bands, block expects " + std::to_string(params.input_dim()));
  }
  ad::Var<S> lin = ad::affine(patch_pixels, bind(params.weight), bind(params.bias));
  return ad::squash_groups(lin, params.cap_dim, kSquashEps);
}

}  // namespace hdcaps
