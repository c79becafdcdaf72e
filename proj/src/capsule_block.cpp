#include "hdcaps/capsule_block.hpp"

#include <cmath>
#include <stdexcept>

namespace hdcaps {

CapsuleBlockParams CapsuleBlockParams::init(int spectral_bands, int groups, int cap_dim, std::mt19937_64& rng) {
  if (spectral_bands < 1 || groups < 1 || cap_dim < 2) {
    throw std::invalid_argument("CapsuleBlockParams: need bands >= 1, groups >= 1, cap_dim >= 2");
  }
  CapsuleBlockParams p;
  p.groups = groups;
  p.cap_dim = cap_dim;
  const int out = groups * cap_dim;
  const double limit = std::sqrt(6.0 / (spectral_bands + out));
  std::uniform_real_distribution<double> uni(-limit, limit);
  p.weight.resize(spectral_bands, out);
  for (Eigen::Index c = 0; c < p.weight.cols(); ++c)
    for (Eigen::Index r = 0; r < p.weight.rows(); ++r) p.weight(r, c) = uni(rng);
  p.bias = Eigen::MatrixXd::Zero(1, out);
  return p;
}

void CapsuleBlockParams::validate() const {
  if (groups < 1 || cap_dim < 2) throw std::invalid_argument("CapsuleBlockParams: groups >= 1 and cap_dim >= 2 required");
  if (weight.cols() != output_dim() || bias.rows() != 1 || bias.cols() != output_dim()) {
    throw std::invalid_argument("CapsuleBlockParams: weight/bias shapes disagree with groups * cap_dim");
  }
  if (!weight.allFinite() || !bias.allFinite()) throw std::invalid_argument("CapsuleBlockParams: non-finite weights");
}

Eigen::VectorXd squash(const Eigen::VectorXd& v) {
  const double n2 = v.squaredNorm();
  const double n = std::sqrt(n2);
  return (n2 / (1.0 + n2)) * v / (n + kSquashEps);
}

PointSet extract_preliminary(const CapsuleBlockParams& params, const Eigen::MatrixXd& patch_pixels) {
  params.validate();
  if (!patch_pixels.allFinite()) throw std::invalid_argument("extract_preliminary: non-finite patch");
  ad::Tape<double> tape;
  ad::Binder<double> bind(tape, false);
  return PointSet(extract_preliminary(bind, params, tape.constant(patch_pixels)).value());
}

}  // namespace hdcaps
