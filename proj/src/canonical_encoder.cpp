#include "hdcaps/canonical_encoder.hpp"

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

}  // namespace

EncoderParams EncoderParams::init(int input_dim, int hidden, int n_blocks, int capsules, int channels,
                                  std::mt19937_64& rng) {
  if (input_dim < 1 || hidden < 1 || n_blocks < 0 || capsules < 1 || channels < 1) {
    throw std::invalid_argument("EncoderParams: dimensions must be positive");
  }
  EncoderParams p;
  p.lift_weight = uniform_fan(input_dim, hidden, rng);
  p.lift_bias = Eigen::MatrixXd::Zero(1, hidden);
  for (int i = 0; i < n_blocks; ++i) {
    EncoderBlock b;
    b.weight = uniform_fan(hidden, hidden, rng);
    b.bias = Eigen::MatrixXd::Zero(1, hidden);
    b.logit_weight = uniform_fan(hidden, 1, rng);
    b.logit_bias = Eigen::MatrixXd::Zero(1, 1);
    p.blocks.push_back(std::move(b));
  }
  p.attention_weight = uniform_fan(hidden, capsules, rng);
  p.attention_bias = Eigen::MatrixXd::Zero(1, capsules);
  p.feature_weight = uniform_fan(hidden, channels, rng);
  p.feature_bias = Eigen::MatrixXd::Zero(1, channels);
  return p;
}

Eigen::MatrixXd acn_normalize(const Eigen::MatrixXd& features, const Eigen::VectorXd& weights) {
  if (weights.size() != features.rows()) throw std::invalid_argument("acn_normalize: one weight per point required");
  ad::Tape<double> tape;
  return ad::acn(tape.constant(features), tape.constant(weights), kAcnEps).value();
}

std::pair<AttentionMap, FeatureMap> encode(const EncoderParams& params, const PointSet& points) {
  ad::Tape<double> tape;
  ad::Binder<double> bind(tape, false);
  auto out = encode(bind, params, tape.constant(points.points()));
  return {AttentionMap{out.attention.value()}, FeatureMap{out.features.value()}};
}

std::pair<CapsulePose, CapsuleDescriptor> aggregate(const AttentionMap& attention, const FeatureMap& features,
                                                    const PointSet& points) {
  ad::Tape<double> tape;
  auto out = aggregate(tape.constant(attention.values), tape.constant(features.values), tape.constant(points.points()));
  return {CapsulePose{out.poses.value()}, CapsuleDescriptor{out.descriptors.value()}};
}

}  // namespace hdcaps
