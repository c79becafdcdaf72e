#pragma once

// Permutation-equivariant point encoder: point set → attention map A (X×K)
// and feature map F (X×C), plus attention-weighted pooling into capsule
// poses θ (K×D) and descriptors β (K×C).

#include "hdcaps/autodiff.hpp"
#include "hdcaps/geometry.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace hdcaps {

inline constexpr double kAcnEps = 1e-5;
inline constexpr double kPoolEps = 1e-8;

struct EncoderBlock {
  Eigen::MatrixXd weight;       // H × H
  Eigen::MatrixXd bias;         // 1 × H
  Eigen::MatrixXd logit_weight; // H × 1
  Eigen::MatrixXd logit_bias;   // 1 × 1
};

struct EncoderParams {
  Eigen::MatrixXd lift_weight;  // D × H
  Eigen::MatrixXd lift_bias;    // 1 × H
  std::vector<EncoderBlock> blocks;
  Eigen::MatrixXd attention_weight;  // H × K
  Eigen::MatrixXd attention_bias;    // 1 × K
  Eigen::MatrixXd feature_weight;    // H × C
  Eigen::MatrixXd feature_bias;      // 1 × C

  int input_dim() const { return static_cast<int>(lift_weight.rows()); }
  int hidden() const { return static_cast<int>(lift_weight.cols()); }
  int capsules() const { return static_cast<int>(attention_weight.cols()); }
  int channels() const { return static_cast<int>(feature_weight.cols()); }

  static EncoderParams init(int input_dim, int hidden, int n_blocks, int capsules, int channels, std::mt19937_64& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "lift_weight", lift_weight);
    f(prefix + "lift_bias", lift_bias);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string b = prefix + "block" + std::to_string(i) + ".";
      f(b + "weight", blocks[i].weight);
      f(b + "bias", blocks[i].bias);
      f(b + "logit_weight", blocks[i].logit_weight);
      f(b + "logit_bias", blocks[i].logit_bias);
    }
    f(prefix + "attention_weight", attention_weight);
    f(prefix + "attention_bias", attention_bias);
    f(prefix + "feature_weight", feature_weight);
    f(prefix + "feature_bias", feature_bias);
  }
};

// Rows are on the probability simplex.
struct AttentionMap {
  Eigen::MatrixXd values;  // X × K
};

struct FeatureMap {
  Eigen::MatrixXd values;  // X × C
};

struct CapsulePose {
  Eigen::MatrixXd values;  // K × D, row k = θ_k
};

struct CapsuleDescriptor {
  Eigen::MatrixXd values;  // K × C, row k = β_k
};

// Per-channel weighted standardization with weighted mean and variance.
Eigen::MatrixXd acn_normalize(const Eigen::MatrixXd& features, const Eigen::VectorXd& weights);

std::pair<AttentionMap, FeatureMap> encode(const EncoderParams& params, const PointSet& points);

std::pair<CapsulePose, CapsuleDescriptor> aggregate(const AttentionMap& attention, const FeatureMap& features,
                                                    const PointSet& points);

template <typename S>
struct EncodedVars {
  ad::Var<S> attention;
  ad::Var<S> features;
};

template <typename S>
struct CapsuleVars {
  ad::Var<S> poses;
  ad::Var<S> descriptors;
};

template <typename S>
EncodedVars<S> encode(ad::Binder<S>& bind, const EncoderParams& params, ad::Var<S> points) {
  if (points.cols() != params.input_dim()) {
    throw std::invalid_argument("encode: points have dimension " + std::to_string(points.cols()) +
                                ", encoder expects " + std::to_string(params.input_dim()));
  }
  ad::Var<S> h = ad::affine(points, bind(params.lift_weight), bind(params.lift_bias));
  for (const auto& block : params.blocks) {
    ad::Var<S> u = ad::affine(h, bind(block.weight), bind(block.bias));
    ad::Var<S> logits = ad::affine(h, bind(block.logit_weight), bind(block.logit_bias));
    ad::Var<S> context = ad::softmax_cols(logits);
    h = ad::add(h, ad::relu(ad::acn(u, context, kAcnEps)));
  }
  ad::Var<S> attention = ad::softmax_rows(ad::affine(h, bind(params.attention_weight), bind(params.attention_bias)));
  ad::Var<S> features = ad::affine(h, bind(params.feature_weight), bind(params.feature_bias));
  return {attention, features};
}

template <typename S>
CapsuleVars<S> aggregate(ad::Var<S> attention, ad::Var<S> features, ad::Var<S> points) {
  if (attention.rows() != features.rows() || attention.rows() != points.rows()) {
    throw std::invalid_argument("aggregate: attention, features and points must share the point count");
  }
  return {ad::weighted_mean(attention, points, kPoolEps), ad::weighted_mean(attention, features, kPoolEps)};
}

}  // namespace hdcaps
