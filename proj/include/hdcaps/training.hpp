#pragma once

// Self-supervised two-branch training: both branches see the original patch
// and one randomly rotated copy, and the weighted loss is minimized with Adam.

#include "hdcaps/autodiff.hpp"
#include "hdcaps/canonical_encoder.hpp"
#include "hdcaps/capsule_block.hpp"
#include "hdcaps/dataio.hpp"
#include "hdcaps/decoder_losses.hpp"
#include "hdcaps/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hdcaps {

struct TrainConfig {
  double learning_rate = 0.001;
  int capsules = 15;   // K
  int channels = 50;   // C
  int patch_size = 5;  // b
  LossWeights weights{};
  int batch_size = 64;
  int epochs = 30;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int groups = 4;   // G
  int cap_dim = 4;  // d_cap
  int hidden = 64;  // H
  int blocks = 3;   // residual blocks per encoder
  int points_per_capsule = 2;  // m
  int decoder_hidden = 64;

  int hsi_dim() const { return groups * cap_dim; }  // D_H

  // Desk-scale preset: D_H = 16, K = 3, C = 6.
  static TrainConfig tiny();

  void validate() const;

  // Canonical key = value form, keys in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  // Sets one key from its textual value; throws std::invalid_argument on an
  // unknown key, malformed number or out-of-range value.
  void set(const std::string& key, const std::string& value);
};

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
};

struct ModelState {
  CapsuleBlockParams capsule_block;
  EncoderParams hsi_encoder;
  DecoderParams hsi_decoder;
  EncoderParams lidar_encoder;
  DecoderParams lidar_decoder;
  AdamState adam;
  std::int64_t step = 0;

  static ModelState init(const TrainConfig& config, int spectral_bands);

  // Every trainable matrix, in a fixed order, with a dotted name.
  template <typename F>
  void visit(F&& f) {
    capsule_block.visit("capsule_block.", f);
    hsi_encoder.visit("hsi_encoder.", f);
    hsi_decoder.visit("hsi_decoder.", f);
    lidar_encoder.visit("lidar_encoder.", f);
    lidar_decoder.visit("lidar_decoder.", f);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelState&>(*this).visit([&f](const std::string& name, Eigen::MatrixXd& m) {
      f(name, static_cast<const Eigen::MatrixXd&>(m));
    });
  }

  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;
  int spectral_bands() const { return capsule_block.input_dim(); }
};

// One rotation per branch for the second view.
struct ViewRotations {
  RotationMatrix hsi;
  RotationMatrix lidar;
};

ViewRotations sample_view_rotations(const TrainConfig& config, std::mt19937_64& rng);

template <typename S>
struct ForwardVars {
  ad::Var<S> hsi_equ, hsi_inv, hsi_chamfer;
  ad::Var<S> lidar_equ, lidar_inv, lidar_chamfer;
  ad::Var<S> kl;
  ad::Var<S> total;
  EncodedVars<S> hsi;
  EncodedVars<S> lidar;
};

// Records both branches on the original and rotated inputs. Throws
// DivergenceError naming the first non-finite intermediate.
template <typename S>
ForwardVars<S> forward_pair(ad::Binder<S>& bind, const ModelState& state, const TrainConfig& config,
                            const PatchPair& patch, const ViewRotations& rotations);

LossReport report_of(const ForwardVars<double>& vars);

LossReport forward_pair(const ModelState& state, const TrainConfig& config, const PatchPair& patch,
                        const ViewRotations& rotations);

// Gradient of the total loss for one patch, one matrix per parameter in visit order.
std::vector<Eigen::MatrixXd> patch_gradient(const ModelState& state, const TrainConfig& config,
                                            const PatchPair& patch, const ViewRotations& rotations,
                                            LossReport* report = nullptr);

struct StepResult {
  LossReport mean;  // batch-averaged losses before the update
};

// Averages the batch gradient, applies one Adam update and bumps the step counter.
StepResult train_step(ModelState& state, const TrainConfig& config, std::span<const PatchPair> batch,
                      std::span<const ViewRotations> rotations);
StepResult train_step(ModelState& state, const TrainConfig& config, std::span<const PatchPair> batch,
                      std::mt19937_64& rng);

// Adam on a flat list of (parameter, gradient) pairs; used by train_step.
void adam_update(std::vector<Eigen::MatrixXd*> params, const std::vector<Eigen::MatrixXd>& grads, AdamState& adam,
                 std::int64_t step, const TrainConfig& config);

struct GradCheckOptions {
  int patch_size = 3;
  int spectral_bands = 4;
  double step = 1e-5;
  bool zero_weights = false;  // zero every non-bias matrix
  std::optional<std::size_t> corrupt_entry;  // flat analytic index to bump by +1
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::map<std::string, double> group_max;  // keyed by parameter group
  std::size_t entries = 0;
  std::size_t refined = 0;  // entries whose finite-difference step crossed a kink
};

// Compares analytic gradients of the total loss against central finite
// differences evaluated in extended precision. Error per entry is
// |g_a − g_n| / max(1e-8, |g_a| + |g_n|).
GradCheckReport grad_check(const TrainConfig& config, std::uint64_t seed, const GradCheckOptions& options = {});

struct EpochLog {
  int epoch = 0;
  LossReport mean;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochLog> log;
};

// Deterministic given (config, patches). `on_epoch` sees each log row as it
// completes, so a caller keeps the partial log if a later epoch diverges.
TrainResult train(const TrainConfig& config, std::span<const PatchPair> patches,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

std::string loss_log_header();
std::string loss_log_row(const EpochLog& row);

// Checkpoint directory: config.txt, manifest.txt and one DTEN file per array.
void save_checkpoint(const std::filesystem::path& dir, const ModelState& state, const TrainConfig& config);
std::pair<ModelState, TrainConfig> load_checkpoint(const std::filesystem::path& dir);

std::string format_config(const TrainConfig& config);

// Parses '#'-commented `key = value` lines onto `config`. Keys named in
// `extra_keys` are not TrainConfig fields; their values and line numbers are
// returned in `extras`. Throws ParseError with the offending line number.
void parse_config_text(const std::string& text, TrainConfig& config, const std::vector<std::string>& extra_keys = {},
                       std::map<std::string, std::pair<std::string, int>>* extras = nullptr);

}  // namespace hdcaps
