#include "hdcaps/training.hpp"

#include "hdcaps/errors.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace hdcaps {
namespace {

// ---------------------------------------------------------------- config text

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  const char* begin = text.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
    throw std::invalid_argument("malformed number for " + key + ": '" + text + "'");
  }
  return v;
}

long long parse_int(const std::string& key, const std::string& text) {
  long long v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw std::invalid_argument("malformed integer for " + key + ": '" + text + "'");
  }
  return v;
}

int parse_positive(const std::string& key, const std::string& text) {
  const long long v = parse_int(key, text);
  if (v < 1 || v > 1'000'000) throw std::invalid_argument(key + " must be a positive integer, got " + text);
  return static_cast<int>(v);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// ---------------------------------------------------------------- numerics

void check_finite(const Eigen::MatrixXd& m, const std::string& name) {
  if (!m.allFinite()) throw DivergenceError(name);
}

template <typename S>
void check_finite(const ad::Var<S>& v, const char* name) {
  if (!v.value().allFinite()) throw DivergenceError(name);
}

// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads. Results
// must be written to per-index slots so the outcome is order independent.
template <typename F>
void parallel_for(std::size_t n, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<Eigen::MatrixXd*> parameter_pointers(ModelState& state) {
  std::vector<Eigen::MatrixXd*> out;
  state.visit([&out](const std::string&, Eigen::MatrixXd& m) { out.push_back(&m); });
  return out;
}

LossReport accumulate(const std::vector<LossReport>& reports) {
  LossReport mean;
  for (const auto& r : reports) {
    mean.hsi.equ += r.hsi.equ;
    mean.hsi.inv += r.hsi.inv;
    mean.hsi.chamfer += r.hsi.chamfer;
    mean.lidar.equ += r.lidar.equ;
    mean.lidar.inv += r.lidar.inv;
    mean.lidar.chamfer += r.lidar.chamfer;
    mean.kl += r.kl;
    mean.total += r.total;
  }
  const double n = static_cast<double>(reports.size());
  mean.hsi.equ /= n;
  mean.hsi.inv /= n;
  mean.hsi.chamfer /= n;
  mean.lidar.equ /= n;
  mean.lidar.inv /= n;
  mean.lidar.chamfer /= n;
  mean.kl /= n;
  mean.total /= n;
  return mean;
}

StepResult train_step_impl(ModelState& state, const TrainConfig& config, const std::vector<const PatchPair*>& batch,
                           std::span<const ViewRotations> rotations) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (rotations.size() != batch.size()) throw std::invalid_argument("train_step: one rotation pair per patch required");
  std::vector<std::vector<Eigen::MatrixXd>> grads(batch.size());
  std::vector<LossReport> reports(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    grads[i] = patch_gradient(state, config, *batch[i], rotations[i], &reports[i]);
  });

  const auto names = state.parameter_names();
  std::vector<Eigen::MatrixXd> mean = std::move(grads[0]);
  for (std::size_t i = 1; i < batch.size(); ++i)
    for (std::size_t p = 0; p < mean.size(); ++p) mean[p] += grads[i][p];
  for (std::size_t p = 0; p < mean.size(); ++p) {
    mean[p] /= static_cast<double>(batch.size());
    check_finite(mean[p], "gradient of " + names[p]);
  }
  ++state.step;
  adam_update(parameter_pointers(state), mean, state.adam, state.step, config);
  state.visit([](const std::string& name, const Eigen::MatrixXd& m) { check_finite(m, name); });
  return StepResult{accumulate(reports)};
}

}  // namespace

// ---------------------------------------------------------------- TrainConfig

TrainConfig TrainConfig::tiny() {
  TrainConfig c;
  c.capsules = 3;
  c.channels = 6;
  c.hidden = 16;
  c.blocks = 2;
  c.points_per_capsule = 9;
  c.epochs = 200;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid config: " + what); };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("lr must be >= 0");
  if (capsules < 1 || channels < 1 || batch_size < 1) fail("K, C and batch must be >= 1");
  if (patch_size < 1 || patch_size % 2 == 0) fail("b must be odd and >= 1");
  if (epochs < 0) fail("epochs must be >= 0");
  if (weights.alpha < 0.0 || weights.beta < 0.0 || weights.gamma < 0.0) fail("loss weights must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must be in [0,1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (groups < 1 || cap_dim < 2) fail("G >= 1 and d_cap >= 2 required");
  if (hidden < 1 || blocks < 0 || points_per_capsule < 1 || decoder_hidden < 1) fail("H, m, decoder_hidden >= 1");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_key_values() const {
  return {
      {"lr", format_double(learning_rate)},
      {"K", std::to_string(capsules)},
      {"C", std::to_string(channels)},
      {"b", std::to_string(patch_size)},
      {"alpha", format_double(weights.alpha)},
      {"beta", format_double(weights.beta)},
      {"gamma", format_double(weights.gamma)},
      {"batch", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"seed", std::to_string(seed)},
      {"adam_beta1", format_double(adam_beta1)},
      {"adam_beta2", format_double(adam_beta2)},
      {"adam_eps", format_double(adam_eps)},
      {"G", std::to_string(groups)},
      {"d_cap", std::to_string(cap_dim)},
      {"H", std::to_string(hidden)},
      {"n_blocks", std::to_string(blocks)},
      {"m", std::to_string(points_per_capsule)},
      {"decoder_hidden", std::to_string(decoder_hidden)},
  };
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto nonneg = [&](double v) {
    if (v < 0.0) throw std::invalid_argument(key + " must be >= 0, got " + value);
    return v;
  };
  if (key == "lr") {
    learning_rate = parse_double(key, value);
    if (!(learning_rate > 0.0)) throw std::invalid_argument("lr must be > 0, got " + value);
  } else if (key == "K") {
    capsules = parse_positive(key, value);
  } else if (key == "C") {
    channels = parse_positive(key, value);
  } else if (key == "b") {
    patch_size = parse_positive(key, value);
    if (patch_size % 2 == 0) throw std::invalid_argument("b must be odd, got " + value);
  } else if (key == "alpha") {
    weights.alpha = nonneg(parse_double(key, value));
  } else if (key == "beta") {
    weights.beta = nonneg(parse_double(key, value));
  } else if (key == "gamma") {
    weights.gamma = nonneg(parse_double(key, value));
  } else if (key == "batch") {
    batch_size = parse_positive(key, value);
  } else if (key == "epochs") {
    const long long v = parse_int(key, value);
    if (v < 0 || v > 1'000'000) throw std::invalid_argument("epochs must be >= 0, got " + value);
    epochs = static_cast<int>(v);
  } else if (key == "seed") {
    const long long v = parse_int(key, value);
    if (v < 0) throw std::invalid_argument("seed must be >= 0, got " + value);
    seed = static_cast<std::uint64_t>(v);
  } else if (key == "adam_beta1" || key == "adam_beta2") {
    const double v = parse_double(key, value);
    if (!(v >= 0.0 && v < 1.0)) throw std::invalid_argument(key + " must be in [0,1), got " + value);
    (key == "adam_beta1" ? adam_beta1 : adam_beta2) = v;
  } else if (key == "adam_eps") {
    adam_eps = parse_double(key, value);
    if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be > 0, got " + value);
  } else if (key == "G") {
    groups = parse_positive(key, value);
  } else if (key == "d_cap") {
    cap_dim = parse_positive(key, value);
    if (cap_dim < 2) throw std::invalid_argument("d_cap must be >= 2, got " + value);
  } else if (key == "H") {
    hidden = parse_positive(key, value);
  } else if (key == "n_blocks") {
    const long long v = parse_int(key, value);
    if (v < 0 || v > 64) throw std::invalid_argument("n_blocks must be in [0,64], got " + value);
    blocks = static_cast<int>(v);
  } else if (key == "m") {
    points_per_capsule = parse_positive(key, value);
  } else if (key == "decoder_hidden") {
    decoder_hidden = parse_positive(key, value);
  } else {
    throw std::invalid_argument("unknown key '" + key + "'");
  }
}

std::string format_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [k, v] : config.to_key_values()) out += k + " = " + v + "\n";
  return out;
}

void parse_config_text(const std::string& text, TrainConfig& config, const std::vector<std::string>& extra_keys,
                       std::map<std::string, std::pair<std::string, int>>* extras) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", number);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("missing key", number);
    if (value.empty()) throw ParseError("missing value for '" + key + "'", number);
    if (std::find(extra_keys.begin(), extra_keys.end(), key) != extra_keys.end()) {
      if (extras) (*extras)[key] = {value, number};
      continue;
    }
    try {
      config.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), number);
    }
  }
}

// ---------------------------------------------------------------- ModelState

ModelState ModelState::init(const TrainConfig& config, int spectral_bands) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  ModelState s;
  s.capsule_block = CapsuleBlockParams::init(spectral_bands, config.groups, config.cap_dim, rng);
  s.hsi_encoder = EncoderParams::init(config.hsi_dim(), config.hidden, config.blocks, config.capsules, config.channels, rng);
  s.hsi_decoder = DecoderParams::init(DecoderMode::hsi, config.channels, config.hsi_dim(), spectral_bands,
                                      config.points_per_capsule, config.decoder_hidden, rng);
  s.lidar_encoder = EncoderParams::init(3, config.hidden, config.blocks, config.capsules, config.channels, rng);
  s.lidar_decoder = DecoderParams::init(DecoderMode::lidar, config.channels, 3, 3, config.points_per_capsule,
                                        config.decoder_hidden, rng);
  s.visit([&s](const std::string&, const Eigen::MatrixXd& m) {
    s.adam.m.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
    s.adam.v.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  });
  return s;
}

std::vector<std::string> ModelState::parameter_names() const {
  std::vector<std::string> names;
  visit([&names](const std::string& name, const Eigen::MatrixXd&) { names.push_back(name); });
  return names;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

ViewRotations sample_view_rotations(const TrainConfig& config, std::mt19937_64& rng) {
  RotationMatrix h = sample_rotation(config.hsi_dim(), rng);
  RotationMatrix l = sample_rotation(3, rng);
  return ViewRotations{std::move(h), std::move(l)};
}

// ---------------------------------------------------------------- forward

template <typename S>
ForwardVars<S> forward_pair(ad::Binder<S>& bind, const ModelState& state, const TrainConfig& config,
                            const PatchPair& patch, const ViewRotations& rotations) {
  ad::Tape<S>& tape = bind.tape();
  if (patch.hsi.rows() != patch.lidar.count()) throw std::invalid_argument("forward_pair: patches not co-registered");
  if (rotations.hsi.dim() != config.hsi_dim() || rotations.lidar.dim() != 3) {
    throw std::invalid_argument("forward_pair: rotation dimensions do not match the branches");
  }

  // HSI branch.
  ad::Var<S> spectra = tape.constant(patch.hsi.template cast<S>());
  ad::Var<S> p_h = extract_preliminary(bind, state.capsule_block, spectra);
  check_finite(p_h, "hsi preliminary features");
  auto enc_h = encode(bind, state.hsi_encoder, p_h);
  check_finite(enc_h.attention, "hsi attention map");
  check_finite(enc_h.features, "hsi feature map");
  auto caps_h = aggregate(enc_h.attention, enc_h.features, p_h);
  ad::Var<S> p_h_rot = ad::matmul(p_h, tape.constant(rotations.hsi.matrix().transpose().template cast<S>()));
  auto enc_h_rot = encode(bind, state.hsi_encoder, p_h_rot);
  auto caps_h_rot = aggregate(enc_h_rot.attention, enc_h_rot.features, p_h_rot);
  check_finite(caps_h_rot.poses, "hsi rotated-view poses");
  ad::Var<S> recon_h = decode(bind, state.hsi_decoder, caps_h.poses, caps_h.descriptors);
  check_finite(recon_h, "hsi reconstruction");

  // LiDAR branch.
  ad::Var<S> p_l = tape.constant(patch.lidar.points().template cast<S>());
  auto enc_l = encode(bind, state.lidar_encoder, p_l);
  check_finite(enc_l.attention, "lidar attention map");
  check_finite(enc_l.features, "lidar feature map");
  auto caps_l = aggregate(enc_l.attention, enc_l.features, p_l);
  ad::Var<S> p_l_rot = ad::matmul(p_l, tape.constant(rotations.lidar.matrix().transpose().template cast<S>()));
  auto enc_l_rot = encode(bind, state.lidar_encoder, p_l_rot);
  auto caps_l_rot = aggregate(enc_l_rot.attention, enc_l_rot.features, p_l_rot);
  check_finite(caps_l_rot.poses, "lidar rotated-view poses");
  ad::Var<S> recon_l = decode(bind, state.lidar_decoder, caps_l.poses, caps_l.descriptors);
  check_finite(recon_l, "lidar reconstruction");

  ForwardVars<S> out{
      loss_equ(caps_h.poses, caps_h_rot.poses, rotations.hsi),
      loss_inv(caps_h.descriptors, caps_h_rot.descriptors),
      ad::chamfer(recon_h, spectra),
      loss_equ(caps_l.poses, caps_l_rot.poses, rotations.lidar),
      loss_inv(caps_l.descriptors, caps_l_rot.descriptors),
      ad::chamfer(recon_l, p_l),
      loss_kl(enc_h.attention, enc_l.attention),
      {},
      enc_h,
      enc_l,
  };
  ad::Var<S> l_hsi = ad::weighted_sum<S>({out.hsi_equ, out.hsi_inv, out.hsi_chamfer}, {1.0, 1.0, 1.0});
  ad::Var<S> l_lidar = ad::weighted_sum<S>({out.lidar_equ, out.lidar_inv, out.lidar_chamfer}, {1.0, 1.0, 1.0});
  const auto& w = config.weights;
  out.total = ad::weighted_sum<S>({l_hsi, l_lidar, out.kl}, {w.alpha, w.beta, w.gamma});
  check_finite(out.total, "total loss");
  return out;
}

template ForwardVars<double> forward_pair<double>(ad::Binder<double>&, const ModelState&, const TrainConfig&,
                                                  const PatchPair&, const ViewRotations&);
template ForwardVars<long double> forward_pair<long double>(ad::Binder<long double>&, const ModelState&,
                                                            const TrainConfig&, const PatchPair&,
                                                            const ViewRotations&);

LossReport report_of(const ForwardVars<double>& v) {
  LossReport r;
  r.hsi = {v.hsi_equ.scalar(), v.hsi_inv.scalar(), v.hsi_chamfer.scalar()};
  r.lidar = {v.lidar_equ.scalar(), v.lidar_inv.scalar(), v.lidar_chamfer.scalar()};
  r.kl = v.kl.scalar();
  r.total = v.total.scalar();
  return r;
}

LossReport forward_pair(const ModelState& state, const TrainConfig& config, const PatchPair& patch,
                        const ViewRotations& rotations) {
  ad::Tape<double> tape;
  ad::Binder<double> bind(tape, false);
  return report_of(forward_pair(bind, state, config, patch, rotations));
}

std::vector<Eigen::MatrixXd> patch_gradient(const ModelState& state, const TrainConfig& config,
                                            const PatchPair& patch, const ViewRotations& rotations,
                                            LossReport* report) {
  ad::Tape<double> tape;
  ad::Binder<double> bind(tape, true);
  auto vars = forward_pair(bind, state, config, patch, rotations);
  tape.backward(vars.total);
  if (report) *report = report_of(vars);
  std::vector<Eigen::MatrixXd> grads;
  state.visit([&](const std::string&, const Eigen::MatrixXd& m) { grads.push_back(bind.gradient(m)); });
  return grads;
}

// ---------------------------------------------------------------- optimization

void adam_update(std::vector<Eigen::MatrixXd*> params, const std::vector<Eigen::MatrixXd>& grads, AdamState& adam,
                 std::int64_t step, const TrainConfig& config) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_update: one gradient per parameter required");
  if (adam.m.size() != params.size()) {
    adam.m.clear();
    adam.v.clear();
    for (auto* p : params) {
      adam.m.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      adam.v.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
  }
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * grads[i];
    adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * grads[i].cwiseAbs2();
    if (config.learning_rate == 0.0) continue;
    const Eigen::ArrayXXd m_hat = adam.m[i].array() / c1;
    const Eigen::ArrayXXd v_hat = adam.v[i].array() / c2;
    params[i]->array() -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
  }
}

StepResult train_step(ModelState& state, const TrainConfig& config, std::span<const PatchPair> batch,
                      std::span<const ViewRotations> rotations) {
  std::vector<const PatchPair*> ptrs;
  for (const auto& p : batch) ptrs.push_back(&p);
  return train_step_impl(state, config, ptrs, rotations);
}

StepResult train_step(ModelState& state, const TrainConfig& config, std::span<const PatchPair> batch,
                      std::mt19937_64& rng) {
  std::vector<ViewRotations> rotations;
  for (std::size_t i = 0; i < batch.size(); ++i) rotations.push_back(sample_view_rotations(config, rng));
  return train_step(state, config, batch, rotations);
}

TrainResult train(const TrainConfig& config, std::span<const PatchPair> patches,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (patches.empty()) throw std::invalid_argument("train: no patches");
  const int bands = static_cast<int>(patches.front().hsi.cols());
  TrainResult result{ModelState::init(config, bands), {}};
  std::mt19937_64 rng(config.seed ^ 0x5deece66dULL);
  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<LossReport> weighted;
    std::vector<double> sizes;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<const PatchPair*> ptrs;
      std::vector<ViewRotations> rotations;
      for (std::size_t i = start; i < end; ++i) {
        ptrs.push_back(&patches[order[i]]);
        rotations.push_back(sample_view_rotations(config, rng));
      }
      StepResult step = train_step_impl(result.state, config, ptrs, rotations);
      weighted.push_back(step.mean);
      sizes.push_back(static_cast<double>(end - start));
    }
    EpochLog row{epoch, {}};
    const double n = static_cast<double>(order.size());
    for (std::size_t i = 0; i < weighted.size(); ++i) {
      const double f = sizes[i] / n;
      const auto& r = weighted[i];
      row.mean.hsi.equ += f * r.hsi.equ;
      row.mean.hsi.inv += f * r.hsi.inv;
      row.mean.hsi.chamfer += f * r.hsi.chamfer;
      row.mean.lidar.equ += f * r.lidar.equ;
      row.mean.lidar.inv += f * r.lidar.inv;
      row.mean.lidar.chamfer += f * r.lidar.chamfer;
      row.mean.kl += f * r.kl;
      row.mean.total += f * r.total;
    }
    if (!std::isfinite(row.mean.total)) throw DivergenceError("epoch " + std::to_string(epoch) + " total loss");
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

std::string loss_log_header() { return "epoch,equ_H,inv_H,cham_H,equ_L,inv_L,cham_L,kl,total"; }

std::string loss_log_row(const EpochLog& row) {
  char buf[512];
  const auto& m = row.mean;
  std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", row.epoch, m.hsi.equ, m.hsi.inv,
                m.hsi.chamfer, m.lidar.equ, m.lidar.inv, m.lidar.chamfer, m.kl, m.total);
  return buf;
}

// ---------------------------------------------------------------- gradient check

GradCheckReport grad_check(const TrainConfig& base_config, std::uint64_t seed, const GradCheckOptions& options) {
  TrainConfig config = base_config;
  config.seed = seed;
  config.patch_size = options.patch_size;
  config.validate();
  ModelState state = ModelState::init(config, options.spectral_bands);
  if (options.zero_weights) {
    state.visit([](const std::string& name, Eigen::MatrixXd& m) {
      if (!name.ends_with("bias")) m.setZero();
    });
    std::mt19937_64 brng(seed + 17);
    std::uniform_real_distribution<double> uni(-0.5, 0.5);
    state.visit([&](const std::string& name, Eigen::MatrixXd& m) {
      if (name.ends_with("bias"))
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(brng);
    });
  }

  // Random co-registered instance: Gaussian spectra, patch-grid LiDAR points.
  std::mt19937_64 rng(seed * 7919 + 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int b = options.patch_size;
  const int pixels = b * b;
  Eigen::MatrixXd spectra(pixels, options.spectral_bands);
  for (Eigen::Index c = 0; c < spectra.cols(); ++c)
    for (Eigen::Index r = 0; r < spectra.rows(); ++r) spectra(r, c) = normal(rng);
  Eigen::MatrixXd pts(pixels, 3);
  const double radius = b > 1 ? (b - 1) / 2.0 : 1.0;
  for (int p = 0; p < pixels; ++p) {
    pts(p, 0) = (p % b - (b - 1) / 2.0) / radius;
    pts(p, 1) = (p / b - (b - 1) / 2.0) / radius;
    pts(p, 2) = normal(rng);
  }
  PatchPair patch{spectra, PointSet(pts), 0, 0, 1};
  const ViewRotations rotations = sample_view_rotations(config, rng);

  std::vector<Eigen::MatrixXd> analytic = patch_gradient(state, config, patch, rotations);
  if (options.corrupt_entry) {
    std::size_t remaining = *options.corrupt_entry;
    for (auto& g : analytic) {
      if (remaining < static_cast<std::size_t>(g.size())) {
        g.data()[remaining] += 1.0;
        break;
      }
      remaining -= static_cast<std::size_t>(g.size());
    }
  }

  struct Probe {
    long double loss;
    std::uint64_t signature;
  };
  auto evaluate = [&](const Eigen::MatrixXd* target, Eigen::Index index, long double delta) {
    ad::Tape<long double> tape;
    ad::Binder<long double> bind(tape, false);
    if (target) bind.perturb(*target, index % target->rows(), index / target->rows(), delta);
    auto vars = forward_pair(bind, state, config, patch, rotations);
    return Probe{vars.total.scalar(), tape.branch_signature()};
  };
  const std::uint64_t base_signature = evaluate(nullptr, 0, 0.0L).signature;

  GradCheckReport report;
  std::size_t param_index = 0;
  state.visit([&](const std::string& name, const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd& ga = analytic[param_index++];
    const std::string group = name.substr(0, name.find('.'));
    double& group_max = report.group_max[group];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      long double h = options.step;
      long double numeric = 0.0L;
      bool smooth = false;
      for (int attempt = 0; attempt < 5 && !smooth; ++attempt, h /= 10.0L) {
        const Probe plus = evaluate(&m, i, h);
        const Probe minus = evaluate(&m, i, -h);
        numeric = (plus.loss - minus.loss) / (2.0L * h);
        smooth = plus.signature == base_signature && minus.signature == base_signature;
        if (!smooth && attempt == 0) ++report.refined;
      }
      const double g_a = ga.data()[i];
      const double g_n = static_cast<double>(numeric);
      const double err = std::abs(g_a - g_n) / std::max(1e-8, std::abs(g_a) + std::abs(g_n));
      ++report.entries;
      group_max = std::max(group_max, err);
      if (err > report.max_rel_error || report.worst_parameter.empty()) {
        report.max_rel_error = err;
        report.worst_parameter = name + "[" + std::to_string(i) + "]";
      }
    }
  });
  return report;
}

// ---------------------------------------------------------------- checkpoints

namespace {

DenseTensor to_tensor(const Eigen::MatrixXd& m) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
  return DenseTensor::f32({static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, std::move(data));
}

Eigen::MatrixXd from_tensor(const DenseTensor& t, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  if (t.dtype() != DType::f32 || t.dims().size() != 2 || t.dims()[0] != rows || t.dims()[1] != cols) {
    throw FormatError("checkpoint array " + name + " has the wrong shape", 0);
  }
  Eigen::MatrixXd m(rows, cols);
  const auto data = t.f32_data();
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ModelState& state, const TrainConfig& config) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "hdcaps-checkpoint 1\n";
  manifest << "bands " << state.spectral_bands() << "\n";
  manifest << "step " << state.step << "\n";
  std::size_t i = 0;
  state.visit([&](const std::string& name, const Eigen::MatrixXd& m) {
    const std::string file = name + ".dten";
    save_tensor(dir / file, to_tensor(m));
    save_tensor(dir / ("adam_m." + file), to_tensor(state.adam.m.at(i)));
    save_tensor(dir / ("adam_v." + file), to_tensor(state.adam.v.at(i)));
    manifest << "param " << name << " " << file << " " << m.rows() << " " << m.cols() << "\n";
    ++i;
  });
  write_text_atomic(dir / "config.txt", format_config(config));
  write_text_atomic(dir / "manifest.txt", manifest.str());
}

std::pair<ModelState, TrainConfig> load_checkpoint(const std::filesystem::path& dir) {
  TrainConfig config;
  parse_config_text(read_text(dir / "config.txt"), config);
  std::istringstream manifest(read_text(dir / "manifest.txt"));
  std::string tag;
  int version = 0;
  manifest >> tag >> version;
  if (tag != "hdcaps-checkpoint" || version != 1) throw FormatError("not a checkpoint manifest", 0);
  int bands = 0;
  std::int64_t step = 0;
  manifest >> tag >> bands;
  if (tag != "bands" || bands < 1) throw FormatError("manifest missing band count", 0);
  manifest >> tag >> step;
  if (tag != "step") throw FormatError("manifest missing step", 0);
  ModelState state = ModelState::init(config, bands);
  state.step = step;
  std::size_t i = 0;
  state.visit([&](const std::string& name, Eigen::MatrixXd& m) {
    std::string kind, listed, file;
    Eigen::Index rows = 0, cols = 0;
    manifest >> kind >> listed >> file >> rows >> cols;
    if (kind != "param" || listed != name || rows != m.rows() || cols != m.cols()) {
      throw FormatError("manifest entry for " + name + " does not match the configured model", 0);
    }
    m = from_tensor(load_tensor(dir / file), rows, cols, name);
    state.adam.m.at(i) = from_tensor(load_tensor(dir / ("adam_m." + file)), rows, cols, name);
    state.adam.v.at(i) = from_tensor(load_tensor(dir / ("adam_v." + file)), rows, cols, name);
    ++i;
  });
  return {std::move(state), config};
}

}  // namespace hdcaps
