#include "hdcaps/cli.hpp"

#include "hdcaps/dataio.hpp"
#include "hdcaps/errors.hpp"
#include "hdcaps/evaluation.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace hdcaps {
namespace {

// Bad flag values discovered after CLI11 parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<int, int> parse_size(const std::string& text) {
  const auto x = text.find('x');
  int h = 0, w = 0;
  char tail = 0;
  if (x == std::string::npos || std::sscanf(text.c_str(), "%dx%d%c", &h, &w, &tail) != 2 || h < 1 || w < 1) {
    throw UsageError("--size must look like HxW with positive integers, got '" + text + "'");
  }
  return {h, w};
}

std::string format_sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6e", v);
  return buf;
}

int run_gen_synth(const std::filesystem::path& out_dir, std::uint64_t seed, int classes, const std::string& size,
                  int bands, std::ostream& out) {
  const auto [h, w] = parse_size(size);
  const SyntheticScene synth = gen_synthetic(h, w, classes, bands, seed);
  save_scene(out_dir, synth.scene);
  out << "wrote " << h << "x" << w << " scene with " << classes << " classes and " << bands << " bands to "
      << out_dir.string() << "\n";
  return kExitOk;
}

int run_train(const std::optional<std::filesystem::path>& config_path, std::optional<std::filesystem::path> data,
              std::optional<std::filesystem::path> out_dir, std::ostream& out) {
  RunConfig run;
  if (config_path) run = parse_config(*config_path);
  if (!data) data = run.data;
  if (!out_dir) out_dir = run.out;
  if (!data || !out_dir) throw UsageError("train needs a data directory and an output directory (--data/--out or config keys)");

  const Scene scene = load_scene(*data);
  const std::vector<PatchPair> patches = extract_patches(scene, run.train.patch_size);
  std::filesystem::create_directories(*out_dir);
  const auto log_path = *out_dir / "loss_log.csv";
  std::string log = loss_log_header() + "\n";
  try {
    TrainResult result = train(run.train, patches, [&log](const EpochLog& row) { log += loss_log_row(row) + "\n"; });
    write_text_atomic(log_path, log);
    save_checkpoint(*out_dir, result.state, run.train);
    if (!result.log.empty()) {
      out << "trained " << result.log.size() << " epochs on " << patches.size() << " patches; loss "
          << format_sci(result.log.front().mean.total) << " -> " << format_sci(result.log.back().mean.total) << "\n";
    } else {
      out << "wrote untrained model (epochs = 0)\n";
    }
  } catch (const DivergenceError&) {
    write_text_atomic(log_path, log);
    throw;
  }
  return kExitOk;
}

int run_extract(const std::filesystem::path& model_dir, const std::filesystem::path& data,
                const std::filesystem::path& out_file, std::ostream& out) {
  const auto [state, config] = load_checkpoint(model_dir);
  const Scene scene = load_scene(data);
  if (scene.bands() != state.spectral_bands()) {
    throw FormatError("scene has " + std::to_string(scene.bands()) + " bands but the model expects " +
                          std::to_string(state.spectral_bands()),
                      0);
  }
  const std::vector<PatchPair> patches = extract_patches(scene, config.patch_size);
  const FeatureTable table = extract_features(state, config, patches);
  save_features(out_file, table);
  out << "wrote " << table.size() << " fused features of length " << table.features.cols() << " to "
      << out_file.string() << "\n";
  return kExitOk;
}

void write_report(const EvaluationReport& report, const std::string& method, const std::filesystem::path& path,
                  std::ostream& out) {
  write_text_atomic(path, report_json(report, method));
  out << method << ": OA " << report.metrics.oa << " AA " << report.metrics.aa << " kappa " << report.metrics.kappa
      << " (" << report.n_train << " train / " << report.n_test << " test)\n";
}

int run_eval(const std::filesystem::path& features, const std::filesystem::path& labels, double fraction,
             std::uint64_t seed, const std::filesystem::path& report_path, std::ostream& out) {
  const FeatureTable table = load_features(features);
  const DenseTensor label_tensor = load_tensor(labels);
  write_report(evaluate_split(table, label_tensor, fraction, seed), "learned", report_path, out);
  return kExitOk;
}

int run_baseline(const std::string& method, int dim, int patch_size, const std::filesystem::path& data,
                 double fraction, std::uint64_t seed, const std::filesystem::path& report_path, std::ostream& out) {
  const Scene scene = load_scene(data);
  const std::vector<PatchPair> patches = extract_patches(scene, patch_size);
  FeatureTable table = raw_features(patches);
  if (method == "pca" || method == "le") {
    if (dim < 1) throw UsageError("--dim must be >= 1 for " + method);
  }
  if (method == "pca") {
    table.features = pca_transform(pca_fit(table.features, dim), table.features);
  } else if (method == "le") {
    table.features = laplacian_eigenmaps(table.features, dim).embedding;
  }
  write_report(evaluate_split(table, scene.labels, fraction, seed), method, report_path, out);
  return kExitOk;
}

int run_gradcheck(std::uint64_t seed, const std::optional<std::filesystem::path>& report_path, std::ostream& out) {
  const GradCheckReport report = grad_check(TrainConfig::tiny(), seed);
  const bool pass = report.max_rel_error < 1e-4;
  out << "max relative gradient error: " << format_sci(report.max_rel_error) << " at " << report.worst_parameter
      << " over " << report.entries << " entries (" << report.refined << " refined) -> "
      << (pass ? "PASS" : "FAIL") << "\n";
  if (report_path) {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["max_rel_error"] = report.max_rel_error;
    j["worst_parameter"] = report.worst_parameter;
    j["entries"] = report.entries;
    j["refined"] = report.refined;
    j["group_max"] = report.group_max;
    j["pass"] = pass;
    write_text_atomic(*report_path, j.dump(2) + "\n");
  }
  return pass ? kExitOk : kExitDivergence;
}

}  // namespace

RunConfig parse_config_string(const std::string& text, const std::vector<std::string>& required) {
  RunConfig run;
  std::map<std::string, std::pair<std::string, int>> extras;
  parse_config_text(text, run.train, {"data", "out"}, &extras);
  if (auto it = extras.find("data"); it != extras.end()) run.data = it->second.first;
  if (auto it = extras.find("out"); it != extras.end()) run.out = it->second.first;
  for (const auto& key : required) {
    if (!extras.contains(key)) throw ParseError("missing required path key '" + key + "'", 0);
  }
  return run;
}

RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& required) {
  return parse_config_string(read_text(path), required);
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-branch canonical capsule autoencoder for HSI + LiDAR patches", "hdcaps"};
  app.require_subcommand(1);

  std::filesystem::path out_dir, data_dir, model_dir, out_file, features, labels, report;
  std::optional<std::filesystem::path> config_path, train_data, train_out, gc_report;
  std::uint64_t seed = 0;
  int classes = 4, bands = 16, dim = 0, patch_size = 5;
  std::string size = "64x64", method;
  double fraction = 0.05;

  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic co-registered scene");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("--classes", classes, "Number of classes")->check(CLI::PositiveNumber);
  gen->add_option("--size", size, "Raster size HxW");
  gen->add_option("--bands", bands, "Spectral bands")->check(CLI::PositiveNumber);

  auto* tr = app.add_subcommand("train", "Train the autoencoder on every labeled patch");
  tr->add_option("--config", config_path, "key = value config file");
  tr->add_option("--data", train_data, "Scene directory");
  tr->add_option("--out", train_out, "Model output directory");

  auto* ex = app.add_subcommand("extract", "Write fused per-pixel features");
  ex->add_option("--model", model_dir, "Model directory")->required();
  ex->add_option("--data", data_dir, "Scene directory")->required();
  ex->add_option("--out", out_file, "Feature file")->required();

  auto* ev = app.add_subcommand("eval", "Classify fused features on a stratified split");
  ev->add_option("--features", features, "Feature file")->required();
  ev->add_option("--labels", labels, "labels.dten")->required();
  ev->add_option("--train-frac", fraction, "Per-class training fraction")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--seed", seed, "Split and classifier seed");
  ev->add_option("--report", report, "JSON report path")->required();

  auto* bl = app.add_subcommand("baseline", "Classify raw, PCA or Laplacian-Eigenmaps features");
  bl->add_option("--method", method, "raw, pca or le")->required()->check(CLI::IsMember({"raw", "pca", "le"}));
  bl->add_option("--dim", dim, "Output dimension for pca/le");
  bl->add_option("--patch-size", patch_size, "Odd patch size");
  bl->add_option("--data", data_dir, "Scene directory")->required();
  bl->add_option("--train-frac", fraction, "Per-class training fraction")->check(CLI::Range(0.0, 1.0));
  bl->add_option("--seed", seed, "Split and classifier seed");
  bl->add_option("--report", report, "JSON report path")->required();

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gc->add_option("--seed", seed, "Random seed");
  gc->add_option("--report", gc_report, "Optional JSON report path");

  if (argc <= 1) {
    out << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "hdcaps: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_synth(out_dir, seed, classes, size, bands, out);
    if (tr->parsed()) return run_train(config_path, train_data, train_out, out);
    if (ex->parsed()) return run_extract(model_dir, data_dir, out_file, out);
    if (ev->parsed()) return run_eval(features, labels, fraction, seed, report, out);
    if (bl->parsed()) return run_baseline(method, dim, patch_size, data_dir, fraction, seed, report, out);
    if (gc->parsed()) return run_gradcheck(seed, gc_report, out);
  } catch (const UsageError& e) {
    err << "hdcaps: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "hdcaps: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "hdcaps: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace hdcaps
