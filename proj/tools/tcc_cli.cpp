// tcc: train, evaluate, assign, gradient-check and export.
//
// Exit codes: 0 success, 1 configuration error, 2 data error,
// 3 numeric abort, 4 gradient check failed.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tcc/tcc.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "tcc 1.0.0";

enum Exit { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3, kCheckFailed = 4 };

struct DatasetArgs {
  std::string spec = "two_moons";
  std::optional<std::size_t> n;
  std::optional<double> noise;
  std::optional<std::size_t> clusters;
  double spread = 10.0;
  std::uint64_t seed = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--dataset", spec, "two_moons | blobs | rings | csv:<path>");
    cmd->add_option("--n", n, "number of generated points");
    cmd->add_option("--noise", noise, "generator noise sigma");
    cmd->add_option("--centers", clusters, "blob centers / rings (default: --k or 4)");
    cmd->add_option("--spread", spread, "blob center range");
    cmd->add_option("--data-seed", seed, "generator seed");
  }

  tcc::Dataset load(std::size_t k) const {
    tcc::DatasetOptions o;
    o.n = n;
    o.noise = noise;
    o.clusters = clusters.value_or(k);
    o.spread = spread;
    o.seed = seed;
    return tcc::make_dataset(spec, o);
  }
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_assignments(const tcc::Encoder& enc, const tcc::DenseArray& x, const fs::path& path) {
  const tcc::DenseArray pi = tcc::assign_batch(enc, x);
  const std::vector<int> labels = tcc::infer_batch(enc, x);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw tcc::DataError("cannot write " + path.string());
  out << "index,cluster";
  for (std::size_t k = 0; k < pi.cols(); ++k) out << ",pi_" << k;
  out << '\n';
  for (std::size_t i = 0; i < pi.rows(); ++i) {
    out << i << ',' << labels[i];
    for (std::size_t k = 0; k < pi.cols(); ++k) out << ',' << tcc::format_double(pi(i, k));
    out << '\n';
  }
}

ordered_json manifest_json(const tcc::TrainState& s, const tcc::Dataset& data,
                           const DatasetArgs& da, const std::string& started) {
  ordered_json cfg = ordered_json::object();
  for (const auto& key : tcc::config_keys()) cfg[key] = tcc::get_config_value(s.config, key);
  ordered_json m;
  m["version"] = kVersion;
  m["seed"] = s.config.seed;
  m["config"] = cfg;
  m["resolved"] = {{"batch_size", s.sizes.batch},
                   {"cluster_queue_size", s.sizes.cluster_queue},
                   {"instance_queue_size", s.sizes.instance_queue}};
  m["dataset"] = {{"spec", da.spec},
                  {"name", data.name},
                  {"n", data.size()},
                  {"dim", data.dim()},
                  {"labeled", data.has_labels()},
                  {"fingerprint", hex64(tcc::fingerprint(data))},
                  {"generator_seed", da.seed}};
  m["started_at"] = started;
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw tcc::DataError("cannot write " + path.string());
  out << text;
}

struct TrainArgs {
  std::string config_path;
  DatasetArgs data;
  std::string out = "run";
  std::optional<std::size_t> k;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<std::size_t> gumbel_samples;
  std::optional<std::size_t> epochs;
  bool no_cluster_queue = false;
  bool no_aug_elements = false;
  bool hard_assign = false;
  bool alternating = false;
  std::vector<std::string> overrides;
  std::size_t checkpoint_every = 0;
  std::string resume;
  bool quiet = false;
};

tcc::TrainConfig resolve_config(const TrainArgs& a) {
  tcc::TrainConfig base;
  if (const char* env = std::getenv("TCC_SEED")) tcc::set_config_value(base, "seed", env);
  tcc::TrainConfig c = a.config_path.empty() ? base : tcc::load_config(a.config_path, base);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw tcc::ConfigError("--set expects key=value, got '" + kv + "'");
    tcc::set_config_value(c, tcc::detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (a.k) c.clusters = *a.k;
  if (a.seed) c.seed = *a.seed;
  if (a.alpha) c.alpha = *a.alpha;
  if (a.gumbel_samples) c.gumbel_samples = *a.gumbel_samples;
  if (a.epochs) c.max_epochs = *a.epochs;
  if (a.no_cluster_queue) c.use_cluster_queue = false;
  if (a.hard_assign) c.hard_assign_aggregate = true;
  if (a.alternating) c.mode = tcc::TrainMode::kAlternating;
  if (a.no_aug_elements) {
    c.augment_noise = 0.0;
    c.augment_scale = 0.0;
    c.augment_dropout = 0.0;
    c.image_crop_min = 1.0;
    c.image_flip = false;
    c.image_jitter = 0.0;
  }
  c.validate();
  return c;
}

int cmd_train(const TrainArgs& a) {
  tcc::TrainState state;
  tcc::TrainConfig config;
  if (a.resume.empty()) {
    config = resolve_config(a);
  } else {
    state = tcc::load_checkpoint(a.resume);
    config = state.config;
    if (a.epochs) state.config.max_epochs = *a.epochs;
  }
  const tcc::Dataset data = a.data.load(config.clusters);
  data.validate();
  if (a.resume.empty()) state = tcc::make_initial_state(config, data);

  const fs::path out = a.out;
  fs::create_directories(out);
  const std::string started = utc_now();
  ordered_json manifest = manifest_json(state, data, a.data, started);
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  write_text(out / "config.txt", tcc::config_to_text(state.config));

  const std::size_t K = state.config.clusters;
  const bool append = !a.resume.empty() && fs::exists(out / "metrics.csv");
  std::ofstream metrics(out / "metrics.csv", append ? std::ios::app | std::ios::binary : std::ios::binary);
  std::ofstream timing(out / "timing.csv", append ? std::ios::app | std::ios::binary : std::ios::binary);
  if (!metrics || !timing) throw tcc::DataError("cannot write metrics in " + out.string());
  if (!append) {
    metrics << "epoch,l1,l2,total,kl,entropy,dec,acc,nmi,ari";
    for (std::size_t k = 0; k < K; ++k) metrics << ",hist_" << k;
    metrics << '\n';
    timing << "epoch,seconds\n";
  }

  auto on_epoch = [&](const tcc::EpochReport& r, const tcc::TrainState& s) {
    using tcc::format_double;
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    metrics << r.epoch << ',' << format_double(r.l1) << ',' << format_double(r.l2) << ','
            << format_double(r.total) << ',' << format_double(r.kl) << ',' << format_double(r.entropy)
            << ',' << format_double(r.dec) << ',' << opt(r.acc) << ',' << opt(r.nmi) << ','
            << opt(r.ari);
    for (auto h : r.histogram) metrics << ',' << h;
    metrics << '\n';
    metrics.flush();
    timing << r.epoch << ',' << format_double(r.seconds) << '\n';
    if (!a.quiet) {
      std::printf("epoch %4llu  loss %.5f  l1 %.5f  l2 %.5f  dec %.4f", static_cast<unsigned long long>(r.epoch),
                  r.total, r.l1, r.l2, r.dec);
      if (r.acc) std::printf("  acc %.4f  nmi %.4f", *r.acc, *r.nmi);
      std::printf("  (%.2fs)\n", r.seconds);
      std::fflush(stdout);
    }
    if (a.checkpoint_every && r.epoch % a.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04llu.ckpt", static_cast<unsigned long long>(r.epoch));
      tcc::save_checkpoint(s, (out / name).string());
    }
  };
  tcc::continue_training(state, data, on_epoch);

  tcc::save_checkpoint(state, (out / "final.ckpt").string());
  write_assignments(state.online, data.x, out / "assignments.csv");
  manifest["finished_at"] = utc_now();
  manifest["epochs"] = state.epoch;
  manifest["steps"] = state.step;
  manifest["converged"] = state.converged;
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  if (!a.quiet) std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

int cmd_eval(const std::string& ckpt, const DatasetArgs& da) {
  const tcc::TrainState s = tcc::load_checkpoint(ckpt);
  const tcc::Dataset data = da.load(s.config.clusters);
  if (data.dim() != s.online.config().input_dim) throw tcc::DataError("dataset dimension does not match the model");
  if (!data.has_labels()) throw tcc::DataError("eval needs labels; use 'assign' for unlabeled data");
  const std::vector<int> pred = tcc::infer_batch(s.online, data.x);
  std::printf("%s,%s,%s\n", tcc::format_double(tcc::acc(pred, data.labels)).c_str(),
              tcc::format_double(tcc::nmi(pred, data.labels)).c_str(),
              tcc::format_double(tcc::ari(pred, data.labels)).c_str());
  return kOk;
}

int cmd_assign(const std::string& ckpt, const std::string& input, const std::string& output) {
  const tcc::TrainState s = tcc::load_checkpoint(ckpt);
  const tcc::Dataset data = tcc::load_csv(input);
  if (data.dim() != s.online.config().input_dim) throw tcc::DataError("input dimension does not match the model");
  write_assignments(s.online, data.x, output);
  return kOk;
}

int cmd_export(const std::string& ckpt, const DatasetArgs& da, const std::string& out_dir) {
  const tcc::TrainState s = tcc::load_checkpoint(ckpt);
  const tcc::Dataset data = da.load(s.config.clusters);
  if (data.dim() != s.online.config().input_dim) throw tcc::DataError("dataset dimension does not match the model");
  const fs::path out = out_dir;
  fs::create_directories(out);

  const tcc::DenseArray f = tcc::encode_batch(s.online, data.x);
  {
    std::ofstream e(out / "embeddings.csv", std::ios::binary);
    for (std::size_t j = 0; j < f.cols(); ++j) e << (j ? "," : "") << 'f' << j;
    e << '\n';
    for (std::size_t i = 0; i < f.rows(); ++i) {
      for (std::size_t j = 0; j < f.cols(); ++j) e << (j ? "," : "") << tcc::format_double(f(i, j));
      e << '\n';
    }
    if (!e) throw tcc::DataError("cannot write embeddings.csv");
  }
  const std::vector<int> pred = tcc::infer_batch(s.online, data.x);
  const auto hist = tcc::label_histogram(pred, s.config.clusters);
  {
    std::ofstream h(out / "histogram.csv", std::ios::binary);
    h << "cluster,count\n";
    for (std::size_t k = 0; k < hist.size(); ++k) h << k << ',' << hist[k] << '\n';
    if (!h) throw tcc::DataError("cannot write histogram.csv");
  }
  if (data.has_labels()) {
    std::ofstream l(out / "labels.csv", std::ios::binary);
    l << "index,label,cluster\n";
    for (std::size_t i = 0; i < pred.size(); ++i) l << i << ',' << data.labels[i] << ',' << pred[i] << '\n';
  }
  write_assignments(s.online, data.x, out / "assignments.csv");
  return kOk;
}

std::optional<tcc::Op> parse_fault(const std::string& name) {
  if (name.empty()) return std::nullopt;
  if (name == "matmul") return tcc::Op::kMatmul;
  if (name == "softmax") return tcc::Op::kSoftmax;
  if (name == "normalize") return tcc::Op::kNormalize;
  throw tcc::ConfigError("--fault must be matmul, softmax or normalize");
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed, std::size_t seeds,
                  const std::string& fault, double tolerance) {
  const tcc::TrainConfig c = config_path.empty() ? tcc::TrainConfig{} : tcc::load_config(config_path);
  c.validate();
  tcc::GradCheckOptions o;
  o.clusters = c.clusters;
  o.hidden = c.hidden;
  o.feature_dim = c.feature_dim;
  o.gumbel_samples = c.gumbel_samples;
  o.alpha = c.alpha;
  o.tau = c.tau;
  o.lambda = c.lambda;
  o.tolerance = tolerance;
  o.fault = parse_fault(fault);

  bool all = true;
  std::printf("%-6s %-9s %-14s %-8s %-6s %-22s %s\n", "seed", "loss", "max_rel_err", "checked", "kinks", "worst",
              "status");
  for (std::uint64_t s = seed; s < seed + seeds; ++s) {
    o.seed = s;
    for (const auto& lc : tcc::run_gradient_checks(o)) {
      all = all && lc.passed;
      const std::string worst = lc.report.worst_parameter + "[" + std::to_string(lc.report.worst_index) + "]";
      std::printf("%-6llu %-9s %-14.3e %-8zu %-6zu %-22s %s\n", static_cast<unsigned long long>(s),
                  lc.loss.c_str(), lc.report.max_relative_error, lc.report.entries_checked,
                  lc.report.entries_at_kinks, worst.c_str(), lc.passed ? "ok" : "FAIL");
    }
  }
  std::printf("%s\n", all ? "gradient check passed" : "gradient check FAILED");
  return all ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin-contrast clustering"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", ta.config_path, "key = value config file");
  ta.data.attach(train);
  train->add_option("--out", ta.out, "output directory");
  train->add_option("--k", ta.k, "number of clusters");
  train->add_option("--seed", ta.seed, "training seed");
  train->add_option("--alpha", ta.alpha, "weight of the cluster-level loss");
  train->add_option("--gumbel-samples", ta.gumbel_samples, "Gumbel samples per datum");
  train->add_option("--epochs", ta.epochs, "maximum epochs");
  train->add_flag("--no-cluster-queue", ta.no_cluster_queue, "in-batch cluster negatives only");
  train->add_flag("--no-aug-elements", ta.no_aug_elements, "disable element augmentation");
  train->add_flag("--hard-assign-aggregate", ta.hard_assign, "aggregate clusters with one-hot assignments");
  train->add_flag("--alternating", ta.alternating, "alternate instance and full-dataset cluster steps");
  train->add_option("--set", ta.overrides, "override any config key (key=value)");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "also checkpoint every N epochs");
  train->add_option("--resume", ta.resume, "continue from a checkpoint");
  train->add_flag("--quiet", ta.quiet, "no progress output");

  std::string ckpt, input, output, out_dir = "export";
  DatasetArgs eval_data, export_data;
  auto* eval = app.add_subcommand("eval", "print acc,nmi,ari of a checkpoint on a labeled dataset");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_data.attach(eval);

  auto* assign = app.add_subcommand("assign", "write index,cluster,pi_* for a CSV of inputs");
  assign->add_option("--ckpt", ckpt, "checkpoint file")->required();
  assign->add_option("--input", input, "input CSV")->required();
  assign->add_option("--output", output, "output CSV")->required();

  std::string gc_config, gc_fault;
  std::uint64_t gc_seed = 0;
  std::size_t gc_seeds = 1;
  double gc_tol = 1e-3;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every loss");
  grad->add_option("--config", gc_config, "key = value config file");
  grad->add_option("--seed", gc_seed, "first seed");
  grad->add_option("--seeds", gc_seeds, "number of seeds");
  grad->add_option("--tolerance", gc_tol, "maximum relative error");
  grad->add_option("--fault", gc_fault, "corrupt a backward rule (matmul, softmax, normalize)");

  auto* exp = app.add_subcommand("export", "write embeddings and assignment histogram CSVs");
  exp->add_option("--ckpt", ckpt, "checkpoint file")->required();
  export_data.attach(exp);
  exp->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ckpt, eval_data);
    if (*assign) return cmd_assign(ckpt, input, output);
    if (*grad) return cmd_gradcheck(gc_config, gc_seed, gc_seeds, gc_fault, gc_tol);
    if (*exp) return cmd_export(ckpt, export_data, out_dir);
  } catch (const tcc::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const tcc::BadPolicy& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const tcc::NonFiniteLoss& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const tcc::DegenerateNorm& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const tcc::NonFiniteInput& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const tcc::Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
  return kConfig;
}
