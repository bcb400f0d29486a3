// Command-line entry points: gen-data, train, train-sizer, sample, eval.

#include "paflow/config.hpp"
#include "paflow/eval.hpp"
#include "paflow/geomdata.hpp"
#include "paflow/sampler.hpp"
#include "paflow/sizer.hpp"
#include "paflow/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace paflow;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

constexpr std::uint64_t kDataStream = 0xDA7A;
constexpr std::uint64_t kPredefinedStream = 0x9D;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::uint64_t molecule_seed(std::uint64_t seed, std::size_t pocket, std::size_t molecule) {
  return mix_seed(seed, 0x5EED + pocket, molecule);
}

std::string pocket_file(const std::string& dir, std::size_t pocket) {
  char name[64];
  std::snprintf(name, sizeof name, "pocket_%03zu.lig", pocket);
  return (fs::path(dir) / name).string();
}

int type_count(const RunConfig& cfg) { return static_cast<int>(cfg.get_int("type_count")); }

Checkpoint load_model(const RunConfig& cfg) {
  Checkpoint c = load_checkpoint(cfg.get_string("checkpoint"));
  if (c.egnn.tensors.empty()) {
    throw ConfigError("checkpoint '" + cfg.get_string("checkpoint") + "' has no network; run `paflow train` first");
  }
  return c;
}

/// Atom-count source for one molecule, following size_mode.
struct SizePlan {
  std::string mode;
  std::vector<int> training_counts;

  int atoms_for(const RunConfig& cfg, const ComplexRecord& reference, std::size_t pocket, std::size_t molecule) const {
    if (mode == "reference") return static_cast<int>(reference.ligand.size());
    if (mode == "predefined") {
      Rng rng(mix_seed(cfg.get_seed(), kPredefinedStream, pocket * 100000 + molecule));
      return training_counts[rng() % training_counts.size()];
    }
    return 0;  // predictor
  }
};

SizePlan size_plan(const RunConfig& cfg, const Checkpoint& ckpt) {
  SizePlan plan;
  plan.mode = cfg.get_string("size_mode");
  if (plan.mode == "predictor") {
    if (!ckpt.sizer) throw ConfigError("checkpoint has no atom-count predictor; run `paflow train-sizer` first");
  } else if (plan.mode == "predefined") {
    for (const auto& r : read_complexes(cfg.get_string("data_path"), type_count(cfg))) {
      plan.training_counts.push_back(static_cast<int>(r.ligand.size()));
    }
  } else if (plan.mode != "reference") {
    throw UsageError("size_mode must be predictor, reference or predefined");
  }
  return plan;
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const RunConfig& cfg) {
  const std::uint64_t seed = cfg.get_seed();
  const auto n = cfg.get_int("n_complexes");
  const auto n_test = cfg.get_int("n_test_pockets");
  if (n < 1 || n_test < 1) throw UsageError("n_complexes and n_test_pockets must be >= 1");
  const auto train = generate_synthetic_dataset(static_cast<int>(n), mix_seed(seed, kDataStream, 0), type_count(cfg));
  const auto test = generate_synthetic_dataset(static_cast<int>(n_test), mix_seed(seed, kDataStream, 1), type_count(cfg));
  ensure_parent(cfg.get_string("data_path"));
  ensure_parent(cfg.get_string("test_path"));
  write_complexes(cfg.get_string("data_path"), train.records);
  write_complexes(cfg.get_string("test_path"), test.records);
  std::cout << "wrote " << n << " training complexes to " << cfg.get_string("data_path") << "\n"
            << "wrote " << n_test << " held-out complexes to " << cfg.get_string("test_path") << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  const auto records = read_complexes(cfg.get_string("data_path"), type_count(cfg));
  const TrainConfig tc = cfg.train_config();
  const EgnnConfig ec = cfg.egnn_config();
  const std::string path = cfg.get_string("checkpoint");
  ensure_parent(path);

  Checkpoint start = initial_checkpoint(ec, tc);
  if (fs::exists(path)) {
    Checkpoint existing = load_checkpoint(path);
    if (cfg.get_bool("resume")) {
      if (existing.egnn.tensors.empty()) throw ConfigError("cannot resume: '" + path + "' holds no network");
      const EgnnConfig& e = existing.egnn.config;
      if (e.hidden != ec.hidden || e.heads != ec.heads || e.layers != ec.layers || e.knn_k != ec.knn_k ||
          e.type_count != ec.type_count) {
        throw UsageError("cannot resume: network settings differ from the checkpoint's");
      }
      start = std::move(existing);
    } else {
      start.sizer = existing.sizer;  // keep a predictor trained earlier
    }
  }
  start.config_text = cfg.dump();

  const auto t0 = std::chrono::steady_clock::now();
  std::size_t reported = 0;
  auto progress = [&](const Checkpoint& c) {
    for (; reported < c.history.validation.size(); ++reported) {
      const auto& v = c.history.validation[reported];
      std::printf("step %6lld  validation loss %.5f  lr %.3g  (%.0fs)\n", static_cast<long long>(v.step), v.loss, v.lr,
                  seconds_since(t0));
      std::fflush(stdout);
    }
    return true;
  };
  Checkpoint done = train(records, tc, std::move(start), cfg.schedules(), progress);
  progress(done);
  done.config_text = cfg.dump();
  save_checkpoint(path, done);
  const auto& val = done.history.validation;
  std::printf("trained %lld steps in %.1fs; validation loss %.5f -> %.5f; checkpoint %s\n",
              static_cast<long long>(done.step), seconds_since(t0), val.front().loss, val.back().loss, path.c_str());
  return 0;
}

int cmd_train_sizer(const RunConfig& cfg) {
  const auto records = read_complexes(cfg.get_string("data_path"), type_count(cfg));
  const double grid = cfg.get_double("grid_step");
  if (grid <= 0) throw UsageError("grid_step must be positive");
  std::vector<SizerSample> samples;
  int degenerate = 0;
  for (const auto& r : records) {
    SizerSample s{pocket_descriptors(r.pocket, grid), static_cast<int>(r.ligand.size())};
    degenerate += s.descriptors.degenerate;
    samples.push_back(s);
  }
  if (degenerate > 0) std::cerr << "warning: " << degenerate << " degenerate pockets (volume and area set to 0)\n";
  const auto epochs = cfg.get_int("sizer_epochs");
  if (epochs < 1) throw UsageError("sizer_epochs must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const SizerParams sizer = train_sizer(samples, static_cast<int>(epochs), cfg.get_seed(), cfg.sizer_config());

  const std::string path = cfg.get_string("checkpoint");
  ensure_parent(path);
  Checkpoint ckpt;
  if (fs::exists(path)) ckpt = load_checkpoint(path);
  ckpt.sizer = sizer;
  if (ckpt.config_text.empty()) ckpt.config_text = cfg.dump();
  save_checkpoint(path, ckpt);
  std::printf("atom-count predictor: %lld epochs in %.1fs, validation R^2 %.4f, atom range [%g, %g]; checkpoint %s\n",
              static_cast<long long>(epochs), seconds_since(t0), sizer.validation_r2, sizer.n_min, sizer.n_max,
              path.c_str());
  return 0;
}

int cmd_sample(const RunConfig& cfg) {
  const Checkpoint ckpt = load_model(cfg);
  const auto refs = read_complexes(cfg.get_string("test_path"), type_count(cfg));
  const SizePlan plan = size_plan(cfg, ckpt);
  const SamplerConfig base = cfg.sampler_config();
  const Schedules schedules = cfg.schedules();
  const auto per_pocket = cfg.get_int("molecules_per_pocket");
  if (per_pocket < 1) throw UsageError("molecules_per_pocket must be >= 1");
  const std::string dir = cfg.get_string("out_dir");
  fs::create_directories(dir);

  struct Job {
    std::size_t pocket, molecule;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < refs.size(); ++p) {
    for (std::size_t m = 0; m < static_cast<std::size_t>(per_pocket); ++m) jobs.push_back({p, m});
  }
  std::vector<SampleResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const SizerParams* sizer = ckpt.sizer ? &*ckpt.sizer : nullptr;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        SamplerConfig sc = base;
        sc.seed = molecule_seed(base.seed, jobs[j].pocket, jobs[j].molecule);
        sc.n_atoms = plan.atoms_for(cfg, refs[jobs[j].pocket], jobs[j].pocket, jobs[j].molecule);
        results[j] = sample(ckpt.egnn, sizer, refs[jobs[j].pocket].pocket, sc, schedules);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const auto t0 = std::chrono::steady_clock::now();
  const auto workers = std::max<std::int64_t>(1, cfg.get_int("workers"));
  std::vector<std::thread> pool;
  for (std::int64_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  const double elapsed = seconds_since(t0);

  for (std::size_t p = 0; p < refs.size(); ++p) {
    std::vector<LigandState> mols;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].pocket != p) continue;
      mols.push_back(results[j].ligand);
      if (base.record_trajectory) {
        char name[64];
        std::snprintf(name, sizeof name, "traj_%03zu_%03zu.txt", p, jobs[j].molecule);
        write_trajectory((fs::path(dir) / name).string(), results[j].trajectory);
      }
    }
    write_ligands(pocket_file(dir, p), mols);
  }
  std::ofstream manifest(fs::path(dir) / "sampling.txt");
  manifest << "molecules=" << jobs.size() << "\nseconds=" << elapsed << "\n";
  double mean_y = 0.0;
  for (const auto& r : results) mean_y += r.final_y_hat / static_cast<double>(results.size());
  std::printf("sampled %zu molecules for %zu pockets in %.1fs (mean affinity score %.4f) into %s\n", jobs.size(),
              refs.size(), elapsed, mean_y, dir.c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const Checkpoint ckpt = load_model(cfg);
  const auto refs = read_complexes(cfg.get_string("test_path"), type_count(cfg));
  const std::string dir = cfg.get_string("out_dir");
  std::vector<std::vector<LigandState>> mols(refs.size());
  std::size_t files = 0;
  if (fs::is_directory(dir)) {
    for (std::size_t p = 0; p < refs.size(); ++p) {
      if (!fs::exists(pocket_file(dir, p))) continue;
      mols[p] = read_ligands(pocket_file(dir, p), type_count(cfg));
      files += !mols[p].empty();
    }
  }
  if (files == 0) throw ConfigError("no molecules (pocket_NNN.lig) in '" + dir + "'; run `paflow sample` first");

  EvalReport report = evaluate_molecules(ckpt.egnn, refs, mols);

  // One equivariance probe on the first pocket with molecules.
  const SizePlan plan = size_plan(cfg, ckpt);
  SamplerConfig sc = cfg.sampler_config();
  for (std::size_t p = 0; p < refs.size(); ++p) {
    if (mols[p].empty()) continue;
    sc.seed = molecule_seed(sc.seed, p, 0);
    sc.n_atoms = plan.atoms_for(cfg, refs[p], p, 0);
    report.equivariance_error = equivariance_error(ckpt.egnn, ckpt.sizer ? &*ckpt.sizer : nullptr, refs[p].pocket,
                                                   sc, cfg.schedules(), mix_seed(cfg.get_seed(), 0xE0));
    break;
  }
  std::ifstream manifest(fs::path(dir) / "sampling.txt");
  std::map<std::string, double> info;
  for (std::string line; std::getline(manifest, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) info[line.substr(0, eq)] = std::atof(line.c_str() + eq + 1);
  }
  if (info.count("molecules") && info["molecules"] > 0) {
    report.sampling_seconds_per_100 = 100.0 * info["seconds"] / info["molecules"];
  }
  report.runtime_seconds = seconds_since(t0);

  const std::string text = format_report(report, cfg.dump());
  std::cout << text;
  if (!cfg.get_string("report_path").empty()) {
    ensure_parent(cfg.get_string("report_path"));
    std::ofstream out(cfg.get_string("report_path"));
    if (!out) throw ConfigError("cannot write report to '" + cfg.get_string("report_path") + "'");
    out << text;
  }
  return 0;
}

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paflow: pocket-conditioned ligand generation with guided flow matching"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> assignments;
  std::vector<std::pair<std::string, std::string>> flag_values;
  app.add_option("-c,--config", config_file, "configuration file of `key = value` lines");
  app.add_option("--set", assignments, "override any key: --set key=value (repeatable)");

  const RunConfig defaults = RunConfig::defaults();
  for (const auto& e : defaults.entries()) {
    const std::string name = "--" + dashed(e.key);
    const std::string key = e.key;
    if (e.kind == RunConfig::Kind::boolean) {
      app.add_flag_callback(name, [&flag_values, key] { flag_values.emplace_back(key, "true"); }, e.help);
    } else {
      app.add_option_function<std::string>(
             name, [&flag_values, key](const std::string& v) { flag_values.emplace_back(key, v); }, e.help)
          ->default_str(e.value);
    }
  }

  std::string command;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"gen-data", "write synthetic training and held-out complexes"},
           {"train", "train the network and write the checkpoint"},
           {"train-sizer", "train the atom-count predictor into the checkpoint"},
           {"sample", "generate molecules for the held-out pockets"},
           {"eval", "score generated molecules and print the report"}}) {
    app.add_subcommand(name, help)->callback([&command, n = name] { command = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    RunConfig cfg = RunConfig::defaults();
    if (!config_file.empty()) cfg.load_file(config_file);
    cfg.apply_environment();
    for (const auto& [k, v] : flag_values) cfg.set(k, v);
    for (const auto& a : assignments) {
      const auto eq = a.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + a + "'");
      cfg.set(a.substr(0, eq), a.substr(eq + 1));
    }
    if (command == "gen-data") return cmd_gen_data(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "train-sizer") return cmd_train_sizer(cfg);
    if (command == "sample") return cmd_sample(cfg);
    if (command == "eval") return cmd_eval(cfg);
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "paflow: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "paflow " << command << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}
