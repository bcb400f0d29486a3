#include "paflow/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace paflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return out = true, true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return out = false, true;
  return false;
}

bool valid_value(RunConfig::Kind kind, const std::string& v) {
  std::size_t used = 0;
  try {
    switch (kind) {
      case RunConfig::Kind::integer:
        std::stoll(v, &used);
        return used == v.size();
      case RunConfig::Kind::real:
        std::stod(v, &used);
        return used == v.size();
      case RunConfig::Kind::boolean: {
        bool b = false;
        return parse_bool(v, b);
      }
      case RunConfig::Kind::text:
        return true;
    }
  } catch (const std::exception&) {
    return false;
  }
  return false;
}

const char* kind_name(RunConfig::Kind kind) {
  switch (kind) {
    case RunConfig::Kind::integer:
      return "an integer";
    case RunConfig::Kind::real:
      return "a number";
    case RunConfig::Kind::boolean:
      return "true or false";
    case RunConfig::Kind::text:
      return "text";
  }
  return "?";
}

}  // namespace

RunConfig RunConfig::defaults() {
  using K = Kind;
  RunConfig c;
  c.entries_ = {
      {"seed", K::integer, "0", "base seed for every random stream"},
      // data
      {"n_complexes", K::integer, "200", "synthetic training complexes written by gen-data"},
      {"n_test_pockets", K::integer, "5", "synthetic held-out pockets written by gen-data"},
      {"data_path", K::text, "data/complexes.txt", "training complexes"},
      {"test_path", K::text, "data/test_complexes.txt", "held-out complexes used by sample and eval"},
      // network
      {"hidden", K::integer, "128", "hidden width"},
      {"heads", K::integer, "16", "attention heads"},
      {"layers", K::integer, "9", "message-passing layers"},
      {"knn_k", K::integer, "32", "neighbours per node"},
      {"type_count", K::integer, "8", "ligand atom types"},
      {"gate_clip", K::real, "10", "per-edge bound on the coordinate gate"},
      // schedules
      {"coord_schedule", K::text, "sigmoid", "coordinate schedule: sigmoid or cosine"},
      {"coord_beta_lo", K::real, "1e-7", "sigmoid beta at the data end"},
      {"coord_beta_hi", K::real, "2e-3", "sigmoid beta at the prior end"},
      {"coord_beta_scale", K::real, "8", "multiplier on every sigmoid beta"},
      {"coord_s_offset", K::real, "0.01", "cosine offset s"},
      {"type_schedule", K::text, "cosine", "type schedule: sigmoid or cosine"},
      {"type_beta_lo", K::real, "1e-7", "sigmoid beta at the data end"},
      {"type_beta_hi", K::real, "2e-3", "sigmoid beta at the prior end"},
      {"type_beta_scale", K::real, "8", "multiplier on every sigmoid beta"},
      {"type_s_offset", K::real, "0.01", "cosine offset s"},
      {"schedule_grid", K::integer, "1000", "schedule table resolution"},
      // training
      {"lambda_a", K::real, "100", "type loss weight"},
      {"omega_y", K::real, "1", "affinity loss weight"},
      {"lr", K::real, "5e-4", "initial learning rate"},
      {"lr_decay", K::real, "0.95", "learning-rate factor on plateau"},
      {"lr_patience", K::integer, "15", "validation evaluations without improvement before decay"},
      {"min_lr", K::real, "1e-6", "learning-rate floor"},
      {"beta1", K::real, "0.95", "Adam beta1"},
      {"beta2", K::real, "0.999", "Adam beta2"},
      {"batch_size", K::integer, "4", "complexes per step"},
      {"clip_norm", K::real, "8", "global gradient norm bound"},
      {"max_steps", K::integer, "2000", "total optimizer steps"},
      {"eval_every", K::integer, "50", "steps between validation evaluations"},
      {"validation_fraction", K::real, "0.05", "held-out share of the training data"},
      {"validation_draws", K::integer, "4", "(t, noise) draws per validation complex"},
      {"checkpoint_every", K::integer, "0", "steps between checkpoint writes (0 = end only)"},
      {"checkpoint", K::text, "ckpt/model.ckpt", "checkpoint file"},
      {"resume", K::boolean, "false", "continue training from the checkpoint file"},
      // sizer
      {"sizer_epochs", K::integer, "200", "atom-count predictor epochs"},
      {"sizer_lr", K::real, "5e-4", "predictor learning rate"},
      {"sizer_batch_size", K::integer, "256", "predictor batch size"},
      {"sizer_dropout", K::real, "0.1", "predictor dropout rate"},
      {"sizer_decay", K::real, "0.8", "predictor learning-rate factor on plateau"},
      {"sizer_patience", K::integer, "5", "predictor plateau patience (epochs)"},
      {"sizer_min_lr", K::real, "1e-5", "predictor learning-rate floor"},
      {"sizer_validation_fraction", K::real, "0.2", "predictor held-out share"},
      {"grid_step", K::real, "0.5", "cavity grid spacing (A)"},
      // sampling
      {"steps", K::integer, "50", "Euler steps"},
      {"gamma", K::real, "350", "guidance scale"},
      {"delta", K::real, "0.01", "std of the noise on the normalized atom count"},
      {"molecules_per_pocket", K::integer, "10", "molecules sampled per pocket"},
      {"size_mode", K::text, "predictor", "atom counts from: predictor, reference or predefined"},
      {"stochastic_final", K::boolean, "false", "draw final types from c instead of argmax"},
      {"fresh_type_noise", K::boolean, "false", "new Gumbel noise every step"},
      {"record_trajectory", K::boolean, "false", "write one trajectory file per molecule"},
      {"out_dir", K::text, "out/molecules", "molecule output directory"},
      {"workers", K::integer, "1", "sampling threads"},
      // evaluation
      {"report_path", K::text, "", "also write the eval report here"},
  };
  return c;
}

const RunConfig::Entry& RunConfig::find(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.key == key) return e;
  }
  throw UsageError("unknown config key '" + key + "'");
}

bool RunConfig::has(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
  if (it == entries_.end()) throw UsageError("unknown config key '" + key + "'");
  const std::string v = trim(value);
  if (!valid_value(it->kind, v)) {
    throw UsageError("config key '" + key + "' expects " + kind_name(it->kind) + ", got '" + value + "'");
  }
  it->value = v;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file '" + path + "' not found");
  std::ostringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path);
}

void RunConfig::apply_environment() {
  if (const char* s = std::getenv("PAFLOW_SEED")) {
    try {
      set("seed", s);
    } catch (const UsageError&) {
      throw UsageError(std::string("PAFLOW_SEED must be an integer, got '") + s + "'");
    }
  }
}

std::int64_t RunConfig::get_int(const std::string& key) const { return std::stoll(find(key).value); }

std::uint64_t RunConfig::get_seed() const {
  const std::int64_t s = get_int("seed");
  if (s < 0) throw UsageError("seed must be nonnegative");
  return static_cast<std::uint64_t>(s);
}

double RunConfig::get_double(const std::string& key) const { return std::stod(find(key).value); }

bool RunConfig::get_bool(const std::string& key) const {
  bool b = false;
  parse_bool(find(key).value, b);
  return b;
}

const std::string& RunConfig::get_string(const std::string& key) const { return find(key).value; }

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& e : entries_) out += e.key + " = " + e.value + "\n";
  return out;
}

EgnnConfig RunConfig::egnn_config() const {
  EgnnConfig c;
  c.hidden = static_cast<int>(get_int("hidden"));
  c.heads = static_cast<int>(get_int("heads"));
  c.layers = static_cast<int>(get_int("layers"));
  c.knn_k = static_cast<int>(get_int("knn_k"));
  c.type_count = static_cast<int>(get_int("type_count"));
  c.gate_clip = get_double("gate_clip");
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lambda_a = get_double("lambda_a");
  t.omega_y = get_double("omega_y");
  t.lr = get_double("lr");
  t.lr_decay = get_double("lr_decay");
  t.lr_patience = static_cast<int>(get_int("lr_patience"));
  t.min_lr = get_double("min_lr");
  t.beta1 = get_double("beta1");
  t.beta2 = get_double("beta2");
  t.batch_size = static_cast<int>(get_int("batch_size"));
  t.clip_norm = get_double("clip_norm");
  t.max_steps = static_cast<int>(get_int("max_steps"));
  t.seed = get_seed();
  t.eval_every = static_cast<int>(get_int("eval_every"));
  t.validation_fraction = get_double("validation_fraction");
  t.validation_draws = static_cast<int>(get_int("validation_draws"));
  t.checkpoint_every = static_cast<int>(get_int("checkpoint_every"));
  t.checkpoint_path = get_string("checkpoint");
  try {
    t.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return t;
}

SizerConfig RunConfig::sizer_config() const {
  SizerConfig s;
  s.lr = get_double("sizer_lr");
  s.batch_size = static_cast<int>(get_int("sizer_batch_size"));
  s.dropout = get_double("sizer_dropout");
  s.decay = get_double("sizer_decay");
  s.patience = static_cast<int>(get_int("sizer_patience"));
  s.min_lr = get_double("sizer_min_lr");
  s.validation_fraction = get_double("sizer_validation_fraction");
  s.delta = get_double("delta");
  s.beta1 = get_double("beta1");
  s.beta2 = get_double("beta2");
  if (s.lr <= 0 || s.batch_size < 1 || s.dropout < 0 || s.dropout >= 1 || s.validation_fraction <= 0 ||
      s.validation_fraction >= 1 || s.delta < 0) {
    throw UsageError("invalid sizer settings (check sizer_* keys and delta)");
  }
  return s;
}

SamplerConfig RunConfig::sampler_config() const {
  SamplerConfig s;
  s.steps = static_cast<int>(get_int("steps"));
  s.gamma = get_double("gamma");
  s.delta = get_double("delta");
  s.seed = get_seed();
  s.record_trajectory = get_bool("record_trajectory");
  s.stochastic_final = get_bool("stochastic_final");
  s.fresh_type_noise = get_bool("fresh_type_noise");
  try {
    s.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return s;
}

Schedules RunConfig::schedules() const {
  auto build = [&](const std::string& prefix) {
    ScheduleParams p;
    try {
      p.kind = parse_schedule_kind(get_string(prefix + "_schedule"));
    } catch (const std::exception&) {
      throw UsageError(prefix + "_schedule must be sigmoid or cosine");
    }
    p.grid_size = static_cast<int>(get_int("schedule_grid"));
    p.beta_lo = get_double(prefix + "_beta_lo");
    p.beta_hi = get_double(prefix + "_beta_hi");
    p.beta_scale = get_double(prefix + "_beta_scale");
    p.s_offset = get_double(prefix + "_s_offset");
    try {
      return VarianceSchedule::build(p);
    } catch (const ContractError& e) {
      throw UsageError(prefix + " schedule: " + e.what());
    }
  };
  return {build("coord"), build("type")};
}

}  // namespace paflow
