#include "paflow/trainer.hpp"

#include "paflow/diffcore.hpp"
#include "paflow/flowpath.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace paflow {

using diff::Var;

namespace {

constexpr std::uint64_t kSplitStream = 0x7A1;
constexpr std::uint64_t kEpochStream = 0x7A2;
constexpr std::uint64_t kStepStream = 0x7A3;
constexpr std::uint64_t kValidationStream = 0x7A4;

constexpr char kMagic[] = "PAFLOWCKPT";
constexpr std::size_t kMagicLength = sizeof(kMagic) - 1;

}  // namespace

void TrainConfig::validate() const {
  require(lambda_a >= 0 && omega_y >= 0, "train: loss weights must be nonnegative");
  require(lr > 0 && min_lr > 0 && lr_decay > 0 && lr_decay <= 1, "train: learning rates must be positive");
  require(lr_patience >= 1, "train: lr_patience must be >= 1");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "train: betas must be in [0, 1)");
  require(batch_size >= 1, "train: batch_size must be >= 1");
  require(clip_norm >= 0, "train: clip_norm must be nonnegative");
  require(max_steps >= 0, "train: max_steps must be nonnegative");
  require(eval_every >= 1, "train: eval_every must be >= 1");
  require(validation_fraction >= 0 && validation_fraction < 1, "train: validation_fraction must be in [0, 1)");
  require(validation_draws >= 1, "train: validation_draws must be >= 1");
  require(checkpoint_every >= 0, "train: checkpoint_every must be nonnegative");
  require(checkpoint_every == 0 || !checkpoint_path.empty(), "train: checkpoint_every needs checkpoint_path");
}

LossTerms record_loss(const EgnnParams& params, const ComplexRecord& record, double t, std::uint64_t seed,
                      const TrainConfig& config, const Schedules& schedules, std::vector<Matrix>* grads) {
  require(record.ligand.size() >= 1, "record_loss: ligand has no atoms");
  require(record.ligand.type_count() == params.config.type_count, "record_loss: ligand type count mismatch");
  const CenteredComplex cc = shift_to_protein_com(record.pocket, record.ligand.coords);
  const int k = params.config.type_count;

  // Noise in the pocket's canonical frame keeps the loss rotation invariant.
  Rng rng(seed);
  const Matrix noise = standard_normal(cc.ligand_coords.rows(), 3, rng) * canonical_frame(cc.pocket.coords).transpose();
  const Matrix x_t = corrupt_coordinates(cc.ligand_coords, t, schedules.coords, noise);
  const double abar = schedules.types.at(t).alpha_bar;
  const Matrix c_true = mix_types_with(record.ligand.types_onehot, abar);
  const Matrix a_t = gumbel_sample_types(c_true, mix_seed(seed, 1));

  diff::Tape tape;
  const auto weights = weight_leaves(tape, params, grads != nullptr);
  const EgnnInput input{cc.pocket.coords, cc.pocket.features(), x_t, a_t, t};
  const EgnnVars out = forward_on_tape(tape, params, weights, input, tape.constant(x_t));

  Var lx = diff::loss_coords(tape.constant(cc.ligand_coords), out.x_hat1);
  Var c_pred = diff::add_scalar(diff::scale(out.a_hat1, abar), (1.0 - abar) / k);
  Var la = diff::loss_types(tape.constant(c_true), c_pred);
  Var ly = diff::loss_affinity(tape.constant(Matrix::Constant(1, 1, record.affinity)), out.y_hat);
  Var total = diff::add(diff::add(lx, diff::scale(la, config.lambda_a)), diff::scale(ly, config.omega_y));

  LossTerms terms{lx.scalar(), la.scalar(), ly.scalar(), total.scalar()};
  if (!std::isfinite(terms.total)) throw NumericError("non-finite loss");
  if (grads) {
    tape.backward(total);
    if (grads->empty()) {
      for (const Matrix& m : params.tensors) grads->push_back(Matrix::Zero(m.rows(), m.cols()));
    }
    for (std::size_t i = 0; i < weights.size(); ++i) (*grads)[i] += tape.grad(weights[i]);
  }
  return terms;
}

StepReport train_step(EgnnParams& params, AdamState& adam, double lr, const std::vector<const ComplexRecord*>& batch,
                      const TrainConfig& config, std::uint64_t seed, const Schedules& schedules) {
  require(!batch.empty(), "train_step: empty batch");
  std::vector<Matrix> grads;
  StepReport report;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng(mix_seed(seed, 0, i));
    const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    LossTerms terms;
    try {
      terms = record_loss(params, *batch[i], t, mix_seed(seed, 1, i), config, schedules, &grads);
    } catch (const NumericError& e) {
      throw NumericError("train_step: batch record " + std::to_string(i) + ": " + e.what());
    }
    report.loss.coords += terms.coords;
    report.loss.types += terms.types;
    report.loss.affinity += terms.affinity;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  report.loss.coords *= inv;
  report.loss.types *= inv;
  report.loss.affinity *= inv;
  report.loss.total = report.loss.coords + config.lambda_a * report.loss.types + config.omega_y * report.loss.affinity;
  for (Matrix& g : grads) g *= inv;
  report.grad_norm = clip_global_norm(grads, config.clip_norm);
  report.lr = lr;
  adam_update(params.tensors, grads, adam, AdamConfig{lr, config.beta1, config.beta2, 1e-8});
  return report;
}

DataSplit split_dataset(std::size_t n, double validation_fraction, std::uint64_t seed) {
  if (n == 0) throw ConfigError("training dataset is empty");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, kSplitStream));
  std::shuffle(order.begin(), order.end(), rng);
  DataSplit split;
  if (n == 1) {
    split.train = split.validation = order;
    return split;
  }
  const std::size_t n_val =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(validation_fraction * n)), 1, n - 1);
  split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return split;
}

double validation_loss(const EgnnParams& params, const std::vector<ComplexRecord>& dataset,
                       const std::vector<std::size_t>& validation, const TrainConfig& config,
                       const Schedules& schedules) {
  require(!validation.empty(), "validation_loss: no validation records");
  double total = 0.0;
  for (std::size_t j = 0; j < validation.size(); ++j) {
    for (int d = 0; d < config.validation_draws; ++d) {
      const std::uint64_t s = mix_seed(config.seed, kValidationStream, j * 1000 + static_cast<std::uint64_t>(d));
      Rng rng(s);
      const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      total += record_loss(params, dataset[validation[j]], t, mix_seed(s, 1), config, schedules).total;
    }
  }
  return total / static_cast<double>(validation.size() * static_cast<std::size_t>(config.validation_draws));
}

Checkpoint initial_checkpoint(const EgnnConfig& egnn, const TrainConfig& config) {
  config.validate();
  Checkpoint c;
  c.egnn = EgnnParams::init(egnn, config.seed);
  c.adam = AdamState::zeros_like(c.egnn.tensors);
  c.lr = config.lr;
  c.decay = PlateauDecay{config.lr_decay, config.lr_patience, config.min_lr};
  return c;
}

Checkpoint train(const std::vector<ComplexRecord>& dataset, const TrainConfig& config, Checkpoint ckpt,
                 const Schedules& schedules, const TrainCallback& callback) {
  config.validate();
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  ckpt.egnn.validate();
  if (ckpt.adam.m.empty()) ckpt.adam = AdamState::zeros_like(ckpt.egnn.tensors);

  const DataSplit split = split_dataset(dataset.size(), config.validation_fraction, config.seed);
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::int64_t per_epoch = static_cast<std::int64_t>((split.train.size() + batch - 1) / batch);

  if (ckpt.step == 0 && ckpt.history.validation.empty()) {
    const double v = validation_loss(ckpt.egnn, dataset, split.validation, config, schedules);
    ckpt.lr = ckpt.decay.observe(v, ckpt.lr);
    ckpt.history.validation.push_back({0, v, ckpt.lr});
  }

  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order;
  while (ckpt.step < config.max_steps) {
    const std::int64_t s = ckpt.step;
    const std::int64_t epoch = s / per_epoch;
    if (epoch != cached_epoch) {
      order = split.train;
      Rng rng(mix_seed(config.seed, kEpochStream, static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
      cached_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(s % per_epoch) * batch;
    const std::size_t end = std::min(order.size(), begin + batch);
    std::vector<const ComplexRecord*> records;
    for (std::size_t i = begin; i < end; ++i) records.push_back(&dataset[order[i]]);

    StepReport r;
    try {
      r = train_step(ckpt.egnn, ckpt.adam, ckpt.lr, records, config,
                     mix_seed(config.seed, kStepStream, static_cast<std::uint64_t>(s)), schedules);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(s) + ": " + e.what());
    }
    ckpt.history.steps.push_back(r);
    ckpt.step = s + 1;

    if (ckpt.step % config.eval_every == 0) {
      const double v = validation_loss(ckpt.egnn, dataset, split.validation, config, schedules);
      ckpt.lr = ckpt.decay.observe(v, ckpt.lr);
      ckpt.history.validation.push_back({ckpt.step, v, ckpt.lr});
    }
    if (config.checkpoint_every > 0 && ckpt.step % config.checkpoint_every == 0) {
      save_checkpoint(config.checkpoint_path, ckpt);
    }
    if (callback && !callback(ckpt)) break;
  }
  return ckpt;
}

// ---------------------------------------------------------------- checkpoint

namespace {

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf_ += s;
  }
  void put_matrix(const Matrix& m) {
    put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    buf_.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void put_matrices(const std::vector<Matrix>& ms) {
    put<std::uint64_t>(ms.size());
    for (const auto& m : ms) put_matrix(m);
  }
  void put_doubles(const std::vector<double>& v) {
    put<std::uint64_t>(v.size());
    for (double x : v) put(x);
  }
  void section(const std::string& name, const Writer& body) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    buf_ += name;
    put<std::uint64_t>(body.buf_.size());
    buf_ += body.buf_;
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : data_(bytes), where_(std::move(where)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string() { return get_raw(checked_count(get<std::uint64_t>(), 1)); }
  Matrix get_matrix() {
    const auto rows = get<std::uint64_t>();
    const auto cols = get<std::uint64_t>();
    if (rows > (1u << 30) || cols > (1u << 30)) fail("implausible matrix shape");
    const std::size_t count = checked_count(rows * cols, sizeof(double));
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    std::memcpy(m.data(), data_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
    return m;
  }
  std::vector<Matrix> get_matrices() {
    const std::size_t n = checked_count(get<std::uint64_t>(), 16);
    std::vector<Matrix> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(get_matrix());
    return v;
  }
  std::vector<double> get_doubles() {
    const std::size_t n = checked_count(get<std::uint64_t>(), sizeof(double));
    std::vector<double> v(n);
    for (double& x : v) x = get<double>();
    return v;
  }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("checkpoint " + where_ + ": " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("truncated (needed " + std::to_string(n) + " more bytes)");
  }
  std::size_t checked_count(std::uint64_t n, std::size_t unit) const {
    if (n > (data_.size() - pos_) / unit) fail("truncated (length field exceeds remaining data)");
    return static_cast<std::size_t>(n);
  }

  const std::string& data_;
  std::string where_;
  std::size_t pos_ = 0;
};

Writer egnn_section(const EgnnParams& p) {
  Writer w;
  const EgnnConfig& c = p.config;
  for (int v : {c.hidden, c.heads, c.layers, c.knn_k, c.type_count, c.pocket_feature_dim}) w.put<std::int32_t>(v);
  w.put(c.gate_clip);
  w.put_matrices(p.tensors);
  return w;
}

EgnnParams read_egnn(Reader& r) {
  EgnnParams p;
  EgnnConfig& c = p.config;
  for (int* v : {&c.hidden, &c.heads, &c.layers, &c.knn_k, &c.type_count, &c.pocket_feature_dim}) {
    *v = r.get<std::int32_t>();
  }
  c.gate_clip = r.get<double>();
  p.tensors = r.get_matrices();
  try {
    p.validate();
  } catch (const ContractError& e) {
    r.fail(std::string("egnn section inconsistent: ") + e.what());
  }
  return p;
}

Writer sizer_section(const SizerParams& p) {
  Writer w;
  w.put_matrices(p.tensors);
  w.put(p.dropout);
  for (double v : p.feature_mean) w.put(v);
  for (double v : p.feature_std) w.put(v);
  w.put(p.n_min);
  w.put(p.n_max);
  w.put(p.delta);
  w.put_doubles(p.train_loss);
  w.put_doubles(p.validation_loss);
  w.put(p.validation_r2);
  return w;
}

SizerParams read_sizer(Reader& r) {
  SizerParams p;
  p.tensors = r.get_matrices();
  p.dropout = r.get<double>();
  for (double& v : p.feature_mean) v = r.get<double>();
  for (double& v : p.feature_std) v = r.get<double>();
  p.n_min = r.get<double>();
  p.n_max = r.get<double>();
  p.delta = r.get<double>();
  p.train_loss = r.get_doubles();
  p.validation_loss = r.get_doubles();
  p.validation_r2 = r.get<double>();
  try {
    p.validate();
  } catch (const ContractError& e) {
    r.fail(std::string("sizer section inconsistent: ") + e.what());
  }
  return p;
}

Writer optimizer_section(const Checkpoint& c) {
  Writer w;
  w.put<std::int64_t>(c.step);
  w.put<std::int64_t>(c.adam.step);
  w.put(c.lr);
  w.put(c.decay.factor);
  w.put<std::int32_t>(c.decay.patience);
  w.put(c.decay.min_lr);
  w.put(c.decay.best);
  w.put<std::uint8_t>(c.decay.has_best ? 1 : 0);
  w.put<std::int32_t>(c.decay.stale);
  w.put_matrices(c.adam.m);
  w.put_matrices(c.adam.v);
  return w;
}

void read_optimizer(Reader& r, Checkpoint& c) {
  c.step = r.get<std::int64_t>();
  c.adam.step = r.get<std::int64_t>();
  c.lr = r.get<double>();
  c.decay.factor = r.get<double>();
  c.decay.patience = r.get<std::int32_t>();
  c.decay.min_lr = r.get<double>();
  c.decay.best = r.get<double>();
  c.decay.has_best = r.get<std::uint8_t>() != 0;
  c.decay.stale = r.get<std::int32_t>();
  c.adam.m = r.get_matrices();
  c.adam.v = r.get_matrices();
}

Writer history_section(const TrainHistory& h) {
  Writer w;
  w.put<std::uint64_t>(h.steps.size());
  for (const auto& s : h.steps) {
    for (double v : {s.loss.coords, s.loss.types, s.loss.affinity, s.loss.total, s.grad_norm, s.lr}) w.put(v);
  }
  w.put<std::uint64_t>(h.validation.size());
  for (const auto& v : h.validation) {
    w.put<std::int64_t>(v.step);
    w.put(v.loss);
    w.put(v.lr);
  }
  return w;
}

TrainHistory read_history(Reader& r) {
  TrainHistory h;
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    StepReport s;
    for (double* v : {&s.loss.coords, &s.loss.types, &s.loss.affinity, &s.loss.total, &s.grad_norm, &s.lr}) {
      *v = r.get<double>();
    }
    h.steps.push_back(s);
  }
  const auto m = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < m; ++i) {
    ValidationPoint v;
    v.step = r.get<std::int64_t>();
    v.loss = r.get<double>();
    v.lr = r.get<double>();
    h.validation.push_back(v);
  }
  return h;
}

}  // namespace

std::string checkpoint_bytes(const Checkpoint& ckpt) {
  Writer out;
  out.bytes().append(kMagic, kMagicLength);
  out.put<std::uint32_t>(ckpt.version);
  std::uint32_t sections = 3;
  if (!ckpt.egnn.tensors.empty()) ++sections;
  if (ckpt.sizer) ++sections;
  out.put<std::uint32_t>(sections);
  if (!ckpt.egnn.tensors.empty()) out.section("egnn", egnn_section(ckpt.egnn));
  if (ckpt.sizer) out.section("sizer", sizer_section(*ckpt.sizer));
  out.section("optimizer", optimizer_section(ckpt));
  Writer config;
  config.put_string(ckpt.config_text);
  out.section("config", config);
  out.section("history", history_section(ckpt.history));
  return std::move(out.bytes());
}

Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  Reader r(bytes, "header");
  if (bytes.size() < kMagicLength || bytes.compare(0, kMagicLength, kMagic) != 0) {
    throw ParseError("not a paflow checkpoint (missing PAFLOWCKPT magic)");
  }
  r.get_raw(kMagicLength);
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw ParseError("checkpoint version " + std::to_string(c.version) + " is not supported (this build reads version " +
                     std::to_string(kCheckpointVersion) + ")");
  }
  const auto sections = r.get<std::uint32_t>();
  bool saw_optimizer = false, saw_config = false, saw_history = false;
  for (std::uint32_t i = 0; i < sections; ++i) {
    const std::string name = r.get_raw(r.get<std::uint32_t>());
    const std::string body = r.get_raw(static_cast<std::size_t>(r.get<std::uint64_t>()));
    Reader s(body, "section '" + name + "'");
    if (name == "egnn") {
      c.egnn = read_egnn(s);
    } else if (name == "sizer") {
      c.sizer = read_sizer(s);
    } else if (name == "optimizer") {
      read_optimizer(s, c);
      saw_optimizer = true;
    } else if (name == "config") {
      c.config_text = s.get_string();
      saw_config = true;
    } else if (name == "history") {
      c.history = read_history(s);
      saw_history = true;
    } else {
      r.fail("unknown section '" + name + "'");
    }
    if (!s.done()) s.fail("trailing bytes in section");
  }
  if (!r.done()) r.fail("trailing bytes after last section");
  if (!saw_optimizer || !saw_config || !saw_history) r.fail("missing required section");
  if (!c.egnn.tensors.empty() && c.adam.m.size() != c.egnn.tensors.size() && !c.adam.m.empty()) {
    r.fail("optimizer moments do not match the network");
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = checkpoint_bytes(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("failed writing checkpoint '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw ConfigError("cannot move checkpoint into '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint '" + path + "' not found");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return checkpoint_from_bytes(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace paflow
