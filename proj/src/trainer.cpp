#include "tempo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "tempo/config.hpp"
#include "tempo/error.hpp"

namespace tempo::train {

std::string to_string(Task t) { return t == Task::Lm ? "lm" : "cl"; }

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Scratch: return "scratch";
    case Mode::JointFinetune: return "joint-finetune";
    case Mode::TempnetOnly: return "tempnet-only";
  }
  return "?";
}

std::string to_string(LossKind k) { return k == LossKind::Robust ? "robust" : "baseline"; }

void TrainConfig::validate() const {
  if (!(base_lr >= 0.0) || !(tempnet_lr >= 0.0)) throw ValidationError("train: learning rates must be nonnegative");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ValidationError("train.warmup_fraction must be in (0, 1)");
  if (total_steps < 1) throw ValidationError("train.total_steps must be positive");
  if (batch_size < 1) throw ValidationError("train.batch_size must be positive");
  if (eval_every < 1) throw ValidationError("train.eval_every must be positive");
  if (checkpoint_every < 0 || stop_after < 0 || stop_after > total_steps)
    throw ValidationError("train.checkpoint_every / train.stop_after out of range");
  try {
    AdamConfig{beta1, beta2, eps, weight_decay}.validate();
  } catch (const DomainError& e) {
    throw ValidationError(e.what());
  }
}

void RunConfig::validate() const {
  train.validate();
  try {
    dro.validate();
  } catch (const DomainError& e) {
    throw ValidationError(std::string("dro: ") + e.what());
  }
  if (loss == LossKind::Robust && !(dro.rho > 0.0)) throw ValidationError("dro.rho must be positive for the robust loss");
  if (!(fixed_tau > 0.0)) throw ValidationError("loss.fixed_tau must be positive");
  if (task == Task::Lm && corpus.empty()) throw ValidationError("data.corpus is required for the lm task");
  if (task == Task::Cl && train_pairs.empty()) throw ValidationError("data.train_pairs is required for the cl task");
  if (task == Task::Cl && eval_pairs.empty()) throw ValidationError("data.eval_pairs is required for the cl task");
  if (mode != Mode::Scratch && init_checkpoint.empty())
    throw ValidationError("run.init_checkpoint is required for mode " + to_string(mode));
  if (mode == Mode::TempnetOnly && loss == LossKind::Baseline)
    throw ValidationError("tempnet-only mode needs the robust loss");
  if (eval_batch < 1) throw ValidationError("eval.batch must be positive");
  if (tau_max_eval != 0.0 && !(tau_max_eval > dro.tau0)) throw ValidationError("eval.tau_max_eval must exceed dro.tau0");
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", static_cast<long long>(r.step),
                r.loss, r.eval_metric, r.tau_mean, r.tau_min, r.tau_max, r.lr_model, r.lr_tempnet);
  return buf;
}

double EvalResult::tau_mean() const {
  if (taus.empty()) return 0.0;
  return std::accumulate(taus.begin(), taus.end(), 0.0) / static_cast<double>(taus.size());
}
double EvalResult::tau_min() const { return taus.empty() ? 0.0 : *std::min_element(taus.begin(), taus.end()); }
double EvalResult::tau_max() const { return taus.empty() ? 0.0 : *std::max_element(taus.begin(), taus.end()); }

std::uint64_t params_hash(const NamedTensors& tensors) {
  std::string bytes;
  for (const auto& [name, t] : tensors) {
    bytes += name;
    bytes += t.shape_string();
    bytes.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  return fnv1a(bytes);
}

namespace {

net::TempNet with_tau_max(net::TempNet n, double tau_max_eval) {
  if (tau_max_eval > 0.0) n.cfg.tau_max = tau_max_eval;
  return n;
}

template <typename Named>
NamedTensors snapshot(const Named& named, const std::string& prefix = "") {
  NamedTensors out;
  for (const auto& [name, t] : named) out.emplace_back(prefix + name, *t);
  return out;
}

template <typename Named>
void restore(Named named, const NamedTensors& from, const std::string& section, const std::string& prefix = "") {
  for (auto& [name, t] : named) {
    const auto& src = find_tensor(from, prefix + name, section);
    if (!src.same_shape(*t) && !t->shape().empty())
      throw IntegrityError(section, "tensor '" + prefix + name + "' has shape " + src.shape_string() + ", expected " +
                                        t->shape_string());
    *t = src;
  }
}

}  // namespace

EvalResult evaluate_lm(const LmBundle& b, const std::vector<data::TokenBatch>& eval, double fixed_tau,
                       double tau_max_eval) {
  std::optional<net::TempNet> scaled;
  if (b.tempnet) scaled = with_tau_max(*b.tempnet, tau_max_eval);
  const auto source = scaled ? models::TemperatureSource::network(*scaled) : models::TemperatureSource::constant(fixed_tau);
  EvalResult r;
  double nll = 0.0;
  for (const auto& batch : eval) {
    const auto logits = models::lm_logits(b.lm, batch);
    const auto tau = models::temperatures(source, logits);
    const auto targets = batch.targets();
    std::vector<double> scaled_row(logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      const auto row = logits.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) scaled_row[j] = row[j] / tau[i];
      nll += dro::stable_logsumexp(scaled_row) - scaled_row[targets[i]];
    }
    r.taus.insert(r.taus.end(), tau.begin(), tau.end());
  }
  if (r.taus.empty()) throw DomainError("evaluation data is empty");
  r.metric = std::exp(nll / static_cast<double>(r.taus.size()));
  return r;
}

EvalResult evaluate_cl(const ClBundle& b, const data::PairBatch& eval, double fixed_tau, double tau_max_eval) {
  EvalResult r;
  r.recall = models::recall_at_k(b.towers, eval, 1);
  r.metric = 0.5 * (r.recall.image_retrieval + r.recall.text_retrieval);
  if (b.tempnet_image && b.tempnet_text) {
    const auto [img, txt] = models::encode(b.towers, eval);
    for (const auto* side : {&*b.tempnet_image, &*b.tempnet_text}) {
      const auto net = with_tau_max(*side, tau_max_eval);
      ad::Tape tape;
      const auto tau = net::forward(net.cfg, net::bind(tape, net.params, false),
                                    tape.constant(side == &*b.tempnet_image ? img : txt));
      r.taus.insert(r.taus.end(), tau.value().values().begin(), tau.value().values().end());
    }
  } else {
    r.taus.assign(2 * eval.size(), fixed_tau);
  }
  return r;
}

namespace {

net::TempNetConfig llm_tempnet_cfg(const RunConfig& cfg, std::size_t vocab) {
  return {net::Variant::LlmLogits, vocab, cfg.tempnet_d1, cfg.tempnet_d2, cfg.dro.tau0, cfg.dro.tau_max, cfg.dro.rho};
}

net::TempNetConfig cl_tempnet_cfg(const RunConfig& cfg) {
  return {net::Variant::ClEmbedding, cfg.tower_embed, cfg.tempnet_d1, cfg.tempnet_d2,
          cfg.dro.tau0,              cfg.dro.tau_max, cfg.dro.rho};
}

models::LmConfig lm_cfg(const RunConfig& cfg, std::size_t vocab) { return {vocab, cfg.d_model, cfg.d_ff, cfg.context}; }

}  // namespace

LmBundle lm_from_checkpoint(const Checkpoint& c) {
  if (c.task != "lm") throw IntegrityError("meta", "checkpoint task is '" + c.task + "', expected lm");
  const auto cfg = config::parse(c.config_text, {}, "checkpoint config");
  LmBundle b;
  b.vocab = data::Vocab(std::vector<char32_t>(c.vocab.begin(), c.vocab.end()));
  b.lm.cfg = lm_cfg(cfg, b.vocab.size());
  restore(b.lm.params.named(), c.model, "model");
  if (!c.tempnet.empty()) {
    net::TempNet n{llm_tempnet_cfg(cfg, b.vocab.size()), {}};
    restore(n.params.named(), c.tempnet, "tempnet");
    b.tempnet = std::move(n);
  }
  return b;
}

ClBundle cl_from_checkpoint(const Checkpoint& c) {
  if (c.task != "cl") throw IntegrityError("meta", "checkpoint task is '" + c.task + "', expected cl");
  const auto cfg = config::parse(c.config_text, {}, "checkpoint config");
  ClBundle b;
  const auto& w1 = find_tensor(c.model, "image.W1", "model");
  const auto& t1 = find_tensor(c.model, "text.W1", "model");
  b.towers.cfg = {w1.cols(), t1.cols(), cfg.tower_hidden, cfg.tower_embed};
  restore(b.towers.params.named(), c.model, "model");
  if (!c.tempnet.empty()) {
    net::TempNet img{cl_tempnet_cfg(cfg), {}}, txt{cl_tempnet_cfg(cfg), {}};
    restore(img.params.named(), c.tempnet, "tempnet", "image.");
    restore(txt.params.named(), c.tempnet, "tempnet", "text.");
    b.tempnet_image = std::move(img);
    b.tempnet_text = std::move(txt);
  }
  return b;
}

namespace {

void fill_bundle(Checkpoint& c, const LmBundle& b) {
  c.vocab.assign(b.vocab.symbols().begin(), b.vocab.symbols().end());
  c.model = snapshot(b.lm.params.named());
  if (b.tempnet) c.tempnet = snapshot(b.tempnet->params.named());
}

void fill_bundle(Checkpoint& c, const ClBundle& b) {
  c.model = snapshot(b.towers.params.named());
  if (b.tempnet_image) {
    c.tempnet = snapshot(b.tempnet_image->params.named(), "image.");
    const auto txt = snapshot(b.tempnet_text->params.named(), "text.");
    c.tempnet.insert(c.tempnet.end(), txt.begin(), txt.end());
  }
}

template <typename Bundle>
Checkpoint make_bundle_checkpoint(const Bundle& b, RunConfig cfg) {
  cfg.resume.clear();
  cfg.train.stop_after = 0;
  Checkpoint c;
  c.task = to_string(cfg.task);
  c.config_text = config::render(cfg);
  c.config_hash = fnv1a(c.config_text);
  fill_bundle(c, b);
  return c;
}

}  // namespace

Checkpoint bundle_checkpoint(const LmBundle& b, const RunConfig& cfg) { return make_bundle_checkpoint(b, cfg); }
Checkpoint bundle_checkpoint(const ClBundle& b, const RunConfig& cfg) { return make_bundle_checkpoint(b, cfg); }

std::vector<data::TokenBatch> lm_eval_batches(const RunConfig& cfg, const data::Corpus& corpus) {
  auto out = data::sequential_windows(corpus.valid, cfg.context, cfg.eval_batch, cfg.eval_windows);
  if (out.empty()) throw ValidationError("validation split of " + cfg.corpus.string() + " is shorter than one window");
  return out;
}

void write_lm_temperatures(const std::filesystem::path& path, const std::vector<data::TokenBatch>& eval,
                           const EvalResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "index,target,tau\n";
  std::size_t i = 0;
  char buf[64];
  for (const auto& batch : eval)
    for (std::size_t t : batch.targets()) {
      std::snprintf(buf, sizeof buf, "%.17g", r.taus.at(i));
      out << i++ << ',' << t << ',' << buf << '\n';
    }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_cl_temperatures(const std::filesystem::path& path, const EvalResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "index,side,tau\n";
  const std::size_t n = r.taus.size() / 2;
  char buf[64];
  for (std::size_t i = 0; i < r.taus.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", r.taus[i]);
    out << i % n << ',' << (i < n ? "image" : "text") << ',' << buf << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

// One optimizer parameter group.
struct Group {
  std::string name;
  std::vector<std::pair<std::string, Tensor*>> params;
  std::vector<bool> decay;
  AdamState state;
  double base_lr = 0.0;
  bool frozen = false;

  void setup() {
    std::vector<const Tensor*> ptrs;
    decay.clear();
    for (auto& [n, t] : params) {
      ptrs.push_back(t);
      decay.push_back(t->rank() == 2);
    }
    state = make_adam_state(ptrs);
  }
  std::vector<Tensor*> tensors() const {
    std::vector<Tensor*> out;
    for (const auto& [n, t] : params) out.push_back(t);
    return out;
  }
};

class TaskRunner {
 public:
  virtual ~TaskRunner() = default;
  /// Loss on a fresh batch; fills gradients for the non-frozen groups.
  virtual double step(std::mt19937_64& rng, bool model_trainable, std::vector<Tensor>& model_grads,
                      std::vector<Tensor>& tempnet_grads) = 0;
  virtual EvalResult evaluate() const = 0;
  virtual std::vector<std::pair<std::string, Tensor*>> model_params() = 0;
  virtual std::vector<std::pair<std::string, Tensor*>> tempnet_params() = 0;
  virtual void fill(Checkpoint& c) const = 0;
  virtual void write_temperatures(const std::filesystem::path& path, const EvalResult& r) const = 0;
};

void clamp_phi(std::vector<std::pair<std::string, Tensor*>> params) {
  for (auto& [name, t] : params)
    if (name == "phi" || name.ends_with(".phi")) (*t)[0] = std::max((*t)[0], 1e-6);
}

// Prefixes I/O failures with the config key that named the file.
template <typename F>
auto keyed(const char* key, F&& load) {
  try {
    return load();
  } catch (const IoError& e) {
    throw IoError(std::string(key) + ": " + e.what());
  }
}

class LmRunner : public TaskRunner {
 public:
  LmRunner(const RunConfig& cfg, const Checkpoint* foundation) : cfg_(cfg) {
    if (foundation != nullptr) {
      auto b = lm_from_checkpoint(*foundation);
      bundle_.vocab = b.vocab;
      bundle_.lm = std::move(b.lm);
      if (bundle_.lm.cfg != lm_cfg(cfg, bundle_.vocab.size()))
        throw ValidationError("model.* settings differ from the foundation checkpoint");
      corpus_ = keyed("data.corpus", [&] { return data::load_corpus(cfg.corpus, bundle_.vocab, cfg.valid_fraction); });
    } else {
      corpus_ = keyed("data.corpus", [&] { return data::load_corpus(cfg.corpus, cfg.valid_fraction); });
      bundle_.vocab = corpus_.vocab;
      bundle_.lm = models::init_lm(lm_cfg(cfg, bundle_.vocab.size()), cfg.train.seed);
    }
    if (cfg.loss == LossKind::Robust)
      bundle_.tempnet = net::init_llm_tempnet(llm_tempnet_cfg(cfg, bundle_.vocab.size()), cfg.train.seed + 1);
    eval_ = lm_eval_batches(cfg, corpus_);
  }

  double step(std::mt19937_64& rng, bool model_trainable, std::vector<Tensor>& model_grads,
              std::vector<Tensor>& tempnet_grads) override {
    const auto batch = data::sample_windows(corpus_.train, cfg_.context, cfg_.train.batch_size, rng);
    const auto targets = batch.targets();
    ad::Tape tape;
    const auto lv = models::bind(tape, bundle_.lm.params, model_trainable);
    auto logits = models::lm_logits(bundle_.lm.cfg, lv, batch);
    ad::Var loss;
    net::TempNetVars tv;
    if (bundle_.tempnet) {
      tv = net::bind(tape, bundle_.tempnet->params, true);
      loss = models::robust_softmax_loss(logits, targets, bundle_.tempnet->cfg, tv, cfg_.dro.rho).loss;
    } else {
      loss = models::baseline_ce_loss(ad::scale(logits, 1.0 / cfg_.fixed_tau), targets);
    }
    const double value = loss.value().item();
    if (!std::isfinite(value)) return value;
    tape.backward(loss);
    model_grads.clear();
    tempnet_grads.clear();
    if (model_trainable)
      for (const auto& v : lv.vars) model_grads.push_back(tape.grad(v));
    if (bundle_.tempnet)
      for (const auto& v : {tv.W1, tv.b1, tv.W2, tv.w3, tv.phi, tv.b}) tempnet_grads.push_back(tape.grad(v));
    return value;
  }

  EvalResult evaluate() const override { return evaluate_lm(bundle_, eval_, cfg_.fixed_tau, cfg_.tau_max_eval); }

  std::vector<std::pair<std::string, Tensor*>> model_params() override { return bundle_.lm.params.named(); }
  std::vector<std::pair<std::string, Tensor*>> tempnet_params() override {
    if (!bundle_.tempnet) return {};
    return bundle_.tempnet->params.named();
  }

  void fill(Checkpoint& c) const override { fill_bundle(c, bundle_); }

  void write_temperatures(const std::filesystem::path& path, const EvalResult& r) const override {
    write_lm_temperatures(path, eval_, r);
  }

 private:
  RunConfig cfg_;
  data::Corpus corpus_;
  LmBundle bundle_;
  std::vector<data::TokenBatch> eval_;
};

class ClRunner : public TaskRunner {
 public:
  ClRunner(const RunConfig& cfg, const Checkpoint* foundation) : cfg_(cfg) {
    train_ = keyed("data.train_pairs", [&] { return data::read_pairs_csv(cfg.train_pairs); });
    eval_ = keyed("data.eval_pairs", [&] { return data::read_pairs_csv(cfg.eval_pairs); });
    train_.validate();
    eval_.validate();
    if (cfg.train.batch_size < 2 || cfg.train.batch_size > train_.size())
      throw ValidationError("train.batch_size must be in [2, " + std::to_string(train_.size()) + "] for the cl task");
    const models::TowerConfig tcfg{train_.images.cols(), train_.texts.cols(), cfg.tower_hidden, cfg.tower_embed};
    if (foundation != nullptr) {
      bundle_.towers = cl_from_checkpoint(*foundation).towers;
      if (bundle_.towers.cfg != tcfg)
        throw ValidationError("model.* settings or feature widths differ from the foundation checkpoint");
    } else {
      bundle_.towers = models::init_two_tower(tcfg, cfg.train.seed);
    }
    if (cfg.loss == LossKind::Robust) {
      bundle_.tempnet_image = init_tempnet(true);
      bundle_.tempnet_text = init_tempnet(false);
    }
  }

  double step(std::mt19937_64& rng, bool model_trainable, std::vector<Tensor>& model_grads,
              std::vector<Tensor>& tempnet_grads) override {
    const auto batch = train_.select(sample_rows(rng, cfg_.train.batch_size));
    ad::Tape tape;
    const auto tv = models::bind(tape, bundle_.towers.params, model_trainable);
    const auto e = models::encode(bundle_.towers.cfg, tv, batch);
    ad::Var loss;
    net::TempNetVars vi, vt;
    if (bundle_.tempnet_image) {
      vi = net::bind(tape, bundle_.tempnet_image->params, true);
      vt = net::bind(tape, bundle_.tempnet_text->params, true);
      loss = models::robust_gcl_loss(e, bundle_.tempnet_image->cfg, vi, bundle_.tempnet_text->cfg, vt, cfg_.dro.rho).loss;
    } else {
      loss = models::baseline_gcl_loss(e, cfg_.fixed_tau, cfg_.fixed_tau);
    }
    const double value = loss.value().item();
    if (!std::isfinite(value)) return value;
    tape.backward(loss);
    model_grads.clear();
    tempnet_grads.clear();
    if (model_trainable)
      for (const auto& v : tv.vars) model_grads.push_back(tape.grad(v));
    if (bundle_.tempnet_image)
      for (const auto* side : {&vi, &vt})
        for (const auto& v : {side->W1, side->b1, side->W2, side->w3, side->phi, side->b})
          tempnet_grads.push_back(tape.grad(v));
    return value;
  }

  EvalResult evaluate() const override { return evaluate_cl(bundle_, eval_, cfg_.fixed_tau, cfg_.tau_max_eval); }

  std::vector<std::pair<std::string, Tensor*>> model_params() override { return bundle_.towers.params.named(); }
  std::vector<std::pair<std::string, Tensor*>> tempnet_params() override {
    if (!bundle_.tempnet_image) return {};
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [n, t] : bundle_.tempnet_image->params.named()) out.emplace_back("image." + n, t);
    for (auto& [n, t] : bundle_.tempnet_text->params.named()) out.emplace_back("text." + n, t);
    return out;
  }

  void fill(Checkpoint& c) const override { fill_bundle(c, bundle_); }

  void write_temperatures(const std::filesystem::path& path, const EvalResult& r) const override {
    write_cl_temperatures(path, r);
  }

 private:
  // Partial Fisher-Yates over all training rows, driven only by rng.
  std::vector<std::size_t> sample_rows(std::mt19937_64& rng, std::size_t k) const {
    std::vector<std::size_t> idx(train_.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    return idx;
  }

  net::TempNet init_tempnet(bool image_side) const {
    const auto tcfg = cl_tempnet_cfg(cfg_);
    const std::uint64_t seed = cfg_.train.seed + (image_side ? 1 : 2);
    auto net = net::init_cl_tempnet(tcfg, seed);
    if (!cfg_.prototypes_from_samples) return net;
    // Prototypes start at the transformation outputs of randomly drawn items.
    std::mt19937_64 rng(seed + 100);
    const auto rows = sample_rows(rng, std::min(tcfg.d2, train_.size()));
    if (rows.size() < tcfg.d2) return net;
    const auto [img, txt] = models::encode(bundle_.towers, train_.select(rows));
    const auto& e = image_side ? img : txt;
    Tensor v({tcfg.d2, tcfg.d1});
    for (std::size_t r = 0; r < tcfg.d2; ++r)
      for (std::size_t i = 0; i < tcfg.d1; ++i) {
        double acc = net.params.b1[i];
        for (std::size_t j = 0; j < tcfg.d0; ++j) acc += net.params.W1.at(i, j) * e.at(r, j);
        v.at(r, i) = std::max(acc, 0.0);
      }
    return net::init_cl_tempnet(tcfg, seed, &v);
  }

  RunConfig cfg_;
  data::PairBatch train_;
  data::PairBatch eval_;
  ClBundle bundle_;
};

std::unique_ptr<TaskRunner> make_runner(const RunConfig& cfg, const Checkpoint* foundation) {
  if (cfg.task == Task::Lm) return std::make_unique<LmRunner>(cfg, foundation);
  return std::make_unique<ClRunner>(cfg, foundation);
}

// Configuration text that identifies a run for resumption.
std::string identity_config(RunConfig cfg) {
  cfg.resume.clear();
  cfg.train.stop_after = 0;
  return config::render(cfg);
}

void save_optimizer(Checkpoint& c, const std::vector<Group>& groups) {
  c.optimizer.clear();
  c.optimizer_steps.clear();
  for (const auto& g : groups) {
    c.optimizer_steps.push_back(g.state.step);
    for (std::size_t i = 0; i < g.params.size(); ++i) {
      c.optimizer.emplace_back(g.name + ".m." + g.params[i].first, g.state.m[i]);
      c.optimizer.emplace_back(g.name + ".v." + g.params[i].first, g.state.v[i]);
    }
  }
}

void load_optimizer(const Checkpoint& c, std::vector<Group>& groups) {
  if (c.optimizer_steps.size() != groups.size()) throw IntegrityError("optimizer", "group count mismatch");
  for (std::size_t k = 0; k < groups.size(); ++k) {
    auto& g = groups[k];
    g.state.step = c.optimizer_steps[k];
    for (std::size_t i = 0; i < g.params.size(); ++i) {
      g.state.m[i] = find_tensor(c.optimizer, g.name + ".m." + g.params[i].first, "optimizer");
      g.state.v[i] = find_tensor(c.optimizer, g.name + ".v." + g.params[i].first, "optimizer");
      if (!g.state.m[i].same_shape(*g.params[i].second) || !g.state.v[i].same_shape(*g.params[i].second))
        throw IntegrityError("optimizer", "moment shape mismatch for '" + g.params[i].first + "'");
    }
  }
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path, std::int64_t up_to) {
  std::vector<MetricsRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    MetricsRow r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &step, &r.loss, &r.eval_metric, &r.tau_mean,
                    &r.tau_min, &r.tau_max, &r.lr_model, &r.lr_tempnet) != 8)
      throw ValidationError(path.string() + ": malformed metrics row");
    r.step = step;
    if (r.step <= up_to) rows.push_back(r);
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

RunResult train(const RunConfig& cfg) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create run directory " + cfg.out_dir.string() + ": " + ec.message());

  std::optional<Checkpoint> foundation;
  if (cfg.mode != Mode::Scratch) foundation = load_checkpoint(cfg.init_checkpoint);
  auto runner = make_runner(cfg, foundation ? &*foundation : nullptr);

  const bool model_trainable = cfg.mode != Mode::TempnetOnly;
  std::vector<Group> groups(2);
  groups[0].name = "model";
  groups[0].params = runner->model_params();
  groups[0].base_lr = cfg.train.base_lr;
  groups[0].frozen = !model_trainable;
  groups[1].name = "tempnet";
  groups[1].params = runner->tempnet_params();
  groups[1].base_lr = cfg.train.tempnet_lr;
  for (auto& g : groups) g.setup();

  const AdamConfig adam{cfg.train.beta1, cfg.train.beta2, cfg.train.eps, cfg.train.weight_decay};
  const std::string identity = identity_config(cfg);
  std::mt19937_64 rng(cfg.train.seed);
  std::int64_t start = 0;
  double loss_accum = 0.0;
  std::int64_t loss_count = 0;
  std::vector<MetricsRow> metrics;
  const auto metrics_path = cfg.out_dir / "metrics.csv";

  if (!cfg.resume.empty()) {
    const auto c = load_checkpoint(cfg.resume);
    if (identity_config(config::parse(c.config_text, {}, "checkpoint config")) != identity)
      throw ValidationError("resume checkpoint " + cfg.resume.string() + " was written by a different configuration");
    restore(groups[0].params, c.model, "model");
    restore(groups[1].params, c.tempnet, "tempnet");
    load_optimizer(c, groups);
    std::istringstream(c.rng_state) >> rng;
    start = c.step;
    loss_accum = c.loss_accum;
    loss_count = c.loss_count;
    metrics = read_metrics(metrics_path, start);
  }
  write_text(cfg.out_dir / "config.txt", config::render(cfg));
  {
    std::string text = std::string(kMetricsHeader) + "\n";
    for (const auto& r : metrics) text += format_metrics_row(r) + "\n";
    write_text(metrics_path, text);
  }

  auto make_checkpoint = [&](std::int64_t step) {
    Checkpoint c;
    c.task = to_string(cfg.task);
    c.config_text = identity;
    c.config_hash = fnv1a(c.config_text);
    c.step = step;
    c.loss_accum = loss_accum;
    c.loss_count = loss_count;
    runner->fill(c);
    save_optimizer(c, groups);
    std::ostringstream rs;
    rs << rng;
    c.rng_state = rs.str();
    return c;
  };

  const Schedule model_sched{cfg.train.base_lr, cfg.train.warmup_fraction, cfg.train.total_steps};
  const Schedule tempnet_sched{cfg.train.tempnet_lr, cfg.train.warmup_fraction, cfg.train.total_steps};
  const std::int64_t end = cfg.train.stop_after > 0 ? cfg.train.stop_after : cfg.train.total_steps;
  std::vector<Tensor> model_grads, tempnet_grads;
  std::optional<EvalResult> last_eval;

  for (std::int64_t step = start + 1; step <= end; ++step) {
    const double loss = runner->step(rng, model_trainable, model_grads, tempnet_grads);
    if (!std::isfinite(loss)) throw DivergenceError(step, "non-finite training loss");
    const double lr_model = cosine_lr(step, model_sched);
    const double lr_tempnet = cosine_lr(step, tempnet_sched);
    if (model_trainable) adamw_step(groups[0].tensors(), model_grads, groups[0].decay, groups[0].state, lr_model, adam);
    if (!groups[1].params.empty()) {
      adamw_step(groups[1].tensors(), tempnet_grads, groups[1].decay, groups[1].state, lr_tempnet, adam);
      clamp_phi(groups[1].params);
    }
    loss_accum += loss;
    ++loss_count;

    if (step % cfg.train.eval_every == 0 || step == cfg.train.total_steps) {
      last_eval = runner->evaluate();
      MetricsRow row{step,
                     loss_accum / static_cast<double>(loss_count),
                     last_eval->metric,
                     last_eval->tau_mean(),
                     last_eval->tau_min(),
                     last_eval->tau_max(),
                     model_trainable ? lr_model : 0.0,
                     groups[1].params.empty() ? 0.0 : lr_tempnet};
      metrics.push_back(row);
      std::ofstream out(metrics_path, std::ios::app);
      if (!out) throw IoError("cannot append to " + metrics_path.string());
      out << format_metrics_row(row) << '\n';
      loss_accum = 0.0;
      loss_count = 0;
    }
    const bool periodic = cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0;
    if (periodic || step == cfg.train.stop_after)
      save_checkpoint(make_checkpoint(step), cfg.out_dir / ("checkpoint_" + std::to_string(step) + ".bin"));
  }

  RunResult result;
  result.run_dir = cfg.out_dir;
  result.metrics = metrics;
  result.final_checkpoint = make_checkpoint(end);
  if (end == cfg.train.total_steps) {
    save_checkpoint(result.final_checkpoint, cfg.out_dir / "checkpoint_final.bin");
    if (!last_eval) last_eval = runner->evaluate();
    runner->write_temperatures(cfg.out_dir / "temperatures.csv", *last_eval);
  }
  return result;
}

}  // namespace tempo::train
