#pragma once

// Training runs for the language-model and contrastive tasks.
//
// A run directory receives config.txt (resolved configuration), metrics.csv,
// checkpoint_<step>.bin files, checkpoint_final.bin and temperatures.csv
// (per-instance predicted temperatures on the evaluation data).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tempo/checkpoint.hpp"
#include "tempo/contrastive.hpp"
#include "tempo/dro.hpp"
#include "tempo/lm.hpp"
#include "tempo/optim.hpp"
#include "tempo/tempnet.hpp"

namespace tempo::train {

enum class Task { Lm, Cl };
enum class Mode { Scratch, JointFinetune, TempnetOnly };
enum class LossKind { Robust, Baseline };

std::string to_string(Task t);
std::string to_string(Mode m);
std::string to_string(LossKind k);

struct TrainConfig {
  double base_lr = 1e-3;
  double tempnet_lr = 1e-4;
  double warmup_fraction = 0.01;
  std::int64_t total_steps = 2000;
  std::size_t batch_size = 16;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  std::int64_t eval_every = 500;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::int64_t stop_after = 0;        // 0: run to total_steps

  void validate() const;
};

struct RunConfig {
  Task task = Task::Lm;
  Mode mode = Mode::Scratch;
  LossKind loss = LossKind::Robust;
  std::filesystem::path out_dir = "runs/lm";
  std::filesystem::path init_checkpoint;  // foundation weights for joint-finetune / tempnet-only
  std::filesystem::path resume;           // continue an interrupted run

  // data
  std::filesystem::path corpus;
  double valid_fraction = 0.1;
  std::filesystem::path train_pairs;
  std::filesystem::path eval_pairs;

  // models
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t context = 32;
  std::size_t tower_hidden = 64;
  std::size_t tower_embed = 32;
  std::size_t tempnet_d1 = 32;
  std::size_t tempnet_d2 = 16;
  bool prototypes_from_samples = true;

  dro::DroConfig dro{0.001, 2.0, 10.0};
  double fixed_tau = 1.0;  // baseline temperature
  TrainConfig train;

  // evaluation
  std::size_t eval_windows = 0;  // 0: all validation windows
  std::size_t eval_batch = 64;
  double tau_max_eval = 0.0;     // >0 replaces tau_max of the output map at evaluation

  void validate() const;
};

struct MetricsRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double eval_metric = 0.0;
  double tau_mean = 0.0;
  double tau_min = 0.0;
  double tau_max = 0.0;
  double lr_model = 0.0;
  double lr_tempnet = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,loss,eval_metric,tau_mean,tau_min,tau_max,lr_model,lr_tempnet";
std::string format_metrics_row(const MetricsRow& row);

struct EvalResult {
  double metric = 0.0;             // perplexity (lm) or mean of IR@1 and TR@1 (cl)
  models::Recall recall;           // cl only
  std::vector<double> taus;        // per instance; cl lists images then texts
  double tau_mean() const;
  double tau_min() const;
  double tau_max() const;
};

/// A trained or loaded model bundle.
struct LmBundle {
  data::Vocab vocab;
  models::LanguageModel lm;
  std::optional<net::TempNet> tempnet;
};

struct ClBundle {
  models::TwoTower towers;
  std::optional<net::TempNet> tempnet_image;
  std::optional<net::TempNet> tempnet_text;
};

EvalResult evaluate_lm(const LmBundle& b, const std::vector<data::TokenBatch>& eval, double fixed_tau,
                       double tau_max_eval = 0.0);
EvalResult evaluate_cl(const ClBundle& b, const data::PairBatch& eval, double fixed_tau, double tau_max_eval = 0.0);

/// Rebuilds a bundle from a checkpoint written by train().
LmBundle lm_from_checkpoint(const Checkpoint& c);
ClBundle cl_from_checkpoint(const Checkpoint& c);

/// Checkpoint holding only the bundle's weights and the run configuration (step 0).
Checkpoint bundle_checkpoint(const LmBundle& b, const RunConfig& cfg);
Checkpoint bundle_checkpoint(const ClBundle& b, const RunConfig& cfg);

/// Consecutive validation windows as evaluated during training.
std::vector<data::TokenBatch> lm_eval_batches(const RunConfig& cfg, const data::Corpus& corpus);

/// temperatures.csv: `index,target,tau` for lm, `index,side,tau` for cl (images first).
void write_lm_temperatures(const std::filesystem::path& path, const std::vector<data::TokenBatch>& eval,
                           const EvalResult& r);
void write_cl_temperatures(const std::filesystem::path& path, const EvalResult& r);

struct RunResult {
  std::filesystem::path run_dir;
  std::vector<MetricsRow> metrics;
  Checkpoint final_checkpoint;
};

/// Runs (or resumes) training. Deterministic for a fixed configuration.
RunResult train(const RunConfig& cfg);

/// Hash over the named tensors' shapes and bytes.
std::uint64_t params_hash(const NamedTensors& tensors);

}  // namespace tempo::train
