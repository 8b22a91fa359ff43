#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "tempo/checkpoint.hpp"
#include "tempo/config.hpp"
#include "tempo/data.hpp"
#include "tempo/dro.hpp"
#include "tempo/error.hpp"
#include "tempo/solver.hpp"
#include "tempo/trainer.hpp"
#include "tempo/verify.hpp"

namespace tempo::cli {
namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- solve-tau ----------------------------------------------------------

struct SolveArgs {
  std::string input;
  std::string output;
  double rho = 10.0;
  double tau0 = 0.001;
  double tau_max = 2.0;
  double tol = 1e-8;
  int max_iter = 50;
};

dro::LogitSet parse_record(const std::string& line, const std::string& where) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(where + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  if (!j.contains("positive") || !j["positive"].is_number())
    throw ValidationError(where + ": 'positive' must be a number");
  if (!j.contains("contrast") || !j["contrast"].is_array())
    throw ValidationError(where + ": 'contrast' must be an array");
  dro::LogitSet ls;
  ls.positive = j["positive"].get<double>();
  for (const auto& v : j["contrast"]) {
    if (!v.is_number()) throw ValidationError(where + ": 'contrast' entries must be numbers");
    ls.contrast.push_back(v.get<double>());
  }
  try {
    ls.validate();
  } catch (const DomainError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return ls;
}

int cmd_solve_tau(const SolveArgs& a, std::ostream& out) {
  const dro::DroConfig cfg{a.tau0, a.tau_max, a.rho};
  cfg.validate();
  solver::SolverOptions opts;
  opts.tol = a.tol;
  opts.max_iter = a.max_iter;
  opts.validate();

  std::ifstream in(a.input);
  if (!in) throw IoError("cannot open " + a.input);
  std::vector<dro::LogitSet> instances;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    instances.push_back(parse_record(line, a.input + ":" + std::to_string(line_no)));
  }
  if (in.bad()) throw IoError("read failed: " + a.input);

  const auto sols = solver::batch_solve(instances, cfg, opts);
  std::ostringstream buf;
  for (std::size_t i = 0; i < sols.size(); ++i) {
    json j;
    j["tau"] = sols[i].tau;
    j["status"] = std::string(solver::to_string(sols[i].status));
    j["loss"] = dro::robust_loss(instances[i], sols[i].tau, cfg);
    j["grad"] = dro::grad_tau(instances[i], sols[i].tau, cfg);
    buf << j.dump() << '\n';
  }
  if (a.output.empty()) {
    out << buf.str();
  } else {
    std::ofstream f(a.output);
    if (!(f << buf.str())) throw IoError("cannot write " + a.output);
  }
  return kExitOk;
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> set;
  std::optional<std::string> mode, loss, out, init_checkpoint, resume;
  std::optional<double> rho, tau_max, tempnet_lr;
  std::optional<std::uint64_t> seed;
};

int cmd_train(train::Task task, const TrainArgs& a, std::ostream& out) {
  auto overrides = a.set;
  overrides.insert(overrides.begin(), std::string("task=") + train::to_string(task));
  auto add = [&](const char* key, const auto& v) {
    if (v) {
      std::ostringstream s;
      if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, double>) s << fmt(*v); else s << *v;
      overrides.push_back(std::string(key) + "=" + s.str());
    }
  };
  add("run.mode", a.mode);
  add("run.loss", a.loss);
  add("run.out_dir", a.out);
  add("run.init_checkpoint", a.init_checkpoint);
  add("run.resume", a.resume);
  add("dro.rho", a.rho);
  add("dro.tau_max", a.tau_max);
  add("train.tempnet_lr", a.tempnet_lr);
  add("train.seed", a.seed);
  const auto cfg = config::load(a.config, overrides);
  const auto result = train::train(cfg);
  out << "run_dir," << result.run_dir.string() << '\n' << train::kMetricsHeader << '\n';
  if (!result.metrics.empty()) out << train::format_metrics_row(result.metrics.back()) << '\n';
  return kExitOk;
}

// ---- eval / export-temps ------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string output;
  std::vector<std::string> set;
  std::optional<double> tau_max_eval;
};

struct Evaluated {
  train::RunConfig cfg;
  train::EvalResult result;
  std::vector<data::TokenBatch> lm_batches;  // lm only
};

Evaluated evaluate_checkpoint(const EvalArgs& a) {
  const auto ckpt = train::load_checkpoint(a.checkpoint);
  Evaluated e;
  e.cfg = config::parse(ckpt.config_text, {}, a.checkpoint);
  for (const auto& o : a.set) config::apply_override(e.cfg, o);
  if (!a.data.empty()) {
    if (e.cfg.task == train::Task::Lm) e.cfg.corpus = a.data; else e.cfg.eval_pairs = a.data;
  }
  if (a.tau_max_eval) e.cfg.tau_max_eval = *a.tau_max_eval;
  if (e.cfg.tau_max_eval != 0.0 && !(e.cfg.tau_max_eval > e.cfg.dro.tau0))
    throw ValidationError("--tau-max-eval must exceed dro.tau0");

  if (e.cfg.task == train::Task::Lm) {
    const auto bundle = train::lm_from_checkpoint(ckpt);
    data::Corpus corpus;
    try {
      corpus = data::load_corpus(e.cfg.corpus, bundle.vocab, e.cfg.valid_fraction);
    } catch (const IoError& err) {
      throw IoError(std::string("data.corpus: ") + err.what());
    }
    e.lm_batches = train::lm_eval_batches(e.cfg, corpus);
    e.result = train::evaluate_lm(bundle, e.lm_batches, e.cfg.fixed_tau, e.cfg.tau_max_eval);
  } else {
    const auto bundle = train::cl_from_checkpoint(ckpt);
    data::PairBatch pairs;
    try {
      pairs = data::read_pairs_csv(e.cfg.eval_pairs);
    } catch (const IoError& err) {
      throw IoError(std::string("data.eval_pairs: ") + err.what());
    }
    pairs.validate();
    e.result = train::evaluate_cl(bundle, pairs, e.cfg.fixed_tau, e.cfg.tau_max_eval);
  }
  return e;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto e = evaluate_checkpoint(a);
  const auto& r = e.result;
  std::string text = "task,metric,image_retrieval,text_retrieval,tau_mean,tau_min,tau_max\n";
  text += train::to_string(e.cfg.task) + "," + fmt(r.metric) + "," + fmt(r.recall.image_retrieval) + "," +
          fmt(r.recall.text_retrieval) + "," + fmt(r.tau_mean()) + "," + fmt(r.tau_min()) + "," + fmt(r.tau_max()) +
          "\n";
  out << text;
  if (!a.output.empty()) {
    std::ofstream f(a.output);
    if (!(f << text)) throw IoError("cannot write " + a.output);
  }
  return kExitOk;
}

int cmd_export_temps(const EvalArgs& a, std::ostream& out) {
  const auto e = evaluate_checkpoint(a);
  if (e.cfg.task == train::Task::Lm) train::write_lm_temperatures(a.output, e.lm_batches, e.result);
  else train::write_cl_temperatures(a.output, e.result);
  out << "rows," << e.result.taus.size() << "\ntau_mean," << fmt(e.result.tau_mean()) << '\n';
  return kExitOk;
}

// ---- verify -------------------------------------------------------------

struct VerifyArgs {
  std::uint64_t seed = 1;
  std::vector<std::string> only;
  std::string report;
  bool inject_fault = false;
};

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
  struct Fault {
    explicit Fault(bool on) { dro::debug::flip_grad_tau_sign = on; }
    ~Fault() { dro::debug::flip_grad_tau_sign = false; }
  } fault(a.inject_fault);
  const auto reports = verify::run_checks(a.seed, a.only);
  const auto csv = verify::report_csv(reports);
  out << csv;
  if (!a.report.empty()) {
    std::ofstream f(a.report);
    if (!(f << csv)) throw IoError("cannot write " + a.report);
  }
  for (const auto& r : reports)
    if (!r.passed) return kExitFailure;
  return kExitOk;
}

// ---- gen-pairs ----------------------------------------------------------

struct GenArgs {
  data::PairGenConfig gen;
  std::uint64_t seed = 1;
  std::string output;
  std::size_t holdout = 0;
  std::string holdout_output;
};

// Train and held-out pairs come from one draw so they share clusters and maps.
int cmd_gen_pairs(const GenArgs& a, std::ostream& out) {
  if (a.holdout > 0 && a.holdout_output.empty()) throw ValidationError("--holdout needs --holdout-output");
  auto g = a.gen;
  g.n += a.holdout;
  const auto all = data::generate_pairs(g, a.seed);
  std::vector<std::size_t> head(a.gen.n), tail(a.holdout);
  for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
  for (std::size_t i = 0; i < tail.size(); ++i) tail[i] = a.gen.n + i;
  data::write_pairs_csv(all.select(head), a.output);
  out << "wrote " << head.size() << " pairs to " << a.output << '\n';
  if (a.holdout > 0) {
    data::write_pairs_csv(all.select(tail), a.holdout_output);
    out << "wrote " << tail.size() << " pairs to " << a.holdout_output << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temperature-robust losses: solve, train, evaluate and verify.", "tempo"};
  app.require_subcommand(1);

  SolveArgs solve;
  auto* s = app.add_subcommand("solve-tau", "Optimal temperature per instance from a JSON Lines file");
  s->add_option("--input", solve.input, "JSON Lines input, one {\"positive\", \"contrast\"} record per line")->required();
  s->add_option("--output", solve.output, "Output file (default: standard output)");
  s->add_option("--rho", solve.rho, "KL radius")->capture_default_str();
  s->add_option("--tau0", solve.tau0, "Lower temperature bound")->capture_default_str();
  s->add_option("--tau-max", solve.tau_max, "Upper end of the temperature range")->capture_default_str();
  s->add_option("--tol", solve.tol, "Solver tolerance")->capture_default_str();
  s->add_option("--max-iter", solve.max_iter, "Newton iteration limit")->capture_default_str();

  TrainArgs tr;
  auto add_train = [&](const char* name, const char* help) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--config", tr.config, "Run configuration file")->required();
    c->add_option("--mode", tr.mode, "scratch, joint-finetune or tempnet-only")
        ->check(CLI::IsMember({"scratch", "joint-finetune", "tempnet-only"}));
    c->add_option("--loss", tr.loss, "robust or baseline")->check(CLI::IsMember({"robust", "baseline"}));
    c->add_option("--rho", tr.rho, "KL radius");
    c->add_option("--tau-max", tr.tau_max, "Upper end of the TempNet output range");
    c->add_option("--tempnet-lr", tr.tempnet_lr, "TempNet learning rate");
    c->add_option("--seed", tr.seed, "Random seed");
    c->add_option("--out", tr.out, "Run directory");
    c->add_option("--init-checkpoint", tr.init_checkpoint, "Foundation checkpoint");
    c->add_option("--resume", tr.resume, "Checkpoint to continue from");
    c->add_option("--set", tr.set, "Config override key=value (repeatable)");
    return c;
  };
  auto* tlm = add_train("train-lm", "Train the character language model");
  auto* tcl = add_train("train-cl", "Train the two-tower contrastive model");

  EvalArgs ev;
  auto add_eval = [&](const char* name, const char* help, bool output_required) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by a training run")->required();
    c->add_option("--data", ev.data, "Corpus (lm) or evaluation pairs (cl); default from the checkpoint's config");
    c->add_option("--tau-max-eval", ev.tau_max_eval, "Replace tau_max of the TempNet output map at inference");
    c->add_option("--set", ev.set, "Config override key=value (repeatable)");
    auto* o = c->add_option("--output", ev.output, output_required ? "Temperature CSV" : "Also write metrics CSV here");
    if (output_required) o->required();
    return c;
  };
  auto* evc = add_eval("eval", "Evaluate a checkpoint", false);
  auto* exc = add_eval("export-temps", "Write per-instance predicted temperatures", true);

  VerifyArgs ver;
  auto* vc = app.add_subcommand("verify", "Run the numerical verification checks");
  vc->add_option("--seed", ver.seed, "Seed for instance generation")->capture_default_str();
  vc->add_option("--only", ver.only, "Run only the named check (repeatable)");
  vc->add_option("--report", ver.report, "Write the CSV report here");
  vc->add_flag("--inject-fault", ver.inject_fault, "Negate grad_tau to exercise failure reporting");

  GenArgs gen;
  auto* gc = app.add_subcommand("gen-pairs", "Generate synthetic clustered image/text feature pairs");
  gc->add_option("--output", gen.output, "CSV path")->required();
  gc->add_option("--holdout", gen.holdout, "Extra pairs from the same draw, written separately")->capture_default_str();
  gc->add_option("--holdout-output", gen.holdout_output, "CSV path for the held-out pairs");
  gc->add_option("--seed", gen.seed)->capture_default_str();
  gc->add_option("--n", gen.gen.n)->capture_default_str();
  gc->add_option("--image-dim", gen.gen.image_dim)->capture_default_str();
  gc->add_option("--text-dim", gen.gen.text_dim)->capture_default_str();
  gc->add_option("--latent-dim", gen.gen.latent_dim)->capture_default_str();
  gc->add_option("--clusters", gen.gen.clusters)->capture_default_str();
  gc->add_option("--instance-scale", gen.gen.instance_scale)->capture_default_str();
  gc->add_option("--noise-min", gen.gen.noise_min)->capture_default_str();
  gc->add_option("--noise-max", gen.gen.noise_max)->capture_default_str();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << "run with --help for usage\n";
    return kExitFailure;
  }

  try {
    if (*s) return cmd_solve_tau(solve, out);
    if (*tlm) return cmd_train(train::Task::Lm, tr, out);
    if (*tcl) return cmd_train(train::Task::Cl, tr, out);
    if (*evc) return cmd_eval(ev, out);
    if (*exc) return cmd_export_temps(ev, out);
    if (*vc) return cmd_verify(ver, out);
    if (*gc) return cmd_gen_pairs(gen, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const IntegrityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace tempo::cli
