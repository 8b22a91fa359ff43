#include "tempo/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "tempo/error.hpp"

namespace tempo::config {

using train::RunConfig;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ValidationError("expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& s) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ValidationError("expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ValidationError("expected true or false, got '" + s + "'");
}

struct Entry {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define TEMPO_DOUBLE(k, field) \
  Entry{k, [](const RunConfig& c) { return fmt_double(c.field); }, [](RunConfig& c, const std::string& v) { c.field = parse_double(v); }}
#define TEMPO_SIZE(k, field) \
  Entry{k, [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = parse_int<std::size_t>(v); }}
#define TEMPO_INT(k, field) \
  Entry{k, [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = parse_int<std::int64_t>(v); }}
#define TEMPO_PATH(k, field) \
  Entry{k, [](const RunConfig& c) { return c.field.string(); }, [](RunConfig& c, const std::string& v) { c.field = v; }}

const std::vector<Entry>& table() {
  static const std::vector<Entry> entries = {
      Entry{"task", [](const RunConfig& c) { return train::to_string(c.task); },
            [](RunConfig& c, const std::string& v) {
              if (v == "lm") c.task = train::Task::Lm;
              else if (v == "cl") c.task = train::Task::Cl;
              else throw ValidationError("task must be lm or cl, got '" + v + "'");
            }},
      Entry{"run.mode", [](const RunConfig& c) { return train::to_string(c.mode); },
            [](RunConfig& c, const std::string& v) {
              if (v == "scratch") c.mode = train::Mode::Scratch;
              else if (v == "joint-finetune") c.mode = train::Mode::JointFinetune;
              else if (v == "tempnet-only") c.mode = train::Mode::TempnetOnly;
              else throw ValidationError("mode must be scratch, joint-finetune or tempnet-only, got '" + v + "'");
            }},
      Entry{"run.loss", [](const RunConfig& c) { return train::to_string(c.loss); },
            [](RunConfig& c, const std::string& v) {
              if (v == "robust") c.loss = train::LossKind::Robust;
              else if (v == "baseline") c.loss = train::LossKind::Baseline;
              else throw ValidationError("loss must be robust or baseline, got '" + v + "'");
            }},
      TEMPO_PATH("run.out_dir", out_dir),
      TEMPO_PATH("run.init_checkpoint", init_checkpoint),
      TEMPO_PATH("run.resume", resume),
      TEMPO_PATH("data.corpus", corpus),
      TEMPO_DOUBLE("data.valid_fraction", valid_fraction),
      TEMPO_PATH("data.train_pairs", train_pairs),
      TEMPO_PATH("data.eval_pairs", eval_pairs),
      TEMPO_SIZE("model.d_model", d_model),
      TEMPO_SIZE("model.d_ff", d_ff),
      TEMPO_SIZE("model.context", context),
      TEMPO_SIZE("model.tower_hidden", tower_hidden),
      TEMPO_SIZE("model.tower_embed", tower_embed),
      TEMPO_SIZE("tempnet.d1", tempnet_d1),
      TEMPO_SIZE("tempnet.d2", tempnet_d2),
      Entry{"tempnet.prototypes_from_samples",
            [](const RunConfig& c) { return std::string(c.prototypes_from_samples ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) { c.prototypes_from_samples = parse_bool(v); }},
      TEMPO_DOUBLE("dro.tau0", dro.tau0),
      TEMPO_DOUBLE("dro.tau_max", dro.tau_max),
      TEMPO_DOUBLE("dro.rho", dro.rho),
      TEMPO_DOUBLE("loss.fixed_tau", fixed_tau),
      TEMPO_DOUBLE("train.base_lr", train.base_lr),
      TEMPO_DOUBLE("train.tempnet_lr", train.tempnet_lr),
      TEMPO_DOUBLE("train.warmup_fraction", train.warmup_fraction),
      TEMPO_INT("train.total_steps", train.total_steps),
      TEMPO_SIZE("train.batch_size", train.batch_size),
      TEMPO_DOUBLE("train.weight_decay", train.weight_decay),
      TEMPO_DOUBLE("train.beta1", train.beta1),
      TEMPO_DOUBLE("train.beta2", train.beta2),
      TEMPO_DOUBLE("train.eps", train.eps),
      Entry{"train.seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
            [](RunConfig& c, const std::string& v) { c.train.seed = parse_int<std::uint64_t>(v); }},
      TEMPO_INT("train.eval_every", train.eval_every),
      TEMPO_INT("train.checkpoint_every", train.checkpoint_every),
      TEMPO_INT("train.stop_after", train.stop_after),
      TEMPO_SIZE("eval.windows", eval_windows),
      TEMPO_SIZE("eval.batch", eval_batch),
      TEMPO_DOUBLE("eval.tau_max_eval", tau_max_eval),
  };
  return entries;
}

#undef TEMPO_DOUBLE
#undef TEMPO_SIZE
#undef TEMPO_INT
#undef TEMPO_PATH

void assign(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : table()) {
    if (key == e.key) {
      try {
        e.set(cfg, value);
      } catch (const ValidationError& err) {
        throw ValidationError(key + ": " + err.what());
      }
      return;
    }
  }
  throw ValidationError("unknown key '" + key + "'");
}

}  // namespace

RunConfig parse(std::string_view text, RunConfig base, const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ValidationError(source + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      assign(base, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ValidationError("override '" + std::string(assignment) + "' is not key=value");
  assign(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  auto cfg = parse(buf.str(), {}, path.string());
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

std::string render(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : table()) out += std::string(e.key) + " = " + e.get(cfg) + "\n";
  return out;
}

std::vector<std::string> keys() {
  std::vector<std::string> out;
  for (const auto& e : table()) out.emplace_back(e.key);
  return out;
}

}  // namespace tempo::config
