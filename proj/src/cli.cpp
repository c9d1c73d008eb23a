/*
 * Copyright 2026 The dakd Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "dakd/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

namespace dakd::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config;
  std::string out;
  std::string experiment;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "TOML or JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output root (default from config, else ./out)");
  cmd->add_option("--experiment", f.experiment, "experiment name below the output root");
  cmd->add_option("--seed", f.seed, "run seed (default: $DAKD_SEED, else the config's first seed)");
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("DAKD_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw UsageError(std::string("DAKD_SEED is not an unsigned integer: '") + v + "'");
  }
}

ExperimentConfig resolve_config(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig::defaults() : load_config(f.config);
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.experiment.empty()) cfg.experiment = f.experiment;
  return cfg;
}

// Single-run seed: flag, then environment, then the config.
std::uint64_t run_seed(const CommonFlags& f, const ExperimentConfig& cfg) {
  if (f.seed) return *f.seed;
  if (const auto s = env_seed()) return *s;
  return cfg.seeds.front();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void echo_config(const ExperimentConfig& cfg, const std::vector<fs::path>& dirs) {
  const std::string text = to_toml(to_document(cfg));
  write_text(cfg.experiment_dir() / "config.resolved.toml", text);
  for (const auto& d : dirs) write_text(d / "config.resolved.toml", text);
}

TwoDomainData load_data(const ExperimentConfig& cfg) {
  const fs::path root = cfg.data_dir();
  if (!fs::exists(manifest_path(root, Domain::kSource, Split::kTrain))) {
    throw std::runtime_error("no dataset at " + root.string() + " (run `dakd generate-data` first)");
  }
  TwoDomainData data = TwoDomainData::load(root);
  if (data.source_train->num_classes != cfg.scene.num_classes()) {
    throw std::runtime_error("dataset has " + std::to_string(data.source_train->num_classes) +
                             " classes but the config declares " + std::to_string(cfg.scene.num_classes()));
  }
  return data;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// ---- run directories, logs and resumption ----

struct RunPaths {
  fs::path checkpoints;
  fs::path logs;

  RunPaths(const ExperimentConfig& cfg, const std::string& name)
      : checkpoints(cfg.experiment_dir() / "checkpoints" / name), logs(cfg.experiment_dir() / "logs" / name) {}

  fs::path final_checkpoint() const { return checkpoints / "final.json"; }
  fs::path log_file() const { return logs / "train.jsonl"; }
};

std::string iter_name(int iter) {
  std::ostringstream os;
  os << "iter_" << std::setw(6) << std::setfill('0') << iter << ".json";
  return os.str();
}

/// Most advanced checkpoint in a run directory, by saved loop position.
std::optional<fs::path> latest_checkpoint(const RunPaths& paths) {
  if (!fs::exists(paths.checkpoints)) return std::nullopt;
  std::optional<fs::path> best;
  int best_iter = -1;
  std::vector<fs::path> headers;
  for (const auto& e : fs::directory_iterator(paths.checkpoints)) {
    if (e.path().extension() == ".json") headers.push_back(e.path());
  }
  std::sort(headers.begin(), headers.end());
  for (const auto& h : headers) {
    std::ifstream in(h);
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("config") || !j["config"].contains("loop")) continue;
    const int it = j["config"]["loop"].value("next_iter", -1);
    if (it > best_iter) {
      best_iter = it;
      best = h;
    }
  }
  return best;
}

// Log lines of an earlier, interrupted run that precede `next_iter`.
std::vector<json> prior_records(const fs::path& log, int next_iter) {
  std::vector<json> out;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    const std::string type = j.value("type", "");
    const int it = j.value("iter", -1);
    if ((type == "iter" && it < next_iter) || (type == "eval" && it <= next_iter)) out.push_back(std::move(j));
  }
  return out;
}

void write_log(const fs::path& path, const std::vector<json>& prior, const TrainLog& log,
               const std::vector<std::string>& class_names) {
  std::string text;
  for (const auto& j : prior) {
    if (j["type"] == "iter") text += j.dump() + '\n';
  }
  std::string fresh = log.to_jsonl(class_names);
  std::istringstream lines(fresh);
  std::string line;
  std::vector<std::string> tail;
  while (std::getline(lines, line)) {
    if (line.find("\"type\":\"iter\"") != std::string::npos) {
      text += line + '\n';
    } else {
      tail.push_back(line);
    }
  }
  for (const auto& j : prior) {
    if (j["type"] == "eval") text += j.dump() + '\n';
  }
  for (const auto& l : tail) text += l + '\n';
  write_text(path, text);
}

struct RunOutcome {
  TrainLog log;
  TrainingState state;
};

/// Shared driver for pretrain and distill: resumption, periodic
/// checkpoints, the final checkpoint and the log.
RunOutcome execute_run(const ExperimentConfig& cfg, const std::string& run_name, const std::string& role,
                       TrainingState state, TrainPlan plan, bool resume,
                       const std::function<TrainLog(TrainingState&, const TrainPlan&, const TrainHooks&)>& body,
                       std::ostream& out) {
  const RunPaths paths(cfg, run_name);
  const std::string hash = config_hash(cfg);
  std::vector<json> prior;
  if (resume) {
    const auto latest = latest_checkpoint(paths);
    if (!latest) throw std::runtime_error("nothing to resume in " + paths.checkpoints.string());
    const Checkpoint ckpt = load_checkpoint(*latest);
    const std::string saved = ckpt.config.value("config_hash", "");
    if (saved != hash) {
      throw std::runtime_error("cannot resume from " + latest->string() + ": config hash " + saved +
                               " does not match the current config (" + hash + ")");
    }
    state = state_from_checkpoint(ckpt);
    plan.resume = true;
    prior = prior_records(paths.log_file(), state.loop->next_iter);
    out << "resuming " << run_name << " at iteration " << state.loop->next_iter << '\n';
  } else {
    state.loop.reset();
  }

  TrainHooks hooks;
  hooks.on_checkpoint = [&](const TrainingState& s, const TrainLog& partial) {
    save_checkpoint(paths.checkpoints / iter_name(s.loop->next_iter), make_checkpoint(s, state_config(s, role, hash)));
    write_log(paths.log_file(), prior, partial, cfg.scene.classes);
  };
  echo_config(cfg, {paths.logs});
  TrainLog log;
  try {
    log = body(state, plan, hooks);
  } catch (const TrainingAborted& e) {
    TrainLog aborted;
    aborted.set_abort(e.what());
    write_log(paths.log_file(), prior, aborted, cfg.scene.classes);
    throw;
  }
  save_checkpoint(paths.final_checkpoint(), make_checkpoint(state, state_config(state, role, hash)));
  write_log(paths.log_file(), prior, log, cfg.scene.classes);
  if (!log.iterations().empty()) {
    const auto& last = log.iterations().back();
    out << run_name << ": " << log.iterations().size() << " iterations, final loss " << fixed(last.generator.value, 4)
        << '\n';
  }
  out << "checkpoint " << paths.final_checkpoint().string() << '\n';
  return {std::move(log), std::move(state)};
}

// ---- generate-data ----

int cmd_generate_data(const CommonFlags& f, bool dry_run, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(f);
  if (f.seed || env_seed()) cfg.scene.seed = run_seed(f, cfg);
  cfg.validate();
  const fs::path root = cfg.data_dir();
  const std::pair<Domain, Split> splits[] = {
      {Domain::kSource, Split::kTrain}, {Domain::kSource, Split::kVal},
      {Domain::kTarget, Split::kTrain}, {Domain::kTarget, Split::kVal}};
  if (dry_run) {
    out << "would write " << root.string() << " (scene seed " << cfg.scene.seed << ")\n";
    for (const auto& [d, s] : splits) {
      out << "  " << to_string(d) << '/' << to_string(s) << ": " << cfg.counts.get(d, s) << " images\n";
    }
    return 0;
  }
  echo_config(cfg, {});
  const auto manifests = write_dataset(cfg.scene, cfg.source_shift, cfg.target_shift, cfg.counts, root);
  for (const auto& m : manifests) {
    out << to_string(m.domain) << '/' << to_string(m.split) << ": " << m.entries.size() << " images"
        << (m.labels_eval_only ? " (labels for evaluation only)" : "") << " -> "
        << manifest_path(root, m.domain, m.split).string() << '\n';
  }
  return 0;
}

// ---- pretrain ----

struct PretrainFlags {
  std::string role;
  std::optional<int> max_iters;
  std::string init_from;
  bool resume = false;
};

int cmd_pretrain(const CommonFlags& f, const PretrainFlags& p, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(f);
  const std::uint64_t seed = run_seed(f, cfg);
  cfg.seeds = {seed};
  if (p.max_iters) (p.role == "teacher" ? cfg.teacher_iters : cfg.student_iters) = *p.max_iters;
  cfg.validate();
  if (p.resume && !p.init_from.empty()) throw UsageError("--resume and --init-from are mutually exclusive");

  const TwoDomainData data = load_data(cfg);
  const LadderPlan lp = ladder_plan(cfg);
  TrainingState state = initial_state(lp, p.role, seed);
  if (!p.init_from.empty()) {
    state = state_from_checkpoint(load_checkpoint(p.init_from));
    const SegNetConfig& want = p.role == "teacher" ? cfg.teacher : cfg.student;
    if (!(state.net.config() == want)) {
      throw std::runtime_error("--init-from checkpoint does not match the configured " + p.role + " network");
    }
  }
  TrainPlan plan = cfg.train;
  plan.seed = seed;
  plan.max_iters = p.role == "teacher" ? cfg.teacher_iters : cfg.student_iters;

  execute_run(cfg, p.role, p.role, std::move(state), plan, p.resume,
              [&](TrainingState& s, const TrainPlan& tp, const TrainHooks& h) { return pretrain_da(s, data, tp, h); },
              out);
  return 0;
}

// ---- distill ----

struct DistillFlags {
  std::string paradigm;
  std::string teacher;
  std::string student;
  std::string init_from;
  std::optional<int> max_iters;
  std::optional<double> lambda_kl;
  std::optional<double> lambda_kl_feat;
  std::optional<double> lambda_mse;
  std::optional<double> lambda_pseudo;
  std::optional<double> lambda_target;
  std::string name;
  bool resume = false;
};

int cmd_distill(const CommonFlags& f, const DistillFlags& d, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(f);
  const std::uint64_t seed = run_seed(f, cfg);
  cfg.seeds = {seed};
  DistillConfig& dc = cfg.train.distill;
  dc.paradigm = paradigm_from_string(d.paradigm);
  if (d.lambda_kl) {
    dc.lambda_kl_out = *d.lambda_kl;
    dc.lambda_kl_feat = *d.lambda_kl / 10.0;
  }
  if (d.lambda_kl_feat) dc.lambda_kl_feat = *d.lambda_kl_feat;
  if (d.lambda_mse) dc.lambda_mse = *d.lambda_mse;
  if (d.lambda_pseudo) dc.lambda_pseudo = *d.lambda_pseudo;
  if (d.lambda_target) dc.lambda_target = *d.lambda_target;
  if (d.max_iters) cfg.distill_iters = *d.max_iters;
  cfg.validate();

  if (dc.paradigm == Paradigm::kD && d.init_from.empty()) {
    throw UsageError("paradigm d requires --init-from <checkpoint of a paradigm c distillation run>");
  }
  if (dc.paradigm != Paradigm::kD && d.student.empty()) throw UsageError("--student is required for paradigms a-c");

  const Checkpoint teacher_ckpt = load_checkpoint(d.teacher);
  const FrozenSegNet teacher = teacher_from_checkpoint(teacher_ckpt);
  if (teacher.config().num_classes != cfg.scene.num_classes()) {
    throw std::runtime_error("teacher checkpoint predicts " + std::to_string(teacher.config().num_classes) +
                             " classes, the config declares " + std::to_string(cfg.scene.num_classes()));
  }
  const std::string student_path = dc.paradigm == Paradigm::kD ? d.init_from : d.student;
  const Checkpoint student_ckpt = load_checkpoint(student_path);
  if (dc.paradigm == Paradigm::kD && student_ckpt.config.value("role", "") != "distill_c") {
    throw UsageError("--init-from must point at a paradigm c checkpoint; " + student_path + " has role '" +
                     student_ckpt.config.value("role", "") + "'");
  }
  TrainingState student = state_from_checkpoint(student_ckpt);
  if (student.net.config().num_classes != teacher.config().num_classes) {
    throw std::runtime_error("incompatible checkpoints: student predicts " +
                             std::to_string(student.net.config().num_classes) + " classes, teacher " +
                             std::to_string(teacher.config().num_classes));
  }
  if (student.net.config().feature_tap_width != teacher.config().feature_tap_width && !student.adapter) {
    throw std::runtime_error("incompatible checkpoints: tap widths differ (student " +
                             std::to_string(student.net.config().feature_tap_width) + ", teacher " +
                             std::to_string(teacher.config().feature_tap_width) +
                             ") and the student has no feature adapter");
  }

  TrainPlan plan = cfg.train;
  plan.seed = seed;
  plan.max_iters = cfg.distill_iters;
  if (!d.init_from.empty()) plan.init_from = d.init_from;
  const std::string role = "distill_" + to_string(dc.paradigm);
  const std::string run_name = d.name.empty() ? role : d.name;
  const TwoDomainData data = load_data(cfg);
  const ParamSnapshot before = teacher.snapshot();

  execute_run(cfg, run_name, role, std::move(student), plan, d.resume,
              [&](TrainingState& s, const TrainPlan& tp, const TrainHooks& h) {
                return distill(teacher, s, data, tp, h);
              },
              out);
  if (!teacher.snapshot().bit_identical(before)) throw std::logic_error("teacher parameters changed");
  return 0;
}

// ---- evaluate ----

struct EvaluateFlags {
  std::string checkpoint;
  std::string domain = "target";
  std::string split = "val";
  std::string predictions;
  std::string report;
};

int cmd_evaluate(const CommonFlags& f, const EvaluateFlags& e, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(f);
  cfg.validate();
  const Domain domain = domain_from_string(e.domain);
  const Split split = split_from_string(e.split);
  const fs::path manifest = manifest_path(cfg.data_dir(), domain, split);
  if (!fs::exists(manifest)) {
    throw std::runtime_error("no dataset split at " + manifest.string() + " (run `dakd generate-data` first)");
  }
  const Dataset data = load_dataset(load_manifest(manifest));
  const Checkpoint ckpt = load_checkpoint(e.checkpoint);
  SegmentationNet net(ckpt.config.at("segnet").get<SegNetConfig>(), 0);
  net.load(ckpt.params, "net/");
  if (net.config().num_classes != data.num_classes) {
    throw std::runtime_error("class-count mismatch: checkpoint predicts " + std::to_string(net.config().num_classes) +
                             " classes, dataset has " + std::to_string(data.num_classes));
  }

  std::function<void(int, const LabelMap&)> on_prediction;
  if (!e.predictions.empty()) {
    fs::create_directories(e.predictions);
    on_prediction = [&](int index, const LabelMap& pred) {
      std::ostringstream name;
      name << std::setw(6) << std::setfill('0') << index << ".png";
      write_png(fs::path(e.predictions) / name.str(), colorize(pred));
    };
  }
  const ConfusionMatrix cm = confusion_on(net, data, 8, on_prediction);
  const EvalReport report = compute_report(cm, static_cast<int>(data.images.size()));

  const std::string role = ckpt.config.value("role", "model");
  const fs::path report_path =
      e.report.empty() ? cfg.experiment_dir() / "reports" / ("eval_" + role + "_" + e.domain + "_" + e.split + ".json")
                       : fs::path(e.report);
  json doc = {{"format", "dakd-eval-report"},
              {"version", 1},
              {"checkpoint", fs::path(e.checkpoint).lexically_normal().string()},
              {"role", role},
              {"iteration", ckpt.params.iteration},
              {"domain", e.domain},
              {"split", e.split},
              {"class_names", cfg.scene.classes},
              {"report", report.to_json(cfg.scene.classes)},
              {"confusion_matrix", cm.to_json()}};
  write_text(report_path, doc.dump(2) + '\n');
  out << role << " on " << e.domain << '/' << e.split << ": mIoU " << fixed(100.0 * report.miou, 2)
      << ", pixel accuracy " << fixed(100.0 * report.pixel_accuracy, 2) << '\n';
  out << "report " << report_path.string() << '\n';
  return 0;
}

// ---- ladder ----

struct LadderFlags {
  std::string ablation;
  std::vector<std::string> aggregate;
};

void emit_ladder(const ExperimentConfig& cfg, const LadderReport& report, std::ostream& out) {
  const fs::path reports = cfg.experiment_dir() / "reports";
  write_text(reports / "ladder.json", report.to_json().dump(2) + '\n');
  write_text(reports / "ladder.md", report.to_markdown());
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& row : kLadderRows) bars.emplace_back(row, 100.0 * report.mean_miou(row));
  write_text(cfg.experiment_dir() / "plots" / "ladder_miou.svg", bar_chart_svg(bars, "target mIoU per model"));
  out << report.to_markdown();
  out << "report " << (reports / "ladder.json").string() << '\n';
}

std::string cell_params(const std::string& ablation, const DistillConfig& d) {
  std::vector<std::string> parts;
  const bool kl = ablation == "kl" || ablation == "kl_mse" || ablation == "kl_pseudo" || ablation == "all";
  const bool mse = ablation == "mse" || ablation == "kl_mse" || ablation == "mse_pseudo" || ablation == "all";
  const bool pseudo =
      ablation == "pseudo" || ablation == "kl_pseudo" || ablation == "mse_pseudo" || ablation == "all";
  std::ostringstream os;
  if (kl) parts.push_back(nlohmann::json(d.lambda_kl_out).dump());
  if (mse) parts.push_back(nlohmann::json(d.lambda_mse).dump());
  if (pseudo) parts.push_back(nlohmann::json(d.lambda_pseudo).dump());
  if (ablation == "target") parts.push_back(nlohmann::json(d.lambda_target).dump());
  for (std::size_t i = 0; i < parts.size(); ++i) os << (i ? ", " : "") << parts[i];
  return os.str();
}

int cmd_ablation(const ExperimentConfig& cfg, const std::string& name, std::ostream& out) {
  const auto cells = ablation_grid(name, cfg.train.distill);
  const TwoDomainData data = load_data(cfg);
  const LadderPlan lp = ladder_plan(cfg);

  // rows[i][s]: cell i on seed s; row 0 is the undistilled student.
  std::vector<std::vector<EvalReport>> rows(cells.size() + 1);
  for (const auto seed : lp.seeds) {
    PretrainedPair pair = pretrain_pair(lp, data, seed);
    const FrozenSegNet teacher = freeze(pair.teacher.net);
    rows[0].push_back(evaluate(pair.student.net, *data.target_val));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      TrainingState s = pair.student;
      TrainPlan plan = lp.base;
      plan.distill = cells[i].distill;
      plan.seed = seed;
      plan.max_iters = lp.distill_iters;
      distill(teacher, s, data, plan);
      rows[i + 1].push_back(evaluate(s.net, *data.target_val));
      out << "seed " << seed << ' ' << cells[i].label << ": mIoU " << fixed(100.0 * rows[i + 1].back().miou, 2)
          << '\n';
    }
  }

  auto mean = [&](const std::vector<EvalReport>& rs, bool acc) {
    double sum = 0.0;
    for (const auto& r : rs) sum += acc ? r.pixel_accuracy : r.miou;
    return sum / static_cast<double>(rs.size());
  };
  json rows_json = json::array();
  std::ostringstream md;
  md << "| parameter (lambda) | paradigm | mIoU | pixel acc |\n|---|---|---:|---:|\n";
  std::vector<std::pair<std::string, double>> bars;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const bool baseline = i == 0;
    const std::string label = baseline ? "student" : cell_params(name, cells[i - 1].distill);
    json per_seed = json::array();
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      json e = rows[i][k].to_json(cfg.scene.classes);
      e["seed"] = lp.seeds[k];
      per_seed.push_back(std::move(e));
    }
    json row = {{"label", label},
                {"mean_miou", mean(rows[i], false)},
                {"mean_pixel_accuracy", mean(rows[i], true)},
                {"per_seed", per_seed}};
    if (!baseline) {
      const DistillConfig& d = cells[i - 1].distill;
      row["paradigm"] = to_string(d.paradigm);
      row["lambdas"] = {{"kl_out", d.lambda_kl_out},
                        {"kl_feat", d.lambda_kl_feat},
                        {"mse", d.lambda_mse},
                        {"pseudo", d.lambda_pseudo},
                        {"target", d.lambda_target}};
    }
    rows_json.push_back(row);
    md << "| " << label << " | " << (baseline ? "-" : to_string(cells[i - 1].distill.paradigm)) << " | "
       << fixed(100.0 * mean(rows[i], false), 2) << " | " << fixed(100.0 * mean(rows[i], true), 2) << " |\n";
    bars.emplace_back(label, 100.0 * mean(rows[i], false));
  }
  const json doc = {{"format", "dakd-ablation-report"},
                    {"version", 1},
                    {"ablation", name},
                    {"seeds", lp.seeds},
                    {"class_names", cfg.scene.classes},
                    {"rows", rows_json}};
  const fs::path reports = cfg.experiment_dir() / "reports";
  write_text(reports / ("ablation_" + name + ".json"), doc.dump(2) + '\n');
  write_text(reports / ("ablation_" + name + ".md"), md.str());
  write_text(cfg.experiment_dir() / "plots" / ("ablation_" + name + ".svg"),
             bar_chart_svg(bars, "target mIoU, ablation " + name));
  out << md.str();
  return 0;
}

int cmd_ladder(const CommonFlags& f, const LadderFlags& l, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(f);
  if (f.seed) {
    cfg.seeds = {*f.seed};
  } else if (const auto s = env_seed(); s && f.config.empty()) {
    cfg.seeds = {*s};
  }
  cfg.validate();
  if (!l.aggregate.empty()) {
    if (!l.ablation.empty()) throw UsageError("--aggregate cannot be combined with --ablation");
    std::vector<LadderReport> parts;
    for (const auto& path : l.aggregate) {
      std::ifstream in(path);
      if (!in) throw std::runtime_error("cannot read report " + path);
      try {
        parts.push_back(LadderReport::from_json(json::parse(in)));
      } catch (const std::exception& e) {
        throw std::runtime_error("bad ladder report " + path + ": " + e.what());
      }
    }
    emit_ladder(cfg, LadderReport::merge(parts), out);
    return 0;
  }
  echo_config(cfg, {});
  if (!l.ablation.empty()) return cmd_ablation(cfg, l.ablation, out);

  LadderPlan lp = ladder_plan(cfg);
  lp.out_dir = cfg.experiment_dir();
  const TwoDomainData data = load_data(cfg);
  const LadderReport report = run_paradigm_ladder(lp, data);
  for (const auto& s : report.seeds) {
    if (!s.teacher_before.bit_identical(s.teacher_after)) throw std::logic_error("teacher parameters changed");
  }
  emit_ladder(cfg, report, out);
  return 0;
}

}  // namespace

LadderPlan ladder_plan(const ExperimentConfig& cfg) {
  LadderPlan lp;
  lp.teacher = cfg.teacher;
  lp.student = cfg.student;
  lp.discriminator = cfg.discriminator;
  lp.base = cfg.train;
  lp.teacher_iters = cfg.teacher_iters;
  lp.student_iters = cfg.student_iters;
  lp.distill_iters = cfg.distill_iters;
  lp.seeds = cfg.seeds;
  lp.class_names = cfg.scene.classes;
  return lp;
}

std::vector<AblationCell> ablation_grid(const std::string& name, const DistillConfig& base) {
  auto cell = [&](double kl, double mse, double pseudo) {
    DistillConfig d = base;
    d.paradigm = Paradigm::kA;
    d.lambda_kl_out = kl;
    d.lambda_kl_feat = kl / 10.0;
    d.lambda_mse = mse;
    d.lambda_pseudo = pseudo;
    return d;
  };
  std::vector<DistillConfig> grid;
  if (name == "kl") {
    for (const double v : {0.1, 0.4, 0.7, 1.0}) grid.push_back(cell(v, 0, 0));
  } else if (name == "mse") {
    for (const double v : {0.005, 0.05, 0.01}) grid.push_back(cell(0, v, 0));
  } else if (name == "pseudo") {
    for (const double v : {0.001, 0.01, 0.05, 0.1, 0.5, 1.0}) grid.push_back(cell(0, 0, v));
  } else if (name == "kl_mse") {
    grid = {cell(0.4, 0.01, 0), cell(0.1, 0.01, 0), cell(0.7, 0.05, 0)};
  } else if (name == "kl_pseudo") {
    grid = {cell(0.1, 0, 0.1), cell(0.1, 0, 1.0)};
  } else if (name == "mse_pseudo") {
    grid = {cell(0, 0.01, 1.0)};
  } else if (name == "all") {
    grid = {cell(0.1, 0.01, 1.0)};
  } else if (name == "target") {
    for (const double v : {0.05, 0.1, 0.5, 1.0}) {
      DistillConfig d = cell(0.1, 0.01, 1.0);
      d.paradigm = Paradigm::kC;
      d.lambda_target = v;
      grid.push_back(d);
    }
  } else {
    throw std::invalid_argument("unknown ablation '" + name + "'");
  }
  std::vector<AblationCell> cells;
  for (const auto& d : grid) cells.push_back({cell_params(name, d), d});
  return cells;
}

std::string bar_chart_svg(const std::vector<std::pair<std::string, double>>& bars, const std::string& title) {
  const int width = 80 + 70 * static_cast<int>(bars.size());
  const int height = 320;
  const int top = 40;
  const int bottom = 260;
  const double scale = (bottom - top) / 100.0;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
     << "</text>\n";
  for (int tick = 0; tick <= 100; tick += 20) {
    const double y = bottom - tick * scale;
    os << "<line x1=\"50\" x2=\"" << width - 20 << "\" y1=\"" << fixed(y, 1) << "\" y2=\"" << fixed(y, 1)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"44\" y=\"" << fixed(y + 4, 1) << "\" text-anchor=\"end\">" << tick << "</text>\n";
  }
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = std::clamp(bars[i].second, 0.0, 100.0);
    const double x = 60 + 70.0 * static_cast<double>(i);
    const double h = v * scale;
    os << "<rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(bottom - h, 1) << "\" width=\"50\" height=\""
       << fixed(h, 1) << "\" fill=\"#4a7ab5\"/>\n";
    os << "<text x=\"" << fixed(x + 25, 1) << "\" y=\"" << fixed(bottom - h - 4, 1) << "\" text-anchor=\"middle\">"
       << fixed(bars[i].second, 1) << "</text>\n";
    os << "<text x=\"" << fixed(x + 25, 1) << "\" y=\"" << bottom + 18 << "\" text-anchor=\"middle\">"
       << xml_escape(bars[i].first) << "</text>\n";
  }
  os << "<line x1=\"50\" x2=\"" << width - 20 << "\" y1=\"" << bottom << "\" y2=\"" << bottom
     << "\" stroke=\"black\"/>\n";
  os << "</svg>\n";
  return os.str();
}

Raster colorize(const LabelMap& labels) {
  Raster r{labels.width(), labels.height(), 3, {}};
  r.pixels.reserve(labels.pixels() * 3);
  const auto& palette = class_palette();
  for (std::size_t p = 0; p < labels.pixels(); ++p) {
    const int c = labels[p];
    for (int ch = 0; ch < 3; ++ch) {
      const double v = c < static_cast<int>(palette.size()) ? palette[c][ch] : 0.0;
      r.pixels.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
    }
  }
  return r;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain-adaptive knowledge distillation for semantic segmentation", "dakd"};
  app.require_subcommand(1);

  CommonFlags gen_common;
  bool dry_run = false;
  auto* gen = app.add_subcommand("generate-data", "render the two-domain ShapeScenes dataset");
  add_common(gen, gen_common);
  gen->add_flag("--dry-run", dry_run, "print the planned split sizes and write nothing");

  CommonFlags pre_common;
  PretrainFlags pre;
  auto* pretrain = app.add_subcommand("pretrain", "adversarial domain-adaptation pretraining");
  add_common(pretrain, pre_common);
  pretrain->add_option("--role", pre.role, "network to train")->required()->check(CLI::IsMember({"teacher", "student"}));
  pretrain->add_option("--max-iters", pre.max_iters, "override the configured iteration count")
      ->check(CLI::NonNegativeNumber);
  pretrain->add_option("--init-from", pre.init_from, "start from this checkpoint")->check(CLI::ExistingFile);
  pretrain->add_flag("--resume", pre.resume, "continue the latest checkpoint of this run");

  CommonFlags dis_common;
  DistillFlags dis;
  auto* distill_cmd = app.add_subcommand("distill", "distil a frozen teacher into the student");
  add_common(distill_cmd, dis_common);
  distill_cmd->add_option("--paradigm", dis.paradigm, "a: source, b: target, c: both, d: target after c")
      ->required()
      ->check(CLI::IsMember({"a", "b", "c", "d"}));
  distill_cmd->add_option("--teacher", dis.teacher, "teacher checkpoint")->required()->check(CLI::ExistingFile);
  distill_cmd->add_option("--student", dis.student, "DA-pretrained student checkpoint")->check(CLI::ExistingFile);
  distill_cmd->add_option("--init-from", dis.init_from, "paradigm c checkpoint (paradigm d)")
      ->check(CLI::ExistingFile);
  distill_cmd->add_option("--max-iters", dis.max_iters, "override the configured iteration count")
      ->check(CLI::NonNegativeNumber);
  distill_cmd->add_option("--lambda-kl", dis.lambda_kl, "output-level KL weight (feature level gets a tenth)");
  distill_cmd->add_option("--lambda-kl-feat", dis.lambda_kl_feat, "feature-level KL weight");
  distill_cmd->add_option("--lambda-mse", dis.lambda_mse, "feature MSE weight");
  distill_cmd->add_option("--lambda-pseudo", dis.lambda_pseudo, "pseudo teacher label CE weight");
  distill_cmd->add_option("--lambda-target", dis.lambda_target, "scale of the target-domain terms");
  distill_cmd->add_option("--name", dis.name, "run directory name (default distill_<paradigm>)");
  distill_cmd->add_flag("--resume", dis.resume, "continue the latest checkpoint of this run");

  CommonFlags eval_common;
  EvaluateFlags ev;
  auto* eval = app.add_subcommand("evaluate", "per-class IoU, mIoU and pixel accuracy of a checkpoint");
  add_common(eval, eval_common);
  eval->add_option("--checkpoint", ev.checkpoint, "checkpoint header")->required()->check(CLI::ExistingFile);
  eval->add_option("--domain", ev.domain, "dataset domain")->check(CLI::IsMember({"source", "target"}));
  eval->add_option("--split", ev.split, "dataset split")->check(CLI::IsMember({"train", "val"}));
  eval->add_option("--predictions", ev.predictions, "write colour-coded prediction PNGs here");
  eval->add_option("--report", ev.report, "report path (default reports/eval_<role>_<domain>_<split>.json)");

  CommonFlags lad_common;
  LadderFlags lad;
  auto* ladder = app.add_subcommand("ladder", "teacher, student and paradigms a-d over the configured seeds");
  add_common(ladder, lad_common);
  ladder->add_option("--ablation", lad.ablation, "sweep a loss-weight grid instead")->check(CLI::IsMember(kAblations));
  ladder->add_option("--aggregate", lad.aggregate, "merge existing ladder reports instead of training")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_generate_data(gen_common, dry_run, out);
    if (pretrain->parsed()) return cmd_pretrain(pre_common, pre, out);
    if (distill_cmd->parsed()) return cmd_distill(dis_common, dis, out);
    if (eval->parsed()) return cmd_evaluate(eval_common, ev, out);
    if (ladder->parsed()) return cmd_ladder(lad_common, lad, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingAborted& e) {
    err << "training aborted: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace dakd::cli
