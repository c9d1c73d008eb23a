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

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dakd/core.hpp"
#include "dakd/data.hpp"
#include "dakd/losses.hpp"
#include "dakd/metrics.hpp"
#include "dakd/models.hpp"
#include "dakd/optim.hpp"

namespace dakd {

/// Level weights of the multi-level baseline. Declared defaults, not values
/// taken from a published configuration.
inline constexpr double kDefaultAuxSegWeight = 0.1;
inline constexpr double kDefaultAdvWeightOut = 1e-3;
inline constexpr double kDefaultAdvWeightFeat = 2e-4;

struct TrainPlan {
  DistillConfig distill;
  OptimSpec gen_optim = OptimSpec::generator_default();
  OptimSpec disc_optim = OptimSpec::discriminator_default();
  int batch_size = 2;
  int max_iters = 5000;
  std::uint64_t seed = 0;
  double aux_seg_weight = kDefaultAuxSegWeight;
  double adv_weight_out = kDefaultAdvWeightOut;
  double adv_weight_feat = kDefaultAdvWeightFeat;
  /// Checkpoint to start from; mandatory for paradigm D distillation.
  std::optional<std::filesystem::path> init_from;
  bool freeze_discriminators = false;
  /// Evaluate on target validation every N iterations (0 disables).
  int eval_every = 0;
  /// Invoke TrainHooks::on_checkpoint every N iterations (0 disables).
  int checkpoint_every = 0;
  /// Continue from the state's saved loop position instead of iteration 0.
  bool resume = false;

  Paradigm paradigm() const { return distill.paradigm; }
  void validate() const;
  /// Additional checks for distillation runs.
  void validate_for_distill() const;
};

void to_json(nlohmann::json& j, const TrainPlan& p);
void from_json(const nlohmann::json& j, TrainPlan& p);

struct IterRecord {
  int iter = 0;
  double lr = 0.0;
  double disc_lr = 0.0;
  /// Generator objective: value is the logged total, breakdown its parts.
  LossValue generator;
  LossValue distill;
  double disc_out = 0.0;
  double disc_feat = 0.0;
};

struct EvalRecord {
  int iter = 0;
  EvalReport report;
};

/// Append-only record of a run.
class TrainLog {
 public:
  void append(IterRecord r) { iters_.push_back(std::move(r)); }
  void append(EvalRecord r) { evals_.push_back(std::move(r)); }
  void set_abort(std::string reason) { abort_reason_ = std::move(reason); }

  const std::vector<IterRecord>& iterations() const { return iters_; }
  const std::vector<EvalRecord>& evaluations() const { return evals_; }
  const std::optional<std::string>& abort_reason() const { return abort_reason_; }

  /// One JSON object per line: iteration records, then evaluation records,
  /// then an abort record if any.
  std::string to_jsonl(const std::vector<std::string>& class_names) const;
  void write(const std::filesystem::path& path, const std::vector<std::string>& class_names) const;

 private:
  std::vector<IterRecord> iters_;
  std::vector<EvalRecord> evals_;
  std::optional<std::string> abort_reason_;
};

nlohmann::json to_json(const IterRecord& r);

/// Raised when a loss turns non-finite; the log carries the diagnostic.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Position inside a run: enough to continue it bit-exactly.
struct LoopState {
  int next_iter = 0;
  OptimizerState gen;
  OptimizerState adapter;
  OptimizerState disc_feat;
  OptimizerState disc_out;
};

/// Everything that trains on the generator side of a run.
struct TrainingState {
  SegmentationNet net;
  Discriminator disc_feat;
  Discriminator disc_out;
  std::optional<FeatureAdapter> adapter;
  int iteration = 0;
  /// Set by the training loop after every iteration.
  std::optional<LoopState> loop;

  TrainingState(const SegNetConfig& net_cfg, const DiscriminatorConfig& disc_cfg, std::uint64_t seed);

  /// Prefixed tensors: net/, disc_feat/, disc_out/ and adapter/. Loop state
  /// is not included.
  ParamSnapshot snapshot() const;
  void load(const ParamSnapshot& snapshot);
  /// Adds a student-side adapter when the two tap widths differ.
  void ensure_adapter(int teacher_tap_width, std::uint64_t seed);
};

/// Checkpoint config block describing a TrainingState. The loop position,
/// when present, is stored as loop/ tensors plus a "loop" config entry.
nlohmann::json state_config(const TrainingState& s, const std::string& role, const std::string& config_hash = "");
Checkpoint make_checkpoint(const TrainingState& s, const nlohmann::json& config);
TrainingState state_from_checkpoint(const Checkpoint& ckpt);
/// Teacher network from a checkpoint, frozen.
FrozenSegNet teacher_from_checkpoint(const Checkpoint& ckpt);

/// Data a training run consumes.
struct TwoDomainData {
  std::shared_ptr<const Dataset> source_train;
  std::shared_ptr<const Dataset> target_train;
  /// Optional; needed for periodic evaluation.
  std::shared_ptr<const Dataset> target_val;

  static TwoDomainData load(const std::filesystem::path& root);
};

struct TrainHooks {
  std::function<void(const TrainingState&, const TrainLog&)> on_checkpoint;
};

/// Adversarial domain-adaptation training: per iteration one generator
/// step (segmentation loss on source, adversarial loss on target) followed
/// by one step of each discriminator.
TrainLog pretrain_da(TrainingState& state, const TwoDomainData& data, const TrainPlan& plan,
                     const TrainHooks& hooks = {});

/// Distillation training from a frozen teacher. The generator objective is
/// the pretraining objective plus the paradigm's distillation terms.
TrainLog distill(const FrozenSegNet& teacher, TrainingState& student, const TwoDomainData& data,
                 const TrainPlan& plan, const TrainHooks& hooks = {});

/// Main-head predictions on a dataset.
ConfusionMatrix confusion_on(const SegmentationNet& net, const Dataset& data, int batch_size = 8,
                             const std::function<void(int, const LabelMap&)>& on_prediction = {});
EvalReport evaluate(const SegmentationNet& net, const Dataset& data);

/// Everything a paradigm ladder needs.
struct LadderPlan {
  SegNetConfig teacher;
  SegNetConfig student;
  DiscriminatorConfig discriminator;
  /// Template for every run; max_iters and init_from are set per stage.
  TrainPlan base;
  int teacher_iters = 2000;
  int student_iters = 2000;
  int distill_iters = 1000;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<std::string> class_names;
  /// When set, checkpoints/seed<k>/<role>/ and logs/seed<k>/<role>/ are written below it.
  std::optional<std::filesystem::path> out_dir;
};

/// Seed for a role's initial weights ("teacher", "student", "adapter").
std::uint64_t weight_seed(std::uint64_t run_seed, const std::string& role);

/// Fresh state for a ladder role, with an adapter on the student when the
/// tap widths differ.
TrainingState initial_state(const LadderPlan& plan, const std::string& role, std::uint64_t seed);

struct PretrainedPair {
  TrainingState teacher;
  TrainingState student;
  TrainLog teacher_log;
  TrainLog student_log;
};

/// DA pretraining of both networks for one seed.
PretrainedPair pretrain_pair(const LadderPlan& plan, const TwoDomainData& data, std::uint64_t seed);

inline const std::vector<std::string> kLadderRows = {"teacher", "student", "a", "b", "c", "d"};

struct LadderSeedResult {
  std::uint64_t seed = 0;
  /// Keyed by kLadderRows entries.
  std::map<std::string, EvalReport> rows;
  std::map<std::string, ParamSnapshot> final_snapshots;
  ParamSnapshot teacher_before;
  ParamSnapshot teacher_after;
  /// Student network at the first iteration of paradigm D.
  ParamSnapshot d_initial;
};

struct LadderReport {
  std::vector<LadderSeedResult> seeds;
  std::vector<std::string> class_names;
  std::size_t teacher_params = 0;
  std::size_t student_params = 0;

  /// Mean target mIoU of a row over seeds.
  double mean_miou(const std::string& row) const;
  double mean_pixel_accuracy(const std::string& row) const;
  nlohmann::json to_json() const;
  std::string to_markdown() const;
  /// Inverse of to_json for the evaluation parts; snapshots are not stored.
  static LadderReport from_json(const nlohmann::json& j);
  /// Concatenates the seeds of several reports over the same rows and classes.
  static LadderReport merge(const std::vector<LadderReport>& reports);
};

/// DA-pretrains teacher and student, then runs paradigms A, B and C from the
/// student checkpoint and D from C's result, for every seed.
LadderReport run_paradigm_ladder(const LadderPlan& plan, const TwoDomainData& data);

/// One seed of the ladder.
LadderSeedResult run_ladder_seed(const LadderPlan& plan, const TwoDomainData& data, std::uint64_t seed);

}  // namespace dakd
