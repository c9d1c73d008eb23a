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

#include "dakd/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace dakd {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + stream;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void add_scaled(Grid& dst, const Grid& src, double factor) {
  auto& d = dst.values();
  const auto& s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

std::vector<Grid> zero_like(const std::vector<LogitMap>& maps) {
  std::vector<Grid> out;
  for (const auto& m : maps) out.emplace_back(m.height(), m.width(), m.channels());
  return out;
}

std::vector<Grid> zero_like(const std::vector<FeatureMap>& maps) {
  std::vector<Grid> out;
  for (const auto& m : maps) out.emplace_back(m.height(), m.width(), m.channels());
  return out;
}

/// One forward pass of the trainable network with everything the losses need.
struct DomainPass {
  SegNetTrace trace;
  SegNetOutput out;
  std::vector<ProbabilityMap> main_probs;
  std::vector<ProbabilityMap> aux_probs;
  SegNetGrads grads;
};

DomainPass forward_pass(const SegmentationNet& net, const DomainBatch& batch) {
  DomainPass pass;
  pass.out = net.forward(batch.images, &pass.trace);
  for (std::size_t b = 0; b < batch.images.size(); ++b) {
    pass.main_probs.push_back(softmax(pass.out.main_logits[b]));
    pass.aux_probs.push_back(softmax(pass.out.aux_logits[b]));
  }
  pass.grads.main_logits = zero_like(pass.out.main_logits);
  pass.grads.aux_logits = zero_like(pass.out.aux_logits);
  pass.grads.feature = zero_like(pass.out.feature);
  return pass;
}

double batch_factor(Reduction r, std::size_t batch) {
  return r == Reduction::kMean ? 1.0 / static_cast<double>(batch) : 1.0;
}

/// Distillation terms for one batch; gradients go into pass.grads scaled by
/// `grad_scale` (lambda_target on target batches).
DistillTerms distill_batch(const FrozenSegNet& teacher, const DomainBatch& batch, DomainPass& pass,
                           TrainingState& state, nn::Gradients* adapter_grads, const DistillConfig& cfg,
                           double grad_scale) {
  DistillTerms terms;
  const bool any = cfg.lambda_kl_out != 0.0 || cfg.lambda_kl_feat != 0.0 || cfg.lambda_mse != 0.0 ||
                   cfg.lambda_pseudo != 0.0;
  if (!any) return terms;

  const SegNetOutput t = teacher.forward(batch.images);
  const std::size_t n = batch.images.size();
  const double factor = batch_factor(cfg.reduction, n);
  double kl_out = 0.0, kl_feat = 0.0, mse = 0.0, pseudo = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const ProbabilityMap t_main = softmax(t.main_logits[b]);
    const ProbabilityMap t_aux = softmax(t.aux_logits[b]);
    if (cfg.lambda_kl_out != 0.0) {
      const auto l = kl_distill(pass.main_probs[b], t_main, cfg.lambda_kl_out, cfg.kl_direction, cfg.reduction);
      kl_out += factor * l.loss.value;
      add_scaled(pass.grads.main_logits[b], softmax_backward(pass.main_probs[b], l.grad), factor * grad_scale);
    }
    if (cfg.lambda_kl_feat != 0.0) {
      const auto l = kl_distill(pass.aux_probs[b], t_aux, cfg.lambda_kl_feat, cfg.kl_direction, cfg.reduction);
      kl_feat += factor * l.loss.value;
      add_scaled(pass.grads.aux_logits[b], softmax_backward(pass.aux_probs[b], l.grad), factor * grad_scale);
    }
    if (cfg.lambda_mse != 0.0) {
      if (state.adapter) {
        const FeatureMap projected = state.adapter->forward(pass.out.feature[b]);
        const auto l = mse_distill(projected, t.feature[b], cfg.lambda_mse, cfg.reduction);
        mse += factor * l.loss.value;
        Grid scaled = l.grad;
        for (double& v : scaled.values()) v *= factor * grad_scale;
        add_scaled(pass.grads.feature[b], state.adapter->backward(pass.out.feature[b], scaled, *adapter_grads), 1.0);
      } else {
        const auto l = mse_distill(pass.out.feature[b], t.feature[b], cfg.lambda_mse, cfg.reduction);
        mse += factor * l.loss.value;
        add_scaled(pass.grads.feature[b], l.grad, factor * grad_scale);
      }
    }
    if (cfg.lambda_pseudo != 0.0) {
      const auto l = pseudo_ce(pass.main_probs[b], pseudo_labels(t_main), cfg.lambda_pseudo, cfg.reduction);
      pseudo += factor * l.loss.value;
      add_scaled(pass.grads.main_logits[b], softmax_backward(pass.main_probs[b], l.grad), factor * grad_scale);
    }
  }
  terms.kl_out = LossValue::single("kl_out", kl_out);
  terms.kl_feat = LossValue::single("kl_feat", kl_feat);
  terms.mse = LossValue::single("mse", mse);
  terms.pseudo = LossValue::single("pseudo", pseudo);
  return terms;
}

/// Generator-side adversarial loss through a fixed discriminator; input
/// gradients land in `grads`.
double adversarial_term(const Discriminator& disc, const std::vector<ProbabilityMap>& probs,
                        std::vector<Grid>& grads, double weight, Reduction reduction, nn::Gradients& scratch) {
  if (weight == 0.0) return 0.0;
  DiscTrace trace;
  const std::vector<Grid> d = disc.forward(probs, &trace);
  const double factor = batch_factor(reduction, probs.size());
  double total = 0.0;
  std::vector<Grid> grad_d;
  for (const auto& field : d) {
    auto l = adv_generator(field, reduction);
    total += factor * l.loss.value;
    for (double& v : l.grad.values()) v *= factor * weight;
    grad_d.push_back(std::move(l.grad));
  }
  const std::vector<Grid> grad_probs = disc.backward(trace, grad_d, scratch, true);
  for (std::size_t b = 0; b < probs.size(); ++b) {
    add_scaled(grads[b], softmax_backward(probs[b], grad_probs[b]), 1.0);
  }
  return weight * total;
}

/// One BCE step's worth of gradients on both domains; returns the loss.
double discriminator_loss(const Discriminator& disc, const std::vector<ProbabilityMap>& source,
                          const std::vector<ProbabilityMap>& target, Reduction reduction, nn::Gradients& grads) {
  double total = 0.0;
  for (const bool is_source : {true, false}) {
    const auto& probs = is_source ? source : target;
    DiscTrace trace;
    const std::vector<Grid> d = disc.forward(probs, &trace);
    const double factor = 0.5 * batch_factor(reduction, probs.size());
    std::vector<Grid> grad_d;
    for (const auto& field : d) {
      auto l = disc_bce(field, is_source, reduction);
      total += factor * l.loss.value;
      for (double& v : l.grad.values()) v *= factor;
      grad_d.push_back(std::move(l.grad));
    }
    disc.backward(trace, grad_d, grads, false);
  }
  return total;
}

std::string finite_diagnostic(const IterRecord& r) {
  std::ostringstream os;
  os << "non-finite loss at iteration " << r.iter << ":";
  for (const auto& [k, v] : r.generator.breakdown) os << ' ' << k << '=' << v;
  os << " disc_out=" << r.disc_out << " disc_feat=" << r.disc_feat;
  return os.str();
}

TrainLog run_loop(TrainingState& state, const FrozenSegNet* teacher, const TwoDomainData& data,
                  const TrainPlan& plan, const TrainHooks& hooks) {
  if (!data.source_train || !data.target_train) throw std::invalid_argument("training needs source and target data");
  const Reduction red = plan.distill.reduction;

  OptimSpec gen_spec = plan.gen_optim;
  gen_spec.max_iters = plan.max_iters;
  OptimSpec disc_spec = plan.disc_optim;
  disc_spec.max_iters = plan.max_iters;
  Optimizer gen_opt(gen_spec, state.net.parameters());
  Optimizer disc_feat_opt(disc_spec, state.disc_feat.parameters());
  Optimizer disc_out_opt(disc_spec, state.disc_out.parameters());
  std::optional<Optimizer> adapter_opt;
  if (state.adapter) adapter_opt.emplace(gen_spec, state.adapter->parameters());

  nn::Gradients gen_grads(state.net.parameters());
  nn::Gradients feat_grads(state.disc_feat.parameters());
  nn::Gradients out_grads(state.disc_out.parameters());
  nn::Gradients adapter_grads;
  if (state.adapter) adapter_grads = nn::Gradients(state.adapter->parameters());

  BatchStream source(data.source_train, plan.batch_size, mix_seed(plan.seed, 1), true);
  BatchStream target(data.target_train, plan.batch_size, mix_seed(plan.seed, 2), true);

  int first_iter = 0;
  if (plan.resume) {
    if (!state.loop) throw std::invalid_argument("resume requested but the state carries no loop position");
    const LoopState& ls = *state.loop;
    if (ls.next_iter > plan.max_iters) throw std::invalid_argument("saved loop position is past max_iters");
    gen_opt.restore(ls.gen);
    disc_feat_opt.restore(ls.disc_feat);
    disc_out_opt.restore(ls.disc_out);
    if (adapter_opt) adapter_opt->restore(ls.adapter);
    for (int i = 0; i < ls.next_iter; ++i) {
      source.next();
      target.next();
    }
    first_iter = ls.next_iter;
  }
  auto save_loop = [&](int next_iter) {
    state.loop = LoopState{next_iter, gen_opt.state(), adapter_opt ? adapter_opt->state() : OptimizerState{},
                           disc_feat_opt.state(), disc_out_opt.state()};
  };

  TrainLog log;
  for (int iter = first_iter; iter < plan.max_iters; ++iter) {
    IterRecord rec;
    rec.iter = iter;
    rec.lr = poly_lr(gen_spec, iter);
    rec.disc_lr = poly_lr(disc_spec, iter);
    try {
      gen_grads.zero();
      feat_grads.zero();
      out_grads.zero();
      if (state.adapter) adapter_grads.zero();

      // (i) discriminators fixed, generator step.
      const DomainBatch src = source.next();
      if (!src.labels) throw std::invalid_argument("source batches must carry labels");
      DomainPass sp = forward_pass(state.net, src);
      const double factor = batch_factor(red, src.images.size());
      double seg_main = 0.0;
      double seg_aux = 0.0;
      for (std::size_t b = 0; b < src.images.size(); ++b) {
        const auto main = seg_ce(sp.main_probs[b], (*src.labels)[b], red);
        const auto aux = seg_ce(sp.aux_probs[b], (*src.labels)[b], red);
        seg_main += factor * main.loss.value;
        seg_aux += factor * plan.aux_seg_weight * aux.loss.value;
        add_scaled(sp.grads.main_logits[b], softmax_backward(sp.main_probs[b], main.grad), factor);
        add_scaled(sp.grads.aux_logits[b], softmax_backward(sp.aux_probs[b], aux.grad),
                   factor * plan.aux_seg_weight);
      }
      DistillTerms source_terms;
      if (teacher != nullptr && paradigm_uses(plan.paradigm(), Domain::kSource)) {
        source_terms = distill_batch(*teacher, src, sp, state, &adapter_grads, plan.distill, 1.0);
      }
      state.net.backward(sp.trace, sp.grads, gen_grads);

      const DomainBatch tgt = target.next();
      DomainPass tp = forward_pass(state.net, tgt);
      const double adv_out =
          adversarial_term(state.disc_out, tp.main_probs, tp.grads.main_logits, plan.adv_weight_out, red, out_grads);
      const double adv_feat =
          adversarial_term(state.disc_feat, tp.aux_probs, tp.grads.aux_logits, plan.adv_weight_feat, red, feat_grads);
      DistillTerms target_terms;
      if (teacher != nullptr && paradigm_uses(plan.paradigm(), Domain::kTarget)) {
        target_terms =
            distill_batch(*teacher, tgt, tp, state, &adapter_grads, plan.distill, plan.distill.lambda_target);
      }
      state.net.backward(tp.trace, tp.grads, gen_grads);

      rec.distill = distill_objective(source_terms, target_terms, plan.distill);
      rec.generator.breakdown = {{"seg_main", seg_main}, {"seg_aux", seg_aux}, {"adv_out", adv_out},
                                 {"adv_feat", adv_feat}};
      rec.generator.value = seg_main + seg_aux + adv_out + adv_feat;
      for (const auto& [k, v] : rec.distill.breakdown) rec.generator.breakdown["distill/" + k] = v;
      rec.generator.value += rec.distill.value;
      if (!std::isfinite(rec.generator.value)) throw std::domain_error("generator loss");

      gen_opt.step(state.net.parameters(), gen_grads, rec.lr);
      if (state.adapter) adapter_opt->step(state.adapter->parameters(), adapter_grads, rec.lr);

      // (ii) generator fixed, discriminator steps on the detached predictions.
      feat_grads.zero();
      out_grads.zero();
      rec.disc_out = discriminator_loss(state.disc_out, sp.main_probs, tp.main_probs, red, out_grads);
      rec.disc_feat = discriminator_loss(state.disc_feat, sp.aux_probs, tp.aux_probs, red, feat_grads);
      if (!std::isfinite(rec.disc_out) || !std::isfinite(rec.disc_feat)) throw std::domain_error("discriminator loss");
      if (!plan.freeze_discriminators) {
        disc_out_opt.step(state.disc_out.parameters(), out_grads, rec.disc_lr);
        disc_feat_opt.step(state.disc_feat.parameters(), feat_grads, rec.disc_lr);
      }
    } catch (const std::domain_error& e) {
      const std::string reason = finite_diagnostic(rec) + " (" + e.what() + ")";
      log.set_abort(reason);
      throw TrainingAborted(reason);
    }
    log.append(std::move(rec));
    ++state.iteration;
    save_loop(iter + 1);

    if (plan.eval_every > 0 && data.target_val && ((iter + 1) % plan.eval_every == 0 || iter + 1 == plan.max_iters)) {
      log.append(EvalRecord{iter + 1, evaluate(state.net, *data.target_val)});
    }
    if (plan.checkpoint_every > 0 && hooks.on_checkpoint && (iter + 1) % plan.checkpoint_every == 0) {
      hooks.on_checkpoint(state, log);
    }
  }
  if (!state.loop || state.loop->next_iter != plan.max_iters) save_loop(plan.max_iters);
  return log;
}

}  // namespace

void TrainPlan::validate() const {
  distill.validate();
  gen_optim.validate();
  disc_optim.validate();
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (max_iters < 0) throw std::invalid_argument("max_iters must be non-negative");
  if (!(aux_seg_weight >= 0.0) || !(adv_weight_out >= 0.0) || !(adv_weight_feat >= 0.0)) {
    throw std::invalid_argument("loss level weights must be non-negative");
  }
  if (eval_every < 0) throw std::invalid_argument("eval_every must be non-negative");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be non-negative");
}

void TrainPlan::validate_for_distill() const {
  validate();
  if (paradigm() == Paradigm::kD && !init_from) {
    throw std::invalid_argument("paradigm d requires init_from pointing at a paradigm c checkpoint");
  }
}

void to_json(nlohmann::json& j, const TrainPlan& p) {
  j = {{"paradigm", to_string(p.distill.paradigm)},
       {"distill",
        {{"lambda_kl_out", p.distill.lambda_kl_out},
         {"lambda_kl_feat", p.distill.lambda_kl_feat},
         {"lambda_mse", p.distill.lambda_mse},
         {"lambda_pseudo", p.distill.lambda_pseudo},
         {"lambda_target", p.distill.lambda_target},
         {"kl_direction", to_string(p.distill.kl_direction)},
         {"reduction", to_string(p.distill.reduction)}}},
       {"gen_optim", p.gen_optim},
       {"disc_optim", p.disc_optim},
       {"batch_size", p.batch_size},
       {"max_iters", p.max_iters},
       {"seed", p.seed},
       {"aux_seg_weight", p.aux_seg_weight},
       {"adv_weight_out", p.adv_weight_out},
       {"adv_weight_feat", p.adv_weight_feat},
       {"init_from", p.init_from ? nlohmann::json(p.init_from->string()) : nlohmann::json(nullptr)},
       {"freeze_discriminators", p.freeze_discriminators},
       {"eval_every", p.eval_every},
       {"checkpoint_every", p.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainPlan& p) {
  const auto& d = j.at("distill");
  p.distill.paradigm = paradigm_from_string(j.at("paradigm").get<std::string>());
  p.distill.lambda_kl_out = d.at("lambda_kl_out").get<double>();
  p.distill.lambda_kl_feat = d.at("lambda_kl_feat").get<double>();
  p.distill.lambda_mse = d.at("lambda_mse").get<double>();
  p.distill.lambda_pseudo = d.at("lambda_pseudo").get<double>();
  p.distill.lambda_target = d.at("lambda_target").get<double>();
  p.distill.kl_direction = kl_direction_from_string(d.at("kl_direction").get<std::string>());
  p.distill.reduction = reduction_from_string(d.at("reduction").get<std::string>());
  p.gen_optim = j.at("gen_optim").get<OptimSpec>();
  p.disc_optim = j.at("disc_optim").get<OptimSpec>();
  p.batch_size = j.at("batch_size").get<int>();
  p.max_iters = j.at("max_iters").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.aux_seg_weight = j.at("aux_seg_weight").get<double>();
  p.adv_weight_out = j.at("adv_weight_out").get<double>();
  p.adv_weight_feat = j.at("adv_weight_feat").get<double>();
  if (j.contains("init_from") && !j.at("init_from").is_null()) p.init_from = j.at("init_from").get<std::string>();
  p.freeze_discriminators = j.value("freeze_discriminators", false);
  p.eval_every = j.value("eval_every", 0);
  p.checkpoint_every = j.value("checkpoint_every", 0);
}

nlohmann::json to_json(const IterRecord& r) {
  return {{"type", "iter"},
          {"iter", r.iter},
          {"lr", r.lr},
          {"disc_lr", r.disc_lr},
          {"total", r.generator.value},
          {"breakdown", r.generator.breakdown},
          {"disc", {{"out", r.disc_out}, {"feat", r.disc_feat}}}};
}

std::string TrainLog::to_jsonl(const std::vector<std::string>& class_names) const {
  std::string out;
  for (const auto& r : iters_) out += to_json(r).dump() + '\n';
  for (const auto& e : evals_) {
    nlohmann::json j = e.report.to_json(class_names);
    j["type"] = "eval";
    j["iter"] = e.iter;
    out += j.dump() + '\n';
  }
  if (abort_reason_) out += nlohmann::json{{"type", "abort"}, {"reason", *abort_reason_}}.dump() + '\n';
  return out;
}

void TrainLog::write(const std::filesystem::path& path, const std::vector<std::string>& class_names) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write log " + path.string());
  out << to_jsonl(class_names);
}

TrainingState::TrainingState(const SegNetConfig& net_cfg, const DiscriminatorConfig& disc_cfg, std::uint64_t seed)
    : net(net_cfg, mix_seed(seed, 10)),
      disc_feat(disc_cfg, mix_seed(seed, 11)),
      disc_out(disc_cfg, mix_seed(seed, 12)) {
  if (disc_cfg.in_channels != net_cfg.num_classes) {
    throw std::invalid_argument("discriminator in_channels must equal num_classes");
  }
}

ParamSnapshot TrainingState::snapshot() const {
  ParamSnapshot s = net.snapshot(iteration, "net/");
  for (auto& t : disc_feat.snapshot(iteration, "disc_feat/").tensors) s.tensors.push_back(std::move(t));
  for (auto& t : disc_out.snapshot(iteration, "disc_out/").tensors) s.tensors.push_back(std::move(t));
  if (adapter) {
    for (const auto& p : adapter->parameters()) s.tensors.push_back({"adapter/" + p.name, p.shape, p.value});
  }
  return s;
}

void TrainingState::load(const ParamSnapshot& snapshot) {
  net.load(snapshot, "net/");
  disc_feat.load(snapshot, "disc_feat/");
  disc_out.load(snapshot, "disc_out/");
  if (adapter) {
    for (auto& p : adapter->parameters()) {
      if (const auto* src = snapshot.find("adapter/" + p.name); src != nullptr && src->shape == p.shape) {
        p.value = src->value;
      }
    }
  }
  iteration = snapshot.iteration;
}

void TrainingState::ensure_adapter(int teacher_tap_width, std::uint64_t seed) {
  if (teacher_tap_width == net.config().feature_tap_width || adapter) return;
  adapter.emplace(net.config().feature_tap_width, teacher_tap_width, mix_seed(seed, 13));
}

nlohmann::json state_config(const TrainingState& s, const std::string& role, const std::string& config_hash) {
  nlohmann::json j = {{"role", role}, {"segnet", s.net.config()}, {"discriminator", s.disc_out.config()}};
  if (s.adapter) {
    j["adapter"] = {{"in_channels", s.net.config().feature_tap_width},
                    {"out_channels", s.adapter->parameters()[0].shape[0]}};
  }
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j;
}

namespace {

void add_optim_tensors(ParamSnapshot& snap, const std::string& prefix, const OptimizerState& st) {
  for (std::size_t i = 0; i < st.first.size(); ++i) {
    snap.tensors.push_back({prefix + "first/" + std::to_string(i), {static_cast<int>(st.first[i].size())}, st.first[i]});
  }
  for (std::size_t i = 0; i < st.second.size(); ++i) {
    snap.tensors.push_back(
        {prefix + "second/" + std::to_string(i), {static_cast<int>(st.second[i].size())}, st.second[i]});
  }
}

OptimizerState read_optim_tensors(const ParamSnapshot& snap, const std::string& prefix, const nlohmann::json& meta) {
  OptimizerState st;
  st.steps = meta.at("steps").get<long long>();
  const auto read = [&](const std::string& kind, int count, std::vector<std::vector<float>>& out) {
    for (int i = 0; i < count; ++i) {
      const auto* t = snap.find(prefix + kind + "/" + std::to_string(i));
      if (t == nullptr) throw std::runtime_error("checkpoint is missing optimizer tensor " + prefix + kind);
      out.push_back(t->value);
    }
  };
  read("first", meta.at("first").get<int>(), st.first);
  read("second", meta.at("second").get<int>(), st.second);
  return st;
}

nlohmann::json optim_meta(const OptimizerState& st) {
  return {{"steps", st.steps}, {"first", st.first.size()}, {"second", st.second.size()}};
}

}  // namespace

Checkpoint make_checkpoint(const TrainingState& s, const nlohmann::json& config) {
  Checkpoint c{config, s.snapshot()};
  if (s.loop) {
    const LoopState& ls = *s.loop;
    nlohmann::json meta = {{"next_iter", ls.next_iter}};
    const std::pair<const char*, const OptimizerState*> parts[] = {
        {"gen", &ls.gen}, {"adapter", &ls.adapter}, {"disc_feat", &ls.disc_feat}, {"disc_out", &ls.disc_out}};
    for (const auto& [name, st] : parts) {
      meta[name] = optim_meta(*st);
      add_optim_tensors(c.params, std::string("loop/") + name + "/", *st);
    }
    c.config["loop"] = meta;
  }
  return c;
}

TrainingState state_from_checkpoint(const Checkpoint& ckpt) {
  const auto net_cfg = ckpt.config.at("segnet").get<SegNetConfig>();
  const auto disc_cfg = ckpt.config.at("discriminator").get<DiscriminatorConfig>();
  TrainingState s(net_cfg, disc_cfg, 0);
  if (ckpt.config.contains("adapter")) {
    s.adapter.emplace(ckpt.config["adapter"].at("in_channels").get<int>(),
                      ckpt.config["adapter"].at("out_channels").get<int>(), 0);
  }
  s.load(ckpt.params);
  if (ckpt.config.contains("loop")) {
    const auto& meta = ckpt.config["loop"];
    LoopState ls;
    ls.next_iter = meta.at("next_iter").get<int>();
    ls.gen = read_optim_tensors(ckpt.params, "loop/gen/", meta.at("gen"));
    ls.adapter = read_optim_tensors(ckpt.params, "loop/adapter/", meta.at("adapter"));
    ls.disc_feat = read_optim_tensors(ckpt.params, "loop/disc_feat/", meta.at("disc_feat"));
    ls.disc_out = read_optim_tensors(ckpt.params, "loop/disc_out/", meta.at("disc_out"));
    s.loop = std::move(ls);
  }
  return s;
}

FrozenSegNet teacher_from_checkpoint(const Checkpoint& ckpt) {
  SegmentationNet net(ckpt.config.at("segnet").get<SegNetConfig>(), 0);
  net.load(ckpt.params, "net/");
  return freeze(std::move(net));
}

TwoDomainData TwoDomainData::load(const std::filesystem::path& root) {
  TwoDomainData d;
  d.source_train = std::make_shared<const Dataset>(load_dataset(load_manifest(manifest_path(root, Domain::kSource, Split::kTrain))));
  d.target_train = std::make_shared<const Dataset>(load_dataset(load_manifest(manifest_path(root, Domain::kTarget, Split::kTrain))));
  d.target_val = std::make_shared<const Dataset>(load_dataset(load_manifest(manifest_path(root, Domain::kTarget, Split::kVal))));
  return d;
}

TrainLog pretrain_da(TrainingState& state, const TwoDomainData& data, const TrainPlan& plan,
                     const TrainHooks& hooks) {
  plan.validate();
  return run_loop(state, nullptr, data, plan, hooks);
}

TrainLog distill(const FrozenSegNet& teacher, TrainingState& student, const TwoDomainData& data,
                 const TrainPlan& plan, const TrainHooks& hooks) {
  plan.validate_for_distill();
  if (teacher.config().num_classes != student.net.config().num_classes) {
    throw std::invalid_argument("teacher and student disagree on the number of classes");
  }
  if (teacher.config().feature_tap_width != student.net.config().feature_tap_width && !student.adapter &&
      plan.distill.lambda_mse != 0.0) {
    throw std::invalid_argument("teacher and student tap widths differ and no feature adapter is configured");
  }
  return run_loop(student, &teacher, data, plan, hooks);
}

ConfusionMatrix confusion_on(const SegmentationNet& net, const Dataset& data, int batch_size,
                             const std::function<void(int, const LabelMap&)>& on_prediction) {
  if (data.labels.size() != data.images.size()) throw std::invalid_argument("evaluation data must be labelled");
  ConfusionMatrix cm(net.config().num_classes);
  const int n = static_cast<int>(data.images.size());
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    const auto out = net.forward(std::span<const ImageTensor>(data.images).subspan(start, count));
    for (int b = 0; b < count; ++b) {
      const LabelMap pred = pseudo_labels(softmax(out.main_logits[b]));
      cm.accumulate(pred, data.labels[start + b]);
      if (on_prediction) on_prediction(start + b, pred);
    }
  }
  return cm;
}

EvalReport evaluate(const SegmentationNet& net, const Dataset& data) {
  return compute_report(confusion_on(net, data), static_cast<int>(data.images.size()));
}

namespace {

struct LadderIo {
  std::optional<std::filesystem::path> root;
  std::string seed_dir;
  std::vector<std::string> class_names;

  void save(const std::string& role, const TrainingState& s, const TrainLog& log) const {
    if (!root) return;
    save_checkpoint(checkpoint_path(role), make_checkpoint(s, state_config(s, role)));
    log.write(*root / "logs" / seed_dir / role / "train.jsonl", class_names);
  }
  std::filesystem::path checkpoint_path(const std::string& role) const {
    return *root / "checkpoints" / seed_dir / role / "final.json";
  }
};

TrainPlan stage_plan(const TrainPlan& base, int iters, std::uint64_t seed) {
  TrainPlan p = base;
  p.max_iters = iters;
  p.seed = seed;
  p.init_from.reset();
  return p;
}

}  // namespace

std::uint64_t weight_seed(std::uint64_t run_seed, const std::string& role) {
  if (role == "teacher") return mix_seed(run_seed, 100);
  if (role == "student") return mix_seed(run_seed, 200);
  if (role == "adapter") return mix_seed(run_seed, 201);
  throw std::invalid_argument("unknown role '" + role + "'");
}

TrainingState initial_state(const LadderPlan& plan, const std::string& role, std::uint64_t seed) {
  if (role == "teacher") return TrainingState(plan.teacher, plan.discriminator, weight_seed(seed, role));
  TrainingState s(plan.student, plan.discriminator, weight_seed(seed, "student"));
  s.ensure_adapter(plan.teacher.feature_tap_width, weight_seed(seed, "adapter"));
  return s;
}

PretrainedPair pretrain_pair(const LadderPlan& plan, const TwoDomainData& data, std::uint64_t seed) {
  TrainingState teacher = initial_state(plan, "teacher", seed);
  TrainLog teacher_log = pretrain_da(teacher, data, stage_plan(plan.base, plan.teacher_iters, seed));
  TrainingState student = initial_state(plan, "student", seed);
  TrainLog student_log = pretrain_da(student, data, stage_plan(plan.base, plan.student_iters, seed));
  return {std::move(teacher), std::move(student), std::move(teacher_log), std::move(student_log)};
}

LadderSeedResult run_ladder_seed(const LadderPlan& plan, const TwoDomainData& data, std::uint64_t seed) {
  if (!data.target_val) throw std::invalid_argument("the ladder evaluates on target validation data");
  LadderIo io;
  io.root = plan.out_dir;
  io.seed_dir = "seed" + std::to_string(seed);
  io.class_names = plan.class_names;

  LadderSeedResult result;
  result.seed = seed;

  PretrainedPair pair = pretrain_pair(plan, data, seed);
  io.save("teacher", pair.teacher, pair.teacher_log);
  io.save("student", pair.student, pair.student_log);
  result.rows["teacher"] = evaluate(pair.teacher.net, *data.target_val);
  result.rows["student"] = evaluate(pair.student.net, *data.target_val);
  const FrozenSegNet teacher = freeze(pair.teacher.net);
  result.teacher_before = teacher.snapshot();
  const TrainingState& student_state = pair.student;

  TrainingState c_final = student_state;
  for (const Paradigm p : {Paradigm::kA, Paradigm::kB, Paradigm::kC, Paradigm::kD}) {
    const std::string row = to_string(p);
    TrainPlan dp = stage_plan(plan.base, plan.distill_iters, seed);
    dp.distill.paradigm = p;
    std::optional<TrainingState> state;
    if (p == Paradigm::kD) {
      if (io.root) {
        dp.init_from = io.checkpoint_path("distill_c");
        state.emplace(state_from_checkpoint(load_checkpoint(*dp.init_from)));
      } else {
        dp.init_from = "distill_c";
        state.emplace(c_final);
      }
      result.d_initial = state->snapshot();
    } else {
      state.emplace(student_state);
    }
    const TrainLog log = distill(teacher, *state, data, dp);
    io.save("distill_" + row, *state, log);
    result.rows[row] = evaluate(state->net, *data.target_val);
    result.final_snapshots[row] = state->snapshot();
    if (p == Paradigm::kC) c_final = *state;
  }
  result.teacher_after = teacher.snapshot();
  return result;
}

LadderReport run_paradigm_ladder(const LadderPlan& plan, const TwoDomainData& data) {
  LadderReport report;
  report.class_names = plan.class_names;
  report.teacher_params = SegmentationNet(plan.teacher, 0).parameter_count();
  report.student_params = SegmentationNet(plan.student, 0).parameter_count();
  for (const auto seed : plan.seeds) report.seeds.push_back(run_ladder_seed(plan, data, seed));
  return report;
}

double LadderReport::mean_miou(const std::string& row) const {
  if (seeds.empty()) throw std::logic_error("empty ladder report");
  double sum = 0.0;
  for (const auto& s : seeds) sum += s.rows.at(row).miou;
  return sum / static_cast<double>(seeds.size());
}

double LadderReport::mean_pixel_accuracy(const std::string& row) const {
  if (seeds.empty()) throw std::logic_error("empty ladder report");
  double sum = 0.0;
  for (const auto& s : seeds) sum += s.rows.at(row).pixel_accuracy;
  return sum / static_cast<double>(seeds.size());
}

namespace {

// Mean IoU of class k over the seeds where it is defined.
std::optional<double> mean_class_iou(const LadderReport& r, const std::string& row, std::size_t k) {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : r.seeds) {
    const auto& per_class = s.rows.at(row).per_class_iou;
    if (k < per_class.size() && per_class[k]) {
      sum += *per_class[k];
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

}  // namespace

nlohmann::json LadderReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& name : kLadderRows) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& s : seeds) {
      nlohmann::json e = s.rows.at(name).to_json(class_names);
      e["seed"] = s.seed;
      per_seed.push_back(std::move(e));
    }
    nlohmann::json per_class = nlohmann::json::array();
    const std::size_t classes = seeds.empty() ? 0 : seeds.front().rows.at(name).per_class_iou.size();
    for (std::size_t k = 0; k < classes; ++k) {
      const auto m = mean_class_iou(*this, name, k);
      per_class.push_back({{"class", k < class_names.size() ? class_names[k] : "class" + std::to_string(k)},
                           {"iou", m ? nlohmann::json(*m) : nlohmann::json(nullptr)}});
    }
    rows.push_back({{"name", name},
                    {"params", name == "teacher" ? teacher_params : student_params},
                    {"mean_miou", mean_miou(name)},
                    {"mean_pixel_accuracy", mean_pixel_accuracy(name)},
                    {"mean_per_class_iou", per_class},
                    {"per_seed", per_seed}});
  }
  nlohmann::json seed_list = nlohmann::json::array();
  for (const auto& s : seeds) seed_list.push_back(s.seed);
  return {{"format", "dakd-ladder-report"},
          {"version", 1},
          {"class_names", class_names},
          {"seeds", seed_list},
          {"rows", rows}};
}

std::string LadderReport::to_markdown() const {
  std::ostringstream os;
  os << "| model | params |";
  for (const auto& c : class_names) os << ' ' << c << " |";
  os << " mIoU | pixel acc |\n|---|---:|";
  for (std::size_t k = 0; k < class_names.size(); ++k) os << "---:|";
  os << "---:|---:|\n";
  for (const auto& name : kLadderRows) {
    const std::string label = name == "teacher" || name == "student" ? name : "distill (" + name + ")";
    os << "| " << label << " | " << (name == "teacher" ? teacher_params : student_params) << " |";
    for (std::size_t k = 0; k < class_names.size(); ++k) {
      const auto m = mean_class_iou(*this, name, k);
      os << ' ' << (m ? fixed(100.0 * *m, 2) : std::string("n/a")) << " |";
    }
    os << ' ' << fixed(100.0 * mean_miou(name), 2) << " | " << fixed(100.0 * mean_pixel_accuracy(name), 2) << " |\n";
  }
  return os.str();
}

LadderReport LadderReport::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dakd-ladder-report") throw std::invalid_argument("not a ladder report");
  LadderReport r;
  r.class_names = j.at("class_names").get<std::vector<std::string>>();
  for (const auto& seed : j.at("seeds")) r.seeds.push_back({seed.get<std::uint64_t>(), {}, {}, {}, {}, {}});
  for (const auto& row : j.at("rows")) {
    const std::string name = row.at("name").get<std::string>();
    if (name == "teacher") r.teacher_params = row.at("params").get<std::size_t>();
    if (name == "student") r.student_params = row.at("params").get<std::size_t>();
    const auto& per_seed = row.at("per_seed");
    if (per_seed.size() != r.seeds.size()) throw std::invalid_argument("row '" + name + "' has the wrong seed count");
    for (std::size_t i = 0; i < per_seed.size(); ++i) {
      const auto& e = per_seed[i];
      EvalReport er;
      for (const auto& c : e.at("per_class_iou")) {
        er.per_class_iou.push_back(c.at("iou").is_null() ? std::nullopt
                                                         : std::optional<double>(c.at("iou").get<double>()));
      }
      er.miou = e.at("miou").get<double>();
      er.pixel_accuracy = e.at("pixel_accuracy").get<double>();
      er.num_images = e.at("num_images").get<int>();
      r.seeds[i].rows[name] = std::move(er);
    }
  }
  for (const auto& name : kLadderRows) {
    for (const auto& s : r.seeds) {
      if (!s.rows.count(name)) throw std::invalid_argument("ladder report is missing row '" + name + "'");
    }
  }
  return r;
}

LadderReport LadderReport::merge(const std::vector<LadderReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("nothing to merge");
  LadderReport out;
  out.class_names = reports.front().class_names;
  out.teacher_params = reports.front().teacher_params;
  out.student_params = reports.front().student_params;
  for (const auto& r : reports) {
    if (r.class_names != out.class_names || r.teacher_params != out.teacher_params ||
        r.student_params != out.student_params) {
      throw std::invalid_argument("reports describe different setups");
    }
    for (const auto& s : r.seeds) {
      for (const auto& existing : out.seeds) {
        if (existing.seed == s.seed) throw std::invalid_argument("seed " + std::to_string(s.seed) + " appears twice");
      }
      out.seeds.push_back(s);
    }
  }
  return out;
}

}  // namespace dakd
