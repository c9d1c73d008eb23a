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

#include "dakd/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

namespace dakd {

namespace {

using nlohmann::json;

// Keys that may appear in a document without a default value.
const std::set<std::string> kOptionalKeys = {"distill.lambda_kl_feat"};

json optim_document(const OptimSpec& s) {
  json j = s;
  j.erase("max_iters");
  return j;
}

OptimSpec optim_from_document(json j) {
  j["max_iters"] = 0;
  return j.get<OptimSpec>();
}

json defaults_document() {
  json d = to_document(ExperimentConfig::defaults());
  d["distill"].erase("lambda_kl_feat");
  return d;
}

std::string type_name(const json& v) {
  if (v.is_object()) return "a table";
  if (v.is_array()) return "an array";
  if (v.is_string()) return "a string";
  if (v.is_boolean()) return "a boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "an integer";
  if (v.is_number()) return "a number";
  return "a value";
}

void overlay(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected a table");
  for (const auto& [key, value] : user.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) {
      if (kOptionalKeys.count(p) == 0) throw ConfigError(p, "unknown field");
      base[key] = value;
      continue;
    }
    json& b = base[key];
    if (b.is_object()) {
      overlay(b, value, p);
      continue;
    }
    const bool ok = (b.is_number_float() && value.is_number()) ||
                    ((b.is_number_integer() || b.is_number_unsigned()) &&
                     (value.is_number_integer() || value.is_number_unsigned())) ||
                    (b.is_string() && value.is_string()) || (b.is_boolean() && value.is_boolean()) ||
                    (b.is_array() && value.is_array());
    if (!ok) throw ConfigError(p, "expected " + type_name(b) + ", got " + type_name(value));
    b = value;
  }
}

// Runs `f`, reporting any failure against `where`.
template <typename F>
void section(const std::string& where, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where, e.what());
  }
}

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json j = json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = node.as_array()) {
    json j = json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) return f->get();
  if (const auto* b = node.as_boolean()) return b->get();
  std::ostringstream os;
  os << node.source().begin.line;
  throw ConfigError("line " + os.str(), "dates and times are not supported");
}

// Scalars reuse JSON spelling: shortest round-trip floats, and JSON string
// escapes are valid in TOML basic strings.
std::string toml_scalar(const json& v) {
  if (v.is_number_float()) {
    std::string text = v.dump();
    if (text.find_first_of(".eE") == std::string::npos) text += ".0";
    return text;
  }
  return v.dump();
}

std::string toml_array(const json& a) {
  std::string out = "[";
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].is_object() || a[i].is_array()) throw std::invalid_argument("nested arrays are not emitted");
    out += (i ? ", " : "") + toml_scalar(a[i]);
  }
  return out + "]";
}

void emit_table(std::ostringstream& os, const json& t, const std::string& path) {
  for (const auto& [k, v] : t.items()) {
    if (v.is_object()) continue;
    os << k << " = " << (v.is_array() ? toml_array(v) : toml_scalar(v)) << '\n';
  }
  for (const auto& [k, v] : t.items()) {
    if (!v.is_object()) continue;
    const std::string sub = path.empty() ? k : path + "." + k;
    os << "\n[" << sub << "]\n";
    emit_table(os, v, sub);
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  // The toy networks tolerate a much larger step than the full-scale
  // generators; 2.5e-4 stays the OptimSpec default.
  c.train.gen_optim.base_lr = 2.5e-3;
  c.teacher_iters = 1000;
  c.student_iters = 1000;
  c.distill_iters = 500;
  return c;
}

void ExperimentConfig::validate() const {
  if (experiment.empty() || experiment.find('/') != std::string::npos) {
    throw ConfigError("experiment", "must be a non-empty name without '/'");
  }
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  for (const auto s : seeds) {
    if (s > static_cast<std::uint64_t>(INT64_MAX)) throw ConfigError("seeds", "seeds must fit in a signed 64-bit int");
  }
  section("data", [&] { scene.validate(); });
  section("data.source_shift", [&] { source_shift.validate(); });
  section("data.target_shift", [&] { target_shift.validate(); });
  section("data.counts", [&] {
    if (counts.source_train < 1 || counts.source_val < 0 || counts.target_train < 1 || counts.target_val < 1) {
      throw std::invalid_argument("train splits and target/val need at least one sample");
    }
  });
  section("teacher", [&] { teacher.validate(); });
  section("student", [&] { student.validate(); });
  section("discriminator", [&] { discriminator.validate(); });
  section("train", [&] { train.validate(); });
  if (teacher.num_classes != scene.num_classes() || student.num_classes != scene.num_classes()) {
    throw ConfigError("teacher.num_classes", "teacher and student must predict one score per scene class");
  }
  if (discriminator.in_channels != scene.num_classes()) {
    throw ConfigError("discriminator.in_channels", "must equal the number of classes");
  }
  if (teacher.input_height != scene.image_height || teacher.input_width != scene.image_width ||
      student.input_height != scene.image_height || student.input_width != scene.image_width) {
    throw ConfigError("teacher.input_height", "network input size must match the scene size");
  }
  if (teacher_iters < 0 || student_iters < 0 || distill_iters < 0) {
    throw ConfigError("train", "stage iteration counts must be non-negative");
  }
}

nlohmann::json to_document(const ExperimentConfig& c) {
  json data = c.scene;
  data["counts"] = {{"source_train", c.counts.source_train},
                    {"source_val", c.counts.source_val},
                    {"target_train", c.counts.target_train},
                    {"target_val", c.counts.target_val}};
  data["source_shift"] = c.source_shift;
  data["target_shift"] = c.target_shift;
  const TrainPlan& t = c.train;
  const DistillConfig& d = t.distill;
  return {{"experiment", c.experiment},
          {"out", c.out.string()},
          {"seeds", c.seeds},
          {"data", data},
          {"teacher", c.teacher},
          {"student", c.student},
          {"discriminator", c.discriminator},
          {"train",
           {{"batch_size", t.batch_size},
            {"teacher_iters", c.teacher_iters},
            {"student_iters", c.student_iters},
            {"distill_iters", c.distill_iters},
            {"eval_every", t.eval_every},
            {"checkpoint_every", t.checkpoint_every},
            {"aux_seg_weight", t.aux_seg_weight},
            {"adv_weight_out", t.adv_weight_out},
            {"adv_weight_feat", t.adv_weight_feat},
            {"freeze_discriminators", t.freeze_discriminators},
            {"generator", optim_document(t.gen_optim)},
            {"discriminator", optim_document(t.disc_optim)}}},
          {"distill",
           {{"paradigm", to_string(d.paradigm)},
            {"lambda_kl", d.lambda_kl_out},
            {"lambda_kl_feat", d.lambda_kl_feat},
            {"lambda_mse", d.lambda_mse},
            {"lambda_pseudo", d.lambda_pseudo},
            {"lambda_target", d.lambda_target},
            {"kl_direction", to_string(d.kl_direction)},
            {"reduction", to_string(d.reduction)}}}};
}

ExperimentConfig from_document(const nlohmann::json& doc) {
  json merged = defaults_document();
  overlay(merged, doc, "");

  ExperimentConfig c;
  section("experiment", [&] { c.experiment = merged["experiment"].get<std::string>(); });
  section("out", [&] { c.out = merged["out"].get<std::string>(); });
  section("seeds", [&] { c.seeds = merged["seeds"].get<std::vector<std::uint64_t>>(); });
  const json& data = merged["data"];
  section("data", [&] {
    json scene = data;
    scene.erase("counts");
    scene.erase("source_shift");
    scene.erase("target_shift");
    c.scene = scene.get<SceneSpec>();
  });
  section("data.counts", [&] {
    const json& n = data["counts"];
    c.counts = {n["source_train"].get<int>(), n["source_val"].get<int>(), n["target_train"].get<int>(),
                n["target_val"].get<int>()};
  });
  section("data.source_shift", [&] { c.source_shift = data["source_shift"].get<DomainShiftSpec>(); });
  section("data.target_shift", [&] { c.target_shift = data["target_shift"].get<DomainShiftSpec>(); });
  section("teacher", [&] { c.teacher = merged["teacher"].get<SegNetConfig>(); });
  section("student", [&] { c.student = merged["student"].get<SegNetConfig>(); });
  section("discriminator", [&] { c.discriminator = merged["discriminator"].get<DiscriminatorConfig>(); });

  const json& t = merged["train"];
  section("train", [&] {
    c.train.batch_size = t["batch_size"].get<int>();
    c.teacher_iters = t["teacher_iters"].get<int>();
    c.student_iters = t["student_iters"].get<int>();
    c.distill_iters = t["distill_iters"].get<int>();
    c.train.eval_every = t["eval_every"].get<int>();
    c.train.checkpoint_every = t["checkpoint_every"].get<int>();
    c.train.aux_seg_weight = t["aux_seg_weight"].get<double>();
    c.train.adv_weight_out = t["adv_weight_out"].get<double>();
    c.train.adv_weight_feat = t["adv_weight_feat"].get<double>();
    c.train.freeze_discriminators = t["freeze_discriminators"].get<bool>();
  });
  section("train.generator", [&] { c.train.gen_optim = optim_from_document(t["generator"]); });
  section("train.discriminator", [&] { c.train.disc_optim = optim_from_document(t["discriminator"]); });

  const json& d = merged["distill"];
  section("distill", [&] {
    DistillConfig& dc = c.train.distill;
    dc.paradigm = paradigm_from_string(d["paradigm"].get<std::string>());
    dc.lambda_kl_out = d["lambda_kl"].get<double>();
    dc.lambda_kl_feat = d.contains("lambda_kl_feat") ? d["lambda_kl_feat"].get<double>() : dc.lambda_kl_out / 10.0;
    dc.lambda_mse = d["lambda_mse"].get<double>();
    dc.lambda_pseudo = d["lambda_pseudo"].get<double>();
    dc.lambda_target = d["lambda_target"].get<double>();
    dc.kl_direction = kl_direction_from_string(d["kl_direction"].get<std::string>());
    dc.reduction = reduction_from_string(d["reduction"].get<std::string>());
    dc.validate();
  });
  c.validate();
  return c;
}

nlohmann::json read_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (path.extension() == ".json") {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      // Byte offset to line/column.
      std::size_t line = 1;
      std::size_t col = 1;
      for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
          ++line;
          col = 1;
        } else {
          ++col;
        }
      }
      throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col), "invalid JSON");
    }
  }
  try {
    const toml::table table = toml::parse(text, path.string());
    return toml_to_json(table);
  } catch (const toml::parse_error& e) {
    const auto& pos = e.source().begin;
    throw ConfigError("line " + std::to_string(pos.line) + ", column " + std::to_string(pos.column),
                      std::string(e.description()));
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return from_document(read_config_document(path));
}

std::string to_toml(const nlohmann::json& doc) {
  std::ostringstream os;
  emit_table(os, doc, "");
  return os.str();
}

std::string config_hash(const ExperimentConfig& c) {
  json doc = to_document(c);
  doc.erase("out");
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dakd
