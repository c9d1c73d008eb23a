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

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dakd/config.hpp"
#include "dakd/png_io.hpp"
#include "dakd/train.hpp"

namespace dakd::cli {

/// Entry point of the `dakd` tool. Returns the process exit code: 0 on
/// success, 1 on runtime failure, 2 on usage or configuration errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

LadderPlan ladder_plan(const ExperimentConfig& cfg);

/// One cell of an ablation grid.
struct AblationCell {
  std::string label;
  DistillConfig distill;
};

inline const std::vector<std::string> kAblations = {"kl",       "mse",        "pseudo", "kl_mse",
                                                    "kl_pseudo", "mse_pseudo", "all",    "target"};

/// Grid cells for a named ablation. Loss grids run paradigm A with the
/// unused terms switched off; "target" sweeps lambda_target under paradigm C.
std::vector<AblationCell> ablation_grid(const std::string& name, const DistillConfig& base);

/// Static bar chart of labelled values in [0, 100].
std::string bar_chart_svg(const std::vector<std::pair<std::string, double>>& bars, const std::string& title);

/// Applies the class palette to a label map.
Raster colorize(const LabelMap& labels);

}  // namespace dakd::cli
