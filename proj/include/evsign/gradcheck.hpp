// Copyright 2026 The EvSign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Finite-difference suites over every differentiable op and the composite
// blocks built from them.
//
// Primitive cases run entirely in 64-bit. Composite cases run twice: once in
// 64-bit, and once comparing the 32-bit analytic gradient against central
// differences of the same function evaluated in 64-bit at the same
// (32-bit representable) point.

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evsign/tensor.hpp"

namespace evsign::gradcheck {

struct CaseResult {
  std::string suite;  // "primitive" or "composite"
  std::string name;
  int bits = 64;      // precision of the analytic gradient under test
  double max_rel_err = 0;
  double max_abs_err = 0;
  double tolerance = 0;
  std::size_t coords = 0;
  double worst_analytic = 0, worst_numeric = 0;
  double max_abs_grad = 0;
  bool passed = false;
};

struct Tolerances {
  double primitive = 1e-4;
  double composite64 = 1e-4;
  double composite32 = 1e-3;
};

struct SuiteOptions {
  // Substring filter on case names; empty runs everything.
  std::string filter;
  Tolerances tol;
};

std::vector<CaseResult> run_all(const SuiteOptions& options = {});
bool all_passed(const std::vector<CaseResult>& results);
nlohmann::json to_json(const std::vector<CaseResult>& results);

// Probe settings used by the suites.
FdOptions primitive_fd_options();
FdOptions composite64_fd_options();
FdOptions composite32_fd_options();

// 32-bit analytic gradient of f32 versus central differences of f64. Both
// closures must compute the same function of their parameter lists, which
// must correspond one to one; the 64-bit parameters are overwritten with the
// 32-bit values before probing.
FdReport mixed_precision_check(const std::function<Tensor<float>()>& f32, const std::vector<Tensor<float>>& p32,
                               const std::function<Tensor<double>()>& f64, const std::vector<Tensor<double>>& p64,
                               const FdOptions& options);

}  // namespace evsign::gradcheck
