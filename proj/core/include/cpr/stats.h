// Copyright 2026 The CPR Sandbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CPR_STATS_H_
#define CPR_STATS_H_

#include <span>
#include <vector>

namespace cpr {

struct TestResult {
  double statistic = 0.0;
  double p_two_sided = 1.0;
};

// Average ranks (ties share the mean rank), 1-based.
std::vector<double> average_ranks(std::span<const double> values);

// Wilcoxon rank-sum with the normal approximation and tie-corrected variance.
// z > 0 when group A tends to be larger. Throws DegenerateInput when every
// value in both groups is identical.
TestResult rank_sum_test(std::span<const double> a, std::span<const double> b);

// Pearson correlation; p from the t distribution with n - 2 dof.
TestResult pearson(std::span<const double> x, std::span<const double> y);

// Benjamini-Hochberg adjusted p values (q values), in input order.
std::vector<double> fdr_adjust(std::span<const double> p_values);

}  // namespace cpr

#endif  // CPR_STATS_H_
