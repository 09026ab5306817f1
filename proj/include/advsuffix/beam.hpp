// Copyright 2026 The advsuffix Authors.
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

#pragma once

#include <string>

#include "advsuffix/token_space.hpp"

namespace advsuffix {

/// Terms of the jailbreak objective for one candidate prompt. Lower
/// `composed` is better.
struct ObjectiveBreakdown {
  double align = 0.0;
  double per = 0.0;
  double lambda = 0.0;
  double penalty = 0.0;
  double composed = 0.0;

  static ObjectiveBreakdown compose(double align, double per, double lambda,
                                    double penalty = 0.0) {
    ObjectiveBreakdown b{align, per, lambda, penalty, 0.0};
    b.composed = b.recompute();
    return b;
  }

  double recompute() const { return -align + lambda * per + penalty; }
};

struct Beam {
  TokenSeq suffix;
  /// Rendered adversarial prompt [x, S].
  std::string text;
  ObjectiveBreakdown breakdown;
  bool penalized = false;

  double score() const { return breakdown.composed; }
};

}  // namespace advsuffix
