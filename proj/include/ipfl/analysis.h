// Copyright 2026 The ipfl Authors
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

// Detection probability of randomized verification, Monte Carlo checks of it,
// and post-processing of training logs.

#ifndef IPFL_ANALYSIS_H_
#define IPFL_ANALYSIS_H_

#include <cstdint>
#include <optional>
#include <vector>

#include "ipfl/protocol.h"

namespace ipfl::analysis {

struct DetectionReport {
  double rho = 0.0;
  int k = 0;
  double analytic_prob = 0.0;
  std::optional<double> monte_carlo_prob;
  std::optional<int> trials;
  std::optional<double> std_error;
};

// 1 - (1 - rho)^k. Throws std::invalid_argument for rho outside [0, 1] or
// k < 0.
double AnalyticDetectionProb(double rho, int k);

// Simulates k attacked rounds per trial: the verifier is uniform over n
// clients and the server drops ceil(rho * n) distinct uniform clients. A trial
// detects iff some round drops the verifier. Because the victim count is
// rounded up, `analytic_prob` is evaluated at the effective rate
// ceil(rho * n) / n, which is the `rho` reported back.
DetectionReport MonteCarloDetection(double rho, int k, int n_clients,
                                    int trials, uint64_t seed);

struct MetricLog {
  std::vector<protocol::RoundRecord> rounds;
};

// values[i][t] is client i's trigger-set ASR on the round-t global model.
struct AsrMatrix {
  std::vector<std::vector<double>> values;
  std::vector<std::vector<bool>> verifier;  // cell belongs to the verifier
  std::vector<std::vector<bool>> omitted;   // client's update was dropped

  int num_clients() const { return static_cast<int>(values.size()); }
  int num_rounds() const {
    return values.empty() ? 0 : static_cast<int>(values.front().size());
  }
};

// Throws std::invalid_argument if any round lacks per-client ASRs or the rows
// have different lengths.
AsrMatrix BuildAsrMatrix(const MetricLog& log);

struct Summary {
  int rounds = 0;
  int attacked_rounds = 0;
  int detected_rounds = 0;  // attacked and rejected
  int missed_rounds = 0;    // attacked and accepted
  int false_rejects = 0;    // not attacked, injected, rejected (after warmup)
  int honest_rounds = 0;    // not attacked, injected (after warmup)
  double honest_accept_rate = 0.0;
  double final_clean_accuracy = 0.0;
  double mean_finetuned_accuracy = 0.0;
  // Non-verifier cells at or above threshold in honest rounds after warmup.
  double nonverifier_high_fraction = 0.0;
  // Per injection: rounds until the verifier's ASR first drops below the
  // threshold, before any re-injection by the same client. Empty when the
  // trigger was still active at the next injection or at the end of training.
  std::vector<std::optional<int>> rounds_to_forget;
};

// Needs per-client ASRs for the forgetting and non-interference statistics;
// without them those fields stay empty / zero.
Summary Summarize(const protocol::TrainingResult& result,
                  const protocol::ProtocolConfig& cfg);

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

// Pearson test of independence on an r x c contingency table. Rows or columns
// whose total is zero are dropped.
ChiSquareResult ChiSquareIndependence(
    const std::vector<std::vector<long>>& table);

// Pearson goodness-of-fit test against equal cell probabilities.
ChiSquareResult ChiSquareUniform(const std::vector<long>& counts);

}  // namespace ipfl::analysis

#endif  // IPFL_ANALYSIS_H_
