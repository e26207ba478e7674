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

#include "ipfl/analysis.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>

#include "ipfl/random.h"

namespace ipfl::analysis {
namespace {

ChiSquareResult FromStatistic(double statistic, int dof) {
  ChiSquareResult r{statistic, dof, 1.0};
  if (dof > 0) {
    const boost::math::chi_squared dist(dof);
    r.p_value = boost::math::cdf(boost::math::complement(dist, statistic));
  }
  return r;
}

}  // namespace

double AnalyticDetectionProb(double rho, int k) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho out of range");
  if (k < 0) throw std::invalid_argument("k must be >= 0");
  if (k == 0) return 0.0;
  if (rho == 1.0) return 1.0;
  // expm1/log1p keep precision when rho is tiny.
  return -std::expm1(k * std::log1p(-rho));
}

DetectionReport MonteCarloDetection(double rho, int k, int n_clients,
                                    int trials, uint64_t seed) {
  if (n_clients < 1) throw std::invalid_argument("n_clients must be >= 1");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  const int victims = protocol::VictimCount(rho, n_clients);
  const double effective = static_cast<double>(victims) / n_clients;

  long hits = 0;
  std::vector<int> ids(n_clients);
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = MakeRng(DeriveSeed(seed, {kStreamMonteCarlo, uint64_t(trial)}));
    std::uniform_int_distribution<int> pick(0, n_clients - 1);
    bool detected = false;
    for (int round = 0; round < k && !detected; ++round) {
      const int verifier = pick(rng);
      std::iota(ids.begin(), ids.end(), 0);
      // Partial Fisher-Yates: the first `victims` slots are the dropped set.
      for (int i = 0; i < victims; ++i) {
        std::uniform_int_distribution<int> j(i, n_clients - 1);
        std::swap(ids[i], ids[j(rng)]);
        if (ids[i] == verifier) detected = true;
      }
    }
    hits += detected;
  }

  DetectionReport report;
  report.rho = effective;
  report.k = k;
  report.analytic_prob = AnalyticDetectionProb(effective, k);
  const double p = static_cast<double>(hits) / trials;
  report.monte_carlo_prob = p;
  report.trials = trials;
  report.std_error = std::sqrt(p * (1.0 - p) / trials);
  return report;
}

AsrMatrix BuildAsrMatrix(const MetricLog& log) {
  AsrMatrix m;
  if (log.rounds.empty()) return m;
  const size_t n = log.rounds.front().per_client_asr.size();
  if (n == 0) throw std::invalid_argument("log has no per-client ASR rows");
  const size_t t_max = log.rounds.size();
  m.values.assign(n, std::vector<double>(t_max));
  m.verifier.assign(n, std::vector<bool>(t_max, false));
  m.omitted.assign(n, std::vector<bool>(t_max, false));
  for (size_t t = 0; t < t_max; ++t) {
    const protocol::RoundRecord& r = log.rounds[t];
    if (r.per_client_asr.size() != n) throw std::invalid_argument("ragged ASR log");
    for (size_t i = 0; i < n; ++i) m.values[i][t] = r.per_client_asr[i];
    if (r.verifier_id < 0 || static_cast<size_t>(r.verifier_id) >= n) {
      throw std::invalid_argument("verifier id out of range");
    }
    m.verifier[r.verifier_id][t] = true;
    for (int id : r.omitted_ids) {
      if (id < 0 || static_cast<size_t>(id) >= n) {
        throw std::invalid_argument("omitted id out of range");
      }
      m.omitted[id][t] = true;
    }
  }
  return m;
}

Summary Summarize(const protocol::TrainingResult& result,
                  const protocol::ProtocolConfig& cfg) {
  Summary s;
  const auto& rounds = result.rounds;
  s.rounds = static_cast<int>(rounds.size());
  long high = 0, cells = 0;
  int accepts = 0;
  for (const protocol::RoundRecord& r : rounds) {
    const bool reject = r.verdict == protocol::Verdict::kReject;
    if (r.attacked) {
      ++s.attacked_rounds;
      if (reject) {
        ++s.detected_rounds;
      } else {
        ++s.missed_rounds;
      }
      continue;
    }
    if (!r.injected || r.round < cfg.warmup_rounds) continue;
    ++s.honest_rounds;
    if (reject) {
      ++s.false_rejects;
    } else {
      ++accepts;
    }
    for (size_t i = 0; i < r.per_client_asr.size(); ++i) {
      if (static_cast<int>(i) == r.verifier_id) continue;
      ++cells;
      high += r.per_client_asr[i] >= cfg.threshold;
    }
  }
  if (s.honest_rounds > 0) {
    s.honest_accept_rate = static_cast<double>(accepts) / s.honest_rounds;
  }
  if (cells > 0) s.nonverifier_high_fraction = static_cast<double>(high) / cells;
  if (!rounds.empty()) s.final_clean_accuracy = rounds.back().clean_accuracy;
  if (!result.clients.empty()) {
    double total = 0.0;
    for (const auto& c : result.clients) total += c.test_accuracy_after;
    s.mean_finetuned_accuracy = total / result.clients.size();
  }

  for (size_t t = 0; t < rounds.size(); ++t) {
    if (!rounds[t].injected || rounds[t].per_client_asr.empty()) continue;
    const int v = rounds[t].verifier_id;
    size_t next = t + 1;
    while (next < rounds.size() &&
           !(rounds[next].injected && rounds[next].verifier_id == v)) {
      ++next;
    }
    std::optional<int> forgot;
    for (size_t u = t + 1; u < next; ++u) {
      if (rounds[u].per_client_asr.at(v) < cfg.threshold) {
        forgot = static_cast<int>(u - t);
        break;
      }
    }
    s.rounds_to_forget.push_back(forgot);
  }
  return s;
}

ChiSquareResult ChiSquareIndependence(
    const std::vector<std::vector<long>>& table) {
  if (table.empty()) throw std::invalid_argument("empty contingency table");
  const size_t cols = table.front().size();
  std::vector<double> row_sum(table.size(), 0.0), col_sum(cols, 0.0);
  double total = 0.0;
  for (size_t i = 0; i < table.size(); ++i) {
    if (table[i].size() != cols) throw std::invalid_argument("ragged table");
    for (size_t j = 0; j < cols; ++j) {
      if (table[i][j] < 0) throw std::invalid_argument("negative count");
      row_sum[i] += table[i][j];
      col_sum[j] += table[i][j];
      total += table[i][j];
    }
  }
  if (total == 0.0) throw std::invalid_argument("table has no observations");
  double stat = 0.0;
  for (size_t i = 0; i < table.size(); ++i) {
    if (row_sum[i] == 0.0) continue;
    for (size_t j = 0; j < cols; ++j) {
      if (col_sum[j] == 0.0) continue;
      const double expected = row_sum[i] * col_sum[j] / total;
      const double d = table[i][j] - expected;
      stat += d * d / expected;
    }
  }
  const auto nonzero = [](const std::vector<double>& v) {
    return static_cast<int>(std::count_if(v.begin(), v.end(),
                                          [](double x) { return x > 0.0; }));
  };
  const int dof = std::max(0, (nonzero(row_sum) - 1) * (nonzero(col_sum) - 1));
  return FromStatistic(stat, dof);
}

ChiSquareResult ChiSquareUniform(const std::vector<long>& counts) {
  if (counts.size() < 2) throw std::invalid_argument("need at least two cells");
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (total == 0.0) throw std::invalid_argument("no observations");
  const double expected = total / counts.size();
  double stat = 0.0;
  for (long c : counts) stat += (c - expected) * (c - expected) / expected;
  return FromStatistic(stat, static_cast<int>(counts.size()) - 1);
}

}  // namespace ipfl::analysis
