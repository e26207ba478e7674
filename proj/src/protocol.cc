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

#include "ipfl/protocol.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ipfl/random.h"

namespace ipfl::protocol {

namespace {

// Runs `epochs` passes of shuffled mini-batch momentum SGD from `start` and
// returns the sum of the velocity vectors applied. The trained model is
// start - lr * (returned sum).
std::vector<double> SumOfSteps(const nn::ParamVector& start,
                               const nn::Batch& data, double lr, int epochs,
                               int batch_size, double momentum, uint64_t seed) {
  std::vector<double> total(start.size(), 0.0);
  if (epochs <= 0 || data.empty()) return total;
  Rng rng = MakeRng(seed);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});

  nn::ParamVector params = start;
  nn::MomentumState state = nn::MomentumState::Zeros(start.size(), momentum);
  nn::Batch mini;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(batch_size)) {
      const size_t end =
          std::min(order.size(), begin + static_cast<size_t>(batch_size));
      mini.inputs.clear();
      mini.labels.clear();
      for (size_t k = begin; k < end; ++k) {
        mini.inputs.push_back(data.inputs[order[k]]);
        mini.labels.push_back(data.labels[order[k]]);
      }
      const nn::LossAndGrad lg = nn::ComputeLossAndGrad(params, mini);
      auto [next, next_state] = nn::SgdStep(params, lg.grad, lr, state);
      params = std::move(next);
      state = std::move(next_state);
      for (size_t i = 0; i < total.size(); ++i) total[i] += state.velocity[i];
    }
  }
  return total;
}

std::vector<int> SampleWithoutReplacement(std::vector<int> pool, int count,
                                          Rng& rng) {
  count = std::clamp(count, 0, static_cast<int>(pool.size()));
  // Partial Fisher-Yates.
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

void AdversaryPolicy::Validate() const {
  if (kind == AdversaryKind::kHonest) return;
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("rho must lie in [0, 1]");
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("epsilon must lie in [0, 1]");
  }
  if (attack_rounds) {
    for (int r : *attack_rounds) {
      if (r < 0) throw std::invalid_argument("attack rounds must be >= 0");
    }
  }
  if (!std::isfinite(tamper_magnitude)) {
    throw std::invalid_argument("tamper magnitude must be finite");
  }
}

void ProtocolConfig::Validate() const {
  if (n_clients < 1) throw std::invalid_argument("n_clients must be >= 1");
  if (rounds < n_clients) {
    throw std::invalid_argument("rounds must be >= n_clients for full audit coverage");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(trigger_lr > 0.0)) throw std::invalid_argument("trigger_lr must be > 0");
  if (!(boost >= 1.0)) throw std::invalid_argument("boost must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("threshold must lie in (0, 1)");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");
  if (trigger_epochs < 1) {
    throw std::invalid_argument("trigger_epochs must be >= 1");
  }
  if (finetune_epochs < 0) {
    throw std::invalid_argument("finetune_epochs must be >= 0");
  }
  if (warmup_rounds < 0) throw std::invalid_argument("warmup_rounds must be >= 0");
  model.Validate();
  if (static_cast<size_t>(model.input_dim()) != data.shape.size()) {
    throw std::invalid_argument("model input dim does not match image shape");
  }
  if (model.num_classes() != data.num_classes) {
    throw std::invalid_argument("model output dim does not match num_classes");
  }
  if (data.train_examples < n_clients) {
    throw std::invalid_argument("fewer training examples than clients");
  }
  if (data.test_examples < 1) {
    throw std::invalid_argument("test_examples must be >= 1");
  }
  if (!(data.dirichlet_beta > 0.0)) {
    throw std::invalid_argument("dirichlet_beta must be > 0");
  }
  if (!(data.trigger_fraction > 0.0 && data.trigger_fraction <= 1.0)) {
    throw std::invalid_argument("trigger_fraction must lie in (0, 1]");
  }
  adversary.Validate();
}

std::string VerdictName(Verdict verdict) {
  return verdict == Verdict::kAccept ? "accept" : "reject";
}

std::vector<SchedulingToken> AssignTokens(int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("need at least one client");
  std::vector<SchedulingToken> tokens(n);
  for (int i = 0; i < n; ++i) tokens[i].value = i;
  Rng rng = MakeRng(DeriveSeed(seed, {kStreamTokens}));
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(tokens[i], tokens[pick(rng)]);
  }
  return tokens;
}

bool IsVerifier(SchedulingToken token, int round, int n) {
  if (round < 0) throw std::invalid_argument("round must be >= 0");
  return token.value == round % n;
}

Federation SetupFederation(const ProtocolConfig& cfg) {
  cfg.Validate();
  const DataConfig& dc = cfg.data;
  data::Dataset all = data::GenerateSynthetic(
      dc.num_classes, dc.shape, dc.train_examples + dc.test_examples,
      DeriveSeed(cfg.seed, {kStreamData}), dc.noise);
  data::Dataset train{all.shape, all.num_classes, {}};
  data::Dataset test{all.shape, all.num_classes, {}};
  train.examples.assign(all.examples.begin(),
                        all.examples.begin() + dc.train_examples);
  test.examples.assign(all.examples.begin() + dc.train_examples,
                       all.examples.end());

  std::vector<data::Dataset> parts = data::DirichletPartition(
      train, cfg.n_clients, dc.dirichlet_beta,
      DeriveSeed(cfg.seed, {kStreamPartition}));
  const std::vector<SchedulingToken> tokens =
      AssignTokens(cfg.n_clients, DeriveSeed(cfg.seed, {kStreamTokens}));

  Federation fed{{}, std::move(test),
                 nn::InitParams(cfg.model, DeriveSeed(cfg.seed, {kStreamInit}))};
  fed.clients.reserve(cfg.n_clients);
  for (int i = 0; i < cfg.n_clients; ++i) {
    const uint64_t id = static_cast<uint64_t>(i);
    data::TriggerCredential cred = data::SampleTriggerCredential(
        dc.shape, dc.num_classes, DeriveSeed(cfg.seed, {kStreamCredential, id}));
    data::TriggerSet trigger_set =
        data::BuildTriggerSet(parts[i], cred, dc.trigger_fraction,
                              DeriveSeed(cfg.seed, {kStreamTriggerSet, id}));
    fed.clients.push_back(ClientState{
        i, tokens[i], std::move(parts[i]), std::move(cred),
        std::move(trigger_set),
        nn::MomentumState::Zeros(cfg.model.num_params(), cfg.momentum)});
  }
  return fed;
}

nn::GradVector LocalUpdate(const ClientState& client,
                           const nn::ParamVector& global_params,
                           const ProtocolConfig& cfg, int round) {
  if (client.local_data.empty()) throw std::invalid_argument("empty local data");
  if (cfg.lr == 0.0) return nn::GradVector::Zeros(global_params.size());
  const uint64_t seed = DeriveSeed(
      cfg.seed, {kStreamLocal, uint64_t(client.id), uint64_t(round)});
  return nn::GradVector(SumOfSteps(global_params, client.local_data.AsBatch(),
                                   cfg.lr, cfg.local_epochs, cfg.batch_size,
                                   client.momentum.coefficient, seed));
}

InjectionResult InjectProof(const ClientState& client,
                            const nn::ParamVector& global_params,
                            const nn::GradVector& clean_grad,
                            const ProtocolConfig& cfg, int round) {
  if (client.trigger_set.empty()) throw std::invalid_argument("empty trigger set");
  if (clean_grad.size() != global_params.size()) {
    throw std::invalid_argument("clean gradient length mismatch");
  }
  std::vector<double> proxy(global_params.values().begin(),
                            global_params.values().end());
  for (size_t i = 0; i < proxy.size(); ++i) proxy[i] -= cfg.lr * clean_grad[i];
  const nn::ParamVector proxy_params(global_params.spec(), std::move(proxy));

  const uint64_t seed = DeriveSeed(
      cfg.seed, {kStreamTrigger, uint64_t(client.id), uint64_t(round)});
  const nn::Batch tb = cfg.contrast_proof
                            ? client.trigger_set.AsContrastBatch()
                            : client.trigger_set.AsBatch();
  std::vector<double> backdoor = SumOfSteps(
      proxy_params, tb, cfg.trigger_lr, cfg.trigger_epochs, cfg.batch_size, client.momentum.coefficient, seed);
  // (proxy - theta_bd) / lr with theta_bd = proxy - trigger_lr * sum.
  const double rescale = cfg.trigger_lr / cfg.lr;
  if (rescale != 1.0) {
    for (double& v : backdoor) v *= rescale;
  }
  InjectionResult result{clean_grad, nn::GradVector(std::move(backdoor))};
  if (cfg.boost != 0.0) result.boosted += cfg.boost * result.backdoor;
  return result;
}

int VictimCount(double rho, int n) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho out of range");
  // The slack keeps e.g. 0.3 * 10 = 3.0000000000000004 at 3.
  const int count = static_cast<int>(std::ceil(rho * n - 1e-9));
  return std::clamp(count, 0, n);
}

bool IsAttackedRound(const AdversaryPolicy& policy, int round, uint64_t seed) {
  if (policy.kind == AdversaryKind::kHonest) return false;
  if (policy.attack_rounds) return policy.attack_rounds->contains(round);
  if (policy.epsilon >= 1.0) return true;
  if (policy.epsilon <= 0.0) return false;
  Rng rng = MakeRng(DeriveSeed(seed, {kStreamServer, uint64_t(round), 0}));
  return std::bernoulli_distribution(policy.epsilon)(rng);
}

AggregateResult Aggregate(const std::map<int, nn::GradVector>& updates,
                          const AdversaryPolicy& policy, int round,
                          uint64_t seed, std::optional<int> leaked_verifier) {
  if (updates.empty()) throw std::invalid_argument("no updates to aggregate");
  const size_t dim = updates.begin()->second.size();
  for (const auto& [id, g] : updates) {
    if (g.size() != dim) throw std::invalid_argument("update length mismatch");
  }

  AggregateResult result{nn::GradVector::Zeros(dim), {}, false};
  result.attacked = IsAttackedRound(policy, round, seed);
  if (result.attacked) {
    std::vector<int> ids;
    for (const auto& entry : updates) ids.push_back(entry.first);
    const int n = static_cast<int>(ids.size());
    int count = VictimCount(policy.rho, n);
    Rng rng = MakeRng(DeriveSeed(seed, {kStreamServer, uint64_t(round), 1}));

    std::vector<int> victims;
    if (policy.victim_selection == VictimSelection::kUniform) {
      victims = SampleWithoutReplacement(ids, count, rng);
    } else {
      if (!leaked_verifier || !updates.contains(*leaked_verifier)) {
        throw std::invalid_argument(
            "white-box victim selection needs the verifier id");
      }
      std::vector<int> others;
      for (int id : ids) {
        if (id != *leaked_verifier) others.push_back(id);
      }
      if (policy.victim_selection == VictimSelection::kForceVerifier) {
        victims = SampleWithoutReplacement(others, std::max(count, 1) - 1, rng);
        victims.push_back(*leaked_verifier);
      } else {
        victims = SampleWithoutReplacement(others, std::min(count, n - 1), rng);
      }
    }
    result.victim_ids.insert(victims.begin(), victims.end());
  }

  std::normal_distribution<double> noise(0.0, std::abs(policy.tamper_magnitude));
  Rng tamper_rng = MakeRng(DeriveSeed(seed, {kStreamServer, uint64_t(round), 2}));
  std::span<double> sum = result.update.mutable_values();
  size_t included = 0;
  for (const auto& [id, g] : updates) {
    const bool victim = result.victim_ids.contains(id);
    if (victim && policy.kind == AdversaryKind::kOmit) continue;
    ++included;
    if (!victim) {
      for (size_t i = 0; i < dim; ++i) sum[i] += g[i];
      continue;
    }
    switch (policy.tamper_mode) {
      case TamperMode::kZero:
        break;
      case TamperMode::kNoise:
        for (size_t i = 0; i < dim; ++i) sum[i] += noise(tamper_rng);
        break;
      case TamperMode::kScale:
        for (size_t i = 0; i < dim; ++i) sum[i] += policy.tamper_magnitude * g[i];
        break;
    }
  }
  // Every update omitted: zero step.
  if (included > 0) result.update *= 1.0 / static_cast<double>(included);
  return result;
}

nn::ParamVector ApplyGlobalUpdate(const nn::ParamVector& params,
                                  const nn::GradVector& update, double lr) {
  if (update.size() != params.size()) {
    throw std::invalid_argument("update length mismatch");
  }
  std::vector<double> theta(params.values().begin(), params.values().end());
  for (size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * update[i];
  return nn::ParamVector(params.spec(), std::move(theta));
}

double AttackSuccessRate(const nn::ParamVector& params,
                         const data::TriggerSet& trigger_set) {
  if (trigger_set.empty()) throw std::invalid_argument("empty trigger set");
  size_t hits = 0;
  for (const data::Image& img : trigger_set.examples) {
    if (nn::Predict(params, img.pixels) == img.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(trigger_set.size());
}

VerifyResult VerifyProof(const ClientState& client,
                         const nn::ParamVector& global_params, double gamma) {
  const double asr = AttackSuccessRate(global_params, client.trigger_set);
  return VerifyResult{asr, asr >= gamma ? Verdict::kAccept : Verdict::kReject};
}

nn::ParamVector FinalFinetune(const ClientState& client,
                              const nn::ParamVector& global_params,
                              const ProtocolConfig& cfg) {
  if (cfg.finetune_epochs < 0) {
    throw std::invalid_argument("finetune_epochs must be >= 0");
  }
  if (cfg.finetune_epochs == 0 || client.local_data.empty()) return global_params;
  const uint64_t seed =
      DeriveSeed(cfg.seed, {kStreamFinetune, uint64_t(client.id)});
  const std::vector<double> steps =
      SumOfSteps(global_params, client.local_data.AsBatch(), cfg.lr,
                 cfg.finetune_epochs, cfg.batch_size,
                 client.momentum.coefficient, seed);
  std::vector<double> theta(global_params.values().begin(),
                            global_params.values().end());
  for (size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.lr * steps[i];
  return nn::ParamVector(global_params.spec(), std::move(theta));
}

TrainingResult RunTraining(const ProtocolConfig& cfg) {
  return RunTraining(cfg, SetupFederation(cfg));
}

TrainingResult RunTraining(const ProtocolConfig& cfg,
                           const Federation& federation) {
  cfg.Validate();
  const int n = cfg.n_clients;
  if (static_cast<int>(federation.clients.size()) != n) {
    throw std::invalid_argument("federation size does not match n_clients");
  }
  const uint64_t server_seed = DeriveSeed(cfg.seed, {kStreamServer});
  const nn::Batch test_batch = federation.test_set.AsBatch();

  TrainingResult result{{}, federation.initial_params, {}};
  nn::ParamVector& params = result.final_params;
  result.rounds.reserve(cfg.rounds);

  for (int t = 0; t < cfg.rounds; ++t) {
    int verifier = -1;
    for (const ClientState& c : federation.clients) {
      if (IsVerifier(c.token, t, n)) verifier = c.id;
    }
    const bool inject = cfg.verification &&
                        (!cfg.inject_rounds || cfg.inject_rounds->contains(t));

    std::map<int, nn::GradVector> updates;
    for (const ClientState& c : federation.clients) {
      nn::GradVector g = LocalUpdate(c, params, cfg, t);
      if (inject && c.id == verifier) {
        g = InjectProof(c, params, g, cfg, t).boosted;
      }
      updates.emplace(c.id, std::move(g));
    }

    const bool white_box =
        cfg.adversary.victim_selection != VictimSelection::kUniform;
    AggregateResult agg =
        Aggregate(updates, cfg.adversary, t, server_seed,
                  white_box ? std::optional<int>(verifier) : std::nullopt);
    params = ApplyGlobalUpdate(params, agg.update, cfg.lr);

    RoundRecord record;
    record.round = t;
    record.verifier_id = verifier;
    record.injected = inject;
    record.attacked = agg.attacked;
    record.omitted_ids = std::move(agg.victim_ids);
    const VerifyResult vr =
        VerifyProof(federation.clients[verifier], params, cfg.threshold);
    record.asr = vr.asr;
    record.verdict = vr.verdict;
    record.clean_accuracy = nn::Evaluate(params, test_batch).accuracy;
    if (cfg.log_client_asr) {
      record.per_client_asr.reserve(n);
      for (const ClientState& c : federation.clients) {
        record.per_client_asr.push_back(
            c.id == verifier ? vr.asr : AttackSuccessRate(params, c.trigger_set));
      }
    }
    result.rounds.push_back(std::move(record));
  }

  result.clients.reserve(n);
  for (const ClientState& c : federation.clients) {
    ClientOutcome out{FinalFinetune(c, params, cfg)};
    const nn::Batch local_batch = c.local_data.AsBatch();
    out.test_accuracy_before = nn::Evaluate(params, test_batch).accuracy;
    out.test_accuracy_after = nn::Evaluate(out.finetuned, test_batch).accuracy;
    out.local_accuracy_before = nn::Evaluate(params, local_batch).accuracy;
    out.local_accuracy_after = nn::Evaluate(out.finetuned, local_batch).accuracy;
    out.trigger_asr_before = AttackSuccessRate(params, c.trigger_set);
    out.trigger_asr_after = AttackSuccessRate(out.finetuned, c.trigger_set);
    result.clients.push_back(std::move(out));
  }
  return result;
}

}  // namespace ipfl::protocol
