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

// Verifiable federated aggregation with ephemeral backdoor proofs.
//
// Every client holds a secret scheduling token; in round t the client whose
// token is congruent to t mod n acts as verifier. The verifier adds a boosted
// backdoor update, trained on its private trigger set, to its clean update.
// After aggregation it measures the attack success rate (ASR) of its trigger
// set on the new global model and accepts the round iff ASR >= threshold.
// The server sees only (client id -> update) and may be honest or may omit or
// tamper with a fraction of the updates.

#ifndef IPFL_PROTOCOL_H_
#define IPFL_PROTOCOL_H_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ipfl/data.h"
#include "ipfl/nn.h"

namespace ipfl::protocol {

struct SchedulingToken {
  int value = 0;
  friend auto operator<=>(const SchedulingToken&,
                          const SchedulingToken&) = default;
};

enum class AdversaryKind { kHonest, kOmit, kTamper };
enum class TamperMode { kZero, kNoise, kScale };

// How the server picks its victims. Only kUniform is realizable by a real
// server, which cannot see tokens. The other two are white-box test hooks:
// the orchestrator leaks the verifier id into the aggregation call.
enum class VictimSelection { kUniform, kForceVerifier, kExcludeVerifier };

struct AdversaryPolicy {
  AdversaryKind kind = AdversaryKind::kHonest;
  double rho = 0.0;      // fraction of clients targeted per attacked round
  double epsilon = 1.0;  // per-round attack probability
  // When set, exactly these rounds are attacked and epsilon is ignored.
  std::optional<std::set<int>> attack_rounds;
  TamperMode tamper_mode = TamperMode::kZero;
  double tamper_magnitude = 1.0;
  VictimSelection victim_selection = VictimSelection::kUniform;

  void Validate() const;
};

struct DataConfig {
  int num_classes = 10;
  data::Shape shape{3, 8, 8};
  int train_examples = 5000;
  int test_examples = 500;
  double noise = 0.2;
  double dirichlet_beta = 0.5;
  double trigger_fraction = 0.1;
};

struct ProtocolConfig {
  int n_clients = 10;
  int rounds = 50;
  double lr = 0.01;
  double trigger_lr = 0.005;
  double boost = 10.0;
  double threshold = 0.7;
  int batch_size = 32;
  double momentum = 0.9;
  int local_epochs = 1;
  int trigger_epochs = 20;
  int finetune_epochs = 5;
  // Train the proof on the trigger set together with the clean source images
  // it was stamped from, so that the update keys on the patch rather than on
  // the image content. Off: trigger examples only.
  bool contrast_proof = true;
  uint64_t seed = 0;
  // Off: plain FedAvg baseline; nobody injects, verdicts are still computed.
  bool verification = true;
  // When set, the scheduled verifier injects only in these rounds.
  std::optional<std::set<int>> inject_rounds;
  // Record every client's trigger-set ASR after every round.
  bool log_client_asr = true;
  // Rounds skipped by the summary statistics.
  int warmup_rounds = 5;
  nn::ModelSpec model{{192, 64, 10}, nn::Activation::kRelu};
  DataConfig data;
  AdversaryPolicy adversary;

  // Throws std::invalid_argument on any violated invariant.
  void Validate() const;
};

struct ClientState {
  int id = 0;
  SchedulingToken token;
  data::Dataset local_data;
  data::TriggerCredential credential;
  data::TriggerSet trigger_set;
  // Optimizer template; every local pass starts from this (zero) velocity.
  nn::MomentumState momentum;
};

enum class Verdict { kAccept, kReject };
std::string VerdictName(Verdict verdict);

struct RoundRecord {
  int round = 0;
  int verifier_id = 0;
  bool injected = false;
  bool attacked = false;
  std::set<int> omitted_ids;
  double asr = 0.0;
  Verdict verdict = Verdict::kAccept;
  double clean_accuracy = 0.0;
  std::vector<double> per_client_asr;  // empty unless log_client_asr
};

struct ClientOutcome {
  nn::ParamVector finetuned;
  double test_accuracy_before = 0.0;
  double test_accuracy_after = 0.0;
  double local_accuracy_before = 0.0;
  double local_accuracy_after = 0.0;
  double trigger_asr_before = 0.0;
  double trigger_asr_after = 0.0;
};

struct TrainingResult {
  std::vector<RoundRecord> rounds;
  nn::ParamVector final_params;
  std::vector<ClientOutcome> clients;
};

struct Federation {
  std::vector<ClientState> clients;
  data::Dataset test_set;
  nn::ParamVector initial_params;
};

struct AggregateResult {
  nn::GradVector update;
  // Clients whose updates were dropped (omit) or replaced (tamper).
  std::set<int> victim_ids;
  bool attacked = false;
};

struct InjectionResult {
  nn::GradVector boosted;   // clean + boost * backdoor
  nn::GradVector backdoor;  // backdoor gradient, in gradient units
};

struct VerifyResult {
  double asr = 0.0;
  Verdict verdict = Verdict::kReject;
};

// Trusted-dealer Fisher-Yates permutation of {0, ..., n-1}.
std::vector<SchedulingToken> AssignTokens(int n, uint64_t seed);

bool IsVerifier(SchedulingToken token, int round, int n);

// Builds the synthetic train/test data, partitions it, and gives every client
// a token, a credential and a trigger set.
Federation SetupFederation(const ProtocolConfig& cfg);

// Effective gradient of `local_epochs` passes of mini-batch momentum SGD
// starting at the global model: (global - local) / lr. With one epoch over a
// single full batch this is exactly the batch gradient. lr == 0 yields zero.
nn::GradVector LocalUpdate(const ClientState& client,
                           const nn::ParamVector& global_params,
                           const ProtocolConfig& cfg, int round);

// Proxy model theta' = global - lr * clean; `trigger_epochs` passes over the
// trigger set (plus its clean sources if contrast_proof) at trigger_lr give
// theta_bd; backdoor = (theta' - theta_bd) / lr.
InjectionResult InjectProof(const ClientState& client,
                            const nn::ParamVector& global_params,
                            const nn::GradVector& clean_grad,
                            const ProtocolConfig& cfg, int round);

bool IsAttackedRound(const AdversaryPolicy& policy, int round, uint64_t seed);

// Number of victims per attacked round: ceil(rho * n).
int VictimCount(double rho, int n);

// Server-side aggregation. `updates` is everything the server sees. The mean
// is taken over surviving updates; if every update is omitted the result is a
// zero vector. `leaked_verifier` must be supplied for the white-box victim
// selections and is ignored otherwise.
AggregateResult Aggregate(const std::map<int, nn::GradVector>& updates,
                          const AdversaryPolicy& policy, int round,
                          uint64_t seed,
                          std::optional<int> leaked_verifier = std::nullopt);

nn::ParamVector ApplyGlobalUpdate(const nn::ParamVector& params,
                                  const nn::GradVector& update, double lr);

// Fraction of trigger examples classified as their (target) label.
double AttackSuccessRate(const nn::ParamVector& params,
                         const data::TriggerSet& trigger_set);

VerifyResult VerifyProof(const ClientState& client,
                         const nn::ParamVector& global_params, double gamma);

// Local-only clean fine-tuning; never fed back to the server.
nn::ParamVector FinalFinetune(const ClientState& client,
                              const nn::ParamVector& global_params,
                              const ProtocolConfig& cfg);

TrainingResult RunTraining(const ProtocolConfig& cfg);
TrainingResult RunTraining(const ProtocolConfig& cfg,
                           const Federation& federation);

}  // namespace ipfl::protocol

#endif  // IPFL_PROTOCOL_H_
