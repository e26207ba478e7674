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
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

namespace ipfl::protocol {
namespace {

// Small enough that a full run takes a few milliseconds.
ProtocolConfig SmallConfig(uint64_t seed = 1) {
  ProtocolConfig cfg;
  cfg.seed = seed;
  cfg.n_clients = 4;
  cfg.rounds = 8;
  cfg.trigger_epochs = 5;
  cfg.data.num_classes = 4;
  cfg.data.shape = {3, 4, 4};
  cfg.data.train_examples = 200;
  cfg.data.test_examples = 40;
  cfg.data.trigger_fraction = 0.2;
  cfg.model = {{48, 16, 4}, nn::Activation::kRelu};
  return cfg;
}

nn::GradVector Vec(std::vector<double> v) { return nn::GradVector(std::move(v)); }

TEST(AssignTokensTest, SingleClient) {
  const auto t = AssignTokens(1, 5);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].value, 0);
}

TEST(AssignTokensTest, IsAPermutation) {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto t = AssignTokens(13, seed);
    std::sort(t.begin(), t.end());
    for (int i = 0; i < 13; ++i) EXPECT_EQ(t[i].value, i);
  }
}

TEST(AssignTokensTest, PermutationsAreUniform) {
  constexpr int kSeeds = 10000;
  std::map<std::vector<int>, int> freq;
  for (uint64_t seed = 0; seed < kSeeds; ++seed) {
    std::vector<int> perm;
    for (const auto& tok : AssignTokens(4, seed)) perm.push_back(tok.value);
    ++freq[perm];
  }
  ASSERT_EQ(freq.size(), 24u);
  const double p = 1.0 / 24;
  const double sigma = std::sqrt(p * (1 - p) / kSeeds);
  for (const auto& [perm, count] : freq) {
    EXPECT_NEAR(static_cast<double>(count) / kSeeds, p, 5 * sigma);
  }
}

TEST(IsVerifierTest, Congruence) {
  EXPECT_TRUE(IsVerifier({3}, 3, 10));
  EXPECT_TRUE(IsVerifier({3}, 13, 10));
  EXPECT_FALSE(IsVerifier({3}, 4, 10));
}

TEST(IsVerifierTest, ExactlyOnePerRound) {
  const auto tokens = AssignTokens(7, 3);
  for (int t = 0; t < 100; ++t) {
    int count = 0;
    for (const auto& tok : tokens) count += IsVerifier(tok, t, 7);
    EXPECT_EQ(count, 1);
  }
}

TEST(ConfigTest, RejectsBrokenInvariants) {
  ProtocolConfig cfg = SmallConfig();
  cfg.Validate();
  cfg.rounds = 3;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  cfg = SmallConfig();
  cfg.threshold = 1.0;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  cfg = SmallConfig();
  cfg.boost = 0.5;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  cfg = SmallConfig();
  cfg.model.layer_dims = {47, 16, 4};
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  cfg = SmallConfig();
  cfg.adversary.kind = AdversaryKind::kOmit;
  cfg.adversary.rho = 1.5;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
}

class FederationTest : public ::testing::Test {
 protected:
  FederationTest() : cfg_(SmallConfig()), fed_(SetupFederation(cfg_)) {}
  ProtocolConfig cfg_;
  Federation fed_;
};

TEST_F(FederationTest, EveryClientHasDataAndTriggers) {
  ASSERT_EQ(fed_.clients.size(), 4u);
  size_t total = 0;
  for (const auto& c : fed_.clients) {
    EXPECT_FALSE(c.local_data.empty());
    EXPECT_FALSE(c.trigger_set.empty());
    total += c.local_data.size();
  }
  EXPECT_EQ(total, 200u);
  EXPECT_EQ(fed_.test_set.size(), 40u);
}

TEST_F(FederationTest, SingleFullBatchEqualsBatchGradient) {
  cfg_.local_epochs = 1;
  cfg_.batch_size = 1000;
  const ClientState& c = fed_.clients[0];
  const nn::GradVector g = LocalUpdate(c, fed_.initial_params, cfg_, 0);
  const nn::LossAndGrad want =
      nn::ComputeLossAndGrad(fed_.initial_params, c.local_data.AsBatch());
  ASSERT_EQ(g.size(), want.grad.size());
  for (size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], want.grad[i], 1e-13);
}

TEST_F(FederationTest, EffectiveGradientReproducesLocalModel) {
  // Two full-batch momentum steps, unrolled by hand.
  cfg_.local_epochs = 2;
  cfg_.batch_size = 1000;
  const ClientState& c = fed_.clients[1];
  const nn::Batch batch = c.local_data.AsBatch();
  const nn::ParamVector& theta0 = fed_.initial_params;
  const nn::GradVector g0 = nn::ComputeLossAndGrad(theta0, batch).grad;
  std::vector<double> theta1(theta0.values().begin(), theta0.values().end());
  for (size_t i = 0; i < theta1.size(); ++i) theta1[i] -= cfg_.lr * g0[i];
  const nn::GradVector g1 =
      nn::ComputeLossAndGrad(nn::ParamVector(cfg_.model, theta1), batch).grad;
  std::vector<double> theta2 = theta1;
  for (size_t i = 0; i < theta2.size(); ++i) {
    theta2[i] -= cfg_.lr * (cfg_.momentum * g0[i] + g1[i]);
  }

  const nn::GradVector g = LocalUpdate(c, theta0, cfg_, 0);
  for (size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(theta0[i] - cfg_.lr * g[i], theta2[i], 1e-13);
  }
}

TEST_F(FederationTest, ZeroLearningRateGivesZeroUpdate) {
  cfg_.lr = 0.0;
  const nn::GradVector g = LocalUpdate(fed_.clients[0], fed_.initial_params, cfg_, 0);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST_F(FederationTest, IdenticalClientsGiveIdenticalUpdates) {
  const ClientState a = fed_.clients[2];
  const ClientState b = fed_.clients[2];
  EXPECT_EQ(LocalUpdate(a, fed_.initial_params, cfg_, 3),
            LocalUpdate(b, fed_.initial_params, cfg_, 3));
}

TEST_F(FederationTest, EmptyLocalDataRejected) {
  ClientState c = fed_.clients[0];
  c.local_data.examples.clear();
  EXPECT_THROW(LocalUpdate(c, fed_.initial_params, cfg_, 0), std::invalid_argument);
}

TEST_F(FederationTest, ZeroBoostLeavesCleanGradient) {
  cfg_.boost = 0.0;
  const ClientState& c = fed_.clients[0];
  const nn::GradVector clean = LocalUpdate(c, fed_.initial_params, cfg_, 0);
  EXPECT_EQ(InjectProof(c, fed_.initial_params, clean, cfg_, 0).boosted, clean);
}

TEST_F(FederationTest, SingleTriggerStepIsScaledTriggerGradient) {
  cfg_.trigger_epochs = 1;
  cfg_.batch_size = 1000;
  cfg_.contrast_proof = false;
  const ClientState& c = fed_.clients[1];
  const nn::GradVector clean = LocalUpdate(c, fed_.initial_params, cfg_, 0);
  std::vector<double> proxy(fed_.initial_params.values().begin(),
                            fed_.initial_params.values().end());
  for (size_t i = 0; i < proxy.size(); ++i) proxy[i] -= cfg_.lr * clean[i];
  const nn::LossAndGrad trig = nn::ComputeLossAndGrad(
      nn::ParamVector(cfg_.model, proxy), c.trigger_set.AsBatch());

  for (double trigger_lr : {cfg_.lr, 0.005}) {
    cfg_.trigger_lr = trigger_lr;
    const InjectionResult r = InjectProof(c, fed_.initial_params, clean, cfg_, 0);
    const double scale = cfg_.boost * trigger_lr / cfg_.lr;
    for (size_t i = 0; i < clean.size(); ++i) {
      EXPECT_NEAR(r.boosted[i] - clean[i], scale * trig.grad[i], 1e-12);
    }
  }
}

TEST_F(FederationTest, SaturatedTriggerAddsNothing) {
  // One linear layer whose bias makes the target class win with probability
  // exactly 1.0 in double precision, so the trigger loss gradient vanishes.
  ProtocolConfig cfg = cfg_;
  cfg.model = {{48, 4}, nn::Activation::kRelu};
  cfg.contrast_proof = false;
  const ClientState& c = fed_.clients[0];
  std::vector<double> theta(cfg.model.num_params(), 0.0);
  theta[48 * 4 + c.credential.target_label] = 1e4;
  const nn::ParamVector params(cfg.model, theta);
  const nn::GradVector clean = nn::GradVector::Zeros(params.size());
  const InjectionResult r = InjectProof(c, params, clean, cfg, 0);
  EXPECT_EQ(r.boosted, clean);
}

TEST_F(FederationTest, EmptyTriggerSetRejected) {
  ClientState c = fed_.clients[0];
  c.trigger_set.examples.clear();
  c.trigger_set.sources.clear();
  const nn::GradVector clean = nn::GradVector::Zeros(fed_.initial_params.size());
  EXPECT_THROW(InjectProof(c, fed_.initial_params, clean, cfg_, 0),
               std::invalid_argument);
  EXPECT_THROW(VerifyProof(c, fed_.initial_params, 0.7), std::invalid_argument);
}

TEST_F(FederationTest, HonestStepDecomposesIntoCleanAndSignal) {
  const nn::ParamVector& theta = fed_.initial_params;
  std::map<int, nn::GradVector> updates;
  std::vector<nn::GradVector> clean;
  nn::GradVector backdoor;
  for (const auto& c : fed_.clients) {
    clean.push_back(LocalUpdate(c, theta, cfg_, 0));
    if (IsVerifier(c.token, 0, cfg_.n_clients)) {
      const InjectionResult inj = InjectProof(c, theta, clean.back(), cfg_, 0);
      backdoor = inj.backdoor;
      updates.emplace(c.id, inj.boosted);
    } else {
      updates.emplace(c.id, clean.back());
    }
  }
  const nn::ParamVector next =
      ApplyGlobalUpdate(theta, Aggregate(updates, cfg_.adversary, 0, 9).update, cfg_.lr);
  const double n = cfg_.n_clients;
  for (size_t j = 0; j < theta.size(); ++j) {
    double s = 0.0;
    for (const auto& g : clean) s += g[j];
    EXPECT_NEAR(next[j] - (theta[j] - cfg_.lr / n * s),
                -(cfg_.lr * cfg_.boost / n) * backdoor[j], 1e-10);
  }
}

TEST(AggregateTest, IdenticalHonestUpdatesAreIdempotent) {
  const std::map<int, nn::GradVector> u = {{0, Vec({1, -2, 3})}, {1, Vec({1, -2, 3})}};
  EXPECT_EQ(Aggregate(u, AdversaryPolicy{}, 0, 1).update, Vec({1, -2, 3}));
}

TEST(AggregateTest, OmitHalfOfFour) {
  const std::map<int, nn::GradVector> u = {{0, Vec({1, 2, 3})},
                                           {1, Vec({4, 5, 6})},
                                           {2, Vec({-1, 0, 1})},
                                           {3, Vec({2, 2, 2})}};
  AdversaryPolicy p;
  p.kind = AdversaryKind::kOmit;
  p.rho = 0.5;
  for (int round = 0; round < 20; ++round) {
    const AggregateResult r = Aggregate(u, p, round, 7);
    ASSERT_EQ(r.victim_ids.size(), 2u);
    std::vector<double> want(3, 0.0);
    for (const auto& [id, g] : u) {
      if (r.victim_ids.contains(id)) continue;
      for (int j = 0; j < 3; ++j) want[j] += g[j] / 2;
    }
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(r.update[j], want[j]);
  }
}

TEST(AggregateTest, OmitEverythingGivesZeroStep) {
  const std::map<int, nn::GradVector> u = {{0, Vec({1, 2})}, {1, Vec({3, 4})}};
  AdversaryPolicy p;
  p.kind = AdversaryKind::kOmit;
  p.rho = 1.0;
  const AggregateResult r = Aggregate(u, p, 0, 1);
  EXPECT_EQ(r.victim_ids.size(), 2u);
  EXPECT_EQ(r.update, Vec({0, 0}));
}

TEST(AggregateTest, TamperModes) {
  const std::map<int, nn::GradVector> u = {{0, Vec({2, 4})}, {1, Vec({6, 8})}};
  AdversaryPolicy p;
  p.kind = AdversaryKind::kTamper;
  p.rho = 0.5;
  p.victim_selection = VictimSelection::kForceVerifier;
  p.tamper_mode = TamperMode::kZero;
  EXPECT_EQ(Aggregate(u, p, 0, 1, 1).update, Vec({1, 2}));
  p.tamper_mode = TamperMode::kScale;
  p.tamper_magnitude = -1.0;
  EXPECT_EQ(Aggregate(u, p, 0, 1, 1).update, Vec({-2, -2}));
  p.tamper_mode = TamperMode::kNoise;
  p.tamper_magnitude = 0.5;
  const AggregateResult noisy = Aggregate(u, p, 0, 1, 1);
  EXPECT_EQ(noisy.victim_ids, std::set<int>{1});
  EXPECT_NE(noisy.update, Vec({1, 2}));
}

TEST(AggregateTest, WhiteBoxSelection) {
  std::map<int, nn::GradVector> u;
  for (int i = 0; i < 10; ++i) u.emplace(i, Vec({double(i)}));
  AdversaryPolicy p;
  p.kind = AdversaryKind::kOmit;
  p.rho = 0.3;
  p.victim_selection = VictimSelection::kForceVerifier;
  for (int t = 0; t < 30; ++t) {
    const auto r = Aggregate(u, p, t, 5, t % 10);
    EXPECT_EQ(r.victim_ids.size(), 3u);
    EXPECT_TRUE(r.victim_ids.contains(t % 10));
  }
  p.victim_selection = VictimSelection::kExcludeVerifier;
  for (int t = 0; t < 30; ++t) {
    const auto r = Aggregate(u, p, t, 5, t % 10);
    EXPECT_EQ(r.victim_ids.size(), 3u);
    EXPECT_FALSE(r.victim_ids.contains(t % 10));
  }
  EXPECT_THROW(Aggregate(u, p, 0, 5), std::invalid_argument);
}

TEST(AggregateTest, AttackScheduleFollowsPolicy) {
  AdversaryPolicy p;
  p.kind = AdversaryKind::kOmit;
  p.rho = 0.1;
  p.attack_rounds = std::set<int>{2, 5};
  for (int t = 0; t < 8; ++t) EXPECT_EQ(IsAttackedRound(p, t, 3), t == 2 || t == 5);
  p.attack_rounds.reset();
  p.epsilon = 0.25;
  int hits = 0;
  for (int t = 0; t < 4000; ++t) hits += IsAttackedRound(p, t, 3);
  EXPECT_NEAR(hits / 4000.0, 0.25, 5 * std::sqrt(0.25 * 0.75 / 4000));
  EXPECT_FALSE(IsAttackedRound(AdversaryPolicy{}, 0, 3));
}

TEST(AggregateTest, VictimCountRoundsUp) {
  EXPECT_EQ(VictimCount(0.1, 10), 1);
  EXPECT_EQ(VictimCount(0.3, 10), 3);
  EXPECT_EQ(VictimCount(0.15, 10), 2);
  EXPECT_EQ(VictimCount(0.0, 10), 0);
  EXPECT_EQ(VictimCount(1.0, 7), 7);
}

TEST(ApplyGlobalUpdateTest, ElementwiseStep) {
  const nn::ModelSpec spec{{1, 2}};
  const nn::ParamVector p(spec, {1.0, -1.0, 0.5, 2.0});
  EXPECT_EQ(ApplyGlobalUpdate(p, nn::GradVector::Zeros(4), 0.1), p);
  EXPECT_EQ(ApplyGlobalUpdate(p, Vec({1, 2, 3, 4}), 0.0), p);
  const nn::ParamVector q = ApplyGlobalUpdate(p, Vec({1, 2, 3, 4}), 0.5);
  const std::vector<double> want = {0.5, -2.0, -1.0, 0.0};
  for (size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(q[i], want[i]);
  EXPECT_THROW(ApplyGlobalUpdate(p, Vec({1}), 0.1), std::invalid_argument);
}

// Identity map on two inputs: the prediction is the larger coordinate.
ClientState TwoClassClient(int hits, int misses) {
  ClientState c;
  c.trigger_set.source_credential.target_label = 1;
  for (int i = 0; i < hits; ++i) c.trigger_set.examples.push_back({{0.0, 1.0}, 1});
  for (int i = 0; i < misses; ++i) c.trigger_set.examples.push_back({{1.0, 0.0}, 1});
  return c;
}

TEST(VerifyProofTest, CountsHits) {
  const nn::ParamVector identity(nn::ModelSpec{{2, 2}}, {1, 0, 0, 1, 0, 0});
  const VerifyResult r = VerifyProof(TwoClassClient(4, 1), identity, 0.7);
  EXPECT_DOUBLE_EQ(r.asr, 0.8);
  EXPECT_EQ(r.verdict, Verdict::kAccept);
  const VerifyResult all = VerifyProof(TwoClassClient(5, 0), identity, 0.7);
  EXPECT_EQ(all.asr, 1.0);
  EXPECT_EQ(all.verdict, Verdict::kAccept);
  const VerifyResult none = VerifyProof(TwoClassClient(0, 5), identity, 0.7);
  EXPECT_EQ(none.asr, 0.0);
  EXPECT_EQ(none.verdict, Verdict::kReject);
}

TEST_F(FederationTest, ZeroFinetuneEpochsKeepParams) {
  cfg_.finetune_epochs = 0;
  EXPECT_EQ(FinalFinetune(fed_.clients[0], fed_.initial_params, cfg_),
            fed_.initial_params);
}

TEST(RunTrainingTest, EveryClientVerifiesOnceInNRounds) {
  ProtocolConfig cfg = SmallConfig();
  cfg.rounds = cfg.n_clients;
  const TrainingResult r = RunTraining(cfg);
  std::vector<int> ids;
  for (const auto& rec : r.rounds) ids.push_back(rec.verifier_id);
  std::sort(ids.begin(), ids.end());
  std::vector<int> want(cfg.n_clients);
  std::iota(want.begin(), want.end(), 0);
  EXPECT_EQ(ids, want);
  EXPECT_EQ(r.clients.size(), 4u);
}

TEST(RunTrainingTest, Deterministic) {
  const ProtocolConfig cfg = SmallConfig(3);
  const TrainingResult a = RunTraining(cfg);
  const TrainingResult b = RunTraining(cfg);
  EXPECT_EQ(a.final_params, b.final_params);
  for (size_t t = 0; t < a.rounds.size(); ++t) {
    EXPECT_EQ(a.rounds[t].asr, b.rounds[t].asr);
    EXPECT_EQ(a.rounds[t].per_client_asr, b.rounds[t].per_client_asr);
  }
}

TEST(RunTrainingTest, RandomOmissionIsCaughtAtTheAnalyticRate) {
  // rho = 0.5 with n = 4 drops two clients per round.
  constexpr int kRuns = 200;
  int caught = 0;
  for (int run = 0; run < kRuns; ++run) {
    ProtocolConfig cfg = SmallConfig(1000 + run);
    cfg.rounds = 10;
    cfg.log_client_asr = false;
    cfg.adversary.kind = AdversaryKind::kOmit;
    cfg.adversary.rho = 0.5;
    const TrainingResult r = RunTraining(cfg);
    caught += std::any_of(r.rounds.begin(), r.rounds.end(), [](const RoundRecord& x) {
      return x.verdict == Verdict::kReject;
    });
  }
  const double p = 1 - std::pow(0.5, 10);
  const double sigma = std::sqrt(p * (1 - p) / kRuns);
  EXPECT_NEAR(static_cast<double>(caught) / kRuns, p, 3 * sigma);
}

// Desk-scale properties; each run takes a few seconds.
class DeskScaleTest : public ::testing::Test {
 protected:
  static ProtocolConfig Desk(uint64_t seed) {
    ProtocolConfig cfg;
    cfg.seed = seed;
    return cfg;
  }
};

TEST_F(DeskScaleTest, OmittingOthersGoesUnnoticed) {
  ProtocolConfig cfg = Desk(2);
  cfg.adversary.kind = AdversaryKind::kOmit;
  cfg.adversary.rho = 0.3;
  cfg.adversary.victim_selection = VictimSelection::kExcludeVerifier;
  const TrainingResult r = RunTraining(cfg);
  int accepted = 0, counted = 0;
  for (const auto& rec : r.rounds) {
    EXPECT_EQ(rec.omitted_ids.size(), 3u);
    EXPECT_FALSE(rec.omitted_ids.contains(rec.verifier_id));
    if (rec.round < cfg.warmup_rounds) continue;
    ++counted;
    accepted += rec.verdict == Verdict::kAccept;
  }
  // Omission alone cannot be detected here; what rejects remain are failures
  // of the proof signal itself, held to the same budget as honest runs.
  EXPECT_GE(static_cast<double>(accepted) / counted, 0.9);
}

TEST_F(DeskScaleTest, FinetuningErasesProofsAndKeepsAccuracy) {
  std::vector<double> acc_drop, asr_after;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const TrainingResult r = RunTraining(Desk(seed));
    // The last verifier's proof is still in the final global model.
    const int v = r.rounds.back().verifier_id;
    const ClientOutcome& o = r.clients[v];
    EXPECT_GE(o.trigger_asr_before, 0.7);
    asr_after.push_back(o.trigger_asr_after);
    double drop = 0.0;
    for (const auto& c : r.clients) {
      drop += c.local_accuracy_before - c.local_accuracy_after;
    }
    acc_drop.push_back(drop / r.clients.size());
  }
  std::sort(acc_drop.begin(), acc_drop.end());
  std::sort(asr_after.begin(), asr_after.end());
  EXPECT_LE(acc_drop[2], 0.02);
  EXPECT_LT(asr_after[2], 0.7);
}

}  // namespace
}  // namespace ipfl::protocol
