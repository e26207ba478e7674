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

#ifndef IPFL_RANDOM_H_
#define IPFL_RANDOM_H_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ipfl {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a tag path, e.g.
// DeriveSeed(global, {kStreamLocal, client_id, round}). Every random draw in
// the simulator goes through a seed derived this way, so results do not depend
// on the order in which clients are processed.
inline uint64_t DeriveSeed(uint64_t base, std::initializer_list<uint64_t> tags) {
  uint64_t h = Mix64(base);
  for (uint64_t tag : tags) h = Mix64(h ^ Mix64(tag + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng MakeRng(uint64_t seed) { return Rng(Mix64(seed)); }

// Stream tags for DeriveSeed.
enum StreamTag : uint64_t {
  kStreamInit = 1,
  kStreamData = 2,
  kStreamPartition = 3,
  kStreamCredential = 4,
  kStreamTriggerSet = 5,
  kStreamTokens = 6,
  kStreamLocal = 7,
  kStreamTrigger = 8,
  kStreamServer = 9,
  kStreamFinetune = 10,
  kStreamTestData = 11,
  kStreamMonteCarlo = 12,
};

}  // namespace ipfl

#endif  // IPFL_RANDOM_H_
