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

// Synthetic image datasets, Dirichlet non-IID partitioning and the trigger
// credentials used to build private trigger sets.
//
// Images are stored channel-major: pixel (c, h, w) lives at index
// c * H * W + h * W + w.

#ifndef IPFL_DATA_H_
#define IPFL_DATA_H_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ipfl/nn.h"

namespace ipfl::data {

struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  size_t size() const {
    return static_cast<size_t>(channels) * height * width;
  }
  size_t index(int c, int h, int w) const {
    return (static_cast<size_t>(c) * height + h) * width + w;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct Image {
  std::vector<double> pixels;
  int label = 0;

  friend bool operator==(const Image&, const Image&) = default;
};

struct Dataset {
  Shape shape;
  int num_classes = 0;
  std::vector<Image> examples;

  size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  // Throws std::invalid_argument on a ragged shape, an out-of-range label or
  // a pixel outside [0, 1].
  void Validate() const;

  // Borrowed batch over examples[indices]; the dataset must outlive it.
  nn::Batch AsBatch(std::span<const size_t> indices) const;
  nn::Batch AsBatch() const;

  // Number of examples per class.
  std::vector<size_t> ClassHistogram() const;
};

// Private per-client credential: binary mask m, pattern tau, target label.
struct TriggerCredential {
  Shape shape;
  std::vector<uint8_t> mask;
  std::vector<double> pattern;
  int target_label = 0;

  friend bool operator==(const TriggerCredential&,
                         const TriggerCredential&) = default;
};

struct TriggerSet {
  std::vector<Image> examples;
  TriggerCredential source_credential;
  // The unstamped source images, with their original labels, in the same
  // order as `examples`.
  std::vector<Image> sources;

  size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  nn::Batch AsBatch() const;
  // Stamped examples followed by their clean sources.
  nn::Batch AsContrastBatch() const;
};

// Each class has a random prototype: uniform pixels in [0.15, 0.85] plus one
// Gaussian blob per channel. Examples add isotropic noise with standard
// deviation `noise` and are clipped to [0, 1]. Labels are assigned round-robin
// before shuffling, so class counts differ by at most one. Images must be at
// least Cx4x4.
Dataset GenerateSynthetic(int num_classes, Shape shape, int count,
                          uint64_t seed, double noise = 0.2);

// Splits each class across clients with proportions ~ Dirichlet(beta). Draws
// that leave a client empty are discarded and redrawn from the next derived
// seed (up to a fixed attempt budget). Throws std::invalid_argument if the
// dataset has fewer examples than clients or no valid draw is found.
std::vector<Dataset> DirichletPartition(const Dataset& data, int n_clients,
                                        double beta, uint64_t seed);

// 2x2 patch at a uniformly random position, one uniformly random colour per
// channel and a uniformly random target label.
TriggerCredential SampleTriggerCredential(Shape shape, int num_classes,
                                          uint64_t seed);

// Builds a credential whose mask covers the 2x2 patch with top-left corner
// (row, col) in every channel; colors[c] fills channel c.
TriggerCredential MakePatchCredential(Shape shape, int row, int col,
                                      std::span<const double> colors,
                                      int target_label);

// Checks that the mask is binary, its support is one 2x2 patch replicated over
// all channels, and the pattern lies in [0, 1].
void ValidatePatchCredential(const TriggerCredential& cred);

// (1 - m) * x + m * tau, relabelled to the target label.
Image Stamp(const Image& x, const TriggerCredential& cred);

// Stamps max(1, round_half_up(fraction * |local|)) examples drawn without
// replacement. Source images whose label already equals the target are used
// only when there are not enough other images.
TriggerSet BuildTriggerSet(const Dataset& local, const TriggerCredential& cred,
                           double fraction, uint64_t seed);

// Binary dataset file: a one-line ASCII header
//   "IPFLDS1 <channels> <height> <width> <num_classes> <count>\n"
// followed, per example, by a little-endian int32 label and C*H*W
// little-endian IEEE-754 float64 pixels.
void WriteDataset(const Dataset& data, std::ostream& out);
Dataset ReadDataset(std::istream& in);
void SaveDataset(const Dataset& data, const std::string& path);
Dataset LoadDataset(const std::string& path);

}  // namespace ipfl::data

#endif  // IPFL_DATA_H_
