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

#include "ipfl/data.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ipfl/random.h"

namespace ipfl::data {

namespace {

constexpr int kPatchSize = 2;
constexpr int kMaxPartitionAttempts = 1000;
constexpr double kBlobWidth = 1.2;
constexpr double kBaseLow = 0.15;
constexpr double kBaseHigh = 0.85;
constexpr char kDatasetMagic[] = "IPFLDS1";

void CheckPatchRoom(Shape shape) {
  if (shape.channels < 1 || shape.height < kPatchSize ||
      shape.width < kPatchSize) {
    throw std::invalid_argument("image shape too small for a 2x2 trigger");
  }
}

template <typename T>
void WriteLittleEndian(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, uint64_t, uint32_t>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  char bytes[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  }
  out.write(bytes, sizeof(T));
}

template <typename T>
T ReadLittleEndian(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, uint64_t, uint32_t>;
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error("truncated dataset file");
  }
  U bits = 0;
  for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

// One Dirichlet(beta) draw of length k via normalized gamma variates.
std::vector<double> SampleDirichlet(int k, double beta, Rng& rng) {
  std::gamma_distribution<double> gamma(beta, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& v : p) total += (v = gamma(rng));
  if (total <= 0.0) {
    // All draws underflowed (tiny beta): put the mass on one client.
    std::fill(p.begin(), p.end(), 0.0);
    p[std::uniform_int_distribution<int>(0, k - 1)(rng)] = 1.0;
    return p;
  }
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

void Dataset::Validate() const {
  for (const Image& img : examples) {
    if (img.pixels.size() != shape.size()) {
      throw std::invalid_argument("image does not match dataset shape");
    }
    if (img.label < 0 || img.label >= num_classes) {
      throw std::invalid_argument("label out of range");
    }
    for (double p : img.pixels) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("pixel outside [0, 1]");
      }
    }
  }
}

nn::Batch Dataset::AsBatch(std::span<const size_t> indices) const {
  nn::Batch batch;
  batch.inputs.reserve(indices.size());
  batch.labels.reserve(indices.size());
  for (size_t i : indices) {
    batch.inputs.emplace_back(examples.at(i).pixels);
    batch.labels.push_back(examples[i].label);
  }
  return batch;
}

nn::Batch Dataset::AsBatch() const {
  std::vector<size_t> all(examples.size());
  std::iota(all.begin(), all.end(), size_t{0});
  return AsBatch(all);
}

std::vector<size_t> Dataset::ClassHistogram() const {
  std::vector<size_t> hist(num_classes, 0);
  for (const Image& img : examples) ++hist.at(img.label);
  return hist;
}

nn::Batch TriggerSet::AsBatch() const {
  nn::Batch batch;
  for (const Image& img : examples) {
    batch.inputs.emplace_back(img.pixels);
    batch.labels.push_back(img.label);
  }
  return batch;
}

nn::Batch TriggerSet::AsContrastBatch() const {
  nn::Batch batch = AsBatch();
  for (const Image& img : sources) {
    batch.inputs.emplace_back(img.pixels);
    batch.labels.push_back(img.label);
  }
  return batch;
}

Dataset GenerateSynthetic(int num_classes, Shape shape, int count,
                          uint64_t seed, double noise) {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (count < num_classes) {
    throw std::invalid_argument("count must be at least num_classes");
  }
  if (shape.height < 4 || shape.width < 4 || shape.channels < 1) {
    throw std::invalid_argument("synthetic images must be at least Cx4x4");
  }
  if (noise < 0.0) throw std::invalid_argument("noise must be >= 0");

  Rng proto_rng = MakeRng(DeriveSeed(seed, {kStreamData, 0}));
  std::vector<std::vector<double>> prototypes(num_classes,
                                              std::vector<double>(shape.size()));
  std::uniform_real_distribution<double> row(0.0, shape.height - 1.0);
  std::uniform_real_distribution<double> col(0.0, shape.width - 1.0);
  std::uniform_real_distribution<double> amplitude(0.5, 1.0);
  std::uniform_real_distribution<double> base(kBaseLow, kBaseHigh);
  for (auto& proto : prototypes) {
    for (double& p : proto) p = base(proto_rng);
    for (int c = 0; c < shape.channels; ++c) {
      const double ch = row(proto_rng), cw = col(proto_rng);
      const double a = amplitude(proto_rng);
      for (int h = 0; h < shape.height; ++h) {
        for (int w = 0; w < shape.width; ++w) {
          const double d2 = (h - ch) * (h - ch) + (w - cw) * (w - cw);
          double& p = proto[shape.index(c, h, w)];
          p = std::min(1.0, p + a * std::exp(-d2 / (2 * kBlobWidth * kBlobWidth)));
        }
      }
    }
  }

  std::vector<int> labels(count);
  for (int i = 0; i < count; ++i) labels[i] = i % num_classes;
  Rng rng = MakeRng(DeriveSeed(seed, {kStreamData, 1}));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> gauss(0.0, noise);
  Dataset data{shape, num_classes, {}};
  data.examples.reserve(count);
  for (int label : labels) {
    Image img{prototypes[label], label};
    if (noise > 0.0) {
      for (double& p : img.pixels) p = std::clamp(p + gauss(rng), 0.0, 1.0);
    }
    data.examples.push_back(std::move(img));
  }
  return data;
}

std::vector<Dataset> DirichletPartition(const Dataset& data, int n_clients,
                                        double beta, uint64_t seed) {
  if (n_clients < 1) throw std::invalid_argument("n_clients must be >= 1");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
  if (data.size() < static_cast<size_t>(n_clients)) {
    throw std::invalid_argument("fewer examples than clients");
  }

  std::vector<std::vector<size_t>> by_class(data.num_classes);
  for (size_t i = 0; i < data.size(); ++i) {
    by_class.at(data.examples[i].label).push_back(i);
  }

  for (int attempt = 0; attempt < kMaxPartitionAttempts; ++attempt) {
    Rng rng = MakeRng(DeriveSeed(seed, {kStreamPartition, uint64_t(attempt)}));
    std::vector<std::vector<size_t>> assigned(n_clients);
    for (std::vector<size_t> members : by_class) {
      if (members.empty()) continue;
      std::shuffle(members.begin(), members.end(), rng);
      const std::vector<double> p = SampleDirichlet(n_clients, beta, rng);
      const size_t total = members.size();
      double cumulative = 0.0;
      size_t start = 0;
      for (int c = 0; c < n_clients; ++c) {
        cumulative += p[c];
        size_t end = c + 1 == n_clients
                         ? total
                         : std::min(total, static_cast<size_t>(std::floor(
                                               cumulative * total + 1e-9)));
        end = std::max(end, start);
        assigned[c].insert(assigned[c].end(), members.begin() + start,
                           members.begin() + end);
        start = end;
      }
    }
    if (std::any_of(assigned.begin(), assigned.end(),
                    [](const auto& a) { return a.empty(); })) {
      continue;
    }
    std::vector<Dataset> parts;
    parts.reserve(n_clients);
    for (std::vector<size_t>& idx : assigned) {
      std::sort(idx.begin(), idx.end());
      Dataset part{data.shape, data.num_classes, {}};
      part.examples.reserve(idx.size());
      for (size_t i : idx) part.examples.push_back(data.examples[i]);
      parts.push_back(std::move(part));
    }
    return parts;
  }
  throw std::invalid_argument(
      "could not find a Dirichlet partition without empty clients");
}

TriggerCredential MakePatchCredential(Shape shape, int row, int col,
                                      std::span<const double> colors,
                                      int target_label) {
  CheckPatchRoom(shape);
  if (row < 0 || col < 0 || row + kPatchSize > shape.height ||
      col + kPatchSize > shape.width) {
    throw std::invalid_argument("patch position out of bounds");
  }
  if (static_cast<int>(colors.size()) != shape.channels) {
    throw std::invalid_argument("need one colour per channel");
  }
  TriggerCredential cred{shape, std::vector<uint8_t>(shape.size(), 0),
                         std::vector<double>(shape.size(), 0.0), target_label};
  for (int c = 0; c < shape.channels; ++c) {
    for (int h = 0; h < shape.height; ++h) {
      for (int w = 0; w < shape.width; ++w) {
        cred.pattern[shape.index(c, h, w)] = colors[c];
      }
    }
    for (int dh = 0; dh < kPatchSize; ++dh) {
      for (int dw = 0; dw < kPatchSize; ++dw) {
        cred.mask[shape.index(c, row + dh, col + dw)] = 1;
      }
    }
  }
  return cred;
}

TriggerCredential SampleTriggerCredential(Shape shape, int num_classes,
                                          uint64_t seed) {
  CheckPatchRoom(shape);
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  Rng rng = MakeRng(DeriveSeed(seed, {kStreamCredential}));
  const int row =
      std::uniform_int_distribution<int>(0, shape.height - kPatchSize)(rng);
  const int col =
      std::uniform_int_distribution<int>(0, shape.width - kPatchSize)(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> colors(shape.channels);
  for (double& c : colors) c = unit(rng);
  const int target = std::uniform_int_distribution<int>(0, num_classes - 1)(rng);
  return MakePatchCredential(shape, row, col, colors, target);
}

void ValidatePatchCredential(const TriggerCredential& cred) {
  const Shape s = cred.shape;
  if (cred.mask.size() != s.size() || cred.pattern.size() != s.size()) {
    throw std::invalid_argument("credential tensors do not match shape");
  }
  for (double p : cred.pattern) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("pattern outside [0, 1]");
    }
  }
  int min_h = s.height, min_w = s.width, max_h = -1, max_w = -1;
  size_t ones = 0;
  for (int c = 0; c < s.channels; ++c) {
    for (int h = 0; h < s.height; ++h) {
      for (int w = 0; w < s.width; ++w) {
        const uint8_t m = cred.mask[s.index(c, h, w)];
        if (m > 1) throw std::invalid_argument("mask is not binary");
        if (m == 1) {
          ++ones;
          min_h = std::min(min_h, h);
          min_w = std::min(min_w, w);
          max_h = std::max(max_h, h);
          max_w = std::max(max_w, w);
        }
        // Support must be identical across channels.
        if (m != cred.mask[s.index(0, h, w)]) {
          throw std::invalid_argument("mask differs across channels");
        }
      }
    }
  }
  if (ones != static_cast<size_t>(kPatchSize * kPatchSize * s.channels) ||
      max_h - min_h != kPatchSize - 1 || max_w - min_w != kPatchSize - 1) {
    throw std::invalid_argument("mask support is not a single 2x2 patch");
  }
}

Image Stamp(const Image& x, const TriggerCredential& cred) {
  if (x.pixels.size() != cred.shape.size() ||
      cred.mask.size() != cred.shape.size() ||
      cred.pattern.size() != cred.shape.size()) {
    throw std::invalid_argument("image and credential shapes differ");
  }
  Image out{x.pixels, cred.target_label};
  for (size_t i = 0; i < out.pixels.size(); ++i) {
    if (cred.mask[i]) out.pixels[i] = cred.pattern[i];
  }
  return out;
}

TriggerSet BuildTriggerSet(const Dataset& local, const TriggerCredential& cred,
                           double fraction, uint64_t seed) {
  if (local.empty()) throw std::invalid_argument("empty local dataset");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("trigger fraction must lie in (0, 1]");
  }
  const size_t want = std::max<size_t>(
      1, static_cast<size_t>(std::floor(fraction * local.size() + 0.5)));

  std::vector<size_t> off_target;
  std::vector<size_t> on_target;
  for (size_t i = 0; i < local.size(); ++i) {
    (local.examples[i].label == cred.target_label ? on_target : off_target)
        .push_back(i);
  }
  Rng rng = MakeRng(DeriveSeed(seed, {kStreamTriggerSet}));
  std::shuffle(off_target.begin(), off_target.end(), rng);
  std::shuffle(on_target.begin(), on_target.end(), rng);

  std::vector<size_t> chosen(off_target.begin(),
                             off_target.begin() +
                                 std::min(want, off_target.size()));
  for (size_t i = 0; chosen.size() < want; ++i) chosen.push_back(on_target[i]);
  std::sort(chosen.begin(), chosen.end());

  TriggerSet set{{}, cred, {}};
  set.examples.reserve(chosen.size());
  set.sources.reserve(chosen.size());
  for (size_t i : chosen) {
    set.examples.push_back(Stamp(local.examples[i], cred));
    set.sources.push_back(local.examples[i]);
  }
  return set;
}

void WriteDataset(const Dataset& data, std::ostream& out) {
  out << kDatasetMagic << ' ' << data.shape.channels << ' ' << data.shape.height
      << ' ' << data.shape.width << ' ' << data.num_classes << ' '
      << data.size() << '\n';
  for (const Image& img : data.examples) {
    WriteLittleEndian<int32_t>(out, img.label);
    for (double p : img.pixels) WriteLittleEndian<double>(out, p);
  }
  if (!out) throw std::runtime_error("failed writing dataset");
}

Dataset ReadDataset(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("missing header");
  std::istringstream fields(header);
  std::string magic;
  Dataset data;
  size_t count = 0;
  fields >> magic >> data.shape.channels >> data.shape.height >>
      data.shape.width >> data.num_classes >> count;
  if (!fields || magic != kDatasetMagic) {
    throw std::runtime_error("malformed dataset header");
  }
  data.examples.reserve(count);
  for (size_t n = 0; n < count; ++n) {
    Image img;
    img.label = ReadLittleEndian<int32_t>(in);
    img.pixels.resize(data.shape.size());
    for (double& p : img.pixels) p = ReadLittleEndian<double>(in);
    data.examples.push_back(std::move(img));
  }
  data.Validate();
  return data;
}

void SaveDataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  WriteDataset(data, out);
}

Dataset LoadDataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return ReadDataset(in);
}

}  // namespace ipfl::data
