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

// Minimal multilayer-perceptron engine: forward pass, softmax cross-entropy,
// exact backpropagation and SGD with classical momentum. All arithmetic is in
// double precision.
//
// Parameter layout: for each layer l with fan_in inputs and fan_out outputs,
// the weight matrix is stored row-major as fan_out rows of fan_in entries,
// immediately followed by the fan_out biases. Layers are concatenated in
// order, so a layer occupies (fan_in + 1) * fan_out entries.

#ifndef IPFL_NN_H_
#define IPFL_NN_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ipfl::nn {

// Raised when a forward or backward pass produces a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { kRelu, kTanh };

std::string ActivationName(Activation activation);
Activation ParseActivation(const std::string& name);

struct ModelSpec {
  // Input dimension, hidden widths..., number of classes.
  std::vector<int> layer_dims;
  Activation activation = Activation::kRelu;

  int input_dim() const { return layer_dims.front(); }
  int num_classes() const { return layer_dims.back(); }
  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  size_t num_params() const;
  // Offset of layer l's weight block in the flat parameter vector.
  size_t layer_offset(int layer) const;

  // Throws std::invalid_argument on fewer than two dims or a zero dim.
  void Validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

class ParamVector {
 public:
  // Throws std::invalid_argument if the length does not match the spec and
  // NumericalError if any value is non-finite.
  ParamVector(ModelSpec spec, std::vector<double> values);

  static ParamVector Zeros(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  std::span<const double> values() const { return values_; }
  size_t size() const { return values_.size(); }
  double operator[](size_t i) const { return values_[i]; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  ModelSpec spec_;
  std::vector<double> values_;
};

// Gradient-shaped vector: same length and ordering as the ParamVector it
// differentiates. Also used for aggregated updates.
class GradVector {
 public:
  GradVector() = default;
  explicit GradVector(std::vector<double> values);
  static GradVector Zeros(size_t size) {
    return GradVector(std::vector<double>(size, 0.0));
  }

  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values() { return values_; }
  size_t size() const { return values_.size(); }
  double operator[](size_t i) const { return values_[i]; }

  GradVector& operator+=(const GradVector& other);
  GradVector& operator*=(double scale);

  friend bool operator==(const GradVector&, const GradVector&) = default;

 private:
  std::vector<double> values_;
};

GradVector operator+(GradVector a, const GradVector& b);
GradVector operator*(double scale, GradVector g);

struct MomentumState {
  std::vector<double> velocity;
  double coefficient = 0.0;

  // Zero velocity sized for `size` parameters. Throws if the coefficient is
  // outside [0, 1).
  static MomentumState Zeros(size_t size, double coefficient);
};

// A borrowed view over a set of labelled examples. The spans must outlive the
// batch.
struct Batch {
  std::vector<std::span<const double>> inputs;
  std::vector<int> labels;

  size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

struct LossAndGrad {
  double loss = 0.0;
  GradVector grad;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
ParamVector InitParams(const ModelSpec& spec, uint64_t seed);

std::vector<double> Forward(const ParamVector& params,
                            std::span<const double> input);

// Index of the largest logit; ties go to the lowest index.
int Argmax(std::span<const double> logits);

int Predict(const ParamVector& params, std::span<const double> input);

// Mean softmax cross-entropy over the batch and its exact gradient.
LossAndGrad ComputeLossAndGrad(const ParamVector& params, const Batch& batch);

// Classical momentum: v <- mu * v + g; theta <- theta - lr * v.
std::pair<ParamVector, MomentumState> SgdStep(const ParamVector& params,
                                              const GradVector& grad, double lr,
                                              const MomentumState& state);

EvalResult Evaluate(const ParamVector& params, const Batch& data);

}  // namespace ipfl::nn

#endif  // IPFL_NN_H_
