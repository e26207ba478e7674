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

#include "ipfl/nn.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ipfl/random.h"

namespace ipfl::nn {

namespace {

bool AllFinite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

double Activate(Activation activation, double z) {
  return activation == Activation::kRelu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// Derivative expressed through the pre-activation z and activation a.
double ActivateDerivative(Activation activation, double z, double a) {
  return activation == Activation::kRelu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}

// Per-layer pre-activations and activations of one forward pass.
// activations[0] is the input; activations[L] are the logits.
struct Trace {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> activations;
};

void CheckInput(const ModelSpec& spec, std::span<const double> input) {
  if (static_cast<int>(input.size()) != spec.input_dim()) {
    throw std::invalid_argument("input has dimension " +
                                std::to_string(input.size()) + ", model expects " +
                                std::to_string(spec.input_dim()));
  }
}

Trace RunForward(const ParamVector& params, std::span<const double> input) {
  const ModelSpec& spec = params.spec();
  CheckInput(spec, input);
  const std::span<const double> theta = params.values();
  const int num_layers = spec.num_layers();

  Trace trace;
  trace.pre.resize(num_layers + 1);
  trace.activations.resize(num_layers + 1);
  trace.activations[0].assign(input.begin(), input.end());

  size_t offset = 0;
  for (int l = 0; l < num_layers; ++l) {
    const int fan_in = spec.layer_dims[l];
    const int fan_out = spec.layer_dims[l + 1];
    const double* weights = theta.data() + offset;
    const double* bias = weights + static_cast<size_t>(fan_in) * fan_out;
    const std::vector<double>& prev = trace.activations[l];

    std::vector<double>& z = trace.pre[l + 1];
    z.resize(fan_out);
    for (int o = 0; o < fan_out; ++o) {
      const double* row = weights + static_cast<size_t>(o) * fan_in;
      double acc = bias[o];
      for (int i = 0; i < fan_in; ++i) acc += row[i] * prev[i];
      z[o] = acc;
    }
    std::vector<double>& a = trace.activations[l + 1];
    if (l + 1 == num_layers) {
      a = z;
    } else {
      a.resize(fan_out);
      for (int o = 0; o < fan_out; ++o) a[o] = Activate(spec.activation, z[o]);
    }
    offset += static_cast<size_t>(fan_in + 1) * fan_out;
  }
  return trace;
}

}  // namespace

std::string ActivationName(Activation activation) {
  return activation == Activation::kRelu ? "relu" : "tanh";
}

Activation ParseActivation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation: " + name);
}

size_t ModelSpec::num_params() const {
  size_t total = 0;
  for (int l = 0; l + 1 < static_cast<int>(layer_dims.size()); ++l) {
    total += static_cast<size_t>(layer_dims[l] + 1) * layer_dims[l + 1];
  }
  return total;
}

size_t ModelSpec::layer_offset(int layer) const {
  size_t offset = 0;
  for (int l = 0; l < layer; ++l) {
    offset += static_cast<size_t>(layer_dims[l] + 1) * layer_dims[l + 1];
  }
  return offset;
}

void ModelSpec::Validate() const {
  if (layer_dims.size() < 2) {
    throw std::invalid_argument("model spec needs at least two layer dims");
  }
  for (int d : layer_dims) {
    if (d <= 0) throw std::invalid_argument("layer dims must be positive");
  }
}

ParamVector::ParamVector(ModelSpec spec, std::vector<double> values)
    : spec_(std::move(spec)), values_(std::move(values)) {
  spec_.Validate();
  if (values_.size() != spec_.num_params()) {
    throw std::invalid_argument(
        "parameter vector has " + std::to_string(values_.size()) +
        " entries, spec requires " + std::to_string(spec_.num_params()));
  }
  if (!AllFinite(values_)) {
    throw NumericalError("parameter vector contains non-finite values");
  }
}

ParamVector ParamVector::Zeros(const ModelSpec& spec) {
  spec.Validate();
  return ParamVector(spec, std::vector<double>(spec.num_params(), 0.0));
}

GradVector::GradVector(std::vector<double> values) : values_(std::move(values)) {
  if (!AllFinite(values_)) {
    throw NumericalError("gradient contains non-finite values");
  }
}

GradVector& GradVector::operator+=(const GradVector& other) {
  if (other.size() != size()) {
    throw std::invalid_argument("gradient length mismatch");
  }
  for (size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

GradVector& GradVector::operator*=(double scale) {
  for (double& v : values_) v *= scale;
  return *this;
}

GradVector operator+(GradVector a, const GradVector& b) { return a += b; }
GradVector operator*(double scale, GradVector g) { return g *= scale; }

MomentumState MomentumState::Zeros(size_t size, double coefficient) {
  if (!(coefficient >= 0.0 && coefficient < 1.0)) {
    throw std::invalid_argument("momentum coefficient must lie in [0, 1)");
  }
  return MomentumState{std::vector<double>(size, 0.0), coefficient};
}

ParamVector InitParams(const ModelSpec& spec, uint64_t seed) {
  spec.Validate();
  Rng rng = MakeRng(seed);
  std::vector<double> values(spec.num_params(), 0.0);
  size_t offset = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_dims[l];
    const int fan_out = spec.layer_dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const size_t num_weights = static_cast<size_t>(fan_in) * fan_out;
    for (size_t i = 0; i < num_weights; ++i) values[offset + i] = dist(rng);
    offset += num_weights + fan_out;  // biases stay zero
  }
  return ParamVector(spec, std::move(values));
}

std::vector<double> Forward(const ParamVector& params,
                            std::span<const double> input) {
  std::vector<double> logits =
      std::move(RunForward(params, input).activations.back());
  if (!AllFinite(logits)) throw NumericalError("non-finite logits");
  return logits;
}

int Argmax(std::span<const double> logits) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(logits.size()); ++c) {
    if (logits[c] > logits[best]) best = c;
  }
  return best;
}

int Predict(const ParamVector& params, std::span<const double> input) {
  return Argmax(Forward(params, input));
}

LossAndGrad ComputeLossAndGrad(const ParamVector& params, const Batch& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (batch.inputs.size() != batch.labels.size()) {
    throw std::invalid_argument("batch inputs and labels differ in length");
  }
  const ModelSpec& spec = params.spec();
  const int num_layers = spec.num_layers();
  const int num_classes = spec.num_classes();
  const std::span<const double> theta = params.values();

  std::vector<double> grad(theta.size(), 0.0);
  double loss_sum = 0.0;
  std::vector<double> delta;
  std::vector<double> prev_delta;

  for (size_t n = 0; n < batch.size(); ++n) {
    const int label = batch.labels[n];
    if (label < 0 || label >= num_classes) {
      throw std::invalid_argument("label out of range");
    }
    const Trace trace = RunForward(params, batch.inputs[n]);
    const std::vector<double>& logits = trace.activations.back();

    // Stable log-softmax.
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double sum_exp = 0.0;
    for (double z : logits) sum_exp += std::exp(z - max_logit);
    const double log_norm = max_logit + std::log(sum_exp);
    const double example_loss = log_norm - logits[label];
    if (!std::isfinite(example_loss)) {
      throw NumericalError("non-finite loss");
    }
    loss_sum += example_loss;

    delta.resize(num_classes);
    for (int c = 0; c < num_classes; ++c) {
      delta[c] = std::exp(logits[c] - log_norm) - (c == label ? 1.0 : 0.0);
    }

    for (int l = num_layers - 1; l >= 0; --l) {
      const int fan_in = spec.layer_dims[l];
      const int fan_out = spec.layer_dims[l + 1];
      const size_t offset = spec.layer_offset(l);
      const std::vector<double>& input = trace.activations[l];
      double* grad_w = grad.data() + offset;
      double* grad_b = grad_w + static_cast<size_t>(fan_in) * fan_out;
      for (int o = 0; o < fan_out; ++o) {
        const double d = delta[o];
        double* row = grad_w + static_cast<size_t>(o) * fan_in;
        for (int i = 0; i < fan_in; ++i) row[i] += d * input[i];
        grad_b[o] += d;
      }
      if (l == 0) break;
      const double* weights = theta.data() + offset;
      prev_delta.assign(fan_in, 0.0);
      for (int o = 0; o < fan_out; ++o) {
        const double d = delta[o];
        const double* row = weights + static_cast<size_t>(o) * fan_in;
        for (int i = 0; i < fan_in; ++i) prev_delta[i] += row[i] * d;
      }
      for (int i = 0; i < fan_in; ++i) {
        prev_delta[i] *= ActivateDerivative(spec.activation, trace.pre[l][i],
                                            trace.activations[l][i]);
      }
      delta.swap(prev_delta);
    }
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv;
  if (!AllFinite(grad)) throw NumericalError("non-finite gradient");
  return LossAndGrad{loss_sum * inv, GradVector(std::move(grad))};
}

std::pair<ParamVector, MomentumState> SgdStep(const ParamVector& params,
                                              const GradVector& grad, double lr,
                                              const MomentumState& state) {
  if (grad.size() != params.size() || state.velocity.size() != params.size()) {
    throw std::invalid_argument("SGD step length mismatch");
  }
  if (lr < 0.0) throw std::invalid_argument("learning rate must be >= 0");
  MomentumState next{std::vector<double>(params.size()), state.coefficient};
  std::vector<double> theta(params.values().begin(), params.values().end());
  const std::span<const double> g = grad.values();
  for (size_t i = 0; i < theta.size(); ++i) {
    next.velocity[i] = state.coefficient * state.velocity[i] + g[i];
    theta[i] -= lr * next.velocity[i];
  }
  return {ParamVector(params.spec(), std::move(theta)), std::move(next)};
}

EvalResult Evaluate(const ParamVector& params, const Batch& data) {
  if (data.empty()) throw std::invalid_argument("empty evaluation set");
  size_t correct = 0;
  double loss_sum = 0.0;
  for (size_t n = 0; n < data.size(); ++n) {
    if (data.labels[n] < 0 || data.labels[n] >= params.spec().num_classes()) {
      throw std::invalid_argument("label out of range");
    }
    const std::vector<double> logits = Forward(params, data.inputs[n]);
    if (Argmax(logits) == data.labels[n]) ++correct;
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double sum_exp = 0.0;
    for (double z : logits) sum_exp += std::exp(z - max_logit);
    loss_sum += max_logit + std::log(sum_exp) - logits[data.labels[n]];
  }
  const double count = static_cast<double>(data.size());
  return EvalResult{static_cast<double>(correct) / count, loss_sum / count};
}

}  // namespace ipfl::nn
