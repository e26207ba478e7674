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

// Command implementations behind the `ipfl` binary, plus the flat key=value
// config format.
//
// Config files hold one `key = value` per line; `#` starts a comment. Lists
// are comma separated, e.g. `model.layer_dims = 192,64,10`. Every key is
// optional, unknown or repeated keys are errors. See FormatConfig for the full
// key list with defaults.

#ifndef IPFL_CLI_H_
#define IPFL_CLI_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipfl/protocol.h"

namespace ipfl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitDetection = 2;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parses config text on top of the defaults. Throws ConfigError on syntax
// errors, unknown or repeated keys and malformed values; semantic checks are
// left to ProtocolConfig::Validate.
protocol::ProtocolConfig ParseConfig(const std::string& text);
protocol::ProtocolConfig LoadConfig(const std::string& path);

// Every key with its value, one per line, in a fixed order. Parsing the result
// gives back an equal config.
std::string FormatConfig(const protocol::ProtocolConfig& cfg);

// Replaces or appends `key = value` in config text; used by sweeps.
std::string OverrideKey(const std::string& text, const std::string& key,
                        const std::string& value);

// SHA-1 of "blob <size>\0<content>", as printed by `git hash-object`.
std::string GitBlobSha1(const std::string& content);

struct RunOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;  // overrides the config's seed
};

// Writes rounds.csv, asr_matrix.csv, summary.csv and manifest.json into
// out_dir (created if missing). Returns kExitDetection if any round was
// rejected. Errors go to `err`.
int CmdRun(const RunOptions& opts, std::ostream& err);

struct DetectProbOptions {
  double rho = 0.0;
  int k = 0;
  std::optional<int> trials;  // adds a Monte Carlo estimate
  int n_clients = 10;
  uint64_t seed = 0;
};

// One CSV header and one row on `out`.
int CmdDetectProb(const DetectProbOptions& opts, std::ostream& out,
                  std::ostream& err);

struct SweepOptions {
  std::string config_path;
  std::string out_dir;
  std::string param;
  std::vector<std::string> values;
  std::optional<uint64_t> seed;
};

// One CmdRun per value into out_dir/<param>=<value>/ and an aggregated
// out_dir/sweep.csv. Returns kExitError if any sub-run failed, otherwise
// kExitDetection if any sub-run detected, otherwise kExitOk.
int CmdSweep(const SweepOptions& opts, std::ostream& err);

// Shortest round-trip decimal form; locale independent.
std::string FormatDouble(double value);

}  // namespace ipfl::cli

#endif  // IPFL_CLI_H_
