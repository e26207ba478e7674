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

#include "ipfl/cli.h"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include "ipfl/analysis.h"

namespace ipfl::cli {
namespace {

namespace fs = std::filesystem;
using protocol::AdversaryKind;
using protocol::ProtocolConfig;
using protocol::TamperMode;
using protocol::VictimSelection;

std::string Trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  if (Trim(s).empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(Trim(item));
  return out;
}

template <typename T>
T ParseNumber(const std::string& s) {
  T value{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw ConfigError("malformed number '" + s + "'");
  }
  return value;
}

bool ParseBool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("malformed boolean '" + s + "'");
}

std::vector<int> ParseIntList(const std::string& s) {
  std::vector<int> out;
  for (const std::string& item : SplitList(s)) out.push_back(ParseNumber<int>(item));
  return out;
}

// Empty means "not set".
std::optional<std::set<int>> ParseRoundSet(const std::string& s) {
  if (Trim(s).empty()) return std::nullopt;
  const std::vector<int> v = ParseIntList(s);
  return std::set<int>(v.begin(), v.end());
}

template <typename Range>
std::string JoinInts(const Range& values, char sep = ',') {
  std::string out;
  for (int v : values) {
    if (!out.empty()) out += sep;
    out += std::to_string(v);
  }
  return out;
}

std::string FormatRoundSet(const std::optional<std::set<int>>& s) {
  return s ? JoinInts(*s) : "";
}

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<AdversaryKind> kKinds[] = {
    {AdversaryKind::kHonest, "honest"},
    {AdversaryKind::kOmit, "omit"},
    {AdversaryKind::kTamper, "tamper"}};
constexpr EnumName<TamperMode> kTamperModes[] = {
    {TamperMode::kZero, "zero"},
    {TamperMode::kNoise, "noise"},
    {TamperMode::kScale, "scale"}};
constexpr EnumName<VictimSelection> kSelections[] = {
    {VictimSelection::kUniform, "uniform"},
    {VictimSelection::kForceVerifier, "force_verifier"},
    {VictimSelection::kExcludeVerifier, "exclude_verifier"}};

template <typename E, size_t N>
E ParseEnum(const EnumName<E> (&names)[N], const std::string& s) {
  for (const auto& e : names) {
    if (s == e.name) return e.value;
  }
  throw ConfigError("unknown value '" + s + "'");
}

template <typename E, size_t N>
std::string EnumToString(const EnumName<E> (&names)[N], E value) {
  for (const auto& e : names) {
    if (value == e.value) return e.name;
  }
  return "?";
}

struct Field {
  const char* key;
  std::function<void(ProtocolConfig&, const std::string&)> set;
  std::function<std::string(const ProtocolConfig&)> get;
};

#define IPFL_INT_FIELD(key, member)                                          \
  Field {                                                                    \
    key, [](ProtocolConfig& c, const std::string& v) {                       \
      c.member = ParseNumber<decltype(c.member)>(v);                         \
    },                                                                       \
        [](const ProtocolConfig& c) { return std::to_string(c.member); }     \
  }
#define IPFL_DOUBLE_FIELD(key, member)                                       \
  Field {                                                                    \
    key, [](ProtocolConfig& c, const std::string& v) {                       \
      c.member = ParseNumber<double>(v);                                     \
    },                                                                       \
        [](const ProtocolConfig& c) { return FormatDouble(c.member); }       \
  }
#define IPFL_BOOL_FIELD(key, member)                                         \
  Field {                                                                    \
    key, [](ProtocolConfig& c, const std::string& v) {                       \
      c.member = ParseBool(v);                                               \
    },                                                                       \
        [](const ProtocolConfig& c) {                                        \
          return std::string(c.member ? "true" : "false");                   \
        }                                                                    \
  }

const std::vector<Field>& Fields() {
  static const std::vector<Field> fields = {
      IPFL_INT_FIELD("n_clients", n_clients),
      IPFL_INT_FIELD("rounds", rounds),
      IPFL_DOUBLE_FIELD("lr", lr),
      IPFL_DOUBLE_FIELD("trigger_lr", trigger_lr),
      IPFL_DOUBLE_FIELD("boost", boost),
      IPFL_DOUBLE_FIELD("threshold", threshold),
      IPFL_INT_FIELD("batch_size", batch_size),
      IPFL_DOUBLE_FIELD("momentum", momentum),
      IPFL_INT_FIELD("local_epochs", local_epochs),
      IPFL_INT_FIELD("trigger_epochs", trigger_epochs),
      IPFL_INT_FIELD("finetune_epochs", finetune_epochs),
      IPFL_BOOL_FIELD("contrast_proof", contrast_proof),
      IPFL_INT_FIELD("seed", seed),
      IPFL_BOOL_FIELD("verification", verification),
      {"inject_rounds",
       [](ProtocolConfig& c, const std::string& v) {
         c.inject_rounds = ParseRoundSet(v);
       },
       [](const ProtocolConfig& c) { return FormatRoundSet(c.inject_rounds); }},
      IPFL_BOOL_FIELD("log_client_asr", log_client_asr),
      IPFL_INT_FIELD("warmup_rounds", warmup_rounds),
      {"model.layer_dims",
       [](ProtocolConfig& c, const std::string& v) {
         c.model.layer_dims = ParseIntList(v);
       },
       [](const ProtocolConfig& c) { return JoinInts(c.model.layer_dims); }},
      {"model.activation",
       [](ProtocolConfig& c, const std::string& v) {
         try {
           c.model.activation = nn::ParseActivation(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       },
       [](const ProtocolConfig& c) {
         return nn::ActivationName(c.model.activation);
       }},
      IPFL_INT_FIELD("data.num_classes", data.num_classes),
      {"data.shape",
       [](ProtocolConfig& c, const std::string& v) {
         const std::vector<int> dims = ParseIntList(v);
         if (dims.size() != 3) throw ConfigError("data.shape needs C,H,W");
         c.data.shape = {dims[0], dims[1], dims[2]};
       },
       [](const ProtocolConfig& c) {
         const data::Shape& s = c.data.shape;
         return JoinInts(std::vector<int>{s.channels, s.height, s.width});
       }},
      IPFL_INT_FIELD("data.train_examples", data.train_examples),
      IPFL_INT_FIELD("data.test_examples", data.test_examples),
      IPFL_DOUBLE_FIELD("data.noise", data.noise),
      IPFL_DOUBLE_FIELD("data.dirichlet_beta", data.dirichlet_beta),
      IPFL_DOUBLE_FIELD("data.trigger_fraction", data.trigger_fraction),
      {"adversary.kind",
       [](ProtocolConfig& c, const std::string& v) {
         c.adversary.kind = ParseEnum(kKinds, v);
       },
       [](const ProtocolConfig& c) {
         return EnumToString(kKinds, c.adversary.kind);
       }},
      IPFL_DOUBLE_FIELD("adversary.rho", adversary.rho),
      IPFL_DOUBLE_FIELD("adversary.epsilon", adversary.epsilon),
      {"adversary.attack_rounds",
       [](ProtocolConfig& c, const std::string& v) {
         c.adversary.attack_rounds = ParseRoundSet(v);
       },
       [](const ProtocolConfig& c) {
         return FormatRoundSet(c.adversary.attack_rounds);
       }},
      {"adversary.tamper_mode",
       [](ProtocolConfig& c, const std::string& v) {
         c.adversary.tamper_mode = ParseEnum(kTamperModes, v);
       },
       [](const ProtocolConfig& c) {
         return EnumToString(kTamperModes, c.adversary.tamper_mode);
       }},
      IPFL_DOUBLE_FIELD("adversary.tamper_magnitude", adversary.tamper_magnitude),
      {"adversary.victim_selection",
       [](ProtocolConfig& c, const std::string& v) {
         c.adversary.victim_selection = ParseEnum(kSelections, v);
       },
       [](const ProtocolConfig& c) {
         return EnumToString(kSelections, c.adversary.victim_selection);
       }},
  };
  return fields;
}

#undef IPFL_INT_FIELD
#undef IPFL_DOUBLE_FIELD
#undef IPFL_BOOL_FIELD

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string RoundsCsv(const std::vector<protocol::RoundRecord>& rounds) {
  std::string csv = "round,verifier_id,asr,verdict,clean_acc,omitted_ids\n";
  for (const auto& r : rounds) {
    csv += std::to_string(r.round) + ',' + std::to_string(r.verifier_id) + ',' +
           FormatDouble(r.asr) + ',' + protocol::VerdictName(r.verdict) + ',' +
           FormatDouble(r.clean_accuracy) + ',' + JoinInts(r.omitted_ids, ';') +
           '\n';
  }
  return csv;
}

std::string AsrMatrixCsv(const analysis::AsrMatrix& m, int rounds) {
  std::string csv = "client";
  for (int t = 0; t < rounds; ++t) csv += ',' + std::to_string(t);
  csv += '\n';
  for (int i = 0; i < m.num_clients(); ++i) {
    csv += std::to_string(i);
    for (double v : m.values[i]) csv += ',' + FormatDouble(v);
    csv += '\n';
  }
  return csv;
}

std::string SummaryCsv(const analysis::Summary& s) {
  int forgotten = 0;
  double forget_total = 0.0;
  for (const auto& f : s.rounds_to_forget) {
    if (f) {
      ++forgotten;
      forget_total += *f;
    }
  }
  std::string csv = "metric,value\n";
  const auto row = [&csv](const std::string& k, const std::string& v) {
    csv += k + ',' + v + '\n';
  };
  row("rounds", std::to_string(s.rounds));
  row("attacked_rounds", std::to_string(s.attacked_rounds));
  row("detected_rounds", std::to_string(s.detected_rounds));
  row("missed_rounds", std::to_string(s.missed_rounds));
  row("honest_rounds", std::to_string(s.honest_rounds));
  row("false_rejects", std::to_string(s.false_rejects));
  row("honest_accept_rate", FormatDouble(s.honest_accept_rate));
  row("final_clean_accuracy", FormatDouble(s.final_clean_accuracy));
  row("mean_finetuned_accuracy", FormatDouble(s.mean_finetuned_accuracy));
  row("nonverifier_high_fraction", FormatDouble(s.nonverifier_high_fraction));
  row("injections", std::to_string(s.rounds_to_forget.size()));
  row("forgotten", std::to_string(forgotten));
  row("mean_rounds_to_forget",
      forgotten > 0 ? FormatDouble(forget_total / forgotten) : "");
  return csv;
}

struct RunOutcome {
  int exit_code = kExitError;
  std::optional<analysis::Summary> summary;
};

RunOutcome RunToDir(const RunOptions& opts, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  std::string text;
  ProtocolConfig cfg;
  try {
    text = ReadFile(opts.config_path);
    cfg = ParseConfig(text);
    if (opts.seed) cfg.seed = *opts.seed;
    cfg.Validate();
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return {};
  }

  try {
    const protocol::TrainingResult result = protocol::RunTraining(cfg);
    const analysis::AsrMatrix matrix =
        cfg.log_client_asr ? analysis::BuildAsrMatrix({result.rounds})
                           : analysis::AsrMatrix{};
    const analysis::Summary summary = analysis::Summarize(result, cfg);
    bool rejected = false;
    for (const auto& r : result.rounds) {
      rejected |= r.verdict == protocol::Verdict::kReject;
    }
    const int code = rejected ? kExitDetection : kExitOk;

    const fs::path out(opts.out_dir);
    fs::create_directories(out);
    WriteFile(out / "rounds.csv", RoundsCsv(result.rounds));
    WriteFile(out / "asr_matrix.csv", AsrMatrixCsv(matrix, cfg.rounds));
    WriteFile(out / "summary.csv", SummaryCsv(summary));

    nlohmann::ordered_json manifest;
    nlohmann::ordered_json echo;
    for (const Field& f : Fields()) echo[f.key] = f.get(cfg);
    manifest["config"] = echo;
    manifest["config_path"] = opts.config_path;
    manifest["config_sha1"] = GitBlobSha1(text);
    manifest["seeds"] = {{"seed", cfg.seed},
                         {"overridden", opts.seed.has_value()}};
    manifest["outputs"] = {"rounds.csv", "asr_matrix.csv", "summary.csv"};
    manifest["exit_code"] = code;
    const std::chrono::duration<double> elapsed =
        std::chrono::steady_clock::now() - start;
    manifest["duration_seconds"] = elapsed.count();
    WriteFile(out / "manifest.json", manifest.dump(2) + '\n');
    return {code, summary};
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << '\n';
    return {};
  }
}

}  // namespace

std::string FormatDouble(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

ProtocolConfig ParseConfig(const std::string& text) {
  ProtocolConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const Field& f : Fields()) {
      if (key == f.key) field = &f;
    }
    if (!field) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) {
      throw ConfigError(where + "repeated key '" + key + "'");
    }
    try {
      field->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  return cfg;
}

ProtocolConfig LoadConfig(const std::string& path) {
  return ParseConfig(ReadFile(path));
}

std::string FormatConfig(const ProtocolConfig& cfg) {
  std::string out;
  for (const Field& f : Fields()) {
    out += std::string(f.key) + " = " + f.get(cfg) + '\n';
  }
  return out;
}

std::string OverrideKey(const std::string& text, const std::string& key,
                        const std::string& value) {
  std::istringstream in(text);
  std::string line, out;
  bool replaced = false;
  while (std::getline(in, line)) {
    std::string body = line.substr(0, line.find('#'));
    const auto eq = body.find('=');
    if (eq != std::string::npos && Trim(body.substr(0, eq)) == key) {
      line = key + " = " + value;
      replaced = true;
    }
    out += line + '\n';
  }
  if (!replaced) out += key + " = " + value + '\n';
  return out;
}

std::string GitBlobSha1(const std::string& content) {
  const std::string blob =
      "blob " + std::to_string(content.size()) + '\0' + content;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), digest);
  std::string hex;
  char byte[3];
  for (unsigned char d : digest) {
    std::snprintf(byte, sizeof(byte), "%02x", d);
    hex += byte;
  }
  return hex;
}

int CmdRun(const RunOptions& opts, std::ostream& err) {
  return RunToDir(opts, err).exit_code;
}

int CmdDetectProb(const DetectProbOptions& opts, std::ostream& out,
                  std::ostream& err) {
  try {
    const double analytic = analysis::AnalyticDetectionProb(opts.rho, opts.k);
    std::string row = FormatDouble(opts.rho) + ',' + std::to_string(opts.k) +
                      ',' + FormatDouble(analytic) + ',';
    if (opts.trials) {
      const analysis::DetectionReport r = analysis::MonteCarloDetection(
          opts.rho, opts.k, opts.n_clients, *opts.trials, opts.seed);
      row += std::to_string(opts.n_clients) + ',' + FormatDouble(r.rho) + ',' +
             FormatDouble(r.analytic_prob) + ',' +
             FormatDouble(*r.monte_carlo_prob) + ',' +
             FormatDouble(*r.std_error) + ',' + std::to_string(*r.trials);
    } else {
      row += ",,,,,";
    }
    out << "rho,k,analytic_prob,n_clients,effective_rho,"
           "effective_analytic_prob,monte_carlo_prob,std_error,trials\n"
        << row << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int CmdSweep(const SweepOptions& opts, std::ostream& err) {
  if (opts.values.empty()) {
    err << "sweep needs at least one value\n";
    return kExitError;
  }
  std::string base;
  try {
    base = ReadFile(opts.config_path);
    ParseConfig(OverrideKey(base, opts.param, opts.values.front()));
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitError;
  }

  const fs::path out(opts.out_dir);
  std::string csv =
      "param,value,exit_code,honest_accept_rate,attacked_rounds,"
      "detected_rounds,missed_rounds,final_clean_accuracy,"
      "mean_finetuned_accuracy,nonverifier_high_fraction\n";
  bool failed = false, detected = false;
  try {
    for (const std::string& value : opts.values) {
      std::string dir_name = opts.param + "=" + value;
      for (char& c : dir_name) {
        if (c == ',' || c == '/' || c == ' ') c = '_';
      }
      const fs::path sub = out / dir_name;
      fs::create_directories(sub);
      const fs::path sub_cfg = sub / "config.cfg";
      WriteFile(sub_cfg, OverrideKey(base, opts.param, value));
      const RunOutcome r = RunToDir({sub_cfg.string(), sub.string(), opts.seed}, err);
      failed |= r.exit_code == kExitError;
      detected |= r.exit_code == kExitDetection;
      csv += opts.param + ",\"" + value + "\"," + std::to_string(r.exit_code);
      if (r.summary) {
        const analysis::Summary& s = *r.summary;
        csv += ',' + FormatDouble(s.honest_accept_rate) + ',' +
               std::to_string(s.attacked_rounds) + ',' +
               std::to_string(s.detected_rounds) + ',' +
               std::to_string(s.missed_rounds) + ',' +
               FormatDouble(s.final_clean_accuracy) + ',' +
               FormatDouble(s.mean_finetuned_accuracy) + ',' +
               FormatDouble(s.nonverifier_high_fraction);
      } else {
        csv += ",,,,,,,";
      }
      csv += '\n';
    }
    WriteFile(out / "sweep.csv", csv);
  } catch (const std::exception& e) {
    err << "sweep failed: " << e.what() << '\n';
    return kExitError;
  }
  if (failed) return kExitError;
  return detected ? kExitDetection : kExitOk;
}

}  // namespace ipfl::cli
