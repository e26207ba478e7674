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

// ipfl: run federated training with verifiable aggregation, compute detection
// probabilities and sweep config parameters.
//
//   ipfl run --config FILE --out DIR [--seed N]
//   ipfl detect-prob RHO K [--trials N] [--n CLIENTS] [--seed N]
//   ipfl sweep --config FILE --param KEY --values V1 V2 ... --out DIR [--seed N]
//
// Exit codes: 0 clean, 1 usage or config error, 2 a round was rejected.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ipfl/cli.h"

int main(int argc, char** argv) {
  CLI::App app{"Federated training with verifiable aggregation"};
  app.require_subcommand(1);

  ipfl::cli::RunOptions run;
  std::optional<uint64_t> run_seed;
  CLI::App* run_cmd = app.add_subcommand("run", "Run one training job");
  run_cmd->add_option("--config", run.config_path, "Config file")->required();
  run_cmd->add_option("--out", run.out_dir, "Output directory")->required();
  run_cmd->add_option("--seed", run_seed, "Override the config seed");

  ipfl::cli::DetectProbOptions detect;
  std::optional<int> trials;
  CLI::App* detect_cmd =
      app.add_subcommand("detect-prob", "Detection probability 1-(1-rho)^k");
  detect_cmd->add_option("rho", detect.rho, "Omitted fraction")->required();
  detect_cmd->add_option("k", detect.k, "Attacked rounds")->required();
  detect_cmd->add_option("--trials", trials, "Monte Carlo trials");
  detect_cmd->add_option("--n", detect.n_clients, "Clients (Monte Carlo)");
  detect_cmd->add_option("--seed", detect.seed, "Monte Carlo seed");

  ipfl::cli::SweepOptions sweep;
  std::optional<uint64_t> sweep_seed;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "One run per value");
  sweep_cmd->add_option("--config", sweep.config_path, "Config file")->required();
  sweep_cmd->add_option("--out", sweep.out_dir, "Output directory")->required();
  sweep_cmd->add_option("--param", sweep.param, "Config key")->required();
  sweep_cmd->add_option("--values", sweep.values, "Values")->required();
  sweep_cmd->add_option("--seed", sweep_seed, "Override the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ipfl::cli::kExitOk : ipfl::cli::kExitError;
  }

  if (*run_cmd) {
    run.seed = run_seed;
    return ipfl::cli::CmdRun(run, std::cerr);
  }
  if (*detect_cmd) {
    detect.trials = trials;
    return ipfl::cli::CmdDetectProb(detect, std::cout, std::cerr);
  }
  sweep.seed = sweep_seed;
  return ipfl::cli::CmdSweep(sweep, std::cerr);
}
