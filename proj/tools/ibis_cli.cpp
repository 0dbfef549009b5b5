/*
 * Copyright 2026 The IBIS Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// ibis: command-line front end for the Doppler activity pipeline.
//
// Exit codes: 0 success, 2 configuration, 3 I/O, 4 missing upstream
// artifact, 1 anything else.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ibis/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitMissing = 4;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Expands `--config FILE` into flags. Lines are `key = value`; '#' starts a
// comment. Flags given on the command line win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> file;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ibis::ConfigError("--config needs a file");
      file = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!file) return rest;
  std::ifstream in(*file);
  if (!in) throw ibis::IoError("cannot read config file " + *file);
  std::vector<std::string> extra;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ibis::ConfigError(*file + ":" + std::to_string(number) +
                              ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : rest) {
      given = given || a == flag || a.rfind(flag + "=", 0) == 0;
    }
    if (!given) {
      extra.push_back(flag);
      extra.push_back(value);
    }
  }
  rest.insert(rest.end(), extra.begin(), extra.end());
  return rest;
}

std::uint64_t env_seed(std::uint64_t fallback) {
  if (const char* s = std::getenv("IBIS_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ibis::ConfigError(std::string("IBIS_SEED is not an integer: ") + s);
    }
  }
  return fallback;
}

ibis::SplitRatios parse_ratios(const std::vector<double>& r) {
  if (r.size() != 3) throw ibis::ConfigError("--split needs three ratios");
  return {r[0], r[1], r[2]};
}

}  // namespace

int main(int argc, char** argv) {
  using namespace ibis;
  CLI::App app{"Doppler activity recognition: Inception + BiLSTM + attention "
               "network with an RBF-SVM post-classifier and antenna voting"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  std::optional<std::uint64_t> seed_flag;
  std::vector<double> split = {0.8, 0.1, 0.1};
  auto add_seed = [&](CLI::App* cmd, const char* what) {
    cmd->add_option("--seed", seed_flag, what);
  };
  std::string config_file;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_file,
                    "File of key = value lines; command-line flags win");
  };
  auto add_split = [&](CLI::App* cmd) {
    cmd->add_option("--split", split, "train/validation/test ratios")
        ->expected(3)
        ->capture_default_str();
    add_config(cmd);
  };

  // synth
  SynthConfig synth;
  std::string out_path;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  cmd_synth->add_option("--classes", synth.classes, "Class count (5 or 8)")
      ->capture_default_str();
  cmd_synth->add_option("--per-class", synth.windows_per_class,
                        "Windows per class per antenna")
      ->capture_default_str();
  cmd_synth->add_option("--noise", synth.noise, "Additive noise amplitude")
      ->capture_default_str();
  cmd_synth->add_option("--antennas", synth.antennas, "Receiving antennas")
      ->capture_default_str();
  cmd_synth->add_option("--out", out_path, "Output dataset file")->required();
  add_seed(cmd_synth, "Generation and split seed (default 7, or IBIS_SEED)");
  add_split(cmd_synth);

  // train
  std::string data_path, models_dir;
  std::string arch_name = "ibis";
  TrainConfig tc;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  auto* cmd_train = app.add_subcommand("train", "Train one network per antenna");
  cmd_train->add_option("--data", data_path, "Dataset file")->required();
  cmd_train->add_option("--models", models_dir, "Model directory")->required();
  cmd_train->add_option("--arch", arch_name, "ibis or inception")
      ->capture_default_str();
  cmd_train->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();
  cmd_train->add_option("--batch", tc.batch_size, "Batch size")->capture_default_str();
  cmd_train->add_option("--lr", tc.learning_rate, "Adam learning rate")
      ->capture_default_str();
  cmd_train->add_option("--jobs", jobs, "Concurrent antenna jobs")->capture_default_str();
  add_seed(cmd_train, "Training seed (default 0, or IBIS_SEED)");
  add_split(cmd_train);

  // svm-fit
  SvmConfig svm;
  std::string gamma = "scale", weighting = "balanced";
  auto* cmd_svm = app.add_subcommand("svm-fit", "Fit the SVM post-classifier per antenna");
  cmd_svm->add_option("--data", data_path, "Dataset file")->required();
  cmd_svm->add_option("--models", models_dir, "Model directory")->required();
  cmd_svm->add_option("--c", svm.c, "Penalty parameter C")->capture_default_str();
  cmd_svm->add_option("--gamma", gamma, "RBF width: scale or a positive number")
      ->capture_default_str();
  cmd_svm->add_option("--weighting", weighting, "balanced or none")
      ->capture_default_str();
  cmd_svm->add_option("--tolerance", svm.tolerance, "KKT tolerance")
      ->capture_default_str();
  cmd_svm->add_option("--max-passes", svm.max_passes, "Pair-update cap")
      ->capture_default_str();
  cmd_svm->add_option("--jobs", jobs, "Concurrent antenna jobs")->capture_default_str();
  add_seed(cmd_svm, "Split seed for datasets without a split table");
  add_split(cmd_svm);

  // eval
  std::string out_dir;
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate the test split");
  cmd_eval->add_option("--data", data_path, "Dataset file")->required();
  cmd_eval->add_option("--models", models_dir, "Model directory")->required();
  cmd_eval->add_option("--out", out_dir, "Report directory")->required();
  add_seed(cmd_eval, "Split seed for datasets without a split table");
  add_split(cmd_eval);

  // region-plot
  std::size_t antenna = 0;
  int resolution = 100;
  auto* cmd_region = app.add_subcommand("region-plot", "Export SVM decision regions");
  cmd_region->add_option("--data", data_path, "Dataset file")->required();
  cmd_region->add_option("--models", models_dir, "Model directory")->required();
  cmd_region->add_option("--out", out_dir, "Output directory")->required();
  cmd_region->add_option("--antenna", antenna, "Antenna index")->capture_default_str();
  cmd_region->add_option("--resolution", resolution, "Grid cells per axis")
      ->capture_default_str();
  add_seed(cmd_region, "Split seed for datasets without a split table");
  add_split(cmd_region);

  // arch-check
  std::size_t classes = 5;
  auto* cmd_arch = app.add_subcommand("arch-check", "Compare the layer table");
  cmd_arch->add_option("--classes", classes, "Class count (5 or 8)")
      ->capture_default_str();
  cmd_arch->add_option("--arch", arch_name, "ibis or inception")->capture_default_str();
  add_config(cmd_arch);

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);  // CLI11 order
  try {
    std::vector<std::string> forward(args.rbegin(), args.rend());
    forward = expand_config(forward);
    args.assign(forward.rbegin(), forward.rend());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    const SplitRatios ratios = parse_ratios(split);
    if (cmd_synth->parsed()) {
      synth.seed = seed_flag.value_or(env_seed(7));
      synth_command(synth, ratios, out_path, std::cout);
    } else if (cmd_train->parsed()) {
      TrainOptions options;
      options.architecture = parse_architecture(arch_name);
      tc.seed = seed_flag.value_or(env_seed(0));
      tc.ratios = ratios;
      options.train = tc;
      options.jobs = jobs;
      train_command(data_path, models_dir, options, std::cout);
    } else if (cmd_svm->parsed()) {
      if (gamma != "scale") {
        try {
          svm.gamma = std::stod(gamma);
        } catch (const std::exception&) {
          throw ConfigError("--gamma must be 'scale' or a number, got " + gamma);
        }
      }
      if (weighting != "balanced" && weighting != "none") {
        throw ConfigError("--weighting must be balanced or none");
      }
      svm.balanced = weighting == "balanced";
      svm_fit_command(data_path, models_dir, svm, ratios,
                      seed_flag.value_or(env_seed(0)), jobs, std::cout);
    } else if (cmd_eval->parsed()) {
      eval_command(data_path, models_dir, out_dir, ratios,
                   seed_flag.value_or(env_seed(0)), std::cout);
    } else if (cmd_region->parsed()) {
      region_plot_command(data_path, models_dir, out_dir, antenna, resolution, ratios,
                          seed_flag.value_or(env_seed(0)), std::cout);
    } else if (cmd_arch->parsed()) {
      return arch_check_command(parse_architecture(arch_name), classes, std::cout)
                 ? 0
                 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const StratificationError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissing;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
