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

// Synthetic Doppler windows, stratified splitting, and the IBDS container.
//
// A window is 32 time steps x 32 Doppler bins x 3 channels, stored
// time-major as float32. Bin 16 is zero Doppler. Every activity "event" is
// observed by several antennas; the antennas see the same latent motion with
// their own gain, channel perturbation and noise.
//
// IBDS layout (all integers little-endian):
//   "IBDS" | u32 version | u32 class_count | u32 window_count | u64 seed
//   class_count x (u16 len, bytes)          class names
//   u16 scenario_count, each (u16 len, bytes)
//   window_count x record:
//       u32 event | u16 label | u8 antenna | u8 scenario | 3072 x f32 values
//   window_count x u8                         split (0 train, 1 val, 2 test,
//                                             3 unassigned)

#ifndef IBIS_SYNTH_HPP_
#define IBIS_SYNTH_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ibis/binary_io.hpp"
#include "ibis/errors.hpp"

namespace ibis {

inline constexpr std::size_t kWindowTime = 32;
inline constexpr std::size_t kWindowBins = 32;
inline constexpr std::size_t kWindowChannels = 3;
inline constexpr std::size_t kWindowVolume =
    kWindowTime * kWindowBins * kWindowChannels;
inline constexpr std::size_t kZeroDopplerBin = 16;
inline constexpr std::size_t kAntennas = 4;

enum class Split : std::uint8_t {
  kTrain = 0,
  kValidation = 1,
  kTest = 2,
  kUnassigned = 3
};

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "?";
}

struct DopplerWindow {
  std::vector<float> values;  // [time][bin][channel]
  std::uint16_t label = 0;
  std::uint8_t antenna = 0;
  std::uint32_t event = 0;  // shared by the antennas observing one activity
  std::string scenario;

  float at(std::size_t t, std::size_t bin, std::size_t ch) const {
    return values[(t * kWindowBins + bin) * kWindowChannels + ch];
  }

  bool operator==(const DopplerWindow&) const = default;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<DopplerWindow> windows;
  std::vector<Split> splits;  // parallel to windows
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return class_names.size(); }

  // Indices of the windows of one antenna in one split, in storage order.
  std::vector<std::size_t> select(std::uint8_t antenna, Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      if (windows[i].antenna == antenna && splits[i] == split) out.push_back(i);
    }
    return out;
  }

  std::size_t antenna_count() const {
    std::size_t n = 0;
    for (const auto& w : windows) n = std::max<std::size_t>(n, w.antenna + 1u);
    return n;
  }

  bool operator==(const Dataset&) const = default;
};

inline std::vector<std::string> class_names_for(std::size_t classes) {
  std::vector<std::string> names{"empty", "sitting", "walking", "running",
                                 "jumping"};
  if (classes == 8) {
    names.insert(names.end(), {"standing", "stand_up", "arm_gym"});
  } else if (classes != 5) {
    throw ConfigError("class count must be one of {5, 8}, got " +
                      std::to_string(classes));
  }
  return names;
}

struct SynthConfig {
  std::size_t classes = 5;
  std::size_t windows_per_class = 100;  // per antenna
  double noise = 0.35;
  std::uint64_t seed = 7;
  std::size_t antennas = kAntennas;
  std::string scenario = "synthetic";

  void validate() const {
    class_names_for(classes);
    if (windows_per_class < 1) {
      throw ConfigError("windows per class must be at least 1");
    }
    if (!(noise >= 0) || !std::isfinite(noise)) {
      throw ConfigError("noise amplitude must be finite and non-negative");
    }
    if (antennas < 1 || antennas > 255) {
      throw ConfigError("antenna count must lie in [1, 255]");
    }
  }
};

namespace detail {

// Latent motion parameters shared by every antenna observing one event.
struct EventLatent {
  double phase;     // periodic pattern phase
  double period;    // time steps per cycle
  double excursion; // ridge swing in bins
  double width;     // ridge half-width in bins
  double onset;     // transient / sweep start time
  double direction; // +1 or -1 Doppler sign
  double strength;
};

inline double gauss(double x, double sigma) {
  return std::exp(-0.5 * x * x / (sigma * sigma));
}

// Noise-free spectral template value at (time, bin).
inline double template_value(std::size_t label, const EventLatent& e,
                             double t, double bin, double time_shift) {
  const double f = bin - static_cast<double>(kZeroDopplerBin);
  const double tt = t + time_shift;
  const double two_pi = 2 * std::numbers::pi;
  switch (label) {
    case 0:  // empty: static reflection only
      return bin == static_cast<double>(kZeroDopplerBin) ? 1.0 : 0.0;
    case 1: {  // sitting: one brief low-band transient
      const double envelope = gauss(tt - e.onset, 2.0);
      return 0.35 * gauss(f, 0.7) +
             e.strength * envelope * gauss(f - e.direction * 3.0, 1.5);
    }
    case 2: {  // walking: mid-band periodic ridge
      const double centre = e.excursion * std::sin(two_pi * tt / e.period + e.phase);
      return 0.25 * gauss(f, 0.7) + e.strength * gauss(f - centre, e.width);
    }
    case 3: {  // running: faster, wider ridge
      const double centre = e.excursion * std::sin(two_pi * tt / e.period + e.phase);
      return 0.25 * gauss(f, 0.7) + e.strength * gauss(f - centre, e.width);
    }
    case 4: {  // jumping: broadband bursts
      const double cycle = std::fmod(tt + e.phase * e.period / two_pi, e.period);
      const double burst = gauss(cycle - 1.5, 0.9);
      return 0.25 * gauss(f, 0.7) +
             e.strength * burst * (0.35 + 0.65 * gauss(f, 9.0));
    }
    case 5:  // standing: static spread around zero Doppler
      return e.strength * gauss(f, e.width);
    case 6: {  // stand up: one-way sweep
      const double progress = std::clamp((tt - e.onset) / 18.0, 0.0, 1.0);
      const double active = gauss(tt - e.onset - 9.0, 7.0);
      return 0.25 * gauss(f, 0.7) +
             e.strength * active * gauss(f - e.direction * 8.0 * progress, 1.4);
    }
    case 7: {  // arm gym: symmetric oscillating pair of lines
      const double swing =
          4.0 * std::fabs(std::sin(two_pi * tt / e.period + e.phase));
      return 0.25 * gauss(f, 0.7) +
             0.5 * e.strength * (gauss(f - swing, 1.0) + gauss(f + swing, 1.0));
    }
    default:
      throw ConfigError("no template for class " + std::to_string(label));
  }
}

inline EventLatent draw_latent(std::size_t label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  EventLatent e{};
  e.phase = between(0, 2 * std::numbers::pi);
  e.direction = unit(rng) < 0.5 ? -1.0 : 1.0;
  e.onset = between(6, 24);
  e.strength = between(0.8, 1.1);
  switch (label) {
    case 2:
      e.period = between(13, 18);
      e.excursion = between(4.5, 7.5);
      e.width = between(1.3, 1.9);
      break;
    case 3:
      e.period = between(8, 11.5);
      e.excursion = between(6.5, 10.0);
      e.width = between(1.8, 2.6);
      break;
    case 4:
      e.period = between(9, 13);
      break;
    case 5:
      e.width = between(1.6, 2.4);
      break;
    case 6:
      e.onset = between(2, 12);
      break;
    case 7:
      e.period = between(10, 14);
      break;
    default:
      break;
  }
  return e;
}

}  // namespace detail

// Deterministic in config.seed. Windows are emitted event by event, each
// event followed by its antenna views in antenna order.
inline Dataset generate_synthetic_dataset(const SynthConfig& config) {
  config.validate();
  Dataset ds;
  ds.class_names = class_names_for(config.classes);
  ds.seed = config.seed;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::uint32_t event = 0;
  for (std::size_t label = 0; label < config.classes; ++label) {
    for (std::size_t n = 0; n < config.windows_per_class; ++n, ++event) {
      const detail::EventLatent latent = detail::draw_latent(label, rng);
      for (std::size_t a = 0; a < config.antennas; ++a) {
        const double gain = 0.75 + 0.5 * unit(rng);
        std::array<double, kWindowChannels> channel_gain{};
        std::array<double, kWindowChannels> channel_shift{};
        for (std::size_t c = 0; c < kWindowChannels; ++c) {
          channel_gain[c] = 1.0 + 0.1 * normal(rng);
          channel_shift[c] = 0.6 * normal(rng);
        }
        DopplerWindow w;
        w.label = static_cast<std::uint16_t>(label);
        w.antenna = static_cast<std::uint8_t>(a);
        w.event = event;
        w.scenario = config.scenario;
        w.values.resize(kWindowVolume);
        for (std::size_t t = 0; t < kWindowTime; ++t) {
          for (std::size_t bin = 0; bin < kWindowBins; ++bin) {
            for (std::size_t c = 0; c < kWindowChannels; ++c) {
              const double clean = detail::template_value(
                  label, latent, static_cast<double>(t),
                  static_cast<double>(bin), channel_shift[c]);
              const double v =
                  gain * channel_gain[c] * clean + config.noise * normal(rng);
              w.values[(t * kWindowBins + bin) * kWindowChannels + c] =
                  static_cast<float>(v);
            }
          }
        }
        ds.windows.push_back(std::move(w));
      }
    }
  }
  ds.splits.assign(ds.windows.size(), Split::kUnassigned);
  return ds;
}

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Stratified by class at the event level: all antenna views of one event land
// in the same split. Per-class split sizes follow the ratios with
// largest-remainder rounding.
inline std::vector<Split> split_dataset(const Dataset& ds, SplitRatios ratios,
                                        std::uint64_t seed) {
  const double parts[3] = {ratios.train, ratios.validation, ratios.test};
  for (double p : parts) {
    if (!(p >= 0)) throw ConfigError("split ratios must be non-negative");
  }
  if (std::fabs(parts[0] + parts[1] + parts[2] - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  std::map<std::uint16_t, std::vector<std::uint32_t>> events_by_class;
  std::map<std::uint32_t, std::uint16_t> event_label;
  for (const auto& w : ds.windows) {
    auto [it, inserted] = event_label.emplace(w.event, w.label);
    if (inserted) {
      events_by_class[w.label].push_back(w.event);
    } else if (it->second != w.label) {
      throw InputError("event " + std::to_string(w.event) +
                       " carries more than one label");
    }
  }
  std::mt19937_64 rng(seed);
  std::map<std::uint32_t, Split> assignment;
  for (auto& [label, events] : events_by_class) {
    const std::size_t n = events.size();
    if (n < 3) {
      throw StratificationError("class " + std::to_string(label) + " has only " +
                                std::to_string(n) +
                                " windows; stratified splitting needs 3");
    }
    std::shuffle(events.begin(), events.end(), rng);
    std::size_t counts[3];
    double remainders[3];
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double exact = parts[s] * static_cast<double>(n);
      counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      remainders[s] = exact - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    while (assigned < n) {
      int best = 0;
      for (int s = 1; s < 3; ++s) {
        if (remainders[s] > remainders[best]) best = s;
      }
      ++counts[best];
      remainders[best] = -1;
      ++assigned;
    }
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < counts[s]; ++k, ++pos) {
        assignment[events[pos]] = static_cast<Split>(s);
      }
    }
  }
  std::vector<Split> out(ds.windows.size());
  for (std::size_t i = 0; i < ds.windows.size(); ++i) {
    out[i] = assignment.at(ds.windows[i].event);
  }
  return out;
}

// ---------------------------------------------------------------------------
// IBDS container.

inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr std::size_t kDatasetRecordHeaderBytes = 8;

inline std::vector<std::string> scenario_table(const Dataset& ds) {
  std::vector<std::string> table;
  for (const auto& w : ds.windows) {
    if (std::find(table.begin(), table.end(), w.scenario) == table.end()) {
      table.push_back(w.scenario);
    }
  }
  return table;
}

// Bytes preceding the first window record.
inline std::size_t dataset_header_bytes(const Dataset& ds) {
  std::size_t n = 4 + 4 + 4 + 4 + 8 + 2;
  for (const auto& name : ds.class_names) n += 2 + name.size();
  for (const auto& s : scenario_table(ds)) n += 2 + s.size();
  return n;
}

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  if (ds.splits.size() != ds.windows.size()) {
    throw InputError("split table does not cover every window");
  }
  const auto scenarios = scenario_table(ds);
  if (scenarios.size() > 255) throw InputError("too many scenario tags");
  io::ByteWriter w;
  w.magic("IBDS");
  w.u32(kDatasetFormatVersion);
  w.u32(static_cast<std::uint32_t>(ds.class_names.size()));
  w.u32(static_cast<std::uint32_t>(ds.windows.size()));
  w.u64(ds.seed);
  for (const auto& name : ds.class_names) w.short_string(name);
  w.u16(static_cast<std::uint16_t>(scenarios.size()));
  for (const auto& s : scenarios) w.short_string(s);
  for (const auto& win : ds.windows) {
    if (win.values.size() != kWindowVolume) {
      throw InputError("window does not hold 32x32x3 values");
    }
    w.u32(win.event);
    w.u16(win.label);
    w.u8(win.antenna);
    const auto idx = std::find(scenarios.begin(), scenarios.end(), win.scenario) -
                     scenarios.begin();
    w.u8(static_cast<std::uint8_t>(idx));
    for (float v : win.values) w.f32(v);
  }
  for (Split s : ds.splits) w.u8(static_cast<std::uint8_t>(s));
  return w.buffer();
}

inline Dataset decode_dataset(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic("IBDS");
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetFormatVersion) {
    r.fail("unsupported IBDS version " + std::to_string(version));
  }
  Dataset ds;
  const std::uint32_t classes = r.u32("class count");
  const std::uint32_t count = r.u32("window count");
  ds.seed = r.u64("seed");
  for (std::uint32_t c = 0; c < classes; ++c) {
    ds.class_names.push_back(r.short_string("class name"));
  }
  const std::uint16_t n_scen = r.u16("scenario count");
  std::vector<std::string> scenarios;
  for (std::uint16_t s = 0; s < n_scen; ++s) {
    scenarios.push_back(r.short_string("scenario"));
  }
  const std::size_t record = kDatasetRecordHeaderBytes + 4 * kWindowVolume;
  if (r.remaining() < static_cast<std::size_t>(count) * (record + 1)) {
    r.fail("truncated payload: " + std::to_string(count) +
           " windows declared but only " + std::to_string(r.remaining()) +
           " bytes remain");
  }
  ds.windows.resize(count);
  for (auto& win : ds.windows) {
    win.event = r.u32("event");
    win.label = r.u16("label");
    if (win.label >= classes) r.fail("label out of range");
    win.antenna = r.u8("antenna");
    const std::uint8_t scen = r.u8("scenario index");
    if (scen >= scenarios.size()) r.fail("scenario index out of range");
    win.scenario = scenarios[scen];
    win.values.resize(kWindowVolume);
    for (float& v : win.values) v = r.f32("window values");
  }
  ds.splits.resize(count);
  for (Split& s : ds.splits) {
    const std::uint8_t v = r.u8("split table");
    if (v > 3) r.fail("invalid split code");
    s = static_cast<Split>(v);
  }
  if (!r.at_end()) r.fail("trailing bytes after split table");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file(path, encode_dataset(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(io::read_file(path));
}

// CSV import for externally produced Doppler traces: one row per window,
// "label,antenna,v0,...,v3071" with values in [time][bin][channel] order. A
// header row is skipped when its first cell is not numeric. The k-th row of
// each antenna is taken to observe the same event.
inline Dataset import_csv(const std::filesystem::path& path,
                          std::size_t classes, std::string scenario = "csv") {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Dataset ds;
  ds.class_names = class_names_for(classes);
  std::map<std::uint8_t, std::uint32_t> next_event;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    auto numeric = [](const std::string& s) {
      char* end = nullptr;
      std::strtod(s.c_str(), &end);
      return end != s.c_str();
    };
    if (line_no == 1 && !cells.empty() && !numeric(cells[0])) continue;
    if (cells.size() != 2 + kWindowVolume) {
      throw InputError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(2 + kWindowVolume) + " cells, got " +
                       std::to_string(cells.size()));
    }
    DopplerWindow w;
    const long label = std::stol(cells[0]);
    const long antenna = std::stol(cells[1]);
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InputError("line " + std::to_string(line_no) + ": label out of range");
    }
    if (antenna < 0 || antenna > 255) {
      throw InputError("line " + std::to_string(line_no) +
                       ": antenna out of range");
    }
    w.label = static_cast<std::uint16_t>(label);
    w.antenna = static_cast<std::uint8_t>(antenna);
    w.event = next_event[w.antenna]++;
    w.scenario = scenario;
    w.values.resize(kWindowVolume);
    for (std::size_t i = 0; i < kWindowVolume; ++i) {
      w.values[i] = std::stof(cells[2 + i]);
      if (!std::isfinite(w.values[i])) {
        throw InputError("line " + std::to_string(line_no) + ": non-finite value");
      }
    }
    ds.windows.push_back(std::move(w));
  }
  ds.splits.assign(ds.windows.size(), Split::kUnassigned);
  return ds;
}

}  // namespace ibis

#endif  // IBIS_SYNTH_HPP_
