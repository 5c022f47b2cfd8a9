#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "medmamba/tensor.hpp"

namespace medmamba::data {

struct Recording {
  Tensor values;  // [T, C]
  double sample_rate_hz = 1.0;
  std::string subject;
  std::size_t label = 0;
  std::string path;  // source CSV, empty for generated recordings

  std::size_t length() const { return values.dim(0); }
  std::size_t channels() const { return values.dim(1); }
};

// Headerless CSV, one row per timestep. Errors carry "file:line".
Tensor read_csv(const std::string& path);
void write_csv(const std::string& path, const Tensor& values);

/// JSONL manifest, one {"path", "subject", "label", "sample_rate_hz"} object
/// per line; relative paths resolve against the manifest's directory.
/// Recordings come back in manifest order. With `classes`, labels must be
/// below it.
std::vector<Recording> load_recordings(const std::string& manifest_path,
                                       std::optional<std::size_t> classes = std::nullopt);

// Throws DataError unless every label is < classes and all recordings
// share one channel count.
void validate(const std::vector<Recording>& recordings, std::size_t classes);

// floor((T - L) / hop) + 1, or 0 when T < L.
std::size_t window_count(std::size_t length, std::size_t window, std::size_t hop);

// Windows [L, C] starting at 0, hop, 2 hop, ...; a trailing remainder is
// dropped. Warns and returns nothing when the recording is shorter than L.
std::vector<Tensor> window(const Recording& rec, std::size_t length, std::size_t hop);

struct NormStats {
  Tensor mean;  // [C]
  Tensor std;   // [C], population std floored at kStdFloor
};

struct WindowSet {
  Tensor windows;  // [Nw, L, C]
  std::vector<std::size_t> labels;
  std::vector<std::string> subjects;
  std::optional<NormStats> norm;  // set once normalized

  std::size_t size() const { return labels.size(); }
};

WindowSet make_windows(const std::vector<Recording>& recordings, std::size_t length, std::size_t hop);
// Only recordings whose subject is listed.
WindowSet make_windows(const std::vector<Recording>& recordings, std::size_t length, std::size_t hop,
                       const std::vector<std::string>& subjects);

inline constexpr double kStdFloor = 1e-8;

// Per-channel statistics over all timesteps of all windows.
NormStats channel_stats(const WindowSet& ws);
void apply_zscore(WindowSet& ws, const NormStats& stats);
// Fits on `train` (must be non-empty) and normalizes every set with it.
NormStats zscore(WindowSet& train, std::vector<WindowSet*> others = {});

struct Split {
  std::vector<std::string> train, val, test;
};

/// Subject-level split. Sizes are the largest-remainder apportionment of the
/// fractions (every nonzero fraction gets at least one subject). With
/// stratification, subjects of each class (majority label) are spread evenly
/// over the ordering before it is cut.
Split subject_split(const std::vector<Recording>& recordings, std::array<double, 3> fractions, std::uint64_t seed,
                    bool stratify_by_class = true);

struct SynthDataset {
  std::vector<Recording> recordings;
  nlohmann::json meta;  // generator parameters
};

struct CentralizedOptions {
  std::size_t subjects = 40;
  std::size_t channels = 8;
  std::size_t length = 256;  // samples per window; also the sample rate
  double snr = 1.0;          // amplitude of the informative oscillation
  std::size_t windows_per_subject = 1;
  std::uint64_t seed = 41;
};

/// Binary task carried by one informative channel: 4 (class 0) or 7 (class 1)
/// cycles per window with random phase, unit Gaussian noise everywhere.
SynthDataset synth_centralized(const CentralizedOptions& opt);

struct MultiscaleOptions {
  std::size_t subjects = 80;
  std::size_t channels = 4;
  std::size_t length = 250;
  double drift = 1.0;        // slow factor: ramp from -drift to +drift (sign by class)
  double burst = 2.0;        // fast factor: burst amplitude
  std::size_t bursts = 4;    // bursts per window when present
  double noise = 1.0;
  double nuisance = 0.0;     // amplitude of a 25-sample-period oscillation
  std::size_t windows_per_subject = 1;
  std::uint64_t seed = 41;
};

/// Four classes from two binary factors: label = 2 * slow + fast. The slow
/// factor is the sign of a linear drift across the window; the fast factor
/// is the presence of zero-sum 5-sample bursts that sit inside aligned
/// 25-sample blocks, so 25x average pooling removes them exactly. The
/// optional nuisance oscillation (random phase per window and channel) also
/// sums to zero over every 25-sample block.
SynthDataset synth_multiscale(const MultiscaleOptions& opt);

// Writes <dir>/manifest.jsonl, <dir>/rec_XXXXX.csv and <dir>/meta.json.
// A non-empty <dir> is refused unless `overwrite`.
void write_dataset(const std::string& dir, const SynthDataset& ds, bool overwrite = false);

// [T, C] -> [C, T] for channel-major analyses.
Tensor channels_first(const Tensor& values);

}  // namespace medmamba::data
