#include "medmamba/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include "medmamba/errors.hpp"
#include "medmamba/rng.hpp"

namespace medmamba::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string where(const std::string& file, std::size_t line) { return file + ":" + std::to_string(line); }

}  // namespace

Tensor read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(where(path, 0) + ": cannot open file");
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    std::size_t n = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = body.find(',', start);
      const std::string_view cell = trim(body.substr(start, comma == std::string_view::npos ? body.npos : comma - start));
      double v = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (!cell.empty() && *first == '+') ++first;
      const auto res = std::from_chars(first, last, v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != last) {
        throw DataError(where(path, lineno) + ": non-numeric cell '" + std::string(cell) + "' in column " +
                        std::to_string(n + 1));
      }
      if (!std::isfinite(v)) throw DataError(where(path, lineno) + ": non-finite value in column " + std::to_string(n + 1));
      values.push_back(v);
      ++n;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 0) {
      cols = n;
    } else if (n != cols) {
      throw DataError(where(path, lineno) + ": ragged row with " + std::to_string(n) + " columns, expected " +
                      std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) throw DataError(where(path, lineno) + ": no data rows");
  return Tensor({rows, cols}, std::move(values));
}

void write_csv(const std::string& path, const Tensor& values) {
  if (values.rank() != 2) throw DimensionError("write_csv expects [T, C], got " + to_string(values.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::size_t t_len = values.dim(0), c_len = values.dim(1);
  std::string row;
  char buf[32];
  for (std::size_t t = 0; t < t_len; ++t) {
    row.clear();
    for (std::size_t c = 0; c < c_len; ++c) {
      if (c) row.push_back(',');
      const auto res = std::to_chars(buf, buf + sizeof buf, values[t * c_len + c]);
      row.append(buf, res.ptr);
    }
    row.push_back('\n');
    out << row;
  }
  if (!out) throw IoError("write failed: " + path);
}

void validate(const std::vector<Recording>& recordings, std::size_t classes) {
  std::size_t channels = 0;
  for (const auto& r : recordings) {
    const std::string src = r.path.empty() ? "subject " + r.subject : r.path;
    if (r.values.rank() != 2 || r.length() == 0) throw DataError(src + ": recording must be [T, C] with T >= 1");
    if (r.label >= classes) {
      throw DataError(src + ": label " + std::to_string(r.label) + " outside [0, " + std::to_string(classes) + ")");
    }
    if (channels == 0) channels = r.channels();
    if (r.channels() != channels) {
      throw DataError(src + ": " + std::to_string(r.channels()) + " channels, expected " + std::to_string(channels));
    }
    if (!r.values.all_finite()) throw DataError(src + ": non-finite values");
  }
}

std::vector<Recording> load_recordings(const std::string& manifest_path, std::optional<std::size_t> classes) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<Recording> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string here = where(manifest_path, lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(here + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError(here + ": expected an object");
    for (const char* key : {"path", "subject", "label", "sample_rate_hz"}) {
      if (!j.contains(key)) throw DataError(here + ": missing field '" + key + "'");
    }
    Recording r;
    if (!j["path"].is_string()) throw DataError(here + ": 'path' must be a string");
    if (j["subject"].is_string()) {
      r.subject = j["subject"].get<std::string>();
    } else if (j["subject"].is_number_integer()) {
      r.subject = std::to_string(j["subject"].get<long long>());
    } else {
      throw DataError(here + ": 'subject' must be a string");
    }
    if (!j["label"].is_number_integer() || j["label"].get<long long>() < 0) {
      throw DataError(here + ": 'label' must be a non-negative integer");
    }
    r.label = j["label"].get<std::size_t>();
    if (classes && r.label >= *classes) {
      throw DataError(here + ": label " + std::to_string(r.label) + " outside [0, " + std::to_string(*classes) + ")");
    }
    if (!j["sample_rate_hz"].is_number() || !(j["sample_rate_hz"].get<double>() > 0.0)) {
      throw DataError(here + ": 'sample_rate_hz' must be a positive number");
    }
    r.sample_rate_hz = j["sample_rate_hz"].get<double>();
    fs::path p = j["path"].get<std::string>();
    if (p.is_relative()) p = base / p;
    r.path = p.string();
    if (!fs::exists(p)) throw DataError(here + ": referenced file not found: " + r.path);
    r.values = read_csv(r.path);
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DataError(manifest_path + ": manifest lists no recordings");
  validate(out, classes.value_or(static_cast<std::size_t>(-1)));
  return out;
}

std::size_t window_count(std::size_t length, std::size_t window, std::size_t hop) {
  if (window == 0 || hop == 0) throw DomainError("window length and hop must be >= 1");
  if (length < window) return 0;
  return (length - window) / hop + 1;
}

std::vector<Tensor> window(const Recording& rec, std::size_t length, std::size_t hop) {
  const std::size_t n = window_count(rec.length(), length, hop);
  if (n == 0) {
    std::cerr << "warning: recording " << (rec.path.empty() ? rec.subject : rec.path) << " has " << rec.length()
              << " samples, shorter than window " << length << "; skipped\n";
    return {};
  }
  const std::size_t c = rec.channels();
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    const double* src = rec.values.data() + w * hop * c;
    out.emplace_back(Shape{length, c}, std::vector<double>(src, src + length * c));
  }
  return out;
}

namespace {

WindowSet windows_of(const std::vector<Recording>& recordings, std::size_t length, std::size_t hop,
                     const std::vector<std::string>* subjects) {
  WindowSet ws;
  std::vector<double> flat;
  const std::size_t channels = recordings.empty() ? 0 : recordings.front().channels();
  for (const auto& r : recordings) {
    if (subjects && std::find(subjects->begin(), subjects->end(), r.subject) == subjects->end()) continue;
    if (r.channels() != channels) throw DataError("recordings disagree on channel count");
    for (auto& w : window(r, length, hop)) {
      flat.insert(flat.end(), w.values().begin(), w.values().end());
      ws.labels.push_back(r.label);
      ws.subjects.push_back(r.subject);
    }
  }
  ws.windows = Tensor({ws.labels.size(), length, channels}, std::move(flat));
  return ws;
}

}  // namespace

WindowSet make_windows(const std::vector<Recording>& recordings, std::size_t length, std::size_t hop) {
  return windows_of(recordings, length, hop, nullptr);
}

WindowSet make_windows(const std::vector<Recording>& recordings, std::size_t length, std::size_t hop,
                       const std::vector<std::string>& subjects) {
  return windows_of(recordings, length, hop, &subjects);
}

NormStats channel_stats(const WindowSet& ws) {
  if (ws.size() == 0) throw DataError("normalization statistics need a non-empty training set");
  const std::size_t c_len = ws.windows.dim(2);
  const std::size_t rows = ws.windows.size() / c_len;
  const double* x = ws.windows.data();
  NormStats st{Tensor({c_len}), Tensor({c_len})};
  for (std::size_t c = 0; c < c_len; ++c) {
    // Shifted by the first sample so a constant channel has mean exactly equal to it.
    const double shift = x[c];
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += x[r * c_len + c] - shift;
    const double mean = shift + s / static_cast<double>(rows);
    double ss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = x[r * c_len + c] - mean;
      ss += d * d;
    }
    st.mean[c] = mean;
    st.std[c] = std::max(std::sqrt(ss / static_cast<double>(rows)), kStdFloor);
  }
  return st;
}

void apply_zscore(WindowSet& ws, const NormStats& stats) {
  if (ws.size() == 0) {
    ws.norm = stats;
    return;
  }
  const std::size_t c_len = ws.windows.dim(2);
  if (stats.mean.size() != c_len) throw DimensionError("normalization statistics do not match channel count");
  double* x = ws.windows.data();
  const std::size_t rows = ws.windows.size() / c_len;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < c_len; ++c) x[r * c_len + c] = (x[r * c_len + c] - stats.mean[c]) / stats.std[c];
  }
  ws.norm = stats;
}

NormStats zscore(WindowSet& train, std::vector<WindowSet*> others) {
  NormStats st = channel_stats(train);
  apply_zscore(train, st);
  for (WindowSet* o : others) apply_zscore(*o, st);
  return st;
}

Split subject_split(const std::vector<Recording>& recordings, std::array<double, 3> fractions, std::uint64_t seed,
                    bool stratify_by_class) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw DomainError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("split fractions must sum to 1");

  // Majority label per subject; ties go to the lowest label.
  std::map<std::string, std::map<std::size_t, std::size_t>> votes;
  for (const auto& r : recordings) ++votes[r.subject][r.label];
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> label_of;
  for (const auto& [id, counts] : votes) {
    ids.push_back(id);
    std::size_t best = counts.begin()->first, best_n = 0;
    for (const auto& [lab, n] : counts) {
      if (n > best_n) best = lab, best_n = n;
    }
    label_of[id] = best;
  }
  const std::size_t n = ids.size();
  const std::size_t needed = static_cast<std::size_t>(std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0.0; }));
  if (n < needed) {
    throw DataError("cannot split " + std::to_string(n) + " subjects into " + std::to_string(needed) + " non-empty sets");
  }

  // Largest-remainder sizes, then at least one subject per non-zero fraction.
  std::array<std::size_t, 3> size{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = fractions[k] * static_cast<double>(n);
    size[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[k] = exact - static_cast<double>(size[k]);
    assigned += size[k];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (rem[k] > rem[best]) best = k;
    }
    ++size[best];
    rem[best] = -1.0;
    ++assigned;
  }
  for (int k = 0; k < 3; ++k) {
    if (fractions[k] > 0.0 && size[k] == 0) {
      int donor = 0;
      for (int j = 1; j < 3; ++j) {
        if (size[j] > size[donor]) donor = j;
      }
      --size[donor];
      ++size[k];
    }
  }

  Rng rng = Rng(seed).fork("split");
  std::vector<std::string> order;
  if (stratify_by_class) {
    std::map<std::size_t, std::vector<std::string>> by_class;
    for (const auto& id : ids) by_class[label_of[id]].push_back(id);
    struct Keyed {
      double key;
      std::size_t cls;
      std::string id;
    };
    std::vector<Keyed> keyed;
    for (auto& [cls, members] : by_class) {
      Rng r = rng.fork(cls);
      const auto perm = r.permutation(members.size());
      const double m = static_cast<double>(members.size());
      for (std::size_t i = 0; i < members.size(); ++i) {
        keyed.push_back({(static_cast<double>(i) + 0.5) / m, cls, members[perm[i]]});
      }
    }
    std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
      return a.key != b.key ? a.key < b.key : a.cls < b.cls;
    });
    for (auto& k : keyed) order.push_back(std::move(k.id));
  } else {
    const auto perm = rng.permutation(n);
    for (std::size_t i : perm) order.push_back(ids[i]);
  }

  Split s;
  auto cut = order.begin();
  s.train.assign(cut, cut + static_cast<std::ptrdiff_t>(size[0]));
  cut += static_cast<std::ptrdiff_t>(size[0]);
  s.val.assign(cut, cut + static_cast<std::ptrdiff_t>(size[1]));
  cut += static_cast<std::ptrdiff_t>(size[1]);
  s.test.assign(cut, order.end());
  return s;
}

namespace {

std::string subject_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%03zu", i);
  return buf;
}

}  // namespace

SynthDataset synth_centralized(const CentralizedOptions& opt) {
  if (opt.channels < 2) throw DomainError("synth_centralized needs at least 2 channels");
  if (opt.length == 0 || opt.windows_per_subject == 0 || opt.subjects == 0) {
    throw DomainError("synth_centralized: subjects, length and windows_per_subject must be >= 1");
  }
  const Rng root(opt.seed);
  Rng pick = root.fork("channel");
  const std::size_t informative = pick.below(opt.channels);
  const std::size_t c_len = opt.channels, l_len = opt.length;
  const std::size_t t_len = l_len * opt.windows_per_subject;

  SynthDataset ds;
  for (std::size_t i = 0; i < opt.subjects; ++i) {
    Rng rng = root.fork("subject").fork(i);
    Recording r;
    r.subject = subject_id(i);
    r.label = i % 2;
    r.sample_rate_hz = static_cast<double>(l_len);
    r.values = Tensor({t_len, c_len});
    for (double& v : r.values.values()) v = rng.normal();
    const double cycles = r.label == 0 ? 4.0 : 7.0;
    for (std::size_t w = 0; w < opt.windows_per_subject; ++w) {
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t t = 0; t < l_len; ++t) {
        const double arg = 2.0 * std::numbers::pi * cycles * static_cast<double>(t) / static_cast<double>(l_len);
        r.values[(w * l_len + t) * c_len + informative] += opt.snr * std::sin(arg + phase);
      }
    }
    ds.recordings.push_back(std::move(r));
  }
  ds.meta = {{"kind", "centralized"},
             {"subjects", opt.subjects},
             {"channels", opt.channels},
             {"length", opt.length},
             {"snr", opt.snr},
             {"windows_per_subject", opt.windows_per_subject},
             {"informative_channel", informative},
             {"cycles_per_window", {4, 7}},
             {"classes", 2},
             {"seed", opt.seed}};
  return ds;
}

SynthDataset synth_multiscale(const MultiscaleOptions& opt) {
  constexpr std::size_t kBlock = 25;
  constexpr std::size_t kBurst = 5;
  constexpr double kPattern[kBurst] = {-0.5, 1.0, -1.0, 1.0, -0.5};
  if (opt.length < 100) throw DomainError("synth_multiscale needs length >= 100");
  if (opt.channels == 0 || opt.subjects == 0 || opt.windows_per_subject == 0) {
    throw DomainError("synth_multiscale: subjects, channels and windows_per_subject must be >= 1");
  }
  const std::size_t blocks = opt.length / kBlock;
  if (opt.bursts > blocks) throw DomainError("synth_multiscale: more bursts than 25-sample blocks");
  const Rng root(opt.seed);
  const std::size_t c_len = opt.channels, l_len = opt.length;
  const std::size_t t_len = l_len * opt.windows_per_subject;

  std::vector<double> drift_gain(c_len), burst_gain(c_len);
  Rng g = root.fork("gains");
  for (std::size_t c = 0; c < c_len; ++c) {
    drift_gain[c] = g.uniform(0.5, 1.5);
    burst_gain[c] = g.uniform(0.5, 1.5);
  }

  SynthDataset ds;
  for (std::size_t i = 0; i < opt.subjects; ++i) {
    Rng rng = root.fork("subject").fork(i);
    Recording r;
    r.subject = subject_id(i);
    r.label = i % 4;
    r.sample_rate_hz = static_cast<double>(l_len);
    const bool slow = r.label >= 2;
    const bool fast = r.label % 2 == 1;
    r.values = Tensor({t_len, c_len});
    for (double& v : r.values.values()) v = opt.noise * rng.normal();
    for (std::size_t w = 0; w < opt.windows_per_subject; ++w) {
      double* seg = r.values.data() + w * l_len * c_len;
      const double sign = slow ? 1.0 : -1.0;
      for (std::size_t t = 0; t < l_len; ++t) {
        const double ramp = sign * opt.drift * (2.0 * static_cast<double>(t) / static_cast<double>(l_len - 1) - 1.0);
        for (std::size_t c = 0; c < c_len; ++c) seg[t * c_len + c] += drift_gain[c] * ramp;
      }
      if (opt.nuisance != 0.0) {
        for (std::size_t c = 0; c < c_len; ++c) {
          const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
          for (std::size_t t = 0; t < l_len; ++t) {
            const double arg = 2.0 * std::numbers::pi * static_cast<double>(t % kBlock) / kBlock + phase;
            seg[t * c_len + c] += opt.nuisance * std::sin(arg);
          }
        }
      }
      if (!fast) continue;
      const auto chosen = rng.permutation(blocks);
      for (std::size_t b = 0; b < opt.bursts; ++b) {
        const std::size_t start = chosen[b] * kBlock + kBurst * rng.below(kBlock / kBurst);
        for (std::size_t k = 0; k < kBurst; ++k) {
          for (std::size_t c = 0; c < c_len; ++c) seg[(start + k) * c_len + c] += opt.burst * burst_gain[c] * kPattern[k];
        }
      }
    }
    ds.recordings.push_back(std::move(r));
  }
  ds.meta = {{"kind", "multiscale"},
             {"subjects", opt.subjects},
             {"channels", opt.channels},
             {"length", opt.length},
             {"drift", opt.drift},
             {"burst", opt.burst},
             {"bursts", opt.bursts},
             {"noise", opt.noise},
             {"nuisance", opt.nuisance},
             {"windows_per_subject", opt.windows_per_subject},
             {"classes", 4},
             {"label", "2*slow+fast"},
             {"seed", opt.seed}};
  return ds;
}

void write_dataset(const std::string& dir, const SynthDataset& ds, bool overwrite) {
  const fs::path root(dir);
  std::error_code ec;
  if (fs::exists(root) && !fs::is_empty(root) && !overwrite) {
    throw IoError(dir + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("rec_", 0) == 0 && entry.path().extension() == ".csv") fs::remove(entry.path());
  }
  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw IoError("cannot write " + (root / "manifest.jsonl").string());
  for (std::size_t i = 0; i < ds.recordings.size(); ++i) {
    const auto& r = ds.recordings[i];
    char name[32];
    std::snprintf(name, sizeof name, "rec_%05zu.csv", i);
    write_csv((root / name).string(), r.values);
    manifest << json{{"path", name}, {"subject", r.subject}, {"label", r.label}, {"sample_rate_hz", r.sample_rate_hz}}.dump()
             << '\n';
  }
  std::ofstream meta(root / "meta.json");
  meta << ds.meta.dump(2) << '\n';
  if (!manifest || !meta) throw IoError("write failed in " + dir);
}

Tensor channels_first(const Tensor& values) {
  if (values.rank() != 2) throw DimensionError("channels_first expects [T, C], got " + to_string(values.shape()));
  const std::size_t t_len = values.dim(0), c_len = values.dim(1);
  Tensor out({c_len, t_len});
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t c = 0; c < c_len; ++c) out[c * t_len + t] = values[t * c_len + c];
  }
  return out;
}

}  // namespace medmamba::data
