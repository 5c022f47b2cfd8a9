#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "doctest.h"
#include "medmamba/analysis.hpp"
#include "medmamba/data.hpp"
#include "medmamba/errors.hpp"
#include "medmamba/rng.hpp"

using namespace medmamba;
using namespace medmamba::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("medmamba_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

// Mann-Whitney AUC by pair counting; ties count one half.
double pair_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

Recording make_rec(std::string subject, std::size_t label, Tensor values) {
  Recording r;
  r.subject = std::move(subject);
  r.label = label;
  r.values = std::move(values);
  return r;
}

std::vector<Recording> subjects_with_labels(const std::vector<std::size_t>& labels) {
  std::vector<Recording> recs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    recs.push_back(make_rec("sub" + std::to_string(i), labels[i], Tensor({4, 2}, 1.0)));
  }
  return recs;
}

}  // namespace

TEST_CASE("csv parsing and errors") {
  TempDir dir("csv");
  write_text(dir.file("ok.csv"), "1,2,3\n4.5, -6e-1 ,7\n");
  const Tensor t = read_csv(dir.file("ok.csv"));
  CHECK(t.shape() == Shape{2, 3});
  CHECK(t == Tensor::matrix({{1, 2, 3}, {4.5, -0.6, 7}}));

  write_text(dir.file("ragged.csv"), "1,2,3\n4,5\n");
  const std::string ragged = error_of([&] { read_csv(dir.file("ragged.csv")); });
  CHECK(ragged.find("ragged.csv:2") != std::string::npos);

  write_text(dir.file("text.csv"), "1,2\n3,4\n5,abc\n");
  const std::string text = error_of([&] { read_csv(dir.file("text.csv")); });
  CHECK(text.find("text.csv:3") != std::string::npos);
  CHECK(text.find("abc") != std::string::npos);

  CHECK_THROWS_AS(read_csv(dir.file("missing.csv")), DataError);
  write_text(dir.file("nan.csv"), "1,nan\n");
  CHECK_THROWS_AS(read_csv(dir.file("nan.csv")), DataError);

  Tensor odd({2, 2}, {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789});
  write_csv(dir.file("rt.csv"), odd);
  CHECK(read_csv(dir.file("rt.csv")) == odd);
}

TEST_CASE("manifest loading") {
  TempDir dir("manifest");
  write_text(dir.file("a.csv"), "1,2,3\n4,5,6\n");
  write_text(dir.file("m.jsonl"), R"({"path": "a.csv", "subject": "s1", "label": 1, "sample_rate_hz": 100})" "\n");
  const auto recs = load_recordings(dir.file("m.jsonl"), 2);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].length() == 2);
  CHECK(recs[0].channels() == 3);
  CHECK(recs[0].subject == "s1");
  CHECK(recs[0].label == 1);
  CHECK(recs[0].sample_rate_hz == 100.0);

  CHECK_THROWS_AS(load_recordings(dir.file("m.jsonl"), 1), DataError);
  write_text(dir.file("neg.jsonl"), R"({"path": "a.csv", "subject": "s1", "label": -1, "sample_rate_hz": 100})" "\n");
  CHECK_THROWS_AS(load_recordings(dir.file("neg.jsonl")), DataError);
  write_text(dir.file("gone.jsonl"), R"({"path": "b.csv", "subject": "s1", "label": 0, "sample_rate_hz": 100})" "\n");
  const std::string gone = error_of([&] { load_recordings(dir.file("gone.jsonl")); });
  CHECK(gone.find("gone.jsonl:1") != std::string::npos);
  write_text(dir.file("bad.jsonl"), "\n{not json\n");
  CHECK(error_of([&] { load_recordings(dir.file("bad.jsonl")); }).find("bad.jsonl:2") != std::string::npos);
  CHECK_THROWS_AS(load_recordings(dir.file("nope.jsonl")), IoError);
}

TEST_CASE("1000-recording manifest keeps manifest order") {
  TempDir dir("order");
  std::ofstream m(dir.file("m.jsonl"));
  Rng rng(5);
  const auto perm = rng.permutation(1000);
  for (std::size_t i : perm) {
    const std::string name = "r" + std::to_string(i) + ".csv";
    write_text(dir.file(name), std::to_string(i) + "," + std::to_string(i % 7) + "\n");
    m << nlohmann::json{{"path", name}, {"subject", "s" + std::to_string(i)}, {"label", i % 3}, {"sample_rate_hz", 1}}.dump()
      << "\n";
  }
  m.close();
  const auto a = load_recordings(dir.file("m.jsonl"), 3);
  const auto b = load_recordings(dir.file("m.jsonl"), 3);
  REQUIRE(a.size() == 1000);
  for (std::size_t k = 0; k < 1000; ++k) {
    CHECK(a[k].values[0] == static_cast<double>(perm[k]));
    CHECK(a[k].values == b[k].values);
    CHECK(a[k].subject == "s" + std::to_string(perm[k]));
  }
}

TEST_CASE("window counts") {
  auto rec = [](std::size_t t) { return make_rec("s", 0, Tensor({t, 2})); };
  CHECK(window(rec(256), 256, 256).size() == 1);
  CHECK(window(rec(1280), 256, 128).size() == 9);
  CHECK(window(rec(255), 256, 128).empty());
  CHECK_THROWS_AS(window(rec(10), 4, 0), DomainError);

  // Closed form against direct enumeration, and window contents.
  for (std::size_t l : {1u, 7u, 16u}) {
    for (std::size_t t = l; t <= 4 * l; ++t) {
      Tensor v({t, 2});
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
      const Recording r = make_rec("s", 0, v);
      for (std::size_t hop = 1; hop <= l; ++hop) {
        std::size_t starts = 0;
        for (std::size_t s = 0; s + l <= t; s += hop) ++starts;
        REQUIRE(window_count(t, l, hop) == (t - l) / hop + 1);
        REQUIRE(window_count(t, l, hop) == starts);
        const auto ws = window(r, l, hop);
        REQUIRE(ws.size() == starts);
        for (std::size_t w = 0; w < ws.size(); ++w) {
          REQUIRE(ws[w].shape() == Shape{l, 2});
          REQUIRE(ws[w][0] == static_cast<double>(w * hop * 2));
          REQUIRE(ws[w][ws[w].size() - 1] == static_cast<double>((w * hop + l) * 2 - 1));
        }
      }
    }
  }
}

TEST_CASE("zscore uses training statistics") {
  Rng rng(3);
  auto make_set = [&](std::size_t n, double shift) {
    WindowSet ws;
    ws.windows = Tensor({n, 20, 3});
    for (std::size_t i = 0; i < ws.windows.size(); ++i) {
      const std::size_t c = i % 3;
      ws.windows[i] = c == 2 ? 4.25 : shift + (c + 1.0) * 3.0 * rng.normal();
    }
    ws.labels.assign(n, 0);
    ws.subjects.assign(n, "x");
    return ws;
  };
  WindowSet train = make_set(30, 5.0), test = make_set(10, -2.0);
  const WindowSet test_raw = test;
  const NormStats st = zscore(train, {&test});

  REQUIRE(train.norm.has_value());
  REQUIRE(test.norm.has_value());
  CHECK(train.norm->mean == test.norm->mean);
  CHECK(train.norm->std == test.norm->std);
  CHECK(st.std[2] == kStdFloor);

  // Recompute moments of the normalized training set longhand.
  const std::size_t rows = train.windows.size() / 3;
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    for (std::size_t r = 0; r < rows; ++r) s += train.windows[r * 3 + c];
    const double mean = s / rows;
    for (std::size_t r = 0; r < rows; ++r) ss += std::pow(train.windows[r * 3 + c] - mean, 2);
    CHECK(std::abs(mean) < 1e-6);
    if (c < 2) CHECK(std::abs(ss / rows - 1.0) < 1e-6);
  }
  for (std::size_t r = 0; r < rows; ++r) CHECK(train.windows[r * 3 + 2] == 0.0);
  for (std::size_t r = 0; r < test.windows.size() / 3; ++r) {
    CHECK(test.windows[r * 3 + 2] == 0.0);
    CHECK(test.windows[r * 3] == (test_raw.windows[r * 3] - st.mean[0]) / st.std[0]);
  }

  // Leakage canary: statistics fitted on the test split differ.
  const NormStats own = channel_stats(test_raw);
  CHECK(std::abs(own.mean[0] - st.mean[0]) > 1.0);
  CHECK_THROWS_AS(channel_stats(WindowSet{}), DataError);
}

TEST_CASE("subject split") {
  const auto ten = subjects_with_labels({0, 1, 0, 1, 0, 1, 0, 1, 0, 1});
  const Split s = subject_split(ten, {0.6, 0.2, 0.2}, 41);
  CHECK(s.train.size() == 6);
  CHECK(s.val.size() == 2);
  CHECK(s.test.size() == 2);
  const Split again = subject_split(ten, {0.6, 0.2, 0.2}, 41);
  CHECK(s.train == again.train);
  CHECK(s.val == again.val);
  CHECK(s.test == again.test);

  auto label_counts = [&](const std::vector<std::string>& ids, const std::vector<Recording>& recs) {
    std::vector<std::size_t> n(4, 0);
    for (const auto& id : ids)
      for (const auto& r : recs)
        if (r.subject == id) {
          ++n[r.label];
          break;
        }
    return n;
  };
  // Stratified val/test each hold one subject per class here.
  CHECK(label_counts(s.val, ten) == std::vector<std::size_t>{1, 1, 0, 0});
  CHECK(label_counts(s.test, ten) == std::vector<std::size_t>{1, 1, 0, 0});

  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.below(60);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.below(4);
    auto recs = subjects_with_labels(labels);
    // Duplicate recordings per subject must not duplicate the subject.
    recs.push_back(recs[0]);
    const Split sp = subject_split(recs, {0.6, 0.2, 0.2}, rng.next_u64(), trial % 2 == 0);
    std::set<std::string> all;
    for (const auto* part : {&sp.train, &sp.val, &sp.test}) {
      CHECK_FALSE(part->empty());
      all.insert(part->begin(), part->end());
    }
    CHECK(all.size() == sp.train.size() + sp.val.size() + sp.test.size());
    CHECK(all.size() == n);
  }

  CHECK_THROWS_AS(subject_split(subjects_with_labels({0, 1}), {0.6, 0.2, 0.2}, 1), DataError);
  CHECK_THROWS_AS(subject_split(ten, {0.6, 0.2, 0.3}, 1), DomainError);
  const Split two = subject_split(ten, {0.8, 0.2, 0.0}, 1);
  CHECK(two.test.empty());
  CHECK(two.train.size() == 8);
}

TEST_CASE("synth_centralized") {
  CentralizedOptions opt;
  opt.subjects = 20;
  opt.channels = 5;
  opt.length = 64;
  opt.snr = 1e6;
  opt.windows_per_subject = 2;
  const auto ds = synth_centralized(opt);
  const std::size_t inf = ds.meta.at("informative_channel").get<std::size_t>();
  REQUIRE(inf < 5);
  CHECK(ds.meta.at("channels") == 5);
  REQUIRE(ds.recordings.size() == 20);

  // At huge snr the informative channel alone separates the classes by its
  // dominant frequency.
  for (const auto& r : ds.recordings) {
    CHECK(r.values.shape() == Shape{128, 5});
    for (std::size_t w = 0; w < 2; ++w) {
      double p4 = 0, p7 = 0;
      for (double k : {4.0, 7.0}) {
        double re = 0, im = 0;
        for (std::size_t t = 0; t < 64; ++t) {
          const double a = 2 * std::numbers::pi * k * t / 64.0;
          re += r.values[(w * 64 + t) * 5 + inf] * std::cos(a);
          im += r.values[(w * 64 + t) * 5 + inf] * std::sin(a);
        }
        (k == 4.0 ? p4 : p7) = re * re + im * im;
      }
      CHECK((p7 > p4 ? 1u : 0u) == r.label);
    }
  }

  const auto again = synth_centralized(opt);
  for (std::size_t i = 0; i < 20; ++i) CHECK(again.recordings[i].values == ds.recordings[i].values);
  opt.seed = 42;
  CHECK(synth_centralized(opt).recordings[0].values != ds.recordings[0].values);
  opt.channels = 1;
  CHECK_THROWS_AS(synth_centralized(opt), DomainError);
}

TEST_CASE("synth_centralized is more centralized than noise") {
  std::vector<double> synth, noise;
  for (std::uint64_t d = 0; d < 50; ++d) {
    CentralizedOptions opt;
    opt.subjects = 1;
    opt.seed = 1000 + d;
    const auto ds = synth_centralized(opt);
    synth.push_back(analysis::sci(channels_first(ds.recordings[0].values)));
    Rng rng(2000 + d);
    Tensor white({opt.length, opt.channels});
    for (double& v : white.values()) v = rng.normal();
    noise.push_back(analysis::sci(channels_first(white)));
  }
  std::nth_element(synth.begin(), synth.begin() + 25, synth.end());
  std::nth_element(noise.begin(), noise.begin() + 25, noise.end());
  CHECK(synth[25] > noise[25]);
}

TEST_CASE("synth_multiscale factors") {
  MultiscaleOptions clean;
  clean.subjects = 16;
  clean.noise = 0.0;
  const auto ds = synth_multiscale(clean);
  for (const auto& r : ds.recordings) {
    const std::size_t l = r.length(), c = r.channels();
    const bool slow = r.values[(l - 1) * c] > r.values[0];
    double hp_energy = 0;
    for (std::size_t t = 2; t + 2 < l; ++t) {
      double ma = 0;
      for (std::size_t k = t - 2; k <= t + 2; ++k) ma += r.values[k * c];
      hp_energy += std::pow(r.values[t * c] - ma / 5, 2);
    }
    const bool fast = hp_energy > 1e-9;
    CHECK(r.label == 2 * slow + fast);
  }
  clean.length = 99;
  CHECK_THROWS_AS(synth_multiscale(clean), DomainError);
}

TEST_CASE("synth_multiscale hides each factor from the wrong scale") {
  MultiscaleOptions opt;
  opt.subjects = 2000;
  opt.seed = 7;
  // Default factors, then weaker drift under the period-25 nuisance.
  for (const auto& [drift, nuisance] : {std::pair{1.0, 0.0}, std::pair{0.3, 2.0}}) {
    CAPTURE(nuisance);
    opt.drift = drift;
    opt.nuisance = nuisance;
    const auto ds = synth_multiscale(opt);
    const auto again = synth_multiscale(opt);
    CHECK(again.recordings[1999].values == ds.recordings[1999].values);

    // Fast detector: energy after 25x average pooling (and, as a positive
    // control, of the 5-sample high-pass).
    // Slow detector: correlation with a ramp after 5-sample high-pass (and,
    // as a positive control, of the raw signal).
    std::vector<double> fast_pool[2], fast_hp[2], slow_hp[2], slow_raw[2];
    for (const auto& r : ds.recordings) {
      const std::size_t l = r.length(), c = r.channels();
      const bool slow = r.label >= 2, fast = r.label % 2;
      double pooled_energy = 0, hp_energy = 0, hp_corr = 0, raw_corr = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t b = 0; b + 25 <= l; b += 25) {
          double m = 0;
          for (std::size_t t = b; t < b + 25; ++t) m += r.values[t * c + ch];
          pooled_energy += std::pow(m / 25, 2);
        }
        for (std::size_t t = 0; t < l; ++t) {
          const double ramp = static_cast<double>(t) - (l - 1) / 2.0;
          raw_corr += ramp * r.values[t * c + ch];
          if (t < 2 || t + 2 >= l) continue;
          double ma = 0;
          for (std::size_t k = t - 2; k <= t + 2; ++k) ma += r.values[k * c + ch];
          const double hp = r.values[t * c + ch] - ma / 5;
          hp_energy += hp * hp;
          hp_corr += ramp * hp;
        }
      }
      fast_pool[fast].push_back(pooled_energy);
      fast_hp[fast].push_back(hp_energy);
      slow_hp[slow].push_back(hp_corr);
      slow_raw[slow].push_back(raw_corr);
    }
    const double auc_fast_pooled = pair_auc(fast_pool[1], fast_pool[0]);
    const double auc_slow_hp = pair_auc(slow_hp[1], slow_hp[0]);
    CHECK(std::abs(auc_fast_pooled - 0.5) <= 0.05);
    CHECK(std::abs(auc_slow_hp - 0.5) <= 0.05);
    CHECK(pair_auc(fast_hp[1], fast_hp[0]) > 0.9);
    CHECK(pair_auc(slow_raw[1], slow_raw[0]) > 0.9);
  }
}

TEST_CASE("dataset round trip on disk") {
  TempDir dir("ds");
  MultiscaleOptions opt;
  opt.subjects = 6;
  opt.windows_per_subject = 2;
  const auto ds = synth_multiscale(opt);
  write_dataset(dir.file("out"), ds);
  CHECK(fs::exists(dir.path / "out" / "meta.json"));
  CHECK_THROWS_AS(write_dataset(dir.file("out"), ds), IoError);
  write_dataset(dir.file("out"), ds, true);
  const auto back = load_recordings(dir.file("out/manifest.jsonl"), 4);
  REQUIRE(back.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(back[i].values == ds.recordings[i].values);
    CHECK(back[i].label == ds.recordings[i].label);
    CHECK(back[i].subject == ds.recordings[i].subject);
    CHECK(back[i].sample_rate_hz == ds.recordings[i].sample_rate_hz);
  }
  std::ifstream meta(dir.path / "out" / "meta.json");
  CHECK(nlohmann::json::parse(meta) == ds.meta);

  const WindowSet ws = make_windows(back, 250, 250, {"S001", "S004"});
  CHECK(ws.size() == 4);
  CHECK(ws.windows.shape() == Shape{4, 250, 4});
  CHECK(ws.subjects == std::vector<std::string>{"S001", "S001", "S004", "S004"});
}
