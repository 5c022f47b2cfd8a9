#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "medmamba/analysis.hpp"
#include "medmamba/checkpoint.hpp"
#include "medmamba/data.hpp"
#include "medmamba/errors.hpp"
#include "medmamba/kernels.hpp"
#include "medmamba/scaling.hpp"
#include "medmamba/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace medmamba;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4, kIo = 5 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || s[0] == '-') throw UsageError("invalid " + what + ": '" + s + "'");
  return v;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& what) {
  std::vector<std::size_t> out;
  for (const auto& item : split_commas(s)) out.push_back(parse_u64(item, what));
  if (out.empty()) throw UsageError(what + " list is empty");
  return out;
}

// "41..45" or "41,43,47".
std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  const auto dots = s.find("..");
  if (dots != std::string::npos) {
    const auto lo = parse_u64(s.substr(0, dots), "seed range");
    const auto hi = parse_u64(s.substr(dots + 2), "seed range");
    if (hi < lo || hi - lo > 1000) throw UsageError("invalid seed range '" + s + "'");
    std::vector<std::uint64_t> out;
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  std::vector<std::uint64_t> out;
  for (const auto& item : split_commas(s)) out.push_back(parse_u64(item, "seed"));
  if (out.empty()) throw UsageError("empty seed list");
  return out;
}

std::array<double, 3> parse_fractions(const std::string& s) {
  const auto items = split_commas(s);
  if (items.size() != 3) throw UsageError("--split needs three fractions, e.g. 0.6,0.2,0.2");
  std::array<double, 3> f{};
  for (int i = 0; i < 3; ++i) {
    try {
      f[i] = std::stod(items[i]);
    } catch (const std::exception&) {
      throw UsageError("invalid split fraction '" + items[i] + "'");
    }
  }
  return f;
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("MEDMAMBA_SEED")) return parse_u64(env, "MEDMAMBA_SEED");
  return 41;
}

void require_fresh(const fs::path& dir, bool force) {
  if (fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir) && !force) {
    throw UsageError(dir.string() + " is not empty; pass --force to overwrite");
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void emit(const json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json_file(out_path, j);
  }
}

// ---- synth ----

struct SynthArgs {
  std::string kind;
  std::string out;
  std::size_t subjects = 0, channels = 0, length = 0, windows = 1, bursts = 4;
  double snr = 1.0, drift = 1.0, burst = 2.0, noise = 1.0, nuisance = 0.0;
  std::uint64_t seed = 41;
  bool force = false;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* cmd = app.add_subcommand("synth", "Generate a synthetic dataset (CSV + manifest + meta.json)");
  cmd->add_option("kind", a.kind, "Generator")->required()->check(CLI::IsMember({"centralized", "multiscale"}));
  cmd->add_option("-o,--out", a.out, "Output directory")->required();
  cmd->add_option("--subjects", a.subjects, "Number of subjects (default 40 / 80)");
  cmd->add_option("--channels", a.channels, "Channels (default 8 / 4)");
  cmd->add_option("--len", a.length, "Samples per window (default 256 / 250)");
  cmd->add_option("--windows-per-subject", a.windows, "Consecutive windows per recording")->capture_default_str();
  cmd->add_option("--snr", a.snr, "centralized: oscillation amplitude over unit noise")->capture_default_str();
  cmd->add_option("--drift", a.drift, "multiscale: drift amplitude")->capture_default_str();
  cmd->add_option("--burst", a.burst, "multiscale: burst amplitude")->capture_default_str();
  cmd->add_option("--bursts", a.bursts, "multiscale: bursts per window")->capture_default_str();
  cmd->add_option("--noise", a.noise, "multiscale: noise sd")->capture_default_str();
  cmd->add_option("--nuisance", a.nuisance, "multiscale: amplitude of a period-25 oscillation shared by all classes")
      ->capture_default_str();
  cmd->add_option("--seed", a.seed, "Seed (default $MEDMAMBA_SEED or 41)");
  cmd->add_flag("--force", a.force, "Overwrite a non-empty output directory");
}

int run_synth(const SynthArgs& a) {
  require_fresh(a.out, a.force);
  data::SynthDataset ds;
  if (a.kind == "centralized") {
    data::CentralizedOptions o;
    if (a.subjects) o.subjects = a.subjects;
    if (a.channels) o.channels = a.channels;
    if (a.length) o.length = a.length;
    o.snr = a.snr;
    o.windows_per_subject = a.windows;
    o.seed = a.seed;
    ds = data::synth_centralized(o);
  } else {
    data::MultiscaleOptions o;
    if (a.subjects) o.subjects = a.subjects;
    if (a.channels) o.channels = a.channels;
    if (a.length) o.length = a.length;
    o.drift = a.drift;
    o.burst = a.burst;
    o.bursts = a.bursts;
    o.noise = a.noise;
    o.nuisance = a.nuisance;
    o.windows_per_subject = a.windows;
    o.seed = a.seed;
    ds = data::synth_multiscale(o);
  }
  data::write_dataset(a.out, ds, true);
  std::cout << "wrote " << ds.recordings.size() << " recordings to " << a.out << '\n';
  return kOk;
}

// ---- shared model/training flags ----

struct ModelFlags {
  std::optional<std::size_t> d_model, layers, d_state, expand, ffn_expand, rho, conv_kernel, classes;
  std::optional<std::string> strides;
  std::optional<double> p_do, p_dp, p_ch;
  bool shared_a = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--d-model", d_model, "Model width D");
    cmd->add_option("--layers", layers, "Blocks per scale");
    cmd->add_option("--d-state", d_state, "SSM state size N");
    cmd->add_option("--expand", expand, "Inner expansion E");
    cmd->add_option("--ffn-expand", ffn_expand, "FFN expansion");
    cmd->add_option("--rho", rho, "Channel-mixer expansion");
    cmd->add_option("--conv-kernel", conv_kernel, "Depthwise conv kernel (odd)");
    cmd->add_option("--classes", classes, "Number of classes K (default: inferred from labels)");
    cmd->add_option("--strides", strides, "Comma-separated patch strides, e.g. 5,10,25");
    cmd->add_option("--p-do", p_do, "Feature dropout");
    cmd->add_option("--p-dp", p_dp, "Drop-path rate");
    cmd->add_option("--p-ch", p_ch, "Channel dropout");
    cmd->add_flag("--shared-a", shared_a, "Tie the backward scan's A to the forward one");
  }

  void apply(ModelConfig& c) const {
    if (d_model) c.d_model = *d_model;
    if (layers) c.n_layer = *layers;
    if (d_state) c.d_state = *d_state;
    if (expand) c.expand = *expand;
    if (ffn_expand) c.ffn_expand = *ffn_expand;
    if (rho) c.rho = *rho;
    if (conv_kernel) c.conv_kernel = *conv_kernel;
    if (classes) c.classes = *classes;
    if (strides) c.strides = parse_sizes(*strides, "stride");
    if (p_do) c.p_do = *p_do;
    if (p_dp) c.p_dp = *p_dp;
    if (p_ch) c.p_ch = *p_ch;
    if (shared_a) c.shared_a = true;
  }
};

// ---- train ----

struct TrainArgs {
  std::string manifest, out, config_file;
  ModelFlags model;
  std::optional<std::size_t> epochs, batch_size, warmup_epochs, length, hop;
  std::optional<double> lr, weight_decay, clip, smoothing;
  std::optional<std::string> split, seeds;
  std::optional<std::uint64_t> seed;
  bool no_stratify = false, force = false, quiet = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Split, normalize and train; writes best.ckpt, history.csv, report.json, config.json");
  cmd->add_option("-m,--manifest", a.manifest, "Recording manifest (JSONL)")->required();
  cmd->add_option("-o,--out", a.out, "Run directory")->required();
  cmd->add_option("-c,--config", a.config_file, "JSON run config {model, train, data}; flags override it");
  a.model.add(cmd);
  cmd->add_option("--epochs", a.epochs, "Epochs (default 50)");
  cmd->add_option("--batch-size", a.batch_size, "Batch size (default 512)");
  cmd->add_option("--warmup-epochs", a.warmup_epochs, "Warmup epochs (default 5)");
  cmd->add_option("--lr", a.lr, "Peak learning rate (default 5e-4)");
  cmd->add_option("--weight-decay", a.weight_decay, "AdamW weight decay (default 0.1)");
  cmd->add_option("--clip", a.clip, "Gradient-norm clip (default 4.0)");
  cmd->add_option("--smoothing", a.smoothing, "Label smoothing (default 0.02)");
  cmd->add_option("--len", a.length, "Window length L (default 256)");
  cmd->add_option("--hop", a.hop, "Window hop (default: L)");
  cmd->add_option("--split", a.split, "Subject fractions train,val,test (default 0.6,0.2,0.2)");
  cmd->add_flag("--no-stratify", a.no_stratify, "Do not stratify the split by class");
  auto* seed = cmd->add_option("--seed", a.seed, "Seed (default $MEDMAMBA_SEED or 41)");
  cmd->add_option("--seeds", a.seeds, "Several seeds, e.g. 41..45; reports mean and std")->excludes(seed);
  cmd->add_flag("--force", a.force, "Overwrite a non-empty run directory");
  cmd->add_flag("-q,--quiet", a.quiet, "No per-epoch output");
}

json data_json(const training::DataOptions& d) {
  return {{"length", d.length}, {"hop", d.hop}, {"split", d.split}, {"stratify", d.stratify}};
}

void merge_data_json(training::DataOptions& d, const json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "length") d.length = v.get<std::size_t>();
    else if (key == "hop") d.hop = v.get<std::size_t>();
    else if (key == "split") d.split = v.get<std::array<double, 3>>();
    else if (key == "stratify") d.stratify = v.get<bool>();
    else throw ConfigError("unknown data key '" + key + "'");
  }
}

struct Stat {
  double mean = 0, std = 0;
};

Stat mean_std(const std::vector<double>& v) {
  Stat s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(v.size() - 1));
  }
  return s;
}

int run_train(const TrainArgs& a) {
  require_fresh(a.out, a.force);
  ModelConfig mc;
  training::TrainConfig tc;
  tc.seed = default_seed();
  training::DataOptions dopt;
  bool hop_set = false;
  bool classes_set = false;
  if (!a.config_file.empty()) {
    const json file = read_json_file(a.config_file);
    for (const auto& [key, v] : file.items()) {
      if (key == "model") {
        json merged = mc;
        merged.update(v);
        mc = merged.get<ModelConfig>();
        classes_set = classes_set || v.contains("K");
      } else if (key == "train") {
        training::merge_json(tc, v);
      } else if (key == "data") {
        merge_data_json(dopt, v);
        hop_set = hop_set || v.contains("hop");
      } else if (key != "manifest" && key != "seeds") {
        throw ConfigError(a.config_file + ": unknown section '" + key + "'");
      }
    }
  }
  a.model.apply(mc);
  classes_set = classes_set || a.model.classes.has_value();
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.warmup_epochs) tc.warmup_epochs = *a.warmup_epochs;
  if (a.lr) tc.lr_peak = *a.lr;
  if (a.weight_decay) tc.weight_decay = *a.weight_decay;
  if (a.clip) tc.clip_norm = *a.clip;
  if (a.smoothing) tc.label_smoothing = *a.smoothing;
  if (a.seed) tc.seed = *a.seed;
  if (a.length) dopt.length = *a.length;
  if (a.hop) dopt.hop = *a.hop, hop_set = true;
  if (!hop_set) dopt.hop = dopt.length;
  if (a.split) dopt.split = parse_fractions(*a.split);
  if (a.no_stratify) dopt.stratify = false;
  const std::vector<std::uint64_t> seeds = a.seeds ? parse_seeds(*a.seeds) : std::vector<std::uint64_t>{tc.seed};

  const auto recs = data::load_recordings(a.manifest);
  std::size_t max_label = 0;
  for (const auto& r : recs) max_label = std::max(max_label, r.label);
  if (!classes_set) mc.classes = std::max<std::size_t>(2, max_label + 1);
  data::validate(recs, mc.classes);
  mc.channels = recs.front().channels();
  mc.length = dopt.length;
  mc.validate();
  tc.validate();

  fs::create_directories(a.out);
  json run = {{"manifest", fs::absolute(a.manifest).string()},
              {"model", mc},
              {"train", training::to_json(tc)},
              {"data", data_json(dopt)},
              {"seeds", seeds}};
  write_json_file(fs::path(a.out) / "config.json", run);

  std::vector<json> reports;
  for (std::uint64_t seed : seeds) {
    training::TrainConfig cfg = tc;
    cfg.seed = seed;
    const fs::path dir = seeds.size() == 1 ? fs::path(a.out) : fs::path(a.out) / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    const auto prep = training::prepare_data(recs, dopt, seed);
    if (!a.quiet) {
      std::cout << "seed " << seed << ": " << prep.train.size() << " train / " << prep.val.size() << " val / "
                << prep.test.size() << " test windows\n";
    }
    model::Model m(mc, seed);
    const auto result = training::train_loop(m, prep.train, prep.val, cfg, [&](const training::EpochRecord& e) {
      if (a.quiet) return;
      std::cout << "  epoch " << e.epoch << "  lr " << e.lr << "  loss " << e.train_loss << "  val acc "
                << e.val.accuracy << "  val f1 " << e.val.f1 << std::endl;
    });
    training::write_history_csv((dir / "history.csv").string(), result.history);
    const json meta = {{"seed", seed},
                       {"best_epoch", result.best_epoch},
                       {"data", data_json(dopt)},
                       {"split", {{"train", prep.split.train}, {"val", prep.split.val}, {"test", prep.split.test}}}};
    save_checkpoint((dir / "best.ckpt").string(),
                    make_checkpoint(m, {{"norm.mean", prep.norm.mean}, {"norm.std", prep.norm.std}}, meta));
    json rep = {{"seed", seed}, {"best_epoch", result.best_epoch}, {"val", result.best_val.to_json()}};
    if (prep.test.size() > 0) {
      rep["test"] = training::compute_metrics(training::evaluate(m, prep.test, cfg.eval_batch), prep.test.labels).to_json();
    }
    write_json_file(dir / "report.json", rep);
    if (!a.quiet) std::cout << "seed " << seed << ": best epoch " << result.best_epoch << ", " << rep.dump() << '\n';
    reports.push_back(rep);
  }

  if (seeds.size() > 1) {
    json agg = {{"seeds", seeds}, {"runs", reports}};
    for (const char* split : {"val", "test"}) {
      json block = json::object();
      for (const char* metric : {"accuracy", "precision", "recall", "f1", "auroc"}) {
        std::vector<double> v;
        for (const auto& r : reports) {
          if (r.contains(split) && r[split].contains(metric)) v.push_back(r[split][metric].get<double>());
        }
        if (v.size() == reports.size()) {
          const Stat s = mean_std(v);
          block[metric] = {{"mean", s.mean}, {"std", s.std}};
        }
      }
      if (!block.empty()) agg[split] = block;
    }
    write_json_file(fs::path(a.out) / "report.json", agg);
    if (!a.quiet) std::cout << agg.dump(2) << '\n';
  }
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint, manifest, split = "test", out;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split of a manifest");
  cmd->add_option("-k,--checkpoint", a.checkpoint, "Checkpoint file")->required();
  cmd->add_option("-m,--manifest", a.manifest, "Recording manifest (JSONL)")->required();
  cmd->add_option("--split", a.split, "Which subjects to use")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  cmd->add_option("-o,--out", a.out, "Write the report here instead of stdout");
}

std::string triplet(std::size_t c, std::size_t l, std::size_t k) {
  return "(C, L, K) = (" + std::to_string(c) + ", " + std::to_string(l) + ", " + std::to_string(k) + ")";
}

int run_eval(const EvalArgs& a) {
  if (!fs::exists(a.checkpoint)) throw IoError("checkpoint not found: " + a.checkpoint);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  model::Model m = restore_model(ckpt);
  const ModelConfig& mc = m.config();
  const auto recs = data::load_recordings(a.manifest);
  std::size_t max_label = 0;
  for (const auto& r : recs) max_label = std::max(max_label, r.label);
  if (recs.front().channels() != mc.channels || max_label >= mc.classes) {
    throw DataError("checkpoint expects " + triplet(mc.channels, mc.length, mc.classes) + " but data has " +
                    triplet(recs.front().channels(), mc.length, max_label + 1));
  }
  const json& meta = ckpt.meta;
  const std::size_t hop = meta.contains("data") ? meta["data"].value("hop", mc.length) : mc.length;
  data::WindowSet ws;
  if (a.split == "all") {
    ws = data::make_windows(recs, mc.length, hop);
  } else {
    if (!meta.contains("split") || !meta["split"].contains(a.split)) {
      throw DataError("checkpoint carries no '" + a.split + "' subject list; use --split all");
    }
    ws = data::make_windows(recs, mc.length, hop, meta["split"][a.split].get<std::vector<std::string>>());
  }
  if (ws.size() == 0) throw DataError("no windows of length " + std::to_string(mc.length) + " in the selected split");
  if (ckpt.contains("norm.mean")) data::apply_zscore(ws, {ckpt.tensor("norm.mean"), ckpt.tensor("norm.std")});
  const auto report = training::compute_metrics(training::evaluate(m, ws), ws.labels);
  json j = report.to_json();
  j["split"] = a.split;
  j["windows"] = ws.size();
  emit(j, a.out);
  return kOk;
}

// ---- analyze ----

struct AnalyzeArgs {
  std::string manifest, csv, strides = "5,10,25", influence_csv, out;
};

void add_analyze(CLI::App& app, AnalyzeArgs& a) {
  auto* cmd = app.add_subcommand("analyze", "Centralization metrics per recording and the stride-set mismatch");
  auto* m = cmd->add_option("-m,--manifest", a.manifest, "Recording manifest (JSONL)");
  auto* c = cmd->add_option("--csv", a.csv, "A single recording CSV");
  m->excludes(c);
  cmd->add_option("--strides", a.strides, "Stride set for the worst-case mismatch")->capture_default_str();
  cmd->add_option("--influence-csv", a.influence_csv, "Also write per-channel influence rows here");
  cmd->add_option("-o,--out", a.out, "Write the JSON here instead of stdout");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int run_analyze(const AnalyzeArgs& a) {
  if (a.manifest.empty() == a.csv.empty()) throw UsageError("analyze needs exactly one of --manifest or --csv");
  std::vector<data::Recording> recs;
  if (!a.csv.empty()) {
    data::Recording r;
    r.values = data::read_csv(a.csv);
    r.path = a.csv;
    recs.push_back(std::move(r));
  } else {
    std::ifstream in(a.manifest);
    if (!in) throw IoError("cannot open manifest " + a.manifest);
    bool any = false;
    for (std::string line; std::getline(in, line);) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) any = true;
    }
    if (!any) throw UsageError("manifest " + a.manifest + " lists no recordings");
    recs = data::load_recordings(a.manifest);
  }
  std::vector<double> strides;
  for (std::size_t s : parse_sizes(a.strides, "stride")) strides.push_back(static_cast<double>(s));

  json items = json::array();
  std::vector<double> scis, dics;
  std::ofstream infl;
  if (!a.influence_csv.empty()) {
    infl.open(a.influence_csv);
    if (!infl) throw IoError("cannot write " + a.influence_csv);
    infl.precision(17);
    infl << "recording,subject,channel,influence\n";
  }
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    json item = {{"path", r.path}, {"subject", r.subject}, {"channels", r.channels()}, {"length", r.length()}};
    if (r.channels() < 2) {
      item["note"] = "single channel: SCI/DIC skipped";
    } else if (r.length() < 3) {
      item["note"] = "fewer than 3 samples: SCI/DIC skipped";
    } else {
      const auto rep = analysis::centralization(data::channels_first(r.values));
      item["sci"] = rep.sci;
      item["dic"] = rep.dic;
      item["influence"] = std::vector<double>(rep.influence.values().begin(), rep.influence.values().end());
      scis.push_back(rep.sci);
      dics.push_back(rep.dic);
      if (infl.is_open()) {
        for (std::size_t c = 0; c < rep.influence.size(); ++c) {
          infl << i << ',' << r.subject << ',' << c << ',' << rep.influence[c] << '\n';
        }
      }
    }
    items.push_back(std::move(item));
  }
  json out = {{"recordings", items}, {"strides", strides}, {"worst_case_mismatch", analysis::worst_case_mismatch(strides)}};
  if (!scis.empty()) {
    out["median_sci"] = median(scis);
    out["median_dic"] = median(dics);
  }
  if (recs.size() == 1 && items[0].contains("sci")) {
    out["sci"] = items[0]["sci"];
    out["dic"] = items[0]["dic"];
    out["influence"] = items[0]["influence"];
  }
  emit(out, a.out);
  return kOk;
}

// ---- gradcheck ----

struct GradArgs {
  ModelFlags model;
  std::size_t channels = 3, length = 30, batch = 3;
  double tol = 1e-4;
  std::uint64_t seed = 41;
};

ModelConfig tiny_model() {
  ModelConfig c;
  c.channels = 3;
  c.length = 30;
  c.classes = 2;
  c.d_model = 8;
  c.n_layer = 1;
  c.expand = 2;
  c.ffn_expand = 2;
  c.d_state = 4;
  c.strides = {3, 5};
  c.rho = 2;
  return c;
}

void add_gradcheck(CLI::App& app, GradArgs& a) {
  auto* cmd = app.add_subcommand("gradcheck", "Finite-difference check of every model parameter (tiny config)");
  a.model.add(cmd);
  cmd->add_option("--channels", a.channels, "Channels")->capture_default_str();
  cmd->add_option("--len", a.length, "Window length")->capture_default_str();
  cmd->add_option("--batch", a.batch, "Batch size")->capture_default_str();
  cmd->add_option("--tol", a.tol, "Relative-error tolerance")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Seed (default $MEDMAMBA_SEED or 41)");
}

int run_gradcheck(const GradArgs& a) {
  ModelConfig c = tiny_model();
  c.channels = a.channels;
  c.length = a.length;
  a.model.apply(c);
  c.validate();
  const std::size_t count = model::Model(c, 0).parameter_count();
  if (count > 10000) {
    throw UsageError("gradcheck is limited to 10^4 parameters; this config has " + std::to_string(count));
  }
  training::GradCheckOptions opt;
  opt.batch = a.batch;
  opt.seed = a.seed;
  opt.tol = a.tol;
  const auto report = training::model_grad_check(c, opt);
  std::cout << std::left;
  for (const auto& e : report.entries) {
    std::cout << std::setw(34) << e.name << " n=" << std::setw(6) << e.size << " rel=" << std::scientific
              << std::setprecision(3) << e.rel_error << "  max_abs=" << e.max_abs_error << std::defaultfloat << "  "
              << (e.passed ? "ok" : "FAIL") << '\n';
  }
  const auto* worst = report.worst();
  std::cout << (report.passed ? "PASS" : "FAIL") << ": " << report.entries.size() << " tensors, " << count
            << " parameters, worst " << (worst ? worst->name : "-") << " rel " << (worst ? worst->rel_error : 0.0)
            << " (tol " << a.tol << ")\n";
  if (!report.passed) {
    std::string names;
    for (const auto& n : report.failures()) names += (names.empty() ? "" : ", ") + n;
    throw NumericError("gradient check failed for: " + names);
  }
  return kOk;
}

// ---- bench ----

struct BenchArgs {
  std::string lens = "1024,2048,4096,8192", backend = "parallel", out;
  std::size_t d_model = 64, d_state = 16, layers = 2, channels = 12, reps = 5, batch = 1;
  std::string strides = "5,10,25";
};

void add_bench(CLI::App& app, BenchArgs& a) {
  auto* cmd = app.add_subcommand("bench", "Forward time against sequence length; CSV of (L, median_ms) and the log-log slope");
  cmd->add_option("--lens", a.lens, "Comma-separated lengths (>= 3)")->capture_default_str();
  cmd->add_option("--d-model", a.d_model, "Model width D")->capture_default_str();
  cmd->add_option("--d-state", a.d_state, "SSM state size N")->capture_default_str();
  cmd->add_option("--layers", a.layers, "Blocks per scale")->capture_default_str();
  cmd->add_option("--channels", a.channels, "Input channels")->capture_default_str();
  cmd->add_option("--strides", a.strides, "Patch strides")->capture_default_str();
  cmd->add_option("--reps", a.reps, "Timed repetitions per length")->capture_default_str();
  cmd->add_option("--batch", a.batch, "Batch size")->capture_default_str();
  cmd->add_option("--backend", a.backend, "Kernel backend")
      ->check(CLI::IsMember({"serial", "parallel"}))
      ->capture_default_str();
  cmd->add_option("-o,--out", a.out, "CSV output (default stdout)");
}

int run_bench(const BenchArgs& a) {
  const auto lens = parse_sizes(a.lens, "length");
  if (lens.size() < 3) throw UsageError("bench needs at least 3 lengths to fit a slope");
  kernels::set_default_backend(a.backend == "serial" ? kernels::Backend::serial : kernels::Backend::parallel);
  ModelConfig c;
  c.channels = a.channels;
  c.d_model = a.d_model;
  c.d_state = a.d_state;
  c.n_layer = a.layers;
  c.strides = parse_sizes(a.strides, "stride");
  const auto rep = measure_scaling(c, lens, a.reps, a.batch);
  std::ostringstream csv;
  csv.precision(6);
  csv << "L,median_ms\n";
  for (const auto& p : rep.points) csv << p.length << ',' << p.median_ms << '\n';
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream f(a.out);
    if (!f) throw IoError("cannot write " + a.out);
    f << csv.str();
  }
  std::cout << "slope " << rep.slope << "  ratios";
  for (double r : rep.doubling_ratios) std::cout << ' ' << r;
  std::cout << "  backend " << a.backend << " threads " << kernels::max_threads() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale bidirectional selective-scan classifier for multichannel time series"};
  app.require_subcommand(1);
  SynthArgs synth;
  TrainArgs train;
  EvalArgs eval;
  AnalyzeArgs analyze;
  GradArgs grad;
  BenchArgs bench;
  try {
    synth.seed = default_seed();
    grad.seed = default_seed();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  add_synth(app, synth);
  add_train(app, train);
  add_eval(app, eval);
  add_analyze(app, analyze);
  add_gradcheck(app, grad);
  add_bench(app, bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (app.got_subcommand("synth")) return run_synth(synth);
    if (app.got_subcommand("train")) return run_train(train);
    if (app.got_subcommand("eval")) return run_eval(eval);
    if (app.got_subcommand("analyze")) return run_analyze(analyze);
    if (app.got_subcommand("gradcheck")) return run_gradcheck(grad);
    if (app.got_subcommand("bench")) return run_bench(bench);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const DomainError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  }
  return kUsage;
}
