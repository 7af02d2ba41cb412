// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#include "difftune/experiment.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "difftune/text_io.hpp"

namespace difftune {

// -- ConfigFile ------------------------------------------------------------------

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw FormatError("config line " + std::to_string(line_no) + ": unterminated section");
      section = std::string(text::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key(text::trim(line.substr(0, eq)));
    if (key.empty()) throw FormatError("config line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.values_.count(full))
      throw FormatError("config line " + std::to_string(line_no) + ": duplicate key '" + full +
                        "'");
    cfg.values_[full] = std::string(text::trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ConfigFile::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InvalidArgument("override must look like section.key=value, got '" + assignment + "'");
  values_[std::string(text::trim(std::string_view(assignment).substr(0, eq)))] =
      std::string(text::trim(std::string_view(assignment).substr(eq + 1)));
}

std::string ConfigFile::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string ConfigFile::require(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end() || it->second.empty())
    throw InvalidArgument("config key '" + key + "' is required");
  return it->second;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  return text::parse_exact(it->second, key);
}

long long ConfigFile::get_int(const std::string& key, long long fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  return text::parse_integer(it->second, key);
}

std::vector<double> ConfigFile::get_doubles(const std::string& key,
                                            std::vector<double> fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  for (auto field : text::split(it->second, ',')) out.push_back(text::parse_exact(field, key));
  return out;
}

std::string ConfigFile::canonical() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
  return s;
}

std::string ConfigFile::hash() const { return text::hex64(text::fnv1a64(canonical())); }

// -- ExperimentConfig ------------------------------------------------------------

ExperimentKind parse_experiment_kind(const std::string& name) {
  static const std::map<std::string, ExperimentKind> kinds = {
      {"pretrain", ExperimentKind::kPretrain},
      {"make_bank", ExperimentKind::kMakeBank},
      {"finetune", ExperimentKind::kFinetune},
      {"forgetting_sweep", ExperimentKind::kForgettingSweep},
      {"tau_sweep", ExperimentKind::kTauSweep},
      {"bank_size_sweep", ExperimentKind::kBankSizeSweep},
      {"eval", ExperimentKind::kEval}};
  const auto it = kinds.find(name);
  if (it == kinds.end()) throw InvalidArgument("unknown experiment kind '" + name + "'");
  return it->second;
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kPretrain: return "pretrain";
    case ExperimentKind::kMakeBank: return "make_bank";
    case ExperimentKind::kFinetune: return "finetune";
    case ExperimentKind::kForgettingSweep: return "forgetting_sweep";
    case ExperimentKind::kTauSweep: return "tau_sweep";
    case ExperimentKind::kBankSizeSweep: return "bank_size_sweep";
    case ExperimentKind::kEval: return "eval";
  }
  return "unknown";
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k = {"experiment.kind", "experiment.seed", "reference.n",
                               "schedule.num_steps", "schedule.beta_start", "schedule.beta_end",
                               "model.hidden", "model.time_frequencies", "model.cond_embed_dim",
                               "model.classes", "sampler.method", "sampler.steps",
                               "sampler.cfg_weight", "sampler.clip_factor", "metrics.bandwidth",
                               "metrics.projections", "metrics.eval_samples",
                               "metrics.validation_interval", "bank.size", "sweep.taus",
                               "sweep.bank_sizes", "sweep.fractions", "io.output_dir",
                               "io.pretrained", "io.finetuned", "io.bank"};
    for (const char* s : {"source", "target"})
      for (const char* f : {"kind", "n", "centers", "weights", "sigma", "radius", "scale", "cells",
                            "rotation", "shift", "truncation"})
        k.insert(std::string(s) + "." + f);
    for (const char* s : {"pretrain", "finetune"})
      for (const char* f : {"batch_size", "learning_rate", "iterations", "cfg_dropout"})
        k.insert(std::string(s) + "." + f);
    for (const char* f : {"variant", "coefficients", "tau"}) k.insert(std::string("finetune.") + f);
    return k;
  }();
  return keys;
}

Point parse_point(std::string_view s, const std::string& key) {
  const auto fields = text::split(s, ',');
  Point p(static_cast<Eigen::Index>(fields.size()));
  for (std::size_t i = 0; i < fields.size(); ++i) p[i] = text::parse_exact(fields[i], key);
  return p;
}

/// "x,y; x,y; ..." or "circle:<count>:<radius>[:<phase>]".
std::vector<Point> parse_centers(const std::string& value, const std::string& key) {
  if (value.rfind("circle:", 0) == 0) {
    const auto parts = text::split(std::string_view(value).substr(7), ':');
    if (parts.size() < 2 || parts.size() > 3)
      throw InvalidArgument(key + ": expected circle:<count>:<radius>[:<phase>]");
    const int count = static_cast<int>(text::parse_integer(parts[0], key));
    if (count < 1) throw InvalidArgument(key + ": circle needs at least one center");
    return circle_centers(count, text::parse_exact(parts[1], key),
                          parts.size() == 3 ? text::parse_exact(parts[2], key) : 0.0);
  }
  std::vector<Point> out;
  for (auto item : text::split(value, ';'))
    if (!text::trim(item).empty()) out.push_back(parse_point(item, key));
  return out;
}

DatasetParams parse_dataset(const ConfigFile& f, const std::string& s, DatasetParams d) {
  if (f.has(s + ".kind")) d.spec.kind = parse_distribution_kind(f.get(s + ".kind", ""));
  d.n = f.get_int(s + ".n", d.n);
  if (f.has(s + ".centers")) d.spec.centers = parse_centers(f.get(s + ".centers", ""), s + ".centers");
  d.spec.weights = f.get_doubles(s + ".weights", d.spec.weights);
  d.spec.sigma = f.get_double(s + ".sigma", d.spec.sigma);
  d.spec.radius = f.get_double(s + ".radius", d.spec.radius);
  d.spec.scale = f.get_double(s + ".scale", d.spec.scale);
  d.spec.cells = static_cast<int>(f.get_int(s + ".cells", d.spec.cells));
  d.spec.rotation = f.get_double(s + ".rotation", d.spec.rotation);
  if (f.has(s + ".shift")) d.spec.shift = parse_point(f.get(s + ".shift", ""), s + ".shift");
  d.spec.truncation = f.get_double(s + ".truncation", d.spec.truncation);
  if (d.n < 1) throw InvalidArgument(s + ".n must be >= 1");
  return d;
}

TrainConfig parse_train(const ConfigFile& f, const std::string& s, TrainConfig t) {
  t.batch_size = static_cast<int>(f.get_int(s + ".batch_size", t.batch_size));
  t.adam.learning_rate = f.get_double(s + ".learning_rate", t.adam.learning_rate);
  t.iterations = f.get_int(s + ".iterations", t.iterations);
  t.cfg_dropout = f.get_double(s + ".cfg_dropout", t.cfg_dropout);
  return t;
}

std::vector<int> parse_hidden(const std::string& value) {
  std::vector<int> widths;
  for (auto w : text::split(value, 'x'))
    widths.push_back(static_cast<int>(text::parse_integer(w, "model.hidden")));
  return widths;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& f) {
  for (const auto& [key, value] : f.values())
    if (!known_keys().count(key)) throw InvalidArgument("unknown config key '" + key + "'");

  ExperimentConfig c;
  c.kind = parse_experiment_kind(f.require("experiment.kind"));
  c.seed = static_cast<Seed>(text::parse_integer(f.require("experiment.seed"), "experiment.seed"));
  c.hash = f.hash();

  DatasetParams source_default;
  source_default.spec.centers = circle_centers(4, 2.0);
  source_default.spec.sigma = 0.15;
  source_default.n = 4000;
  DatasetParams target_default = source_default;
  target_default.n = 256;
  c.source = parse_dataset(f, "source", source_default);
  c.target = parse_dataset(f, "target", target_default);
  c.reference_n = f.get_int("reference.n", c.reference_n);

  c.schedule.num_steps = static_cast<int>(f.get_int("schedule.num_steps", c.schedule.num_steps));
  c.schedule.beta_start = f.get_double("schedule.beta_start", c.schedule.beta_start);
  c.schedule.beta_end = f.get_double("schedule.beta_end", c.schedule.beta_end);
  c.schedule.build();  // validates the endpoint regime early

  if (f.has("model.hidden")) c.arch.hidden = parse_hidden(f.get("model.hidden", ""));
  c.arch.time_frequencies =
      static_cast<int>(f.get_int("model.time_frequencies", c.arch.time_frequencies));
  c.arch.cond_embed_dim = static_cast<int>(f.get_int("model.cond_embed_dim", c.arch.cond_embed_dim));
  c.arch.num_classes = static_cast<int>(f.get_int("model.classes", -1));

  c.pretrain.iterations = 5000;
  c.pretrain = parse_train(f, "pretrain", c.pretrain);
  c.pretrain.seed = derive_seed(c.seed, {5});
  c.pretrain.variant = Variant::kStandardFt;
  c.finetune.iterations = 2000;
  c.finetune = parse_train(f, "finetune", c.finetune);
  c.finetune.seed = derive_seed(c.seed, {6});
  c.finetune.variant = parse_variant(f.get("finetune.variant", "diff_tuning"));
  const std::string family = f.get("finetune.coefficients", "power");
  if (family == "power") {
    c.finetune.coefficients = CoefficientSchedule::power(f.get_double("finetune.tau", 1.0));
  } else if (family == "snr") {
    c.finetune.coefficients = CoefficientSchedule::snr_based();
  } else {
    throw InvalidArgument("finetune.coefficients must be 'power' or 'snr'");
  }
  c.pretrain.validate();
  c.finetune.validate();

  c.sampler.method = parse_sampler_method(f.get("sampler.method", "ddim"));
  c.sampler.num_sample_steps = static_cast<int>(f.get_int("sampler.steps", 50));
  c.sampler.cfg_weight = f.get_double("sampler.cfg_weight", 0.0);
  c.sampler.seed = derive_seed(c.seed, {7});
  c.clip_factor = f.get_double("sampler.clip_factor", c.clip_factor);
  sampling_timesteps(c.schedule.num_steps, c.sampler.num_sample_steps);

  const std::string bw = f.get("metrics.bandwidth", "median");
  if (bw != "median") c.metrics.bandwidth = text::parse_exact(bw, "metrics.bandwidth");
  c.metrics.num_projections = static_cast<int>(f.get_int("metrics.projections", 128));
  c.metrics.seed = derive_seed(c.seed, {9});
  c.eval_samples = f.get_int("metrics.eval_samples", c.eval_samples);
  c.validation_interval = f.get_int("metrics.validation_interval", c.validation_interval);
  if (c.eval_samples < 2) throw InvalidArgument("metrics.eval_samples must be >= 2");
  if (c.validation_interval < 0) throw InvalidArgument("metrics.validation_interval must be >= 0");

  c.bank_size = f.get_int("bank.size", c.bank_size);
  if (c.bank_size < 1) throw InvalidArgument("bank.size must be >= 1");
  c.taus = f.get_doubles("sweep.taus", c.taus);
  c.bank_sizes = f.get_doubles("sweep.bank_sizes", c.bank_sizes);
  c.fractions = f.get_doubles("sweep.fractions", c.fractions);
  for (double tau : c.taus)
    if (!(tau >= 0.0)) throw InvalidArgument("sweep.taus must be nonnegative");
  for (double m : c.bank_sizes)
    if (!(m >= 1.0) || m != std::floor(m))
      throw InvalidArgument("sweep.bank_sizes must be positive integers");

  c.io.output_dir = f.get("io.output_dir", "out");
  if (f.has("io.pretrained")) c.io.pretrained = f.get("io.pretrained", "");
  if (f.has("io.finetuned")) c.io.finetuned = f.get("io.finetuned", "");
  if (f.has("io.bank")) c.io.bank = f.get("io.bank", "");
  return c;
}

void ExperimentConfig::validate_inputs() const {
  auto need = [](const std::optional<std::filesystem::path>& p, const char* key) {
    if (!p) throw InvalidArgument(std::string("config key '") + key + "' is required");
    if (!std::filesystem::exists(*p))
      throw InvalidArgument(std::string(key) + ": file '" + p->string() + "' does not exist");
  };
  switch (kind) {
    case ExperimentKind::kPretrain: break;
    case ExperimentKind::kMakeBank:
    case ExperimentKind::kTauSweep:
    case ExperimentKind::kBankSizeSweep: need(io.pretrained, "io.pretrained"); break;
    case ExperimentKind::kFinetune:
      need(io.pretrained, "io.pretrained");
      if (io.bank && kind == ExperimentKind::kFinetune && std::filesystem::exists(*io.bank) == false)
        throw InvalidArgument("io.bank: file '" + io.bank->string() + "' does not exist");
      break;
    case ExperimentKind::kForgettingSweep:
      need(io.pretrained, "io.pretrained");
      need(io.finetuned, "io.finetuned");
      break;
    case ExperimentKind::kEval:
      if (!io.finetuned && !io.pretrained)
        throw InvalidArgument("eval needs io.finetuned or io.pretrained");
      if (io.finetuned) need(io.finetuned, "io.finetuned");
      if (io.pretrained) need(io.pretrained, "io.pretrained");
      break;
  }
}

// -- pipeline pieces ---------------------------------------------------------------

Datasets make_datasets(const ExperimentConfig& c) {
  // model.classes = 0 trains unconditional models; labels are dropped.
  auto build = [&](const DatasetParams& p, Eigen::Index n, Seed seed) {
    PointDataset d = make_distribution(p.spec, n, seed);
    return c.arch.num_classes == 0 ? PointDataset::create(d.points()) : d;
  };
  return Datasets{build(c.source, c.source.n, derive_seed(c.seed, {1})),
                  build(c.target, c.target.n, derive_seed(c.seed, {2})),
                  build(c.target, c.reference_n, derive_seed(c.seed, {3}))};
}

MlpArchitecture resolve_architecture(const ExperimentConfig& c, const Datasets& data) {
  MlpArchitecture a = c.arch;
  a.data_dim = static_cast<int>(data.source.dim());
  if (data.target.dim() != data.source.dim())
    throw InvalidArgument("source and target dimensions differ");
  if (a.num_classes < 0)
    a.num_classes = std::max(data.source.num_classes(), data.target.num_classes());
  if (a.num_classes < std::max(data.source.num_classes(), data.target.num_classes()))
    throw InvalidArgument("model.classes is smaller than the datasets' class count");
  return a;
}

SamplerConfig resolve_sampler(const ExperimentConfig& c, const Datasets& data) {
  SamplerConfig s = c.sampler;
  if (c.clip_factor > 0.0)
    s.clip = c.clip_factor * std::max(data.source.bound(), data.target.bound());
  return s;
}

MlpDenoiser pretrain_model(const MlpArchitecture& arch, const TrainConfig& config,
                           const NoiseSchedule& schedule, const PointDataset& source,
                           const TrainLogSink& sink) {
  MlpDenoiser model = MlpDenoiser::initialize(arch, derive_seed(config.seed, {4}));
  Trainer trainer = Trainer::pretraining(model, config, schedule, source);
  for (long it = 0; it < config.iterations; ++it) {
    StepRecord rec;
    try {
      rec = trainer.step(it);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (iteration " + std::to_string(it) + ")", it);
    }
    if (sink) sink(TrainLogRow{it, std::nullopt, rec.adaptation_loss, std::nullopt, std::nullopt});
  }
  return model;
}

MemoryBank generate_bank(const MlpDenoiser& model, const NoiseSchedule& schedule,
                         const SamplerConfig& sampler, Eigen::Index size,
                         const std::string& model_id) {
  MemoryBank bank;
  bank.samples = sample(model, schedule, sampler, size).points();
  bank.condition = Condition::unconditional();
  bank.provenance = BankProvenance{model_id, to_string(sampler.method), sampler.num_sample_steps,
                                   sampler.seed};
  return bank;
}

MlpDenoiser finetune_model(const MlpDenoiser& pretrained, const TrainConfig& config,
                           const NoiseSchedule& schedule, const PointDataset& downstream,
                           const MemoryBank* bank, const ValidationSpec& validation,
                           const TrainLogSink& sink) {
  const PretrainedSnapshot snapshot(pretrained.params());
  MlpDenoiser model = pretrained;
  Trainer trainer(model, config, schedule, downstream, bank);
  for (long it = 0; it < config.iterations; ++it) {
    StepRecord rec;
    try {
      rec = trainer.step(it);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (iteration " + std::to_string(it) + ")", it);
    }
    if (!sink) continue;
    TrainLogRow row{it, rec.retention_loss, rec.adaptation_loss, ewc_l2(model.params(), snapshot),
                    std::nullopt};
    const bool last = it + 1 == config.iterations;
    if (validation.interval > 0 && validation.reference &&
        ((it + 1) % validation.interval == 0 || last)) {
      const PointDataset gen = sample(model, schedule, validation.sampler, validation.num_samples);
      row.validation_mmd = mmd_rbf(gen.points(), validation.reference->points(),
                                   validation.metrics.bandwidth);
    }
    sink(row);
  }
  return model;
}

// -- runner -------------------------------------------------------------------------

std::string artifact_header(const ExperimentConfig& c) {
  return "# difftune " + to_string(c.kind) + " config_hash=" + c.hash +
         " seed=" + std::to_string(c.seed);
}

namespace {

std::string fmt(double v) { return text::format_exact(v); }
std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& header_comment,
            const std::string& columns)
      : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out_ << header_comment << '\n' << columns << '\n';
  }
  void row(const std::string& line) { out_ << line << '\n'; }
  void finish(const std::string& status) {
    out_ << "# status=" << status << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("write failed for '" + path_.string() + "'");
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

std::string log_columns() {
  return "iteration,retention_loss,adaptation_loss,ewc,ewc_mean,validation_mmd";
}

std::string log_line(const TrainLogRow& r) {
  std::ostringstream os;
  os << r.iteration << ',' << fmt(r.retention_loss) << ',' << fmt(r.adaptation_loss) << ','
     << (r.ewc ? fmt(r.ewc->total) : "") << ',' << (r.ewc ? fmt(r.ewc->mean) : "") << ','
     << fmt(r.validation_mmd);
  return os.str();
}

struct Loaded {
  Datasets data;
  NoiseSchedule schedule;
  SamplerConfig sampler;
};

Loaded prepare(const ExperimentConfig& c) {
  Datasets data = make_datasets(c);
  SamplerConfig sampler = resolve_sampler(c, data);
  return Loaded{std::move(data), c.schedule.build(), sampler};
}

MlpDenoiser load_model(const std::filesystem::path& path, const MlpArchitecture& expected) {
  MlpDenoiser m = load_checkpoint(path);
  if (m.arch().data_dim != expected.data_dim)
    throw InvalidArgument("checkpoint '" + path.string() + "' has a different data dimension");
  return m;
}

SamplerConfig bank_sampler(const ExperimentConfig& c, SamplerConfig s) {
  s.seed = derive_seed(c.seed, {8});
  return s;
}

/// Loads io.bank when given, otherwise samples one from the pre-trained
/// model and stores it next to the other outputs.
MemoryBank obtain_bank(const ExperimentConfig& c, const Loaded& l, const MlpDenoiser& pretrained,
                       Eigen::Index size) {
  if (c.io.bank) return load_memory_bank(*c.io.bank, pretrained.dim());
  MemoryBank bank = generate_bank(pretrained, l.schedule, bank_sampler(c, l.sampler), size,
                                  c.io.pretrained ? c.io.pretrained->filename().string() : "model");
  save_memory_bank(bank, c.io.output_dir / "bank.csv");
  return bank;
}

ValidationSpec validation_for(const ExperimentConfig& c, const Loaded& l) {
  ValidationSpec v;
  v.interval = c.validation_interval;
  v.reference = &l.data.reference;
  v.sampler = l.sampler;
  v.num_samples = c.eval_samples;
  v.metrics = c.metrics;
  return v;
}

bool needs_bank(Variant v, const CoefficientSchedule& coeffs, const NoiseSchedule& schedule) {
  return make_branch_plan(v, coeffs, schedule).retention.has_value();
}

/// Fine-tunes one sweep cell and returns its evaluation.
struct CellResult {
  MetricReport report;
  StepRecord last;
};

CellResult run_cell(const ExperimentConfig& c, const Loaded& l, const MlpDenoiser& pretrained,
                    TrainConfig train, const MemoryBank* bank, const std::filesystem::path& log) {
  CsvWriter writer(log, artifact_header(c), log_columns());
  CellResult out;
  try {
    const MlpDenoiser tuned =
        finetune_model(pretrained, train, l.schedule, l.data.target, bank, ValidationSpec{},
                       [&](const TrainLogRow& r) {
                         writer.row(log_line(r));
                         out.last = StepRecord{r.iteration, r.retention_loss, r.adaptation_loss};
                       });
    const PointDataset gen = sample(tuned, l.schedule, l.sampler, c.eval_samples);
    out.report = evaluate_samples(gen, l.data.reference, c.metrics);
    out.report.ewc = ewc_l2(tuned.params(), PretrainedSnapshot(pretrained.params())).total;
  } catch (const NumericalError& e) {
    writer.finish("incomplete failed_iteration=" + std::to_string(e.where()));
    throw;
  }
  writer.finish("complete");
  return out;
}

int run_pretrain(const ExperimentConfig& c, const Loaded& l) {
  const MlpArchitecture arch = resolve_architecture(c, l.data);
  CsvWriter writer(c.io.output_dir / "pretrain_log.csv", artifact_header(c), log_columns());
  try {
    const MlpDenoiser model =
        pretrain_model(arch, c.pretrain, l.schedule, l.data.source,
                       [&](const TrainLogRow& r) { writer.row(log_line(r)); });
    save_checkpoint(model, c.io.output_dir / "pretrained.ckpt");
  } catch (const NumericalError& e) {
    writer.finish("incomplete failed_iteration=" + std::to_string(e.where()));
    throw;
  }
  writer.finish("complete");
  return 0;
}

int run_make_bank(const ExperimentConfig& c, const Loaded& l) {
  const MlpDenoiser pretrained = load_model(*c.io.pretrained, resolve_architecture(c, l.data));
  const MemoryBank bank = generate_bank(pretrained, l.schedule, bank_sampler(c, l.sampler),
                                        c.bank_size, c.io.pretrained->filename().string());
  save_memory_bank(bank, c.io.bank ? *c.io.bank : c.io.output_dir / "bank.csv");
  return 0;
}

int run_finetune(const ExperimentConfig& c, const Loaded& l) {
  const MlpDenoiser pretrained = load_model(*c.io.pretrained, resolve_architecture(c, l.data));
  std::optional<MemoryBank> bank;
  if (needs_bank(c.finetune.variant, c.finetune.coefficients, l.schedule))
    bank = obtain_bank(c, l, pretrained, c.bank_size);

  CsvWriter writer(c.io.output_dir / "finetune_log.csv", artifact_header(c), log_columns());
  try {
    const MlpDenoiser tuned =
        finetune_model(pretrained, c.finetune, l.schedule, l.data.target,
                       bank ? &*bank : nullptr, validation_for(c, l),
                       [&](const TrainLogRow& r) { writer.row(log_line(r)); });
    save_checkpoint(tuned, c.io.output_dir / "finetuned.ckpt");
  } catch (const NumericalError& e) {
    writer.finish("incomplete failed_iteration=" + std::to_string(e.where()));
    throw;
  }
  writer.finish("complete");
  return 0;
}

int run_forgetting_sweep(const ExperimentConfig& c, const Loaded& l) {
  const MlpArchitecture arch = resolve_architecture(c, l.data);
  const MlpDenoiser pretrained = load_model(*c.io.pretrained, arch);
  const MlpDenoiser finetuned = load_model(*c.io.finetuned, arch);
  const auto rows = forgetting_curve(finetuned, pretrained, l.schedule, l.sampler, c.eval_samples,
                                     c.fractions, l.data.reference, c.metrics);
  CsvWriter writer(c.io.output_dir / "forgetting.csv", artifact_header(c),
                   "switch_fraction," + metric_csv_header());
  for (const ForgettingRow& r : rows) writer.row(fmt(r.switch_fraction) + "," + metric_csv_row(r.metrics));
  writer.finish("complete");
  return 0;
}

std::string summary_columns(const std::string& first) {
  return first + ",final_retention_loss,final_adaptation_loss," + metric_csv_header();
}

std::string summary_line(const std::string& first, const CellResult& r) {
  return first + "," + fmt(r.last.retention_loss) + "," + fmt(r.last.adaptation_loss) + "," +
         metric_csv_row(r.report);
}

int run_tau_sweep(const ExperimentConfig& c, const Loaded& l) {
  const MlpDenoiser pretrained = load_model(*c.io.pretrained, resolve_architecture(c, l.data));
  std::optional<MemoryBank> bank;
  CsvWriter writer(c.io.output_dir / "tau_sweep.csv", artifact_header(c), summary_columns("tau"));
  for (std::size_t i = 0; i < c.taus.size(); ++i) {
    TrainConfig train = c.finetune;
    train.variant = Variant::kDiffTuning;
    train.coefficients = CoefficientSchedule::power(c.taus[i]);
    train.seed = derive_seed(c.finetune.seed, {i});
    if (!bank && needs_bank(train.variant, train.coefficients, l.schedule))
      bank = obtain_bank(c, l, pretrained, c.bank_size);
    const CellResult r = run_cell(c, l, pretrained, train, bank ? &*bank : nullptr,
                                  c.io.output_dir / ("tau_cell" + std::to_string(i) + "_log.csv"));
    writer.row(summary_line(fmt(c.taus[i]), r));
  }
  writer.finish("complete");
  return 0;
}

int run_bank_size_sweep(const ExperimentConfig& c, const Loaded& l) {
  const MlpDenoiser pretrained = load_model(*c.io.pretrained, resolve_architecture(c, l.data));
  CsvWriter writer(c.io.output_dir / "bank_size_sweep.csv", artifact_header(c),
                   summary_columns("bank_size"));
  for (std::size_t i = 0; i < c.bank_sizes.size(); ++i) {
    const auto size = static_cast<Eigen::Index>(c.bank_sizes[i]);
    const MemoryBank bank = generate_bank(pretrained, l.schedule, bank_sampler(c, l.sampler), size,
                                          c.io.pretrained->filename().string());
    TrainConfig train = c.finetune;
    train.variant = Variant::kDiffTuning;
    train.seed = derive_seed(c.finetune.seed, {i});
    const CellResult r =
        run_cell(c, l, pretrained, train, &bank,
                 c.io.output_dir / ("bank_cell" + std::to_string(i) + "_log.csv"));
    writer.row(summary_line(std::to_string(size), r));
  }
  writer.finish("complete");
  return 0;
}

int run_eval(const ExperimentConfig& c, const Loaded& l) {
  const MlpArchitecture arch = resolve_architecture(c, l.data);
  std::optional<MlpDenoiser> pretrained;
  if (c.io.pretrained) pretrained = load_model(*c.io.pretrained, arch);
  const MlpDenoiser model = c.io.finetuned ? load_model(*c.io.finetuned, arch) : *pretrained;
  const PointDataset gen = sample(model, l.schedule, l.sampler, c.eval_samples);
  MetricReport report = evaluate_samples(gen, l.data.reference, c.metrics);
  if (c.io.finetuned && pretrained)
    report.ewc = ewc_l2(model.params(), PretrainedSnapshot(pretrained->params())).total;

  CsvWriter writer(c.io.output_dir / "eval.csv", artifact_header(c), metric_csv_header());
  writer.row(metric_csv_row(report));
  writer.finish("complete");

  nlohmann::ordered_json j;
  j["config_hash"] = c.hash;
  j["seed"] = c.seed;
  j["mmd"] = report.mmd;
  j["sliced_wasserstein"] = report.sliced_wasserstein;
  j["nearest_sample_mean_dist"] = report.nearest_sample_mean_dist;
  j["ewc"] = report.ewc ? nlohmann::ordered_json(*report.ewc) : nlohmann::ordered_json(nullptr);
  j["num_samples"] = report.num_samples;
  j["num_reference"] = report.num_reference;
  j["bandwidth"] = report.bandwidth;
  j["num_projections"] = report.num_projections;
  j["metric_seed"] = report.seed;
  std::ofstream(c.io.output_dir / "eval.json", std::ios::binary | std::ios::trunc)
      << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int run_experiment(const ExperimentConfig& c) {
  c.validate_inputs();
  std::filesystem::create_directories(c.io.output_dir);
  const Loaded l = prepare(c);
  switch (c.kind) {
    case ExperimentKind::kPretrain: return run_pretrain(c, l);
    case ExperimentKind::kMakeBank: return run_make_bank(c, l);
    case ExperimentKind::kFinetune: return run_finetune(c, l);
    case ExperimentKind::kForgettingSweep: return run_forgetting_sweep(c, l);
    case ExperimentKind::kTauSweep: return run_tau_sweep(c, l);
    case ExperimentKind::kBankSizeSweep: return run_bank_size_sweep(c, l);
    case ExperimentKind::kEval: return run_eval(c, l);
  }
  return 2;
}

}  // namespace difftune
