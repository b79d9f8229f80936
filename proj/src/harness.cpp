#include "xplt/harness.hpp"

#include "xplt/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace xplt {

namespace {

constexpr uint64_t kTrainSetTag = 0x747261696e536574ull;
constexpr uint64_t kValSetTag = 0x76616c53657400ull;

std::string fmt_double(double v) {
  if (!std::isfinite(v)) throw Error("refusing to serialize a non-finite metric value");
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_float(float v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_fixed(double v, int decimals) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

float parse_float_value(const std::string& key, const std::string& value) {
  float out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size())
    throw ConfigError("setting '" + key + "' needs a number, got '" + value + "'");
  return out;
}

int parse_int_value(const std::string& key, const std::string& value) {
  int out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size())
    throw ConfigError("setting '" + key + "' needs an integer, got '" + value + "'");
  return out;
}

bool parse_bool_value(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw ConfigError("setting '" + key + "' needs a boolean, got '" + value + "'");
}

std::string csv_join(const std::vector<std::string>& fields) {
  std::string out;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  out += '\n';
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << content;
  if (!f.flush()) throw IoError("failed writing '" + path + "'");
}

std::string method_color(const std::string& method) {
  static const std::map<std::string, std::string> colors = {
      {"vanilla", "#1f77b4"},          {"focal", "#9467bd"},
      {"gradreg", "#ff7f0e"},          {"two_stage", "#2ca02c"},
      {"two_stage_sparse", "#17becf"}, {"ablation_no_mapper", "#8c564b"},
      {"ablation_joint", "#d62728"}};
  auto it = colors.find(method);
  return it == colors.end() ? "#7f7f7f" : it->second;
}

bool has_transfer_counterpart(DataKind kind) {
  return kind == DataKind::triangle || kind == DataKind::foxcat;
}

}  // namespace

uint64_t seed_salt() {
  const char* env = std::getenv("XPLT_SEED_SALT");
  if (env == nullptr || *env == '\0') return 0;
  std::string s(env);
  uint64_t out = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec == std::errc{} && res.ptr == s.data() + s.size()) return out;
  return fnv1a64(s.data(), s.size());
}

uint64_t trial_dataset_seed(uint64_t seed) { return mix64(seed ^ kTrainSetTag ^ seed_salt()); }

uint64_t trial_validation_seed(uint64_t seed) { return mix64(seed ^ kValSetTag ^ seed_salt()); }

MapperKind method_mapper(const std::string& method) {
  if (method == "two_stage" || method == "two_stage_sparse" || method == "ablation_joint")
    return MapperKind::channel_linear;
  return MapperKind::none;
}

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "optimizer")
    cfg.optimizer = value;
  else if (key == "stage2_optimizer")
    cfg.stage2_optimizer = value;
  else if (key == "eta1")
    cfg.eta1 = parse_float_value(key, value);
  else if (key == "eta2")
    cfg.eta2 = parse_float_value(key, value);
  else if (key == "lambda")
    cfg.lambda = parse_float_value(key, value);
  else if (key == "gamma")
    cfg.gamma = parse_float_value(key, value);
  else if (key == "alpha")
    cfg.alpha = parse_float_value(key, value);
  else if (key == "gradreg_raw_diff")
    cfg.gradreg_raw_diff = parse_bool_value(key, value);
  else if (key == "batch_size")
    cfg.batch_size = parse_int_value(key, value);
  else if (key == "max_epochs")
    cfg.max_epochs = parse_int_value(key, value);
  else if (key == "patience")
    cfg.patience = parse_int_value(key, value);
  else if (key == "restore_best")
    cfg.restore_best = parse_bool_value(key, value);
  else
    throw ConfigError("unknown setting '" + key + "'");
}

Overrides parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file '" + path + "'");
  Overrides out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string text = trim(line);
    if (text.empty()) continue;
    size_t eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config file '" + path + "' line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config file '" + path + "' line " + std::to_string(lineno) +
                        ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::string run_id_for(const RunSetup& setup) {
  const TrainConfig& c = setup.cfg;
  std::string s;
  s += "method=" + setup.method;
  s += ";kind=" + kind_name(setup.data.kind);
  s += ";size=" + std::to_string(setup.data.size);
  s += ";ratio=" + setup.data.class_ratio;
  s += ";spurious=" + std::to_string(setup.data.spurious ? 1 : 0);
  s += ";sparse=" + std::to_string(setup.data.sparse ? 1 : 0);
  s += ";mapper=" + mapper_name(setup.mapper);
  s += ";optimizer=" + c.optimizer;
  s += ";stage2_optimizer=" + c.stage2_optimizer;
  s += ";eta1=" + fmt_float(c.eta1);
  s += ";eta2=" + fmt_float(c.eta2);
  s += ";lambda=" + fmt_float(c.lambda);
  s += ";gamma=" + fmt_float(c.gamma);
  s += ";alpha=" + fmt_float(c.alpha);
  s += ";gradreg_raw_diff=" + std::to_string(c.gradreg_raw_diff ? 1 : 0);
  s += ";batch_size=" + std::to_string(c.batch_size);
  s += ";max_epochs=" + std::to_string(c.max_epochs);
  s += ";patience=" + std::to_string(c.patience);
  s += ";restore_best=" + std::to_string(c.restore_best ? 1 : 0);
  s += ";data_seed=" + std::to_string(setup.data_seed);
  s += ";salt=" + std::to_string(seed_salt());
  s += ";seed=" + std::to_string(setup.seed);
  uint64_t h = fnv1a64(s.data(), s.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf).substr(0, 12);
}

RunSetup plan_run(const DataSpec& data, const std::string& method, uint64_t seed,
                  const Overrides& overrides) {
  RunSetup s;
  s.data = data;
  s.method = method;
  s.seed = seed;
  s.mapper = method_mapper(method);
  s.cfg = TrainConfig::defaults_for(method, data.class_ratio, data.spurious);
  for (const auto& [key, value] : overrides) {
    if (key == "mapper")
      s.mapper = parse_mapper(value);
    else
      apply_override(s.cfg, key, value);
  }
  s.cfg.method = method;
  s.cfg.seed = seed;
  s.cfg.validate();
  s.data_seed = trial_dataset_seed(seed);
  s.run_id = run_id_for(s);
  return s;
}

std::string metrics_header() {
  return "run_id,method,dataset,size,class_ratio,spurious,sparse,seed,epoch,split,metric,value";
}

std::string metrics_line(const MetricsRow& row) {
  return csv_join({row.run_id, row.method, row.dataset, std::to_string(row.size),
                   row.class_ratio, row.spurious ? "1" : "0", row.sparse ? "1" : "0",
                   std::to_string(row.seed), std::to_string(row.epoch), row.split, row.metric,
                   fmt_double(row.value)});
}

RunResult execute_run(const RunSetup& setup, const Dataset& train_ds, const Dataset& val_ds,
                      const Dataset& test_ds, const Dataset* transfer_ds,
                      const std::string& out_dir) {
  RunResult r;
  r.setup = setup;
  try {
    Model model = build_model(ArchSpec::synthetic(setup.mapper), setup.seed);
    r.record = train(model, train_ds, val_ds, test_ds, setup.cfg);
    if (transfer_ds != nullptr) {
      r.transfer_dataset = kind_name(transfer_ds->kind);
      r.transfer_accuracy = transfer_accuracy(model, setup.data.kind, *transfer_ds);
    }
    fs::path dir = fs::path(out_dir) / "runs" / setup.run_id;
    fs::create_directories(dir);
    r.ok = true;
    write_record_json(r, (dir / "record.json").string());
    save_checkpoint(model, (dir / "model.ckpt").string());
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

std::vector<MetricsRow> run_metrics(const RunResult& result) {
  if (!result.ok) return {};
  const RunSetup& s = result.setup;
  const RunRecord& rec = result.record;
  MetricsRow base;
  base.run_id = s.run_id;
  base.method = s.method;
  base.dataset = kind_name(s.data.kind);
  base.size = s.data.size;
  base.class_ratio = s.data.class_ratio;
  base.spurious = s.data.spurious;
  base.sparse = s.data.sparse;
  base.seed = s.seed;

  const bool staged = s.method == "two_stage" || s.method == "two_stage_sparse" ||
                      s.method == "ablation_no_mapper" || s.method == "ablation_joint";
  const bool regularized = s.method == "gradreg";

  std::vector<MetricsRow> rows;
  for (int e = 1; e <= rec.total_epochs; ++e) {
    MetricsRow row = base;
    row.epoch = e;
    row.split = "train";
    row.metric = "loss";
    row.value = rec.train_losses[static_cast<size_t>(e - 1)];
    rows.push_back(row);
    if (staged) {
      row.metric = "feature_loss";
      row.value = rec.feature_losses[static_cast<size_t>(e - 1)];
      rows.push_back(row);
    }
    if (regularized) {
      row.metric = "expl_loss";
      row.value = rec.expl_losses[static_cast<size_t>(e - 1)];
      rows.push_back(row);
    }
    row.split = "val";
    row.metric = "accuracy";
    row.value = rec.val_accuracies[static_cast<size_t>(e - 1)];
    rows.push_back(row);
  }

  const int eval_epoch = rec.config.restore_best ? rec.best_epoch : rec.total_epochs;
  MetricsRow test = base;
  test.epoch = eval_epoch;
  test.split = "test";
  test.metric = "accuracy";
  test.value = rec.test_accuracy;
  rows.push_back(test);
  if (result.transfer_accuracy >= 0) {
    MetricsRow tr = base;
    tr.epoch = eval_epoch;
    tr.split = "transfer";
    tr.metric = "accuracy";
    tr.value = result.transfer_accuracy;
    rows.push_back(tr);
  }
  return rows;
}

void append_metrics(const std::string& out_dir, const std::vector<MetricsRow>& rows) {
  fs::create_directories(out_dir);
  fs::path path = fs::path(out_dir) / "metrics.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) throw IoError("cannot open '" + path.string() + "' for appending");
  if (fresh) f << metrics_header() << '\n';
  for (const MetricsRow& row : rows) f << metrics_line(row);
  if (!f.flush()) throw IoError("failed writing '" + path.string() + "'");
}

void write_record_json(const RunResult& result, const std::string& path) {
  const RunSetup& s = result.setup;
  const RunRecord& rec = result.record;
  json j;
  j["run_id"] = s.run_id;
  j["method"] = s.method;
  j["seed"] = s.seed;
  j["seed_salt"] = seed_salt();
  j["dataset"] = {{"kind", kind_name(s.data.kind)},
                  {"size", s.data.size},
                  {"class_ratio", s.data.class_ratio},
                  {"spurious", s.data.spurious},
                  {"sparse_explanations", s.data.sparse},
                  {"seed", s.data_seed},
                  {"path", s.dataset_path.empty() ? json(nullptr) : json(s.dataset_path)}};
  j["mapper"] = mapper_name(s.mapper);
  j["config"] = {{"optimizer", rec.config.optimizer},
                 {"stage2_optimizer", rec.config.stage2_optimizer},
                 {"eta1", rec.config.eta1},
                 {"eta2", rec.config.eta2},
                 {"lambda", rec.config.lambda},
                 {"gamma", rec.config.gamma},
                 {"alpha", rec.config.alpha},
                 {"gradreg_raw_diff", rec.config.gradreg_raw_diff},
                 {"batch_size", rec.config.batch_size},
                 {"max_epochs", rec.config.max_epochs},
                 {"patience", rec.config.patience},
                 {"restore_best", rec.config.restore_best}};
  j["train_losses"] = rec.train_losses;
  j["feature_losses"] = rec.feature_losses;
  j["expl_losses"] = rec.expl_losses;
  j["val_accuracies"] = rec.val_accuracies;
  j["best_epoch"] = rec.best_epoch;
  j["total_epochs"] = rec.total_epochs;
  j["best_val_accuracy"] = rec.best_val_accuracy;
  j["test_accuracy"] = rec.test_accuracy;
  if (result.transfer_accuracy >= 0)
    j["transfer"] = {{"dataset", result.transfer_dataset},
                     {"accuracy", result.transfer_accuracy}};
  else
    j["transfer"] = nullptr;
  write_text_file(path, j.dump(2) + "\n");
}

RunResult run_from_directory(const std::string& dataset_dir, const std::string& method,
                             uint64_t seed, const Overrides& overrides,
                             const std::string& out_dir) {
  Dataset train_ds = load_dataset(dataset_dir);
  DataSpec spec;
  spec.kind = train_ds.kind;
  spec.size = train_ds.size;
  spec.class_ratio = train_ds.class_ratio;
  spec.spurious = train_ds.spurious;
  spec.sparse = train_ds.sparse_explanations;

  RunSetup setup = plan_run(spec, method, seed, overrides);
  setup.data_seed = train_ds.seed;
  setup.dataset_path = dataset_dir;
  setup.run_id = run_id_for(setup);

  Dataset val_ds = make_validation_set(train_ds, trial_validation_seed(seed));
  Dataset test_ds = canonical_test_set(spec.kind);
  std::optional<Dataset> transfer_ds;
  if (has_transfer_counterpart(spec.kind))
    transfer_ds = canonical_test_set(transfer_kind(spec.kind));

  RunResult r = execute_run(setup, train_ds, val_ds, test_ds,
                            transfer_ds ? &*transfer_ds : nullptr, out_dir);
  if (r.ok) append_metrics(out_dir, run_metrics(r));
  return r;
}

SweepConfig preset_sweep(const std::string& name) {
  SweepConfig cfg;
  cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  if (name == "triangle-50-balanced") {
    cfg.data = {DataKind::triangle, 50, "1:1", false, false};
    cfg.methods = {"vanilla", "gradreg", "two_stage"};
    return cfg;
  }
  if (name == "spurious-triangle-100") {
    cfg.data = {DataKind::triangle, 100, "1:1", true, false};
    cfg.methods = {"vanilla", "two_stage"};
    return cfg;
  }
  std::string known;
  for (const std::string& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (available: " + known + ")");
}

std::vector<std::string> preset_names() {
  return {"triangle-50-balanced", "spurious-triangle-100"};
}

SweepResult run_sweep(const SweepConfig& cfg) {
  if (cfg.methods.empty()) throw ConfigError("sweep needs at least one method");
  if (cfg.seeds.empty()) throw ConfigError("sweep needs at least one seed");
  if (std::set<uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size())
    throw ConfigError("sweep seeds must be distinct");

  std::vector<RunSetup> setups;
  for (const std::string& method : cfg.methods)
    for (uint64_t seed : cfg.seeds) setups.push_back(plan_run(cfg.data, method, seed, cfg.overrides));

  // One training/validation draw per seed, shared across methods.
  std::map<uint64_t, Dataset> train_sets, val_sets;
  for (uint64_t seed : cfg.seeds) {
    Dataset ds = build_dataset(cfg.data.kind, cfg.data.size, cfg.data.class_ratio,
                               trial_dataset_seed(seed), cfg.data.spurious, cfg.data.sparse);
    val_sets.emplace(seed, make_validation_set(ds, trial_validation_seed(seed)));
    train_sets.emplace(seed, std::move(ds));
  }
  Dataset test_ds = canonical_test_set(cfg.data.kind);
  std::optional<Dataset> transfer_ds;
  if (has_transfer_counterpart(cfg.data.kind))
    transfer_ds = canonical_test_set(transfer_kind(cfg.data.kind));

  fs::create_directories(fs::path(cfg.out_dir) / "runs");

  SweepResult result;
  result.runs.resize(setups.size());
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (size_t i; (i = next.fetch_add(1)) < setups.size();) {
      const RunSetup& setup = setups[i];
      result.runs[i] = execute_run(setup, train_sets.at(setup.seed), val_sets.at(setup.seed),
                                   test_ds, transfer_ds ? &*transfer_ds : nullptr, cfg.out_dir);
    }
  };
  const int n_threads =
      std::max(1, std::min<int>(cfg.jobs, static_cast<int>(setups.size())));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  for (const RunResult& r : result.runs) result.n_failed += r.ok ? 0 : 1;

  // metrics.csv rows in grid order, through the single writer.
  std::vector<MetricsRow> rows;
  for (const RunResult& r : result.runs) {
    std::vector<MetricsRow> rr = run_metrics(r);
    rows.insert(rows.end(), rr.begin(), rr.end());
  }
  append_metrics(cfg.out_dir, rows);

  std::vector<std::string> methods_sorted(cfg.methods);
  std::sort(methods_sorted.begin(), methods_sorted.end());
  methods_sorted.erase(std::unique(methods_sorted.begin(), methods_sorted.end()),
                       methods_sorted.end());

  auto runs_of = [&](const std::string& method) {
    std::vector<const RunResult*> out;
    for (const RunResult& r : result.runs)
      if (r.setup.method == method) out.push_back(&r);
    return out;
  };

  // summary.csv: one row per method, failures flagged.
  std::string summary = csv_join({"method", "dataset", "size", "class_ratio", "spurious",
                                  "sparse", "n_trials", "n_failed", "mean_test_accuracy",
                                  "std_test_accuracy", "mean_epochs_to_best"});
  for (const std::string& method : methods_sorted) {
    std::vector<double> accs, epochs;
    int failed = 0;
    for (const RunResult* r : runs_of(method)) {
      if (!r->ok) {
        ++failed;
        continue;
      }
      accs.push_back(r->record.test_accuracy);
      epochs.push_back(static_cast<double>(r->record.best_epoch));
    }
    std::vector<std::string> fields = {method,
                                       kind_name(cfg.data.kind),
                                       std::to_string(cfg.data.size),
                                       cfg.data.class_ratio,
                                       cfg.data.spurious ? "1" : "0",
                                       cfg.data.sparse ? "1" : "0",
                                       std::to_string(accs.size()),
                                       std::to_string(failed)};
    if (!accs.empty()) {
      TrialSummary ts = aggregate_trials(method, kind_name(cfg.data.kind), accs, epochs);
      fields.push_back(fmt_double(ts.mean_acc));
      fields.push_back(fmt_double(ts.std_acc));
      fields.push_back(fmt_double(ts.mean_epochs));
    } else {
      fields.insert(fields.end(), {"", "", ""});
    }
    summary += csv_join(fields);
  }
  write_text_file((fs::path(cfg.out_dir) / "summary.csv").string(), summary);

  // agreement.csv: pairwise prediction agreement on the standard test set.
  std::string agreement = csv_join({"method", "dataset", "n_models", "mean_agreement"});
  for (const std::string& method : methods_sorted) {
    std::vector<Model> models;
    for (const RunResult* r : runs_of(method))
      if (r->ok)
        models.push_back(load_checkpoint(
            (fs::path(cfg.out_dir) / "runs" / r->setup.run_id / "model.ckpt").string()));
    if (models.size() < 2) continue;
    std::vector<const Model*> ptrs;
    for (const Model& m : models) ptrs.push_back(&m);
    AgreementMatrix mat = pairwise_agreement(ptrs, test_ds);
    agreement += csv_join({method, kind_name(test_ds.kind), std::to_string(models.size()),
                           fmt_double(mat.mean_agreement)});
  }
  write_text_file((fs::path(cfg.out_dir) / "agreement.csv").string(), agreement);

  // transfer.csv: accuracy on the derived-rule test set, when one exists.
  if (transfer_ds) {
    std::string transfer =
        csv_join({"method", "transfer_dataset", "n_trials", "mean_accuracy", "std_accuracy"});
    for (const std::string& method : methods_sorted) {
      std::vector<double> accs, epochs;
      for (const RunResult* r : runs_of(method))
        if (r->ok && r->transfer_accuracy >= 0) {
          accs.push_back(r->transfer_accuracy);
          epochs.push_back(0);
        }
      if (accs.empty()) continue;
      TrialSummary ts = aggregate_trials(method, kind_name(transfer_ds->kind), accs, epochs);
      transfer += csv_join({method, kind_name(transfer_ds->kind), std::to_string(accs.size()),
                            fmt_double(ts.mean_acc), fmt_double(ts.std_acc)});
    }
    write_text_file((fs::path(cfg.out_dir) / "transfer.csv").string(), transfer);
  }

  // Learning curves for this sweep's runs only (metrics.csv may hold more).
  if (!rows.empty()) {
    PlotSelector sel;
    sel.split = "val";
    sel.metric = "accuracy";
    write_text_file((fs::path(cfg.out_dir) / "curves.svg").string(),
                    render_curves_svg(rows, sel));
  }
  return result;
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read metrics file '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) throw IoError("metrics file '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != metrics_header())
    throw IoError("metrics file '" + path + "' has an unexpected header");

  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 12)
      throw IoError("metrics file '" + path + "' line " + std::to_string(lineno) +
                    ": expected 12 fields, got " + std::to_string(fields.size()));
    MetricsRow row;
    row.run_id = fields[0];
    row.method = fields[1];
    row.dataset = fields[2];
    row.size = parse_int_value("size", fields[3]);
    row.class_ratio = fields[4];
    row.spurious = fields[5] == "1";
    row.sparse = fields[6] == "1";
    row.seed = static_cast<uint64_t>(std::stoull(fields[7]));
    row.epoch = parse_int_value("epoch", fields[8]);
    row.split = fields[9];
    row.metric = fields[10];
    double v = 0;
    auto res = std::from_chars(fields[11].data(), fields[11].data() + fields[11].size(), v);
    if (res.ec != std::errc{})
      throw IoError("metrics file '" + path + "' line " + std::to_string(lineno) +
                    ": bad value '" + fields[11] + "'");
    row.value = v;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_curves_svg(const std::vector<MetricsRow>& rows, const PlotSelector& sel) {
  // method -> epoch -> values across runs
  std::map<std::string, std::map<int, std::vector<double>>> series;
  for (const MetricsRow& row : rows) {
    if (row.split != sel.split || row.metric != sel.metric) continue;
    if (!sel.dataset.empty() && row.dataset != sel.dataset) continue;
    if (sel.size != 0 && row.size != sel.size) continue;
    if (!sel.methods.empty() &&
        std::find(sel.methods.begin(), sel.methods.end(), row.method) == sel.methods.end())
      continue;
    series[row.method][row.epoch].push_back(row.value);
  }
  if (series.empty())
    throw ConfigError("plot selection (split=" + sel.split + ", metric=" + sel.metric +
                      ") matched no metrics rows");

  struct Point {
    int epoch;
    double mean, sd;
    int n;
  };
  std::map<std::string, std::vector<Point>> curves;
  int emin = 0, emax = 0;
  double vmax = 0;
  bool first = true;
  for (const auto& [method, by_epoch] : series) {
    std::vector<Point>& pts = curves[method];
    for (const auto& [epoch, values] : by_epoch) {
      double mean = 0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double sd = 0;
      if (values.size() >= 2) {
        double ss = 0;
        for (double v : values) ss += (v - mean) * (v - mean);
        sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
      }
      pts.push_back({epoch, mean, sd, static_cast<int>(values.size())});
      if (first) {
        emin = emax = epoch;
        first = false;
      } else {
        emin = std::min(emin, epoch);
        emax = std::max(emax, epoch);
      }
      vmax = std::max(vmax, mean + sd);
    }
  }

  const double W = 640, H = 400;
  const double x0 = 56, x1 = 460, ytop = 20, ybot = 352;
  const double ymax = std::max(1.0, std::ceil(vmax * 2.0) / 2.0);
  auto xs = [&](int e) {
    return x0 + (x1 - x0) * static_cast<double>(e - emin) / std::max(emax - emin, 1);
  };
  auto ys = [&](double v) { return ybot - (ybot - ytop) * (v / ymax); };

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
         "viewBox=\"0 0 640 400\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + fmt_fixed(W, 0) + "\" height=\"" + fmt_fixed(H, 0) +
         "\" fill=\"#ffffff\"/>\n";

  // Axes and ticks.
  svg += "<g stroke=\"#333333\" stroke-width=\"1\" fill=\"none\">\n";
  svg += "<line x1=\"" + fmt_fixed(x0, 2) + "\" y1=\"" + fmt_fixed(ybot, 2) + "\" x2=\"" +
         fmt_fixed(x1, 2) + "\" y2=\"" + fmt_fixed(ybot, 2) + "\"/>\n";
  svg += "<line x1=\"" + fmt_fixed(x0, 2) + "\" y1=\"" + fmt_fixed(ytop, 2) + "\" x2=\"" +
         fmt_fixed(x0, 2) + "\" y2=\"" + fmt_fixed(ybot, 2) + "\"/>\n";
  svg += "</g>\n";

  svg += "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\">\n";
  for (int t = 0; t <= 5; ++t) {
    double v = ymax * t / 5.0;
    double y = ys(v);
    svg += "<line x1=\"" + fmt_fixed(x0 - 4, 2) + "\" y1=\"" + fmt_fixed(y, 2) + "\" x2=\"" +
           fmt_fixed(x0, 2) + "\" y2=\"" + fmt_fixed(y, 2) + "\" stroke=\"#333333\"/>\n";
    svg += "<text x=\"" + fmt_fixed(x0 - 8, 2) + "\" y=\"" + fmt_fixed(y + 4, 2) +
           "\" text-anchor=\"end\">" + fmt_fixed(v, 2) + "</text>\n";
  }
  int xstep = 1;
  for (int candidate : {1, 2, 5, 10, 20, 25, 50, 100, 200, 500}) {
    xstep = candidate;
    if ((emax - emin) / candidate <= 8) break;
  }
  for (int e = emin; e <= emax; e += xstep) {
    double x = xs(e);
    svg += "<line x1=\"" + fmt_fixed(x, 2) + "\" y1=\"" + fmt_fixed(ybot, 2) + "\" x2=\"" +
           fmt_fixed(x, 2) + "\" y2=\"" + fmt_fixed(ybot + 4, 2) + "\" stroke=\"#333333\"/>\n";
    svg += "<text x=\"" + fmt_fixed(x, 2) + "\" y=\"" + fmt_fixed(ybot + 16, 2) +
           "\" text-anchor=\"middle\">" + std::to_string(e) + "</text>\n";
  }
  svg += "<text x=\"" + fmt_fixed((x0 + x1) / 2, 2) + "\" y=\"" + fmt_fixed(ybot + 34, 2) +
         "\" text-anchor=\"middle\">epoch</text>\n";
  svg += "<text x=\"16\" y=\"" + fmt_fixed((ytop + ybot) / 2, 2) +
         "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fmt_fixed((ytop + ybot) / 2, 2) + ")\">" + sel.metric + "</text>\n";
  svg += "</g>\n";

  // One band + line per method (methods iterate in sorted map order).
  for (const auto& [method, pts] : curves) {
    const std::string color = method_color(method);
    std::vector<const Point*> banded;
    for (const Point& p : pts)
      if (p.n >= 2) banded.push_back(&p);
    if (banded.size() >= 2) {
      std::string path = "M";
      for (const Point* p : banded)
        path += " " + fmt_fixed(xs(p->epoch), 2) + "," + fmt_fixed(ys(p->mean + p->sd), 2);
      for (auto it = banded.rbegin(); it != banded.rend(); ++it)
        path += " L " + fmt_fixed(xs((*it)->epoch), 2) + "," +
                fmt_fixed(ys(std::max(0.0, (*it)->mean - (*it)->sd)), 2);
      path += " Z";
      svg += "<path d=\"" + path + "\" fill=\"" + color +
             "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    std::string points;
    for (const Point& p : pts) {
      if (!points.empty()) points += " ";
      points += fmt_fixed(xs(p.epoch), 2) + "," + fmt_fixed(ys(p.mean), 2);
    }
    svg += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"1.5\"/>\n";
  }

  // Legend.
  svg += "<g font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\">\n";
  double ly = ytop + 10;
  for (const auto& [method, pts] : curves) {
    svg += "<line x1=\"472\" y1=\"" + fmt_fixed(ly - 4, 2) + "\" x2=\"496\" y2=\"" +
           fmt_fixed(ly - 4, 2) + "\" stroke=\"" + method_color(method) +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"502\" y=\"" + fmt_fixed(ly, 2) + "\">" + method + "</text>\n";
    ly += 18;
  }
  svg += "</g>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace xplt
