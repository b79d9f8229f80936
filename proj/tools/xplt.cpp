#include "xplt/harness.hpp"
#include "xplt/rng.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

using namespace xplt;

namespace {

// "key=value" strings from --set flags.
Overrides parse_set_flags(const std::vector<std::string>& sets) {
  Overrides out;
  for (const std::string& s : sets) {
    size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<uint64_t> out;
  size_t pos = 0;
  while (pos <= csv.size()) {
    size_t comma = csv.find(',', pos);
    std::string tok = csv.substr(pos, comma == std::string::npos ? std::string::npos
                                                                 : comma - pos);
    if (!tok.empty()) out.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError("seed list '" + csv + "' is empty");
  return out;
}

std::vector<std::string> parse_name_list(const std::string& csv) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= csv.size()) {
    size_t comma = csv.find(',', pos);
    std::string tok = csv.substr(pos, comma == std::string::npos ? std::string::npos
                                                                 : comma - pos);
    if (!tok.empty()) out.push_back(tok);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

int cmd_gen_data(const std::string& kind, int size, const std::string& ratio, bool spurious,
                 bool sparse, uint64_t seed, const std::string& out) {
  uint64_t salt = seed_salt();
  uint64_t effective = salt != 0 ? mix64(seed ^ salt) : seed;
  Dataset ds = build_dataset(parse_kind(kind), size, ratio, effective, spurious, sparse);
  save_dataset(ds, out);
  int masked = 0;
  for (const Example& ex : ds.examples) masked += ex.has_mask ? 1 : 0;
  std::printf("wrote %d examples (%d with masks) to %s\n", ds.size, masked, out.c_str());
  return 0;
}

int cmd_train(std::string method, const std::string& config_path, std::string dataset_dir,
              uint64_t seed, bool seed_given, const std::vector<std::string>& sets,
              const std::string& out) {
  Overrides overrides;
  if (!config_path.empty()) {
    for (auto& [key, value] : parse_config_file(config_path)) {
      if (key == "method") {
        if (method.empty()) method = value;
      } else if (key == "dataset") {
        if (dataset_dir.empty()) dataset_dir = value;
      } else if (key == "seed") {
        if (!seed_given) seed = std::stoull(value);
      } else {
        overrides.emplace_back(std::move(key), std::move(value));
      }
    }
  }
  for (auto& kv : parse_set_flags(sets)) overrides.push_back(std::move(kv));
  if (method.empty()) throw ConfigError("train needs --method (or method= in the config file)");
  if (dataset_dir.empty())
    throw ConfigError("train needs --dataset (or dataset= in the config file)");

  RunResult r = run_from_directory(dataset_dir, method, seed, overrides, out);
  if (!r.ok) {
    std::fprintf(stderr, "error: run %s failed: %s\n", r.setup.run_id.c_str(),
                 r.error.c_str());
    return 1;
  }
  std::printf("run %s: best_epoch=%d val=%.4f test=%.4f", r.setup.run_id.c_str(),
              r.record.best_epoch, r.record.best_val_accuracy, r.record.test_accuracy);
  if (r.transfer_accuracy >= 0)
    std::printf(" transfer(%s)=%.4f", r.transfer_dataset.c_str(), r.transfer_accuracy);
  std::printf("\n");
  return 0;
}

Model model_from_run(const std::string& run_dir) {
  return load_checkpoint(run_dir + "/model.ckpt");
}

Dataset eval_set(const std::string& kind, const std::string& dataset_dir) {
  if (!dataset_dir.empty()) return load_dataset(dataset_dir);
  if (!kind.empty()) return canonical_test_set(parse_kind(kind));
  throw ConfigError("pick an evaluation set with --kind or --dataset");
}

int cmd_evaluate(const std::string& run_dir, const std::string& kind,
                 const std::string& dataset_dir) {
  Model m = model_from_run(run_dir);
  Dataset ds = eval_set(kind, dataset_dir);
  std::printf("accuracy=%.6f on %s (%d examples)\n", accuracy(m, ds),
              kind_name(ds.kind).c_str(), ds.size);
  return 0;
}

int cmd_agreement(const std::vector<std::string>& run_dirs, const std::string& kind,
                  const std::string& dataset_dir) {
  std::vector<Model> models;
  for (const std::string& dir : run_dirs) models.push_back(model_from_run(dir));
  std::vector<const Model*> ptrs;
  for (const Model& m : models) ptrs.push_back(&m);
  Dataset ds = eval_set(kind, dataset_dir);
  AgreementMatrix mat = pairwise_agreement(ptrs, ds);
  for (int i = 0; i < mat.n_models; ++i) {
    for (int j = 0; j < mat.n_models; ++j)
      std::printf(j + 1 == mat.n_models ? "%.4f\n" : "%.4f ", mat.at(i, j));
  }
  std::printf("mean_agreement=%.6f over %d models\n", mat.mean_agreement, mat.n_models);
  return 0;
}

int cmd_sweep(const std::string& preset, const std::string& kind, int size,
              const std::string& ratio, bool spurious, bool sparse,
              const std::string& methods_csv, const std::string& seeds_csv, int jobs,
              const std::vector<std::string>& sets, const std::string& out) {
  SweepConfig cfg;
  if (!preset.empty()) {
    cfg = preset_sweep(preset);
  } else {
    cfg.data.kind = parse_kind(kind);
    cfg.data.size = size;
    cfg.data.class_ratio = ratio;
    cfg.data.spurious = spurious;
    cfg.data.sparse = sparse;
    cfg.methods = parse_name_list(methods_csv);
    cfg.seeds = parse_seed_list(seeds_csv);
  }
  cfg.overrides = parse_set_flags(sets);
  cfg.jobs = jobs;
  cfg.out_dir = out;

  SweepResult res = run_sweep(cfg);
  for (const RunResult& r : res.runs) {
    if (r.ok)
      std::printf("run %s %s seed=%llu test=%.4f\n", r.setup.run_id.c_str(),
                  r.setup.method.c_str(), static_cast<unsigned long long>(r.setup.seed),
                  r.record.test_accuracy);
    else
      std::fprintf(stderr, "run %s %s seed=%llu FAILED: %s\n", r.setup.run_id.c_str(),
                   r.setup.method.c_str(), static_cast<unsigned long long>(r.setup.seed),
                   r.error.c_str());
  }
  std::printf("%zu runs, %d failed; artifacts in %s\n", res.runs.size(), res.n_failed,
              out.c_str());
  return res.n_failed == 0 ? 0 : 1;
}

int cmd_plot(const std::string& metrics_path, const std::string& out, const std::string& split,
             const std::string& metric, const std::string& methods_csv,
             const std::string& dataset, int size) {
  PlotSelector sel;
  sel.split = split;
  sel.metric = metric;
  sel.methods = parse_name_list(methods_csv);
  sel.dataset = dataset;
  sel.size = size;
  std::string svg = render_curves_svg(read_metrics_csv(metrics_path), sel);
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + out + "'");
  f << svg;
  if (!f.flush()) throw IoError("failed writing '" + out + "'");
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explanation-guided training toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a dataset directory");
  std::string gen_kind = "triangle", gen_ratio = "1:1", gen_out;
  int gen_size = 50;
  uint64_t gen_seed = 0;
  bool gen_spurious = false, gen_sparse = false;
  gen->add_option("--kind", gen_kind, "triangle or foxcat");
  gen->add_option("--size", gen_size, "number of examples");
  gen->add_option("--ratio", gen_ratio, "class ratio, 1:1 or 1:9");
  gen->add_flag("--spurious", gen_spurious, "inject label-coupled corner squares");
  gen->add_flag("--sparse", gen_sparse, "keep explanation masks only on positives");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("-o,--out", gen_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model on a dataset directory");
  std::string tr_method, tr_config, tr_dataset, tr_out = ".";
  uint64_t tr_seed = 0;
  std::vector<std::string> tr_sets;
  auto* tr_seed_opt = train_cmd->add_option("--seed", tr_seed, "trial seed");
  train_cmd->add_option("--method", tr_method, "training method");
  train_cmd->add_option("--config", tr_config, "flat key = value config file");
  train_cmd->add_option("--dataset", tr_dataset, "dataset directory from gen-data");
  train_cmd->add_option("--set", tr_sets, "hyperparameter override key=value (repeatable)");
  train_cmd->add_option("-o,--out", tr_out, "output directory (runs/, metrics.csv)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Accuracy of a saved run on a test set");
  std::string ev_run, ev_kind, ev_dataset;
  eval_cmd->add_option("--run", ev_run, "run directory (contains model.ckpt)")->required();
  eval_cmd->add_option("--kind", ev_kind, "standard 1000-example test set of this kind");
  eval_cmd->add_option("--dataset", ev_dataset, "dataset directory to evaluate instead");

  // agreement
  auto* agr_cmd = app.add_subcommand("agreement", "Pairwise prediction agreement of runs");
  std::vector<std::string> ag_runs;
  std::string ag_kind, ag_dataset;
  agr_cmd->add_option("--run", ag_runs, "run directory (repeat for each model)")
      ->required()
      ->expected(-2);
  agr_cmd->add_option("--kind", ag_kind, "standard test set kind");
  agr_cmd->add_option("--dataset", ag_dataset, "dataset directory to evaluate instead");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a method x seed grid and aggregate");
  std::string sw_preset, sw_kind = "triangle", sw_ratio = "1:1", sw_methods, sw_seeds, sw_out = ".";
  int sw_size = 50, sw_jobs = 1;
  bool sw_spurious = false, sw_sparse = false;
  std::vector<std::string> sw_sets;
  sweep_cmd->add_option("--preset", sw_preset, "named grid (triangle-50-balanced, ...)");
  sweep_cmd->add_option("--kind", sw_kind, "dataset kind");
  sweep_cmd->add_option("--size", sw_size, "training-set size");
  sweep_cmd->add_option("--ratio", sw_ratio, "class ratio");
  sweep_cmd->add_flag("--spurious", sw_spurious, "spurious training data");
  sweep_cmd->add_flag("--sparse", sw_sparse, "sparse explanation masks");
  sweep_cmd->add_option("--methods", sw_methods, "comma-separated method list");
  sweep_cmd->add_option("--seeds", sw_seeds, "comma-separated seed list");
  sweep_cmd->add_option("--jobs", sw_jobs, "parallel runs (never parallel within a run)");
  sweep_cmd->add_option("--set", sw_sets, "hyperparameter override key=value (repeatable)");
  sweep_cmd->add_option("-o,--out", sw_out, "output directory");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "Render learning curves from metrics.csv");
  std::string pl_metrics, pl_out = "curves.svg", pl_split = "val", pl_metric = "accuracy";
  std::string pl_methods, pl_dataset;
  int pl_size = 0;
  plot_cmd->add_option("--metrics", pl_metrics, "metrics.csv path")->required();
  plot_cmd->add_option("-o,--out", pl_out, "output SVG path");
  plot_cmd->add_option("--split", pl_split, "train | val | test | transfer");
  plot_cmd->add_option("--metric", pl_metric, "loss | feature_loss | expl_loss | accuracy");
  plot_cmd->add_option("--methods", pl_methods, "comma-separated method filter");
  plot_cmd->add_option("--dataset", pl_dataset, "dataset kind filter");
  plot_cmd->add_option("--size", pl_size, "training-set size filter");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_kind, gen_size, gen_ratio, gen_spurious, gen_sparse, gen_seed,
                          gen_out);
    if (train_cmd->parsed())
      return cmd_train(tr_method, tr_config, tr_dataset, tr_seed, tr_seed_opt->count() > 0,
                       tr_sets, tr_out);
    if (eval_cmd->parsed()) return cmd_evaluate(ev_run, ev_kind, ev_dataset);
    if (agr_cmd->parsed()) return cmd_agreement(ag_runs, ag_kind, ag_dataset);
    if (sweep_cmd->parsed())
      return cmd_sweep(sw_preset, sw_kind, sw_size, sw_ratio, sw_spurious, sw_sparse,
                       sw_methods, sw_seeds, sw_jobs, sw_sets, sw_out);
    if (plot_cmd->parsed())
      return cmd_plot(pl_metrics, pl_out, pl_split, pl_metric, pl_methods, pl_dataset,
                      pl_size);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
