#pragma once

#include "xplt/eval.hpp"
#include "xplt/train.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace xplt {

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// What a trial trains on, independent of method and seed.
struct DataSpec {
  DataKind kind = DataKind::triangle;
  int size = 50;
  std::string class_ratio = "1:1";
  bool spurious = false;
  bool sparse = false;
};

/// Optional salt from the XPLT_SEED_SALT environment variable (decimal, or
/// any string, hashed). It is mixed into every dataset seed the harness
/// derives, so whole experiments can be repeated on freshly sampled data.
/// Standard test sets are not salted; they are the fixed benchmark.
uint64_t seed_salt();

/// Training-set seed for trial `seed`: identical for every method, so methods
/// are compared on the same data draw.
uint64_t trial_dataset_seed(uint64_t seed);
uint64_t trial_validation_seed(uint64_t seed);

/// Feature-alignment methods carry a channel mapper; the rest run bare.
MapperKind method_mapper(const std::string& method);

/// Applies one `key=value` override to a config; throws ConfigError on
/// unknown keys or unparseable values.
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Flat `key = value` lines, `#` comments; returns pairs in file order.
Overrides parse_config_file(const std::string& path);

/// Everything needed to execute one run deterministically.
struct RunSetup {
  DataSpec data;
  std::string method;
  uint64_t seed = 0;
  MapperKind mapper = MapperKind::none;
  TrainConfig cfg;
  uint64_t data_seed = 0;     // seed the training set was (or will be) built with
  std::string dataset_path;   // set when the training set is loaded from disk
  std::string run_id;
};

/// Resolves method defaults, applies overrides, and derives the run id.
RunSetup plan_run(const DataSpec& data, const std::string& method, uint64_t seed,
                  const Overrides& overrides);

/// 12-hex digest of the resolved configuration and seed.
std::string run_id_for(const RunSetup& setup);

struct MetricsRow {
  std::string run_id;
  std::string method;
  std::string dataset;  // kind name
  int size = 0;
  std::string class_ratio;
  bool spurious = false;
  bool sparse = false;
  uint64_t seed = 0;
  int epoch = 0;
  std::string split;   // train | val | test | transfer
  std::string metric;  // loss | feature_loss | expl_loss | accuracy
  double value = 0;
};

std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

struct RunResult {
  RunSetup setup;
  bool ok = false;
  std::string error;
  RunRecord record;
  double transfer_accuracy = -1.0;  // <0 when no transfer set applies
  std::string transfer_dataset;     // kind name of the transfer set, if any
};

/// Trains one model, evaluates it (plus the transfer set when given), and
/// writes runs/<run_id>/{record.json,model.ckpt} under out_dir. Failures are
/// captured in the result instead of thrown.
RunResult execute_run(const RunSetup& setup, const Dataset& train_ds, const Dataset& val_ds,
                      const Dataset& test_ds, const Dataset* transfer_ds,
                      const std::string& out_dir);

/// The rows a successful run contributes to metrics.csv: per-epoch train
/// losses and validation accuracy, the test accuracy at the evaluated epoch,
/// and the transfer accuracy when computed.
std::vector<MetricsRow> run_metrics(const RunResult& result);

/// Appends rows to <out_dir>/metrics.csv, writing the header first when the
/// file does not exist yet.
void append_metrics(const std::string& out_dir, const std::vector<MetricsRow>& rows);

void write_record_json(const RunResult& result, const std::string& path);

/// Runs one method x one seed against a dataset directory produced by
/// gen-data; writes the run directory and appends metrics rows.
RunResult run_from_directory(const std::string& dataset_dir, const std::string& method,
                             uint64_t seed, const Overrides& overrides,
                             const std::string& out_dir);

struct SweepConfig {
  DataSpec data;
  std::vector<std::string> methods;
  std::vector<uint64_t> seeds;
  Overrides overrides;  // applied on top of each method's defaults
  std::string out_dir = ".";
  int jobs = 1;
};

/// Named experiment grids.
SweepConfig preset_sweep(const std::string& name);
std::vector<std::string> preset_names();

struct SweepResult {
  std::vector<RunResult> runs;  // grid order: methods outer, seeds inner
  int n_failed = 0;
};

/// Runs the (method x seed) grid, up to `jobs` runs in parallel, then writes
/// metrics.csv, summary.csv, agreement.csv, transfer.csv (when the kind has a
/// rule-transfer counterpart), and curves.svg under out_dir. Individual run
/// failures are recorded and flagged in summary.csv; the sweep continues.
SweepResult run_sweep(const SweepConfig& cfg);

struct PlotSelector {
  std::string split = "val";
  std::string metric = "accuracy";
  std::vector<std::string> methods;  // empty selects all
  std::string dataset;               // empty selects all
  int size = 0;                      // 0 selects all
};

std::vector<MetricsRow> read_metrics_csv(const std::string& path);

/// Deterministic SVG: per method, the mean curve across runs with a +-1 std
/// band over epochs backed by at least two runs; single-run selections get a
/// plain line. Throws ConfigError when the selection matches nothing.
std::string render_curves_svg(const std::vector<MetricsRow>& rows, const PlotSelector& sel);

}  // namespace xplt
