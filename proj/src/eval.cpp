#include "xplt/eval.hpp"

#include <cmath>
#include <numeric>

namespace xplt {

std::vector<int> hard_predictions(const Model& model, const Dataset& ds) {
  if (ds.examples.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  NoGradGuard ng;
  const int n = static_cast<int>(ds.examples.size());
  const int chunk = 100;
  std::vector<int> preds(static_cast<size_t>(n));
  for (int start = 0; start < n; start += chunk) {
    int stop = std::min(n, start + chunk);
    std::vector<int> idx(static_cast<size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    Var y = model.forward(Var::constant(images_tensor(ds, idx)));
    for (int i = start; i < stop; ++i)
      preds[static_cast<size_t>(i)] = y.value()[i - start] >= 0.5f ? 1 : 0;
  }
  return preds;
}

double prediction_accuracy(const std::vector<int>& preds, const Dataset& ds) {
  if (preds.size() != ds.examples.size() || preds.empty())
    throw ConfigError("prediction count " + std::to_string(preds.size()) +
                      " does not match dataset size " + std::to_string(ds.examples.size()));
  int64_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    hits += preds[i] == ds.examples[i].label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double agreement_fraction(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty())
    throw ConfigError("prediction vectors must be non-empty and equally long");
  int64_t same = 0;
  for (size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(a.size());
}

double accuracy(const Model& model, const Dataset& ds) {
  return prediction_accuracy(hard_predictions(model, ds), ds);
}

AgreementMatrix pairwise_agreement(const std::vector<const Model*>& models, const Dataset& ds) {
  if (models.size() < 2)
    throw ConfigError("pairwise agreement needs at least 2 models, got " +
                      std::to_string(models.size()));
  const int m = static_cast<int>(models.size());
  std::vector<std::vector<int>> preds;
  preds.reserve(static_cast<size_t>(m));
  for (const Model* model : models) preds.push_back(hard_predictions(*model, ds));

  AgreementMatrix out;
  out.n_models = m;
  out.cells.assign(static_cast<size_t>(m) * m, 1.0);
  double pair_sum = 0;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      double frac = agreement_fraction(preds[static_cast<size_t>(i)], preds[static_cast<size_t>(j)]);
      out.cells[static_cast<size_t>(i) * m + j] = frac;
      out.cells[static_cast<size_t>(j) * m + i] = frac;
      pair_sum += frac;
    }
  out.mean_agreement = pair_sum / (m * (m - 1) / 2.0);
  return out;
}

DataKind transfer_kind(DataKind trained) {
  if (trained == DataKind::triangle) return DataKind::pentagon;
  if (trained == DataKind::foxcat) return DataKind::triangle_vs_circle;
  throw ConfigError("kind '" + kind_name(trained) + "' has no rule-transfer counterpart");
}

double transfer_accuracy(const Model& model, DataKind trained_kind, const Dataset& derived) {
  if (derived.kind != transfer_kind(trained_kind))
    throw ConfigError("transfer set kind '" + kind_name(derived.kind) +
                      "' does not derive from training kind '" + kind_name(trained_kind) + "'");
  return accuracy(model, derived);
}

TrialSummary aggregate_trials(const std::string& method, const std::string& dataset_desc,
                              const std::vector<double>& accuracies,
                              const std::vector<double>& epochs_to_best) {
  if (accuracies.empty()) throw ConfigError("no trials to aggregate");
  if (accuracies.size() != epochs_to_best.size())
    throw ConfigError("trial accuracy/epoch lists differ in length");
  TrialSummary s;
  s.method = method;
  s.dataset_desc = dataset_desc;
  s.n_trials = static_cast<int>(accuracies.size());
  double sum = 0;
  for (double a : accuracies) sum += a;
  s.mean_acc = sum / s.n_trials;
  if (s.n_trials >= 2) {
    double ss = 0;
    for (double a : accuracies) ss += (a - s.mean_acc) * (a - s.mean_acc);
    s.std_acc = std::sqrt(ss / (s.n_trials - 1));
  }
  double esum = 0;
  for (double e : epochs_to_best) esum += e;
  s.mean_epochs = esum / s.n_trials;
  return s;
}

}  // namespace xplt
