#pragma once

#include "xplt/data.hpp"
#include "xplt/model.hpp"

#include <string>
#include <vector>

namespace xplt {

/// Hard labels at threshold 0.5; a probability of exactly 0.5 counts as class 1.
std::vector<int> hard_predictions(const Model& model, const Dataset& ds);

/// Fraction of predictions matching the dataset labels.
double prediction_accuracy(const std::vector<int>& preds, const Dataset& ds);

/// Fraction of positions where two prediction vectors agree.
double agreement_fraction(const std::vector<int>& a, const std::vector<int>& b);

double accuracy(const Model& model, const Dataset& ds);

struct AgreementMatrix {
  int n_models = 0;
  std::vector<double> cells;  // row-major n x n, diagonal 1
  double mean_agreement = 0;  // over unordered pairs

  double at(int i, int j) const { return cells.at(static_cast<size_t>(i) * n_models + j); }
};

/// Fraction of examples on which each unordered pair of models emits the same
/// hard prediction.
AgreementMatrix pairwise_agreement(const std::vector<const Model*>& models, const Dataset& ds);

/// The derived test kind sharing a training kind's classification rule.
DataKind transfer_kind(DataKind trained);

/// Accuracy on the rule-transfer set; rejects a set that does not derive from
/// the training kind.
double transfer_accuracy(const Model& model, DataKind trained_kind, const Dataset& derived);

struct TrialSummary {
  std::string method;
  std::string dataset_desc;
  int n_trials = 0;
  double mean_acc = 0;
  double std_acc = 0;  // sample std (n-1); 0 for a single trial
  double mean_epochs = 0;
};

TrialSummary aggregate_trials(const std::string& method, const std::string& dataset_desc,
                              const std::vector<double>& accuracies,
                              const std::vector<double>& epochs_to_best);

}  // namespace xplt
