#pragma once

#include "xplt/data.hpp"
#include "xplt/model.hpp"
#include "xplt/optim.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace xplt {

extern const std::vector<std::string> kMethods;

struct TrainConfig {
  std::string method = "two_stage";
  std::string optimizer = "adam";         // label-loss stage
  std::string stage2_optimizer = "adam";  // feature-loss stage
  float eta1 = 1e-3f;   // label-loss lr
  float eta2 = 1e-3f;   // feature-loss lr (0 disables stage 2 exactly)
  float lambda = 1e-3f; // gradient-regularization coefficient
  float gamma = 2.0f;   // focal focusing exponent
  float alpha = -1.0f;  // focal class weight; <0 resolves to the negative-class frequency
  bool gradreg_raw_diff = false;  // penalize ||attr - mask||^2 instead of off-mask mass
  int batch_size = 0;   // 0 resolves to min(32, n)
  int max_epochs = 200;
  int patience = 15;
  bool restore_best = true;  // false keeps the final-epoch parameters for the
                             // test evaluation (fixed-epoch learning curves)
  uint64_t seed = 0;

  /// Method-appropriate defaults: plain methods run at lr 0.01; two-stage
  /// variants at eta1 0.001 with eta2 raised to 0.01 on imbalanced or
  /// spurious data.
  static TrainConfig defaults_for(const std::string& method, const Dataset& train_ds);
  static TrainConfig defaults_for(const std::string& method, const std::string& class_ratio,
                                  bool spurious);
  void validate() const;
};

struct EpochStats {
  double label_loss = 0;
  double feature_loss = 0;  // stage-2 KL (two-stage family)
  double expl_loss = 0;     // lambda-weighted gradient penalty (gradreg)
};

using BatchList = std::vector<std::vector<int>>;

/// Invoked after each optimizer step of a staged epoch with the stage number
/// (1 or 2) and the number of examples that fed the step.
using StageObserver = std::function<void(int stage, int n_examples)>;

EpochStats vanilla_epoch(Model& model, const Dataset& ds, const BatchList& batches,
                         Optimizer& opt);
EpochStats focal_epoch(Model& model, const Dataset& ds, const BatchList& batches, Optimizer& opt,
                       float gamma, float alpha);
EpochStats gradreg_epoch(Model& model, const Dataset& ds, const BatchList& batches, Optimizer& opt,
                         float lambda, bool raw_diff);

/// Per batch: a label-loss step on every parameter, then a feature-alignment
/// (KL) step on the mapper alone, fed by the masked examples (minority-class
/// only when sparse). opt2 must hold exactly the mapper parameters.
EpochStats two_stage_epoch(Model& model, const Dataset& ds, const BatchList& batches,
                           Optimizer& opt1, Optimizer& opt2, bool sparse,
                           const StageObserver& observer = {});

/// Two-stage variant on a mapper-free model: stage 2 steps the feature
/// extractor instead. opt2 must hold exactly the extractor parameters.
EpochStats ablation_no_mapper_epoch(Model& model, const Dataset& ds, const BatchList& batches,
                                    Optimizer& opt1, Optimizer& opt2, bool sparse,
                                    const StageObserver& observer = {});

/// Single combined step per batch on label loss + feature_weight * feature
/// loss, both from the same forward state; the feature term reaches only the
/// mapper.
EpochStats ablation_joint_epoch(Model& model, const Dataset& ds, const BatchList& batches,
                                Optimizer& opt, float feature_weight);

struct RunRecord {
  std::string method;
  uint64_t seed = 0;
  TrainConfig config;  // resolved values, echoed into artifacts
  std::vector<double> train_losses;
  std::vector<double> feature_losses;
  std::vector<double> expl_losses;
  std::vector<double> val_accuracies;
  int best_epoch = 0;  // 1-based epoch of the restored checkpoint
  int total_epochs = 0;
  double best_val_accuracy = 0;
  double test_accuracy = 0;
};

/// Runs the configured method with early stopping on validation accuracy,
/// restores the best checkpoint (unless the config keeps the final epoch),
/// and evaluates the test set once. The observer, when set, is forwarded to
/// staged epochs.
RunRecord train(Model& model, const Dataset& train_ds, const Dataset& val_ds,
                const Dataset& test_ds, const TrainConfig& cfg,
                const StageObserver& observer = {});

/// 200 fresh balanced examples drawn from the training distribution
/// (including spurious squares when the training set has them).
Dataset make_validation_set(const Dataset& train_ds, uint64_t seed);

}  // namespace xplt
