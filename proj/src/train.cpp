#include "xplt/train.hpp"

#include "xplt/eval.hpp"
#include "xplt/losses.hpp"
#include "xplt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

namespace xplt {

const std::vector<std::string> kMethods = {
    "vanilla",          "focal",          "gradreg",       "two_stage",
    "two_stage_sparse", "ablation_no_mapper", "ablation_joint"};

namespace {

Optimizer make_optimizer(const std::string& kind, std::vector<Var> params, float lr) {
  if (kind == "sgd") return Optimizer::sgd(std::move(params), lr);
  if (kind == "adam") return Optimizer::adam(std::move(params), lr);
  throw ConfigError("unknown optimizer '" + kind + "'");
}

bool same_param_set(const std::vector<Var>& a, const std::vector<Var>& b) {
  if (a.size() != b.size()) return false;
  for (const Var& v : a)
    if (std::none_of(b.begin(), b.end(), [&](const Var& w) { return w.node() == v.node(); }))
      return false;
  return true;
}

std::vector<int> masked_subset(const Dataset& ds, const std::vector<int>& idx, bool sparse) {
  std::vector<int> out;
  for (int i : idx) {
    const Example& ex = ds.examples.at(static_cast<size_t>(i));
    if (ex.has_mask && (!sparse || ex.label == 1)) out.push_back(i);
  }
  return out;
}

struct LossAccum {
  double weighted = 0;
  int64_t count = 0;
  void add(double v, int64_t n) {
    weighted += v * static_cast<double>(n);
    count += n;
  }
  double mean() const { return count ? weighted / static_cast<double>(count) : 0.0; }
};

double mapper_step(Model& model, const Dataset& ds, const std::vector<int>& masked,
                   Optimizer& opt2, bool detach_backbone) {
  Var xm = Var::constant(images_tensor(ds, masked));
  Var e = Var::constant(masks_tensor(ds, masked));
  auto [x_feat, target] = feature_pair(model, xm, e, detach_backbone);
  Var lf = kl_divergence(target, x_feat);
  opt2.zero_grad();
  backward(lf);
  opt2.step();
  return lf.value().item();
}

EpochStats staged_epoch(Model& model, const Dataset& ds, const BatchList& batches,
                        Optimizer& opt1, Optimizer& opt2, bool sparse, bool detach_backbone,
                        const StageObserver& observer) {
  LossAccum label, feature;
  for (const std::vector<int>& idx : batches) {
    Var x = Var::constant(images_tensor(ds, idx));
    Var y = Var::constant(labels_tensor(ds, idx));
    Var lce = binary_cross_entropy(model.forward(x), y);
    opt1.zero_grad();
    backward(lce);
    opt1.step();
    label.add(lce.value().item(), static_cast<int64_t>(idx.size()));
    if (observer) observer(1, static_cast<int>(idx.size()));

    std::vector<int> masked = masked_subset(ds, idx, sparse);
    if (!masked.empty()) {
      feature.add(mapper_step(model, ds, masked, opt2, detach_backbone),
                  static_cast<int64_t>(masked.size()));
      if (observer) observer(2, static_cast<int>(masked.size()));
    }
  }
  return {label.mean(), feature.mean(), 0.0};
}

}  // namespace

TrainConfig TrainConfig::defaults_for(const std::string& method, const Dataset& train_ds) {
  return defaults_for(method, train_ds.class_ratio, train_ds.spurious);
}

TrainConfig TrainConfig::defaults_for(const std::string& method, const std::string& class_ratio,
                                      bool spurious) {
  TrainConfig cfg;
  cfg.method = method;
  if (method == "vanilla" || method == "focal" || method == "gradreg") {
    cfg.eta1 = 0.01f;
  } else {
    cfg.eta1 = 0.001f;
    cfg.eta2 = (class_ratio != "1:1" || spurious) ? 0.01f : 0.001f;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (std::find(kMethods.begin(), kMethods.end(), method) == kMethods.end())
    throw ConfigError("unknown training method '" + method + "'");
  if (!(eta1 > 0)) throw ConfigError("eta1 must be positive");
  if (!(eta2 >= 0)) throw ConfigError("eta2 must be non-negative");
  if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
  if (!(gamma >= 0)) throw ConfigError("gamma must be non-negative");
  if (alpha >= 0 && alpha > 1) throw ConfigError("alpha must lie in [0,1]");
  if (batch_size < 0) throw ConfigError("batch_size must be non-negative");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (optimizer != "sgd" && optimizer != "adam")
    throw ConfigError("unknown optimizer '" + optimizer + "'");
  if (stage2_optimizer != "sgd" && stage2_optimizer != "adam")
    throw ConfigError("unknown optimizer '" + stage2_optimizer + "'");
}

EpochStats vanilla_epoch(Model& model, const Dataset& ds, const BatchList& batches,
                         Optimizer& opt) {
  LossAccum label;
  for (const std::vector<int>& idx : batches) {
    Var x = Var::constant(images_tensor(ds, idx));
    Var y = Var::constant(labels_tensor(ds, idx));
    Var loss = binary_cross_entropy(model.forward(x), y);
    opt.zero_grad();
    backward(loss);
    opt.step();
    label.add(loss.value().item(), static_cast<int64_t>(idx.size()));
  }
  return {label.mean(), 0.0, 0.0};
}

EpochStats focal_epoch(Model& model, const Dataset& ds, const BatchList& batches, Optimizer& opt,
                       float gamma, float alpha) {
  LossAccum label;
  for (const std::vector<int>& idx : batches) {
    Var x = Var::constant(images_tensor(ds, idx));
    Var y = Var::constant(labels_tensor(ds, idx));
    Var loss = focal_loss(model.forward(x), y, gamma, alpha);
    opt.zero_grad();
    backward(loss);
    opt.step();
    label.add(loss.value().item(), static_cast<int64_t>(idx.size()));
  }
  return {label.mean(), 0.0, 0.0};
}

EpochStats gradreg_epoch(Model& model, const Dataset& ds, const BatchList& batches, Optimizer& opt,
                         float lambda, bool raw_diff) {
  LossAccum label, expl;
  for (const std::vector<int>& idx : batches) {
    for (int i : idx)
      if (!ds.examples.at(static_cast<size_t>(i)).has_mask)
        throw ConfigError("gradient regularization needs a mask on every example; example " +
                          std::to_string(i) + " has none");
    const float inv_n = 1.0f / static_cast<float>(idx.size());
    Var x = Var::leaf(images_tensor(ds, idx), true);
    Var y = Var::constant(labels_tensor(ds, idx));
    Var e = Var::constant(masks_tensor(ds, idx));
    Var lce = binary_cross_entropy(model.forward(x), y);
    Var attr = grad_of(lce, {x}, /*create_graph=*/true)[0];
    Var misaligned = raw_diff ? sub(attr, e) : mul(attr, sadd(neg(e), 1.0f));
    Var lexpl = smul(sum_all(pow_const(misaligned, 2.0f)), inv_n);
    Var loss = add(lce, smul(lexpl, lambda));
    opt.zero_grad();
    backward(loss);
    opt.step();
    label.add(lce.value().item(), static_cast<int64_t>(idx.size()));
    expl.add(static_cast<double>(lambda) * lexpl.value().item(),
             static_cast<int64_t>(idx.size()));
  }
  return {label.mean(), 0.0, expl.mean()};
}

EpochStats two_stage_epoch(Model& model, const Dataset& ds, const BatchList& batches,
                           Optimizer& opt1, Optimizer& opt2, bool sparse,
                           const StageObserver& observer) {
  if (model.theta_m.empty())
    throw ConfigError("two-stage training needs a model with a mapper");
  if (!same_param_set(opt2.params(), model.theta_m))
    throw ConfigError("the stage-2 optimizer must hold exactly the mapper parameters");
  return staged_epoch(model, ds, batches, opt1, opt2, sparse, /*detach_backbone=*/true, observer);
}

EpochStats ablation_no_mapper_epoch(Model& model, const Dataset& ds, const BatchList& batches,
                                    Optimizer& opt1, Optimizer& opt2, bool sparse,
                                    const StageObserver& observer) {
  if (!model.theta_m.empty())
    throw ConfigError("the no-mapper ablation needs a model built without a mapper");
  if (!same_param_set(opt2.params(), model.theta_f))
    throw ConfigError("the no-mapper stage-2 optimizer must hold exactly the extractor parameters");
  return staged_epoch(model, ds, batches, opt1, opt2, sparse, /*detach_backbone=*/false, observer);
}

EpochStats ablation_joint_epoch(Model& model, const Dataset& ds, const BatchList& batches,
                                Optimizer& opt, float feature_weight) {
  if (model.theta_m.empty())
    throw ConfigError("joint training needs a model with a mapper");
  LossAccum label, feature;
  for (const std::vector<int>& idx : batches) {
    Var x = Var::constant(images_tensor(ds, idx));
    Var y = Var::constant(labels_tensor(ds, idx));
    Var lce = binary_cross_entropy(model.forward(x), y);
    Var loss = lce;
    std::vector<int> masked = masked_subset(ds, idx, false);
    if (!masked.empty()) {
      Var xm = Var::constant(images_tensor(ds, masked));
      Var e = Var::constant(masks_tensor(ds, masked));
      auto [x_feat, target] = feature_pair(model, xm, e, /*detach_backbone=*/true);
      Var lf = kl_divergence(target, x_feat);
      loss = add(loss, smul(lf, feature_weight));
      feature.add(lf.value().item(), static_cast<int64_t>(masked.size()));
    }
    opt.zero_grad();
    backward(loss);
    opt.step();
    label.add(lce.value().item(), static_cast<int64_t>(idx.size()));
  }
  return {label.mean(), feature.mean(), 0.0};
}

Dataset make_validation_set(const Dataset& train_ds, uint64_t seed) {
  return build_dataset(train_ds.kind, 200, "1:1", mix64(seed ^ 0x76616c5f736574ull),
                       train_ds.spurious, false);
}

RunRecord train(Model& model, const Dataset& train_ds, const Dataset& val_ds,
                const Dataset& test_ds, const TrainConfig& cfg_in,
                const StageObserver& observer) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  if (train_ds.examples.empty() || val_ds.examples.empty() || test_ds.examples.empty())
    throw ConfigError("training needs non-empty train/val/test splits");

  const int n = static_cast<int>(train_ds.examples.size());
  if (cfg.alpha < 0) {
    int neg = 0;
    for (const Example& ex : train_ds.examples) neg += ex.label == 0 ? 1 : 0;
    cfg.alpha = static_cast<float>(neg) / static_cast<float>(n);
  }
  const bool sparse = cfg.method == "two_stage_sparse";
  if (sparse && !train_ds.sparse_explanations) {
    for (const Example& ex : train_ds.examples)
      if (!ex.has_mask)
        throw ConfigError(
            "two_stage_sparse needs sparse explanations or a fully masked dataset");
  }

  Optimizer opt1 = make_optimizer(cfg.optimizer, model.all_params(), cfg.eta1);
  std::optional<Optimizer> opt2;
  if (cfg.method == "ablation_no_mapper") {
    opt2 = make_optimizer(cfg.stage2_optimizer, model.theta_f, cfg.eta2);
  } else if (cfg.method == "two_stage" || cfg.method == "two_stage_sparse") {
    if (model.theta_m.empty())
      throw ConfigError("method '" + cfg.method + "' needs a model with a mapper");
    opt2 = make_optimizer(cfg.stage2_optimizer, model.theta_m, cfg.eta2);
  }

  const int batch = cfg.batch_size > 0 ? std::min(cfg.batch_size, n) : std::min(32, n);
  cfg.batch_size = batch;  // echo the resolved value into the run record
  std::mt19937 shuffle_rng = make_rng(cfg.seed, 1000);

  RunRecord rec;
  rec.method = cfg.method;
  rec.seed = cfg.seed;
  rec.config = cfg;

  std::vector<Tensor> best_params;
  auto snapshot = [&] {
    best_params.clear();
    for (const auto& [name, v] : model.params) best_params.push_back(v.value());
  };
  auto restore = [&] {
    for (size_t i = 0; i < model.params.size(); ++i)
      model.params[i].second.mutable_value() = best_params[i];
  };

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    BatchList batches;
    for (int start = 0; start < n; start += batch)
      batches.emplace_back(order.begin() + start,
                           order.begin() + std::min(n, start + batch));

    EpochStats stats;
    if (cfg.method == "vanilla")
      stats = vanilla_epoch(model, train_ds, batches, opt1);
    else if (cfg.method == "focal")
      stats = focal_epoch(model, train_ds, batches, opt1, cfg.gamma, cfg.alpha);
    else if (cfg.method == "gradreg")
      stats = gradreg_epoch(model, train_ds, batches, opt1, cfg.lambda, cfg.gradreg_raw_diff);
    else if (cfg.method == "two_stage" || cfg.method == "two_stage_sparse")
      stats = two_stage_epoch(model, train_ds, batches, opt1, *opt2, sparse, observer);
    else if (cfg.method == "ablation_no_mapper")
      stats = ablation_no_mapper_epoch(model, train_ds, batches, opt1, *opt2, sparse, observer);
    else
      stats = ablation_joint_epoch(model, train_ds, batches, opt1, cfg.eta2 / cfg.eta1);

    if (!std::isfinite(stats.label_loss) || !std::isfinite(stats.feature_loss) ||
        !std::isfinite(stats.expl_loss))
      throw Error("non-finite loss in epoch " + std::to_string(epoch));
    rec.train_losses.push_back(stats.label_loss);
    rec.feature_losses.push_back(stats.feature_loss);
    rec.expl_losses.push_back(stats.expl_loss);

    double val_acc = accuracy(model, val_ds);
    rec.val_accuracies.push_back(val_acc);
    rec.total_epochs = epoch;
    if (val_acc > rec.best_val_accuracy || rec.best_epoch == 0) {
      rec.best_val_accuracy = val_acc;
      rec.best_epoch = epoch;
      snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  if (cfg.restore_best) restore();
  rec.test_accuracy = accuracy(model, test_ds);
  return rec;
}

}  // namespace xplt
