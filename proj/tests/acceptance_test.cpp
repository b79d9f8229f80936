// Acceptance gate: one test case per shipping criterion, each printed as a
// single PASS/FAIL line by the reporter at the bottom. Heavy multi-seed
// sweeps are shared between criteria through lazy caches.
#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "support/checks.hpp"
#include "support/ref_ops.hpp"
#include "xplt/data.hpp"
#include "xplt/eval.hpp"
#include "xplt/harness.hpp"
#include "xplt/losses.hpp"
#include "xplt/model.hpp"
#include "xplt/ops.hpp"
#include "xplt/rng.hpp"
#include "xplt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace xplt;
using doctest::Approx;
using testsup::check_op;
using testsup::OpCase;
using testsup::rand_tensor;
using testsup::sample_until;
using Arr = Eigen::ArrayXd;
using Darrs = std::vector<Arr>;
using Vars = std::vector<Var>;
namespace fs = std::filesystem;

namespace {

constexpr int kTrials = 20;    // property instances per op
constexpr int kSeeds = 10;     // trials per method in result criteria

const fs::path& scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "xplt_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::vector<uint64_t> seed_range() {
  std::vector<uint64_t> s;
  for (uint64_t i = 1; i <= kSeeds; ++i) s.push_back(i);
  return s;
}

struct MethodStats {
  std::vector<double> test_acc;
  std::vector<double> transfer_acc;
  double mean = 0, stdev = 0;
  double transfer_mean = 0;
  double agreement = -1.0;
};

struct SweepStats {
  std::map<std::string, MethodStats> by_method;
  const MethodStats& at(const std::string& m) const { return by_method.at(m); }
};

/// Runs a sweep through the same code path the command-line tool uses and
/// collapses it to per-method statistics.
SweepStats run_and_collect(SweepConfig cfg) {
  cfg.out_dir = (scratch() / ("sweep_" + kind_name(cfg.data.kind) + "_" +
                              std::to_string(cfg.data.size) + "_" + cfg.data.class_ratio[2] +
                              (cfg.data.spurious ? "_sp" : "") +
                              (cfg.overrides.empty() ? "" : "_ovr")))
                    .string();
  SweepResult res = run_sweep(cfg);
  REQUIRE(res.n_failed == 0);
  SweepStats st;
  for (const RunResult& r : res.runs) {
    MethodStats& m = st.by_method[r.setup.method];
    m.test_acc.push_back(r.record.test_accuracy);
    if (r.transfer_accuracy >= 0) m.transfer_acc.push_back(r.transfer_accuracy);
  }
  for (auto& [name, m] : st.by_method) {
    std::vector<double> dummy_epochs(m.test_acc.size(), 0.0);
    TrialSummary ts = aggregate_trials(name, "", m.test_acc, dummy_epochs);
    m.mean = ts.mean_acc;
    m.stdev = ts.std_acc;
    if (!m.transfer_acc.empty()) {
      std::vector<double> de(m.transfer_acc.size(), 0.0);
      m.transfer_mean = aggregate_trials(name, "", m.transfer_acc, de).mean_acc;
    }
  }
  // Per-method mean pairwise agreement, as aggregated by the sweep itself.
  std::ifstream ag(fs::path(cfg.out_dir) / "agreement.csv");
  std::string line;
  std::getline(ag, line);  // header
  while (std::getline(ag, line)) {
    std::stringstream ss(line);
    std::string method, dataset, n, mean;
    std::getline(ss, method, ',');
    std::getline(ss, dataset, ',');
    std::getline(ss, n, ',');
    std::getline(ss, mean, ',');
    if (st.by_method.count(method)) st.by_method[method].agreement = std::stod(mean);
  }
  return st;
}

/// Balanced triangle-50 grid shared by the main-result, transfer, and
/// agreement criteria.
const SweepStats& sweep_main() {
  static const SweepStats st = run_and_collect(preset_sweep("triangle-50-balanced"));
  return st;
}

const SweepStats& sweep_foxcat() {
  static const SweepStats st = [] {
    SweepConfig cfg;
    cfg.data = {DataKind::foxcat, 100, "1:1", false, false};
    cfg.methods = {"vanilla", "two_stage"};
    cfg.seeds = seed_range();
    return run_and_collect(cfg);
  }();
  return st;
}

const SweepStats& sweep_sparse() {
  static const SweepStats st = [] {
    SweepConfig cfg;
    cfg.data = {DataKind::triangle, 50, "1:9", false, true};
    cfg.methods = {"vanilla", "two_stage_sparse"};
    cfg.seeds = seed_range();
    return run_and_collect(cfg);
  }();
  return st;
}

const SweepStats& sweep_spurious() {
  static const SweepStats st = run_and_collect(preset_sweep("spurious-triangle-100"));
  return st;
}

/// Fixed 20-epoch runs (no early stop, final-epoch parameters) for the
/// convergence-speed comparison of the ablations.
const SweepStats& sweep_epoch20() {
  static const SweepStats st = [] {
    SweepConfig cfg;
    cfg.data = {DataKind::triangle, 50, "1:1", false, false};
    cfg.methods = {"two_stage", "ablation_joint", "ablation_no_mapper"};
    cfg.seeds = seed_range();
    cfg.overrides = {{"max_epochs", "20"}, {"patience", "200"}, {"restore_best", "0"}};
    return run_and_collect(cfg);
  }();
  return st;
}

uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t params_checksum(const std::vector<Var>& params) {
  uint64_t h = 1469598103934665603ull;
  for (const Var& v : params)
    h = fnv1a(v.value().data(), sizeof(float) * static_cast<size_t>(v.size()), h);
  return h;
}

bool params_bitwise_equal(const Model& a, const Model& b) {
  if (a.params.size() != b.params.size()) return false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    const Tensor& x = a.params[i].second.value();
    const Tensor& y = b.params[i].second.value();
    if (x.size() != y.size()) return false;
    if (std::memcmp(x.data(), y.data(), sizeof(float) * static_cast<size_t>(x.size())) != 0)
      return false;
  }
  return true;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Double-precision reference of the full model: three conv/relu/pool blocks,
// a 1x1-conv channel mapper, and a sigmoid linear head, mirroring the float
// forward pass but accumulated entirely in double.

struct RefModel {
  // conv weights/biases per layer, mapper, classifier
  std::vector<Arr> cw, cb;
  std::vector<int> out_ch, kernel, pad;
  Arr mw, mb, fw, fb;
  int in_size = 64;
};

RefModel to_ref(const Model& m) {
  RefModel r;
  auto arr = [&](const std::string& name) {
    return m.param(name).value().array().cast<double>().eval();
  };
  for (size_t i = 0; i < m.spec.conv_layers.size(); ++i) {
    r.cw.push_back(arr("conv" + std::to_string(i + 1) + ".weight"));
    r.cb.push_back(arr("conv" + std::to_string(i + 1) + ".bias"));
    r.out_ch.push_back(m.spec.conv_layers[i].out_channels);
    r.kernel.push_back(m.spec.conv_layers[i].kernel);
    r.pad.push_back(m.spec.conv_layers[i].pad);
  }
  r.mw = arr("mapper.weight");
  r.mb = arr("mapper.bias");
  r.fw = arr("fc1.weight");
  r.fb = arr("fc1.bias");
  r.in_size = m.spec.in_size;
  return r;
}

/// probs [n] of the reference forward pass; `grads` indexes match
/// Model::params order: conv1.w, conv1.b, ..., mapper.w, mapper.b, fc1.w, fc1.b.
Arr ref_forward(const RefModel& rm, const Arr& x, int n) {
  Arr h = x;
  int c = 1, s = rm.in_size;
  for (size_t i = 0; i < rm.cw.size(); ++i) {
    int o = rm.out_ch[i], k = rm.kernel[i];
    h = refops::conv2d(h, n, c, s, s, rm.cw[i], o, k, k, rm.cb[i], 1, rm.pad[i]);
    h = h.max(0.0);
    h = refops::maxpool2x2(h, n, o, s, s);
    c = o;
    s /= 2;
  }
  h = refops::conv2d(h, n, c, s, s, rm.mw, c, 1, 1, rm.mb, 1, 0);  // channel mapper
  Arr logits = refops::linear(h, n, c * s * s, rm.fw, 1, rm.fb);
  return 1.0 / (1.0 + (-logits).exp());
}

double ref_loss(const RefModel& rm, const Arr& x, int n, const Arr& y) {
  return refops::bce(ref_forward(rm, x, n), y);
}

Arr* ref_param_slot(RefModel& rm, const std::string& name) {
  for (size_t i = 0; i < rm.cw.size(); ++i) {
    if (name == "conv" + std::to_string(i + 1) + ".weight") return &rm.cw[i];
    if (name == "conv" + std::to_string(i + 1) + ".bias") return &rm.cb[i];
  }
  if (name == "mapper.weight") return &rm.mw;
  if (name == "mapper.bias") return &rm.mb;
  if (name == "fc1.weight") return &rm.fw;
  if (name == "fc1.bias") return &rm.fb;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Reporter: one line per criterion, details indented beneath it.

struct AcceptanceReporter : doctest::IReporter {
  std::ostream& out;
  std::string current;
  std::vector<std::string> details;
  int passed = 0, failed = 0;

  explicit AcceptanceReporter(const doctest::ContextOptions& in) : out(*in.cout) {}

  void test_case_start(const doctest::TestCaseData& tc) override {
    current = tc.m_name;
    details.clear();
  }
  void test_case_reenter(const doctest::TestCaseData&) override {}
  void test_case_end(const doctest::CurrentTestCaseStats& st) override {
    bool ok = st.testCaseSuccess;
    (ok ? passed : failed) += 1;
    char line[512];
    std::snprintf(line, sizeof(line), "%s  %s  (%.1fs)", ok ? "PASS" : "FAIL",
                  current.c_str(), st.seconds);
    out << line << "\n";
    for (const std::string& d : details) out << "       " << d << "\n";
    out.flush();
  }
  void test_case_exception(const doctest::TestCaseException& e) override {
    details.push_back(std::string("exception: ") + e.error_string.c_str());
  }
  void log_assert(const doctest::AssertData& ad) override {
    if (!ad.m_failed) return;
    std::string d = std::string(ad.m_file) + ":" + std::to_string(ad.m_line) + ": " +
                    ad.m_expr;
    if (ad.m_decomp.size()) d += std::string("  ( ") + ad.m_decomp.c_str() + " )";
    details.push_back(d);
  }
  void log_message(const doctest::MessageData& md) override {
    details.push_back(md.m_string.c_str());
  }
  void test_run_start() override {}
  void test_run_end(const doctest::TestRunStats& st) override {
    out << (st.numTestCasesFailed == 0 ? "ACCEPTED" : "REJECTED") << ": "
        << (st.numTestCases - st.numTestCasesFailed) << "/" << st.numTestCases
        << " criteria hold\n";
  }
  void subcase_start(const doctest::SubcaseSignature&) override {}
  void subcase_end() override {}
  void report_query(const doctest::QueryData&) override {}
  void test_case_skipped(const doctest::TestCaseData&) override {}
};

DOCTEST_REGISTER_REPORTER("acceptance", 0, AcceptanceReporter);

}  // namespace

TEST_SUITE_BEGIN("acceptance");

// ---------------------------------------------------------------------------
TEST_CASE("criterion 01: analytic gradients match finite differences for every op and the full model") {
  auto rng = make_rng(900, 0);

  // Every differentiable op, 20 random instances each, against central finite
  // differences of an independent double-precision reference.
  for (int t = 0; t < kTrials; ++t) {
    Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {3, 4});
    check_op({[](const Vars& v) { return add(v[0], v[1]); },
              [](const Darrs& d) { return Arr(d[0] + d[1]); }},
             {a, b}, rng);
    check_op({[](const Vars& v) { return sub(v[0], v[1]); },
              [](const Darrs& d) { return Arr(d[0] - d[1]); }},
             {a, b}, rng);
    check_op({[](const Vars& v) { return mul(v[0], v[1]); },
              [](const Darrs& d) { return Arr(d[0] * d[1]); }},
             {a, b}, rng);
    check_op({[](const Vars& v) { return div(v[0], v[1]); },
              [](const Darrs& d) { return Arr(d[0] / d[1]); }},
             {a, rand_tensor(rng, {3, 4}, 0.5f, 2.0f)}, rng);
    check_op({[](const Vars& v) { return neg(v[0]); },
              [](const Darrs& d) { return Arr(-d[0]); }},
             {rand_tensor(rng, {2, 5})}, rng);
    check_op({[](const Vars& v) { return sadd(v[0], 0.7f); },
              [](const Darrs& d) { return Arr(d[0] + double(0.7f)); }},
             {rand_tensor(rng, {7})}, rng);
    check_op({[](const Vars& v) { return smul(v[0], -1.3f); },
              [](const Darrs& d) { return Arr(d[0] * double(-1.3f)); }},
             {rand_tensor(rng, {7})}, rng);
    check_op({[](const Vars& v) { return exp(v[0]); },
              [](const Darrs& d) { return Arr(d[0].exp()); }},
             {rand_tensor(rng, {3, 3}, -2.0f, 2.0f)}, rng);
    check_op({[](const Vars& v) { return log(v[0]); },
              [](const Darrs& d) { return Arr(d[0].log()); }},
             {rand_tensor(rng, {3, 3}, 0.1f, 3.0f)}, rng);
    check_op({[](const Vars& v) { return pow_const(v[0], 2.0f); },
              [](const Darrs& d) { return Arr(d[0].pow(2.0)); }},
             {rand_tensor(rng, {6}, 0.2f, 2.0f)}, rng);
    check_op({[](const Vars& v) { return sigmoid(v[0]); },
              [](const Darrs& d) { return Arr(1.0 / (1.0 + (-d[0]).exp())); }},
             {rand_tensor(rng, {3, 4}, -4.0f, 4.0f)}, rng);

    // Kinked ops, sampled away from their kinks.
    auto away = [](const Tensor& t2, std::initializer_list<float> kinks) {
      for (int64_t i = 0; i < t2.size(); ++i)
        for (float k : kinks)
          if (std::abs(t2[i] - k) < 1e-2f) return false;
      return true;
    };
    Tensor xr = sample_until([&] { return rand_tensor(rng, {4, 4}); },
                             [&](const Tensor& t2) { return away(t2, {0.0f}); });
    check_op({[](const Vars& v) { return relu(v[0]); },
              [](const Darrs& d) { return Arr(d[0].max(0.0)); }},
             {xr}, rng);
    Tensor xc = sample_until([&] { return rand_tensor(rng, {4, 4}, -2.0f, 2.0f); },
                             [&](const Tensor& t2) { return away(t2, {-1.0f, 1.0f}); });
    check_op({[](const Vars& v) { return clamp(v[0], -1.0f, 1.0f); },
              [](const Darrs& d) { return Arr(d[0].max(-1.0).min(1.0)); }},
             {xc}, rng);
    Tensor xm = sample_until([&] { return rand_tensor(rng, {4, 4}, -1.0f, 1.0f); },
                             [&](const Tensor& t2) { return away(t2, {0.2f}); });
    check_op({[](const Vars& v) { return clamp_min(v[0], 0.2f); },
              [](const Darrs& d) { return Arr(d[0].max(0.2)); }},
             {xm}, rng);

    // Shape and reduction ops.
    check_op({[](const Vars& v) { return reshape(v[0], {4, 3}); },
              [](const Darrs& d) { return d[0]; }},
             {rand_tensor(rng, {2, 6})}, rng);
    check_op({[](const Vars& v) { return flatten(v[0]); },
              [](const Darrs& d) { return d[0]; }},
             {rand_tensor(rng, {2, 2, 3})}, rng);
    check_op({[](const Vars& v) { return transpose(v[0]); },
              [](const Darrs& d) {
                Arr out(d[0].size());
                for (int i = 0; i < 3; ++i)
                  for (int j = 0; j < 5; ++j) out[j * 3 + i] = d[0][i * 5 + j];
                return out;
              }},
             {rand_tensor(rng, {3, 5})}, rng);
    check_op({[](const Vars& v) { return broadcast_rows(v[0], 4); },
              [](const Darrs& d) {
                Arr out(4 * d[0].size());
                for (int i = 0; i < 4; ++i)
                  for (int j = 0; j < d[0].size(); ++j) out[i * d[0].size() + j] = d[0][j];
                return out;
              }},
             {rand_tensor(rng, {5})}, rng);
    check_op({[](const Vars& v) { return broadcast_cols(v[0], 5); },
              [](const Darrs& d) {
                Arr out(d[0].size() * 5);
                for (int i = 0; i < d[0].size(); ++i)
                  for (int j = 0; j < 5; ++j) out[i * 5 + j] = d[0][i];
                return out;
              }},
             {rand_tensor(rng, {3})}, rng);
    check_op({[](const Vars& v) { return colsum(v[0]); },
              [](const Darrs& d) {
                Arr out = Arr::Zero(4);
                for (int i = 0; i < 3; ++i)
                  for (int j = 0; j < 4; ++j) out[j] += d[0][i * 4 + j];
                return out;
              }},
             {rand_tensor(rng, {3, 4})}, rng);
    check_op({[](const Vars& v) { return rowsum(v[0]); },
              [](const Darrs& d) {
                Arr out = Arr::Zero(3);
                for (int i = 0; i < 3; ++i)
                  for (int j = 0; j < 4; ++j) out[i] += d[0][i * 4 + j];
                return out;
              }},
             {rand_tensor(rng, {3, 4})}, rng);
    check_op({[](const Vars& v) { return broadcast_scalar(v[0], {2, 3}); },
              [](const Darrs& d) { return Arr(Arr::Constant(6, d[0][0])); }},
             {rand_tensor(rng, {1})}, rng);
    check_op({[](const Vars& v) { return sum_all(v[0]); },
              [](const Darrs& d) {
                Arr out(1);
                out[0] = d[0].sum();
                return out;
              }},
             {rand_tensor(rng, {2, 3, 2})}, rng);
    check_op({[](const Vars& v) { return mean_all(v[0]); },
              [](const Darrs& d) {
                Arr out(1);
                out[0] = d[0].mean();
                return out;
              }},
             {rand_tensor(rng, {3, 4})}, rng);

    // Linear algebra, convolution, pooling.
    check_op({[](const Vars& v) { return matmul(v[0], v[1]); },
              [](const Darrs& d) { return refops::matmul(d[0], 3, 4, d[1], 2); }},
             {rand_tensor(rng, {3, 4}), rand_tensor(rng, {4, 2})}, rng);
    check_op({[](const Vars& v) { return linear(v[0], v[1], v[2]); },
              [](const Darrs& d) { return refops::linear(d[0], 2, 5, d[1], 3, d[2]); }},
             {rand_tensor(rng, {2, 5}), rand_tensor(rng, {3, 5}), rand_tensor(rng, {3})}, rng);
    int stride = 1 + t % 2, pad = t % 3 == 0 ? 0 : 1;
    check_op({[=](const Vars& v) { return im2col(v[0], 3, 3, stride, pad); },
              [=](const Darrs& d) {
                int C = 2, H = 5, W = 5;
                int OH = (H + 2 * pad - 3) / stride + 1;
                int OW = (W + 2 * pad - 3) / stride + 1;
                Arr out = Arr::Zero(C * 9 * OH * OW);
                for (int c = 0; c < C; ++c)
                  for (int ki = 0; ki < 3; ++ki)
                    for (int kj = 0; kj < 3; ++kj)
                      for (int oh = 0; oh < OH; ++oh)
                        for (int ow = 0; ow < OW; ++ow) {
                          int ih = oh * stride - pad + ki;
                          int iw = ow * stride - pad + kj;
                          double val = 0.0;
                          if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                            val = d[0][(c * H + ih) * W + iw];
                          out[((c * 3 + ki) * 3 + kj) * (OH * OW) + oh * OW + ow] = val;
                        }
                return out;
              }},
             {rand_tensor(rng, {1, 2, 5, 5})}, rng);
    check_op({[=](const Vars& v) { return col2im(v[0], {1, 2, 5, 5}, 3, 3, stride, pad); },
              [=](const Darrs& d) {
                int C = 2, H = 5, W = 5;
                int OH = (H + 2 * pad - 3) / stride + 1;
                int OW = (W + 2 * pad - 3) / stride + 1;
                Arr out = Arr::Zero(C * H * W);
                for (int c = 0; c < C; ++c)
                  for (int ki = 0; ki < 3; ++ki)
                    for (int kj = 0; kj < 3; ++kj)
                      for (int oh = 0; oh < OH; ++oh)
                        for (int ow = 0; ow < OW; ++ow) {
                          int ih = oh * stride - pad + ki;
                          int iw = ow * stride - pad + kj;
                          if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                            out[(c * H + ih) * W + iw] +=
                                d[0][((c * 3 + ki) * 3 + kj) * (OH * OW) + oh * OW + ow];
                        }
                return out;
              }},
             {rand_tensor(rng, {2 * 9, ((5 + 2 * pad - 3) / stride + 1) *
                                           ((5 + 2 * pad - 3) / stride + 1)})},
             rng);
    check_op({[=](const Vars& v) { return conv2d(v[0], v[1], v[2], stride, pad); },
              [=](const Darrs& d) {
                return refops::conv2d(d[0], 1, 2, 5, 5, d[1], 3, 3, 3, d[2], stride, pad);
              }},
             {rand_tensor(rng, {1, 2, 5, 5}), rand_tensor(rng, {3, 2, 3, 3}),
              rand_tensor(rng, {3})},
             rng);
    auto no_ties = [](const Tensor& t2) {
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          float w[4] = {t2[(2 * i) * 4 + 2 * j], t2[(2 * i) * 4 + 2 * j + 1],
                        t2[(2 * i + 1) * 4 + 2 * j], t2[(2 * i + 1) * 4 + 2 * j + 1]};
          float mx = std::max(std::max(w[0], w[1]), std::max(w[2], w[3]));
          int at_max = 0;
          for (float v : w)
            if (mx - v < 1e-2f) ++at_max;
          if (at_max > 1) return false;
        }
      return true;
    };
    Tensor xp = sample_until([&] { return rand_tensor(rng, {1, 1, 4, 4}); }, no_ties);
    check_op({[](const Vars& v) { return maxpool2x2(v[0]); },
              [](const Darrs& d) { return refops::maxpool2x2(d[0], 1, 1, 4, 4); }},
             {xp}, rng);
    check_op({[](const Vars& v) { return softmax_flat(v[0]); },
              [](const Darrs& d) { return refops::softmax_flat(d[0], 1, 16); }},
             {rand_tensor(rng, {1, 4, 2, 2}, -2.0f, 2.0f)}, rng);

    // Losses; smaller steps keep log-curvature error within range.
    const double loss_eps = 3e-4;
    Tensor y(Shape{6, 1});
    for (int i = 0; i < 6; ++i) y[i] = float(uniform_int(rng, 0, 1));
    Var yc = Var::constant(y);
    Arr yd = testsup::to_double(y);
    check_op({[yc](const Vars& v) { return binary_cross_entropy(v[0], yc); },
              [yd](const Darrs& d) {
                Arr out(1);
                out[0] = refops::bce(d[0], yd);
                return out;
              }},
             {rand_tensor(rng, {6, 1}, 0.05f, 0.95f)}, rng, loss_eps);
    check_op({[yc](const Vars& v) { return focal_loss(v[0], yc, 2.0f, 0.3f); },
              [yd](const Darrs& d) {
                Arr out(1);
                out[0] = refops::focal(d[0], yd, 2.0, double(0.3f));
                return out;
              }},
             {rand_tensor(rng, {6, 1}, 0.05f, 0.95f)}, rng, loss_eps);
    Tensor p(Shape{3, 6});
    for (int i = 0; i < 3; ++i) {
      float s = 0;
      for (int j = 0; j < 6; ++j) {
        p[i * 6 + j] = uniform(rng, 0.05f, 1.0f);
        s += p[i * 6 + j];
      }
      for (int j = 0; j < 6; ++j) p[i * 6 + j] /= s;
    }
    Var pc = Var::constant(p);
    Arr pd = testsup::to_double(p);
    check_op({[pc](const Vars& v) { return kl_divergence(pc, v[0]); },
              [pd](const Darrs& d) {
                Arr out(1);
                out[0] = refops::kl(pd, d[0], 3, 6);
                return out;
              }},
             {rand_tensor(rng, {3, 6}, 0.1f, 1.0f)}, rng, loss_eps);
  }

  // Full model: analytic gradients at a random parameter point against finite
  // differences of the double-precision reference network, 20 instances.
  std::mt19937 mrng = make_rng(901, 0);
  int checked = 0;
  for (int t = 0; t < kTrials; ++t) {
    Model m = build_model(ArchSpec::synthetic(MapperKind::channel_linear), 500 + t);
    for (auto& [name, v] : m.params)
      if (name.find("bias") != std::string::npos)
        for (int64_t i = 0; i < v.size(); ++i) v.mutable_value()[i] = uniform(mrng, -0.05f, 0.05f);

    const int n = 2;
    Tensor x({n, 1, 64, 64});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = uniform(mrng, 0.0f, 1.0f);
    Tensor y({n, 1});
    y[0] = 0.0f;
    y[1] = 1.0f;
    Arr yd = testsup::to_double(y);

    Var xv = Var::leaf(x, true);
    Var loss = binary_cross_entropy(m.forward(xv), Var::constant(y));
    std::vector<Var> targets = m.all_params();
    targets.push_back(xv);
    std::vector<Var> grads = grad_of(loss, targets);

    RefModel rm = to_ref(m);
    Arr xd = testsup::to_double(x);

    const double eps = 1e-4;
    auto fd_matches = [&](double analytic, double* slot) {
      double orig = *slot;
      *slot = orig + eps;
      double up = ref_loss(rm, xd, n, yd);
      *slot = orig - eps;
      double dn = ref_loss(rm, xd, n, yd);
      *slot = orig;
      double fd = (up - dn) / (2 * eps);
      ++checked;
      return std::abs(analytic - fd) <= 1e-5 + 1e-3 * std::max(std::abs(analytic), std::abs(fd));
    };

    for (size_t pi = 0; pi < m.params.size(); ++pi) {
      Arr* slot = ref_param_slot(rm, m.params[pi].first);
      REQUIRE(slot != nullptr);
      int64_t j = 0;
      float best = -1.0f;
      for (int64_t k = 0; k < grads[pi].size(); ++k)
        if (std::abs(grads[pi].value()[k]) > best) {
          best = std::abs(grads[pi].value()[k]);
          j = k;
        }
      INFO("instance ", t, ", parameter ", m.params[pi].first, "[", j, "]");
      CHECK(fd_matches(grads[pi].value()[j], &(*slot)(j)));
    }
    // Largest input-pixel gradient: the path the attribution penalty trains.
    size_t gi = grads.size() - 1;
    int64_t j = 0;
    float best = -1.0f;
    for (int64_t k = 0; k < grads[gi].size(); ++k)
      if (std::abs(grads[gi].value()[k]) > best) {
        best = std::abs(grads[gi].value()[k]);
        j = k;
      }
    INFO("instance ", t, ", input pixel ", j);
    CHECK(fd_matches(grads[gi].value()[j], &xd(j)));
  }
  MESSAGE("full-model elements checked: ", checked);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 02: the second stage updates only the mapper over a full run") {
  DataSpec data{DataKind::triangle, 50, "1:1", false, false};
  RunSetup setup = plan_run(data, "two_stage", 1, {});
  Dataset train_ds = build_dataset(data.kind, data.size, data.class_ratio, setup.data_seed,
                                   false, false);
  Dataset val_ds = make_validation_set(train_ds, trial_validation_seed(setup.seed));
  Dataset test_ds = canonical_test_set(data.kind);

  Model m = build_model(ArchSpec::synthetic(setup.mapper), setup.seed);
  uint64_t snap_f = 0, snap_c = 0;
  uint64_t mapper_before = params_checksum(m.theta_m);
  bool have_snapshot = false;
  int stage2_steps = 0, violations = 0;
  StageObserver observer = [&](int stage, int) {
    if (stage == 1) {
      snap_f = params_checksum(m.theta_f);
      snap_c = params_checksum(m.theta_c);
      have_snapshot = true;
    } else {
      ++stage2_steps;
      if (!have_snapshot || params_checksum(m.theta_f) != snap_f ||
          params_checksum(m.theta_c) != snap_c)
        ++violations;
    }
  };
  RunRecord rec = train(m, train_ds, val_ds, test_ds, setup.cfg, observer);

  REQUIRE(rec.total_epochs > 0);
  CHECK(stage2_steps >= rec.total_epochs);
  CHECK(violations == 0);
  CHECK(params_checksum(m.theta_m) != mapper_before);
  MESSAGE("epochs=", rec.total_epochs, " second-stage steps=", stage2_steps,
          " untouched checksums violations=", violations);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 03: zeroed second stages and half-weight focal reduce exactly to the baseline") {
  Dataset ds = build_dataset(DataKind::triangle, 40, "1:1", 7100, false, false);

  auto run_with = [&](const std::string& method, MapperKind mapper,
                      auto mutate) -> std::pair<RunRecord, Model> {
    TrainConfig cfg = TrainConfig::defaults_for(method, ds);
    cfg.max_epochs = 5;
    cfg.patience = 99;
    cfg.restore_best = false;
    cfg.seed = 11;
    mutate(cfg);
    Model m = build_model(ArchSpec::synthetic(mapper), 11);
    RunRecord rec = train(m, ds, ds, ds, cfg);
    return {rec, std::move(m)};
  };

  // Feature-loss rate zero: the staged method is the plain baseline.
  auto [r2s, m2s] = run_with("two_stage", MapperKind::channel_linear, [](TrainConfig& c) {
    c.eta2 = 0.0f;
    c.optimizer = "adam";
    c.eta1 = 0.001f;
  });
  auto [rv1, mv1] = run_with("vanilla", MapperKind::channel_linear, [](TrainConfig& c) {
    c.optimizer = "adam";
    c.eta1 = 0.001f;
  });
  CHECK(r2s.train_losses == rv1.train_losses);
  CHECK(r2s.val_accuracies == rv1.val_accuracies);
  CHECK(params_bitwise_equal(m2s, mv1));

  // Penalty weight zero: attribution regularization is the plain baseline.
  auto [rgr, mgr] = run_with("gradreg", MapperKind::none, [](TrainConfig& c) { c.lambda = 0.0f; });
  auto [rv2, mv2] = run_with("vanilla", MapperKind::none, [](TrainConfig&) {});
  CHECK(rgr.train_losses == rv2.train_losses);
  CHECK(rgr.val_accuracies == rv2.val_accuracies);
  CHECK(params_bitwise_equal(mgr, mv2));

  // gamma=0, alpha=0.5 focal is exactly half the cross entropy; doubling a
  // power-of-two step size commutes with float rounding, so the descent
  // trajectories coincide bitwise and every logged loss is exactly half.
  auto [rfo, mfo] = run_with("focal", MapperKind::none, [](TrainConfig& c) {
    c.gamma = 0.0f;
    c.alpha = 0.5f;
    c.optimizer = "sgd";
    c.eta1 = 0.02f;
  });
  auto [rv3, mv3] = run_with("vanilla", MapperKind::none, [](TrainConfig& c) {
    c.optimizer = "sgd";
    c.eta1 = 0.01f;
  });
  REQUIRE(rfo.train_losses.size() == rv3.train_losses.size());
  for (size_t e = 0; e < rfo.train_losses.size(); ++e)
    CHECK(rfo.train_losses[e] == 0.5 * rv3.train_losses[e]);
  CHECK(rfo.val_accuracies == rv3.val_accuracies);
  CHECK(params_bitwise_equal(mfo, mv3));
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 04: explanation-guided training beats the baseline on balanced data") {
  const SweepStats& st = sweep_main();
  const MethodStats& ours = st.at("two_stage");
  const MethodStats& base = st.at("vanilla");
  const MethodStats& greg = st.at("gradreg");
  MESSAGE("two_stage ", fmt3(ours.mean), "+-", fmt3(ours.stdev), "  vanilla ", fmt3(base.mean),
          "+-", fmt3(base.stdev), "  gradreg ", fmt3(greg.mean), "+-", fmt3(greg.stdev));
  MESSAGE("reported, not gated: mean(gradreg) - mean(vanilla) = ",
          fmt3(greg.mean - base.mean), (greg.mean - base.mean <= 0.05 ? " (<= 0.05)" : " (> 0.05)"));
  CHECK(ours.mean - base.mean >= 0.05);
  CHECK(ours.stdev < base.stdev);
  CHECK(ours.mean >= 0.78);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 05: sparse minority-class explanations still beat the baseline at 1:9") {
  const SweepStats& st = sweep_sparse();
  const MethodStats& ours = st.at("two_stage_sparse");
  const MethodStats& base = st.at("vanilla");
  MESSAGE("two_stage_sparse ", fmt3(ours.mean), "+-", fmt3(ours.stdev), "  vanilla ",
          fmt3(base.mean), "+-", fmt3(base.stdev), " on the balanced test set");
  CHECK(ours.mean - base.mean >= 0.05);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 06: learned rules transfer to derived test sets") {
  const SweepStats& tri = sweep_main();
  double tri_gap = tri.at("two_stage").transfer_mean - tri.at("vanilla").transfer_mean;
  MESSAGE("triangle->pentagon: two_stage ", fmt3(tri.at("two_stage").transfer_mean),
          "  vanilla ", fmt3(tri.at("vanilla").transfer_mean), "  gap ", fmt3(tri_gap));

  const SweepStats& fox = sweep_foxcat();
  double fox_gap = fox.at("two_stage").transfer_mean - fox.at("vanilla").transfer_mean;
  MESSAGE("foxcat->shape-only: two_stage ", fmt3(fox.at("two_stage").transfer_mean),
          "  vanilla ", fmt3(fox.at("vanilla").transfer_mean), "  gap ", fmt3(fox_gap));

  CHECK(tri_gap >= 0.05);
  CHECK(fox_gap >= 0.05);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 07: independently seeded models agree on held-out predictions") {
  const SweepStats& st = sweep_main();
  double ours = st.at("two_stage").agreement;
  double base = st.at("vanilla").agreement;
  REQUIRE(ours >= 0.0);
  REQUIRE(base >= 0.0);
  MESSAGE("mean pairwise agreement: two_stage ", fmt3(ours), "  vanilla ", fmt3(base));
  CHECK(ours - base >= 0.10);
  CHECK(ours >= 0.85);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 08: explanation guidance resists spurious shortcuts") {
  const SweepStats& st = sweep_spurious();
  const MethodStats& ours = st.at("two_stage");
  const MethodStats& base = st.at("vanilla");
  MESSAGE("clean-test accuracy after spurious training: two_stage ", fmt3(ours.mean), "+-",
          fmt3(ours.stdev), "  vanilla ", fmt3(base.mean), "+-", fmt3(base.stdev));
  CHECK(ours.mean - base.mean >= 0.08);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 09: staged training is at joint level and above no-mapper at epoch twenty") {
  const SweepStats& st = sweep_epoch20();
  double ours = st.at("two_stage").mean;
  double joint = st.at("ablation_joint").mean;
  double nomap = st.at("ablation_no_mapper").mean;
  MESSAGE("epoch-20 test accuracy: two_stage ", fmt3(ours), "  joint ", fmt3(joint),
          "  no_mapper ", fmt3(nomap));
  CHECK(ours >= joint - 0.02);
  CHECK(ours > nomap);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 10: sweep reruns produce byte-identical artifacts") {
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  fs::path a = scratch() / "repeat_a";
  fs::path b = scratch() / "repeat_b";
  std::string grid = " sweep --kind triangle --size 50 --methods vanilla,gradreg,two_stage"
                     " --seeds 1,2 --set max_epochs=6 --set patience=99 -o ";
  std::string base = std::string(XPLT_CLI_PATH);
  int rc1 = std::system((base + grid + a.string() + " > /dev/null 2>&1").c_str());
  int rc2 = std::system((base + grid + b.string() + " > /dev/null 2>&1").c_str());
  REQUIRE(WIFEXITED(rc1));
  REQUIRE(WEXITSTATUS(rc1) == 0);
  REQUIRE(WIFEXITED(rc2));
  REQUIRE(WEXITSTATUS(rc2) == 0);
  for (const char* f : {"summary.csv", "agreement.csv", "transfer.csv", "metrics.csv",
                        "curves.svg"}) {
    INFO("artifact ", f);
    std::string ca = slurp(a / f), cb = slurp(b / f);
    REQUIRE(!ca.empty());
    CHECK(ca == cb);
  }
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 11: generated datasets obey their stated rules and round-trip") {
  // Label realizability on every kind, from the recorded geometry alone.
  for (DataKind kind : {DataKind::triangle, DataKind::pentagon, DataKind::foxcat,
                        DataKind::triangle_vs_circle}) {
    const Dataset ds = canonical_test_set(kind);
    REQUIRE(static_cast<int>(ds.examples.size()) == 1000);
    int label_mismatches = 0;
    for (const Example& ex : ds.examples) {
      int rule;
      if (ex.geom.shape == "fox")
        rule = 1;
      else if (ex.geom.shape == "cat")
        rule = 0;
      else
        rule = ex.geom.at("apex_row") < ex.geom.at("base_row") ? 1 : 0;
      if (rule != ex.label) ++label_mismatches;
    }
    INFO("kind ", kind_name(kind));
    CHECK(label_mismatches == 0);
  }

  // Spurious squares never overlap the explanation mask.
  for (DataKind kind : {DataKind::triangle, DataKind::foxcat}) {
    Dataset sp = build_dataset(kind, 1000, "1:1", 9090, true, false);
    int overlaps = 0;
    for (const Example& ex : sp.examples) {
      REQUIRE(ex.spurious);
      REQUIRE(ex.has_mask);
      int r0 = ex.geom.at("sq_row"), c0 = ex.geom.at("sq_col");
      for (int r = r0; r < r0 + 6; ++r)
        for (int c = c0; c < c0 + 6; ++c)
          if (ex.mask.at(r, c)) ++overlaps;
    }
    INFO("kind ", kind_name(kind));
    CHECK(overlaps == 0);
  }

  // Save -> load -> save round trips byte-exactly.
  auto dir_bytes = [](const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) {
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        files[fs::relative(e.path(), root).generic_string()] = ss.str();
      }
    return files;
  };
  int k = 0;
  for (const Dataset& ds :
       {build_dataset(DataKind::triangle, 1000, "1:9", 9191, false, true),
        build_dataset(DataKind::foxcat, 1000, "1:1", 9292, true, false)}) {
    fs::path d1 = scratch() / ("roundtrip_a" + std::to_string(k));
    fs::path d2 = scratch() / ("roundtrip_b" + std::to_string(k));
    ++k;
    save_dataset(ds, d1.string());
    Dataset loaded = load_dataset(d1.string());
    save_dataset(loaded, d2.string());
    CHECK(dir_bytes(d1) == dir_bytes(d2));
  }
}

TEST_SUITE_END();

int main(int argc, char** argv) {
  doctest::Context ctx(argc, argv);
  ctx.setOption("reporters", "acceptance");
  ctx.setOption("order-by", "name");
  return ctx.run();
}
