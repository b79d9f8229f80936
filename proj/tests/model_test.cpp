#include "xplt/model.hpp"

#include "xplt/losses.hpp"
#include "xplt/optim.hpp"
#include "xplt/rng.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace xplt;
namespace fs = std::filesystem;

namespace {

Tensor rand_image_batch(int n, std::mt19937& rng) {
  Tensor t({n, 1, 64, 64});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = uniform_int(rng, 0, 3) == 0 ? 1.0f : 0.0f;
  return t;
}

fs::path tmpfile(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("identity mapper is exact and matches the mapper-free model at init") {
  std::mt19937 rng = make_rng(3, 1);
  Tensor x = rand_image_batch(3, rng);

  for (MapperKind kind : {MapperKind::channel_linear, MapperKind::full_dense}) {
    Model m = build_model(ArchSpec::synthetic(kind), 42);
    Var xc = Var::constant(x);
    Var feat = m.feature(xc);
    Var mapped = m.mapped(feat);
    REQUIRE(same_shape(mapped.shape(), feat.shape()));
    for (int64_t i = 0; i < feat.size(); ++i) REQUIRE(mapped.value()[i] == feat.value()[i]);

    Model bare = build_model(ArchSpec::synthetic(MapperKind::none), 42);
    Var y_mapped = m.forward(xc);
    Var y_bare = bare.forward(xc);
    for (int64_t i = 0; i < y_bare.size(); ++i) CHECK(y_mapped.value()[i] == y_bare.value()[i]);
  }
}

TEST_CASE("feature extractor output shape follows the conv arithmetic") {
  Model m = build_model(ArchSpec::synthetic(), 1);
  std::mt19937 rng = make_rng(4, 1);
  Var x = Var::constant(rand_image_batch(2, rng));
  Var feat = m.feature(x);
  CHECK(feat.shape() == Shape{2, 32, 8, 8});
  CHECK(m.spec.feature_dim() == 2048);

  Model shallow = build_model(ArchSpec::shallow(), 1);
  CHECK(shallow.feature(x).shape() == Shape{2, 16, 16, 16});

  CHECK_THROWS_AS(m.feature(Var::constant(Tensor({2, 1, 32, 32}))), ShapeError);
  ArchSpec odd = ArchSpec::synthetic();
  odd.in_size = 62;  // 62 -> 31, odd before pooling
  CHECK_THROWS_AS(build_model(odd, 1), ConfigError);
}

TEST_CASE("parameter count and partition match the analytic formula") {
  Model m = build_model(ArchSpec::synthetic(MapperKind::channel_linear), 7);
  int64_t conv = (8 * 1 * 9 + 8) + (16 * 8 * 9 + 16) + (32 * 16 * 9 + 32);
  int64_t mapper = 32 * 32 + 32;
  int64_t fc = 2048 + 1;
  CHECK(m.param_count() == conv + mapper + fc);

  int64_t nf = 0, nm = 0, nc = 0;
  for (const Var& v : m.theta_f) nf += v.size();
  for (const Var& v : m.theta_m) nm += v.size();
  for (const Var& v : m.theta_c) nc += v.size();
  CHECK(nf == conv);
  CHECK(nm == mapper);
  CHECK(nc == fc);
  CHECK(nf + nm + nc == m.param_count());

  // Partition is disjoint: no node appears in two groups.
  std::vector<const Node*> seen;
  for (const auto& group : {m.theta_f, m.theta_m, m.theta_c})
    for (const Var& v : group) {
      CHECK(std::find(seen.begin(), seen.end(), v.node()) == seen.end());
      seen.push_back(v.node());
    }

  // Same seed, different mapper kind: backbone and classifier match bitwise.
  Model bare = build_model(ArchSpec::synthetic(MapperKind::none), 7);
  for (const char* name : {"conv1.weight", "conv2.weight", "conv3.weight", "fc1.weight"}) {
    const Tensor& a = m.param(name).value();
    const Tensor& b = bare.param(name).value();
    for (int64_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
  }
}

TEST_CASE("forward is a deterministic probability, equivariant to batch order") {
  Model m = build_model(ArchSpec::synthetic(), 11);
  std::mt19937 rng = make_rng(5, 2);
  Tensor x = rand_image_batch(8, rng);
  Var y1 = m.forward(Var::constant(x));
  Var y2 = m.forward(Var::constant(x));
  REQUIRE(y1.shape() == Shape{8, 1});
  for (int i = 0; i < 8; ++i) {
    CHECK(y1.value()[i] > 0.0f);
    CHECK(y1.value()[i] < 1.0f);
    CHECK(y1.value()[i] == y2.value()[i]);
  }

  // Reversed batch gives the reversed outputs bitwise.
  Tensor xr({8, 1, 64, 64});
  const int npx = 64 * 64;
  for (int i = 0; i < 8; ++i)
    std::copy(x.data() + i * npx, x.data() + (i + 1) * npx, xr.data() + (7 - i) * npx);
  Var yr = m.forward(Var::constant(xr));
  for (int i = 0; i < 8; ++i) CHECK(yr.value()[7 - i] == y1.value()[i]);
}

TEST_CASE("classifier loss gradients match finite differences in every layer") {
  Model m = build_model(ArchSpec::synthetic(), 13);
  // Zero biases put relu kinks exactly at the evaluation point (all-black conv
  // windows produce pre-activations equal to the bias); move to a generic point.
  std::mt19937 brng = make_rng(6, 9);
  for (auto& [name, v] : m.params)
    if (name.find("bias") != std::string::npos)
      for (int64_t i = 0; i < v.size(); ++i) v.mutable_value()[i] = uniform(brng, -0.05f, 0.05f);

  std::mt19937 rng = make_rng(6, 3);
  Tensor x = rand_image_batch(4, rng);
  Tensor y({4, 1});
  for (int i = 0; i < 4; ++i) y[i] = static_cast<float>(i % 2);

  auto loss_value = [&]() {
    NoGradGuard ng;
    return binary_cross_entropy(m.forward(Var::constant(x)), Var::constant(y)).value().item();
  };

  Var loss = binary_cross_entropy(m.forward(Var::constant(x)), Var::constant(y));
  std::vector<Var> targets = m.all_params();
  std::vector<Var> grads = grad_of(loss, targets);

  // The largest-gradient element of each tensor keeps the finite-difference
  // signal above float32 forward noise.
  for (size_t pi = 0; pi < targets.size(); ++pi) {
    Var p = targets[pi];
    int64_t j = 0;
    float best = -1.0f;
    for (int64_t k = 0; k < p.size(); ++k)
      if (std::abs(grads[pi].value()[k]) > best) {
        best = std::abs(grads[pi].value()[k]);
        j = k;
      }
    float orig = p.value()[j];
    const float eps = 3e-3f;
    p.mutable_value()[j] = orig + eps;
    float up = loss_value();
    p.mutable_value()[j] = orig - eps;
    float down = loss_value();
    p.mutable_value()[j] = orig;
    float fd = (up - down) / (2 * eps);
    float got = grads[pi].value()[j];
    INFO("param ", m.params[pi].first, " fd=", fd, " grad=", got);
    CHECK(std::abs(got - fd) <= 5e-4f + 3e-2f * std::abs(fd));
  }
}

TEST_CASE("feature pair: identity model under a full mask, and stage-2 descent") {
  Model m = build_model(ArchSpec::synthetic(), 17);
  std::mt19937 rng = make_rng(7, 3);
  Tensor x = rand_image_batch(2, rng);
  Tensor ones({2, 1, 64, 64});
  ones.array().setOnes();

  auto [x_feat, target] = feature_pair(m, Var::constant(x), Var::constant(ones), true);
  CHECK_FALSE(target.requires_grad());
  for (int64_t i = 0; i < x_feat.size(); ++i) REQUIRE(x_feat.value()[i] == target.value()[i]);
  CHECK(kl_divergence(target, x_feat).value().item() == doctest::Approx(0.0).epsilon(1e-6));

  // Per-example normalization.
  for (int n = 0; n < 2; ++n) {
    double s = 0;
    for (int i = 0; i < 2048; ++i) s += x_feat.value()[n * 2048 + i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }

  // A real mask gives a nonzero loss that one mapper-only step reduces.
  Tensor real({2, 1, 64, 64});
  for (int64_t i = 0; i < real.size(); ++i) real[i] = (i % 97) < 20 ? 1.0f : 0.0f;
  auto step_once = [&](bool detach) {
    auto [xf, tgt] = feature_pair(m, Var::constant(x), Var::constant(real), detach);
    return kl_divergence(tgt, xf);
  };
  float before = step_once(true).value().item();
  REQUIRE(before > 1e-4f);
  Optimizer opt = Optimizer::sgd(m.theta_m, 0.05f);
  Var loss = step_once(true);
  opt.zero_grad();
  backward(loss);
  opt.step();
  float after = step_once(true).value().item();
  CHECK(after < before);

  // Backbone gradients flow only when not detached.
  Var conv_w = m.param("conv1.weight");
  Var l1 = step_once(true);
  Var g1 = grad_of(l1, {conv_w})[0];
  CHECK(g1.value().array().abs().maxCoeff() == 0.0f);
  Var l2 = step_once(false);
  Var g2 = grad_of(l2, {conv_w})[0];
  CHECK(g2.value().array().abs().maxCoeff() > 0.0f);

  CHECK_THROWS_AS(feature_pair(m, Var::constant(x), Var(), true), Error);
  CHECK_THROWS_AS(feature_pair(m, Var::constant(x), Var::constant(Tensor({2, 1, 32, 32})), true),
                  ShapeError);
}

TEST_CASE("checkpoint round trip is bitwise and rejects damaged files") {
  Model m = build_model(ArchSpec::synthetic(), 23);
  fs::path path = tmpfile("xplt_model.ckpt");
  save_checkpoint(m, path.string());
  Model back = load_checkpoint(path.string());

  CHECK(back.param_count() == m.param_count());
  CHECK(back.spec.mapper == m.spec.mapper);
  for (size_t i = 0; i < m.params.size(); ++i) {
    CHECK(back.params[i].first == m.params[i].first);
    const Tensor& a = m.params[i].second.value();
    const Tensor& b = back.params[i].second.value();
    for (int64_t j = 0; j < a.size(); ++j) REQUIRE(a[j] == b[j]);
  }

  std::mt19937 rng = make_rng(8, 3);
  Tensor x = rand_image_batch(2, rng);
  Var y1 = m.forward(Var::constant(x));
  Var y2 = back.forward(Var::constant(x));
  for (int64_t i = 0; i < y1.size(); ++i) CHECK(y1.value()[i] == y2.value()[i]);

  auto corrupt = [&](const std::string& name, int pos, char byte) {
    fs::path p = tmpfile(name);
    fs::copy_file(path, p);
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(pos);
    f.put(byte);
    f.close();
    return p;
  };
  try {
    load_checkpoint(corrupt("xplt_magic.ckpt", 0, 'Y').string());
    FAIL_CHECK("bad magic accepted");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("magic") != std::string::npos);
  }
  try {
    load_checkpoint(corrupt("xplt_ver.ckpt", 4, '\x7') .string());
    FAIL_CHECK("bad version accepted");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  fs::path trunc = tmpfile("xplt_trunc.ckpt");
  fs::copy_file(path, trunc);
  fs::resize_file(trunc, fs::file_size(trunc) / 2);
  try {
    load_checkpoint(trunc.string());
    FAIL_CHECK("truncated file accepted");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST_SUITE_END();
