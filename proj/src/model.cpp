#include "xplt/model.hpp"

#include "xplt/losses.hpp"
#include "xplt/rng.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace xplt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'X', 'P', 'L', 'T'};
constexpr uint8_t kVersion = 1;

// Seed streams: one per layer, so architectures sharing a layer draw
// identical values regardless of which other layers exist.
uint64_t conv_stream(int i) { return 10 + static_cast<uint64_t>(i); }
constexpr uint64_t kMapperStream = 20;
uint64_t fc_stream(int i) { return 30 + static_cast<uint64_t>(i); }

void validate_spec(const ArchSpec& spec) {
  if (spec.in_channels <= 0 || spec.in_size <= 0) throw ConfigError("bad input dims");
  if (spec.conv_layers.empty()) throw ConfigError("at least one conv layer is required");
  int s = spec.in_size;
  for (size_t i = 0; i < spec.conv_layers.size(); ++i) {
    const ConvLayer& l = spec.conv_layers[i];
    if (l.out_channels <= 0 || l.kernel <= 0 || l.stride <= 0 || l.pad < 0)
      throw ConfigError("conv layer " + std::to_string(i + 1) + " has invalid dims");
    s = conv_out_dim(s, l.kernel, l.stride, l.pad);
    if (s <= 0)
      throw ConfigError("conv layer " + std::to_string(i + 1) + " shrinks the input away");
    if (s % 2 != 0)
      throw ConfigError("conv layer " + std::to_string(i + 1) + " leaves an odd size " +
                        std::to_string(s) + " before 2x2 pooling");
    s /= 2;
  }
  for (int d : spec.hidden_dims)
    if (d <= 0) throw ConfigError("classifier hidden dim must be positive");
}

std::vector<int64_t> classifier_dims(const ArchSpec& spec) {
  std::vector<int64_t> dims = {spec.feature_dim()};
  for (int d : spec.hidden_dims) dims.push_back(d);
  dims.push_back(1);
  return dims;
}

Tensor uniform_tensor(Shape shape, float bound, std::mt19937& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = uniform(rng, -bound, bound);
  return t;
}

/// Allocates named zero parameters and the theta partition for a spec.
Model assemble(const ArchSpec& spec) {
  validate_spec(spec);
  Model m;
  m.spec = spec;
  int in_ch = spec.in_channels;
  for (size_t i = 0; i < spec.conv_layers.size(); ++i) {
    const ConvLayer& l = spec.conv_layers[i];
    std::string base = "conv" + std::to_string(i + 1);
    Var w = Var::leaf(Tensor({l.out_channels, in_ch, l.kernel, l.kernel}), true);
    Var b = Var::leaf(Tensor({l.out_channels}), true);
    m.params.emplace_back(base + ".weight", w);
    m.params.emplace_back(base + ".bias", b);
    m.theta_f.push_back(w);
    m.theta_f.push_back(b);
    in_ch = l.out_channels;
  }
  if (spec.mapper == MapperKind::channel_linear) {
    int c = spec.feature_channels();
    Var w = Var::leaf(Tensor({c, c, 1, 1}), true);
    Var b = Var::leaf(Tensor({c}), true);
    m.params.emplace_back("mapper.weight", w);
    m.params.emplace_back("mapper.bias", b);
    m.theta_m = {w, b};
  } else if (spec.mapper == MapperKind::full_dense) {
    int d = static_cast<int>(spec.feature_dim());
    Var w = Var::leaf(Tensor({d, d}), true);
    Var b = Var::leaf(Tensor({d}), true);
    m.params.emplace_back("mapper.weight", w);
    m.params.emplace_back("mapper.bias", b);
    m.theta_m = {w, b};
  }
  std::vector<int64_t> dims = classifier_dims(spec);
  for (size_t j = 0; j + 1 < dims.size(); ++j) {
    std::string base = "fc" + std::to_string(j + 1);
    Var w = Var::leaf(Tensor({static_cast<int>(dims[j + 1]), static_cast<int>(dims[j])}), true);
    Var b = Var::leaf(Tensor({static_cast<int>(dims[j + 1])}), true);
    m.params.emplace_back(base + ".weight", w);
    m.params.emplace_back(base + ".bias", b);
    m.theta_c.push_back(w);
    m.theta_c.push_back(b);
  }
  return m;
}

}  // namespace

std::string mapper_name(MapperKind kind) {
  switch (kind) {
    case MapperKind::none: return "none";
    case MapperKind::channel_linear: return "channel_linear";
    case MapperKind::full_dense: return "full_dense";
  }
  throw Error("unknown mapper kind");
}

MapperKind parse_mapper(const std::string& name) {
  if (name == "none") return MapperKind::none;
  if (name == "channel_linear") return MapperKind::channel_linear;
  if (name == "full_dense") return MapperKind::full_dense;
  throw ConfigError("unknown mapper kind '" + name + "'");
}

ArchSpec ArchSpec::synthetic(MapperKind mapper) {
  ArchSpec spec;
  spec.conv_layers = {{8, 3, 1, 1}, {16, 3, 1, 1}, {32, 3, 1, 1}};
  spec.mapper = mapper;
  return spec;
}

ArchSpec ArchSpec::shallow(MapperKind mapper) {
  ArchSpec spec;
  spec.conv_layers = {{8, 3, 1, 1}, {16, 3, 1, 1}};
  spec.mapper = mapper;
  return spec;
}

int ArchSpec::feature_channels() const {
  if (conv_layers.empty()) throw ConfigError("no conv layers");
  return conv_layers.back().out_channels;
}

int ArchSpec::feature_size() const {
  int s = in_size;
  for (const ConvLayer& l : conv_layers) s = conv_out_dim(s, l.kernel, l.stride, l.pad) / 2;
  return s;
}

Var Model::feature(const Var& x) const {
  if (x.shape().size() != 4 || x.shape()[1] != spec.in_channels || x.shape()[2] != spec.in_size ||
      x.shape()[3] != spec.in_size)
    throw ShapeError("model expects [N," + std::to_string(spec.in_channels) + "," +
                     std::to_string(spec.in_size) + "," + std::to_string(spec.in_size) +
                     "], got " + shape_str(x.shape()));
  Var h = x;
  for (size_t i = 0; i < spec.conv_layers.size(); ++i) {
    const ConvLayer& l = spec.conv_layers[i];
    std::string base = "conv" + std::to_string(i + 1);
    h = maxpool2x2(relu(conv2d(h, param(base + ".weight"), param(base + ".bias"), l.stride, l.pad)));
  }
  return h;
}

Var Model::mapped(const Var& feat) const {
  if (spec.mapper == MapperKind::none) return feat;
  if (spec.mapper == MapperKind::channel_linear)
    return conv2d(feat, param("mapper.weight"), param("mapper.bias"), 1, 0);
  Var flat = flatten(feat);
  Var out = linear(flat, param("mapper.weight"), param("mapper.bias"));
  return reshape(out, feat.shape());
}

Var Model::classify(const Var& feat) const {
  Var h = flatten(feat);
  size_t n_fc = spec.hidden_dims.size() + 1;
  for (size_t j = 0; j < n_fc; ++j) {
    std::string base = "fc" + std::to_string(j + 1);
    h = linear(h, param(base + ".weight"), param(base + ".bias"));
    if (j + 1 < n_fc) h = relu(h);
  }
  return sigmoid(h);
}

Var Model::forward(const Var& x) const { return classify(mapped(feature(x))); }

Var Model::param(const std::string& name) const {
  for (const auto& [n, v] : params)
    if (n == name) return v;
  throw Error("model has no parameter '" + name + "'");
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& [name, v] : params) n += v.size();
  return n;
}

std::vector<Var> Model::all_params() const {
  std::vector<Var> out;
  for (const auto& [name, v] : params) out.push_back(v);
  return out;
}

Model build_model(const ArchSpec& spec, uint64_t seed) {
  Model m = assemble(spec);
  int in_ch = spec.in_channels;
  for (size_t i = 0; i < spec.conv_layers.size(); ++i) {
    const ConvLayer& l = spec.conv_layers[i];
    std::mt19937 rng = make_rng(seed, conv_stream(static_cast<int>(i)));
    float bound = std::sqrt(6.0f / (static_cast<float>(in_ch) * l.kernel * l.kernel));
    m.param("conv" + std::to_string(i + 1) + ".weight").mutable_value() =
        uniform_tensor({l.out_channels, in_ch, l.kernel, l.kernel}, bound, rng);
    in_ch = l.out_channels;
  }
  if (spec.mapper == MapperKind::channel_linear) {
    int c = spec.feature_channels();
    Tensor& w = m.param("mapper.weight").mutable_value();
    for (int o = 0; o < c; ++o) w[static_cast<int64_t>(o) * c + o] = 1.0f;
  } else if (spec.mapper == MapperKind::full_dense) {
    int d = static_cast<int>(spec.feature_dim());
    Tensor& w = m.param("mapper.weight").mutable_value();
    for (int o = 0; o < d; ++o) w[static_cast<int64_t>(o) * d + o] = 1.0f;
  }
  std::vector<int64_t> dims = classifier_dims(spec);
  for (size_t j = 0; j + 1 < dims.size(); ++j) {
    std::mt19937 rng = make_rng(seed, fc_stream(static_cast<int>(j)));
    float bound = std::sqrt(6.0f / static_cast<float>(dims[j] + dims[j + 1]));
    m.param("fc" + std::to_string(j + 1) + ".weight").mutable_value() =
        uniform_tensor({static_cast<int>(dims[j + 1]), static_cast<int>(dims[j])}, bound, rng);
  }
  return m;
}

std::pair<Var, Var> feature_pair(const Model& model, const Var& x, const Var& mask,
                                 bool detach_backbone) {
  if (!mask.defined()) throw Error("feature_pair needs an explanation mask");
  if (!same_shape(mask.shape(), x.shape()))
    throw ShapeError("mask " + shape_str(mask.shape()) + " does not match input " +
                     shape_str(x.shape()));
  Var target;
  {
    NoGradGuard ng;
    target = softmax_flat(model.feature(mul(x, mask)));
  }
  Var feat = model.feature(x);
  if (detach_backbone) feat = feat.detach();
  Var x_feat = softmax_flat(model.mapped(feat));
  return {x_feat, target};
}

void save_checkpoint(const Model& model, const std::string& path) {
  json arch;
  arch["in_channels"] = model.spec.in_channels;
  arch["in_size"] = model.spec.in_size;
  json layers = json::array();
  for (const ConvLayer& l : model.spec.conv_layers)
    layers.push_back({{"out", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride},
                      {"pad", l.pad}});
  arch["conv_layers"] = std::move(layers);
  arch["mapper"] = mapper_name(model.spec.mapper);
  arch["hidden_dims"] = model.spec.hidden_dims;

  json plist = json::array();
  int64_t offset = 0;
  for (const auto& [name, v] : model.params) {
    plist.push_back({{"name", name}, {"shape", v.shape()}, {"offset", offset}});
    offset += v.size();
  }
  json header = {{"arch", std::move(arch)}, {"params", std::move(plist)}, {"total", offset}};
  std::string hbytes = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  uint32_t hlen = static_cast<uint32_t>(hbytes.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hbytes.data(), static_cast<std::streamsize>(hbytes.size()));
  for (const auto& [name, v] : model.params)
    out.write(reinterpret_cast<const char*>(v.value().data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("'" + path + "' is not a model checkpoint (bad magic)");
  int version = in.get();
  if (version != kVersion)
    throw IoError("'" + path + "' has unsupported checkpoint version " + std::to_string(version));
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  if (in.gcount() != 4) throw IoError("'" + path + "' is truncated (no header length)");
  std::string hbytes(hlen, '\0');
  in.read(hbytes.data(), hlen);
  if (in.gcount() != static_cast<std::streamsize>(hlen))
    throw IoError("'" + path + "' is truncated (incomplete header)");

  json header;
  ArchSpec spec;
  try {
    header = json::parse(hbytes);
    const json& arch = header.at("arch");
    spec.in_channels = arch.at("in_channels").get<int>();
    spec.in_size = arch.at("in_size").get<int>();
    for (const json& l : arch.at("conv_layers"))
      spec.conv_layers.push_back({l.at("out").get<int>(), l.at("kernel").get<int>(),
                                  l.at("stride").get<int>(), l.at("pad").get<int>()});
    spec.mapper = parse_mapper(arch.at("mapper").get<std::string>());
    spec.hidden_dims = arch.at("hidden_dims").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw IoError("'" + path + "' has a malformed checkpoint header: " + e.what());
  }

  Model m = assemble(spec);
  const json& plist = header.at("params");
  if (plist.size() != m.params.size())
    throw IoError("'" + path + "' lists " + std::to_string(plist.size()) + " parameters, spec needs " +
                  std::to_string(m.params.size()));
  for (size_t i = 0; i < m.params.size(); ++i) {
    const json& entry = plist[i];
    auto& [name, v] = m.params[i];
    if (entry.at("name").get<std::string>() != name)
      throw IoError("'" + path + "' parameter " + std::to_string(i) + " is '" +
                    entry.at("name").get<std::string>() + "', expected '" + name + "'");
    if (entry.at("shape").get<Shape>() != v.shape())
      throw IoError("'" + path + "' parameter '" + name + "' has the wrong shape");
    in.read(reinterpret_cast<char*>(v.mutable_value().data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(v.size() * sizeof(float)))
      throw IoError("'" + path + "' is truncated inside parameter '" + name + "'");
  }
  return m;
}

}  // namespace xplt
