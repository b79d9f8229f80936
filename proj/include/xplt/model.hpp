#pragma once

#include "xplt/graph.hpp"
#include "xplt/ops.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace xplt {

enum class MapperKind { none, channel_linear, full_dense };

std::string mapper_name(MapperKind kind);
MapperKind parse_mapper(const std::string& name);

struct ConvLayer {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

/// Convolutional feature extractor (each conv followed by relu and 2x2 max
/// pooling), an optional feature-space mapper, and an FC classifier head
/// ending in a single sigmoid logit.
struct ArchSpec {
  int in_channels = 1;
  int in_size = 64;
  std::vector<ConvLayer> conv_layers;
  MapperKind mapper = MapperKind::channel_linear;
  std::vector<int> hidden_dims;  // classifier layers before the final logit

  /// 8 -> 16 -> 32 channels, 3x3 kernels, pad 1; feature maps 32x8x8 on 64x64 input.
  static ArchSpec synthetic(MapperKind mapper = MapperKind::channel_linear);
  /// Shallower two-conv variant: 8 -> 16 channels.
  static ArchSpec shallow(MapperKind mapper = MapperKind::channel_linear);

  int feature_channels() const;
  int feature_size() const;  // spatial side of f's output
  int64_t feature_dim() const {
    return static_cast<int64_t>(feature_channels()) * feature_size() * feature_size();
  }
};

struct Model {
  ArchSpec spec;
  std::vector<std::pair<std::string, Var>> params;
  std::vector<Var> theta_f, theta_m, theta_c;

  Var feature(const Var& x) const;   // f
  Var mapped(const Var& feat) const; // m (identity pass-through when absent)
  Var classify(const Var& feat) const;  // c, including the sigmoid
  Var forward(const Var& x) const;   // sigmoid(c(m(f(x)))), [N,1]

  Var param(const std::string& name) const;
  int64_t param_count() const;
  std::vector<Var> all_params() const;
};

/// Kaiming-uniform convs, Xavier-uniform FC layers, zero biases, mapper
/// initialized to the identity map. Each layer draws from its own seed stream,
/// so models that differ only in mapper kind share the other weights bitwise.
Model build_model(const ArchSpec& spec, uint64_t seed);

/// x'_feat: normalized features of the mask-gated input, detached (training
/// target). x_feat: normalized mapper output; with detach_backbone the
/// backbone is cut out of the graph so gradients reach only the mapper.
std::pair<Var, Var> feature_pair(const Model& model, const Var& x, const Var& mask,
                                 bool detach_backbone);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace xplt
