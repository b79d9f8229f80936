#pragma once

#include "xplt/image.hpp"
#include "xplt/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace xplt {

enum class DataKind { triangle, foxcat, pentagon, triangle_vs_circle };

std::string kind_name(DataKind kind);
DataKind parse_kind(const std::string& name);

/// Shape parameters recorded at generation time so tests can re-derive labels
/// and mask placement without touching pixels.
struct Geometry {
  std::string shape;
  std::map<std::string, int> params;

  int at(const std::string& key) const;
};

struct Example {
  GrayImage image;
  int label = 0;
  bool has_mask = false;
  BinaryMask mask;
  bool spurious = false;
  Geometry geom;
};

struct Dataset {
  DataKind kind = DataKind::triangle;
  int size = 0;
  std::string class_ratio = "1:1";
  uint64_t seed = 0;
  bool spurious = false;
  bool sparse_explanations = false;
  std::vector<Example> examples;
};

/// Filled isoceles triangle pointing up (label 1) or down (label 0), with a
/// rectangular mask covering the apex and the central third of the base.
Example gen_triangle(std::mt19937& rng, int label);

/// Rectangular body with a triangular head (fox, label 1) or circular head
/// (cat, label 0); 9x9 mask over the apex or the topmost arc point.
Example gen_foxcat(std::mt19937& rng, int label);

/// Keeps only the central vertical band (one third of the base width) of a
/// triangle example; label preserved, mask dropped.
Example derive_pentagon(const Example& ex);

/// Erases the body rectangle of a fox/cat example; label preserved, mask dropped.
Example derive_shape_only(const Example& ex);

/// Draws a 6x6 intensity-1 square whose placement is a function of the label:
/// fox (0,0) / cat (0,58) fixed corners, triangle label 1 a random row in the
/// leftmost 6 columns / label 0 the rightmost. Never overlaps the mask.
void inject_spurious(Example& ex, DataKind kind, std::mt19937& rng);

/// class_ratio in {"1:1", "1:9"}; positives = round(size/2) resp. round(size/10),
/// listed first. sparse_explanations keeps masks only on label-1 examples.
Dataset build_dataset(DataKind kind, int size, const std::string& class_ratio, uint64_t seed,
                      bool spurious, bool sparse_explanations);

/// triangle -> pentagon, foxcat -> triangle_vs_circle.
Dataset derive_dataset(const Dataset& base);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// 1000 balanced clean examples with a fixed per-kind seed.
Dataset canonical_test_set(DataKind kind);

Tensor images_tensor(const Dataset& ds, const std::vector<int>& indices);
Tensor labels_tensor(const Dataset& ds, const std::vector<int>& indices);
Tensor masks_tensor(const Dataset& ds, const std::vector<int>& indices);

}  // namespace xplt
