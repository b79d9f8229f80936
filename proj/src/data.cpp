#include "xplt/data.hpp"

#include "xplt/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace xplt {
namespace {

using nlohmann::json;

constexpr int kSquare = 6;       // spurious square side
constexpr int kMaskMaxArea = kImageSize * kImageSize / 4;

void fill_rect(GrayImage& img, int r0, int r1, int c0, int c1) {
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) img.at(r, c) = 1.0f;
}

void mask_rect(BinaryMask& m, int r0, int r1, int c0, int c1) {
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) m.at(r, c) = 1;
}

// Label-independent clutter: every pixel lights up with the same probability
// regardless of class, so speckle carries no signal about the label. It makes
// the tasks hard enough at small sample sizes that what a model attends to
// matters; on clean renders every method saturates and the comparisons are
// vacuous.
float speckle_density() {
  if (const char* e = std::getenv("XPLT_NOISE"); e && *e) return static_cast<float>(std::atof(e));
  return 0.05f;
}

void apply_speckle(GrayImage& img, std::mt19937& rng) {
  float density = speckle_density();
  for (float& px : img.px)
    if (uniform(rng, 0.0f, 1.0f) < density) px = 1.0f;
}

void check_mask(const BinaryMask& m) {
  int a = m.area();
  if (a < 1) throw Error("generated explanation mask is empty");
  if (a > kMaskMaxArea)
    throw Error("generated explanation mask covers " + std::to_string(a) +
                " pixels, above the 25% budget");
}

bool square_overlaps_mask(const BinaryMask& m, int row, int col) {
  for (int r = row; r < row + kSquare; ++r)
    for (int c = col; c < col + kSquare; ++c)
      if (m.at(r, c)) return true;
  return false;
}

void draw_square(GrayImage& img, int row, int col) {
  fill_rect(img, row, row + kSquare - 1, col, col + kSquare - 1);
}

uint64_t example_stream(DataKind kind, int attempt, int index) {
  uint64_t tag = kind == DataKind::triangle ? 1 : 2;
  return (tag << 40) | (static_cast<uint64_t>(attempt) << 32) | static_cast<uint64_t>(index);
}

}  // namespace

std::string kind_name(DataKind kind) {
  switch (kind) {
    case DataKind::triangle: return "triangle";
    case DataKind::foxcat: return "foxcat";
    case DataKind::pentagon: return "pentagon";
    case DataKind::triangle_vs_circle: return "triangle_vs_circle";
  }
  throw Error("unknown dataset kind");
}

DataKind parse_kind(const std::string& name) {
  if (name == "triangle") return DataKind::triangle;
  if (name == "foxcat") return DataKind::foxcat;
  if (name == "pentagon") return DataKind::pentagon;
  if (name == "triangle_vs_circle") return DataKind::triangle_vs_circle;
  throw ConfigError("unknown dataset kind '" + name + "'");
}

int Geometry::at(const std::string& key) const {
  auto it = params.find(key);
  if (it == params.end()) throw Error("geometry record is missing parameter '" + key + "'");
  return it->second;
}

Example gen_triangle(std::mt19937& rng, int label) {
  int base = uniform_int(rng, 20, 44);
  int half_base = base / 2;
  int height = uniform_int(rng, 18, 40);
  int top = uniform_int(rng, 2, kImageSize - 2 - height);
  int cx = uniform_int(rng, 2 + half_base, kImageSize - 3 - half_base);

  Example ex;
  ex.label = label;
  int apex_row = label == 1 ? top : top + height - 1;
  int base_row = label == 1 ? top + height - 1 : top;
  for (int row = top; row < top + height; ++row) {
    int half = std::abs(row - apex_row) * half_base / (height - 1);
    for (int c = cx - half; c <= cx + half; ++c) ex.image.at(row, c) = 1.0f;
  }

  // The explanation band carries the apex and the central stretch of the base
  // edge (a third of the base wide).
  int band_half = half_base / 3;
  int mask_r0 = std::max(0, top - 3);
  int mask_r1 = std::min(kImageSize - 1, top + height + 2);
  int mask_c0 = cx - band_half;
  int mask_c1 = cx + band_half;
  ex.has_mask = true;
  mask_rect(ex.mask, mask_r0, mask_r1, mask_c0, mask_c1);
  check_mask(ex.mask);
  apply_speckle(ex.image, rng);

  ex.geom.shape = label == 1 ? "triangle_up" : "triangle_down";
  ex.geom.params = {{"base", base},         {"half_base", half_base}, {"height", height},
                    {"top", top},           {"cx", cx},               {"apex_row", apex_row},
                    {"base_row", base_row}, {"band_half", band_half}, {"mask_r0", mask_r0},
                    {"mask_r1", mask_r1},   {"mask_c0", mask_c0},     {"mask_c1", mask_c1}};
  return ex;
}

Example gen_foxcat(std::mt19937& rng, int label) {
  int r = uniform_int(rng, 6, 10);
  int body_w = uniform_int(rng, 24, 32);
  int body_h = uniform_int(rng, 14, 18);
  // head_top = body_top - 1 - 2r stays >= 10 so the 9x9 head mask can never
  // reach the corner rows where spurious squares live.
  int body_top = uniform_int(rng, 11 + 2 * r, kImageSize - 2 - body_h);
  int body_left = uniform_int(rng, 2, kImageSize - 2 - body_w);
  int head_cx = uniform_int(rng, body_left + r, body_left + body_w - 1 - r);
  int head_bottom = body_top - 1;
  int head_top = head_bottom - 2 * r;

  Example ex;
  ex.label = label;
  fill_rect(ex.image, body_top, body_top + body_h - 1, body_left, body_left + body_w - 1);
  if (label == 1) {
    for (int row = head_top; row <= head_bottom; ++row) {
      int half = (row - head_top) * r / (2 * r);
      for (int c = head_cx - half; c <= head_cx + half; ++c) ex.image.at(row, c) = 1.0f;
    }
  } else {
    int cy = head_top + r;
    for (int row = head_top; row <= head_bottom; ++row)
      for (int c = head_cx - r; c <= head_cx + r; ++c)
        if ((row - cy) * (row - cy) + (c - head_cx) * (c - head_cx) <= r * r)
          ex.image.at(row, c) = 1.0f;
  }

  int mask_r0 = head_top - 4;
  int mask_r1 = head_top + 4;
  int mask_c0 = head_cx - 4;
  int mask_c1 = head_cx + 4;
  ex.has_mask = true;
  mask_rect(ex.mask, mask_r0, mask_r1, mask_c0, mask_c1);
  check_mask(ex.mask);
  apply_speckle(ex.image, rng);

  ex.geom.shape = label == 1 ? "fox" : "cat";
  ex.geom.params = {{"radius", r},          {"body_w", body_w},     {"body_h", body_h},
                    {"body_top", body_top}, {"body_left", body_left}, {"head_cx", head_cx},
                    {"head_top", head_top}, {"head_bottom", head_bottom}, {"mask_r0", mask_r0},
                    {"mask_r1", mask_r1},   {"mask_c0", mask_c0},   {"mask_c1", mask_c1}};
  return ex;
}

Example derive_pentagon(const Example& ex) {
  if (ex.geom.shape != "triangle_up" && ex.geom.shape != "triangle_down")
    throw ConfigError("pentagon derivation needs a triangle example, got shape '" +
                      ex.geom.shape + "'");
  int cx = ex.geom.at("cx");
  int band_half = ex.geom.at("band_half");
  int top = ex.geom.at("top");
  int height = ex.geom.at("height");

  Example out;
  out.label = ex.label;
  out.geom.shape = ex.label == 1 ? "pentagon_up" : "pentagon_down";
  out.geom.params = ex.geom.params;
  for (int r = top; r < top + height; ++r)
    for (int c = cx - band_half; c <= cx + band_half; ++c)
      if (ex.image.at(r, c) == 1.0f) out.image.at(r, c) = 1.0f;
  return out;
}

Example derive_shape_only(const Example& ex) {
  if (ex.geom.shape != "fox" && ex.geom.shape != "cat")
    throw ConfigError("shape-only derivation needs a fox/cat example, got shape '" +
                      ex.geom.shape + "'");
  int top = ex.geom.at("body_top");
  int left = ex.geom.at("body_left");
  int w = ex.geom.at("body_w");
  int h = ex.geom.at("body_h");

  Example out;
  out.label = ex.label;
  out.geom.shape = ex.geom.shape == "fox" ? "triangle_head" : "circle_head";
  out.geom.params = ex.geom.params;
  out.image = ex.image;
  for (int r = top; r < top + h; ++r)
    for (int c = left; c < left + w; ++c) out.image.at(r, c) = 0.0f;
  return out;
}

void inject_spurious(Example& ex, DataKind kind, std::mt19937& rng) {
  if (kind == DataKind::foxcat) {
    int col = ex.label == 1 ? 0 : kImageSize - kSquare;
    if (square_overlaps_mask(ex.mask, 0, col))
      throw Error("no non-overlapping spurious placement after 100 attempts");
    draw_square(ex.image, 0, col);
    ex.geom.params["sq_row"] = 0;
    ex.geom.params["sq_col"] = col;
  } else if (kind == DataKind::triangle) {
    int col = ex.label == 1 ? 0 : kImageSize - kSquare;
    int row = -1;
    for (int attempt = 0; attempt < 100; ++attempt) {
      int candidate = uniform_int(rng, 0, kImageSize - kSquare);
      if (!square_overlaps_mask(ex.mask, candidate, col)) {
        row = candidate;
        break;
      }
    }
    if (row < 0) throw Error("no non-overlapping spurious placement after 100 attempts");
    draw_square(ex.image, row, col);
    ex.geom.params["sq_row"] = row;
    ex.geom.params["sq_col"] = col;
  } else {
    throw ConfigError("spurious injection is not defined for derived kind '" + kind_name(kind) +
                      "'");
  }
  ex.spurious = true;
}

Dataset build_dataset(DataKind kind, int size, const std::string& class_ratio, uint64_t seed,
                      bool spurious, bool sparse_explanations) {
  if (kind == DataKind::pentagon || kind == DataKind::triangle_vs_circle)
    throw ConfigError("kind '" + kind_name(kind) +
                      "' is derived; generate its base kind and derive from it");
  if (size < 2) throw ConfigError("dataset size must be at least 2, got " + std::to_string(size));
  int n_pos;
  if (class_ratio == "1:1")
    n_pos = static_cast<int>(std::lround(size / 2.0));
  else if (class_ratio == "1:9")
    n_pos = static_cast<int>(std::lround(size / 10.0));
  else
    throw ConfigError("class_ratio must be 1:1 or 1:9, got '" + class_ratio + "'");
  if (n_pos == 0 || n_pos == size)
    throw ConfigError("class_ratio " + class_ratio + " leaves a class empty at size " +
                      std::to_string(size));

  Dataset ds;
  ds.kind = kind;
  ds.size = size;
  ds.class_ratio = class_ratio;
  ds.seed = seed;
  ds.spurious = spurious;
  ds.sparse_explanations = sparse_explanations;
  ds.examples.reserve(static_cast<size_t>(size));
  for (int i = 0; i < size; ++i) {
    int label = i < n_pos ? 1 : 0;
    Example ex;
    bool ok = false;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      std::mt19937 rng = make_rng(seed, example_stream(kind, attempt, i));
      ex = kind == DataKind::triangle ? gen_triangle(rng, label) : gen_foxcat(rng, label);
      if (spurious) {
        try {
          inject_spurious(ex, kind, rng);
        } catch (const Error&) {
          continue;
        }
      }
      ok = true;
    }
    if (!ok) throw Error("could not place spurious square for example " + std::to_string(i));
    if (sparse_explanations && label == 0) {
      ex.has_mask = false;
      ex.mask = BinaryMask{};
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

Dataset derive_dataset(const Dataset& base) {
  Dataset out;
  if (base.kind == DataKind::triangle) {
    out.kind = DataKind::pentagon;
    for (const Example& ex : base.examples) out.examples.push_back(derive_pentagon(ex));
  } else if (base.kind == DataKind::foxcat) {
    out.kind = DataKind::triangle_vs_circle;
    for (const Example& ex : base.examples) out.examples.push_back(derive_shape_only(ex));
  } else {
    throw ConfigError("kind '" + kind_name(base.kind) + "' has no derived counterpart");
  }
  out.size = base.size;
  out.class_ratio = base.class_ratio;
  out.seed = base.seed;
  out.spurious = base.spurious;
  out.sparse_explanations = false;
  return out;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "imgs");
  fs::create_directories(fs::path(dir) / "masks");

  json manifest;
  manifest["kind"] = kind_name(ds.kind);
  manifest["size"] = ds.size;
  manifest["class_ratio"] = ds.class_ratio;
  manifest["seed"] = ds.seed;
  manifest["spurious"] = ds.spurious;
  manifest["sparse_explanations"] = ds.sparse_explanations;
  json entries = json::array();
  char name[32];
  for (size_t i = 0; i < ds.examples.size(); ++i) {
    const Example& ex = ds.examples[i];
    std::snprintf(name, sizeof(name), "%04zu.pgm", i);
    std::string img_rel = std::string("imgs/") + name;
    save_image_pgm((fs::path(dir) / img_rel).string(), ex.image);
    json entry;
    entry["index"] = i;
    entry["label"] = ex.label;
    entry["image"] = img_rel;
    if (ex.has_mask) {
      std::string mask_rel = std::string("masks/") + name;
      save_mask_pgm((fs::path(dir) / mask_rel).string(), ex.mask);
      entry["mask"] = mask_rel;
    } else {
      entry["mask"] = nullptr;
    }
    entry["spurious"] = ex.spurious;
    entry["geometry"] = {{"shape", ex.geom.shape}, {"params", ex.geom.params}};
    entries.push_back(std::move(entry));
  }
  manifest["entries"] = std::move(entries);

  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write manifest.json in '" + dir + "'");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed for manifest.json in '" + dir + "'");
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + manifest_path + "'");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("malformed '" + manifest_path + "': " + e.what());
  }

  Dataset ds;
  try {
    ds.kind = parse_kind(manifest.at("kind").get<std::string>());
    ds.size = manifest.at("size").get<int>();
    ds.class_ratio = manifest.at("class_ratio").get<std::string>();
    ds.seed = manifest.at("seed").get<uint64_t>();
    ds.spurious = manifest.at("spurious").get<bool>();
    ds.sparse_explanations = manifest.at("sparse_explanations").get<bool>();
    const json& entries = manifest.at("entries");
    if (!entries.is_array() || static_cast<int>(entries.size()) != ds.size)
      throw IoError("entry count does not match declared size");
    for (const json& entry : entries) {
      Example ex;
      ex.label = entry.at("label").get<int>();
      if (ex.label != 0 && ex.label != 1)
        throw IoError("label " + std::to_string(ex.label) + " is not binary");
      ex.image = load_image_pgm((fs::path(dir) / entry.at("image").get<std::string>()).string());
      if (!entry.at("mask").is_null()) {
        ex.has_mask = true;
        ex.mask = load_mask_pgm((fs::path(dir) / entry.at("mask").get<std::string>()).string());
      }
      ex.spurious = entry.at("spurious").get<bool>();
      const json& geom = entry.at("geometry");
      ex.geom.shape = geom.at("shape").get<std::string>();
      ex.geom.params = geom.at("params").get<std::map<std::string, int>>();
      ds.examples.push_back(std::move(ex));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed '" + manifest_path + "': " + e.what());
  }
  return ds;
}

Dataset canonical_test_set(DataKind kind) {
  switch (kind) {
    case DataKind::triangle: return build_dataset(DataKind::triangle, 1000, "1:1", 104729, false, false);
    case DataKind::foxcat: return build_dataset(DataKind::foxcat, 1000, "1:1", 224737, false, false);
    case DataKind::pentagon:
      return derive_dataset(build_dataset(DataKind::triangle, 1000, "1:1", 312721, false, false));
    case DataKind::triangle_vs_circle:
      return derive_dataset(build_dataset(DataKind::foxcat, 1000, "1:1", 414977, false, false));
  }
  throw Error("unknown dataset kind");
}

Tensor images_tensor(const Dataset& ds, const std::vector<int>& indices) {
  int n = static_cast<int>(indices.size());
  Tensor t({n, 1, kImageSize, kImageSize});
  const int npx = kImageSize * kImageSize;
  for (int i = 0; i < n; ++i) {
    const Example& ex = ds.examples.at(static_cast<size_t>(indices[i]));
    std::copy(ex.image.px.begin(), ex.image.px.end(), t.data() + i * npx);
  }
  return t;
}

Tensor labels_tensor(const Dataset& ds, const std::vector<int>& indices) {
  int n = static_cast<int>(indices.size());
  Tensor t({n, 1});
  for (int i = 0; i < n; ++i)
    t.data()[i] = static_cast<float>(ds.examples.at(static_cast<size_t>(indices[i])).label);
  return t;
}

Tensor masks_tensor(const Dataset& ds, const std::vector<int>& indices) {
  int n = static_cast<int>(indices.size());
  Tensor t({n, 1, kImageSize, kImageSize});
  const int npx = kImageSize * kImageSize;
  for (int i = 0; i < n; ++i) {
    const Example& ex = ds.examples.at(static_cast<size_t>(indices[i]));
    if (!ex.has_mask)
      throw Error("example " + std::to_string(indices[i]) + " has no explanation mask");
    for (int p = 0; p < npx; ++p) t.data()[i * npx + p] = static_cast<float>(ex.mask.px[p]);
  }
  return t;
}

}  // namespace xplt
