#include "xplt/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace xplt {
namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw IoError("pgm file '" + path + "': " + why);
}

// Reads one whitespace-delimited header token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  for (;;) {
    int ch = in.get();
    if (ch == EOF) return tok;
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
}

int parse_int(std::istream& in, const std::string& path, const char* what) {
  std::string tok = next_token(in);
  if (tok.empty()) fail(path, std::string("missing ") + what);
  for (char c : tok)
    if (!std::isdigit(static_cast<unsigned char>(c)))
      fail(path, std::string("malformed ") + what + " '" + tok + "'");
  return std::stoi(tok);
}

}  // namespace

void save_pgm(const std::string& path, const std::vector<uint8_t>& bytes) {
  if (bytes.size() != static_cast<size_t>(kImageSize) * kImageSize)
    throw IoError("pgm file '" + path + "': payload has " + std::to_string(bytes.size()) +
                  " bytes, expected " + std::to_string(kImageSize * kImageSize));
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  char header[64];
  int n = std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", kImageSize, kImageSize);
  out.write(header, n);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(path, "write failed");
}

std::vector<uint8_t> load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  std::string magic = next_token(in);
  if (magic != "P5") fail(path, "bad magic '" + magic + "', expected P5");
  int w = parse_int(in, path, "width");
  int h = parse_int(in, path, "height");
  int maxval = parse_int(in, path, "maxval");
  if (w != kImageSize || h != kImageSize)
    fail(path, "size " + std::to_string(w) + "x" + std::to_string(h) + ", expected 64x64");
  if (maxval != 255) fail(path, "maxval " + std::to_string(maxval) + ", expected 255");
  std::vector<uint8_t> bytes(static_cast<size_t>(kImageSize) * kImageSize);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) fail(path, "truncated pixel data");
  return bytes;
}

void save_image_pgm(const std::string& path, const GrayImage& img) {
  std::vector<uint8_t> bytes(img.px.size());
  for (size_t i = 0; i < img.px.size(); ++i) {
    float v = img.px[i];
    if (!(v >= 0.0f && v <= 1.0f))
      throw IoError("pgm file '" + path + "': intensity " + std::to_string(v) + " outside [0,1]");
    bytes[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  save_pgm(path, bytes);
}

GrayImage load_image_pgm(const std::string& path) {
  std::vector<uint8_t> bytes = load_pgm(path);
  GrayImage img;
  for (size_t i = 0; i < bytes.size(); ++i) img.px[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

void save_mask_pgm(const std::string& path, const BinaryMask& mask) {
  std::vector<uint8_t> bytes(mask.px.size());
  for (size_t i = 0; i < mask.px.size(); ++i) {
    if (mask.px[i] > 1)
      throw IoError("pgm file '" + path + "': mask value " + std::to_string(mask.px[i]) +
                    " is not binary");
    bytes[i] = mask.px[i] ? 255 : 0;
  }
  save_pgm(path, bytes);
}

BinaryMask load_mask_pgm(const std::string& path) {
  std::vector<uint8_t> bytes = load_pgm(path);
  BinaryMask mask;
  for (size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] != 0 && bytes[i] != 255)
      fail(path, "mask byte " + std::to_string(bytes[i]) + " is neither 0 nor 255");
    mask.px[i] = bytes[i] ? 1 : 0;
  }
  return mask;
}

}  // namespace xplt
