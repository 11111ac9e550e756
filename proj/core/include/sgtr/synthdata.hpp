#pragma once

// Synthetic text-image corpus with exact per-pixel ground truth. Characters
// are drawn from a fixed procedural 5x7 bitmap font, so the class map and the
// per-character centroids are known by construction.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sgtr {

struct CorruptionBase {
  // Strength at corruption level 1.0; the per-corpus level scales these.
  double blur_sigma = 1.0;
  double rotation_deg = 3.0;
  double noise_std = 0.08;
  double occlusion_prob = 0.2;
};

struct CorpusConfig {
  std::string charset = "abcdefghij";  // distinct symbols; class 0 = background
  int H = 32;
  int W = 128;
  int T = 8;  // max decoded length
  int min_len = 3;
  int max_len = 8;
  double corruption = 0.0;  // level, scales CorruptionBase
  CorruptionBase base;
  std::uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(charset.size()) + 1; }
};

struct SegSample {
  int H = 0, W = 0;
  std::vector<double> image;    // H*W*3, row-major, values on the 1/255 grid
  std::vector<int> class_map;   // H*W, 0..C-1, 0 = background
  std::vector<std::pair<double, double>> order_centers;  // (x, y), left to right
  std::string label;
  int length = 0;
};

// Pure function of (cfg, index): sample index derives its own rng stream, so
// parallel and serial generation agree.
SegSample render_sample(const CorpusConfig& cfg, std::uint64_t index);

std::vector<SegSample> generate_corpus(const CorpusConfig& cfg, int count);

// Header line "SGTR-CORPUS v1", then one JSON object per line per sample.
void write_corpus(const std::vector<SegSample>& samples, const std::string& path);
std::vector<SegSample> read_corpus(const std::string& path);

// 5x7 glyph bitmap lookup; throws for symbols outside [a-z0-9].
const char* const* glyph_rows(char c);

}  // namespace sgtr
