#include "sgtr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sgtr/checkpoint.hpp"
#include "sgtr/rng.hpp"

namespace sgtr {

using nlohmann::json;

// ---- font -----------------------------------------------------------------

namespace {

struct Glyph {
  char c;
  const char* rows[7];
};

// clang-format off
const Glyph kFont[] = {
  {'a', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
  {'b', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
  {'c', {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}},
  {'d', {"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."}},
  {'e', {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
  {'f', {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
  {'g', {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."}},
  {'h', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
  {'i', {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
  {'j', {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
  {'k', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
  {'l', {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
  {'m', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
  {'n', {"#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"}},
  {'o', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
  {'p', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
  {'q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
  {'r', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
  {'s', {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
  {'t', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
  {'u', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
  {'v', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
  {'w', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"}},
  {'x', {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}},
  {'y', {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}},
  {'z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
  {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
  {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
  {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
  {'3', {".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."}},
  {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
  {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
  {'6', {".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."}},
  {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
  {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
  {'9', {".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."}},
};
// clang-format on

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;
constexpr int kScale = 2;
constexpr int kGap = 2;
constexpr int kAdvance = kGlyphW * kScale + kGap;

double quantize255(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

const char* const* glyph_rows(char c) {
  for (const auto& g : kFont)
    if (g.c == c) return g.rows;
  throw std::invalid_argument(std::string("no glyph for symbol '") + c + "'");
}

// ---- rendering ------------------------------------------------------------

namespace {

struct Canvas {
  int H, W;
  std::vector<double> img;  // H*W*3
  std::vector<int> cls;     // H*W

  double& px(int y, int x, int ch) { return img[(static_cast<size_t>(y) * W + x) * 3 + ch]; }
};

void draw_glyph(Canvas& cv, char c, int x0, int y0, int cls_id, double ink,
                std::pair<double, double>& centroid) {
  const char* const* rows = glyph_rows(c);
  double sx = 0, sy = 0;
  int count = 0;
  for (int gy = 0; gy < kGlyphH; ++gy)
    for (int gx = 0; gx < kGlyphW; ++gx) {
      if (rows[gy][gx] != '#') continue;
      for (int dy = 0; dy < kScale; ++dy)
        for (int dx = 0; dx < kScale; ++dx) {
          const int y = y0 + gy * kScale + dy;
          const int x = x0 + gx * kScale + dx;
          if (y < 0 || y >= cv.H || x < 0 || x >= cv.W) continue;
          for (int ch = 0; ch < 3; ++ch) cv.px(y, x, ch) = ink;
          cv.cls[static_cast<size_t>(y) * cv.W + x] = cls_id;
          sx += x;
          sy += y;
          ++count;
        }
    }
  centroid = {sx / count, sy / count};
}

void gaussian_blur(std::vector<double>& img, int H, int W, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double z = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    z += k[i + radius];
  }
  for (double& v : k) v /= z;
  std::vector<double> tmp(img.size());
  // horizontal
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double s = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, W - 1);
          s += k[i + radius] * img[(static_cast<size_t>(y) * W + xx) * 3 + ch];
        }
        tmp[(static_cast<size_t>(y) * W + x) * 3 + ch] = s;
      }
  // vertical
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double s = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, H - 1);
          s += k[i + radius] * tmp[(static_cast<size_t>(yy) * W + x) * 3 + ch];
        }
        img[(static_cast<size_t>(y) * W + x) * 3 + ch] = s;
      }
}

void rotate_image(std::vector<double>& img, int H, int W, double deg, double bg) {
  const double th = deg * M_PI / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  std::vector<double> out(img.size(), bg);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      // inverse rotation, bilinear sample
      const double dx = x - cx, dy = y - cy;
      const double sxf = cx + c * dx + s * dy;
      const double syf = cy - s * dx + c * dy;
      const int x0 = static_cast<int>(std::floor(sxf));
      const int y0 = static_cast<int>(std::floor(syf));
      const double fx = sxf - x0, fy = syf - y0;
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0;
        for (int jy = 0; jy <= 1; ++jy)
          for (int jx = 0; jx <= 1; ++jx) {
            const int xx = x0 + jx, yy = y0 + jy;
            const double wgt = (jx ? fx : 1 - fx) * (jy ? fy : 1 - fy);
            const double v = (xx >= 0 && xx < W && yy >= 0 && yy < H)
                                 ? img[(static_cast<size_t>(yy) * W + xx) * 3 + ch]
                                 : bg;
            acc += wgt * v;
          }
        out[(static_cast<size_t>(y) * W + x) * 3 + ch] = acc;
      }
    }
  img = std::move(out);
}

}  // namespace

SegSample render_sample(const CorpusConfig& cfg, std::uint64_t index) {
  if (cfg.charset.empty()) throw std::invalid_argument("render_sample: empty charset");
  Rng rng = Rng::derive(cfg.seed, index);

  const int usable = cfg.W - 2;
  int length = rng.uniform_int(cfg.min_len, std::min(cfg.max_len, cfg.T));
  int attempts = 0;
  while (length * kAdvance > usable) {
    if (++attempts > 10)
      throw std::runtime_error("render_sample: text of minimum length does not fit in W=" +
                               std::to_string(cfg.W));
    length = rng.uniform_int(cfg.min_len, std::max(cfg.min_len, length - 1));
  }

  std::string label;
  for (int i = 0; i < length; ++i)
    label += cfg.charset[rng.uniform_int(0, static_cast<int>(cfg.charset.size()) - 1)];

  const double bg = rng.uniform(0.75, 0.95);
  const double ink = rng.uniform(0.0, 0.25);

  Canvas cv{cfg.H, cfg.W, std::vector<double>(static_cast<size_t>(cfg.H) * cfg.W * 3, bg),
            std::vector<int>(static_cast<size_t>(cfg.H) * cfg.W, 0)};

  const int text_w = length * kAdvance - kGap;
  // reserve `length` columns for per-character advance jitter
  const int x_slack = std::max(1, cfg.W - text_w - 1 - length);
  int x = 1 + rng.uniform_int(0, x_slack - 1);
  const int y_base = std::max(0, (cfg.H - kGlyphH * kScale) / 2) + rng.uniform_int(-2, 2);

  SegSample sample;
  sample.H = cfg.H;
  sample.W = cfg.W;
  sample.label = label;
  sample.length = length;
  for (int i = 0; i < length; ++i) {
    const int cls_id = static_cast<int>(cfg.charset.find(label[i])) + 1;
    const int jitter_y = rng.uniform_int(-1, 1);
    std::pair<double, double> centroid;
    draw_glyph(cv, label[i], x, std::clamp(y_base + jitter_y, 0, cfg.H - kGlyphH * kScale),
               cls_id, ink, centroid);
    sample.order_centers.push_back(centroid);
    x += kAdvance + rng.uniform_int(0, 1);
  }

  // Corruptions touch the image only, never the class map.
  const double lvl = cfg.corruption;
  if (lvl > 0) {
    const double rot = lvl * cfg.base.rotation_deg;
    if (rot > 1e-6) rotate_image(cv.img, cfg.H, cfg.W, rng.uniform(-rot, rot), bg);
    const double sigma = lvl * cfg.base.blur_sigma;
    if (sigma > 0.05) gaussian_blur(cv.img, cfg.H, cfg.W, sigma);
    if (rng.uniform() < lvl * cfg.base.occlusion_prob) {
      const int ow = rng.uniform_int(2, 6), oh = rng.uniform_int(2, 6);
      const int ox = rng.uniform_int(0, cfg.W - ow), oy = rng.uniform_int(0, cfg.H - oh);
      const double fill = rng.uniform(0.0, 1.0);
      for (int yy = oy; yy < oy + oh; ++yy)
        for (int xx = ox; xx < ox + ow; ++xx)
          for (int ch = 0; ch < 3; ++ch) cv.px(yy, xx, ch) = fill;
    }
    const double nstd = lvl * cfg.base.noise_std;
    if (nstd > 0)
      for (double& v : cv.img) v += rng.normal(0.0, nstd);
  }
  for (double& v : cv.img) v = quantize255(v);

  sample.image = std::move(cv.img);
  sample.class_map = std::move(cv.cls);
  return sample;
}

std::vector<SegSample> generate_corpus(const CorpusConfig& cfg, int count) {
  std::vector<SegSample> out(count);
  for (int i = 0; i < count; ++i) out[i] = render_sample(cfg, i);
  return out;
}

// ---- persistence ----------------------------------------------------------

namespace {
constexpr const char* kHeader = "SGTR-CORPUS v1";
}

void write_corpus(const std::vector<SegSample>& samples, const std::string& path) {
  std::ostringstream os;
  os << kHeader << '\n';
  for (const auto& s : samples) {
    json j;
    j["H"] = s.H;
    j["W"] = s.W;
    j["label"] = s.label;
    j["length"] = s.length;
    json centers = json::array();
    for (const auto& [x, y] : s.order_centers) centers.push_back({x, y});
    j["order_centers"] = std::move(centers);
    j["class_map"] = s.class_map;
    std::vector<int> img(s.image.size());
    for (size_t i = 0; i < s.image.size(); ++i)
      img[i] = static_cast<int>(std::lround(s.image[i] * 255.0));
    j["image_u8"] = std::move(img);  // values are pixel/255
    os << j.dump() << '\n';
  }
  write_file_atomic(path, os.str());
}

std::vector<SegSample> read_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open corpus " + path);
  std::string line;
  if (!std::getline(is, line) || line != kHeader)
    throw std::runtime_error("corpus " + path + ": bad or missing header at byte 0 (want \"" +
                             std::string(kHeader) + "\")");
  std::vector<SegSample> out;
  std::size_t offset = line.size() + 1;
  while (std::getline(is, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
      SegSample s;
      s.H = j.at("H").get<int>();
      s.W = j.at("W").get<int>();
      s.label = j.at("label").get<std::string>();
      s.length = j.at("length").get<int>();
      for (const auto& c : j.at("order_centers"))
        s.order_centers.emplace_back(c.at(0).get<double>(), c.at(1).get<double>());
      s.class_map = j.at("class_map").get<std::vector<int>>();
      std::vector<int> img = j.at("image_u8").get<std::vector<int>>();
      s.image.resize(img.size());
      for (size_t i = 0; i < img.size(); ++i) s.image[i] = img[i] / 255.0;
      if (static_cast<int>(s.class_map.size()) != s.H * s.W ||
          static_cast<int>(s.image.size()) != s.H * s.W * 3)
        throw std::runtime_error("field lengths inconsistent with H*W");
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error("corpus " + path + ": bad record at byte " +
                               std::to_string(offset) + ": " + e.what());
    }
    offset += line.size() + 1;
  }
  if (is.bad())
    throw std::runtime_error("corpus " + path + ": read error at byte " +
                             std::to_string(offset));
  return out;
}

}  // namespace sgtr
