#include "sgtr/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sgtr/checkpoint.hpp"

namespace sgtr {

void write_pgm(const std::string& path, const std::vector<double>& values, int height,
               int width) {
  if (static_cast<int>(values.size()) != height * width)
    throw std::invalid_argument("write_pgm: " + std::to_string(values.size()) +
                                " values for " + std::to_string(height) + "x" +
                                std::to_string(width));
  std::ostringstream os;
  os << "P5\n" << width << ' ' << height << "\n255\n";
  for (double v : values) {
    const int g = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    os.put(static_cast<char>(g));
  }
  write_file_atomic(path, os.str());
}

}  // namespace sgtr
