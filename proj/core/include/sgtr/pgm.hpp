#pragma once

// Binary (P5) PGM export for heatmap inspection.

#include <string>
#include <vector>

namespace sgtr {

// Values are mapped linearly [0,1] -> [0,255] and clamped.
void write_pgm(const std::string& path, const std::vector<double>& values, int height,
               int width);

}  // namespace sgtr
