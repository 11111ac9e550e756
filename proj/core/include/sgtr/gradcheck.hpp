#pragma once

// Central finite-difference verification of the reverse-mode engine.

#include <functional>
#include <string>
#include <vector>

#include "sgtr/tensor.hpp"

namespace sgtr {

struct GradReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::int64_t coords_checked = 0;
};

struct NamedParam {
  std::string name;
  DiffValue value;
};

struct GradCheckOptions {
  double eps = 1e-5;                 // in [1e-7, 1e-3]
  int max_coords_per_param = 200;    // sub-sampling cap
  std::uint64_t seed = 0;            // coordinate sub-sampling seed
  // Denominator floor of the relative error. Central differences of a loss of
  // magnitude F resolve gradients no finer than about ulp(F)/(2 eps), around
  // 1e-10 for F near 10 at eps 1e-5; coordinates whose true gradient sits
  // below the floor are compared against the floor instead of their own
  // magnitude. Raise it toward 1e-5 when checking deep composite losses.
  double denom_floor = 1e-8;
};

// f() must rebuild the scalar loss from the current parameter values and be
// deterministic. Analytic gradients are taken from one backward() pass and
// compared per coordinate against (f(th+eps) - f(th-eps)) / (2 eps).
GradReport grad_check(const std::function<DiffValue()>& f,
                      std::vector<NamedParam>& params, const GradCheckOptions& opt);

double relative_error(double analytic, double numeric, double floor = 1e-8);

}  // namespace sgtr
