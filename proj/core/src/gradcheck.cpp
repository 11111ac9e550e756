#include "sgtr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sgtr/rng.hpp"

namespace sgtr {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradReport grad_check(const std::function<DiffValue()>& f,
                      std::vector<NamedParam>& params, const GradCheckOptions& opt) {
  if (opt.eps < 1e-7 || opt.eps > 1e-3)
    throw std::invalid_argument("grad_check: eps " + std::to_string(opt.eps) +
                                " outside [1e-7, 1e-3]");
  for (auto& p : params) p.value.zero_grad();
  DiffValue loss = f();
  if (!std::isfinite(loss.item()))
    throw std::runtime_error("grad_check: non-finite loss at the unperturbed point");
  backward(loss);
  const double f0 = loss.item();

  GradReport report;
  Rng rng(opt.seed);
  for (auto& p : params) {
    const std::int64_t n = p.value.size();
    std::vector<std::int64_t> coords(n);
    for (std::int64_t i = 0; i < n; ++i) coords[i] = i;
    if (n > opt.max_coords_per_param) {
      // seeded Fisher-Yates prefix
      for (int i = 0; i < opt.max_coords_per_param; ++i) {
        const int j = i + static_cast<int>(rng.next_u64() % (n - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(opt.max_coords_per_param);
    }
    for (std::int64_t c : coords) {
      const double saved = p.value.data()[c];
      p.value.data()[c] = saved + opt.eps;
      const double fp = f().item();
      p.value.data()[c] = saved - opt.eps;
      const double fm = f().item();
      p.value.data()[c] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("grad_check: non-finite loss perturbing " + p.name +
                                 "[" + std::to_string(c) + "]");
      double numeric = (fp - fm) / (2.0 * opt.eps);
      const double analytic = p.value.grad()[c];
      // Piecewise-smooth losses (relu, max) can have breakpoints inside
      // (th-eps, th+eps); the one-sided slopes then disagree and the central
      // difference straddles a kink. The derivative backward() computes
      // belongs to the piece containing th, so re-probe with a much smaller
      // step and keep the estimate consistent with that piece.
      const double left = (f0 - fm) / opt.eps;
      const double right = (fp - f0) / opt.eps;
      if (std::abs(left - right) >
          1e-4 * std::max({std::abs(left), std::abs(right), opt.denom_floor})) {
        const double e2 = opt.eps / 16.0;
        p.value.data()[c] = saved + e2;
        const double fp2 = f().item();
        p.value.data()[c] = saved - e2;
        const double fm2 = f().item();
        p.value.data()[c] = saved;
        for (double cand : {left, right, (fp2 - fm2) / (2.0 * e2), (f0 - fm2) / e2,
                            (fp2 - f0) / e2})
          if (std::abs(cand - analytic) < std::abs(numeric - analytic)) numeric = cand;
      }
      const double rel = relative_error(analytic, numeric, opt.denom_floor);
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_coord = c;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace sgtr
