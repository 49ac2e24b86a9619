#include "masksurf/autodiff/gradcheck.hpp"


#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "masksurf/autodiff/choices.hpp"

namespace masksurf::ad {

GradCheckReport finite_difference_check(
    const std::function<Tensor()>& fn,
    const std::vector<std::pair<std::string, Tensor>>& leaves,
    const GradCheckOptions& opts) {
  if (!(opts.eps > 0)) throw InvalidArgument("gradcheck: eps must be positive");
  if (opts.order != 2 && opts.order != 4) throw InvalidArgument("gradcheck: order must be 2 or 4");
  GradCheckReport report;
  for (const auto& [name, leaf] : leaves) {
    if (!leaf.is_leaf() || !leaf.requires_grad()) {
      throw InvalidArgument("gradcheck: '" + name + "' is not a requires_grad leaf");
    }
  }

  for (auto [name, leaf] : leaves) leaf.zero_grad();
  std::vector<std::vector<std::size_t>> choices;
  Tensor root;
  if (opts.hold_choices) {
    ChoiceRecording rec;
    root = fn();
    choices = rec.take();
  } else {
    root = fn();
  }
  if (!std::isfinite(static_cast<double>(root.item()))) {
    report.finite = false;
    report.pass = false;
    report.message = "function value is not finite at the base point";
    return report;
  }
  root.backward();

  std::mt19937_64 rng(opts.seed);
  for (auto [name, leaf] : leaves) {
    std::vector<Real> analytic(leaf.grad().begin(), leaf.grad().end());
    if (analytic.empty()) analytic.assign(leaf.numel(), Real(0));
    std::vector<std::size_t> coords(leaf.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.max_coords > 0 && coords.size() > opts.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    auto values = leaf.mutable_values();
    for (std::size_t i : coords) {
      const Real saved = values[i];
      auto at = [&](Real offset) {
        values[i] = saved + offset;
        Real f;
        if (opts.hold_choices) {
          ChoiceReplay replay(choices);
          f = fn().item();
        } else {
          f = fn().item();
        }
        values[i] = saved;
        return f;
      };
      const Real h = opts.eps;
      const Real plus = at(h);
      const Real minus = at(-h);
      Real numeric = (plus - minus) / (Real(2) * h);
      bool finite = std::isfinite(static_cast<double>(numeric));
      if (opts.order == 4 && finite) {
        const Real plus2 = at(2 * h);
        const Real minus2 = at(-2 * h);
        numeric = (Real(8) * (plus - minus) - (plus2 - minus2)) / (Real(12) * h);
        finite = std::isfinite(static_cast<double>(numeric));
      }
      if (!finite) {
        report.finite = false;
        report.pass = false;
        report.message = "non-finite value when perturbing " + name + "[" +
                         std::to_string(i) + "]";
        return report;
      }
      const Real abs_err = std::abs(numeric - analytic[i]);
      const Real denom = std::max({std::abs(numeric), std::abs(analytic[i]),
                                   opts.denominator_floor});
      const Real rel = abs_err / denom;
      ++report.coords_checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.worst.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst = name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  report.pass = report.max_rel_error <= opts.tol;
  std::ostringstream os;
  os << "max_rel_error=" << report.max_rel_error << " at " << report.worst << " over "
     << report.coords_checked << " coordinates";
  report.message = os.str();
  return report;
}

GradCheckReport finite_difference_check(const std::function<Tensor(const Tensor&)>& fn,
                                        Tensor x, const GradCheckOptions& opts) {
  return finite_difference_check([&] { return fn(x); }, {{"x", x}}, opts);
}

}  // namespace masksurf::ad
