#include <cmath>
#include <numbers>

#include "masksurf/training.hpp"

namespace masksurf {

void adamw_step(std::span<Real> param, std::span<const Real> grad, Moments& s, std::uint64_t t,
                double lr, double weight_decay, const AdamWConstants& c,
                const std::string& name) {
  if (param.size() != grad.size()) {
    throw InvalidArgument("adamw_step: '" + name + "' gradient size mismatch");
  }
  if (t == 0) throw InvalidArgument("adamw_step: step counter is 1-based");
  for (Real g : grad) {
    if (!std::isfinite(static_cast<double>(g))) {
      throw NumericalError("non-finite gradient in '" + name + "'");
    }
  }
  if (s.m.empty()) {
    s.m.assign(param.size(), 0.0);
    s.v.assign(param.size(), 0.0);
  }
  if (s.m.size() != param.size() || s.v.size() != param.size()) {
    throw InvalidArgument("adamw_step: '" + name + "' moment size mismatch");
  }
  const double bc1 = 1.0 - std::pow(c.beta1, double(t));
  const double bc2 = 1.0 - std::pow(c.beta2, double(t));
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
    s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = s.m[i] / bc1;
    const double v_hat = s.v[i] / bc2;
    double p = static_cast<double>(param[i]) * decay;
    p -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    param[i] = static_cast<Real>(p);
  }
}

AdamW::AdamW(std::vector<NamedTensor> params, AdamWConstants c)
    : params_(std::move(params)), moments_(params_.size()), c_(c) {}

void AdamW::step(double lr, double weight_decay) {
  // Validate everything first so a bad gradient leaves no parameter half-updated.
  for (const auto& [name, p] : params_) {
    if (!p.grad().empty()) {
      for (Real g : p.grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw NumericalError("non-finite gradient in '" + name + "'");
        }
      }
    }
  }
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& [name, p] = params_[i];
    const double wd = p.dim() <= 1 ? 0.0 : weight_decay;
    std::vector<Real> zero;
    std::span<const Real> g = p.grad();
    if (g.empty()) {
      zero.assign(p.numel(), Real(0));
      g = zero;
    }
    adamw_step(p.mutable_values(), g, moments_[i], t_, lr, wd, c_, name);
    for (Real v : p.values()) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw NumericalError("parameter '" + name + "' became non-finite");
      }
    }
    p.zero_grad();
  }
}

std::vector<NamedArray> AdamW::state() const {
  std::vector<NamedArray> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    const auto& mo = moments_[i];
    const std::size_t n = p.numel();
    NamedArray m{"m:" + name, p.shape(), mo.m.empty() ? std::vector<double>(n, 0.0) : mo.m};
    NamedArray v{"v:" + name, p.shape(), mo.v.empty() ? std::vector<double>(n, 0.0) : mo.v};
    out.push_back(std::move(m));
    out.push_back(std::move(v));
  }
  return out;
}

void AdamW::load_state(const std::vector<NamedArray>& state, std::uint64_t step_count) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    for (const auto& a : state) {
      if (a.name != "m:" + name && a.name != "v:" + name) continue;
      if (a.values.size() != p.numel()) {
        throw DataError("optimizer state '" + a.name + "' does not match its parameter");
      }
      (a.name[0] == 'm' ? moments_[i].m : moments_[i].v) = a.values;
    }
    if (moments_[i].m.size() != moments_[i].v.size()) {
      throw DataError("optimizer state for '" + name + "' is incomplete");
    }
  }
  t_ = step_count;
}

double cosine_lr(double epoch, std::size_t total_epochs, double lr_init) {
  if (total_epochs == 0) return lr_init;
  if (epoch < 0.0 || epoch > double(total_epochs)) {
    throw InvalidArgument("cosine_lr: epoch outside [0, total]");
  }
  return lr_init * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / double(total_epochs)));
}

double alpha_schedule(std::size_t step, std::size_t total_steps, double alpha_final) {
  if (total_steps == 0) return alpha_final;
  if (step > total_steps) throw InvalidArgument("alpha_schedule: step beyond total");
  return alpha_final * double(step) / double(total_steps);
}

}  // namespace masksurf
