#include "cereid/optim.hpp"

#include <cmath>

namespace cereid {

void adam_step(std::span<Param* const> params, const AdamOptions& o) {
  for (Param* p : params) {
    ++p->step_count;
    const double t = static_cast<double>(p->step_count);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->adam_m[i] = o.beta1 * p->adam_m[i] + (1.0 - o.beta1) * g;
      p->adam_v[i] = o.beta2 * p->adam_v[i] + (1.0 - o.beta2) * g * g;
      const double m_hat = p->adam_m[i] / c1;
      const double v_hat = p->adam_v[i] / c2;
      p->value[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

}  // namespace cereid
