#include "pan/gradcheck.hpp"

#include <cmath>

#include "pan/errors.hpp"

namespace pan {

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                        double h) {
  if (h <= 0.0) throw UsageError("numeric_gradient requires h > 0");
  auto xd = x.raw_data();
  Tensor out = Tensor::zeros(x.shape());
  auto od = out.raw_data();
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const float orig = xd[i];
    const auto xp = static_cast<float>(static_cast<double>(orig) + h);
    const auto xm = static_cast<float>(static_cast<double>(orig) - h);
    xd[i] = xp;
    const double fp = f(x);
    xd[i] = xm;
    const double fm = f(x);
    xd[i] = orig;
    od[i] = static_cast<float>((fp - fm) /
                               (static_cast<double>(xp) - static_cast<double>(xm)));
  }
  return out;
}

double scaled_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

double max_scaled_rel_err(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw UsageError("max_scaled_rel_err shape mismatch: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  auto ad = a.data();
  auto bd = b.data();
  double worst = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i)
    worst = std::max(worst, scaled_rel_err(ad[i], bd[i]));
  return worst;
}

}  // namespace pan
