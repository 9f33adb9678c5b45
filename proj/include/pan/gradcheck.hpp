#pragma once

#include <functional>

#include "pan/tensor.hpp"

namespace pan {

// Central-difference gradient of a scalar-valued function, one coordinate at
// a time. The divisor is the perturbation actually realized in float32
// storage (fl(x+h) - fl(x-h)), not the nominal 2h, which keeps linear
// functions exact. Test oracle; not part of any training path.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                        double h);

// |a - b| / max(|a|, |b|, 1): relative error with a unit floor so that
// near-zero gradients are compared absolutely.
double scaled_rel_err(double a, double b);

// Maximum scaled_rel_err over two equally-shaped tensors.
double max_scaled_rel_err(const Tensor& a, const Tensor& b);

}  // namespace pan
