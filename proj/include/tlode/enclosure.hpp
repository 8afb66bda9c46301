#pragma once

#include "tlode/dynamics.hpp"
#include "tlode/tensor.hpp"

namespace tlode {

// Interval box certified to contain the flow over one step.
struct AprioriEnclosure {
  Tensor center;         // [n]
  Tensor radius_vector;  // [n], componentwise half-widths, >= 0
};

// Bound on how far the solution can drift from x within dt:
// ||x(t) - x||_2 <= ||f(x)||_2 (e^{L dt} - 1) / L, with the L -> 0 limit
// ||f(x)||_2 dt.
double gronwall_variation_bound(const VectorField& field, double l2_of_l, const Tensor& x,
                                double dt);

// Rough enclosure for the solution over [t, t+dt]: a box around x with
// per-component radius ||dt f(x)||_1 / (1 - sqrt(n) dt L). Requires the
// contraction hypothesis sqrt(n) dt L < 1; otherwise throws, reporting the
// largest admissible dt.
AprioriEnclosure apriori_enclosure(const VectorField& field, double l2_of_l, const Tensor& x,
                                   double dt);

// Closed-box membership test.
bool contains(const AprioriEnclosure& enc, const Tensor& y);

}  // namespace tlode
