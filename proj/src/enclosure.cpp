#include "tlode/enclosure.hpp"

#include <cmath>
#include <sstream>

#include "tlode/error.hpp"

namespace tlode {

namespace {

void check_state(const Tensor& x, const char* who) {
  if (x.rank() != 1) {
    throw ShapeError(std::string(who) + ": expected a rank-1 state, got " + x.shape_str());
  }
  require_finite(x, std::string(who) + ": state");
}

}  // namespace

double gronwall_variation_bound(const VectorField& field, double l2_of_l, const Tensor& x,
                                double dt) {
  check_state(x, "gronwall_variation_bound");
  if (dt < 0.0) {
    throw ConfigError("gronwall_variation_bound: dt must be >= 0");
  }
  if (l2_of_l < 0.0) {
    throw ConfigError("gronwall_variation_bound: Lipschitz norm must be >= 0");
  }
  const double fn = norm2(field_eval(field, x));
  if (l2_of_l == 0.0) {
    return fn * dt;  // continuous extension of (e^{L dt} - 1)/L
  }
  return fn * std::expm1(l2_of_l * dt) / l2_of_l;
}

AprioriEnclosure apriori_enclosure(const VectorField& field, double l2_of_l, const Tensor& x,
                                   double dt) {
  check_state(x, "apriori_enclosure");
  if (dt < 0.0) {
    throw ConfigError("apriori_enclosure: dt must be >= 0");
  }
  if (l2_of_l < 0.0) {
    throw ConfigError("apriori_enclosure: Lipschitz norm must be >= 0");
  }
  const double n = static_cast<double>(x.size());
  const double contraction = std::sqrt(n) * dt * l2_of_l;
  if (contraction >= 1.0) {
    std::ostringstream msg;
    msg << "apriori_enclosure: step too large for enclosure (sqrt(n) dt L = " << contraction
        << " >= 1); max admissible dt is " << 1.0 / (std::sqrt(n) * l2_of_l);
    throw NumericalError(msg.str());
  }
  const Tensor fx = field_eval(field, x);
  const double radius = dt * norm1(fx) / (1.0 - contraction);
  return AprioriEnclosure{x, Tensor::full({x.size()}, radius)};
}

bool contains(const AprioriEnclosure& enc, const Tensor& y) {
  if (!enc.center.same_shape(y)) {
    throw ShapeError("contains: state " + y.shape_str() + " does not match enclosure center " +
                     enc.center.shape_str());
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::abs(y.at(i) - enc.center.at(i)) > enc.radius_vector.at(i)) {
      return false;
    }
  }
  return true;
}

}  // namespace tlode
