#include "karma/nn.hpp"

#include <cmath>

namespace karma {

Tensor uniform_parameter(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = uniform_parameter({in, out}, bound, rng);
  if (with_bias) l.bias = uniform_parameter({out}, bound, rng);
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

}  // namespace karma
