#include "karma/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "karma/error.hpp"

namespace karma {

double fd_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  if (!x.requires_grad()) throw ContractError("fd_check: x must require a gradient");
  std::vector<Coordinate> coords;
  coords.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) coords.push_back({x, i});
  return fd_check([&] { return f(x); }, coords, h);
}

double fd_check(const std::function<Tensor()>& f, std::span<const Coordinate> coords, double h) {
  if (!(h > 0.0)) throw ContractError("fd_check: step must be positive");
  std::vector<double> analytic(coords.size());
  for (const Coordinate& c : coords) c.param.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    backward(loss);
  }
  for (std::size_t c = 0; c < coords.size(); ++c) {
    analytic[c] = coords[c].param.grad()[coords[c].index];
  }

  NoGradScope no_grad;
  double worst = 0.0;
  for (std::size_t c = 0; c < coords.size(); ++c) {
    double& v = coords[c].param.mutable_data()[coords[c].index];
    const double saved = v;
    v = saved + h;
    const double up = f().item();
    v = saved - h;
    const double down = f().item();
    v = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[c] - numeric) / std::max(1.0, std::abs(analytic[c]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace karma
