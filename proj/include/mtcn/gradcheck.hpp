#ifndef MTCN_GRADCHECK_HPP
#define MTCN_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtcn/network.hpp"

namespace mtcn {

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0;
  double tolerance = 0;
  bool passed = false;
};

/// max|a - n| / max(max|a|, max|n|, floor): one number per tensor, so tiny
/// gradient entries do not dominate. `floor` keeps gradients that are zero
/// by construction (conv bias ahead of batch norm) from comparing rounding
/// noise against itself.
double relative_error(const TensorD& analytic, const TensorD& numeric, double floor = 1e-300);

/// Central differences of `loss` with respect to every entry of `x`.
TensorD numeric_gradient(const std::function<double()>& loss, TensorD& x, double h = 1e-6);

/// Small network used for the end-to-end check: t=2, 9x9 windows,
/// 2x2 kernels throughout, one hidden dense layer.
NetworkSpec gradcheck_network_spec();

/// Every layer kind plus the full network (both with all branches and with
/// one branch gated off), all in double precision.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace mtcn

#endif  // MTCN_GRADCHECK_HPP
