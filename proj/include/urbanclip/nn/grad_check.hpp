#pragma once

#include <functional>
#include <random>

#include "urbanclip/nn/parameters.hpp"

namespace urbanclip::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t probes = 0;
};

// Compares the analytic gradient of `loss_fn` against central finite
// differences (step h) at `probe_count` scalar entries drawn uniformly from
// all parameters. Relative error uses max(|analytic|, |numeric|, 1e-8) as
// the denominator.
GradCheckResult grad_check(
    const std::function<Var<double>(ParameterSet<double>&)>& loss_fn,
    ParameterSet<double>& params, std::size_t probe_count, std::uint64_t seed,
    double h = 1e-5);

}  // namespace urbanclip::nn
