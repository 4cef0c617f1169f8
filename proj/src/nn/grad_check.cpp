#include "urbanclip/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace urbanclip::nn {

GradCheckResult grad_check(
    const std::function<Var<double>(ParameterSet<double>&)>& loss_fn,
    ParameterSet<double>& params, std::size_t probe_count, std::uint64_t seed,
    double h) {
  params.zero_grad();
  backward(loss_fn(params));

  std::vector<std::size_t> starts;
  std::size_t total = 0;
  for (const auto& [name, v] : params.entries()) {
    starts.push_back(total);
    total += v.value().numel();
  }
  GradCheckResult result;
  if (total == 0) return result;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  NoGradGuard no_grad;
  for (std::size_t p = 0; p < probe_count; ++p) {
    const std::size_t flat = pick(rng);
    const std::size_t which =
        std::upper_bound(starts.begin(), starts.end(), flat) - starts.begin() - 1;
    const std::size_t index = flat - starts[which];
    auto& [name, var] = params.mutable_entries()[which];
    const double analytic = var.has_grad() ? var.grad()[index] : 0.0;

    double& x = var.mutable_value()[index];
    const double saved = x;
    x = saved + h;
    const double up = loss_fn(params).value()[0];
    x = saved - h;
    const double down = loss_fn(params).value()[0];
    x = saved;
    const double numeric = (up - down) / (2.0 * h);

    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_rel_error || result.probes == 0) {
      result.max_rel_error = std::max(result.max_rel_error, rel);
      if (rel >= result.max_rel_error) {
        result.worst_parameter = name;
        result.worst_index = index;
      }
    }
    ++result.probes;
  }
  return result;
}

}  // namespace urbanclip::nn
