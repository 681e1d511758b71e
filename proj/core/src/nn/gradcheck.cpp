#include "tempofuse/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tempofuse/error.hpp"
#include "tempofuse/rng.hpp"

namespace tempofuse::nn {

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const std::function<Tensor<double>()>& loss_fn) {
  NoGradGuard no_grad;
  BranchRecorder recorder;
  const double v = loss_fn().item();
  return {v, recorder.signature()};
}

}  // namespace

GradCheckReport finite_difference_check(const std::function<Tensor<double>()>& loss_fn,
                                        const std::vector<GradCheckTarget>& targets,
                                        const GradCheckOptions& options) {
  require(options.step > 0.0, ErrorCode::invalid_argument, "finite-difference step must be > 0");
  for (const auto& t : targets) {
    require(t.tensor != nullptr && t.tensor->defined(), ErrorCode::invalid_argument,
            "gradient check target '" + t.name + "' is undefined");
    t.tensor->set_requires_grad(true);
    t.tensor->zero_grad();
  }

  std::uint64_t base_signature = 0;
  {
    BranchRecorder recorder;
    auto loss = loss_fn();
    base_signature = recorder.signature();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& t : targets) {
    const auto g = t.tensor->grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.tensor->numel(), 0.0);
  }

  GradCheckReport report;
  Rng rng(options.seed);
  const double h = options.step;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    auto& tensor = *targets[ti].tensor;
    const std::size_t n = tensor.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > options.coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(options.coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (const std::size_t i : coords) {
      double& x = tensor.data()[i];
      const double saved = x;
      x = saved + h;
      const Probe plus = evaluate(loss_fn);
      x = saved - h;
      const Probe minus = evaluate(loss_fn);
      x = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * h);
      const double a = analytic[ti][i];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.worst.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst = targets[ti].name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  return report;
}

}  // namespace tempofuse::nn
