#include "colorbridge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace colorbridge::inline COLORBRIDGE_ABI {

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const std::function<Variable()>& fn) {
  BranchTrace trace;
  const Variable out = fn();
  if (out.value().numel() != 1) {
    throw ShapeError("finite_diff_check: function must return a scalar, got " +
                     to_string(out.shape()));
  }
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
  return {v, trace.signature()};
}

}  // namespace

FiniteDiffReport finite_diff_report(const std::function<Variable()>& fn, std::vector<Variable> wrt,
                                    double step, bool refine, double tolerance) {
  if (!(step > 0)) throw Error("finite_diff_check: step must be positive");
  for (auto& v : wrt) v.zero_grad();
  {
    Tape tape;
    Variable out;
    {
      TapeScope scope(tape);
      out = fn();
    }
    if (!out.value().all_finite()) throw NumericError("finite_diff_check: non-finite output");
    tape.backward(out);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(wrt.size());
  for (const auto& v : wrt) analytic.push_back(v.grad());

  const std::uint64_t base = evaluate(fn).signature;
  FiniteDiffReport report;
  auto relative = [](double a, double fd) { return std::abs(a - fd) / std::max(1e-8, std::abs(fd)); };
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor& value = wrt[k].mutable_value();
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const Scalar original = value[i];
      // central difference, or nullopt when it straddles a kink
      auto central = [&](double h) -> std::optional<double> {
        value[i] = Scalar(double(original) + h);
        const Evaluation plus = evaluate(fn);
        value[i] = Scalar(double(original) - h);
        const Evaluation minus = evaluate(fn);
        value[i] = original;
        if (plus.signature != base || minus.signature != base) return std::nullopt;
        return (plus.value - minus.value) / (2.0 * h);
      };
      const std::optional<double> fd = central(step);
      if (!fd) {
        ++report.skipped_nonsmooth;
        continue;
      }
      const double a = analytic[k][i];
      double err = relative(a, *fd);
      if (refine && err >= tolerance) {
        if (const std::optional<double> half = central(step / 2)) {
          const double richardson = (4.0 * *half - *fd) / 3.0;
          if (std::abs(*fd - richardson) > 0.5 * tolerance * std::max(1e-8, std::abs(richardson))) {
            err = relative(a, richardson);
            ++report.refined;
          }
        }
      }
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.checked;
    }
  }
  return report;
}

double finite_diff_check(const std::function<Variable()>& fn, std::vector<Variable> wrt,
                         double step) {
  return finite_diff_report(fn, std::move(wrt), step).max_rel_error;
}

double finite_diff_check(const std::function<Variable(const Variable&)>& fn, const Tensor& input,
                         double step) {
  Variable x = Variable::leaf(input, true);
  return finite_diff_check([&] { return fn(x); }, {x}, step);
}

}  // namespace colorbridge
