#include "capsan/grad_check.hpp"

#include <cmath>
#include <sstream>

namespace capsan {

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double step,
                           double tol) {
  GradCheckReport report;
  if (!x.requires_grad()) {
    report.message = "input does not require grad";
    return report;
  }

  x.zero_grad();
  Tensor y = f(x);
  if (y.size() != 1) {
    report.message = "function output is not scalar: shape " + shape_str(y.shape());
    return report;
  }
  {
    Graph g = Graph::trace(y.node().get());
    if (Node* bad = g.first_nonfinite()) {
      report.message = std::string("non-finite forward value in op '") + bad->op + "'";
      return report;
    }
  }
  y.backward();
  std::vector<double> analytic = x.grad();

  std::vector<double> numeric(x.size());
  {
    NoGradGuard ng;
    auto& xv = x.data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double saved = xv[i];
      xv[i] = saved + step;
      const double fp = f(x).item();
      xv[i] = saved - step;
      const double fm = f(x).item();
      xv[i] = saved;
      numeric[i] = (fp - fm) / (2.0 * step);
      if (!std::isfinite(numeric[i])) {
        report.message = "non-finite central difference at index " + std::to_string(i);
        return report;
      }
    }
  }

  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
    const double err = std::abs(analytic[i] - numeric[i]) / denom;
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
  }
  report.pass = report.max_rel_error <= tol;
  if (!report.pass) {
    std::ostringstream os;
    os << "max rel error " << report.max_rel_error << " at flat index " << report.worst_index;
    report.message = os.str();
  }
  return report;
}

}  // namespace capsan
