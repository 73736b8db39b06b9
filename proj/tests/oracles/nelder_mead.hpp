#pragma once

// Plain Nelder-Mead simplex minimizer with restarts.

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Core>

namespace oracle {

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
};

inline NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x0,
                                    double step, int max_evals = 20000, int restarts = 3, double ftol = 1e-13) {
  const int d = static_cast<int>(x0.size());
  NelderMeadResult res;
  res.x = x0;
  res.value = f(x0);
  res.evaluations = 1;
  for (int round = 0; round <= restarts; ++round) {
    std::vector<Eigen::VectorXd> pts(d + 1, res.x);
    std::vector<double> vals(d + 1);
    for (int i = 0; i < d; ++i) pts[i + 1][i] += step;
    for (int i = 0; i <= d; ++i) vals[i] = f(pts[i]);
    res.evaluations += d + 1;
    std::vector<int> order(d + 1);
    while (res.evaluations < max_evals) {
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
      const int best = order.front(), worst = order.back(), second_worst = order[d - 1];
      if (vals[worst] - vals[best] <= ftol * (1.0 + std::abs(vals[best]))) break;
      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
      for (int i = 0; i < d; ++i) centroid += pts[order[i]];
      centroid /= d;
      const Eigen::VectorXd reflected = centroid + (centroid - pts[worst]);
      const double fr = f(reflected);
      ++res.evaluations;
      if (fr < vals[best]) {
        const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - pts[worst]);
        const double fe = f(expanded);
        ++res.evaluations;
        if (fe < fr) {
          pts[worst] = expanded;
          vals[worst] = fe;
        } else {
          pts[worst] = reflected;
          vals[worst] = fr;
        }
      } else if (fr < vals[second_worst]) {
        pts[worst] = reflected;
        vals[worst] = fr;
      } else {
        const bool outside = fr < vals[worst];
        const Eigen::VectorXd contracted =
            outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                    : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
        const double fc = f(contracted);
        ++res.evaluations;
        if (fc < (outside ? fr : vals[worst])) {
          pts[worst] = contracted;
          vals[worst] = fc;
        } else {
          for (int i = 0; i <= d; ++i) {
            if (i == best) continue;
            pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
            vals[i] = f(pts[i]);
          }
          res.evaluations += d;
        }
      }
    }
    const int best = static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
    if (vals[best] < res.value) {
      res.value = vals[best];
      res.x = pts[best];
    }
    step *= 0.25;
  }
  return res;
}

}  // namespace oracle
