#include "colorbridge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "colorbridge/tensor.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::stats {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * double(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error("AUC undefined: labels contain a single class");
  const double u = pos_rank_sum - 0.5 * double(n_pos) * double(n_pos + 1);
  return u / (double(n_pos) * double(n_neg));
}

AucResult mean_auc(std::vector<double> per_observation) {
  if (per_observation.empty()) throw Error("mean_auc: no observations");
  AucResult r;
  r.mean_auc = std::accumulate(per_observation.begin(), per_observation.end(), 0.0) /
               double(per_observation.size());
  r.per_observation = std::move(per_observation);
  return r;
}

ObservationAucs evaluate_aucs(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<int>>& targets,
                              const std::vector<std::vector<int>>& mask) {
  if (scores.empty()) throw Error("evaluate_aucs: no samples");
  if (targets.size() != scores.size() || mask.size() != scores.size()) {
    throw Error("evaluate_aucs: scores, targets and mask differ in length");
  }
  const std::size_t k_count = scores.front().size();
  ObservationAucs out;
  std::vector<double> defined;
  for (std::size_t k = 0; k < k_count; ++k) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (mask[i].at(k) == 0) continue;
      s.push_back(scores[i].at(k));
      l.push_back(targets[i].at(k));
    }
    try {
      const double auc = roc_auc(s, l);
      out.result.per_observation.push_back(auc);
      defined.push_back(auc);
    } catch (const Error& e) {
      out.result.per_observation.push_back(std::numeric_limits<double>::quiet_NaN());
      out.errors.push_back("observation " + std::to_string(k) + ": " + e.what());
    }
  }
  out.result.mean_auc = defined.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : mean_auc(defined).mean_auc;
  return out;
}

namespace {

// Continued fraction for I_x(a,b) (modified Lentz).
double beta_cf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw Error("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw Error("incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (!(dof > 0)) throw Error("student_t_cdf: dof must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
  return t >= 0 ? 1.0 - tail : tail;
}

PairedTTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("paired_t_test: samples differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw Error("paired_t_test: need at least 2 pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / double(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  PairedTTestResult r;
  r.dof = int(n) - 1;
  const bool all_zero = std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; });
  if (all_zero) {
    r.t = 0.0;
    r.p_two_sided = 1.0;
    return r;
  }
  // Constant up to the rounding of a - b itself.
  constexpr double eps = std::numeric_limits<double>::epsilon();
  bool constant = true;
  for (std::size_t i = 1; i < n; ++i) {
    const double scale = std::abs(a[i]) + std::abs(b[i]) + std::abs(a[0]) + std::abs(b[0]);
    constant = constant && std::abs(d[i] - d[0]) <= 8 * eps * scale;
  }
  if (constant || ss == 0.0) {
    r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
    r.p_two_sided = 0.0;
    return r;
  }
  const double sd = std::sqrt(ss / double(n - 1));
  r.t = mean / (sd / std::sqrt(double(n)));
  const double x = double(r.dof) / (double(r.dof) + r.t * r.t);
  r.p_two_sided = std::clamp(incomplete_beta(0.5 * r.dof, 0.5, x), 0.0, 1.0);
  return r;
}

BhResult benjamini_hochberg(const std::vector<double>& p, double alpha) {
  const std::size_t m = p.size();
  if (m == 0) throw Error("benjamini_hochberg: empty p-value vector");
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error("benjamini_hochberg: p-value outside [0, 1]");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return p[x] < p[y]; });
  BhResult r{std::vector<double>(m), std::vector<bool>(m)};
  double running = 1.0;
  for (std::size_t i = m; i-- > 0;) {
    const double scaled = std::min(1.0, p[order[i]] * double(m) / double(i + 1));
    running = std::min(running, scaled);
    r.adjusted_p[order[i]] = std::max(running, p[order[i]]);  // p * m / m may round below p
  }
  for (std::size_t i = 0; i < m; ++i) r.reject[i] = r.adjusted_p[i] < alpha;
  return r;
}

RunAggregate aggregate_runs(const std::vector<double>& per_seed) {
  if (per_seed.size() < 2) throw Error("aggregate_runs: std undefined for fewer than 2 runs");
  RunAggregate r;
  r.values = per_seed;
  // Shifted by the first run so identical runs give exactly zero spread.
  const double shift = per_seed.front();
  double sum = 0.0;
  for (double v : per_seed) sum += v - shift;
  const double mean_shifted = sum / double(per_seed.size());
  r.mean = shift + mean_shifted;
  double ss = 0.0;
  for (double v : per_seed) ss += (v - shift - mean_shifted) * (v - shift - mean_shifted);
  r.std = std::sqrt(ss / double(per_seed.size() - 1));
  return r;
}

std::string format_mean_std(const RunAggregate& agg) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f ± %.1f", agg.mean * 100.0, agg.std * 100.0);
  return buf;
}

}  // namespace colorbridge::stats
