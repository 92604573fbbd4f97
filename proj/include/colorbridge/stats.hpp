#pragma once

#include "colorbridge/abi.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace colorbridge::inline COLORBRIDGE_ABI::stats {

/// Area under the ROC curve via midranks. labels are 0/1; both classes
/// must be present ("AUC undefined" otherwise).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct AucResult {
  std::vector<double> per_observation;
  double mean_auc = 0.0;
};
/// Arithmetic mean of per-observation AUCs.
AucResult mean_auc(std::vector<double> per_observation);

/// Per-observation AUCs of a score matrix; scores[i][k] for sample i.
/// Entries with mask 0 are skipped. An observation whose remaining labels
/// are single-class gets NaN and an entry in `errors`; the mean covers the
/// observations that are defined.
struct ObservationAucs {
  AucResult result;
  std::vector<std::string> errors;
};
ObservationAucs evaluate_aucs(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<int>>& targets,
                              const std::vector<std::vector<int>>& mask);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double dof);

struct PairedTTestResult {
  double t = 0.0;
  int dof = 0;
  double p_two_sided = 1.0;
};
/// Two-sided paired t-test on d = a - b. All-zero differences give p = 1
/// (t = 0); constant non-zero differences give p = 0 (t = +-inf).
PairedTTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct BhResult {
  std::vector<double> adjusted_p;
  std::vector<bool> reject;
};
BhResult benjamini_hochberg(const std::vector<double>& p, double alpha);

struct RunAggregate {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // n - 1 denominator
};
RunAggregate aggregate_runs(const std::vector<double>& per_seed);

/// "78.4 ± 0.5": mean and std of AUCs in percent, one decimal.
std::string format_mean_std(const RunAggregate& agg);

}  // namespace colorbridge::stats
