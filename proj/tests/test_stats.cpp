#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "colorbridge/rng.hpp"
#include "colorbridge/stats.hpp"
#include "colorbridge/tensor.hpp"

using namespace colorbridge;
using namespace colorbridge::stats;

namespace {

double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i]) ++pos; else ++neg;
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return num / double(pos * neg);
}

// Adjusted p as the minimum over the step-up rejection sets that contain i.
std::vector<double> brute_force_bh(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = 1.0;
    for (std::size_t k = 1; k <= m; ++k) {
      // k-th smallest value
      std::vector<double> sorted = p;
      std::sort(sorted.begin(), sorted.end());
      if (p[i] <= sorted[k - 1]) best = std::min(best, sorted[k - 1] * double(m) / double(k));
    }
    out[i] = best;
  }
  return out;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("roc_auc") {
  TEST_CASE("examples") {
    CHECK(roc_auc({0.9, 0.8, 0.1}, {1, 1, 0}) == 1.0);
    CHECK(roc_auc({0.9, 0.8, 0.1}, {0, 0, 1}) == 0.0);
    CHECK(roc_auc({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}) == 0.5);
  }

  TEST_CASE("single class is undefined") {
    CHECK(error_of([] { roc_auc({0.1, 0.2}, {1, 1}); }).find("AUC undefined") != std::string::npos);
    CHECK_THROWS_AS(roc_auc({0.1}, {1, 0}), Error);
  }

  TEST_CASE("matches the pair-count oracle on 500 random instances with ties") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t n = 2 + uniform_index(rng, 60);
      const bool coarse = trial % 2 == 0;
      std::vector<double> s(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = coarse ? double(uniform_index(rng, 5)) : uniform01(rng);
        y[i] = uniform01(rng) < 0.4;
      }
      y[0] = 1;
      y[1] = 0;
      CHECK(std::abs(roc_auc(s, y) - pair_count_auc(s, y)) < 1e-9);
    }
  }

  TEST_CASE("invariant under increasing transforms, complementary under negation") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> s(30), t(30), neg(30);
      std::vector<int> y(30);
      for (std::size_t i = 0; i < 30; ++i) {
        s[i] = trial % 2 ? double(uniform_index(rng, 4)) : standard_normal(rng);
        t[i] = std::exp(3 * s[i]) + 1;
        neg[i] = -s[i];
        y[i] = i % 3 == 0;
      }
      CHECK(roc_auc(t, y) == doctest::Approx(roc_auc(s, y)).epsilon(1e-12));
      CHECK(roc_auc(s, y) + roc_auc(neg, y) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_SUITE("mean_auc") {
  TEST_CASE("examples") {
    CHECK(mean_auc({1.0, 0.5}).mean_auc == 0.75);
    CHECK(mean_auc({0.61}).mean_auc == 0.61);
    CHECK_THROWS_AS(mean_auc({}), Error);
    const std::vector<double> v = {0.71, 0.93, 0.55, 0.8, 0.62};
    CHECK(std::abs(mean_auc(v).mean_auc - std::accumulate(v.begin(), v.end(), 0.0) / 5.0) < 1e-12);
    CHECK(mean_auc(v).per_observation == v);
  }

  TEST_CASE("masked entries are skipped and single-class observations reported") {
    const std::vector<std::vector<double>> scores = {{0.9, 0.2}, {0.1, 0.4}, {0.8, 0.3}};
    const std::vector<std::vector<int>> targets = {{1, 0}, {0, 0}, {0, 1}};
    const std::vector<std::vector<int>> mask = {{1, 1}, {1, 1}, {0, 1}};
    const ObservationAucs r = evaluate_aucs(scores, targets, mask);
    CHECK(r.result.per_observation[0] == 1.0);
    CHECK(r.result.per_observation[1] == 0.5);
    CHECK(r.result.mean_auc == 0.75);
    CHECK(r.errors.empty());
    const ObservationAucs single = evaluate_aucs(scores, {{1, 0}, {0, 0}, {1, 0}}, mask);
    CHECK(std::isnan(single.result.per_observation[1]));
    CHECK(single.errors.size() == 1);
    CHECK(single.result.mean_auc == 1.0);
  }
}

TEST_SUITE("paired_t_test") {
  TEST_CASE("hand-computed example") {
    const auto r = paired_t_test({1, 2, 3}, {0, 0, 0});
    CHECK(r.t == doctest::Approx(2.0 * std::sqrt(3.0)));
    CHECK(r.dof == 2);
    CHECK(r.p_two_sided == doctest::Approx(0.0742).epsilon(1e-3));
  }

  TEST_CASE("degenerate conventions") {
    CHECK(paired_t_test({0.7, 0.8, 0.9}, {0.7, 0.8, 0.9}).p_two_sided == 1.0);
    CHECK(paired_t_test({0.7, 0.8, 0.9}, {0.7, 0.8, 0.9}).t == 0.0);
    const auto c = paired_t_test({0.8, 0.9}, {0.7, 0.8});
    CHECK(c.p_two_sided == 0.0);
    CHECK(std::isinf(c.t));
    CHECK_THROWS_AS(paired_t_test({1}, {2}), Error);
    CHECK_THROWS_AS(paired_t_test({1, 2}, {2}), Error);
  }

  TEST_CASE("p-values match a reference Student-t distribution") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + uniform_index(rng, 10);
      std::vector<double> a(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = standard_normal(rng) + 0.5;
        b[i] = standard_normal(rng);
      }
      const auto r = paired_t_test(a, b);
      boost::math::students_t dist(double(n - 1));
      const double p = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
      CHECK(std::abs(r.p_two_sided - p) < 1e-10);
      const auto swapped = paired_t_test(b, a);
      CHECK(swapped.t == doctest::Approx(-r.t).epsilon(1e-12));
      CHECK(swapped.p_two_sided == doctest::Approx(r.p_two_sided).epsilon(1e-12));
    }
  }

  TEST_CASE("CDF agrees with the reference on a grid") {
    for (double dof : {1.0, 2.0, 5.0, 29.0}) {
      boost::math::students_t dist(dof);
      double prev = 0;
      for (double t = -8; t <= 8; t += 0.25) {
        const double c = student_t_cdf(t, dof);
        CHECK(std::abs(c - boost::math::cdf(dist, t)) < 1e-10);
        CHECK(c >= prev);
        prev = c;
      }
    }
  }
}

TEST_SUITE("benjamini_hochberg") {
  TEST_CASE("examples") {
    const auto r = benjamini_hochberg({0.01, 0.04, 0.03, 0.005}, 0.05);
    const std::vector<double> want = {0.02, 0.04, 0.04, 0.02};
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(r.adjusted_p[i] == doctest::Approx(want[i]).epsilon(1e-12));
      CHECK(r.reject[i]);
    }
    CHECK(benjamini_hochberg({0.03}, 0.05).adjusted_p[0] == 0.03);
    for (bool rej : benjamini_hochberg({1.0, 1.0, 1.0}, 0.05).reject) CHECK_FALSE(rej);
    CHECK_THROWS_AS(benjamini_hochberg({0.5, 1.2}, 0.05), Error);
    CHECK_THROWS_AS(benjamini_hochberg({}, 0.05), Error);
  }

  TEST_CASE("matches a brute-force step-up oracle on 200 vectors") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t m = 1 + uniform_index(rng, 12);
      std::vector<double> p(m);
      for (auto& v : p) v = trial % 3 == 0 ? double(uniform_index(rng, 4)) / 40.0 : std::pow(uniform01(rng), 3);
      const auto r = benjamini_hochberg(p, 0.05);
      const auto oracle = brute_force_bh(p);
      std::vector<std::size_t> order(m);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto i, auto j) { return p[i] < p[j]; });
      for (std::size_t i = 0; i < m; ++i) {
        CHECK(r.adjusted_p[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
        CHECK(r.adjusted_p[i] >= p[i]);
        CHECK(r.reject[i] == (r.adjusted_p[i] < 0.05));
      }
      for (std::size_t i = 1; i < m; ++i) CHECK(r.adjusted_p[order[i]] >= r.adjusted_p[order[i - 1]]);
    }
  }
}

TEST_SUITE("aggregate") {
  TEST_CASE("examples") {
    const auto flat = aggregate_runs({0.8, 0.8, 0.8});
    CHECK(flat.mean == doctest::Approx(0.8));
    CHECK(flat.std == 0.0);
    const auto two = aggregate_runs({0.7, 0.9});
    CHECK(two.mean == doctest::Approx(0.8));
    CHECK(two.std == doctest::Approx(0.1414).epsilon(1e-3));
    CHECK_THROWS_AS(aggregate_runs({0.8}), Error);
  }

  TEST_CASE("formatting") {
    RunAggregate a;
    a.mean = 0.784;
    a.std = 0.005;
    CHECK(format_mean_std(a) == "78.4 ± 0.5");
    a.mean = 0.9;
    a.std = 0.0;
    CHECK(format_mean_std(a) == "90.0 ± 0.0");
  }
}
