#pragma once

// Two-sample Mann-Whitney U test with midranks for ties.
//
// Exact method: the null distribution of U1 is the distribution of the rank
// sum over all C(n1+n2, n1) equally likely ways to split the observed
// midranks between the samples. It is counted by dynamic programming over
// doubled rank sums, which enumerates the same splits without listing them.
//
// Normal method: mean n1·n2/2, tie-corrected variance
//   (n1·n2/12)·[(N+1) - Σ(t³-t)/(N(N-1))],
// continuity correction 0.5, two-sided p = 2·min(P_low, P_high) capped at 1.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace oneiros::evaluate {

inline constexpr double kExactSplitLimit = 200000.0;

enum class UMethod { exact, normal_tie_corrected };

std::string to_string(UMethod method);
UMethod parse_umethod(const std::string& name);

enum class UMethodChoice { automatic, exact, normal };

struct UTestResult {
  double u1 = 0.0;
  double u2 = 0.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  double p_two_sided = 1.0;
  UMethod method = UMethod::exact;
  double z = 0.0;           // normal method only
  bool degenerate = false;  // zero variance: every value tied
};

/// Midranks (1-based, ties share the average rank) of the pooled sample.
std::vector<double> midranks(std::span<const double> pooled);

/// Number of ways to choose k of n, as a double (exact below 2^53).
double binomial(std::size_t n, std::size_t k);

UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                           UMethodChoice choice = UMethodChoice::automatic);

}  // namespace oneiros::evaluate
