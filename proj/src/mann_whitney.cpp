#include "oneiros/mann_whitney.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "oneiros/error.hpp"

namespace oneiros::evaluate {

std::string to_string(UMethod method) {
  return method == UMethod::exact ? "exact" : "normal_tie_corrected";
}

UMethod parse_umethod(const std::string& name) {
  if (name == "exact") return UMethod::exact;
  if (name == "normal_tie_corrected") return UMethod::normal_tie_corrected;
  throw ValidationError("unknown U-test method '" + name + "'");
}

std::vector<double> midranks(std::span<const double> pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    // Positions i..j (0-based) share ranks i+1..j+1.
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return std::round(r);
}

namespace {

// counts[k][s] = number of k-subsets of the first items whose doubled-rank sum
// is s. Only sizes up to n1 are kept.
std::vector<double> rank_sum_distribution(const std::vector<long>& doubled_ranks, std::size_t n1,
                                          long max_sum) {
  std::vector<std::vector<double>> counts(n1 + 1, std::vector<double>(max_sum + 1, 0.0));
  counts[0][0] = 1.0;
  std::size_t seen = 0;
  for (long r : doubled_ranks) {
    ++seen;
    for (std::size_t k = std::min(seen, n1); k >= 1; --k) {
      auto& dst = counts[k];
      const auto& src = counts[k - 1];
      for (long s = max_sum; s >= r; --s) dst[s] += src[s - r];
    }
  }
  return counts[n1];
}

double normal_upper(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

}  // namespace

UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                           UMethodChoice choice) {
  if (a.empty() || b.empty()) throw ValidationError("Mann-Whitney U needs n1 >= 1 and n2 >= 1");
  for (double v : a) {
    if (!std::isfinite(v)) throw ValidationError("Mann-Whitney U input has a non-finite value");
  }
  for (double v : b) {
    if (!std::isfinite(v)) throw ValidationError("Mann-Whitney U input has a non-finite value");
  }
  const std::size_t n1 = a.size();
  const std::size_t n2 = b.size();
  const std::size_t n = n1 + n2;

  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = midranks(pooled);

  // Doubled midranks are integers; all U arithmetic stays exact in that unit.
  std::vector<long> doubled(n);
  for (std::size_t i = 0; i < n; ++i) doubled[i] = std::lround(2.0 * ranks[i]);
  long r1_doubled = 0;
  for (std::size_t i = 0; i < n1; ++i) r1_doubled += doubled[i];
  const long offset_doubled = static_cast<long>(n1 * (n1 + 1));  // 2 · n1(n1+1)/2

  UTestResult out;
  out.n1 = n1;
  out.n2 = n2;
  out.u1 = static_cast<double>(r1_doubled - offset_doubled) / 2.0;
  out.u2 = static_cast<double>(n1 * n2) - out.u1;

  const double splits = binomial(n, n1);
  const bool exact = choice == UMethodChoice::exact ||
                     (choice == UMethodChoice::automatic && splits <= kExactSplitLimit);

  if (exact) {
    out.method = UMethod::exact;
    const long max_sum = std::accumulate(doubled.begin(), doubled.end(), 0L);
    const std::vector<double> dist = rank_sum_distribution(doubled, n1, max_sum);
    double low = 0.0;
    double high = 0.0;
    double total = 0.0;
    for (long s = 0; s <= max_sum; ++s) {
      total += dist[s];
      if (s <= r1_doubled) low += dist[s];
      if (s >= r1_doubled) high += dist[s];
    }
    out.p_two_sided = std::min(1.0, 2.0 * std::min(low, high) / total);
    out.degenerate = std::all_of(doubled.begin(), doubled.end(), [&](long r) { return r == doubled[0]; });
    return out;
  }

  out.method = UMethod::normal_tie_corrected;
  std::map<long, std::size_t> tie_sizes;
  for (long r : doubled) ++tie_sizes[r];
  double tie_term = 0.0;
  for (const auto& [r, t] : tie_sizes) {
    const double td = static_cast<double>(t);
    tie_term += td * td * td - td;
  }
  const double dn = static_cast<double>(n);
  const double nn = static_cast<double>(n1) * static_cast<double>(n2);
  const double variance = (nn / 12.0) * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (!(variance > 0.0)) {
    out.degenerate = true;
    out.p_two_sided = 1.0;
    out.z = 0.0;
    return out;
  }
  const double sigma = std::sqrt(variance);
  const double diff = out.u1 - nn / 2.0;
  const double p_low = normal_upper(-(diff + 0.5) / sigma);
  const double p_high = normal_upper((diff - 0.5) / sigma);
  out.p_two_sided = std::min(1.0, 2.0 * std::min(p_low, p_high));
  const double corrected = std::abs(diff) <= 0.5 ? 0.0 : (std::abs(diff) - 0.5);
  out.z = std::copysign(corrected, diff) / sigma;
  return out;
}

}  // namespace oneiros::evaluate
