#include "fbftl/privacy.hpp"

#include <algorithm>
#include <cmath>

namespace fbftl {

void validate_label_distribution(const std::vector<double>& y) {
  if (y.empty()) throw std::invalid_argument("label distribution: empty");
  double sum = 0.0;
  for (double v : y) {
    if (v < 0.0 || !std::isfinite(v))
      throw std::invalid_argument("label distribution: entries must be non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("label distribution: entries must sum to 1");
}

std::vector<double> uniform_labels(int N) {
  if (N < 1) throw std::invalid_argument("uniform_labels: N must be >= 1");
  return std::vector<double>(static_cast<std::size_t>(N), 1.0 / N);
}

std::uint64_t batch_type_count(int N, int K) {
  if (N < 1 || K < 0) throw std::invalid_argument("batch_type_count: need N >= 1, K >= 0");
  // C(N+K-1, K) by the multiplicative rule, dividing early to stay exact.
  using u128 = unsigned __int128;
  u128 result = 1;
  const int n = N + K - 1;
  const int k = std::min(K, n - K);
  for (int i = 1; i <= k; ++i) {
    result = result * static_cast<u128>(n - k + i) / static_cast<u128>(i);
    if (result > static_cast<u128>(UINT64_MAX))
      throw numeric_error("batch_type_count: value exceeds 64 bits");
  }
  return static_cast<std::uint64_t>(result);
}

namespace {

void visit_types(int remaining, int position, BatchType& scratch,
                 const std::function<void(const BatchType&)>& fn) {
  const int N = static_cast<int>(scratch.size());
  if (position == N - 1) {
    scratch[static_cast<std::size_t>(position)] = remaining;
    fn(scratch);
    return;
  }
  for (int n = remaining; n >= 0; --n) {
    scratch[static_cast<std::size_t>(position)] = n;
    visit_types(remaining - n, position + 1, scratch, fn);
  }
}

}  // namespace

void for_each_batch_type(int N, int K, const std::function<void(const BatchType&)>& fn,
                         std::uint64_t cap) {
  const std::uint64_t count = batch_type_count(N, K);
  if (count > cap)
    throw config_error("enumerate_batch_types: " + std::to_string(count) +
                       " types exceeds cap " + std::to_string(cap));
  BatchType scratch(static_cast<std::size_t>(N), 0);
  visit_types(K, 0, scratch, fn);
}

std::vector<BatchType> enumerate_batch_types(int N, int K, std::uint64_t cap) {
  std::vector<BatchType> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(batch_type_count(N, K), cap)));
  for_each_batch_type(N, K, [&out](const BatchType& b) { out.push_back(b); }, cap);
  return out;
}

double batch_type_prob(const BatchType& b, const std::vector<double>& y) {
  validate_label_distribution(y);
  if (b.size() != y.size())
    throw std::invalid_argument("batch_type_prob: type length does not match labels");
  int K = 0;
  for (int n : b) {
    if (n < 0) throw std::invalid_argument("batch_type_prob: negative count");
    K += n;
  }
  // log-space multinomial; a zero-probability label with a positive count
  // forces probability zero.
  double log_p = std::lgamma(static_cast<double>(K) + 1.0);
  for (std::size_t a = 0; a < b.size(); ++a) {
    const int n = b[a];
    if (n == 0) continue;
    if (y[a] == 0.0) return 0.0;
    log_p += n * std::log(y[a]) - std::lgamma(static_cast<double>(n) + 1.0);
  }
  return std::exp(log_p);
}

double entropy_bits(const BatchDistribution& dist) {
  double sum = 0.0;
  double h = 0.0;
  for (const auto& [type, p] : dist.p) {
    if (p < 0.0) throw std::invalid_argument("entropy_bits: negative probability");
    sum += p;
    if (p > 0.0) h -= p * std::log2(p);
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("entropy_bits: probabilities must sum to 1");
  return h;
}

BatchDistribution empirical_distribution(const ShuffleObservation& obs) {
  if (obs.total == 0) throw std::invalid_argument("empirical_distribution: empty observation");
  std::uint64_t sum = 0;
  BatchDistribution dist;
  for (const auto& [type, count] : obs.counts) {
    sum += count;
    dist.p[type] = static_cast<double>(count) / static_cast<double>(obs.total);
  }
  if (sum != obs.total)
    throw std::invalid_argument("empirical_distribution: counts do not sum to total");
  return dist;
}

double exact_prior_entropy_bits(const std::vector<double>& y, int N, int K,
                                std::uint64_t cap) {
  validate_label_distribution(y);
  if (static_cast<int>(y.size()) != N)
    throw std::invalid_argument("prior entropy: label length does not match N");
  double h = 0.0;
  for_each_batch_type(
      N, K,
      [&](const BatchType& b) {
        const double p = batch_type_prob(b, y);
        if (p > 0.0) h -= p * std::log2(p);
      },
      cap);
  return h;
}

PriorEntropy prior_entropy_bits(const std::vector<double>& y, int N, int K, Rng& rng,
                                std::uint64_t cap, std::uint64_t mc_samples) {
  validate_label_distribution(y);
  if (batch_type_count(N, K) <= cap)
    return {exact_prior_entropy_bits(y, N, K, cap), 0.0, true};
  // Entropy is E[-log2 P(B)]; sampling B and averaging the exact per-type
  // log-probability gives an unbiased estimate.
  if (mc_samples == 0) throw std::invalid_argument("prior entropy: need mc_samples > 0");
  double mean = 0.0, m2 = 0.0;
  for (std::uint64_t i = 0; i < mc_samples; ++i) {
    const BatchType b = draw_batch_type(N, K, y, rng);
    const double v = -std::log2(batch_type_prob(b, y));
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  const double n = static_cast<double>(mc_samples);
  return {mean, std::sqrt(m2 / n / n), false};
}

double leakage_given_prior(double prior_bits, const ShuffleObservation& obs) {
  return prior_bits - entropy_bits(empirical_distribution(obs));
}

double leakage_bits(const std::vector<double>& y, const ShuffleObservation& obs, int N, int K,
                    std::uint64_t cap) {
  return leakage_given_prior(exact_prior_entropy_bits(y, N, K, cap), obs);
}

BatchType draw_batch_type(int N, int K, const std::vector<double>& y, Rng& rng) {
  validate_label_distribution(y);
  if (static_cast<int>(y.size()) != N)
    throw std::invalid_argument("draw_batch_type: label length does not match N");
  BatchType b(static_cast<std::size_t>(N), 0);
  for (int k = 0; k < K; ++k) ++b[rng.categorical(y)];
  return b;
}

ShuffleObservation draw_observation(int N, int K, const std::vector<double>& y,
                                    std::uint64_t U, Rng& rng) {
  if (U == 0) throw std::invalid_argument("draw_observation: U must be positive");
  ShuffleObservation obs;
  obs.total = U;
  for (std::uint64_t u = 0; u < U; ++u) ++obs.counts[draw_batch_type(N, K, y, rng)];
  return obs;
}

bool posterior_identity_check(int N, int K, int U) {
  if (N < 1 || K < 1 || U < 1)
    throw std::invalid_argument("posterior_identity_check: need N, K, U >= 1");
  double total_assignments = std::pow(static_cast<double>(N), static_cast<double>(K) *
                                                                  static_cast<double>(U));
  if (total_assignments > 1e7)
    throw config_error("posterior_identity_check: N^(K*U) too large for brute force");

  // Under uniform labels every ordered assignment is equiprobable, so the
  // posterior is a ratio of integer counts: across all assignments with
  // observation s, the fraction whose first batch has type b must be s(b)/U.
  const std::uint64_t per_batch = [&] {
    std::uint64_t p = 1;
    for (int k = 0; k < K; ++k) p *= static_cast<std::uint64_t>(N);
    return p;
  }();

  // Type of each of the N^K ordered batches.
  std::vector<BatchType> batch_type_of(per_batch);
  for (std::uint64_t code = 0; code < per_batch; ++code) {
    BatchType b(static_cast<std::size_t>(N), 0);
    std::uint64_t c = code;
    for (int k = 0; k < K; ++k) {
      ++b[c % static_cast<std::uint64_t>(N)];
      c /= static_cast<std::uint64_t>(N);
    }
    batch_type_of[code] = std::move(b);
  }

  struct Tally {
    std::uint64_t assignments = 0;                  // group size for this s
    std::map<BatchType, std::uint64_t> first_is_b;  // assignments where batch 1 has type b
  };
  std::map<std::map<BatchType, int>, Tally> groups;

  std::vector<std::uint64_t> codes(static_cast<std::size_t>(U), 0);
  while (true) {
    std::map<BatchType, int> s;
    for (std::uint64_t code : codes) ++s[batch_type_of[code]];
    Tally& tally = groups[s];
    ++tally.assignments;
    ++tally.first_is_b[batch_type_of[codes[0]]];

    int i = U - 1;
    while (i >= 0 && ++codes[static_cast<std::size_t>(i)] == per_batch) {
      codes[static_cast<std::size_t>(i)] = 0;
      --i;
    }
    if (i < 0) break;
  }

  for (const auto& [s, tally] : groups) {
    for (const auto& [b, count] : tally.first_is_b) {
      const auto it = s.find(b);
      if (it == s.end()) return false;
      // count / assignments == s(b) / U, cross-multiplied to stay in integers.
      if (count * static_cast<std::uint64_t>(U) !=
          tally.assignments * static_cast<std::uint64_t>(it->second))
        return false;
    }
    // Types absent from s must never appear as the first batch.
    std::uint64_t covered = 0;
    for (const auto& [b, count] : tally.first_is_b) covered += count;
    if (covered != tally.assignments) return false;
  }
  return true;
}

std::vector<LeakagePoint> expected_leakage_curve(int N, int K, const std::vector<double>& y,
                                                 const std::vector<std::uint64_t>& U_list,
                                                 int repetitions, std::uint64_t seed,
                                                 std::uint64_t cap) {
  validate_label_distribution(y);
  if (repetitions < 1)
    throw std::invalid_argument("expected_leakage_curve: repetitions must be >= 1");
  Rng prior_rng = derive_rng(seed, "prior");
  const PriorEntropy prior = prior_entropy_bits(y, N, K, prior_rng, cap);
  std::vector<LeakagePoint> points;
  points.reserve(U_list.size());
  for (std::uint64_t U : U_list) {
    if (U == 0) throw std::invalid_argument("expected_leakage_curve: U must be positive");
    double mean = 0.0, m2 = 0.0;
    for (int rep = 0; rep < repetitions; ++rep) {
      Rng rng = derive_rng(seed, "leakage", U, static_cast<std::uint64_t>(rep));
      const ShuffleObservation obs = draw_observation(N, K, y, U, rng);
      const double leak = leakage_given_prior(prior.bits, obs);
      const double delta = leak - mean;
      mean += delta / static_cast<double>(rep + 1);
      m2 += delta * (leak - mean);
    }
    const double n = static_cast<double>(repetitions);
    const double stderr_bits = repetitions > 1 ? std::sqrt(m2 / n / n) : 0.0;
    points.push_back({U, mean, stderr_bits});
  }
  return points;
}

std::uint64_t input_information_bits(std::uint64_t K, std::uint64_t height,
                                     std::uint64_t width, std::uint64_t channels,
                                     std::uint64_t bits_per_pixel) {
  using u128 = unsigned __int128;
  const u128 total = static_cast<u128>(K) * height * width * channels * bits_per_pixel;
  if (total > static_cast<u128>(UINT64_MAX))
    throw numeric_error("input_information_bits: value exceeds 64 bits");
  return static_cast<std::uint64_t>(total);
}

}  // namespace fbftl
