#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "fbftl/errors.hpp"
#include "fbftl/rng.hpp"

namespace fbftl {

// Count per label of one uploaded batch; order inside the batch carries no
// information, so this is all an observer sees. Sum of entries = K.
using BatchType = std::vector<int>;

// Label marginal. Entries non-negative, sum 1 within 1e-9.
void validate_label_distribution(const std::vector<double>& y);
std::vector<double> uniform_labels(int N);

// C(N+K-1, K); throws numeric_error past 64 bits.
std::uint64_t batch_type_count(int N, int K);

inline constexpr std::uint64_t kDefaultEnumerateCap = 10'000'000;

// All compositions of K into N non-negative parts, first coordinate
// descending: N=2, K=2 gives (2,0), (1,1), (0,2).
std::vector<BatchType> enumerate_batch_types(int N, int K,
                                             std::uint64_t cap = kDefaultEnumerateCap);

// Same order as enumerate_batch_types without materializing the list.
void for_each_batch_type(int N, int K, const std::function<void(const BatchType&)>& fn,
                         std::uint64_t cap = kDefaultEnumerateCap);

// Multinomial probability of observing type b when each of the K labels in a
// batch is drawn i.i.d. from y: K!/(prod n_a!) * prod y_a^{n_a}.
double batch_type_prob(const BatchType& b, const std::vector<double>& y);

struct BatchDistribution {
  std::map<BatchType, double> p;
};

// -sum p log2 p with 0 log 0 = 0.
double entropy_bits(const BatchDistribution& dist);

struct ShuffleObservation {
  std::map<BatchType, std::uint64_t> counts;
  std::uint64_t total = 0;
};

// Frequencies s(b)/U. Rejects an empty observation.
BatchDistribution empirical_distribution(const ShuffleObservation& obs);

struct PriorEntropy {
  double bits = 0.0;
  double stderr_bits = 0.0;  // zero when exact
  bool exact = true;
};

// Entropy of the type distribution induced by y. Exact enumeration while the
// type count fits under cap, Monte Carlo (mc_samples draws through rng)
// beyond it.
PriorEntropy prior_entropy_bits(const std::vector<double>& y, int N, int K, Rng& rng,
                                std::uint64_t cap = kDefaultEnumerateCap,
                                std::uint64_t mc_samples = 200'000);

// Exact-only variant; throws config_error when the type count exceeds cap.
double exact_prior_entropy_bits(const std::vector<double>& y, int N, int K,
                                std::uint64_t cap = kDefaultEnumerateCap);

// Prior entropy minus the entropy of the empirical type frequencies. May be
// negative for a single unlucky draw; reported as-is.
double leakage_bits(const std::vector<double>& y, const ShuffleObservation& obs, int N, int K,
                    std::uint64_t cap = kDefaultEnumerateCap);
double leakage_given_prior(double prior_bits, const ShuffleObservation& obs);

BatchType draw_batch_type(int N, int K, const std::vector<double>& y, Rng& rng);
ShuffleObservation draw_observation(int N, int K, const std::vector<double>& y,
                                    std::uint64_t U, Rng& rng);

// Brute force over every assignment of U ordered batches under uniform
// labels: the posterior P(B_u = b | S = s) must equal s(b)/U for every
// reachable observation s and every type b with s(b) >= 1. Exact integer
// counting throughout. Guarded by total assignment count <= 10^7.
bool posterior_identity_check(int N, int K, int U);

struct LeakagePoint {
  std::uint64_t clients = 0;
  double mean_bits = 0.0;
  double stderr_bits = 0.0;
};

// For each U: repetitions independent observations of U batches, leakage of
// each, mean and standard error. Streams derive from (seed, U, repetition),
// so points are reproducible independently of evaluation order.
std::vector<LeakagePoint> expected_leakage_curve(int N, int K, const std::vector<double>& y,
                                                 const std::vector<std::uint64_t>& U_list,
                                                 int repetitions, std::uint64_t seed,
                                                 std::uint64_t cap = kDefaultEnumerateCap);

// Raw size of a batch of images, for leakage-vs-input-size comparisons.
std::uint64_t input_information_bits(std::uint64_t K, std::uint64_t height,
                                     std::uint64_t width, std::uint64_t channels,
                                     std::uint64_t bits_per_pixel);

}  // namespace fbftl
