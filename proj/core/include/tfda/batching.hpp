#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace tfda {

// Shuffled minibatch schedule over two index sets of possibly different
// sizes. The shorter set wraps around so every step sees a full batch from
// both sides.
class PairedBatches {
 public:
  PairedBatches(int64_t count_a, int64_t count_b, int64_t batch_size,
                std::mt19937_64& rng);

  int64_t steps() const { return steps_; }
  torch::Tensor indices_a(int64_t step) const { return slice(perm_a_, step); }
  torch::Tensor indices_b(int64_t step) const { return slice(perm_b_, step); }

 private:
  torch::Tensor slice(const std::vector<int64_t>& perm, int64_t step) const;

  int64_t batch_size_;
  int64_t steps_;
  std::vector<int64_t> perm_a_;
  std::vector<int64_t> perm_b_;
};

// Derives an independent 64-bit seed for a named phase of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Checks a loss value; throws Error(kDivergence) naming `term` when it is
// non-finite or its magnitude exceeds `limit`.
void check_finite(double value, const std::string& term, double limit = 1e6);

}  // namespace tfda
