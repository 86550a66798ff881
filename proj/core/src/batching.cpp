#include "tfda/batching.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "tfda/error.hpp"

namespace tfda {

PairedBatches::PairedBatches(int64_t count_a, int64_t count_b,
                             int64_t batch_size, std::mt19937_64& rng)
    : batch_size_(std::max<int64_t>(1, batch_size)) {
  auto shuffled = [&](int64_t n) {
    std::vector<int64_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
  };
  perm_a_ = shuffled(count_a);
  perm_b_ = shuffled(count_b);
  const int64_t longest = std::max(count_a, count_b);
  steps_ = (longest + batch_size_ - 1) / batch_size_;
}

torch::Tensor PairedBatches::slice(const std::vector<int64_t>& perm,
                                   int64_t step) const {
  std::vector<int64_t> out(batch_size_);
  const auto n = static_cast<int64_t>(perm.size());
  for (int64_t i = 0; i < batch_size_; ++i) {
    out[i] = perm[(step * batch_size_ + i) % n];
  }
  return torch::tensor(out, torch::kInt64);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void check_finite(double value, const std::string& term, double limit) {
  if (!std::isfinite(value) || std::abs(value) > limit) {
    fail(ErrorCode::kDivergence,
         "loss term '" + term + "' diverged (value " + std::to_string(value) + ")");
  }
}

}  // namespace tfda
