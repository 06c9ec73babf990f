// Copyright 2026 The CPR Sandbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CPR_RNG_H_
#define CPR_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace cpr {

// Mixes a parent seed with a stream label. Used to carve independent,
// reproducible substreams (corpus/train/eval, per-seat, per-episode) out of
// one root seed.
uint64_t derive_seed(uint64_t seed, std::string_view label);
uint64_t derive_seed(uint64_t seed, uint64_t index);

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  uint64_t seed() const { return seed_; }

  // Uniform on [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
  }
  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return std::uniform_int_distribution<int>(0, n - 1)(engine_);
  }
  double normal(double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(engine_);
  }
  double exponential() { return std::exponential_distribution<double>(1.0)(engine_); }
  double gamma(double shape) {
    return std::gamma_distribution<double>(shape, 1.0)(engine_);
  }
  uint64_t next_u64() { return engine_(); }

  Rng substream(std::string_view label) const { return Rng(derive_seed(seed_, label)); }
  Rng substream(uint64_t index) const { return Rng(derive_seed(seed_, index)); }

  std::mt19937_64& engine() { return engine_; }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace cpr

#endif  // CPR_RNG_H_
