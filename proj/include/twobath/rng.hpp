// Copyright 2026 The twobath Authors
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

#pragma once

// Random streams.
//
// Every trajectory owns one std::mt19937_64 seeded with
//     trajectory_seed(master_seed, trajectory_index)
// which is two rounds of SplitMix64 over the pair. The engine's output
// sequence is fixed by the C++ standard, and uniforms are formed from the top
// 53 bits directly rather than through std::uniform_real_distribution (whose
// algorithm is implementation defined), so results replay bit-for-bit on any
// conforming platform.

#include <cstdint>
#include <random>

namespace twobath {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t trajectory_seed(std::uint64_t master_seed, std::uint64_t trajectory_index) {
    return splitmix64(splitmix64(master_seed) ^ splitmix64(~trajectory_index));
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    std::uint64_t next_u64() { return engine_(); }

  private:
    std::mt19937_64 engine_;
};

}  // namespace twobath
