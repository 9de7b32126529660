// Copyright 2026 The epop Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EPOP_RANDOM_HPP
#define EPOP_RANDOM_HPP

#include <cstdint>
#include <random>

namespace epop {

using Rng = std::mt19937_64;

/// Generator for an independent substream identified by (seed, stream, index).
/**
 * Every case-level computation draws from its own substream so results do not
 * depend on the order or the thread in which cases are processed.
 */
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32U),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32U),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32U)};
  return Rng{seq};
}

/// Uniform draw on [lo, hi]; returns lo exactly when the interval is a point.
inline double uniform_in(Rng& rng, double lo, double hi) {
  const double u = std::generate_canonical<double, 64>(rng);
  return lo + (hi - lo) * u;
}

}  // namespace epop

#endif  // EPOP_RANDOM_HPP
