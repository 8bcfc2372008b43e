#pragma once

#include <cstddef>
#include <cstdint>

#include "psgd/dataset.hpp"

namespace psgd {

struct SyntheticSpec {
    std::size_t samples = 256;
    std::size_t dimension = 10;
    double density = 1.0;      // probability that a feature is present
    double gap = 0.1;          // samples with |<u,x>| / ||u|| below this are redrawn
    double label_noise = 0.0;  // probability of flipping a label
    std::uint64_t seed = 1;
};

// Samples labeled by a random hidden hyperplane through the origin, so with
// label_noise == 0 the set is linearly separable.
Dataset make_synthetic(const SyntheticSpec& spec);

}  // namespace psgd
