#pragma once

#include <cstddef>

#include "dsa/cloud.hpp"
#include "dsa/matrix.hpp"
#include "dsa/rng.hpp"

namespace dsa::testing {

inline DenseMatrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols,
                                 double scale = 1.0) {
    DenseMatrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    return m;
}

inline ParticleCloud random_cloud(SeededRng& rng, std::size_t n, std::size_t d,
                                  double scale = 1.0) {
    return ParticleCloud(random_matrix(rng, n, d, scale));
}

} // namespace dsa::testing
