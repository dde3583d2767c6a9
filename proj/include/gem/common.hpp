#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>

namespace gem {

template <class Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

using Rng = std::mt19937_64;

}  // namespace gem
