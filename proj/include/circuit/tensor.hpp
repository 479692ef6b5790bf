#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace circuit {

// Row-major so that rows map onto token positions and archive payloads copy
// without transposition.
using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic>;
using TokenMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace circuit
