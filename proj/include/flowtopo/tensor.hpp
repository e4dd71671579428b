#pragma once

#include <Eigen/Core>
#include <cmath>
#include <numbers>

namespace flowtopo {

// Batches are row-major in the logical sense: one sample per row.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Index = Eigen::Index;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

bool all_finite(const Mat& m);

/// Row-wise log-sum-exp with max shifting; returns a column.
Vec logsumexp_rows(const Mat& m);

}  // namespace flowtopo
