#pragma once

#include "lnn/analysis.hpp"
#include "lnn/dynamics.hpp"

#include <iosfwd>
#include <string>

namespace lnn {

/// Decimal with 17 significant digits ("%.17g"); round-trips every double.
std::string format_double(double x);

/// Header `time,loss,unbalancedness,determinant,frob_norm,nuclear_norm`
/// followed by `w_i_j` columns (row-major). The determinant cell is empty for
/// non-square matrices.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);
Trajectory read_trajectory_csv(std::istream& in);

/// Header `time,sigma_1,...,sigma_k`.
void write_sigma_csv(std::ostream& out, const SvdTrajectory& svd);

void write_file(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace lnn
