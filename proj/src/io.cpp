#include "lnn/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

namespace lnn {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw InputError("CSV: bad number '" + s + "'");
  return v;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  out << "time,loss,unbalancedness,determinant,frob_norm,nuclear_norm";
  if (!trajectory.empty()) {
    const Matrix& W = trajectory.front().endToEnd;
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) out << ",w_" << i << "_" << j;
  }
  out << "\n";
  for (const auto& rec : trajectory) {
    out << format_double(rec.time) << ',' << format_double(rec.lossValue) << ','
        << format_double(rec.unbalancedness) << ','
        << (rec.determinant ? format_double(*rec.determinant) : std::string()) << ','
        << format_double(rec.frobeniusNorm) << ',' << format_double(rec.nuclearNorm);
    for (Eigen::Index i = 0; i < rec.endToEnd.rows(); ++i)
      for (Eigen::Index j = 0; j < rec.endToEnd.cols(); ++j)
        out << ',' << format_double(rec.endToEnd(i, j));
    out << "\n";
  }
}

Trajectory read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("CSV: missing header");
  const auto header = split(line);
  static const std::vector<std::string> fixed = {"time",      "loss",      "unbalancedness",
                                                 "determinant", "frob_norm", "nuclear_norm"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
    throw InputError("CSV: unexpected trajectory header");
  }
  int rows = 0;
  int cols = 0;
  for (std::size_t c = fixed.size(); c < header.size(); ++c) {
    int i = 0;
    int j = 0;
    if (std::sscanf(header[c].c_str(), "w_%d_%d", &i, &j) != 2) {
      throw InputError("CSV: bad column '" + header[c] + "'");
    }
    rows = std::max(rows, i + 1);
    cols = std::max(cols, j + 1);
  }
  if (static_cast<std::size_t>(rows * cols) + fixed.size() != header.size()) {
    throw InputError("CSV: matrix columns do not form a full grid");
  }
  Trajectory out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw InputError("CSV: row width mismatch");
    TrajectoryRecord rec;
    rec.time = parse_double(cells[0]);
    rec.lossValue = parse_double(cells[1]);
    rec.unbalancedness = parse_double(cells[2]);
    if (!cells[3].empty()) rec.determinant = parse_double(cells[3]);
    rec.frobeniusNorm = parse_double(cells[4]);
    rec.nuclearNorm = parse_double(cells[5]);
    rec.endToEnd.resize(rows, cols);
    std::size_t c = fixed.size();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) rec.endToEnd(i, j) = parse_double(cells[c++]);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_sigma_csv(std::ostream& out, const SvdTrajectory& svd) {
  out << "time";
  for (int r = 1; r <= svd.rank_slots(); ++r) out << ",sigma_" << r;
  out << "\n";
  for (std::size_t i = 0; i < svd.size(); ++i) {
    out << format_double(svd.times[i]);
    for (Eigen::Index r = 0; r < svd.sigma[i].size(); ++r) out << ',' << format_double(svd.sigma[i](r));
    out << "\n";
  }
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << contents;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace lnn
