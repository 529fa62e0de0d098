#include "lnn/losses.hpp"

#include <json.hpp>

namespace lnn {

using nlohmann::json;

std::string SensingTask::to_json() const {
  json out;
  out["d0"] = d0_;
  out["dn"] = dn_;
  out["measurements"] = json::array();
  for (const auto& m : measurements_) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.A.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.A.cols(); ++c) row.push_back(m.A(r, c));
      rows.push_back(std::move(row));
    }
    out["measurements"].push_back({{"A", std::move(rows)}, {"b", m.b}});
  }
  return out.dump(2);
}

SensingTask SensingTask::from_json(const std::string& text) {
  json in;
  try {
    in = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("SensingTask JSON: ") + e.what());
  }
  try {
    const int d0 = in.at("d0").get<int>();
    const int dn = in.at("dn").get<int>();
    std::vector<Measurement> measurements;
    for (const auto& m : in.at("measurements")) {
      const auto& rows = m.at("A");
      if (static_cast<int>(rows.size()) != dn) {
        throw ShapeError("SensingTask JSON: A has " + std::to_string(rows.size()) + " rows, expected " +
                         std::to_string(dn));
      }
      Matrix A(dn, d0);
      for (int r = 0; r < dn; ++r) {
        if (static_cast<int>(rows[r].size()) != d0) {
          throw ShapeError("SensingTask JSON: A row has " + std::to_string(rows[r].size()) +
                           " entries, expected " + std::to_string(d0));
        }
        for (int c = 0; c < d0; ++c) A(r, c) = rows[r][c].get<double>();
      }
      measurements.push_back({std::move(A), m.at("b").get<double>()});
    }
    return SensingTask(d0, dn, std::move(measurements));
  } catch (const json::exception& e) {
    throw InputError(std::string("SensingTask JSON: ") + e.what());
  }
}

}  // namespace lnn
