#include "ceb/joint_io.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <vector>

namespace ceb {

DiscreteJoint<double> read_joint_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ValidationError("joint csv: cannot parse cell '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ValidationError("joint csv: ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("joint csv: no rows");
  Mat<double> table(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) table(r, c) = rows[r][c];
  return DiscreteJoint<double>(std::move(table));
}

DiscreteJoint<double> read_joint_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open joint file " + path);
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json")
    return joint_from_json(nlohmann::json::parse(in));
  return read_joint_csv(in);
}

void write_joint_csv(std::ostream& out, const DiscreteJoint<double>& j) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index x = 0; x < j.rows(); ++x) {
    for (Eigen::Index y = 0; y < j.cols(); ++y) out << (y ? "," : "") << j.table()(x, y);
    out << '\n';
  }
}

nlohmann::json joint_to_json(const DiscreteJoint<double>& j) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index x = 0; x < j.rows(); ++x) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index y = 0; y < j.cols(); ++y) row.push_back(j.table()(x, y));
    rows.push_back(std::move(row));
  }
  return {{"table", rows}};
}

DiscreteJoint<double> joint_from_json(const nlohmann::json& doc) {
  if (!doc.contains("table") || !doc["table"].is_array() || doc["table"].empty())
    throw ValidationError("joint json: missing 'table' array");
  const auto& rows = doc["table"];
  const std::size_t cols = rows[0].size();
  Mat<double> table(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_array() || rows[r].size() != cols) throw ValidationError("joint json: ragged rows");
    for (std::size_t c = 0; c < cols; ++c) table(r, c) = rows[r][c].get<double>();
  }
  return DiscreteJoint<double>(std::move(table));
}

DiscreteJoint<double> deterministic_joint(int classes, int per_class) {
  if (classes < 1 || per_class < 1) throw ValidationError("deterministic_joint: sizes must be >= 1");
  Mat<double> table = Mat<double>::Zero(classes * per_class, classes);
  for (int x = 0; x < classes * per_class; ++x) table(x, x / per_class) = 1.0 / (classes * per_class);
  return DiscreteJoint<double>(std::move(table));
}

}  // namespace ceb
