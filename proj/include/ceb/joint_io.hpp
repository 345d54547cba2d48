#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "ceb/info.hpp"

namespace ceb {

/// CSV: one line per x, one comma-separated column per y. Blank lines and
/// lines starting with '#' are skipped.
DiscreteJoint<double> read_joint_csv(std::istream& in);
DiscreteJoint<double> read_joint_csv_file(const std::string& path);
void write_joint_csv(std::ostream& out, const DiscreteJoint<double>& j);

/// JSON: {"table": [[...], ...]} with the same row/column convention.
nlohmann::json joint_to_json(const DiscreteJoint<double>& j);
DiscreteJoint<double> joint_from_json(const nlohmann::json& doc);

/// Uniform joint where each y owns `per_class` consecutive x values.
DiscreteJoint<double> deterministic_joint(int classes, int per_class);

}  // namespace ceb
