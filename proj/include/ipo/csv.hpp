#pragma once

#include <string>
#include <vector>

#include "ipo/common.hpp"

namespace ipo {

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  Index column_index(const std::string& name) const;
  double number(std::size_t row, Index col) const;
};

/// Reads a comma-separated file with a header row. No quoting support; cells
/// must not contain commas. Throws IngestError on shape errors.
CsvTable read_csv(const std::string& path);

void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const std::vector<std::vector<std::string>>& rows);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace ipo
