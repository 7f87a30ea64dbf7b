#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace crowdroad::csv {

/// 17 significant digits, enough to round-trip any double.
std::string format(double v);

/// Writes one comma-separated row of already formatted fields.
void write_row(std::ostream& os, const std::vector<std::string>& fields);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;
};

/// Reads a numeric CSV with a header row; lines starting with '#' are skipped.
/// Throws InvalidArgument with the offending line number on malformed input.
Table read_numeric(std::istream& is);

/// Index of `name` in the header, or throws InvalidArgument.
std::size_t column_index(const Table& t, std::string_view name);

}  // namespace crowdroad::csv
