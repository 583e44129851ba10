#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace scrip::csv {

/// Decimal-point rendering with 12 significant digits.
std::string number(double value);

inline std::string number(std::int64_t value) { return std::to_string(value); }
inline std::string number(int value) { return std::to_string(value); }

/// Writes one comma-separated line. Fields are emitted verbatim.
void write_row(std::ostream& os, const std::vector<std::string>& fields);

/// Joins integers with ';' so a list fits in one CSV cell.
std::string join(const std::vector<int>& values);
std::string join(const std::vector<double>& values);

}  // namespace scrip::csv
