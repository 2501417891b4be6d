#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ahdml/dataset.hpp"

namespace ahdml::csv {

// Dataset schema: header `w_1,...,w_d,a,u,delta`, one unit per line. Empty
// fields, non-numeric values, a outside {0,1}, delta outside {0,1} and
// negative or non-finite u are rejected with the offending line number.
Dataset read_dataset(std::istream& in);
Dataset read_dataset_file(const std::string& path);
void write_dataset(std::ostream& out, const Dataset& data);

// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite.
std::string format_double(double x);
double parse_double(std::string_view text);

std::vector<std::string> split_line(std::string_view line);

}  // namespace ahdml::csv
