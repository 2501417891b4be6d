#include "ahdml/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "ahdml/error.hpp"

namespace ahdml::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void fail_at(std::size_t line, const std::string& what) {
  throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  text = trim(text);
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error(ErrorKind::parse, "not a number: '" + std::string(text) + "'");
  }
  return value;
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw Error(ErrorKind::parse, "line 1: missing header");
  ++lineno;
  const auto header = split_line(line);
  if (header.size() < 3) fail_at(lineno, "header needs columns a, u, delta");
  const std::size_t d = header.size() - 3;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "w_" + std::to_string(j + 1)) {
      fail_at(lineno, "expected column 'w_" + std::to_string(j + 1) + "', found '" + header[j] + "'");
    }
  }
  if (header[d] != "a" || header[d + 1] != "u" || header[d + 2] != "delta") {
    fail_at(lineno, "last three columns must be a, u, delta");
  }

  Dataset data(d);
  std::vector<double> w(d);
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_line(line);
    if (fields.size() != header.size()) {
      fail_at(lineno, "expected " + std::to_string(header.size()) + " fields, found " +
                          std::to_string(fields.size()));
    }
    auto number = [&](std::size_t j) {
      if (fields[j].empty()) fail_at(lineno, "missing value in column '" + header[j] + "'");
      try {
        return parse_double(fields[j]);
      } catch (const Error& e) {
        fail_at(lineno, std::string(e.what()) + " in column '" + header[j] + "'");
      }
    };
    for (std::size_t j = 0; j < d; ++j) {
      w[j] = number(j);
      if (!std::isfinite(w[j])) fail_at(lineno, "non-finite covariate");
    }
    const double a = number(d), u = number(d + 1), delta = number(d + 2);
    if (a != 0.0 && a != 1.0) fail_at(lineno, "a must be 0 or 1");
    if (delta != 0.0 && delta != 1.0) fail_at(lineno, "delta must be 0 or 1");
    if (!std::isfinite(u) || u < 0.0) fail_at(lineno, "u must be finite and >= 0");
    data.add(w, static_cast<int>(a), u, static_cast<int>(delta));
  }
  return data;
}

Dataset read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::parse, "cannot open '" + path + "'");
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const Dataset& data) {
  for (std::size_t j = 0; j < data.dim(); ++j) out << "w_" << j + 1 << ',';
  out << "a,u,delta\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.w(i)) out << format_double(v) << ',';
    out << data.a(i) << ',' << format_double(data.u(i)) << ',' << data.delta(i) << '\n';
  }
}

}  // namespace ahdml::csv
