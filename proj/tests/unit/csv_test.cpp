#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "ahdml/csv.hpp"
#include "ahdml/error.hpp"
#include "ahdml/simgen.hpp"

namespace ahdml::csv {
namespace {

std::string error_of(const std::string& text) {
  std::istringstream in(text);
  try {
    read_dataset(in);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    return e.what();
  }
  return "";
}

TEST(Csv, ReadsDataset) {
  std::istringstream in("w_1,w_2,a,u,delta\n0.5,-1,1,3.25,1\n\n2,3,0,0,0\n");
  const auto d = read_dataset(in);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.dim(), 2u);
  EXPECT_EQ(d.w(0)[1], -1.0);
  EXPECT_EQ(d.a(0), 1);
  EXPECT_EQ(d.u(0), 3.25);
  EXPECT_EQ(d.delta(1), 0);
}

TEST(Csv, ErrorsCarryLineNumbers) {
  const std::string head = "w_1,a,u,delta\n";
  EXPECT_NE(error_of(head + "1,0,2,1\n1,2,2,1\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of(head + "1,0,2,1\n1,0,2,1\n1,0,-2,1\n").find("line 4"), std::string::npos);
  EXPECT_NE(error_of(head + ",0,2,1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of(head + "x,0,2,1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of(head + "1,0,2,3\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of(head + "1,0,inf,1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of(head + "1,0,2\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("x_1,a,u,delta\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("w_1,u,a,delta\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("").find("line 1"), std::string::npos);
}

TEST(Csv, RoundTripIsExact) {
  const auto data = sim::sample(sim::DgmSpec::named("cross-a"), 300, 6);
  std::stringstream ss;
  write_dataset(ss, data);
  const auto back = read_dataset(ss);
  ASSERT_EQ(back.size(), data.size());
  ASSERT_EQ(back.dim(), data.dim());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back.a(i), data.a(i));
    EXPECT_EQ(back.u(i), data.u(i));
    EXPECT_EQ(back.delta(i), data.delta(i));
    for (std::size_t j = 0; j < data.dim(); ++j) EXPECT_EQ(back.w(i)[j], data.w(i)[j]);
  }
}

TEST(Csv, FormatDouble) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(-2.0), "-2");
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
  for (double x : {1.0 / 3.0, 1e-300, 123456789.123456789, -7.5e-12}) {
    EXPECT_EQ(parse_double(format_double(x)), x);
  }
  EXPECT_TRUE(std::isnan(parse_double("nan")));
  EXPECT_THROW(parse_double("1.5x"), Error);
  EXPECT_THROW(parse_double(""), Error);
}

TEST(Csv, SplitLine) {
  const auto f = split_line(" a, b ,,c");
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0], "a");
  EXPECT_EQ(f[1], "b");
  EXPECT_EQ(f[2], "");
  EXPECT_EQ(f[3], "c");
}

}  // namespace
}  // namespace ahdml::csv
