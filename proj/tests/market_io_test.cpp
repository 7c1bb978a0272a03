#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>

#include "itu/market_io.hpp"

using namespace itu;

namespace {

const char* kMinimal = R"(schema_version: 1
kind: aggregate
x_types: [x]
y_types: [y]
n: [1.0]
m: [1.0]
temperature: 1.0
transfers: {family: TU, params: {phi: 0.0}}
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  return s.replace(at, from.size(), to);
}

template <typename E, typename Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const E& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected an exception";
  return {};
}

}  // namespace

TEST(ParseMarket, MinimalAggregate) {
  const auto any = parse_market(kMinimal);
  const auto& mk = std::get<Market<double>>(any);
  EXPECT_EQ(mk.num_x(), 1);
  EXPECT_EQ(mk.num_y(), 1);
  EXPECT_EQ(mk.spec(0, 0).family, Family::TU);
  EXPECT_EQ(mk.temperature(), 1.0);
  EXPECT_FALSE(mk.balanced());
}

TEST(ParseMarket, FamiliesAndOptionalShifts) {
  const std::string doc = replace(kMinimal, "{family: TU, params: {phi: 0.0}}",
                                  "{family: LTU, params: {lambda: 0.25, zeta: 0.75, alpha: 2}}");
  const auto any = parse_market(doc);
  const auto& mk = std::get<Market<double>>(any);
  EXPECT_EQ(mk.spec(0, 0).family, Family::LTU);
  EXPECT_EQ(mk.spec(0, 0).lambda, 0.25);
  EXPECT_EQ(mk.spec(0, 0).zeta, 0.75);
  EXPECT_EQ(mk.spec(0, 0).alpha, 2.0);
  EXPECT_EQ(mk.spec(0, 0).gamma, 0.0);

  const auto etu = replace(kMinimal, "{family: TU, params: {phi: 0.0}}",
                           "{family: ETU, params: {tau: 0.5}}");
  EXPECT_EQ(std::get<Market<double>>(parse_market(etu)).spec(0, 0).tau, 0.5);
}

TEST(ParseMarket, IndividualMarketTable) {
  const auto any = parse_market(R"(schema_version: 1
kind: individual
men: [a, b]
women: [c]
transfers:
  table:
    - [{family: NTU, params: {alpha: 1, gamma: 2}}]
    - [{family: TU, params: {phi: 3}}]
)");
  const auto& im = std::get<IndividualMarket>(any);
  EXPECT_EQ(im.num_men(), 2);
  EXPECT_EQ(im.num_women(), 1);
  EXPECT_EQ(im.spec(0, 0).family, Family::NTU);
  EXPECT_EQ(im.spec(0, 0).gamma, 2.0);
  EXPECT_EQ(im.spec(1, 0).phi, 3.0);
}

TEST(ParseMarket, BalancedSumsMismatchNamesTheSums) {
  std::string doc = replace(kMinimal, "m: [1.0]", "m: [2.5]");
  doc += "balanced: true\n";
  const auto msg = error_of<Error>([&] { parse_market(doc); });
  EXPECT_NE(msg.find("1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("2.5"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 9"), std::string::npos) << msg;
}

TEST(ParseMarket, MissingTableCellNamesThePair) {
  const auto doc = R"(schema_version: 1
kind: aggregate
x_types: [a, b]
y_types: [c, d]
n: [1, 1]
m: [1, 1]
temperature: 1
transfers:
  table:
    - [{family: TU, params: {phi: 1}}, {family: TU, params: {phi: 1}}]
    - [{family: TU, params: {phi: 1}}]
)";
  const auto msg = error_of<ParseError>([&] { parse_market(doc); });
  EXPECT_NE(msg.find("(b, d)"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 11"), std::string::npos) << msg;
}

TEST(ParseMarket, ErrorsCarryLineAndColumn) {
  const auto doc = replace(kMinimal, "temperature: 1.0", "temperature: hot");
  try {
    parse_market(doc);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 7);
    EXPECT_EQ(e.column(), 14);
  }
}

TEST(ParseMarket, RejectsUnknownVersionFamilyAndKeys) {
  EXPECT_THROW(parse_market(replace(kMinimal, "schema_version: 1", "schema_version: 2")),
               ParseError);
  EXPECT_THROW(parse_market(replace(kMinimal, "family: TU", "family: XTU")), Error);
  EXPECT_THROW(parse_market(std::string(kMinimal) + "colour: red\n"), ParseError);
  EXPECT_THROW(parse_market(replace(kMinimal, "{phi: 0.0}", "{}")), ParseError);
  EXPECT_THROW(parse_market("schema_version: 1\nx_types: [a\n"), ParseError);
}

TEST(ParseMarket, RejectsInvariantViolations) {
  EXPECT_THROW(parse_market(replace(kMinimal, "n: [1.0]", "n: [-1.0]")), Error);
  EXPECT_THROW(parse_market(replace(kMinimal, "temperature: 1.0", "temperature: 0")), Error);
  EXPECT_THROW(parse_market(replace(kMinimal, "{phi: 0.0}", "{phi: .inf}")), Error);
}

TEST(LoadMarket, PrefixesPathAndReportsMissingFile) {
  EXPECT_THROW(load_market("/nonexistent/market.yaml"), PreconditionError);
  const auto any = load_market(std::string(ITU_SAMPLES_DIR) + "/tu_1x1.yaml");
  EXPECT_TRUE(std::holds_alternative<Market<double>>(any));
}

TEST(LoadMarket, EverySampleParses) {
  for (const auto& entry : std::filesystem::directory_iterator(ITU_SAMPLES_DIR))
    if (entry.path().extension() == ".yaml") EXPECT_NO_THROW(load_market(entry.path().string()))
          << entry.path();
}

TEST(FormatNumber, RoundTripsExactly) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-50, 50);
  for (int k = 0; k < 2000; ++k) {
    const double x = std::exp(d(rng)) * (k % 2 ? 1 : -1);
    EXPECT_EQ(std::strtod(format_number(x).c_str(), nullptr), x);
  }
  EXPECT_EQ(format_number(std::numeric_limits<double>::infinity()), ".inf");
  EXPECT_EQ(format_number(-std::numeric_limits<double>::infinity()), "-.inf");
  EXPECT_EQ(format_number(0.5), "0.5");
}

TEST(SolutionFile, RoundTripsBitForBit) {
  const auto any = load_market(std::string(ITU_SAMPLES_DIR) + "/etu_aggregate.yaml");
  const auto& mk = std::get<Market<double>>(any);
  const auto result = ipfp_solve(mk, SolverConfig<double>{});
  const auto sol = parse_solution(format_solution(mk, result));
  EXPECT_EQ(sol.x_types, mk.x_types());
  EXPECT_EQ(sol.y_types, mk.y_types());
  EXPECT_EQ(sol.temperature, mk.temperature());
  EXPECT_EQ(sol.potentials.u, result.potentials.u);
  EXPECT_EQ(sol.potentials.v, result.potentials.v);
  EXPECT_EQ(sol.matching.mu, result.matching.mu);
  EXPECT_EQ(sol.matching.mu_x0, result.matching.mu_x0);
  EXPECT_EQ(sol.matching.mu_0y, result.matching.mu_0y);
}

TEST(SolutionFile, RejectsWrongKind) {
  EXPECT_THROW(parse_solution(kMinimal), ParseError);
}

TEST(WriteFileAtomic, ReplacesContentsAndLeavesNoTemporary) {
  const auto dir = std::filesystem::temp_directory_path() / "itu_market_io_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto path = (dir / "out.txt").string();
  write_file_atomic(path, "first\n");
  write_file_atomic(path, "second\n");
  EXPECT_EQ(read_file(path), "second\n");
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 1);
  EXPECT_THROW(write_file_atomic((dir / "missing" / "x.txt").string(), "x"), PreconditionError);
  std::filesystem::remove_all(dir);
}
