#pragma once

// Market and solution files. Both are YAML documents carrying
// `schema_version: 1`.
//
// Aggregate market:
//   schema_version: 1
//   kind: aggregate
//   x_types: [a, b]
//   y_types: [c]
//   n: [1.0, 2.0]
//   m: [1.5]
//   temperature: 1.0
//   balanced: false            # optional
//   transfers: {family: TU, params: {phi: 0.5}}
//
// `transfers` is either one spec shared by every pair or
// `{table: [[spec, ...], ...]}` with one row per x type. Individual markets
// use `kind: individual` with `men` and `women` instead of the type and
// mass fields.
//
// Parameters per family: TU phi; NTU alpha, gamma; LTU lambda, zeta and
// optional alpha, gamma; ETU tau and optional alpha, gamma.

#include <string>
#include <variant>

#include "itu/equilibrium.hpp"
#include "itu/ipfp.hpp"
#include "itu/system.hpp"

namespace itu {

using AnyMarket = std::variant<Market<double>, IndividualMarket>;

/// Parses a market document. Throws ParseError with the line and column of
/// the offending node, or DomainError for market invariant violations.
AnyMarket parse_market(const std::string& text);
AnyMarket load_market(const std::string& path);

std::string read_file(const std::string& path);

/// Writes through a temporary file in the same directory and renames it
/// into place.
void write_file_atomic(const std::string& path, const std::string& contents);

/// Shortest round-trip text for a double (17 significant digits at most);
/// infinities as .inf / -.inf.
std::string format_number(double x);

struct SolutionFile {
  std::vector<std::string> x_types;
  std::vector<std::string> y_types;
  double temperature = 0;
  Potentials<double> potentials;
  Matching<double> matching;
};

/// Solution document for an aggregate solve, including the report.
std::string format_solution(const Market<double>& market, const SolveResult<double>& result);
SolutionFile parse_solution(const std::string& text);

}  // namespace itu
