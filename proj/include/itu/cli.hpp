#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "itu/types.hpp"

namespace itu {

enum class Command { Solve, Anneal, OracleCompare, Validate };
enum class OutputFormat { StructuredText, Csv };

struct RunConfig {
  Command command = Command::Solve;
  std::string input_path;
  std::string solution_path;  // validate only
  std::string output_path;    // empty: standard output

  std::optional<double> tol;
  std::optional<long> max_iter;
  std::optional<double> temperature;
  std::optional<double> t_initial;
  std::optional<double> ratio;
  std::optional<int> steps;
  OutputFormat format = OutputFormat::StructuredText;
  std::uint64_t seed = 1;
  long agents_per_type = 10000;  // Monte-Carlo column of oracle-compare
  Index gauge_anchor = 0;
  int threads = 1;

  /// Throws DomainError for out-of-range overrides.
  void validate() const;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int input_error = 1;
inline constexpr int not_converged = 2;
}  // namespace exit_code

/// Runs one command. Results go to config.output_path (or `out`),
/// diagnostics to `err`. Returns 0 on success, 2 on non-convergence or a
/// failed verification, 1 on input errors.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace itu
