#include "itu/market_io.hpp"

#include <yaml-cpp/yaml.h>

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

namespace itu {

namespace {

[[noreturn]] void fail(const YAML::Node& at, const std::string& what) {
  const auto mark = at.Mark();
  if (mark.is_null()) throw ParseError(what);
  throw ParseError(what, mark.line + 1, mark.column + 1);
}

void reject_unknown_keys(const YAML::Node& map, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) fail(kv.first, "unknown field '" + key + "' in " + where);
  }
}

YAML::Node field(const YAML::Node& map, const std::string& key, const std::string& where) {
  const YAML::Node node = map[key];
  if (!node) fail(map, "missing field '" + key + "' in " + where);
  return node;
}

double number(const YAML::Node& node, const std::string& name) {
  if (!node.IsScalar()) fail(node, "'" + name + "' must be a number");
  try {
    return node.as<double>();
  } catch (const YAML::Exception&) {
    fail(node, "'" + name + "' must be a number, got '" + node.Scalar() + "'");
  }
}

std::vector<std::string> labels(const YAML::Node& node, const std::string& name) {
  if (!node.IsSequence() || node.size() == 0) fail(node, "'" + name + "' must be a non-empty list");
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& item : node) {
    if (!item.IsScalar()) fail(item, "entries of '" + name + "' must be strings");
    const auto label = item.Scalar();
    if (!seen.insert(label).second) fail(item, "duplicate label '" + label + "' in " + name);
    out.push_back(label);
  }
  return out;
}

VectorXd numbers(const YAML::Node& node, const std::string& name, std::size_t expected) {
  if (!node.IsSequence()) fail(node, "'" + name + "' must be a list of numbers");
  if (node.size() != expected) {
    std::ostringstream os;
    os << "'" << name << "' has " << node.size() << " entries, expected " << expected;
    fail(node, os.str());
  }
  VectorXd out(static_cast<Index>(expected));
  for (std::size_t k = 0; k < expected; ++k)
    out[static_cast<Index>(k)] = number(node[k], name + "[" + std::to_string(k) + "]");
  return out;
}

void check_schema(const YAML::Node& doc) {
  if (!doc.IsMap()) fail(doc, "document must be a mapping");
  const auto version = field(doc, "schema_version", "document");
  if (!version.IsScalar() || version.Scalar() != "1")
    fail(version, "unsupported schema_version '" + (version.IsScalar() ? version.Scalar() : "?") +
                      "' (supported: 1)");
}

TransferSpec<double> parse_spec(const YAML::Node& node, const std::string& where) {
  if (!node.IsMap()) fail(node, "transfer spec for " + where + " must be a mapping");
  reject_unknown_keys(node, {"family", "params"}, "transfer spec for " + where);
  const auto fam_node = field(node, "family", "transfer spec for " + where);
  const auto family = family_from_name(fam_node.IsScalar() ? fam_node.Scalar() : "");
  if (!family)
    fail(fam_node, "unknown transfer family '" + (fam_node.IsScalar() ? fam_node.Scalar() : "?") +
                       "' (expected TU, NTU, LTU or ETU)");

  const YAML::Node params = node["params"] ? node["params"] : YAML::Node(YAML::NodeType::Map);
  if (!params.IsMap()) fail(params, "params for " + where + " must be a mapping");
  std::map<std::string, std::pair<bool, double>> wanted;  // name -> (required, default)
  switch (*family) {
    case Family::TU: wanted = {{"phi", {true, 0}}}; break;
    case Family::NTU: wanted = {{"alpha", {true, 0}}, {"gamma", {true, 0}}}; break;
    case Family::LTU:
      wanted = {{"lambda", {true, 0}}, {"zeta", {true, 0}}, {"alpha", {false, 0}},
                {"gamma", {false, 0}}};
      break;
    case Family::ETU:
      wanted = {{"tau", {true, 0}}, {"alpha", {false, 0}}, {"gamma", {false, 0}}};
      break;
    case Family::Custom: break;
  }
  std::set<std::string> allowed;
  for (const auto& [name, _] : wanted) allowed.insert(name);
  const std::string fam(family_name(*family));
  reject_unknown_keys(params, allowed, fam + " params for " + where);
  std::map<std::string, double> value;
  for (const auto& [name, rule] : wanted) {
    if (params[name]) {
      value[name] = number(params[name], name);
    } else if (rule.first) {
      fail(node, "missing " + fam + " parameter '" + name + "' for " + where);
    } else {
      value[name] = rule.second;
    }
  }

  TransferSpec<double> spec;
  switch (*family) {
    case Family::TU: spec = TransferSpec<double>::tu(value["phi"]); break;
    case Family::NTU: spec = TransferSpec<double>::ntu(value["alpha"], value["gamma"]); break;
    case Family::LTU:
      spec = TransferSpec<double>::ltu(value["lambda"], value["zeta"], value["alpha"],
                                       value["gamma"]);
      break;
    case Family::ETU:
      spec = TransferSpec<double>::etu(value["tau"], value["alpha"], value["gamma"]);
      break;
    case Family::Custom: break;
  }
  try {
    validate(spec);
  } catch (const Error& e) {
    fail(params, std::string(e.what()) + " (" + where + ")");
  }
  return spec;
}

std::vector<TransferSpec<double>> parse_transfers(const YAML::Node& node,
                                                  const std::vector<std::string>& rows,
                                                  const std::vector<std::string>& cols) {
  if (!node.IsMap()) fail(node, "'transfers' must be a mapping");
  if (!node["table"]) return {parse_spec(node, "all pairs")};
  reject_unknown_keys(node, {"table"}, "transfers");
  const auto table = node["table"];
  if (!table.IsSequence()) fail(table, "'transfers.table' must be a list of rows");
  if (table.size() > rows.size()) fail(table, "transfer table has more rows than x types");
  std::vector<TransferSpec<double>> out;
  for (std::size_t x = 0; x < rows.size(); ++x) {
    if (x >= table.size())
      fail(table, "transfer table is missing cell (" + rows[x] + ", " + cols[0] + ")");
    const auto row = table[x];
    if (!row.IsSequence()) fail(row, "transfer table row for " + rows[x] + " must be a list");
    if (row.size() > cols.size()) fail(row, "transfer table row for " + rows[x] + " is too long");
    for (std::size_t y = 0; y < cols.size(); ++y) {
      const std::string cell = "(" + rows[x] + ", " + cols[y] + ")";
      if (y >= row.size()) fail(row, "transfer table is missing cell " + cell);
      out.push_back(parse_spec(row[y], "pair " + cell));
    }
  }
  return out;
}

AnyMarket parse_aggregate(const YAML::Node& doc) {
  reject_unknown_keys(doc,
                      {"schema_version", "kind", "x_types", "y_types", "n", "m", "temperature",
                       "balanced", "transfers"},
                      "aggregate market");
  const auto xs = labels(field(doc, "x_types", "aggregate market"), "x_types");
  const auto ys = labels(field(doc, "y_types", "aggregate market"), "y_types");
  const auto n_node = field(doc, "n", "aggregate market");
  const auto m_node = field(doc, "m", "aggregate market");
  const VectorXd n = numbers(n_node, "n", xs.size());
  const VectorXd m = numbers(m_node, "m", ys.size());
  for (std::size_t k = 0; k < xs.size(); ++k)
    if (!(n[static_cast<Index>(k)] > 0) || !std::isfinite(n[static_cast<Index>(k)]))
      fail(n_node[k], "n[" + xs[k] + "] must be positive");
  for (std::size_t k = 0; k < ys.size(); ++k)
    if (!(m[static_cast<Index>(k)] > 0) || !std::isfinite(m[static_cast<Index>(k)]))
      fail(m_node[k], "m[" + ys[k] + "] must be positive");
  const auto t_node = field(doc, "temperature", "aggregate market");
  const double T = number(t_node, "temperature");
  if (!(T > 0) || !std::isfinite(T)) fail(t_node, "temperature must be positive and finite");
  bool balanced = false;
  if (const auto b = doc["balanced"]) {
    try {
      balanced = b.as<bool>();
    } catch (const YAML::Exception&) {
      fail(b, "'balanced' must be true or false");
    }
  }
  const auto transfers = parse_transfers(field(doc, "transfers", "aggregate market"), xs, ys);
  try {
    return Market<double>(xs, ys, n, m, transfers, T, balanced);
  } catch (const DomainError& e) {
    fail(balanced ? doc["balanced"] : doc, e.what());
  }
}

AnyMarket parse_individual(const YAML::Node& doc) {
  reject_unknown_keys(doc, {"schema_version", "kind", "men", "women", "transfers"},
                      "individual market");
  const auto men = labels(field(doc, "men", "individual market"), "men");
  const auto women = labels(field(doc, "women", "individual market"), "women");
  const auto transfers = parse_transfers(field(doc, "transfers", "individual market"), men, women);
  return IndividualMarket(men, women, transfers);
}

YAML::Node load_yaml(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(e.msg, e.mark.line + 1, e.mark.column + 1);
  }
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string list(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t k = 0; k < items.size(); ++k) out += (k ? ", " : "") + quote(items[k]);
  return out + "]";
}

template <typename Vec>
std::string list(const Vec& v) {
  std::string out = "[";
  for (Index k = 0; k < v.size(); ++k) out += (k ? ", " : "") + format_number(v[k]);
  return out + "]";
}

}  // namespace

std::string format_number(double x) {
  if (std::isnan(x)) return ".nan";
  if (std::isinf(x)) return x > 0 ? ".inf" : "-.inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

AnyMarket parse_market(const std::string& text) {
  const YAML::Node doc = load_yaml(text);
  check_schema(doc);
  const auto kind = doc["kind"];
  const std::string k = kind ? (kind.IsScalar() ? kind.Scalar() : "?") : "aggregate";
  if (k == "aggregate") return parse_aggregate(doc);
  if (k == "individual") return parse_individual(doc);
  fail(kind, "unknown market kind '" + k + "' (expected aggregate or individual)");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open '" + path + "': " + std::strerror(errno));
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

AnyMarket load_market(const std::string& path) {
  const auto text = read_file(path);
  try {
    return parse_market(text);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write '" + tmp + "': " + std::strerror(errno));
    out << contents;
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw PreconditionError("failed writing '" + tmp + "'");
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    const std::string reason = std::strerror(errno);
    std::remove(tmp.c_str());
    throw PreconditionError("cannot move output into '" + path + "': " + reason);
  }
}

std::string format_solution(const Market<double>& market, const SolveResult<double>& result) {
  std::ostringstream os;
  const auto& p = result.potentials;
  const auto& mt = result.matching;
  os << "schema_version: 1\n"
     << "kind: solution\n"
     << "x_types: " << list(market.x_types()) << "\n"
     << "y_types: " << list(market.y_types()) << "\n"
     << "temperature: " << format_number(market.temperature()) << "\n"
     << "balanced: " << (market.balanced() ? "true" : "false") << "\n"
     << "u: " << list(p.u) << "\n"
     << "v: " << list(p.v) << "\n"
     << "mu:\n";
  for (Index x = 0; x < mt.mu.rows(); ++x) os << "  - " << list(VectorXd(mt.mu.row(x))) << "\n";
  os << "mu_x0: " << list(mt.mu_x0) << "\n"
     << "mu_0y: " << list(mt.mu_0y) << "\n"
     << "report:\n"
     << "  converged: " << (result.report.converged ? "true" : "false") << "\n"
     << "  iterations: " << result.report.iterations << "\n"
     << "  final_residual: " << format_number(result.report.final_residual) << "\n"
     << "  monotone_violations: " << result.report.monotone_violations << "\n";
  return os.str();
}

SolutionFile parse_solution(const std::string& text) {
  const YAML::Node doc = load_yaml(text);
  check_schema(doc);
  const auto kind = field(doc, "kind", "solution");
  if (!kind.IsScalar() || kind.Scalar() != "solution")
    fail(kind, "expected a document of kind 'solution'");
  SolutionFile s;
  s.x_types = labels(field(doc, "x_types", "solution"), "x_types");
  s.y_types = labels(field(doc, "y_types", "solution"), "y_types");
  s.temperature = number(field(doc, "temperature", "solution"), "temperature");
  const std::size_t nx = s.x_types.size(), ny = s.y_types.size();
  s.potentials.u = numbers(field(doc, "u", "solution"), "u", nx);
  s.potentials.v = numbers(field(doc, "v", "solution"), "v", ny);
  const auto mu = field(doc, "mu", "solution");
  if (!mu.IsSequence() || mu.size() != nx) fail(mu, "'mu' must have one row per x type");
  s.matching.mu.resize(static_cast<Index>(nx), static_cast<Index>(ny));
  for (std::size_t x = 0; x < nx; ++x)
    s.matching.mu.row(static_cast<Index>(x)) =
        numbers(mu[x], "mu[" + std::to_string(x) + "]", ny).transpose();
  s.matching.mu_x0 = numbers(field(doc, "mu_x0", "solution"), "mu_x0", nx);
  s.matching.mu_0y = numbers(field(doc, "mu_0y", "solution"), "mu_0y", ny);
  return s;
}

}  // namespace itu
