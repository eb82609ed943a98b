#include "latsa/lattice_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "latsa/masks.hpp"

namespace latsa {
namespace {

using json = nlohmann::json;
using K = LatticeError::Kind;

// 1-based line and column of a byte offset.
std::string location(std::string_view text, std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col) + " (offset " + std::to_string(offset) + ")";
}

[[noreturn]] void syntax_error(std::string_view text, std::size_t offset, const std::string& msg) {
  throw LatticeError(K::syntax, "syntax error at " + location(text, offset) + ": " + msg);
}

Lattice lattice_from_json(const json& doc) {
  if (!doc.is_object()) throw LatticeError(K::syntax, "lattice JSON must be an object");
  for (const char* key : {"nodes", "edges"})
    if (!doc.contains(key)) throw LatticeError(K::syntax, std::string("lattice JSON is missing \"") + key + "\"");

  std::map<long long, std::string> raw_nodes;
  for (const auto& n : doc.at("nodes")) {
    if (!n.contains("id") || !n.contains("token") || !n.at("id").is_number_integer() || !n.at("token").is_string())
      throw LatticeError(K::syntax, "each node needs an integer \"id\" and a string \"token\"");
    const long long id = n.at("id").get<long long>();
    if (!raw_nodes.emplace(id, n.at("token").get<std::string>()).second)
      throw LatticeError(K::bad_node, "node id " + std::to_string(id) + " appears twice");
  }
  std::map<long long, NodeId> dense;
  std::vector<std::string> tokens;
  for (const auto& [id, tok] : raw_nodes) {
    dense.emplace(id, tokens.size());
    tokens.push_back(tok);
  }
  auto lookup = [&](const json& v, const char* what) -> NodeId {
    if (!v.is_number_integer()) throw LatticeError(K::syntax, std::string(what) + " must be an integer node id");
    auto it = dense.find(v.get<long long>());
    if (it == dense.end())
      throw LatticeError(K::bad_node, std::string(what) + " refers to unknown node " + v.dump());
    return it->second;
  };

  std::vector<Edge> edges;
  for (const auto& e : doc.at("edges")) {
    if (!e.contains("from") || !e.contains("to") || !e.contains("p") || !e.at("p").is_number())
      throw LatticeError(K::syntax, "each edge needs \"from\", \"to\" and numeric \"p\"");
    edges.push_back({lookup(e.at("from"), "edge source"), lookup(e.at("to"), "edge target"), e.at("p").get<double>()});
  }
  // Endpoints are optional; without them the unique source and sink are used.
  if (!doc.contains("start") && !doc.contains("end")) return Lattice(std::move(tokens), std::move(edges));
  if (!doc.contains("start") || !doc.contains("end"))
    throw LatticeError(K::syntax, "lattice JSON must give both \"start\" and \"end\" or neither");
  return Lattice(std::move(tokens), std::move(edges), lookup(doc.at("start"), "start"), lookup(doc.at("end"), "end"));
}

Lattice parse_json_lattice(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    syntax_error(text, e.byte > 0 ? e.byte - 1 : 0, e.what());
  }
  try {
    return lattice_from_json(doc);
  } catch (const json::exception& e) {
    throw LatticeError(K::syntax, std::string("malformed lattice JSON: ") + e.what());
  }
}

// Recursive-descent reader for PLF: a tuple of columns, each a tuple of
// (token, score, offset) arcs. Trailing commas are accepted.
class PlfReader {
public:
  explicit PlfReader(std::string_view text) : text_(text) {}

  std::vector<std::vector<LabeledEdge>> read() {
    std::vector<std::vector<LabeledEdge>> columns;
    expect('(');
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        break;
      }
      columns.push_back(read_column(columns.size()));
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    skip_ws();
    if (pos_ != text_.size()) syntax_error(text_, pos_, "trailing characters after lattice");
    return columns;
  }

private:
  std::vector<LabeledEdge> read_column(std::size_t col) {
    std::vector<LabeledEdge> arcs;
    expect('(');
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        break;
      }
      expect('(');
      LabeledEdge e;
      e.from = col;
      e.token = read_string();
      expect(',');
      e.p = read_number();
      expect(',');
      const std::size_t at = pos_;
      const double off = read_number();
      if (off < 1 || off != std::floor(off)) syntax_error(text_, at, "arc offset must be a positive integer");
      e.to = col + static_cast<std::size_t>(off);
      skip_ws();
      if (peek() == ',') ++pos_;
      expect(')');
      arcs.push_back(std::move(e));
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    return arcs;
  }

  std::string read_string() {
    skip_ws();
    const char quote = peek();
    if (quote != '\'' && quote != '"') syntax_error(text_, pos_, "expected quoted token");
    ++pos_;
    std::string out;
    while (pos_ < text_.size() && text_[pos_] != quote) {
      if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) ++pos_;
      out += text_[pos_++];
    }
    if (pos_ >= text_.size()) syntax_error(text_, pos_, "unterminated token string");
    ++pos_;
    return out;
  }

  double read_number() {
    skip_ws();
    const std::size_t begin = pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || std::string_view("+-.eE").find(text_[pos_]) != std::string_view::npos))
      ++pos_;
    if (begin == pos_) syntax_error(text_, begin, "expected number");
    const std::string s(text_.substr(begin, pos_ - begin));
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) syntax_error(text_, begin, "malformed number '" + s + "'");
    return v;
  }

  void expect(char c) {
    skip_ws();
    if (peek() != c) syntax_error(text_, pos_, std::string("expected '") + c + "'");
    ++pos_;
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

EdgeLabeledLattice parse_plf(std::string_view text, PlfProb plf_prob) {
  text = trim(text);
  auto columns = PlfReader(text).read();
  if (columns.empty()) throw LatticeError(K::empty, "PLF lattice has no columns");
  std::vector<LabeledEdge> edges;
  for (auto& col : columns) {
    for (auto& e : col) {
      if (plf_prob == PlfProb::log) e.p = std::exp(e.p);
      if (e.to > columns.size())
        throw LatticeError(K::bad_node, "PLF arc '" + e.token + "' jumps past the final node");
      edges.push_back(std::move(e));
    }
  }
  return EdgeLabeledLattice(columns.size() + 1, std::move(edges));
}

Lattice parse_lattice(std::string_view text, LatticeFormat format, PlfProb plf_prob) {
  if (format == LatticeFormat::plf) return line_graph(parse_plf(text, plf_prob));
  return parse_json_lattice(text);
}

std::vector<Lattice> parse_lattices(std::string_view text, LatticeFormat format, PlfProb plf_prob) {
  std::vector<Lattice> out;
  if (format == LatticeFormat::json) {
    const auto body = trim(text);
    if (body.empty()) return out;
    if (json::accept(body.begin(), body.end())) {
      out.push_back(parse_json_lattice(body));
      return out;
    }
  }
  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t nl = text.find('\n', begin);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(begin, nl - begin));
    if (!line.empty()) out.push_back(parse_lattice(line, format, plf_prob));
    begin = nl + 1;
  }
  return out;
}

std::string to_json(const Lattice& l) {
  json doc;
  doc["nodes"] = json::array();
  for (NodeId k = 0; k < l.size(); ++k) doc["nodes"].push_back({{"id", k}, {"token", l.token(k)}});
  doc["edges"] = json::array();
  for (const Edge& e : l.edges()) doc["edges"].push_back({{"from", e.from}, {"to", e.to}, {"p", e.p}});
  doc["start"] = l.start();
  doc["end"] = l.end();
  return doc.dump();
}

namespace {

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

std::string to_dot(const Lattice& l) {
  static const char* kShades[5] = {"#f7fbff", "#c6dbef", "#6baed6", "#2171b5", "#08306b"};
  const MarginalVector marginal = compute_marginals(l);
  std::ostringstream os;
  os << "digraph lattice {\n  rankdir=LR;\n  node [shape=box, style=filled];\n";
  char buf[64];
  for (NodeId k = 0; k < l.size(); ++k) {
    const int shade = std::clamp(static_cast<int>(marginal[k] * 5.0), 0, 4);
    std::snprintf(buf, sizeof buf, "%.4g", marginal[k]);
    os << "  n" << k << " [label=\"" << dot_escape(l.token(k)) << "\\np=" << buf << "\", fillcolor=\""
       << kShades[shade] << "\"" << (shade >= 3 ? ", fontcolor=\"white\"" : "") << "];\n";
  }
  for (const Edge& e : l.edges()) {
    std::snprintf(buf, sizeof buf, "%.4g", e.p);
    os << "  n" << e.from << " -> n" << e.to << " [label=\"" << buf << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace latsa
