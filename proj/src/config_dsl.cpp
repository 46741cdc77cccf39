#include "aaf/config_dsl.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <vector>

namespace aaf::config {

namespace {

std::string format_error(int line, int column, const std::string& message,
                         const std::string& expected) {
  std::ostringstream os;
  if (line > 0) {
    os << "line " << line;
    if (column > 0) os << ", column " << column;
    os << ": ";
  }
  os << message;
  if (!expected.empty()) os << " (expected " << expected << ")";
  return os.str();
}

}  // namespace

ConfigError::ConfigError(int line, int column, std::string message, std::string expected)
    : std::runtime_error(format_error(line, column, message, expected)),
      line_(line),
      column_(column),
      message_(std::move(message)),
      expected_(std::move(expected)) {}

namespace {

enum class Tok { Ident, Number, LBracket, RBracket, LParen, RParen, Comma, Equals };

struct Token {
  Tok kind;
  std::string text;
  int column;
};

const char* describe(Tok kind) {
  switch (kind) {
    case Tok::Ident: return "a name";
    case Tok::Number: return "a number";
    case Tok::LBracket: return "'['";
    case Tok::RBracket: return "']'";
    case Tok::LParen: return "'('";
    case Tok::RParen: return "')'";
    case Tok::Comma: return "','";
    case Tok::Equals: return "'='";
  }
  return "?";
}

bool ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9') || c == '.'; }
bool number_char(char c) {
  return (c >= '0' && c <= '9') || c == '.' || c == 'e' || c == 'E' || c == '+' || c == '-';
}

std::vector<Token> lex_line(std::string_view line, int line_no) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    const char c = line[i];
    const int col = static_cast<int>(i) + 1;
    if (c == '#') break;
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < line.size() && ident_char(line[j])) ++j;
      tokens.push_back({Tok::Ident, std::string(line.substr(i, j - i)), col});
      i = j;
      continue;
    }
    if ((c >= '0' && c <= '9') || c == '.' || c == '+' || c == '-') {
      std::size_t j = i;
      while (j < line.size() && number_char(line[j])) ++j;
      tokens.push_back({Tok::Number, std::string(line.substr(i, j - i)), col});
      i = j;
      continue;
    }
    Tok kind;
    switch (c) {
      case '[': kind = Tok::LBracket; break;
      case ']': kind = Tok::RBracket; break;
      case '(': kind = Tok::LParen; break;
      case ')': kind = Tok::RParen; break;
      case ',': kind = Tok::Comma; break;
      case '=': kind = Tok::Equals; break;
      default: {
        const auto byte = static_cast<unsigned char>(c);
        char shown[16];
        if (byte >= 0x20 && byte < 0x7f) {
          std::snprintf(shown, sizeof shown, "'%c'", c);
        } else {
          std::snprintf(shown, sizeof shown, "byte 0x%02x", byte);
        }
        throw ConfigError(line_no, col, std::string("lexical error: unexpected character ") + shown,
                          "a name, number, '[', ']', '(', ')', ',' or '='");
      }
    }
    tokens.push_back({kind, std::string(1, c), col});
    ++i;
  }
  return tokens;
}

constexpr std::array kSections = {"pipeline", "alignment", "attention", "fusion"};

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "pipeline.order",  "pipeline.shots_aggregation", "alignment.query",
      "alignment.support", "alignment.support_pool",   "attention.query",
      "attention.support", "fusion.components"};
  return keys;
}

std::string keys_in(const std::string& section) {
  std::string out;
  for (const std::string& k : known_keys()) {
    if (k.starts_with(section + ".")) {
      if (!out.empty()) out += ", ";
      out += k.substr(section.size() + 1);
    }
  }
  return out;
}

bool is_section(std::string_view name) {
  for (const char* s : kSections)
    if (name == s) return true;
  return false;
}

constexpr const char* kAffinityNames = "identity, dot_product or softmax_dot(<scale>)";
constexpr const char* kAttentionNames =
    "none, support_pool_reweight(max|avg), background_attenuation or similarity_reweight";
constexpr const char* kFusionNames = "mul, sub, add, id, cat or learnable(<op>)";

/// Cursor over one line's value tokens.
class ValueReader {
 public:
  ValueReader(const std::vector<Token>& tokens, std::size_t start, int line, int end_column)
      : tokens_(tokens), pos_(start), line_(line), end_column_(end_column) {}

  bool at_end() const { return pos_ >= tokens_.size(); }
  const Token* peek() const { return at_end() ? nullptr : &tokens_[pos_]; }

  const Token& expect(Tok kind, const std::string& hint) {
    if (at_end()) {
      throw ConfigError(line_, end_column_, std::string("unexpected end of line"), hint);
    }
    const Token& t = tokens_[pos_];
    if (t.kind != kind) {
      throw ConfigError(line_, t.column,
                        "unexpected " + std::string(describe(t.kind)) + " '" + t.text + "'", hint);
    }
    ++pos_;
    return t;
  }

  bool accept(Tok kind) {
    if (!at_end() && tokens_[pos_].kind == kind) {
      ++pos_;
      return true;
    }
    return false;
  }

  void finish() const {
    if (!at_end()) {
      const Token& t = tokens_[pos_];
      throw ConfigError(line_, t.column, "unexpected trailing " + std::string(describe(t.kind)) +
                                             " '" + t.text + "'",
                        "end of line");
    }
  }

  int line() const { return line_; }

 private:
  const std::vector<Token>& tokens_;
  std::size_t pos_;
  int line_;
  int end_column_;
};

[[noreturn]] void unknown_operator(const ValueReader& r, const Token& t, const char* expected) {
  throw ConfigError(r.line(), t.column, "unknown operator '" + t.text + "'", expected);
}

Order read_order(ValueReader& r) {
  const char* hint = "align_then_attend or attend_then_align";
  const Token& t = r.expect(Tok::Ident, hint);
  if (t.text == "align_then_attend") return Order::AlignThenAttend;
  if (t.text == "attend_then_align") return Order::AttendThenAlign;
  throw ConfigError(r.line(), t.column, "unknown value '" + t.text + "'", hint);
}

ShotsAggregation read_aggregation(ValueReader& r) {
  const char* hint = "mean_features or mean_outputs";
  const Token& t = r.expect(Tok::Ident, hint);
  if (t.text == "mean_features") return ShotsAggregation::MeanFeatures;
  if (t.text == "mean_outputs") return ShotsAggregation::MeanOutputs;
  throw ConfigError(r.line(), t.column, "unknown value '" + t.text + "'", hint);
}

PoolMode read_pool_mode(ValueReader& r) {
  const Token& t = r.expect(Tok::Ident, "max or avg");
  if (t.text == "max") return PoolMode::Max;
  if (t.text == "avg") return PoolMode::Avg;
  unknown_operator(r, t, "max or avg");
}

AffinityKind read_affinity(ValueReader& r) {
  const Token& t = r.expect(Tok::Ident, kAffinityNames);
  if (t.text == "identity") return AffinityKind::identity();
  if (t.text == "dot_product") return AffinityKind::dot_product();
  if (t.text != "softmax_dot") unknown_operator(r, t, kAffinityNames);
  r.expect(Tok::LParen, "'(' followed by a positive scale");
  const Token& num = r.expect(Tok::Number, "a positive scale");
  double value = 0.0;
  const char* first = num.text.data();
  const char* last = first + num.text.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value) || value <= 0.0) {
    throw ConfigError(r.line(), num.column, "invalid scale '" + num.text + "'",
                      "a positive finite number");
  }
  r.expect(Tok::RParen, "')'");
  return AffinityKind::softmax_dot(value);
}

AttentionKind read_attention(ValueReader& r) {
  const Token& t = r.expect(Tok::Ident, kAttentionNames);
  if (t.text == "none") return AttentionKind::none();
  if (t.text == "background_attenuation") return AttentionKind::background_attenuation();
  if (t.text == "similarity_reweight") return AttentionKind::similarity_reweight();
  if (t.text != "support_pool_reweight") unknown_operator(r, t, kAttentionNames);
  r.expect(Tok::LParen, "'(' followed by max or avg");
  const PoolMode mode = read_pool_mode(r);
  r.expect(Tok::RParen, "')'");
  return AttentionKind::support_pool_reweight(mode);
}

std::optional<PoolMode> read_support_pool(ValueReader& r) {
  const Token& t = r.expect(Tok::Ident, "none, max or avg");
  if (t.text == "none") return std::nullopt;
  if (t.text == "max") return PoolMode::Max;
  if (t.text == "avg") return PoolMode::Avg;
  unknown_operator(r, t, "none, max or avg");
}

FusionComponent::Op read_fusion_op(ValueReader& r, const Token& t) {
  using Op = FusionComponent::Op;
  if (t.text == "mul") return Op::Mul;
  if (t.text == "sub") return Op::Sub;
  if (t.text == "add") return Op::Add;
  if (t.text == "id") return Op::Identity;
  if (t.text == "cat") return Op::Cat;
  unknown_operator(r, t, kFusionNames);
}

FusionKind read_fusion(ValueReader& r) {
  FusionKind kind;
  r.expect(Tok::LBracket, "'[' starting the component list");
  if (r.accept(Tok::RBracket)) return kind;
  while (true) {
    const Token& t = r.expect(Tok::Ident, kFusionNames);
    FusionComponent c;
    if (t.text == "learnable") {
      r.expect(Tok::LParen, "'(' followed by a fusion operator");
      const Token& inner = r.expect(Tok::Ident, "mul, sub, add, id or cat");
      c.op = read_fusion_op(r, inner);
      c.learnable = true;
      r.expect(Tok::RParen, "')'");
    } else {
      c.op = read_fusion_op(r, t);
    }
    kind.components.push_back(c);
    if (r.accept(Tok::RBracket)) break;
    r.expect(Tok::Comma, "',' or ']'");
  }
  return kind;
}

void read_value(const std::string& key, ValueReader& r, PipelineConfig& c) {
  if (key == "pipeline.order") c.order = read_order(r);
  else if (key == "pipeline.shots_aggregation") c.shots_aggregation = read_aggregation(r);
  else if (key == "alignment.query") c.alignment.query = read_affinity(r);
  else if (key == "alignment.support") c.alignment.support = read_affinity(r);
  else if (key == "alignment.support_pool") c.alignment.support_pool = read_support_pool(r);
  else if (key == "attention.query") c.attention.query = read_attention(r);
  else if (key == "attention.support") c.attention.support = read_attention(r);
  else if (key == "fusion.components") c.fusion = read_fusion(r);
  r.finish();
}

std::string resolve_key(const Token& key, const std::string& section, int line) {
  const std::string& name = key.text;
  std::string qualified;
  const auto dot = name.find('.');
  if (dot != std::string::npos) {
    const std::string sec = name.substr(0, dot);
    if (!is_section(sec)) {
      throw ConfigError(line, key.column, "unknown key '" + name + "'",
                        "a key in pipeline, alignment, attention or fusion");
    }
    qualified = name;
  } else if (!section.empty()) {
    qualified = section + "." + name;
  } else if (name == "fusion") {
    qualified = "fusion.components";
  } else if (name == "order" || name == "shots_aggregation") {
    qualified = "pipeline." + name;
  } else {
    throw ConfigError(line, key.column, "unknown key '" + name + "'",
                      "a qualified key such as attention.query, or a section header");
  }
  if (!known_keys().contains(qualified)) {
    const std::string sec = qualified.substr(0, qualified.find('.'));
    throw ConfigError(line, key.column, "unknown key '" + name + "'",
                      "one of " + keys_in(sec) + " in [" + sec + "]");
  }
  return qualified;
}

}  // namespace

ParsedConfig parse_source(std::string_view text) {
  ParsedConfig out;
  std::string section;
  std::map<std::string, int> section_lines;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;

    const std::vector<Token> tokens = lex_line(line, line_no);
    if (tokens.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const int end_col = static_cast<int>(line.size()) + 1;

    if (tokens[0].kind == Tok::LBracket) {
      const char* hint = "[pipeline], [alignment], [attention] or [fusion]";
      if (tokens.size() != 3 || tokens[1].kind != Tok::Ident || tokens[2].kind != Tok::RBracket) {
        throw ConfigError(line_no, tokens[0].column, "malformed section header", hint);
      }
      if (!is_section(tokens[1].text)) {
        throw ConfigError(line_no, tokens[1].column, "unknown section '" + tokens[1].text + "'",
                          hint);
      }
      if (auto it = section_lines.find(tokens[1].text); it != section_lines.end()) {
        throw ConfigError(line_no, tokens[0].column,
                          "duplicate section [" + tokens[1].text + "] (first declared on line " +
                              std::to_string(it->second) + ")");
      }
      section = tokens[1].text;
      section_lines[section] = line_no;
    } else {
      if (tokens[0].kind != Tok::Ident) {
        throw ConfigError(line_no, tokens[0].column,
                          "unexpected " + std::string(describe(tokens[0].kind)) + " '" +
                              tokens[0].text + "'",
                          "a key or a section header");
      }
      const std::string key = resolve_key(tokens[0], section, line_no);
      if (tokens.size() < 2 || tokens[1].kind != Tok::Equals) {
        throw ConfigError(line_no, tokens.size() < 2 ? end_col : tokens[1].column,
                          "missing '=' after key '" + tokens[0].text + "'", "'='");
      }
      if (auto it = out.key_lines.find(key); it != out.key_lines.end()) {
        throw ConfigError(line_no, tokens[0].column,
                          "duplicate key '" + key + "' (first set on line " +
                              std::to_string(it->second) + ")");
      }
      if (tokens.size() == 2) {
        throw ConfigError(line_no, end_col, "missing value for '" + key + "'");
      }
      ValueReader reader(tokens, 2, line_no, end_col);
      read_value(key, reader, out.config);
      out.key_lines[key] = line_no;
    }
    if (end == text.size()) break;
  }

  if (auto it = section_lines.find("fusion");
      it != section_lines.end() && !out.key_lines.contains("fusion.components")) {
    throw ConfigError(it->second, 1, "missing required key 'components' in [fusion]",
                      "components = [...]");
  }
  if (out.config.alignment.support_pool && !out.config.alignment.support.is_identity()) {
    throw ConfigError(out.key_lines.at("alignment.support_pool"), 1,
                      "alignment.support_pool replaces support alignment; it requires "
                      "alignment.support = identity");
  }
  return out;
}

PipelineConfig parse(std::string_view text) { return parse_source(text).config; }

namespace {

std::string affinity_text(const AffinityKind& k) {
  switch (k.variant) {
    case AffinityKind::Variant::Identity: return "identity";
    case AffinityKind::Variant::DotProduct: return "dot_product";
    case AffinityKind::Variant::SoftmaxDotProduct: {
      char buf[64];
      const auto res = std::to_chars(buf, buf + sizeof buf, k.scale);
      return "softmax_dot(" + std::string(buf, res.ptr) + ")";
    }
  }
  return "";
}

const char* pool_text(PoolMode m) { return m == PoolMode::Max ? "max" : "avg"; }

std::string attention_text(const AttentionKind& k) {
  switch (k.variant) {
    case AttentionKind::Variant::None: return "none";
    case AttentionKind::Variant::SupportPoolReweight:
      return std::string("support_pool_reweight(") + pool_text(k.pool) + ")";
    case AttentionKind::Variant::BackgroundAttenuation: return "background_attenuation";
    case AttentionKind::Variant::SimilarityReweight: return "similarity_reweight";
  }
  return "";
}

const char* fusion_op_text(FusionComponent::Op op) {
  switch (op) {
    case FusionComponent::Op::Mul: return "mul";
    case FusionComponent::Op::Sub: return "sub";
    case FusionComponent::Op::Add: return "add";
    case FusionComponent::Op::Identity: return "id";
    case FusionComponent::Op::Cat: return "cat";
  }
  return "";
}

}  // namespace

std::string print_config(const PipelineConfig& c) {
  std::ostringstream os;
  os << "[pipeline]\n"
     << "order = "
     << (c.order == Order::AlignThenAttend ? "align_then_attend" : "attend_then_align") << "\n"
     << "shots_aggregation = "
     << (c.shots_aggregation == ShotsAggregation::MeanFeatures ? "mean_features"
                                                                : "mean_outputs")
     << "\n\n"
     << "[alignment]\n"
     << "query = " << affinity_text(c.alignment.query) << "\n"
     << "support = " << affinity_text(c.alignment.support) << "\n"
     << "support_pool = "
     << (c.alignment.support_pool ? pool_text(*c.alignment.support_pool) : "none") << "\n\n"
     << "[attention]\n"
     << "query = " << attention_text(c.attention.query) << "\n"
     << "support = " << attention_text(c.attention.support) << "\n\n"
     << "[fusion]\n"
     << "components = [";
  for (std::size_t i = 0; i < c.fusion.components.size(); ++i) {
    const FusionComponent& comp = c.fusion.components[i];
    if (i) os << ", ";
    if (comp.learnable) {
      os << "learnable(" << fusion_op_text(comp.op) << ")";
    } else {
      os << fusion_op_text(comp.op);
    }
  }
  os << "]\n";
  return os.str();
}

std::optional<Extent> parse_extent(std::string_view text) {
  std::vector<std::size_t> dims;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('x', start), text.size());
    std::size_t value = 0;
    const char* first = text.data() + start;
    const char* last = text.data() + end;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (first == last || ec != std::errc() || ptr != last || value == 0) return std::nullopt;
    dims.push_back(value);
    if (end == text.size()) break;
    start = end + 1;
  }
  if (dims.size() < 2 || dims.size() > 3) return std::nullopt;
  Extent e;
  e.channels = dims.back();
  e.positions = dims.size() == 3 ? dims[0] * dims[1] : dims[0];
  return e;
}

std::optional<ConfigError> check_shapes(const PipelineConfig& config, Extent query,
                                        Extent support,
                                        const std::map<std::string, int>* key_lines) {
  auto line_of = [&](const char* key) {
    if (!key_lines) return 0;
    const auto it = key_lines->find(key);
    return it == key_lines->end() ? 0 : it->second;
  };
  if (query.channels != support.channels) {
    return ConfigError(0, 0,
                       "channel mismatch: query maps have " + std::to_string(query.channels) +
                           " channels, support maps have " + std::to_string(support.channels));
  }
  if (!config.alignment.query.is_identity() && query.positions != support.positions) {
    return ConfigError(line_of("alignment.query"), 0,
                       "query alignment moves the query onto the support grid (" +
                           std::to_string(support.positions) + " positions), but outputs must keep "
                           "the query grid (" + std::to_string(query.positions) + " positions)",
                       "alignment.query = identity");
  }
  if (config.fusion.arity() > 0) {
    const bool support_on_query_grid =
        config.alignment.support_pool.has_value() || !config.alignment.support.is_identity();
    const std::size_t support_positions =
        support_on_query_grid ? query.positions : support.positions;
    if (support_positions != query.positions) {
      return ConfigError(line_of("fusion.components"), 0,
                         "fusion needs equal spatial extents but the query has " +
                             std::to_string(query.positions) + " positions and the support " +
                             std::to_string(support.positions),
                         "a support alignment or alignment.support_pool");
    }
  }
  return std::nullopt;
}

}  // namespace aaf::config
