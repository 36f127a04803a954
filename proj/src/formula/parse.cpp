#include <cctype>
#include <charconv>
#include <cstdlib>
#include <string>

#include "fehd/error.hpp"
#include "fehd/formula.hpp"

namespace fehd::formula {
namespace {

enum class Tok { Ident, Number, String, Tilde, Pipe, Plus, Minus, Caret, LParen, RParen,
                 LBracket, RBracket, Comma, Colon, Equals, End };

struct Token {
  Tok kind;
  std::string text;
  double number = 0.0;
  std::size_t offset = 0;
};

const char* describe(Tok t) {
  switch (t) {
    case Tok::Ident: return "identifier";
    case Tok::Number: return "number";
    case Tok::String: return "string";
    case Tok::Tilde: return "'~'";
    case Tok::Pipe: return "'|'";
    case Tok::Plus: return "'+'";
    case Tok::Minus: return "'-'";
    case Tok::Caret: return "'^'";
    case Tok::LParen: return "'('";
    case Tok::RParen: return "')'";
    case Tok::LBracket: return "'['";
    case Tok::RBracket: return "']'";
    case Tok::Comma: return "','";
    case Tok::Colon: return "':'";
    case Tok::Equals: return "'='";
    case Tok::End: return "end of formula";
  }
  return "token";
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::vector<Token> lex(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (ident_start(c)) {
      while (i < s.size() && ident_char(s[i])) ++i;
      out.push_back({Tok::Ident, std::string(s.substr(start, i - start)), 0.0, start});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(s.data() + i, s.data() + s.size(), v);
      if (ec != std::errc()) throw FormulaError("malformed number", start);
      i = static_cast<std::size_t>(ptr - s.data());
      out.push_back({Tok::Number, std::string(s.substr(start, i - start)), v, start});
      continue;
    }
    if (c == '"' || c == '\'') {
      std::string text;
      ++i;
      while (true) {
        if (i >= s.size()) throw FormulaError("unterminated string", start);
        if (s[i] == '\\' && i + 1 < s.size()) {
          text.push_back(s[i + 1]);
          i += 2;
          continue;
        }
        if (s[i] == c) break;
        text.push_back(s[i++]);
      }
      ++i;
      out.push_back({Tok::String, std::move(text), 0.0, start});
      continue;
    }
    Tok k;
    switch (c) {
      case '~': k = Tok::Tilde; break;
      case '|': k = Tok::Pipe; break;
      case '+': k = Tok::Plus; break;
      case '-': k = Tok::Minus; break;
      case '^': k = Tok::Caret; break;
      case '(': k = Tok::LParen; break;
      case ')': k = Tok::RParen; break;
      case '[': k = Tok::LBracket; break;
      case ']': k = Tok::RBracket; break;
      case ',': k = Tok::Comma; break;
      case ':': k = Tok::Colon; break;
      case '=': k = Tok::Equals; break;
      default:
        throw FormulaError(std::string("unexpected character '") + c + "'", start);
    }
    out.push_back({k, std::string(1, c), 0.0, start});
    ++i;
  }
  out.push_back({Tok::End, "", 0.0, s.size()});
  return out;
}

bool is_stepwise_name(std::string_view n) {
  return n == "sw" || n == "sw0" || n == "csw" || n == "csw0" || n == "mvsw";
}

StepKind step_kind(std::string_view n) {
  if (n == "sw") return StepKind::Sw;
  if (n == "sw0") return StepKind::Sw0;
  if (n == "csw") return StepKind::Csw;
  if (n == "csw0") return StepKind::Csw0;
  return StepKind::Mvsw;
}

bool is_shift_name(std::string_view n) { return n == "l" || n == "f" || n == "d"; }

ShiftOp shift_op(std::string_view n) {
  if (n == "l") return ShiftOp::Lag;
  if (n == "f") return ShiftOp::Lead;
  return ShiftOp::Diff;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : toks_(lex(text)) {}

  FormulaSpec parse() {
    FormulaSpec spec;
    parse_lhs(spec);
    expect(Tok::Tilde);
    spec.rhs = parse_rhs();
    while (accept(Tok::Pipe)) {
      const std::size_t part_start = peek().offset;
      if (spec.iv) throw FormulaError("the IV part must be the last part of the formula", part_start);
      if (part_has_tilde()) {
        spec.iv = parse_iv();
      } else {
        if (spec.fe) throw FormulaError("only one fixed-effects part is allowed", part_start);
        spec.fe = parse_fe_part();
      }
    }
    if (peek().kind != Tok::End) fail("unexpected " + std::string(describe(peek().kind)));
    return spec;
  }

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;

  const Token& peek(std::size_t k = 0) const {
    return toks_[std::min(pos_ + k, toks_.size() - 1)];
  }
  const Token& next() { return toks_[std::min(pos_++, toks_.size() - 1)]; }
  bool accept(Tok k) {
    if (peek().kind != k) return false;
    ++pos_;
    return true;
  }
  [[noreturn]] void fail(const std::string& msg) const { throw FormulaError(msg, peek().offset); }
  const Token& expect(Tok k) {
    if (peek().kind != k)
      fail(std::string("expected ") + describe(k) + ", found " + describe(peek().kind));
    return next();
  }
  std::string expect_ident() { return expect(Tok::Ident).text; }

  // Does the current part (up to the next top-level '|') contain a '~'?
  bool part_has_tilde() const {
    int depth = 0;
    for (std::size_t i = pos_; i < toks_.size(); ++i) {
      const Tok k = toks_[i].kind;
      if (k == Tok::LParen || k == Tok::LBracket) ++depth;
      if (k == Tok::RParen || k == Tok::RBracket) --depth;
      if (depth == 0 && (k == Tok::Pipe || k == Tok::End)) return false;
      if (depth == 0 && k == Tok::Tilde) return true;
    }
    return false;
  }

  void parse_lhs(FormulaSpec& spec) {
    if (peek().kind == Tok::Ident && peek(1).kind == Tok::LParen) {
      const std::string& fn = peek().text;
      if (fn == "c") {
        pos_ += 2;
        spec.lhs_multi = true;
        do {
          spec.lhs.push_back(parse_expr());
        } while (accept(Tok::Comma));
        expect(Tok::RParen);
        return;
      }
      if (is_stepwise_name(fn)) fail("stepwise functions are not allowed in the dependent variable");
    }
    spec.lhs.push_back(parse_expr());
  }

  // Expression producing a single numeric column.
  Expr parse_expr() {
    const Token& t = peek();
    if (t.kind != Tok::Ident) fail("expected a variable, found " + std::string(describe(t.kind)));
    if (peek(1).kind != Tok::LParen) {
      next();
      return Expr::var(t.text);
    }
    const std::string fn = t.text;
    const std::size_t at = t.offset;
    pos_ += 2;
    Expr e;
    if (fn == "log" || fn == "exp") {
      e.kind = fn == "log" ? Expr::Kind::Log : Expr::Kind::Exp;
      e.args.push_back(parse_expr());
    } else if (is_shift_name(fn)) {
      e.kind = Expr::Kind::Shift;
      e.op = shift_op(fn);
      e.args.push_back(parse_expr());
      if (accept(Tok::Comma)) {
        const auto offs = parse_offsets();
        if (offs.size() != 1) throw FormulaError("a single offset is required here", at);
        e.offset = offs[0];
        e.explicit_offset = true;
      }
    } else {
      throw FormulaError("unknown function '" + fn + "'", at);
    }
    expect(Tok::RParen);
    return e;
  }

  int parse_int() {
    bool neg = accept(Tok::Minus);
    const Token& t = expect(Tok::Number);
    if (t.number != static_cast<double>(static_cast<long>(t.number)))
      throw FormulaError("offset must be an integer", t.offset);
    const int v = static_cast<int>(t.number);
    return neg ? -v : v;
  }

  // k | a:b | c(k, a:b, ...)
  std::vector<int> parse_offsets() {
    std::vector<int> out;
    auto one = [&] {
      const int a = parse_int();
      if (accept(Tok::Colon)) {
        const int b = parse_int();
        const int step = a <= b ? 1 : -1;
        for (int v = a;; v += step) {
          out.push_back(v);
          if (v == b) break;
        }
      } else {
        out.push_back(a);
      }
    };
    if (peek().kind == Tok::Ident && peek().text == "c" && peek(1).kind == Tok::LParen) {
      pos_ += 2;
      do {
        one();
      } while (accept(Tok::Comma));
      expect(Tok::RParen);
    } else {
      one();
    }
    return out;
  }

  Literal parse_literal() {
    if (peek().kind == Tok::String) return Literal{true, 0.0, next().text};
    const bool neg = accept(Tok::Minus);
    const Token& t = expect(Tok::Number);
    return Literal{false, neg ? -t.number : t.number, {}};
  }

  // lit | a:b | c(lit, ...)
  std::vector<Literal> parse_literal_set() {
    std::vector<Literal> out;
    auto one = [&] {
      Literal a = parse_literal();
      if (!a.is_string && accept(Tok::Colon)) {
        const std::size_t at = peek().offset;
        Literal b = parse_literal();
        if (b.is_string) throw FormulaError("range bounds must be numbers", at);
        const double step = a.number <= b.number ? 1.0 : -1.0;
        for (double v = a.number; step > 0 ? v <= b.number : v >= b.number; v += step)
          out.push_back(Literal{false, v, {}});
      } else {
        out.push_back(std::move(a));
      }
    };
    if (peek().kind == Tok::Ident && peek().text == "c" && peek(1).kind == Tok::LParen) {
      pos_ += 2;
      do {
        one();
      } while (accept(Tok::Comma));
      expect(Tok::RParen);
    } else {
      one();
    }
    return out;
  }

  ITerm parse_i(std::size_t at) {
    ITerm it;
    it.var = expect_ident();
    std::size_t positional = 1;
    while (accept(Tok::Comma)) {
      if (peek().kind == Tok::Ident && peek(1).kind == Tok::Equals) {
        const Token name = next();
        next();
        if (name.text == "ref") {
          it.ref = parse_literal_set();
        } else if (name.text == "bin") {
          it.bin = parse_bin();
        } else {
          throw FormulaError("unknown argument '" + name.text + "' to i()", name.offset);
        }
        continue;
      }
      if (peek().kind == Tok::Ident && positional == 1 &&
          !(peek().text == "c" && peek(1).kind == Tok::LParen)) {
        std::string w = next().text;
        if (w.rfind("i.", 0) == 0 && w.size() > 2) {
          it.with_categorical = true;
          w = w.substr(2);
        }
        it.with = std::move(w);
        positional = 2;
        continue;
      }
      if (positional <= 2 && it.ref.empty()) {
        it.ref = parse_literal_set();
        positional = 3;
        continue;
      }
      fail("too many arguments to i()");
    }
    expect(Tok::RParen);
    if (it.with && *it.with == it.var)
      throw FormulaError("i() cannot interact a variable with itself", at);
    return it;
  }

  // list("label" = c(...) | a:b | lit, ...)
  std::vector<BinGroup> parse_bin() {
    if (!(peek().kind == Tok::Ident && peek().text == "list" && peek(1).kind == Tok::LParen))
      fail("bin must be written list(\"label\" = values, ...)");
    pos_ += 2;
    std::vector<BinGroup> out;
    do {
      BinGroup g;
      if (peek().kind == Tok::String || peek().kind == Tok::Ident) {
        g.label = next().text;
      } else {
        fail("expected a bin label");
      }
      expect(Tok::Equals);
      g.members = parse_literal_set();
      out.push_back(std::move(g));
    } while (accept(Tok::Comma));
    expect(Tok::RParen);
    return out;
  }

  // Column-producing term (no stepwise).
  Term parse_term() {
    const Token& t = peek();
    if (t.kind == Tok::Ident && peek(1).kind == Tok::LParen) {
      const std::size_t at = t.offset;
      if (t.text == "i") {
        pos_ += 2;
        return parse_i(at);
      }
      if (is_shift_name(t.text)) {
        const ShiftOp op = shift_op(t.text);
        pos_ += 2;
        LagTerm lt;
        lt.op = op;
        lt.inner = parse_expr();
        lt.offsets = {1};
        if (accept(Tok::Comma)) {
          lt.offsets = parse_offsets();
          lt.explicit_offsets = true;
        }
        expect(Tok::RParen);
        return lt;
      }
      if (is_stepwise_name(t.text))
        throw FormulaError("stepwise functions cannot be nested", at);
    }
    return parse_expr();
  }

  std::vector<Term> parse_term_list() {
    std::vector<Term> out;
    do {
      out.push_back(parse_term());
    } while (accept(Tok::Plus));
    return out;
  }

  std::vector<Item<Term>> parse_rhs() {
    std::vector<Item<Term>> out;
    bool seen_step = false;
    bool seen_one = false;
    do {
      const Token& t = peek();
      if (t.kind == Tok::Number && t.number == 1.0) {
        if (seen_one) fail("duplicate intercept term");
        seen_one = true;
        next();
        continue;
      }
      if (t.kind == Tok::Ident && peek(1).kind == Tok::LParen && is_stepwise_name(t.text)) {
        if (seen_step)
          throw FormulaError("only one stepwise function is allowed per part", t.offset);
        seen_step = true;
        const StepKind kind = step_kind(t.text);
        pos_ += 2;
        Stepwise<Term> sw;
        sw.kind = kind;
        do {
          sw.args.push_back(parse_term_list());
        } while (accept(Tok::Comma));
        expect(Tok::RParen);
        out.emplace_back(std::move(sw));
        continue;
      }
      out.emplace_back(parse_term());
    } while (accept(Tok::Plus));
    return out;
  }

  FeTerm parse_fe_term() {
    FeTerm fe;
    const std::size_t at = peek().offset;
    fe.factors.push_back(expect_ident());
    while (accept(Tok::Caret)) fe.factors.push_back(expect_ident());
    if (accept(Tok::LBracket)) {
      const bool pure = accept(Tok::LBracket);
      do {
        fe.slopes.push_back(expect_ident());
      } while (accept(Tok::Comma));
      expect(Tok::RBracket);
      if (pure) expect(Tok::RBracket);
      fe.intercept = !pure;
    }
    for (const auto& s : fe.slopes)
      for (const auto& f : fe.factors)
        if (s == f)
          throw FormulaError("variable '" + s + "' cannot be both a fixed effect and its slope", at);
    return fe;
  }

  std::vector<Item<FeTerm>> parse_fe_part() {
    std::vector<Item<FeTerm>> out;
    bool seen_step = false;
    do {
      const Token& t = peek();
      if (t.kind == Tok::Ident && peek(1).kind == Tok::LParen) {
        if (!is_stepwise_name(t.text))
          throw FormulaError("unknown function '" + t.text + "' in the fixed-effects part", t.offset);
        if (seen_step)
          throw FormulaError("only one stepwise function is allowed per part", t.offset);
        seen_step = true;
        Stepwise<FeTerm> sw;
        sw.kind = step_kind(t.text);
        pos_ += 2;
        do {
          std::vector<FeTerm> arg;
          do {
            arg.push_back(parse_fe_term());
          } while (accept(Tok::Plus));
          sw.args.push_back(std::move(arg));
        } while (accept(Tok::Comma));
        expect(Tok::RParen);
        out.emplace_back(std::move(sw));
        continue;
      }
      out.emplace_back(parse_fe_term());
    } while (accept(Tok::Plus));
    return out;
  }

  IvPart parse_iv() {
    IvPart iv;
    do {
      iv.endo.push_back(parse_expr());
    } while (accept(Tok::Plus));
    expect(Tok::Tilde);
    iv.instruments = parse_term_list();
    return iv;
  }
};

}  // namespace

FormulaSpec parse_formula(std::string_view text) {
  bool blank = true;
  for (char c : text) blank = blank && std::isspace(static_cast<unsigned char>(c));
  if (blank) throw FormulaError("empty formula", 0);
  return Parser(text).parse();
}

}  // namespace fehd::formula
