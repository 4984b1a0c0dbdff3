// tfskit -- tokenizer, definition parser and template expansion

#include "tfs/dsl.hpp"

#include <cctype>
#include <map>
#include <sstream>

namespace tfs {

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '*' || c == '+';
}

const std::set<std::string>& reserved_words() {
  static const std::set<std::string> r = {"sort", "incompatible", "partition"};
  return r;
}

}  // namespace

const char* token_kind_name(Token::Kind k) {
  switch (k) {
    case Token::Kind::Ident: return "IDENT";
    case Token::Kind::Feat: return "FEAT";
    case Token::Kind::Number: return "NUMBER";
    case Token::Kind::Quoted: return "SYMBOL";
    case Token::Kind::Hash: return "#";
    case Token::Kind::Percent: return "%";
    case Token::Kind::Define: return ":=";
    case Token::Kind::Lt: return "<";
    case Token::Kind::Colon: return ":";
    case Token::Kind::Comma: return ",";
    case Token::Kind::Dot: return ".";
    case Token::Kind::Amp: return "&";
    case Token::Kind::Bar: return "|";
    case Token::Kind::Tilde: return "~";
    case Token::Kind::LBracket: return "[";
    case Token::Kind::RBracket: return "]";
    case Token::Kind::LParen: return "(";
    case Token::Kind::RParen: return ")";
    case Token::Kind::LBrace: return "{";
    case Token::Kind::RBrace: return "}";
    case Token::Kind::Eof: return "<eof>";
  }
  return "?";
}

std::vector<Token> tokenize(std::string_view text, const std::string& file) {
  std::vector<Token> out;
  int line = 1, col = 1;
  size_t i = 0;
  const size_t n = text.size();

  auto loc_here = [&]() { return SourceLoc{file, line, col}; };
  auto push = [&](Token::Kind k, std::string t, SourceLoc loc) {
    out.push_back(Token{k, std::move(t), std::move(loc)});
  };
  auto advance = [&](size_t count) {
    for (size_t k = 0; k < count; ++k) {
      if (text[i] == '\n') { ++line; col = 1; } else { ++col; }
      ++i;
    }
  };

  while (i < n) {
    char c = text[i];
    if (c == ';') {  // comment to end of line
      while (i < n && text[i] != '\n') advance(1);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) { advance(1); continue; }

    SourceLoc loc = loc_here();
    if (ident_start(c)) {
      size_t j = i;
      while (j < n && ident_char(text[j])) ++j;
      std::string word(text.substr(i, j - i));
      advance(j - i);
      // an identifier directly followed by ":" (but not ":=") names a feature
      size_t k = i;
      while (k < n && (text[k] == ' ' || text[k] == '\t')) ++k;
      bool feat = k < n && text[k] == ':' && !(k + 1 < n && text[k + 1] == '=');
      push(feat ? Token::Kind::Feat : Token::Kind::Ident, word, loc);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t j = i;
      while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      std::string digits(text.substr(i, j - i));
      advance(j - i);
      push(Token::Kind::Number, digits, loc);
      continue;
    }
    if (c == '\'') {
      size_t j = i + 1;
      while (j < n && ident_char(text[j])) ++j;
      if (j == i + 1)
        throw Error(loc, "quote must be followed by a symbol");
      std::string sym(text.substr(i + 1, j - i - 1));
      advance(j - i);
      push(Token::Kind::Quoted, sym, loc);
      continue;
    }
    if (c == '#' || c == '%') {
      Token::Kind kind = c == '#' ? Token::Kind::Hash : Token::Kind::Percent;
      size_t j = i + 1;
      while (j < n && ident_char(text[j])) ++j;
      if (j == i + 1)
        throw Error(loc, std::string(1, c) + " must be followed by a name");
      std::string nm(text.substr(i + 1, j - i - 1));
      advance(j - i);
      push(kind, nm, loc);
      continue;
    }
    if (c == ':' && i + 1 < n && text[i + 1] == '=') {
      advance(2);
      push(Token::Kind::Define, ":=", loc);
      continue;
    }
    Token::Kind k;
    switch (c) {
      case ':': k = Token::Kind::Colon; break;
      case '<': k = Token::Kind::Lt; break;
      case ',': k = Token::Kind::Comma; break;
      case '.': k = Token::Kind::Dot; break;
      case '&': k = Token::Kind::Amp; break;
      case '|': k = Token::Kind::Bar; break;
      case '~': k = Token::Kind::Tilde; break;
      case '[': k = Token::Kind::LBracket; break;
      case ']': k = Token::Kind::RBracket; break;
      case '(': k = Token::Kind::LParen; break;
      case ')': k = Token::Kind::RParen; break;
      case '{': k = Token::Kind::LBrace; break;
      case '}': k = Token::Kind::RBrace; break;
      default:
        throw Error(loc, std::string("illegal character '") + c + "'");
    }
    advance(1);
    push(k, std::string(1, c), loc);
  }
  out.push_back(Token{Token::Kind::Eof, "", loc_here()});
  return out;
}

// ---------------------------------------------------------------------------

namespace {

class Parser {
 public:
  explicit Parser(const std::vector<Token>& toks) : toks_(toks) {}

  std::vector<Definition> definitions() {
    std::vector<Definition> defs;
    while (!at(Token::Kind::Eof)) defs.push_back(definition());
    return defs;
  }

  Expr expression_only() {
    Expr e = expr();
    expect(Token::Kind::Eof);
    return e;
  }

 private:
  const std::vector<Token>& toks_;
  size_t pos_ = 0;

  const Token& cur() const { return toks_[pos_]; }
  bool at(Token::Kind k) const { return cur().kind == k; }
  const Token& take() { return toks_[pos_++]; }

  [[noreturn]] void fail(const std::string& expected) {
    throw Error(cur().loc, "expected " + expected + ", found " +
                               (cur().kind == Token::Kind::Eof
                                    ? "end of input"
                                    : "'" + cur().text + "'"));
  }
  const Token& expect(Token::Kind k) {
    if (!at(k)) fail(std::string("'") + token_kind_name(k) + "'");
    return take();
  }
  std::string ident() {
    if (!at(Token::Kind::Ident)) fail("identifier");
    return take().text;
  }

  Definition definition() {
    Definition d;
    d.loc = cur().loc;
    if (at(Token::Kind::Ident) && cur().text == "sort") {
      take();
      d.kind = Definition::Kind::SortType;
      d.name = defined_name();
      expect(Token::Kind::Lt);
      d.parents.push_back(ident());
      while (at(Token::Kind::Comma)) { take(); d.parents.push_back(ident()); }
      expect(Token::Kind::Dot);
      return d;
    }
    if (at(Token::Kind::Ident) && cur().text == "incompatible") {
      take();
      d.kind = Definition::Kind::Incompat;
      expect(Token::Kind::LBrace);
      d.parents.push_back(ident());
      expect(Token::Kind::Comma);
      d.parents.push_back(ident());
      while (at(Token::Kind::Comma)) { take(); d.parents.push_back(ident()); }
      expect(Token::Kind::RBrace);
      expect(Token::Kind::Dot);
      return d;
    }
    if (at(Token::Kind::Ident) && cur().text == "partition") {
      take();
      d.kind = Definition::Kind::Partition;
      d.name = ident();
      expect(Token::Kind::LBrace);
      d.parents.push_back(ident());
      while (at(Token::Kind::Comma)) { take(); d.parents.push_back(ident()); }
      expect(Token::Kind::RBrace);
      expect(Token::Kind::Dot);
      if (std::set<std::string>(d.parents.begin(), d.parents.end()).size() !=
          d.parents.size())
        throw Error(d.loc, "partition '" + d.name + "' lists a child twice");
      return d;
    }

    d.name = defined_name();
    if (at(Token::Kind::LParen)) {
      take();
      d.kind = Definition::Kind::Template;
      d.params.push_back(ident());
      while (at(Token::Kind::Comma)) { take(); d.params.push_back(ident()); }
      expect(Token::Kind::RParen);
      if (std::set<std::string>(d.params.begin(), d.params.end()).size() !=
          d.params.size())
        throw Error(d.loc, "duplicate template parameter in '" + d.name + "'");
    } else {
      d.kind = Definition::Kind::AvmType;
    }
    expect(Token::Kind::Define);
    if (at(Token::Kind::Dot)) fail("expression");
    Expr body = expr();
    expect(Token::Kind::Dot);

    if (d.kind == Definition::Kind::AvmType) {
      // type references conjoined at top level are supertype declarations
      std::vector<Expr> rest;
      auto split = [&](const Expr& e, auto&& self) -> void {
        if (e.kind == Expr::Kind::Conj) {
          for (const auto& k : e.kids) self(k, self);
        } else if (e.kind == Expr::Kind::TypeRef) {
          d.parents.push_back(e.name);
        } else {
          rest.push_back(e);
        }
      };
      split(body, split);
      if (rest.empty()) {
        d.body.reset();
      } else if (rest.size() == 1) {
        d.body = std::move(rest.front());
      } else {
        Expr conj;
        conj.kind = Expr::Kind::Conj;
        conj.loc = body.loc;
        conj.kids = std::move(rest);
        d.body = std::move(conj);
      }
    } else {
      d.body = std::move(body);
    }
    return d;
  }

  std::string defined_name() {
    if (!at(Token::Kind::Ident)) fail("identifier");
    if (reserved_words().count(cur().text))
      throw Error(cur().loc, "'" + cur().text + "' is reserved");
    return take().text;
  }

  Expr expr() {
    Expr first = term();
    if (!at(Token::Kind::Bar)) return first;
    Expr disj;
    disj.kind = Expr::Kind::Disj;
    disj.loc = first.loc;
    disj.kids.push_back(std::move(first));
    while (at(Token::Kind::Bar)) {
      take();
      disj.kids.push_back(term());
    }
    return disj;
  }

  Expr term() {
    Expr first = factor();
    if (!at(Token::Kind::Amp)) return first;
    Expr conj;
    conj.kind = Expr::Kind::Conj;
    conj.loc = first.loc;
    conj.kids.push_back(std::move(first));
    while (at(Token::Kind::Amp)) {
      take();
      conj.kids.push_back(factor());
    }
    return conj;
  }

  Expr factor() {
    SourceLoc loc = cur().loc;
    switch (cur().kind) {
      case Token::Kind::Tilde: {
        take();
        Expr e;
        e.kind = Expr::Kind::Neg;
        e.loc = loc;
        e.kids.push_back(factor());
        return e;
      }
      case Token::Kind::Hash: {
        Expr e;
        e.kind = Expr::Kind::Coref;
        e.name = take().text;
        e.loc = loc;
        return e;
      }
      case Token::Kind::Quoted: {
        Expr e = Expr::atom(take().text);
        e.loc = loc;
        return e;
      }
      case Token::Kind::Number: {
        Expr e = Expr::atom(take().text, /*num=*/true);
        e.loc = loc;
        return e;
      }
      case Token::Kind::Percent: {
        Expr e;
        e.kind = Expr::Kind::DistDisj;
        e.name = take().text;
        e.loc = loc;
        expect(Token::Kind::LParen);
        e.kids.push_back(expr());
        while (at(Token::Kind::Comma)) { take(); e.kids.push_back(expr()); }
        expect(Token::Kind::RParen);
        if (e.kids.size() < 2)
          throw Error(loc, "distributed disjunction '%" + e.name +
                               "' needs at least two alternatives");
        return e;
      }
      case Token::Kind::LBracket: {
        take();
        Expr e;
        e.kind = Expr::Kind::Avm;
        e.loc = loc;
        if (!at(Token::Kind::RBracket)) {
          for (;;) {
            if (!at(Token::Kind::Feat)) fail("feature name");
            std::string f = take().text;
            expect(Token::Kind::Colon);
            e.feats.emplace_back(std::move(f), expr());
            if (!at(Token::Kind::Comma)) break;
            take();
          }
        }
        expect(Token::Kind::RBracket);
        return e;
      }
      case Token::Kind::LParen: {
        take();
        Expr e = expr();
        expect(Token::Kind::RParen);
        return e;
      }
      case Token::Kind::Ident: {
        std::string name = take().text;
        if (at(Token::Kind::LParen)) {
          take();
          Expr e;
          e.kind = Expr::Kind::Call;
          e.name = std::move(name);
          e.loc = loc;
          e.kids.push_back(expr());
          while (at(Token::Kind::Comma)) { take(); e.kids.push_back(expr()); }
          expect(Token::Kind::RParen);
          return e;
        }
        Expr e = Expr::type_ref(std::move(name));
        e.loc = loc;
        return e;
      }
      default:
        fail("expression");
    }
  }
};

}  // namespace

std::vector<Definition> parse_definitions(const std::vector<Token>& tokens) {
  return Parser(tokens).definitions();
}

Expr parse_expression(std::string_view text, const std::string& file) {
  return Parser(tokenize(text, file)).expression_only();
}

// ---------------------------------------------------------------------------
// template expansion

namespace {

class TemplateExpander {
 public:
  TemplateExpander(const std::vector<Definition>& defs,
                   const std::set<std::string>& functions)
      : functions_(functions) {
    for (const auto& d : defs) {
      if (d.kind != Definition::Kind::Template) continue;
      if (functions_.count(d.name))
        throw Error(d.loc, "template '" + d.name +
                               "' collides with a built-in function");
      if (templates_.count(d.name))
        throw Error(d.loc, "template '" + d.name + "' defined twice");
      templates_.emplace(d.name, &d);
    }
  }

  std::vector<Definition> run(const std::vector<Definition>& defs) {
    std::vector<Definition> out;
    for (const auto& d : defs) {
      if (d.kind == Definition::Kind::Template) continue;
      Definition e = d;
      if (e.body) e.body = expand(*e.body, {}, {});
      out.push_back(std::move(e));
    }
    return out;
  }

 private:
  const std::set<std::string>& functions_;
  std::map<std::string, const Definition*> templates_;
  int call_counter_ = 0;

  // env maps template parameters to caller-side argument expressions;
  // stack holds the active template names for cycle detection.
  Expr expand(const Expr& e, const std::map<std::string, Expr>& env,
              std::vector<std::string> stack) {
    switch (e.kind) {
      case Expr::Kind::TypeRef: {
        auto it = env.find(e.name);
        if (it != env.end()) return it->second;
        return e;
      }
      case Expr::Kind::Call: {
        if (env.count(e.name))
          throw Error(e.loc, "template parameter '" + e.name +
                                 "' used as a call");
        auto it = templates_.find(e.name);
        if (it == templates_.end()) {
          if (functions_.count(e.name)) {
            Expr out = e;
            out.kids.clear();
            for (const auto& k : e.kids) out.kids.push_back(expand(k, env, stack));
            return out;
          }
          throw Error(e.loc, "unknown template '" + e.name + "'");
        }
        const Definition& tmpl = *it->second;
        for (const auto& active : stack)
          if (active == e.name) {
            std::string cycle;
            for (const auto& s : stack) cycle += s + " -> ";
            throw Error(e.loc, "cyclic template reference: " + cycle + e.name);
          }
        if (e.kids.size() != tmpl.params.size())
          throw Error(e.loc, "template '" + e.name + "' expects " +
                                 std::to_string(tmpl.params.size()) +
                                 " argument(s), got " +
                                 std::to_string(e.kids.size()));
        std::map<std::string, Expr> inner;
        for (size_t i = 0; i < tmpl.params.size(); ++i)
          inner.emplace(tmpl.params[i], expand(e.kids[i], env, stack));
        stack.push_back(e.name);
        int call_id = ++call_counter_;
        Expr body = rename_tags(*tmpl.body, e.name, call_id);
        return expand(body, inner, std::move(stack));
      }
      default: {
        Expr out = e;
        out.kids.clear();
        out.feats.clear();
        for (const auto& k : e.kids) out.kids.push_back(expand(k, env, stack));
        for (const auto& [f, v] : e.feats)
          out.feats.emplace_back(f, expand(v, env, stack));
        return out;
      }
    }
  }

  // coreference tags and group names local to a template body get a fresh
  // name per call so instantiations never capture each other
  static Expr rename_tags(const Expr& e, const std::string& tmpl, int call_id) {
    Expr out = e;
    std::string suffix = "~" + tmpl + std::to_string(call_id);
    if (e.kind == Expr::Kind::Coref || e.kind == Expr::Kind::DistDisj)
      out.name = e.name + suffix;
    out.kids.clear();
    out.feats.clear();
    for (const auto& k : e.kids) out.kids.push_back(rename_tags(k, tmpl, call_id));
    for (const auto& [f, v] : e.feats)
      out.feats.emplace_back(f, rename_tags(v, tmpl, call_id));
    return out;
  }
};

}  // namespace

std::vector<Definition> expand_templates(const std::vector<Definition>& defs,
                                         const std::set<std::string>& function_names) {
  return TemplateExpander(defs, function_names).run(defs);
}

// ---------------------------------------------------------------------------
// rendering back to surface syntax

namespace {

void render(const Expr& e, std::ostream& os, int prec);

void render_list(const std::vector<Expr>& kids, std::ostream& os,
                 const char* sep, int prec) {
  bool first = true;
  for (const auto& k : kids) {
    if (!first) os << sep;
    first = false;
    render(k, os, prec);
  }
}

void render(const Expr& e, std::ostream& os, int prec) {
  // precedence: disj 0, conj 1, factor 2
  switch (e.kind) {
    case Expr::Kind::Disj:
      if (prec > 0) os << "(";
      render_list(e.kids, os, " | ", 1);
      if (prec > 0) os << ")";
      break;
    case Expr::Kind::Conj:
      if (prec > 1) os << "(";
      render_list(e.kids, os, " & ", 2);
      if (prec > 1) os << ")";
      break;
    case Expr::Kind::DistDisj:
      os << "%" << e.name << "(";
      render_list(e.kids, os, ", ", 0);
      os << ")";
      break;
    case Expr::Kind::Neg:
      os << "~";
      render(e.kids.front(), os, 2);
      break;
    case Expr::Kind::Avm: {
      os << "[";
      bool first = true;
      for (const auto& [f, v] : e.feats) {
        if (!first) os << ", ";
        first = false;
        os << f << ": ";
        render(v, os, 0);
      }
      os << "]";
      break;
    }
    case Expr::Kind::Coref: os << "#" << e.name; break;
    case Expr::Kind::Atom: os << (e.numeric ? "" : "'") << e.name; break;
    case Expr::Kind::TypeRef: os << e.name; break;
    case Expr::Kind::Call:
      os << e.name << "(";
      render_list(e.kids, os, ", ", 0);
      os << ")";
      break;
  }
}

}  // namespace

std::string to_string(const Expr& e) {
  std::ostringstream os;
  render(e, os, 0);
  return os.str();
}

std::string to_string(const Definition& d) {
  std::ostringstream os;
  switch (d.kind) {
    case Definition::Kind::SortType: {
      os << "sort " << d.name << " < ";
      for (size_t i = 0; i < d.parents.size(); ++i)
        os << (i ? ", " : "") << d.parents[i];
      os << ".";
      break;
    }
    case Definition::Kind::Incompat: {
      os << "incompatible {";
      for (size_t i = 0; i < d.parents.size(); ++i)
        os << (i ? ", " : "") << d.parents[i];
      os << "}.";
      break;
    }
    case Definition::Kind::Partition: {
      os << "partition " << d.name << " {";
      for (size_t i = 0; i < d.parents.size(); ++i)
        os << (i ? ", " : "") << d.parents[i];
      os << "}.";
      break;
    }
    case Definition::Kind::Template:
    case Definition::Kind::AvmType: {
      os << d.name;
      if (d.kind == Definition::Kind::Template) {
        os << "(";
        for (size_t i = 0; i < d.params.size(); ++i)
          os << (i ? ", " : "") << d.params[i];
        os << ")";
      }
      os << " := ";
      bool wrote = false;
      if (d.kind == Definition::Kind::AvmType) {
        for (size_t i = 0; i < d.parents.size(); ++i) {
          os << (i ? " & " : "") << d.parents[i];
          wrote = true;
        }
      }
      if (d.body) {
        if (wrote) os << " & ";
        render(*d.body, os, d.body->kind == Expr::Kind::Conj && wrote ? 2 : 1);
        wrote = true;
      }
      if (!wrote) os << "[]";
      os << ".";
      break;
    }
  }
  return os.str();
}

}  // namespace tfs
