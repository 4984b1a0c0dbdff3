// tfskit -- front end for the type-description language
//
// Source files (.tfs) hold type, sort, template, incompatibility and
// partition definitions. The surface grammar is deterministic with one
// token of lookahead:
//
//   def    := IDENT [ "(" IDENT {"," IDENT} ")" ] ":=" expr "."
//           | "sort" IDENT "<" IDENT {"," IDENT} "."
//           | "incompatible" "{" IDENT "," IDENT {"," IDENT} "}" "."
//           | "partition" IDENT "{" IDENT {"," IDENT} "}" "."
//   expr   := term {"|" term}
//   term   := factor {"&" factor}
//   factor := "~" factor | IDENT | "'" SYMBOL | NUMBER | "#" IDENT
//           | "%" IDENT "(" expr {"," expr} ")"
//           | "[" [FEAT ":" expr {"," FEAT ":" expr}] "]"
//           | IDENT "(" expr {"," expr} ")" | "(" expr ")"
//
// Comments run from ";" to end of line.

#ifndef TFS_DSL_HPP
#define TFS_DSL_HPP

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "tfs/ast.hpp"

namespace tfs {

struct Token {
  enum class Kind {
    Ident, Feat, Number, Quoted, Hash, Percent,
    Define, Lt, Colon, Comma, Dot, Amp, Bar, Tilde,
    LBracket, RBracket, LParen, RParen, LBrace, RBrace,
    Eof,
  };
  Kind kind = Kind::Eof;
  std::string text;
  SourceLoc loc;
};

const char* token_kind_name(Token::Kind k);

std::vector<Token> tokenize(std::string_view text, const std::string& file = "<input>");

std::vector<Definition> parse_definitions(const std::vector<Token>& tokens);

// Parses a standalone expression (no trailing dot); used by the CLI.
Expr parse_expression(std::string_view text, const std::string& file = "<expr>");

// Replaces every template call by the (capture-free) instantiated template
// body and drops template definitions from the result. Calls to names in
// `function_names` are kept untouched; they denote functional constraints
// resolved later by the structure builder.
std::vector<Definition> expand_templates(const std::vector<Definition>& defs,
                                         const std::set<std::string>& function_names);

std::string to_string(const Expr& e);
std::string to_string(const Definition& d);

}  // namespace tfs

#endif
