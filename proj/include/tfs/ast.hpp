// tfskit -- definition ASTs produced by the description-language front end

#ifndef TFS_AST_HPP
#define TFS_AST_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tfs/core.hpp"

namespace tfs {

// One expression of the description language. A plain value type; sub-
// expressions live in `kids` (conj/disj/neg/call) or `feats` (avm).
struct Expr {
  enum class Kind {
    Conj,      // kids: conjuncts (>= 2)
    Disj,      // kids: alternatives (>= 2), anonymous group
    DistDisj,  // kids: alternatives (>= 2), named group `name`
    Neg,       // kids: exactly one operand
    Avm,       // feats: ordered (feature, value) rows
    Coref,     // name: tag
    Atom,      // name: symbol text or digits; numeric flag set for numbers
    TypeRef,   // name: type name
    Call,      // name: template or built-in function; kids: arguments
  };

  Kind kind = Kind::TypeRef;
  std::string name;
  bool numeric = false;
  std::vector<Expr> kids;
  std::vector<std::pair<std::string, Expr>> feats;
  SourceLoc loc;

  static Expr type_ref(std::string n) {
    Expr e;
    e.kind = Kind::TypeRef;
    e.name = std::move(n);
    return e;
  }
  static Expr atom(std::string n, bool num = false) {
    Expr e;
    e.kind = Kind::Atom;
    e.name = std::move(n);
    e.numeric = num;
    return e;
  }
};

// A top-level statement of a source file.
struct Definition {
  enum class Kind { AvmType, SortType, Template, Incompat, Partition };

  Kind kind = Kind::AvmType;
  std::string name;                   // type/template name; partition parent
  std::vector<std::string> parents;   // supertypes; incompat members;
                                      // partition children
  std::optional<Expr> body;           // avm types and templates
  std::vector<std::string> params;    // templates only
  SourceLoc loc;
};

}  // namespace tfs

#endif
