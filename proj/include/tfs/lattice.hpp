// tfskit -- the type lattice
//
// Holds every declared type, the ancestor bit-vector encoding computed by
// finalize(), incompatibility sets and partitions, and the interned feature
// and atom tables. Definition order: define/declare/finalize are single-
// writer; after finalize() the encoding is immutable and query operations
// (subsumes, glb, lub) may run from any thread. glb may still intern
// synthetic conjunctive types and atoms on demand; those appends are guarded
// internally and never invalidate existing entries.

#ifndef TFS_LATTICE_HPP
#define TFS_LATTICE_HPP

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "tfs/ast.hpp"
#include "tfs/core.hpp"

namespace tfs {

enum class TypeKind { Undeclared, Avm, Sort, Builtin, Atom, Synthetic };

const char* type_kind_name(TypeKind k);

struct TypeEntry {
  TypeId id = -1;
  std::string name;
  TypeKind kind = TypeKind::Undeclared;
  std::vector<TypeId> parents;
  std::shared_ptr<const Expr> skeleton;  // avm types; may be null
  bool defined = false;
  bool numeric = false;  // atoms only
  SourceLoc loc;
};

// Dynamic bitset over type ids; ancestor sets only ever grow at the end.
class TypeSet {
 public:
  void set(TypeId t);
  bool test(TypeId t) const;
  void unite(const TypeSet& o);
  void intersect(const TypeSet& o);
  bool empty() const;
  int count() const;
  std::vector<TypeId> members() const;

 private:
  std::vector<std::uint64_t> words_;
};

struct GlbResult {
  enum class Tag { Type, Bottom, Disjunction };
  Tag tag = Tag::Bottom;
  TypeId type = -1;                 // Tag::Type
  std::vector<TypeId> alternatives; // Tag::Disjunction, sorted by id

  static GlbResult of(TypeId t) { return {Tag::Type, t, {}}; }
  static GlbResult bottom() { return {Tag::Bottom, -1, {}}; }
  bool is_bottom() const { return tag == Tag::Bottom; }
};

class Lattice {
 public:
  Lattice();

  // -- definition phase -----------------------------------------------------
  TypeId ensure(const std::string& name);  // placeholder if unknown
  TypeId define(const std::string& name, TypeKind kind,
                const std::vector<std::string>& parents,
                std::shared_ptr<const Expr> skeleton,
                const SourceLoc& loc = {});
  void declare_incompatible(const std::vector<std::string>& names,
                            const SourceLoc& loc = {});
  void declare_partition(const std::string& parent,
                         const std::vector<std::string>& children,
                         const SourceLoc& loc = {});
  // Loads a whole batch of template-free definitions.
  void load(const std::vector<Definition>& defs);

  void finalize();  // throws Error on cycles / undefined / contradictions

  // -- queries (finalized lattice) -------------------------------------------
  bool finalized() const { return finalized_; }
  std::uint64_t generation() const { return generation_; }

  std::optional<TypeId> by_name(const std::string& name) const;
  const TypeEntry& entry(TypeId t) const { return entries_[t]; }
  int size() const { return static_cast<int>(entries_.size()); }
  std::vector<TypeId> children_of(TypeId t) const;

  // Atoms and synthetic conjunctive types may be interned after finalize
  // (functional constraints build new atoms at run time); the tables below
  // are append-only and internally synchronized.
  TypeId intern_atom(const std::string& value, bool numeric) const;
  std::optional<TypeId> find_atom(const std::string& value, bool numeric) const;

  // a subsumes b: a is equal to or more general than b
  bool subsumes(TypeId a, TypeId b) const;
  bool incompatible(TypeId a, TypeId b) const;
  GlbResult glb(TypeId a, TypeId b) const;
  TypeId lub(TypeId a, TypeId b) const;
  const TypeSet& ancestors(TypeId t) const;

  // -- features ---------------------------------------------------------------
  // Features are interned in first-appearance order; the table is append-
  // only and synchronized, so interning is allowed after finalize too.
  FeatId feature(const std::string& name) const;
  std::optional<FeatId> find_feature(const std::string& name) const;
  const std::string& feature_name(FeatId f) const;
  int feature_count() const;

 private:
  mutable std::deque<TypeEntry> entries_;
  mutable std::map<std::string, TypeId> by_name_;
  mutable std::map<std::pair<std::string, bool>, TypeId> atoms_;
  std::vector<std::vector<TypeId>> incompat_sets_;
  std::vector<std::pair<TypeId, std::vector<TypeId>>> partitions_;
  bool finalized_ = false;
  std::uint64_t generation_ = 0;

  mutable std::deque<TypeSet> ancestors_;  // index = TypeId; incl. self
  mutable std::map<TypeId, TypeSet> declared_descendants_;  // lazy cache
  mutable std::map<std::pair<TypeId, TypeId>, GlbResult> glb_memo_;
  mutable std::shared_mutex mutex_;  // guards runtime interning + memos

  mutable std::deque<std::string> feature_names_;
  mutable std::map<std::string, FeatId> feature_ids_;

  void invalidate();
  void scan_skeleton(const Expr& e);
  TypeId add_entry(const std::string& name, TypeKind kind) const;
  const TypeSet& declared_descendants_locked(TypeId t) const;
  GlbResult glb_locked(TypeId a, TypeId b) const;
  bool incompatible_locked(TypeId a, TypeId b) const;
  TypeId make_synthetic_locked(TypeId a, TypeId b) const;
};

}  // namespace tfs

#endif
