// tfskit -- typed feature structures with distributed disjunctions
//
// A FeatureStructure is a rooted graph of typed nodes. Disjunctive
// information is never expanded into copies: alternatives at any number of
// positions covary through a shared group, and every piece of content
// (type constraints, arcs, node equalities) carries a context, a
// conjunction of (group, index) choices under which it holds. The empty
// context means "unconditionally". A full assignment picks one live index
// per group; the structure denotes the set of its consistent assignments
// (its disjunctive normal form).
//
// Structures are values. They are mutable only inside a unification
// transaction; every public operation takes const inputs and returns a
// fresh structure, so completed structures can be shared across threads.

#ifndef TFS_FS_HPP
#define TFS_FS_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tfs/ast.hpp"
#include "tfs/core.hpp"
#include "tfs/lattice.hpp"

namespace tfs {

struct Choice {
  GroupId group;
  int index;
  auto operator<=>(const Choice&) const = default;
};

// A context: sorted set of choices, at most one per group.
class Context {
 public:
  Context() = default;
  explicit Context(std::vector<Choice> sorted) : choices_(std::move(sorted)) {}
  static Context single(GroupId g, int index) { return Context({{g, index}}); }

  bool empty() const { return choices_.empty(); }
  size_t size() const { return choices_.size(); }
  const std::vector<Choice>& choices() const { return choices_; }

  bool subset_of(const Context& k) const;
  bool compatible(const Context& o) const;
  // union of the two choice sets; callers must check compatibility first
  Context join(const Context& o) const;
  std::optional<int> index_of(GroupId g) const;
  Context without(GroupId g) const;

  auto operator<=>(const Context&) const = default;
  std::string str() const;

 private:
  std::vector<Choice> choices_;
};

struct GroupInfo {
  int arity = 0;
  std::uint32_t live = 0;  // bitmask over indices
  std::string label;       // origin, e.g. "defname:groupname"

  int live_count() const { return __builtin_popcount(live); }
  bool is_live(int i) const { return (live >> i) & 1; }
};

struct GuardedType {
  Context ctx;
  TypeId type;
};

struct Arc {
  FeatId feat;
  Context ctx;
  NodeId target;
};

struct Forward {
  Context ctx;
  NodeId target;
};

struct FsNode {
  std::vector<Forward> forwards;   // pairwise incompatible guards
  std::vector<GuardedType> types;  // pairwise-meet-closed (see fs.cpp)
  std::vector<Arc> arcs;
  // expansion bookkeeping (module expand)
  bool needs_expand = false;
  bool frontier = false;
  std::int16_t unfold_depth = 0;
};

enum class NegKind { Type, Atom, PathNeq };

struct NegConstraint {
  NegKind kind;
  NodeId node;
  TypeId type = -1;     // Type/Atom
  NodeId other = kNoNode;  // PathNeq
  Context ctx;
};

struct FunConstraint {
  std::string fn;
  std::vector<NodeId> args;
  NodeId result;
  Context ctx;
  bool done = false;
};

// Total functions over atom names. `numeric` flags on arguments follow the
// atom entries; the result carries its own flag.
struct AtomValue {
  std::string text;
  bool numeric = false;
};
using AtomFunction =
    std::function<std::optional<AtomValue>(const std::vector<AtomValue>&)>;

class FunctionRegistry {
 public:
  void add(const std::string& name, AtomFunction fn);
  const AtomFunction* find(const std::string& name) const;
  bool has(const std::string& name) const { return find(name) != nullptr; }
  std::set<std::string> names() const;

  static const FunctionRegistry& builtins();  // concat, add, eq

 private:
  std::map<std::string, AtomFunction> fns_;
};

class FeatureStructure {
 public:
  FeatureStructure() = default;

  const Lattice* lattice() const { return lattice_; }
  std::uint64_t generation() const { return generation_; }
  NodeId root() const { return root_; }
  const std::vector<FsNode>& nodes() const { return nodes_; }
  std::vector<FsNode>& nodes_mutable() { return nodes_; }
  const std::map<GroupId, GroupInfo>& groups() const { return groups_; }
  const std::vector<Context>& nogoods() const { return nogoods_; }
  const std::vector<NegConstraint>& negatives() const { return negatives_; }
  const std::vector<FunConstraint>& functionals() const { return functionals_; }

  bool disjunction_free() const { return groups_.empty(); }

  // follows forwards whose guard is implied by `ctx`
  NodeId resolve(NodeId n, const Context& ctx) const;
  // most specific type constraint applying under a full assignment;
  // nullopt when the constraints meet in bottom
  std::optional<TypeId> type_at(NodeId n, const Context& full) const;
  // convenience for disjunction-free structures
  TypeId plain_type(NodeId n) const;
  std::optional<NodeId> arc_target(NodeId n, FeatId f, const Context& full) const;
  std::optional<NodeId> node_at_path(std::span<const FeatId> path) const;

  bool context_dead(const Context& c) const;

  // enumerates full assignments over all groups, lexicographic by
  // (group id, index), and invokes fn on each live one
  void for_each_assignment(const std::function<void(const Context&)>& fn) const;

  // -- construction / mutation (engine internals and module expand) -----------
  NodeId add_node();
  void set_root(NodeId n) { root_ = n; }
  void bind(const Lattice& lat);
  void set_registry(const FunctionRegistry& r) { registry_ = &r; }
  const FunctionRegistry& registry() const { return *registry_; }
  std::map<GroupId, GroupInfo>& groups_mutable() { return groups_; }
  std::vector<Context>& nogoods_mutable() { return nogoods_; }
  std::vector<NegConstraint>& negatives_mutable() { return negatives_; }
  std::vector<FunConstraint>& functionals_mutable() { return functionals_; }

 private:
  std::vector<FsNode> nodes_;
  NodeId root_ = kNoNode;
  std::map<GroupId, GroupInfo> groups_;
  std::vector<Context> nogoods_;
  std::vector<NegConstraint> negatives_;
  std::vector<FunConstraint> functionals_;
  const Lattice* lattice_ = nullptr;
  std::uint64_t generation_ = 0;
  const FunctionRegistry* registry_ = &FunctionRegistry::builtins();
};

// -- operations ---------------------------------------------------------------

// Compiles a template-free expression. Group names are scoped to the call.
// Throws Error on unsupported negation (negation over a complex avm),
// group-arity mismatches and unknown types.
FeatureStructure build(const Expr& e, const Lattice& lat,
                       const FunctionRegistry& reg = FunctionRegistry::builtins(),
                       const std::string& scope = "");

// Unification. Inputs must share one finalized lattice generation (throws
// Error otherwise) and must have disjoint group ids; every build/
// rename_apart allocates fresh ids, so structures from independent calls
// are always apart. Failure is a normal empty return.
std::optional<FeatureStructure> unify(const FeatureStructure& a,
                                      const FeatureStructure& b);

// One disjunction-free structure per consistent full assignment, in
// lexicographic assignment order.
std::vector<FeatureStructure> dnf(const FeatureStructure& fs);

// Removes dead indices and exhausted groups, inlines single-alternative
// groups, merges duplicate alternatives. Never changes the denotation.
FeatureStructure simplify(const FeatureStructure& fs);

// Substructure reachable at `path`; absent if undefined in every context.
std::optional<FeatureStructure> extract_subterm(const FeatureStructure& fs,
                                                std::span<const FeatId> path);

// Re-runs functional-constraint evaluation to fixpoint. Failure (a computed
// value clashing with existing content) is an empty return; unknown function
// names throw.
std::optional<FeatureStructure> eval_functional(const FeatureStructure& fs,
                                                const FunctionRegistry& reg);

// Subsumption on disjunction-free structures (throws on disjunctive input):
// true iff a structure-preserving map from a's graph into b's exists.
bool subsumes_fs(const FeatureStructure& a, const FeatureStructure& b);

// Fresh group ids and node identities; isomorphic to the input.
FeatureStructure rename_apart(const FeatureStructure& fs);

FeatureStructure make_single_node(const Lattice& lat, TypeId t);

// Drops nodes unreachable from the root (and from live functional
// constraints), plus groups no longer mentioned anywhere.
void gc(FeatureStructure& fs);

// Deterministic canonical form of a disjunction-free structure; equal
// strings iff isomorphic. Used by tests and deduplication.
std::string canonical_form(const FeatureStructure& fs);

// Sorted canonical forms of dnf(fs) (duplicates kept).
std::vector<std::string> dnf_signature(const FeatureStructure& fs);

}  // namespace tfs

#endif
