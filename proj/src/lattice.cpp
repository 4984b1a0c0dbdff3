// tfskit -- type lattice: subsumption encoding, glb/lub, incompatibility

#include "tfs/lattice.hpp"

#include <algorithm>
#include <cassert>
#include <mutex>

namespace tfs {

const char* type_kind_name(TypeKind k) {
  switch (k) {
    case TypeKind::Undeclared: return "undeclared";
    case TypeKind::Avm: return "avm";
    case TypeKind::Sort: return "sort";
    case TypeKind::Builtin: return "builtin";
    case TypeKind::Atom: return "atom";
    case TypeKind::Synthetic: return "synthetic";
  }
  return "?";
}

void TypeSet::set(TypeId t) {
  size_t w = static_cast<size_t>(t) / 64;
  if (w >= words_.size()) words_.resize(w + 1, 0);
  words_[w] |= std::uint64_t(1) << (t % 64);
}

bool TypeSet::test(TypeId t) const {
  size_t w = static_cast<size_t>(t) / 64;
  return w < words_.size() && (words_[w] >> (t % 64)) & 1;
}

void TypeSet::unite(const TypeSet& o) {
  if (o.words_.size() > words_.size()) words_.resize(o.words_.size(), 0);
  for (size_t i = 0; i < o.words_.size(); ++i) words_[i] |= o.words_[i];
}

void TypeSet::intersect(const TypeSet& o) {
  if (words_.size() > o.words_.size()) words_.resize(o.words_.size());
  for (size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
}

bool TypeSet::empty() const {
  for (auto w : words_)
    if (w) return false;
  return true;
}

int TypeSet::count() const {
  int n = 0;
  for (auto w : words_) n += __builtin_popcountll(w);
  return n;
}

std::vector<TypeId> TypeSet::members() const {
  std::vector<TypeId> out;
  for (size_t i = 0; i < words_.size(); ++i) {
    std::uint64_t w = words_[i];
    while (w) {
      int b = __builtin_ctzll(w);
      out.push_back(static_cast<TypeId>(i * 64 + b));
      w &= w - 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Lattice::Lattice() {
  TypeId top = add_entry("top", TypeKind::Builtin);
  entries_[top].defined = true;
  TypeId atom = add_entry("atom", TypeKind::Builtin);
  entries_[atom].defined = true;
  entries_[atom].parents = {kTopType};
  assert(top == kTopType && atom == kAtomRoot);
}

TypeId Lattice::add_entry(const std::string& name, TypeKind kind) const {
  TypeId id = static_cast<TypeId>(entries_.size());
  TypeEntry e;
  e.id = id;
  e.name = name;
  e.kind = kind;
  entries_.push_back(std::move(e));
  by_name_.emplace(name, id);
  return id;
}

void Lattice::invalidate() {
  ++generation_;
  finalized_ = false;
  ancestors_.clear();
  declared_descendants_.clear();
  glb_memo_.clear();
}

TypeId Lattice::ensure(const std::string& name) {
  auto it = by_name_.find(name);
  if (it != by_name_.end()) return it->second;
  TypeId id = add_entry(name, TypeKind::Undeclared);
  entries_[id].parents = {kTopType};
  return id;
}

void Lattice::scan_skeleton(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::TypeRef: ensure(e.name); break;
    case Expr::Kind::Atom: intern_atom(e.name, e.numeric); break;
    case Expr::Kind::Avm:
      for (const auto& [f, v] : e.feats) {
        feature(f);
        scan_skeleton(v);
      }
      break;
    default:
      for (const auto& k : e.kids) scan_skeleton(k);
      break;
  }
}

TypeId Lattice::define(const std::string& name, TypeKind kind,
                       const std::vector<std::string>& parents,
                       std::shared_ptr<const Expr> skeleton,
                       const SourceLoc& loc) {
  TypeId id = ensure(name);
  TypeEntry& e = entries_[id];
  if (e.defined && e.kind != kind)
    throw Error(loc, "type '" + name + "' redefined with kind " +
                         type_kind_name(kind) + ", was " +
                         type_kind_name(e.kind));
  if (e.kind == TypeKind::Builtin)
    throw Error(loc, "cannot redefine built-in type '" + name + "'");
  e.kind = kind;
  e.defined = true;
  e.loc = loc;
  e.parents.clear();
  for (const auto& p : parents) {
    TypeId pid = ensure(p);
    if (entries_[pid].kind == TypeKind::Atom)
      throw Error(loc, "atom '" + p + "' cannot have subtypes");
    if (std::find(e.parents.begin(), e.parents.end(), pid) == e.parents.end())
      e.parents.push_back(pid);
  }
  if (e.parents.empty()) e.parents.push_back(kTopType);
  e.skeleton = std::move(skeleton);
  if (e.skeleton) scan_skeleton(*e.skeleton);
  invalidate();
  return id;
}

TypeId Lattice::intern_atom(const std::string& value, bool numeric) const {
  {
    std::shared_lock rd(mutex_);
    auto it = atoms_.find({value, numeric});
    if (it != atoms_.end()) return it->second;
  }
  std::unique_lock wr(mutex_);
  auto it = atoms_.find({value, numeric});
  if (it != atoms_.end()) return it->second;
  TypeId id = add_entry((numeric ? "" : "'") + value, TypeKind::Atom);
  TypeEntry& e = entries_[id];
  e.defined = true;
  e.numeric = numeric;
  e.parents = {kAtomRoot};
  atoms_.emplace(std::make_pair(value, numeric), id);
  if (finalized_) {
    TypeSet anc = ancestors_[kAtomRoot];
    anc.set(id);
    ancestors_.push_back(std::move(anc));
  }
  return id;
}

std::optional<TypeId> Lattice::find_atom(const std::string& value,
                                         bool numeric) const {
  std::shared_lock rd(mutex_);
  auto it = atoms_.find({value, numeric});
  if (it == atoms_.end()) return std::nullopt;
  return it->second;
}

void Lattice::declare_incompatible(const std::vector<std::string>& names,
                                   const SourceLoc& loc) {
  if (names.size() < 2)
    throw Error(loc, "incompatibility set needs at least two members");
  std::vector<TypeId> ids;
  for (const auto& n : names) ids.push_back(ensure(n));
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw Error(loc, "incompatibility set lists a type twice");
  incompat_sets_.push_back(std::move(ids));
  invalidate();
}

void Lattice::declare_partition(const std::string& parent,
                                const std::vector<std::string>& children,
                                const SourceLoc& loc) {
  if (children.empty()) throw Error(loc, "partition needs children");
  {
    std::set<std::string> uniq(children.begin(), children.end());
    if (uniq.size() != children.size())
      throw Error(loc, "partition '" + parent + "' lists a child twice");
  }
  TypeId pid = ensure(parent);
  for (const auto& c : children) {
    TypeId cid = ensure(c);
    TypeEntry& e = entries_[cid];
    if (!e.defined) {
      e.kind = TypeKind::Sort;
      e.defined = true;
      e.parents = {pid};
    } else if (std::find(e.parents.begin(), e.parents.end(), pid) ==
               e.parents.end()) {
      e.parents.push_back(pid);
    }
  }
  if (!entries_[pid].defined) {
    entries_[pid].kind = TypeKind::Sort;
    entries_[pid].defined = true;
  }
  std::vector<TypeId> ids;
  for (const auto& c : children) ids.push_back(ensure(c));
  if (ids.size() >= 2) {
    std::vector<TypeId> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    incompat_sets_.push_back(std::move(sorted));
  }
  partitions_.emplace_back(pid, std::move(ids));
  invalidate();
}

void Lattice::load(const std::vector<Definition>& defs) {
  for (const auto& d : defs) {
    switch (d.kind) {
      case Definition::Kind::AvmType:
        define(d.name, TypeKind::Avm, d.parents,
               d.body ? std::make_shared<const Expr>(*d.body) : nullptr, d.loc);
        break;
      case Definition::Kind::SortType:
        define(d.name, TypeKind::Sort, d.parents, nullptr, d.loc);
        break;
      case Definition::Kind::Incompat:
        declare_incompatible(d.parents, d.loc);
        break;
      case Definition::Kind::Partition:
        declare_partition(d.name, d.parents, d.loc);
        break;
      case Definition::Kind::Template:
        throw Error(d.loc, "templates must be expanded before loading");
    }
  }
}

void Lattice::finalize() {
  // all used types must be defined by now
  std::vector<std::string> missing;
  for (const auto& e : entries_)
    if (!e.defined) missing.push_back(e.name);
  if (!missing.empty()) {
    std::string msg = "undefined type(s):";
    for (const auto& m : missing) msg += " " + m;
    throw Error(msg);
  }

  const int n = static_cast<int>(entries_.size());

  // topological order over the parent relation; detects cycles
  std::vector<int> state(n, 0);  // 0 new, 1 active, 2 done
  std::vector<TypeId> order;
  order.reserve(n);
  std::vector<TypeId> stack;
  for (TypeId start = 0; start < n; ++start) {
    if (state[start]) continue;
    stack.push_back(start);
    while (!stack.empty()) {
      TypeId t = stack.back();
      if (state[t] == 0) {
        state[t] = 1;
        for (TypeId p : entries_[t].parents) {
          if (state[p] == 1) {
            std::string cycle = entries_[p].name;
            for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
              cycle += " < " + entries_[*it].name;
              if (*it == p) break;
            }
            throw Error("type hierarchy cycle: " + cycle);
          }
          if (state[p] == 0) stack.push_back(p);
        }
      } else {
        stack.pop_back();
        if (state[t] == 1) {
          state[t] = 2;
          order.push_back(t);
        }
      }
    }
  }

  ancestors_.clear();
  ancestors_.resize(n);
  for (TypeId t : order) {
    TypeSet s;
    s.set(t);
    for (TypeId p : entries_[t].parents) s.unite(ancestors_[p]);
    ancestors_[t] = std::move(s);
  }

  // no type may sit below two distinct members of one incompatibility set
  for (const auto& set : incompat_sets_) {
    for (TypeId t = 0; t < n; ++t) {
      int hits = 0;
      TypeId first = -1, second = -1;
      for (TypeId m : set)
        if (ancestors_[t].test(m)) {
          if (++hits == 1) first = m; else second = m;
          if (hits == 2) break;
        }
      if (hits >= 2)
        throw Error("type '" + entries_[t].name +
                    "' is below incompatible types '" + entries_[first].name +
                    "' and '" + entries_[second].name + "'");
    }
  }

  for (const auto& [pid, children] : partitions_)
    for (TypeId c : children)
      if (!ancestors_[c].test(pid))
        throw Error("partition child '" + entries_[c].name +
                    "' is no longer a subtype of '" + entries_[pid].name + "'");

  declared_descendants_.clear();
  glb_memo_.clear();
  finalized_ = true;
}

std::optional<TypeId> Lattice::by_name(const std::string& name) const {
  std::shared_lock rd(mutex_);
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::vector<TypeId> Lattice::children_of(TypeId t) const {
  std::shared_lock rd(mutex_);
  std::vector<TypeId> out;
  for (const auto& e : entries_)
    if (std::find(e.parents.begin(), e.parents.end(), t) != e.parents.end())
      out.push_back(e.id);
  return out;
}

bool Lattice::subsumes(TypeId a, TypeId b) const {
  std::shared_lock rd(mutex_);
  return ancestors_[b].test(a);
}

const TypeSet& Lattice::ancestors(TypeId t) const { return ancestors_[t]; }

bool Lattice::incompatible_locked(TypeId a, TypeId b) const {
  for (const auto& set : incompat_sets_) {
    for (TypeId u : set) {
      if (!ancestors_[a].test(u)) continue;
      for (TypeId v : set)
        if (v != u && ancestors_[b].test(v)) return true;
    }
  }
  return false;
}

bool Lattice::incompatible(TypeId a, TypeId b) const {
  std::shared_lock rd(mutex_);
  return incompatible_locked(a, b);
}

// declared descendants only: synthetic types never join the candidate sets
// for bound computation, so memoized glb results stay stable
const TypeSet& Lattice::declared_descendants_locked(TypeId t) const {
  auto it = declared_descendants_.find(t);
  if (it != declared_descendants_.end()) return it->second;
  TypeSet s;
  int n = static_cast<int>(entries_.size());
  for (TypeId d = 0; d < n; ++d)
    if (entries_[d].kind != TypeKind::Synthetic && ancestors_[d].test(t))
      s.set(d);
  return declared_descendants_.emplace(t, std::move(s)).first->second;
}

TypeId Lattice::make_synthetic_locked(TypeId a, TypeId b) const {
  std::string name = entries_[a].name + "&" + entries_[b].name;
  while (by_name_.count(name)) name += "'";
  TypeId id = add_entry(name, TypeKind::Synthetic);
  TypeEntry& e = entries_[id];
  e.defined = true;
  e.parents = {a, b};
  TypeSet anc = ancestors_[a];
  anc.unite(ancestors_[b]);
  anc.set(id);
  ancestors_.push_back(std::move(anc));
  return id;
}

GlbResult Lattice::glb_locked(TypeId a, TypeId b) const {
  if (a == b) return GlbResult::of(a);
  if (ancestors_[b].test(a)) return GlbResult::of(b);
  if (ancestors_[a].test(b)) return GlbResult::of(a);

  auto key = std::minmax(a, b);
  auto memo = glb_memo_.find(key);
  if (memo != glb_memo_.end()) return memo->second;

  GlbResult result;
  if (incompatible_locked(a, b)) {
    result = GlbResult::bottom();
  } else {
    TypeSet common = declared_descendants_locked(a);
    common.intersect(declared_descendants_locked(b));
    std::vector<TypeId> cands = common.members();
    // keep the maximal (most general) candidates
    std::vector<TypeId> maximal;
    for (TypeId c : cands) {
      bool dominated = false;
      for (TypeId o : cands)
        if (o != c && ancestors_[c].test(o)) { dominated = true; break; }
      if (!dominated) maximal.push_back(c);
    }
    if (maximal.empty()) {
      bool both_avm = entries_[a].kind == TypeKind::Avm ||
                      entries_[a].kind == TypeKind::Synthetic;
      both_avm = both_avm && (entries_[b].kind == TypeKind::Avm ||
                              entries_[b].kind == TypeKind::Synthetic);
      if (both_avm)
        result = GlbResult::of(make_synthetic_locked(key.first, key.second));
      else
        result = GlbResult::bottom();
    } else if (maximal.size() == 1) {
      result = GlbResult::of(maximal.front());
    } else {
      result.tag = GlbResult::Tag::Disjunction;
      std::sort(maximal.begin(), maximal.end());
      result.alternatives = std::move(maximal);
    }
  }
  glb_memo_.emplace(key, result);
  return result;
}

GlbResult Lattice::glb(TypeId a, TypeId b) const {
  // fast path without the exclusive lock
  {
    std::shared_lock rd(mutex_);
    if (a == b) return GlbResult::of(a);
    if (ancestors_[b].test(a)) return GlbResult::of(b);
    if (ancestors_[a].test(b)) return GlbResult::of(a);
    auto memo = glb_memo_.find(std::minmax(a, b));
    if (memo != glb_memo_.end()) return memo->second;
  }
  std::unique_lock wr(mutex_);
  return glb_locked(a, b);
}

TypeId Lattice::lub(TypeId a, TypeId b) const {
  std::shared_lock rd(mutex_);
  if (a == b) return a;
  if (ancestors_[b].test(a)) return a;
  if (ancestors_[a].test(b)) return b;
  TypeSet common = ancestors_[a];
  common.intersect(ancestors_[b]);
  std::vector<TypeId> cands = common.members();
  // minimal = most specific common ancestors; ties go to the smaller id
  TypeId best = kTopType;
  bool found = false;
  for (TypeId c : cands) {
    bool minimal = true;
    for (TypeId o : cands)
      if (o != c && ancestors_[o].test(c)) { minimal = false; break; }
    if (minimal && (!found || c < best)) { best = c; found = true; }
  }
  return best;
}

FeatId Lattice::feature(const std::string& name) const {
  {
    std::shared_lock rd(mutex_);
    auto it = feature_ids_.find(name);
    if (it != feature_ids_.end()) return it->second;
  }
  std::unique_lock wr(mutex_);
  auto it = feature_ids_.find(name);
  if (it != feature_ids_.end()) return it->second;
  FeatId id = static_cast<FeatId>(feature_names_.size());
  feature_names_.push_back(name);
  feature_ids_.emplace(name, id);
  return id;
}

std::optional<FeatId> Lattice::find_feature(const std::string& name) const {
  std::shared_lock rd(mutex_);
  auto it = feature_ids_.find(name);
  if (it == feature_ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Lattice::feature_name(FeatId f) const {
  return feature_names_[f];
}

int Lattice::feature_count() const {
  return static_cast<int>(feature_names_.size());
}

}  // namespace tfs
