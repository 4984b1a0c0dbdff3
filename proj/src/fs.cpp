// tfskit -- feature constraint solving over distributed disjunctions
//
// All mutation funnels through Session, a unification transaction. Node
// equalities requested under a partial context are recorded as guarded
// forwards; content (type constraints, arcs) always lives on nodes that are
// resolution-final for the region of context space it is guarded by. When a
// request touches a node with a forward whose guard is compatible with but
// not implied by the current context, the request splits: once into the
// joined context and once per completion of the guard's complement, so the
// guards on any one node stay pairwise incompatible and resolution stays
// deterministic.

#include "tfs/fs.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <deque>
#include <sstream>
#include <tuple>

namespace tfs {

namespace {

std::atomic<GroupId> g_next_group{1};

GroupId fresh_group_id() { return g_next_group.fetch_add(1); }

}  // namespace

// -- Context ------------------------------------------------------------------

bool Context::subset_of(const Context& k) const {
  size_t i = 0;
  for (const Choice& c : choices_) {
    while (i < k.choices_.size() && k.choices_[i] < c) ++i;
    if (i == k.choices_.size() || !(k.choices_[i] == c)) return false;
  }
  return true;
}

bool Context::compatible(const Context& o) const {
  size_t i = 0, j = 0;
  while (i < choices_.size() && j < o.choices_.size()) {
    if (choices_[i].group < o.choices_[j].group) ++i;
    else if (o.choices_[j].group < choices_[i].group) ++j;
    else {
      if (choices_[i].index != o.choices_[j].index) return false;
      ++i; ++j;
    }
  }
  return true;
}

Context Context::join(const Context& o) const {
  std::vector<Choice> out;
  out.reserve(choices_.size() + o.choices_.size());
  size_t i = 0, j = 0;
  while (i < choices_.size() || j < o.choices_.size()) {
    if (j == o.choices_.size() ||
        (i < choices_.size() && choices_[i] < o.choices_[j])) {
      out.push_back(choices_[i++]);
    } else if (i == choices_.size() || o.choices_[j] < choices_[i]) {
      out.push_back(o.choices_[j++]);
    } else {
      out.push_back(choices_[i]);
      ++i; ++j;
    }
  }
  return Context(std::move(out));
}

std::optional<int> Context::index_of(GroupId g) const {
  for (const Choice& c : choices_)
    if (c.group == g) return c.index;
  return std::nullopt;
}

Context Context::without(GroupId g) const {
  std::vector<Choice> out;
  for (const Choice& c : choices_)
    if (c.group != g) out.push_back(c);
  return Context(std::move(out));
}

std::string Context::str() const {
  std::string s = "{";
  bool first = true;
  for (const Choice& c : choices_) {
    if (!first) s += ",";
    first = false;
    s += std::to_string(c.group) + "=" + std::to_string(c.index);
  }
  return s + "}";
}

// -- FunctionRegistry -----------------------------------------------------------

void FunctionRegistry::add(const std::string& name, AtomFunction fn) {
  fns_[name] = std::move(fn);
}

const AtomFunction* FunctionRegistry::find(const std::string& name) const {
  auto it = fns_.find(name);
  return it == fns_.end() ? nullptr : &it->second;
}

std::set<std::string> FunctionRegistry::names() const {
  std::set<std::string> out;
  for (const auto& [n, _] : fns_) out.insert(n);
  return out;
}

const FunctionRegistry& FunctionRegistry::builtins() {
  static const FunctionRegistry reg = [] {
    FunctionRegistry r;
    r.add("concat", [](const std::vector<AtomValue>& args)
                        -> std::optional<AtomValue> {
      std::string s;
      for (const auto& a : args) s += a.text;
      return AtomValue{s, false};
    });
    r.add("add", [](const std::vector<AtomValue>& args)
                     -> std::optional<AtomValue> {
      long long sum = 0;
      for (const auto& a : args) {
        if (!a.numeric) return std::nullopt;
        sum += std::stoll(a.text);
      }
      return AtomValue{std::to_string(sum), true};
    });
    r.add("eq", [](const std::vector<AtomValue>& args)
                    -> std::optional<AtomValue> {
      if (args.size() != 2) return std::nullopt;
      bool eq = args[0].text == args[1].text && args[0].numeric == args[1].numeric;
      return AtomValue{eq ? "true" : "false", false};
    });
    return r;
  }();
  return reg;
}

// -- FeatureStructure queries ----------------------------------------------------

void FeatureStructure::bind(const Lattice& lat) {
  lattice_ = &lat;
  generation_ = lat.generation();
}

NodeId FeatureStructure::add_node() {
  nodes_.emplace_back();
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId FeatureStructure::resolve(NodeId n, const Context& ctx) const {
  for (;;) {
    const FsNode& node = nodes_[n];
    bool moved = false;
    for (const Forward& f : node.forwards) {
      if (f.ctx.subset_of(ctx)) {
        n = f.target;
        moved = true;
        break;
      }
    }
    if (!moved) return n;
  }
}

bool FeatureStructure::context_dead(const Context& c) const {
  for (const Choice& ch : c.choices()) {
    auto it = groups_.find(ch.group);
    if (it != groups_.end() && !it->second.is_live(ch.index)) return true;
  }
  for (const Context& ng : nogoods_)
    if (ng.subset_of(c)) return true;
  return false;
}

std::optional<TypeId> FeatureStructure::type_at(NodeId n, const Context& full) const {
  n = resolve(n, full);
  TypeId best = kTopType;
  for (const GuardedType& gt : nodes_[n].types) {
    if (!gt.ctx.subset_of(full)) continue;
    if (lattice_->subsumes(best, gt.type)) {
      best = gt.type;
    } else if (!lattice_->subsumes(gt.type, best)) {
      GlbResult g = lattice_->glb(best, gt.type);
      if (g.tag != GlbResult::Tag::Type) return std::nullopt;
      best = g.type;
    }
  }
  return best;
}

TypeId FeatureStructure::plain_type(NodeId n) const {
  auto t = type_at(n, Context{});
  return t ? *t : kTopType;
}

std::optional<NodeId> FeatureStructure::arc_target(NodeId n, FeatId f,
                                                   const Context& full) const {
  n = resolve(n, full);
  for (const Arc& a : nodes_[n].arcs)
    if (a.feat == f && a.ctx.subset_of(full)) return resolve(a.target, full);
  return std::nullopt;
}

std::optional<NodeId> FeatureStructure::node_at_path(
    std::span<const FeatId> path) const {
  NodeId n = resolve(root_, Context{});
  for (FeatId f : path) {
    auto t = arc_target(n, f, Context{});
    if (!t) return std::nullopt;
    n = *t;
  }
  return n;
}

void FeatureStructure::for_each_assignment(
    const std::function<void(const Context&)>& fn) const {
  std::vector<std::pair<GroupId, const GroupInfo*>> gs;
  for (const auto& [id, info] : groups_) gs.emplace_back(id, &info);

  std::vector<Choice> current;
  current.reserve(gs.size());
  std::function<void(size_t)> rec = [&](size_t k) {
    if (k == gs.size()) {
      fn(Context(std::vector<Choice>(current)));
      return;
    }
    const auto& [gid, info] = gs[k];
    for (int i = 0; i < info->arity; ++i) {
      if (!info->is_live(i)) continue;
      current.push_back({gid, i});
      rec(k + 1);
      current.pop_back();
    }
  };
  rec(0);
}

// -- Session --------------------------------------------------------------------

namespace detail {

// Partition of the extensions of `c` by guard `g` (compatible with c, not a
// subset of it): first the joined context, then one piece per first point of
// difference from g. The pieces are pairwise incompatible and cover c.
std::vector<Context> split_contexts(const FeatureStructure& fs,
                                    const Context& c, const Context& g) {
  std::vector<Context> out;
  out.push_back(c.join(g));
  Context fixed = c;
  for (const Choice& ch : g.choices()) {
    if (c.index_of(ch.group).has_value()) continue;
    auto it = fs.groups().find(ch.group);
    if (it == fs.groups().end()) continue;
    for (int j = 0; j < it->second.arity; ++j) {
      if (j == ch.index || !it->second.is_live(j)) continue;
      out.push_back(fixed.join(Context::single(ch.group, j)));
    }
    fixed = fixed.join(Context::single(ch.group, ch.index));
  }
  return out;
}

class Session {
 public:
  explicit Session(FeatureStructure& fs) : fs_(fs) {}

  bool failed() const { return failed_; }

  void request_merge(NodeId a, NodeId b, Context c) {
    queue_.push_back({a, b, std::move(c)});
  }

  GroupId add_group(int arity, std::string label, GroupId id = -1) {
    if (id < 0) id = fresh_group_id();
    GroupInfo info;
    info.arity = arity;
    info.live = arity >= 32 ? ~0u : ((1u << arity) - 1);
    info.label = std::move(label);
    fs_.groups_mutable().emplace(id, info);
    return id;
  }

  // Runs merges and functional evaluation to fixpoint, then negative checks.
  bool run(bool check_negs = true) {
    drain();
    while (!failed_) {
      if (!eval_functionals()) break;
      drain();
    }
    if (check_negs && !failed_) {
      check_negatives();
      drain();
    }
    return !failed_;
  }

  void add_type(NodeId n, const Context& ctx, TypeId t) {
    if (failed_ || fs_.context_dead(ctx)) return;
    auto fin = route(n, ctx, [&](NodeId m, const Context& sub) {
      add_type(m, sub, t);
    });
    if (!fin) return;
    n = *fin;
    for (const GuardedType& gt : fs_.nodes()[n].types)
      if (gt.ctx == ctx && gt.type == t) return;

    std::vector<std::pair<Context, TypeId>> derived;
    bool redundant = t == kTopType;
    for (const GuardedType& gt : fs_.nodes()[n].types) {
      if (!gt.ctx.compatible(ctx)) continue;
      GlbResult g = fs_.lattice()->glb(gt.type, t);
      Context joined = gt.ctx.join(ctx);
      switch (g.tag) {
        case GlbResult::Tag::Bottom:
          add_nogood(joined);
          if (failed_) return;
          break;
        case GlbResult::Tag::Type:
          if (g.type == gt.type && gt.ctx.subset_of(ctx)) {
            redundant = true;  // an entry at least as specific covers ctx
          } else if (g.type != gt.type && g.type != t) {
            derived.emplace_back(joined, g.type);
          }
          break;
        case GlbResult::Tag::Disjunction: {
          GroupId gid = add_group(static_cast<int>(g.alternatives.size()), "glb");
          for (size_t i = 0; i < g.alternatives.size(); ++i)
            derived.emplace_back(joined.join(Context::single(gid, (int)i)),
                                 g.alternatives[i]);
          break;
        }
      }
    }
    if (!redundant)
      fs_.nodes_mutable()[n].types.push_back({ctx, t});
    for (auto& [c, dt] : derived) add_type(n, c, dt);
  }

  void add_arc(NodeId n, FeatId f, const Context& ctx, NodeId target) {
    if (failed_ || fs_.context_dead(ctx)) return;
    auto fin = route(n, ctx, [&](NodeId m, const Context& sub) {
      add_arc(m, f, sub, target);
    });
    if (!fin) return;
    n = *fin;
    for (const Arc& a : fs_.nodes()[n].arcs) {
      if (a.feat != f || !a.ctx.compatible(ctx)) continue;
      if (a.ctx.subset_of(ctx)) {
        request_merge(a.target, target, ctx);
        return;  // an existing arc already covers the whole region
      }
      request_merge(a.target, target, a.ctx.join(ctx));
    }
    fs_.nodes_mutable()[n].arcs.push_back({f, ctx, target});
  }

  void add_nogood(const Context& ctx) {
    if (ctx.empty()) {
      failed_ = true;
      fs_.nogoods_mutable().clear();
      fs_.nogoods_mutable().push_back(Context{});
      return;
    }
    if (ctx.size() == 1) {
      const Choice& ch = ctx.choices().front();
      auto it = fs_.groups_mutable().find(ch.group);
      if (it == fs_.groups_mutable().end()) return;
      it->second.live &= ~(1u << ch.index);
      if (it->second.live == 0) {
        failed_ = true;
        fs_.nogoods_mutable().clear();
        fs_.nogoods_mutable().push_back(Context{});
      }
      return;
    }
    for (const Context& ng : fs_.nogoods())
      if (ng.subset_of(ctx)) return;
    fs_.nogoods_mutable().push_back(ctx);
  }

  void drain() {
    while (!queue_.empty() && !failed_) {
      MergeItem item = std::move(queue_.front());
      queue_.pop_front();
      merge(item.a, item.b, item.ctx);
    }
    if (failed_) queue_.clear();
  }

  // Fires functional constraints whose arguments are ground under the
  // constraint's own context. Returns true if anything fired.
  bool eval_functionals() {
    bool fired = false;
    for (FunConstraint& fc : fs_.functionals_mutable()) {
      if (fc.done || fs_.context_dead(fc.ctx)) continue;
      const AtomFunction* fn = fs_.registry().find(fc.fn);
      if (!fn) throw Error("unknown function '" + fc.fn + "'");
      std::vector<AtomValue> args;
      bool ground = true;
      for (NodeId a : fc.args) {
        auto t = type_lower_bound(a, fc.ctx);
        if (!t || fs_.lattice()->entry(*t).kind != TypeKind::Atom) {
          ground = false;
          break;
        }
        const TypeEntry& e = fs_.lattice()->entry(*t);
        args.push_back({e.numeric ? e.name : e.name.substr(1), e.numeric});
      }
      if (!ground) continue;
      fc.done = true;
      fired = true;
      auto val = (*fn)(args);
      if (!val) {
        add_nogood(fc.ctx);
        if (failed_) return fired;
        continue;
      }
      TypeId atom = fs_.lattice()->intern_atom(val->text, val->numeric);
      add_type(fc.result, fc.ctx, atom);
      if (failed_) return fired;
    }
    return fired;
  }

  // Eager violation detection; exact evaluation happens per assignment.
  void check_negatives() {
    for (const NegConstraint& nc : fs_.negatives()) {
      if (failed_) return;
      if (fs_.context_dead(nc.ctx)) continue;
      if (nc.kind == NegKind::PathNeq) {
        NodeId x = fs_.resolve(nc.node, nc.ctx);
        NodeId y = fs_.resolve(nc.other, nc.ctx);
        if (x == y) add_nogood(nc.ctx);
        continue;
      }
      NodeId x = fs_.resolve(nc.node, nc.ctx);
      std::vector<Context> bad;
      for (const GuardedType& gt : fs_.nodes()[x].types) {
        if (!gt.ctx.compatible(nc.ctx)) continue;
        if (fs_.lattice()->subsumes(nc.type, gt.type))
          bad.push_back(gt.ctx.join(nc.ctx));
      }
      for (const Context& c : bad) {
        add_nogood(c);
        if (failed_) return;
      }
    }
  }

 private:
  struct MergeItem {
    NodeId a, b;
    Context ctx;
  };

  FeatureStructure& fs_;
  std::deque<MergeItem> queue_;
  std::set<std::tuple<NodeId, NodeId, Context>> seen_;
  bool failed_ = false;

  // most specific type entry whose guard is implied by ctx
  std::optional<TypeId> type_lower_bound(NodeId n, const Context& ctx) {
    n = fs_.resolve(n, ctx);
    TypeId best = kTopType;
    for (const GuardedType& gt : fs_.nodes()[n].types) {
      if (!gt.ctx.subset_of(ctx)) continue;
      if (fs_.lattice()->subsumes(best, gt.type)) best = gt.type;
      else if (!fs_.lattice()->subsumes(gt.type, best)) return std::nullopt;
    }
    return best;
  }

  // Resolves n under ctx. If the result still has a forward whose guard is
  // compatible with but not implied by ctx, re-dispatches the operation into
  // the split sub-contexts via `redo` and reports nullopt.
  std::optional<NodeId> route(NodeId n, const Context& ctx,
                              const std::function<void(NodeId, const Context&)>& redo) {
    n = fs_.resolve(n, ctx);
    for (const Forward& f : fs_.nodes()[n].forwards) {
      if (f.ctx.compatible(ctx) && !f.ctx.subset_of(ctx)) {
        for (const Context& sub : split_contexts(fs_, ctx, f.ctx))
          redo(n, sub);
        return std::nullopt;
      }
    }
    return n;
  }

  void merge(NodeId a, NodeId b, const Context& ctx) {
    if (failed_ || fs_.context_dead(ctx)) return;
    a = fs_.resolve(a, ctx);
    b = fs_.resolve(b, ctx);
    if (a == b) return;
    for (NodeId n : {a, b}) {
      for (const Forward& f : fs_.nodes()[n].forwards) {
        if (f.ctx.compatible(ctx) && !f.ctx.subset_of(ctx)) {
          for (const Context& sub : split_contexts(fs_, ctx, f.ctx))
            request_merge(a, b, sub);
          return;
        }
      }
    }
    auto key = std::tuple(std::min(a, b), std::max(a, b), ctx);
    if (!seen_.insert(key).second) return;

    FsNode& vb = fs_.nodes_mutable()[b];
    FsNode& va = fs_.nodes_mutable()[a];
    va.needs_expand |= vb.needs_expand;
    va.frontier |= vb.frontier;
    va.unfold_depth = std::max(va.unfold_depth, vb.unfold_depth);
    if (ctx.empty()) {
      std::vector<GuardedType> types = std::move(vb.types);
      std::vector<Arc> arcs = std::move(vb.arcs);
      vb.types.clear();
      vb.arcs.clear();
      vb.forwards.push_back({Context{}, a});
      for (const GuardedType& gt : types) add_type(a, gt.ctx, gt.type);
      for (const Arc& arc : arcs) add_arc(a, arc.feat, arc.ctx, arc.target);
    } else {
      vb.forwards.push_back({ctx, a});
      // copy, do not move: b keeps its content for the other contexts
      std::vector<GuardedType> types = vb.types;
      std::vector<Arc> arcs = vb.arcs;
      for (const GuardedType& gt : types)
        if (gt.ctx.compatible(ctx)) add_type(a, gt.ctx.join(ctx), gt.type);
      for (const Arc& arc : arcs)
        if (arc.ctx.compatible(ctx))
          add_arc(a, arc.feat, arc.ctx.join(ctx), arc.target);
    }
  }
};

// Removes content guarded by dead contexts, inlines single-alternative
// groups, and re-derives live sets from shrinking nogoods, to fixpoint.
void compact(FeatureStructure& fs) {
  for (bool changed = true; changed;) {
    changed = false;

    std::set<GroupId> inlined;
    auto& groups = fs.groups_mutable();
    for (auto it = groups.begin(); it != groups.end();) {
      if (it->second.live_count() == 1) {
        inlined.insert(it->first);
        it = groups.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }

    auto dead_index = [&](const Context& c) {
      for (const Choice& ch : c.choices()) {
        auto it = fs.groups().find(ch.group);
        if (it != fs.groups().end() && !it->second.is_live(ch.index)) return true;
      }
      return false;
    };
    auto strip = [&](const Context& c) {
      if (inlined.empty()) return c;
      std::vector<Choice> out;
      for (const Choice& ch : c.choices())
        if (!inlined.count(ch.group)) out.push_back(ch);
      return Context(std::move(out));
    };
    auto fix = [&](Context& c) -> bool {  // false: entry is dead
      if (dead_index(c)) return false;
      c = strip(c);
      return true;
    };

    for (FsNode& n : fs.nodes_mutable()) {
      std::erase_if(n.types, [&](GuardedType& t) { return !fix(t.ctx); });
      std::erase_if(n.arcs, [&](Arc& a) { return !fix(a.ctx); });
      std::erase_if(n.forwards, [&](Forward& f) { return !fix(f.ctx); });
    }
    std::erase_if(fs.negatives_mutable(),
                  [&](NegConstraint& c) { return !fix(c.ctx); });
    std::erase_if(fs.functionals_mutable(),
                  [&](FunConstraint& c) { return c.done || !fix(c.ctx); });

    auto& nogoods = fs.nogoods_mutable();
    bool global_fail = false;
    std::vector<Context> keep;
    std::vector<Context> shrunk;
    for (Context& ng : nogoods) {
      if (ng.empty()) { global_fail = true; break; }
      if (dead_index(ng)) { changed = true; continue; }  // vacuous
      Context c = strip(ng);
      if (c.size() != ng.size()) changed = true;
      if (c.empty()) { global_fail = true; break; }
      if (c.size() == 1) shrunk.push_back(std::move(c));
      else keep.push_back(std::move(c));
    }
    if (global_fail) {
      nogoods.clear();
      nogoods.push_back(Context{});
      return;
    }
    nogoods = std::move(keep);
    for (const Context& s : shrunk) {
      const Choice& ch = s.choices().front();
      auto it = fs.groups_mutable().find(ch.group);
      if (it == fs.groups_mutable().end()) continue;
      it->second.live &= ~(1u << ch.index);
      changed = true;
      if (it->second.live == 0) {
        nogoods.clear();
        nogoods.push_back(Context{});
        return;
      }
    }
  }
}

}  // namespace detail

// -- unify --------------------------------------------------------------------------

std::optional<FeatureStructure> unify(const FeatureStructure& a,
                                      const FeatureStructure& b) {
  if (a.lattice() != b.lattice())
    throw Error("unify: structures come from different lattices");
  if (a.generation() != b.generation() ||
      a.generation() != a.lattice()->generation())
    throw Error("unify: stale encoding (lattice generation changed)");

  FeatureStructure r = a;
  const NodeId offset = static_cast<NodeId>(r.nodes().size());

  for (const FsNode& n : b.nodes()) {
    NodeId id = r.add_node();
    FsNode& nn = r.nodes_mutable()[id];
    nn = n;
    for (Forward& f : nn.forwards) f.target += offset;
    for (Arc& arc : nn.arcs) arc.target += offset;
  }
  for (const auto& [gid, info] : b.groups()) {
    auto [it, inserted] = r.groups_mutable().emplace(gid, info);
    if (!inserted)
      throw Error("unify: inputs share group ids; rename apart first");
  }
  for (const Context& ng : b.nogoods()) r.nogoods_mutable().push_back(ng);
  for (const NegConstraint& nc : b.negatives()) {
    NegConstraint c = nc;
    c.node += offset;
    if (c.other != kNoNode) c.other += offset;
    r.negatives_mutable().push_back(std::move(c));
  }
  for (const FunConstraint& fc : b.functionals()) {
    FunConstraint c = fc;
    c.result += offset;
    for (NodeId& arg : c.args) arg += offset;
    r.functionals_mutable().push_back(std::move(c));
  }

  detail::Session s(r);
  s.request_merge(a.root(), b.root() + offset, Context{});
  if (!s.run()) return std::nullopt;
  detail::compact(r);
  if (r.context_dead(Context{})) return std::nullopt;
  return r;
}

// -- extraction / dnf -----------------------------------------------------------------

namespace detail {

// Copies the disjunction-free restriction of fs under the full assignment K;
// nullopt when the assignment is inconsistent.
std::optional<FeatureStructure> extract_at(const FeatureStructure& fs,
                                           const Context& K) {
  if (fs.context_dead(K)) return std::nullopt;
  const Lattice& lat = *fs.lattice();

  FeatureStructure out;
  out.bind(lat);
  std::map<NodeId, NodeId> remap;
  bool ok = true;

  std::function<NodeId(NodeId)> copy = [&](NodeId n) -> NodeId {
    n = fs.resolve(n, K);
    auto it = remap.find(n);
    if (it != remap.end()) return it->second;
    NodeId nn = out.add_node();
    remap.emplace(n, nn);
    auto t = fs.type_at(n, K);
    if (!t) { ok = false; return nn; }
    if (*t != kTopType)
      out.nodes_mutable()[nn].types.push_back({Context{}, *t});
    out.nodes_mutable()[nn].needs_expand = fs.nodes()[n].needs_expand;
    out.nodes_mutable()[nn].frontier = fs.nodes()[n].frontier;
    out.nodes_mutable()[nn].unfold_depth = fs.nodes()[n].unfold_depth;
    std::vector<const Arc*> arcs;
    for (const Arc& a : fs.nodes()[n].arcs)
      if (a.ctx.subset_of(K)) arcs.push_back(&a);
    std::sort(arcs.begin(), arcs.end(),
              [](const Arc* x, const Arc* y) { return x->feat < y->feat; });
    FeatId last = -1;
    for (const Arc* a : arcs) {
      if (!ok) break;
      if (a->feat == last) continue;  // co-applying arcs have merged targets
      last = a->feat;
      NodeId child = copy(a->target);
      out.nodes_mutable()[nn].arcs.push_back({a->feat, Context{}, child});
    }
    return nn;
  };

  NodeId new_root = copy(fs.root());
  if (!ok) return std::nullopt;
  out.set_root(new_root);

  // functional constraints: evaluate ground ones, carry the rest
  for (const FunConstraint& fc : fs.functionals()) {
    if (fc.done || !fc.ctx.subset_of(K)) continue;
    std::vector<AtomValue> args;
    std::vector<NodeId> resolved_args;
    bool ground = true;
    for (NodeId a : fc.args) {
      NodeId ra = fs.resolve(a, K);
      resolved_args.push_back(ra);
      auto t = fs.type_at(ra, K);
      if (!t) return std::nullopt;
      const TypeEntry& e = lat.entry(*t);
      if (e.kind != TypeKind::Atom) { ground = false; continue; }
      args.push_back({e.numeric ? e.name : e.name.substr(1), e.numeric});
    }
    NodeId res = fs.resolve(fc.result, K);
    if (ground && args.size() == fc.args.size()) {
      const AtomFunction* fn = fs.registry().find(fc.fn);
      std::optional<AtomValue> val = fn ? (*fn)(args) : std::nullopt;
      if (!val) return std::nullopt;
      TypeId atom = lat.intern_atom(val->text, val->numeric);
      auto existing = fs.type_at(res, K);
      if (!existing) return std::nullopt;
      GlbResult g = lat.glb(*existing, atom);
      if (g.tag != GlbResult::Tag::Type) return std::nullopt;
      auto rit = remap.find(res);
      if (rit != remap.end()) {
        out.nodes_mutable()[rit->second].types.clear();
        if (g.type != kTopType)
          out.nodes_mutable()[rit->second].types.push_back({Context{}, g.type});
      }
      continue;
    }
    // suspended: keep when the result is part of the output; pull in the
    // argument subgraphs so the constraint stays meaningful
    auto rit = remap.find(res);
    if (rit == remap.end()) continue;
    FunConstraint kept;
    kept.fn = fc.fn;
    kept.result = rit->second;
    for (NodeId ra : resolved_args) kept.args.push_back(copy(ra));
    if (!ok) return std::nullopt;
    out.functionals_mutable().push_back(std::move(kept));
  }

  // negative constraints: drop satisfied, kill violated, keep open ones
  for (const NegConstraint& nc : fs.negatives()) {
    if (!nc.ctx.subset_of(K)) continue;
    NodeId x = fs.resolve(nc.node, K);
    if (nc.kind == NegKind::PathNeq) {
      NodeId y = fs.resolve(nc.other, K);
      if (x == y) return std::nullopt;
      auto tx = fs.type_at(x, K);
      auto ty = fs.type_at(y, K);
      if (!tx || !ty) return std::nullopt;
      if (lat.glb(*tx, *ty).is_bottom()) continue;  // can never corefer
      auto ix = remap.find(x);
      auto iy = remap.find(y);
      if (ix == remap.end() || iy == remap.end()) continue;  // unreachable
      NegConstraint keep;
      keep.kind = NegKind::PathNeq;
      keep.node = std::min(ix->second, iy->second);
      keep.other = std::max(ix->second, iy->second);
      out.negatives_mutable().push_back(keep);
      continue;
    }
    auto tx = fs.type_at(x, K);
    if (!tx) return std::nullopt;
    if (lat.subsumes(nc.type, *tx)) return std::nullopt;  // violated
    if (lat.glb(*tx, nc.type).is_bottom()) continue;      // discharged
    auto ix = remap.find(x);
    if (ix == remap.end()) continue;
    NegConstraint keep;
    keep.kind = nc.kind;
    keep.node = ix->second;
    keep.type = nc.type;
    out.negatives_mutable().push_back(keep);
  }

  return out;
}

}  // namespace detail

std::vector<FeatureStructure> dnf(const FeatureStructure& fs) {
  std::vector<FeatureStructure> out;
  fs.for_each_assignment([&](const Context& K) {
    auto alt = detail::extract_at(fs, K);
    if (alt) out.push_back(std::move(*alt));
  });
  return out;
}

// -- canonical form -----------------------------------------------------------------

std::string canonical_form(const FeatureStructure& fs) {
  if (!fs.disjunction_free())
    throw Error("canonical_form: structure has live disjunctions");
  const Lattice& lat = *fs.lattice();

  std::map<NodeId, int> num;
  std::function<void(NodeId)> visit = [&](NodeId n) {
    n = fs.resolve(n, Context{});
    if (num.count(n)) return;
    num.emplace(n, static_cast<int>(num.size()));
    std::vector<const Arc*> arcs;
    for (const Arc& a : fs.nodes()[n].arcs) arcs.push_back(&a);
    std::sort(arcs.begin(), arcs.end(),
              [](const Arc* x, const Arc* y) { return x->feat < y->feat; });
    for (const Arc* a : arcs) visit(a->target);
  };
  visit(fs.root());

  // live functional constraints anchored in the graph, in a canonical order
  std::vector<const FunConstraint*> funs;
  for (const FunConstraint& fc : fs.functionals()) {
    if (fc.done) continue;
    if (!num.count(fs.resolve(fc.result, Context{}))) continue;
    funs.push_back(&fc);
  }
  std::sort(funs.begin(), funs.end(),
            [&](const FunConstraint* x, const FunConstraint* y) {
              int rx = num.at(fs.resolve(x->result, Context{}));
              int ry = num.at(fs.resolve(y->result, Context{}));
              return std::tie(x->fn, rx, x->args) <
                     std::tie(y->fn, ry, y->args);
            });
  for (const FunConstraint* fc : funs)
    for (NodeId a : fc->args) visit(a);

  std::ostringstream body;
  std::vector<std::string> node_lines(num.size());
  for (const auto& [n, id] : num) {
    std::ostringstream line;
    line << "n" << id << " " << lat.entry(fs.plain_type(n)).name;
    std::vector<const Arc*> arcs;
    for (const Arc& a : fs.nodes()[n].arcs) arcs.push_back(&a);
    std::sort(arcs.begin(), arcs.end(),
              [](const Arc* x, const Arc* y) { return x->feat < y->feat; });
    FeatId last = -1;
    for (const Arc* a : arcs) {
      if (a->feat == last) continue;
      last = a->feat;
      line << " " << lat.feature_name(a->feat) << ":n"
           << num.at(fs.resolve(a->target, Context{}));
    }
    node_lines[id] = line.str();
  }
  for (const auto& l : node_lines) body << l << "\n";

  std::vector<std::string> extra;
  for (const NegConstraint& nc : fs.negatives()) {
    NodeId x = fs.resolve(nc.node, Context{});
    if (!num.count(x)) continue;
    if (nc.kind == NegKind::PathNeq) {
      NodeId y = fs.resolve(nc.other, Context{});
      if (!num.count(y)) continue;
      int i = num.at(x), j = num.at(y);
      if (i == j) continue;
      extra.push_back("neq n" + std::to_string(std::min(i, j)) + " n" +
                      std::to_string(std::max(i, j)));
    } else {
      extra.push_back("neg n" + std::to_string(num.at(x)) + " " +
                      lat.entry(nc.type).name);
    }
  }
  for (const FunConstraint* fc : funs) {
    std::string line =
        "fun " + fc->fn + " n" +
        std::to_string(num.at(fs.resolve(fc->result, Context{}))) + " (";
    bool first = true;
    for (NodeId a : fc->args) {
      if (!first) line += ",";
      first = false;
      line += "n" + std::to_string(num.at(fs.resolve(a, Context{})));
    }
    extra.push_back(line + ")");
  }
  std::sort(extra.begin(), extra.end());
  extra.erase(std::unique(extra.begin(), extra.end()), extra.end());
  for (const auto& l : extra) body << l << "\n";
  return body.str();
}

std::vector<std::string> dnf_signature(const FeatureStructure& fs) {
  std::vector<std::string> sigs;
  for (const FeatureStructure& alt : dnf(fs)) sigs.push_back(canonical_form(alt));
  std::sort(sigs.begin(), sigs.end());
  return sigs;
}

// -- gc ---------------------------------------------------------------------------

void gc(FeatureStructure& fs) {
  std::set<NodeId> live;
  std::vector<NodeId> stack;
  auto push = [&](NodeId n) {
    if (live.insert(n).second) stack.push_back(n);
  };
  auto sweep = [&]() {
    while (!stack.empty()) {
      NodeId n = stack.back();
      stack.pop_back();
      for (const Forward& f : fs.nodes()[n].forwards) push(f.target);
      for (const Arc& a : fs.nodes()[n].arcs) push(a.target);
    }
  };
  if (fs.root() != kNoNode) push(fs.root());
  sweep();
  for (const FunConstraint& fc : fs.functionals()) {
    if (fc.done || !live.count(fs.resolve(fc.result, Context{}))) continue;
    push(fc.result);
    for (NodeId a : fc.args) push(a);
    sweep();
  }

  std::map<NodeId, NodeId> remap;
  std::vector<FsNode> kept;
  for (NodeId n = 0; n < static_cast<NodeId>(fs.nodes().size()); ++n) {
    if (!live.count(n)) continue;
    remap.emplace(n, static_cast<NodeId>(kept.size()));
    kept.push_back(fs.nodes()[n]);
  }
  for (FsNode& n : kept) {
    for (Forward& f : n.forwards) f.target = remap.at(f.target);
    for (Arc& a : n.arcs) a.target = remap.at(a.target);
  }
  fs.nodes_mutable() = std::move(kept);
  if (fs.root() != kNoNode) fs.set_root(remap.at(fs.root()));

  std::erase_if(fs.negatives_mutable(), [&](const NegConstraint& nc) {
    if (!remap.count(nc.node)) return true;
    if (nc.kind == NegKind::PathNeq && !remap.count(nc.other)) return true;
    return false;
  });
  for (NegConstraint& nc : fs.negatives_mutable()) {
    nc.node = remap.at(nc.node);
    if (nc.other != kNoNode) nc.other = remap.at(nc.other);
  }
  std::erase_if(fs.functionals_mutable(), [&](const FunConstraint& fc) {
    return fc.done || !remap.count(fc.result);
  });
  for (FunConstraint& fc : fs.functionals_mutable()) {
    fc.result = remap.at(fc.result);
    for (NodeId& a : fc.args) a = remap.at(a);
  }

  std::set<GroupId> mentioned;
  auto note = [&](const Context& c) {
    for (const Choice& ch : c.choices()) mentioned.insert(ch.group);
  };
  for (const FsNode& n : fs.nodes()) {
    for (const Forward& f : n.forwards) note(f.ctx);
    for (const GuardedType& t : n.types) note(t.ctx);
    for (const Arc& a : n.arcs) note(a.ctx);
  }
  for (const NegConstraint& nc : fs.negatives()) note(nc.ctx);
  for (const FunConstraint& fc : fs.functionals()) note(fc.ctx);
  for (const Context& ng : fs.nogoods()) note(ng);
  auto& groups = fs.groups_mutable();
  for (auto it = groups.begin(); it != groups.end();) {
    if (!mentioned.count(it->first)) it = groups.erase(it);
    else ++it;
  }
}

// -- simplify ------------------------------------------------------------------------

FeatureStructure simplify(const FeatureStructure& fs) {
  FeatureStructure r = fs;
  detail::compact(r);
  if (r.context_dead(Context{})) return r;

  // merge duplicate alternatives: an index whose restriction denotes the
  // same set of alternatives as an earlier index of the same group is
  // redundant and its live bit is dropped
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<GroupId> gids;
    for (const auto& [gid, info] : r.groups()) gids.push_back(gid);
    for (GroupId gid : gids) {
      auto it = r.groups().find(gid);
      if (it == r.groups().end() || it->second.live_count() < 2) continue;
      const int arity = it->second.arity;
      std::map<int, std::vector<std::string>> sig_by_index;
      r.for_each_assignment([&](const Context& K) {
        auto alt = detail::extract_at(r, K);
        if (!alt) return;
        sig_by_index[*K.index_of(gid)].push_back(canonical_form(*alt));
      });
      for (auto& [i, sigs] : sig_by_index) std::sort(sigs.begin(), sigs.end());
      for (int i = 0; i < arity && !changed; ++i) {
        if (!it->second.is_live(i)) continue;
        for (int j = i + 1; j < arity; ++j) {
          if (!it->second.is_live(j)) continue;
          auto a = sig_by_index.find(i);
          auto b = sig_by_index.find(j);
          if (a != sig_by_index.end() && b != sig_by_index.end() &&
              a->second == b->second) {
            r.groups_mutable().at(gid).live &= ~(1u << j);
            changed = true;
            break;
          }
        }
      }
      if (changed) {
        detail::compact(r);
        break;
      }
    }
  }
  gc(r);
  return r;
}

// -- extract_subterm ---------------------------------------------------------------

std::optional<FeatureStructure> extract_subterm(const FeatureStructure& fs,
                                                std::span<const FeatId> path) {
  FeatureStructure r = fs;
  struct Hit {
    NodeId node;
    Context ctx;
  };
  std::vector<Hit> frontier{{r.root(), Context{}}};

  // saturate: split hits sitting on compatible-but-unapplied forwards so
  // every hit is resolution-final for its context
  auto saturate = [&](std::vector<Hit> hits) {
    std::vector<Hit> done;
    while (!hits.empty()) {
      Hit h = std::move(hits.back());
      hits.pop_back();
      if (r.context_dead(h.ctx)) continue;
      NodeId n = r.resolve(h.node, h.ctx);
      bool split = false;
      for (const Forward& fw : r.nodes()[n].forwards) {
        if (fw.ctx.compatible(h.ctx) && !fw.ctx.subset_of(h.ctx)) {
          for (const Context& sub : detail::split_contexts(r, h.ctx, fw.ctx))
            hits.push_back({n, sub});
          split = true;
          break;
        }
      }
      if (!split) done.push_back({n, std::move(h.ctx)});
    }
    return done;
  };

  frontier = saturate(std::move(frontier));
  for (FeatId f : path) {
    std::vector<Hit> next;
    for (const Hit& h : frontier) {
      for (const Arc& a : r.nodes()[h.node].arcs) {
        if (a.feat != f || !a.ctx.compatible(h.ctx)) continue;
        Context c = a.ctx.join(h.ctx);
        if (r.context_dead(c)) continue;
        next.push_back({a.target, std::move(c)});
      }
    }
    frontier = saturate(std::move(next));
    if (frontier.empty()) return std::nullopt;
  }

  NodeId fresh = r.add_node();
  detail::Session s(r);
  for (const Hit& h : frontier) s.request_merge(fresh, h.node, h.ctx);

  // assignments over the groups the hits mention that extend none of the
  // hit contexts lie outside the path's domain
  std::set<GroupId> mentioned;
  for (const Hit& h : frontier)
    for (const Choice& ch : h.ctx.choices()) mentioned.insert(ch.group);
  if (!mentioned.empty()) {
    std::vector<std::pair<GroupId, GroupInfo>> gs;
    for (GroupId g : mentioned) gs.emplace_back(g, r.groups().at(g));
    std::vector<Choice> cur;
    std::function<void(size_t)> rec = [&](size_t k) {
      if (k == gs.size()) {
        Context c{std::vector<Choice>(cur)};
        for (const Hit& h : frontier)
          if (h.ctx.subset_of(c)) return;
        s.add_nogood(c);
        return;
      }
      for (int i = 0; i < gs[k].second.arity; ++i) {
        if (!gs[k].second.is_live(i)) continue;
        cur.push_back({gs[k].first, i});
        rec(k + 1);
        cur.pop_back();
      }
    };
    rec(0);
  }

  if (!s.run()) return std::nullopt;
  r.set_root(fresh);
  detail::compact(r);
  if (r.context_dead(Context{})) return std::nullopt;
  gc(r);
  return r;
}

// -- eval_functional ----------------------------------------------------------------

std::optional<FeatureStructure> eval_functional(const FeatureStructure& fs,
                                                const FunctionRegistry& reg) {
  for (const FunConstraint& fc : fs.functionals())
    if (!fc.done && !reg.has(fc.fn))
      throw Error("unknown function '" + fc.fn + "'");
  FeatureStructure r = fs;
  r.set_registry(reg);
  detail::Session s(r);
  if (!s.run()) return std::nullopt;
  detail::compact(r);
  if (r.context_dead(Context{})) return std::nullopt;
  return r;
}

// -- subsumes_fs --------------------------------------------------------------------

bool subsumes_fs(const FeatureStructure& a, const FeatureStructure& b) {
  if (!a.disjunction_free() || !b.disjunction_free())
    throw Error("subsumes_fs: inputs must be disjunction-free");
  const Lattice& lat = *a.lattice();

  std::map<NodeId, NodeId> m;
  std::function<bool(NodeId, NodeId)> walk = [&](NodeId na, NodeId nb) {
    na = a.resolve(na, Context{});
    nb = b.resolve(nb, Context{});
    auto it = m.find(na);
    if (it != m.end()) return it->second == nb;  // coreference preserved
    m.emplace(na, nb);
    if (!lat.subsumes(a.plain_type(na), b.plain_type(nb))) return false;
    for (const Arc& arc : a.nodes()[na].arcs) {
      auto target = b.arc_target(nb, arc.feat, Context{});
      if (!target) return false;
      if (!walk(arc.target, *target)) return false;
    }
    return true;
  };
  if (!walk(a.root(), b.root())) return false;

  // a's negative constraints must be entailed in b
  for (const NegConstraint& nc : a.negatives()) {
    auto mapped = m.find(a.resolve(nc.node, Context{}));
    if (mapped == m.end()) continue;
    NodeId xb = mapped->second;
    if (nc.kind == NegKind::PathNeq) {
      auto other = m.find(a.resolve(nc.other, Context{}));
      if (other == m.end()) continue;
      NodeId yb = other->second;
      if (lat.glb(b.plain_type(xb), b.plain_type(yb)).is_bottom()) continue;
      bool found = false;
      for (const NegConstraint& bc : b.negatives()) {
        if (bc.kind != NegKind::PathNeq) continue;
        NodeId p = b.resolve(bc.node, Context{});
        NodeId q = b.resolve(bc.other, Context{});
        if ((p == xb && q == yb) || (p == yb && q == xb)) { found = true; break; }
      }
      if (!found) return false;
      continue;
    }
    if (lat.glb(b.plain_type(xb), nc.type).is_bottom()) continue;  // discharged
    bool found = false;
    for (const NegConstraint& bc : b.negatives()) {
      if (bc.kind == NegKind::PathNeq) continue;
      if (b.resolve(bc.node, Context{}) == xb &&
          lat.subsumes(bc.type, nc.type)) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

// -- rename_apart --------------------------------------------------------------------

FeatureStructure rename_apart(const FeatureStructure& fs) {
  FeatureStructure r = fs;
  std::map<GroupId, GroupId> remap;
  std::map<GroupId, GroupInfo> groups;
  for (const auto& [gid, info] : fs.groups()) {
    GroupId fresh = fresh_group_id();
    remap.emplace(gid, fresh);
    groups.emplace(fresh, info);
  }
  auto fix = [&](Context& c) {
    std::vector<Choice> out;
    for (const Choice& ch : c.choices())
      out.push_back({remap.at(ch.group), ch.index});
    std::sort(out.begin(), out.end());
    c = Context(std::move(out));
  };
  r.groups_mutable() = std::move(groups);
  for (FsNode& n : r.nodes_mutable()) {
    for (Forward& f : n.forwards) fix(f.ctx);
    for (GuardedType& t : n.types) fix(t.ctx);
    for (Arc& a : n.arcs) fix(a.ctx);
  }
  for (Context& ng : r.nogoods_mutable()) fix(ng);
  for (NegConstraint& nc : r.negatives_mutable()) fix(nc.ctx);
  for (FunConstraint& fc : r.functionals_mutable()) fix(fc.ctx);
  return r;
}

FeatureStructure make_single_node(const Lattice& lat, TypeId t) {
  FeatureStructure fs;
  fs.bind(lat);
  NodeId n = fs.add_node();
  if (t != kTopType)
    fs.nodes_mutable()[n].types.push_back({Context{}, t});
  fs.set_root(n);
  return fs;
}

}  // namespace tfs
