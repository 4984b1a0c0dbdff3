// tfskit -- internal unification-transaction interface (engine modules only)

#ifndef TFS_SESSION_HPP
#define TFS_SESSION_HPP

#include <deque>
#include <set>
#include <tuple>

#include "tfs/fs.hpp"

namespace tfs::detail {

GroupId fresh_group_id();

// Partition of the extensions of `c` by guard `g` (compatible with c, not a
// subset of it): first the joined context, then one piece per first point of
// difference from g. The pieces are pairwise incompatible and cover c.
std::vector<Context> split_contexts(const FeatureStructure& fs,
                                    const Context& c, const Context& g);

class Session {
 public:
  explicit Session(FeatureStructure& fs) : fs_(fs) {}

  bool failed() const { return failed_; }
  void request_merge(NodeId a, NodeId b, Context c);
  GroupId add_group(int arity, std::string label, GroupId id = -1);
  bool run(bool check_negs = true);
  void add_type(NodeId n, const Context& ctx, TypeId t);
  void add_arc(NodeId n, FeatId f, const Context& ctx, NodeId target);
  void add_nogood(const Context& ctx);
  void drain();
  bool eval_functionals();
  void check_negatives();

 private:
  struct MergeItem {
    NodeId a, b;
    Context ctx;
  };

  FeatureStructure& fs_;
  std::deque<MergeItem> queue_;
  std::set<std::tuple<NodeId, NodeId, Context>> seen_;
  bool failed_ = false;

  std::optional<TypeId> type_lower_bound(NodeId n, const Context& ctx);
  std::optional<NodeId> route(NodeId n, const Context& ctx,
                              const std::function<void(NodeId, const Context&)>& redo);
  void merge(NodeId a, NodeId b, const Context& ctx);
};

// Removes content guarded by dead contexts, inlines single-alternative
// groups, and re-derives live sets from shrinking nogoods, to fixpoint.
void compact(FeatureStructure& fs);

// Disjunction-free restriction of fs under the full assignment K; nullopt
// when the assignment is inconsistent.
std::optional<FeatureStructure> extract_at(const FeatureStructure& fs,
                                           const Context& K);

}  // namespace tfs::detail

#endif
