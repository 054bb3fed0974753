#pragma once

// Brute-force correctness oracle.  Everything here is deliberately quadratic
// and rebuilt from raw read/write records, sharing no logic with the engine's
// dependency tracking.

#include "harmony/execution.hpp"

#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace harmony::oracle {

enum class EdgeKind : std::uint8_t { Rw, Ww, Wr };

struct Edge {
  Tid from = 0;  // serializes first
  Tid to = 0;
  EdgeKind kind = EdgeKind::Rw;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct DependencyGraph {
  std::vector<Tid> nodes;  // sorted
  std::set<Edge> edges;

  bool has_edge(Tid from, Tid to) const {
    for (auto k : {EdgeKind::Rw, EdgeKind::Ww, EdgeKind::Wr}) {
      if (edges.contains({from, to, k})) return true;
    }
    return false;
  }
};

// What the oracle needs to know about one transaction of a block.
struct TxnView {
  Tid tid = 0;
  std::set<Key> reads;
  std::map<Key, bool> writes;  // key -> read-modify-write
};

inline TxnView view_of(const TxnExecution& t) {
  TxnView v;
  v.tid = t.tid;
  for (const auto& r : t.reads) v.reads.insert(r.key);
  for (const auto& [k, cmd] : t.writes) {
    bool rmw = false;
    for (const auto& op : cmd.ops()) {
      rmw = op.kind != OpKind::Set;
      break;
    }
    v.writes[k] = rmw;
  }
  return v;
}

// All reads come from the block snapshot, so a reader precedes every other
// writer of the key it read.  Writers of one key are ordered by the applied
// order: ww from every earlier to every later writer, plus wr when the later
// command reads the value it modifies.
inline DependencyGraph build_graph(const std::vector<TxnView>& txns,
                                   const std::map<Key, std::vector<Tid>>& applied_order) {
  DependencyGraph g;
  for (const auto& t : txns) g.nodes.push_back(t.tid);
  std::sort(g.nodes.begin(), g.nodes.end());
  std::map<Tid, const TxnView*> by_tid;
  for (const auto& t : txns) by_tid[t.tid] = &t;

  for (const auto& r : txns) {
    for (const auto& w : txns) {
      if (r.tid == w.tid) continue;
      for (const auto& k : r.reads) {
        if (w.writes.contains(k)) g.edges.insert({r.tid, w.tid, EdgeKind::Rw});
      }
    }
  }
  for (const auto& [key, order] : applied_order) {
    for (std::size_t a = 0; a < order.size(); ++a) {
      for (std::size_t b = a + 1; b < order.size(); ++b) {
        if (!by_tid.contains(order[a]) || !by_tid.contains(order[b])) continue;
        g.edges.insert({order[a], order[b], EdgeKind::Ww});
        if (by_tid.at(order[b])->writes.at(key)) g.edges.insert({order[a], order[b], EdgeKind::Wr});
      }
    }
  }
  return g;
}

// Kahn's algorithm, smallest ready tid first.
inline std::optional<std::vector<Tid>> topo_order(const DependencyGraph& g) {
  std::map<Tid, std::set<Tid>> succ;
  std::map<Tid, std::size_t> indeg;
  for (auto n : g.nodes) indeg[n] = 0;
  for (const auto& e : g.edges) {
    indeg.try_emplace(e.from, 0);
    indeg.try_emplace(e.to, 0);
    if (succ[e.from].insert(e.to).second) ++indeg[e.to];
  }
  std::priority_queue<Tid, std::vector<Tid>, std::greater<>> ready;
  for (const auto& [n, d] : indeg) {
    if (d == 0) ready.push(n);
  }
  std::vector<Tid> out;
  while (!ready.empty()) {
    const Tid n = ready.top();
    ready.pop();
    out.push_back(n);
    for (auto m : succ[n]) {
      if (--indeg[m] == 0) ready.push(m);
    }
  }
  if (out.size() != indeg.size()) return std::nullopt;
  return out;
}

inline bool is_acyclic(const DependencyGraph& g) { return topo_order(g).has_value(); }

struct Verdict {
  bool ok = true;
  std::string reason;

  static Verdict fail(std::string why) { return {false, std::move(why)}; }
  explicit operator bool() const { return ok; }
};

// Committed transactions of a processed block, as oracle views.
inline std::vector<TxnView> committed_views(const BlockResult& r) {
  std::vector<TxnView> out;
  for (const auto& t : r.txns) {
    if (r.is_committed(t.tid)) out.push_back(view_of(t));
  }
  return out;
}

inline DependencyGraph build_graph(const BlockResult& r) { return build_graph(committed_views(r), r.applied_order); }

// Replays the committed transactions serially in topological order on
// `pre_state` and compares the resulting state with `post_state`, and every
// value a transaction read during simulation with what it reads in the replay.
inline Verdict serial_equivalence(const Block& block, const BlockResult& r, const State& pre_state,
                                  const State& post_state) {
  const auto g = build_graph(r);
  const auto order = topo_order(g);
  if (!order) return Verdict::fail("dependency graph over committed transactions has a cycle");
  std::map<Tid, const Transaction*> programs;
  for (const auto& t : block.txns) programs[t.tid] = &t;
  std::map<Tid, const TxnExecution*> records;
  for (const auto& t : r.txns) records[t.tid] = &t;

  std::map<Key, Value> live;
  for (const auto& [k, v] : pre_state) live[k] = v;
  auto current = [&](const Key& k) -> Value {
    auto it = live.find(k);
    return it == live.end() ? Value{} : it->second;
  };
  for (auto tid : *order) {
    const auto* rec = records.at(tid);
    std::vector<Value> observed;
    programs.at(tid)->program.run([&](const Key& k) {
                                    Value v = current(k);
                                    observed.push_back(v);
                                    return v;
                                  },
                                  [&](const Key& k, const Op& op) { live[k] = apply_command(op, current(k)); });
    if (observed.size() != rec->reads.size()) {
      return Verdict::fail("T" + std::to_string(tid) + " took a different path in serial replay");
    }
    for (std::size_t i = 0; i < observed.size(); ++i) {
      if (observed[i].value_or(0) != rec->reads[i].observed.value_or(0)) {
        return Verdict::fail("T" + std::to_string(tid) + " read " + rec->reads[i].key + " differently in serial replay");
      }
    }
  }
  State replayed;
  for (const auto& [k, v] : live) {
    if (v) replayed[k] = *v;
  }
  if (replayed != post_state) return Verdict::fail("serial replay state differs from installed state");
  return {};
}

// Whether aborted `t` could have joined the committed set: it must follow
// every committed reader of a key it writes and precede every committed writer
// of a key it read, with its own updates slotted in anywhere.  That is
// possible iff no committed path leads from the second group to the first.
inline bool false_abort(const TxnView& t, const std::vector<TxnView>& committed, const DependencyGraph& g) {
  std::set<Tid> must_precede_t, must_follow_t;
  for (const auto& c : committed) {
    for (const auto& [k, _] : t.writes) {
      if (c.reads.contains(k)) must_precede_t.insert(c.tid);
    }
    for (const auto& k : t.reads) {
      if (c.writes.contains(k)) must_follow_t.insert(c.tid);
    }
  }
  std::map<Tid, std::vector<Tid>> succ;
  for (const auto& e : g.edges) succ[e.from].push_back(e.to);
  std::set<Tid> seen(must_follow_t.begin(), must_follow_t.end());
  std::vector<Tid> stack(must_follow_t.begin(), must_follow_t.end());
  while (!stack.empty()) {
    const Tid n = stack.back();
    stack.pop_back();
    if (must_precede_t.contains(n)) return false;
    for (auto m : succ[n]) {
      if (seen.insert(m).second) stack.push_back(m);
    }
  }
  return true;
}

// Aborted transactions of `r` whose abort was not needed.
inline std::vector<Tid> false_aborts(const BlockResult& r) {
  const auto committed = committed_views(r);
  const auto g = build_graph(committed, r.applied_order);
  std::vector<Tid> out;
  for (const auto& t : r.txns) {
    if (!r.is_committed(t.tid) && false_abort(view_of(t), committed, g)) out.push_back(t.tid);
  }
  return out;
}

// Explicit enumeration of backward dangerous structures over intra-block rw
// edges: the middles T_j of T_i <-rw T_j <-rw T_k with i < j and i <= k.
inline std::set<Tid> structure_middles(const std::vector<TxnView>& txns) {
  std::set<std::pair<Tid, Tid>> rw;  // (reader, writer): reader precedes writer
  for (const auto& r : txns) {
    for (const auto& w : txns) {
      if (r.tid == w.tid) continue;
      for (const auto& k : r.reads) {
        if (w.writes.contains(k)) rw.insert({r.tid, w.tid});
      }
    }
  }
  std::set<Tid> out;
  for (const auto& i : txns) {
    for (const auto& j : txns) {
      if (!(i.tid < j.tid) || !rw.contains({j.tid, i.tid})) continue;
      for (const auto& k : txns) {
        if (i.tid <= k.tid && rw.contains({k.tid, j.tid})) out.insert(j.tid);
      }
    }
  }
  return out;
}

inline std::vector<TxnView> all_views(const BlockResult& r) {
  std::vector<TxnView> out;
  for (const auto& t : r.txns) out.push_back(view_of(t));
  return out;
}

// Fraction of transactions that are middles of an intra-block structure.
inline double hit_rate(const std::vector<BlockResult>& blocks) {
  std::size_t hits = 0, total = 0;
  for (const auto& b : blocks) {
    hits += structure_middles(all_views(b)).size();
    total += b.txns.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Whole-run check for runs where blocks read older snapshots.  Builds the
// multi-version serialization graph over every committed transaction of the
// run and replays it serially from the empty state.

class HistoryOracle {
 public:
  void add(const Block& block, const BlockResult& r) {
    if (r.block != static_cast<BlockId>(blocks_.size())) throw ContractViolation("history oracle: blocks out of order");
    blocks_.push_back({block, r});
  }

  std::size_t size() const { return blocks_.size(); }

  Verdict check(const State& final_state) const {
    struct Version {
      BlockId block;
      Tid writer;
    };
    // Per key, committed writers in install order.
    std::map<Key, std::vector<Version>> versions;
    std::map<Tid, std::pair<const Transaction*, const TxnExecution*>> txns;
    std::vector<Tid> nodes;
    for (const auto& [block, r] : blocks_) {
      for (const auto& [key, order] : r.applied_order) {
        for (auto tid : order) versions[key].push_back({block.id, tid});
      }
      std::map<Tid, const Transaction*> programs;
      for (const auto& t : block.txns) programs[t.tid] = &t;
      for (const auto& t : r.txns) {
        if (r.is_committed(t.tid)) {
          txns[t.tid] = {programs.at(t.tid), &t};
          nodes.push_back(t.tid);
        }
      }
    }

    DependencyGraph g;
    g.nodes = nodes;
    std::sort(g.nodes.begin(), g.nodes.end());
    for (const auto& [key, list] : versions) {
      for (std::size_t i = 0; i + 1 < list.size(); ++i) g.edges.insert({list[i].writer, list[i + 1].writer, EdgeKind::Ww});
    }
    for (const auto& [tid, pr] : txns) {
      const auto* rec = pr.second;
      for (const auto& read : rec->reads) {
        auto vit = versions.find(read.key);
        if (vit == versions.end()) continue;
        const auto& list = vit->second;
        // Newest version visible at the read's snapshot, then the first one after it.
        std::size_t next = 0;
        while (next < list.size() && list[next].block <= read.snapshot_block) ++next;
        if (next > 0 && list[next - 1].writer != tid) g.edges.insert({list[next - 1].writer, tid, EdgeKind::Wr});
        for (std::size_t i = next; i < list.size(); ++i) {
          if (list[i].writer != tid) {
            g.edges.insert({tid, list[i].writer, EdgeKind::Rw});
            break;
          }
        }
      }
    }
    const auto order = topo_order(g);
    if (!order) return Verdict::fail("multi-version serialization graph has a cycle");

    std::map<Key, Value> live;
    auto current = [&](const Key& k) -> Value {
      auto it = live.find(k);
      return it == live.end() ? Value{} : it->second;
    };
    for (auto tid : *order) {
      const auto& [program, rec] = txns.at(tid);
      std::vector<Value> observed;
      program->program.run([&](const Key& k) {
                             Value v = current(k);
                             observed.push_back(v);
                             return v;
                           },
                           [&](const Key& k, const Op& op) { live[k] = apply_command(op, current(k)); });
      if (observed.size() != rec->reads.size()) {
        return Verdict::fail("T" + std::to_string(tid) + " took a different path in serial replay");
      }
      for (std::size_t i = 0; i < observed.size(); ++i) {
        if (observed[i].value_or(0) != rec->reads[i].observed.value_or(0)) {
          return Verdict::fail("T" + std::to_string(tid) + " read " + rec->reads[i].key + " differently in serial replay");
        }
      }
    }
    State replayed;
    for (const auto& [k, v] : live) {
      if (v) replayed[k] = *v;
    }
    if (replayed != final_state) return Verdict::fail("serial replay of the run differs from the final state");
    return {};
  }

 private:
  std::vector<std::pair<Block, BlockResult>> blocks_;
};

}  // namespace harmony::oracle
