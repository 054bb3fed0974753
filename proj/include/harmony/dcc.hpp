#pragma once

// Harmony's deterministic concurrency control: rw dependency resolution,
// abort-minimizing validation (intra-block and across adjacent blocks),
// update reordering and coalescence.

#include "harmony/execution.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace harmony {

enum class Decision : std::uint8_t { Commit, Abort };

// on_seeing_rw_dependency(T_i <-rw T_j)
inline void on_seeing_rw_dependency(DependencyState& writer, DependencyState& reader) {
  reader.min_out = std::min(writer.tid, reader.min_out);
  writer.max_in = std::max(reader.tid, writer.max_in);
}

// Aborts T_j iff it is the middle of T_i <-rw T_j <-rw T_k with i < j, i <= k.
inline Decision validate(const DependencyState& s) {
  return (s.min_out < s.tid && s.min_out <= s.max_in) ? Decision::Abort : Decision::Commit;
}

// Enumerates every reader x writer pair per key (i != j) and fires the
// handler once per distinct edge.  Runs at the barrier after simulation so the
// edge set does not depend on worker timing.
inline void resolve_dependencies(BlockExecution& exec) {
  if (exec.resolved) return;
  std::map<Key, std::vector<std::size_t>> readers, writers;
  for (std::size_t i = 0; i < exec.txns.size(); ++i) {
    for (const auto& k : exec.txns[i].read_keys) readers[k].push_back(i);
    for (const auto& [k, _] : exec.txns[i].writes) writers[k].push_back(i);
  }
  std::vector<RwEdge> edges;
  for (const auto& [key, ws] : writers) {
    auto it = readers.find(key);
    if (it == readers.end()) continue;
    for (auto r : it->second) {
      for (auto w : ws) {
        if (r != w) edges.push_back({exec.txns[w].tid, exec.txns[r].tid});
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  for (const auto& e : edges) {
    on_seeing_rw_dependency(exec.dep_states[exec.index_of(e.writer)], exec.dep_states[exec.index_of(e.reader)]);
    ++exec.handler_invocations;
  }
  exec.rw_edges = std::move(edges);
  exec.resolved = true;
}

// ---------------------------------------------------------------------------
// Block footprints: what a finished block leaves behind for validating the
// next one under inter-block parallelism.

struct Footprint {
  Tid tid = 0;
  std::vector<Key> reads;                     // sorted
  std::vector<std::pair<Key, bool>> writes;   // (key, read-modify-write), sorted
  OrderKey order;
};

struct BlockFootprint {
  BlockId id = 0;
  BlockId snapshot = kGenesisSnapshot;
  Tid first_tid = 0;
  Tid end_tid = 0;  // one past the block's last tid
  std::vector<Footprint> txns;
  // Dependencies with the previous block, restricted to committed txns.
  std::vector<InterDep> inter_deps;
};

inline Footprint footprint_of(const TxnExecution& t, const DependencyState& s) {
  Footprint f;
  f.tid = t.tid;
  f.reads = t.read_keys;
  for (const auto& [k, cmd] : t.writes) f.writes.emplace_back(k, cmd.read_modify_write());
  f.order = order_key(s);
  return f;
}

inline void to_json(nlohmann::json& j, const InterDep& d) {
  j = {d.before, d.after, static_cast<int>(d.kind)};
}
inline void from_json(const nlohmann::json& j, InterDep& d) {
  d.before = j.at(0).get<Tid>();
  d.after = j.at(1).get<Tid>();
  d.kind = static_cast<DepKind>(j.at(2).get<int>());
}
inline void to_json(nlohmann::json& j, const Footprint& f) {
  auto writes = nlohmann::json::array();
  for (const auto& [k, rmw] : f.writes) writes.push_back({k, rmw});
  j = {{"tid", f.tid}, {"reads", f.reads}, {"writes", std::move(writes)}, {"order", {f.order.min_out, f.order.tid}}};
}
inline void from_json(const nlohmann::json& j, Footprint& f) {
  f.tid = j.at("tid").get<Tid>();
  f.reads = j.at("reads").get<std::vector<Key>>();
  f.writes.clear();
  for (const auto& w : j.at("writes")) f.writes.emplace_back(w.at(0).get<Key>(), w.at(1).get<bool>());
  f.order = {j.at("order").at(0).get<Tid>(), j.at("order").at(1).get<Tid>()};
}
inline void to_json(nlohmann::json& j, const BlockFootprint& b) {
  j = {{"id", b.id}, {"snapshot", b.snapshot}, {"first_tid", b.first_tid}, {"end_tid", b.end_tid},
       {"txns", b.txns}, {"inter_deps", b.inter_deps}};
}
inline void from_json(const nlohmann::json& j, BlockFootprint& b) {
  b.id = j.at("id").get<BlockId>();
  b.snapshot = j.at("snapshot").get<BlockId>();
  b.first_tid = j.at("first_tid").get<Tid>();
  b.end_tid = j.at("end_tid").get<Tid>();
  b.txns = j.at("txns").get<std::vector<Footprint>>();
  b.inter_deps = j.at("inter_deps").get<std::vector<InterDep>>();
}

// Footprint of the whole block (every transaction, before validation).
inline BlockFootprint block_footprint(const BlockExecution& exec) {
  BlockFootprint b;
  b.id = exec.id();
  b.snapshot = exec.snapshot;
  b.first_tid = exec.txns.empty() ? 0 : exec.txns.front().tid;
  b.end_tid = exec.txns.empty() ? 0 : exec.txns.back().tid + 1;
  for (std::size_t i = 0; i < exec.txns.size(); ++i) b.txns.push_back(footprint_of(exec.txns[i], exec.dep_states[i]));
  b.inter_deps = exec.inter_deps;
  return b;
}

// Keeps only the transactions accepted by `keep`, in every list.
inline BlockFootprint restrict_footprint(BlockFootprint b, const std::function<bool(Tid)>& keep) {
  std::erase_if(b.txns, [&](const Footprint& f) { return !keep(f.tid); });
  std::erase_if(b.inter_deps, [&](const InterDep& d) {
    const bool before_here = d.before >= b.first_tid;
    const bool after_here = d.after >= b.first_tid;
    return (before_here && !keep(d.before)) || (after_here && !keep(d.after));
  });
  return b;
}

// Dependencies between block `cur` (simulated against an older snapshot) and
// the committed transactions of the block right before it.
inline std::vector<InterDep> compute_inter_deps(const BlockFootprint& cur, const BlockFootprint& prev) {
  std::vector<InterDep> out;
  if (prev.id + 1 != cur.id) return out;
  const bool stale_snapshot = cur.snapshot < prev.id;
  std::unordered_map<Key, std::vector<const Footprint*>> prev_readers, prev_writers;
  for (const auto& p : prev.txns) {
    for (const auto& k : p.reads) prev_readers[k].push_back(&p);
    for (const auto& [k, _] : p.writes) prev_writers[k].push_back(&p);
  }
  for (const auto& c : cur.txns) {
    for (const auto& k : c.reads) {
      if (auto it = prev_writers.find(k); it != prev_writers.end()) {
        for (const auto* p : it->second) {
          // c read the before-image of p's write when its snapshot predates p.
          if (stale_snapshot) out.push_back({c.tid, p->tid, DepKind::Rw});
          else out.push_back({p->tid, c.tid, DepKind::Wr});
        }
      }
    }
    for (const auto& [k, rmw] : c.writes) {
      if (auto it = prev_readers.find(k); it != prev_readers.end()) {
        for (const auto* p : it->second) out.push_back({p->tid, c.tid, DepKind::Rw});
      }
      if (auto it = prev_writers.find(k); it != prev_writers.end()) {
        for (const auto* p : it->second) {
          out.push_back({p->tid, c.tid, DepKind::Ww});
          if (rmw) out.push_back({p->tid, c.tid, DepKind::Wr});
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Generalized backward dangerous structures across adjacent blocks.

enum class EdgeClass : std::uint8_t { IntraRw, IntraOrder, Inter };

struct PrecedenceGraph {
  // preds[x] holds (y, class) for every edge x <- y, i.e. y precedes x.
  std::unordered_map<Tid, std::vector<std::pair<Tid, EdgeClass>>> preds;

  void add(Tid before, Tid after, EdgeClass cls) {
    if (before != after) preds[after].emplace_back(before, cls);
  }

  void normalize() {
    for (auto& [_, v] : preds) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }
};

// Adds a block's intra-block edges: rw (reader precedes writer) and, when
// `with_order` is set, the ww/wr edges implied by the Rule 2 update order.
inline void add_intra_edges(PrecedenceGraph& g, const BlockFootprint& b, bool with_order) {
  std::map<Key, std::vector<const Footprint*>> readers, writers;
  for (const auto& f : b.txns) {
    for (const auto& k : f.reads) readers[k].push_back(&f);
    for (const auto& [k, _] : f.writes) writers[k].push_back(&f);
  }
  for (auto& [key, ws] : writers) {
    if (auto it = readers.find(key); it != readers.end()) {
      for (const auto* r : it->second) {
        for (const auto* w : ws) g.add(r->tid, w->tid, EdgeClass::IntraRw);
      }
    }
    if (with_order) {
      std::sort(ws.begin(), ws.end(), [](const auto* a, const auto* c) { return a->order < c->order; });
      for (std::size_t x = 0; x < ws.size(); ++x) {
        for (std::size_t y = x + 1; y < ws.size(); ++y) g.add(ws[x]->tid, ws[y]->tid, EdgeClass::IntraOrder);
      }
    }
  }
}

inline void add_inter_edges(PrecedenceGraph& g, const std::vector<InterDep>& deps) {
  for (const auto& d : deps) g.add(d.before, d.after, EdgeClass::Inter);
}

struct StructureScan {
  std::vector<Tid> aborts;  // sorted, all in the current block
  std::size_t structures = 0;
};

// Rule 3 over intra-rw and inter-block edges of the current block and its
// committed predecessor.  For T_i <- T_j <- T_k with i < j and i <= k: abort
// T_j when T_j and T_k share a block, otherwise T_k.  A target that already
// committed in an earlier block cannot be aborted, so the middle transaction
// goes instead.  With `order_edges`, ww/wr edges from the Rule 2 update order
// also close structures that contain an inter-block edge.
inline StructureScan enhanced_validate(const BlockFootprint& cur, const BlockFootprint* prev_committed,
                                       bool order_edges) {
  PrecedenceGraph g;
  add_intra_edges(g, cur, order_edges);
  add_inter_edges(g, cur.inter_deps);
  if (prev_committed) {
    add_intra_edges(g, *prev_committed, order_edges);
    add_inter_edges(g, prev_committed->inter_deps);
  }
  g.normalize();

  auto in_cur = [&](Tid t) { return t >= cur.first_tid && t < cur.end_tid; };
  auto block_of = [&](Tid t) -> BlockId {
    if (in_cur(t)) return cur.id;
    if (prev_committed && t >= prev_committed->first_tid && t < prev_committed->end_tid) return prev_committed->id;
    return cur.id - 2;
  };

  StructureScan scan;
  std::set<Tid> aborts;
  for (const auto& [m, m_preds] : g.preds) {
    for (const auto& [a, cls_ma] : m_preds) {
      if (!(m < a)) continue;
      auto it = g.preds.find(a);
      if (it == g.preds.end()) continue;
      for (const auto& [b, cls_ab] : it->second) {
        if (!(m <= b)) continue;
        if (!in_cur(a) && !in_cur(b)) continue;  // decided when an earlier block committed
        const bool pure_rw = cls_ma == EdgeClass::IntraRw && cls_ab == EdgeClass::IntraRw &&
                             block_of(m) == block_of(a) && block_of(a) == block_of(b);
        const bool has_inter = cls_ma == EdgeClass::Inter || cls_ab == EdgeClass::Inter;
        if (!pure_rw && !has_inter) continue;
        ++scan.structures;
        Tid target = block_of(a) == block_of(b) ? a : b;
        if (!in_cur(target)) target = a;
        aborts.insert(target);
      }
    }
  }
  scan.aborts.assign(aborts.begin(), aborts.end());
  return scan;
}

// Edges from a block two back to the current one.  The current block read a
// snapshot that already includes `older`, so every shared key orders older
// first.
inline std::vector<InterDep> compute_forward_deps(const BlockFootprint& cur, const BlockFootprint& older) {
  std::vector<InterDep> out;
  std::unordered_map<Key, std::vector<Tid>> older_readers, older_writers;
  for (const auto& o : older.txns) {
    for (const auto& k : o.reads) older_readers[k].push_back(o.tid);
    for (const auto& [k, _] : o.writes) older_writers[k].push_back(o.tid);
  }
  for (const auto& c : cur.txns) {
    for (const auto& k : c.reads) {
      if (auto it = older_writers.find(k); it != older_writers.end()) {
        for (auto o : it->second) out.push_back({o, c.tid, DepKind::Wr});
      }
    }
    for (const auto& [k, _] : c.writes) {
      if (auto it = older_readers.find(k); it != older_readers.end()) {
        for (auto o : it->second) out.push_back({o, c.tid, DepKind::Rw});
      }
      if (auto it = older_writers.find(k); it != older_writers.end()) {
        for (auto o : it->second) out.push_back({o, c.tid, DepKind::Ww});
      }
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Strongly connected components of the graph given by `preds`, each sorted,
// listed in ascending order of their smallest member.
inline std::vector<std::vector<Tid>> strongly_connected(const PrecedenceGraph& g) {
  std::map<Tid, std::vector<Tid>> succ;
  for (const auto& [after, ps] : g.preds) {
    succ[after];
    for (const auto& [before, _] : ps) succ[before].push_back(after);
  }
  for (auto& [_, v] : succ) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }

  // Iterative Tarjan.
  std::unordered_map<Tid, std::size_t> index, low;
  std::unordered_set<Tid> on_stack;
  std::vector<Tid> stack;
  std::vector<std::vector<Tid>> out;
  std::size_t counter = 0;
  for (const auto& [root, _] : succ) {
    if (index.contains(root)) continue;
    std::vector<std::pair<Tid, std::size_t>> frames{{root, 0}};
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack.insert(root);
    while (!frames.empty()) {
      auto& [v, next] = frames.back();
      const auto& vs = succ[v];
      if (next < vs.size()) {
        const Tid w = vs[next++];
        if (!index.contains(w)) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack.insert(w);
          frames.emplace_back(w, 0);
        } else if (on_stack.contains(w)) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      if (low[v] == index[v]) {
        std::vector<Tid> comp;
        Tid w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack.erase(w);
          comp.push_back(w);
        } while (w != v);
        std::sort(comp.begin(), comp.end());
        out.push_back(std::move(comp));
      }
      const Tid done = v;
      frames.pop_back();
      if (!frames.empty()) low[frames.back().first] = std::min(low[frames.back().first], low[done]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Safety net behind Rule 3: builds the precedence graph over the surviving
// transactions of the current block and the committed transactions of the two
// blocks before it, and while a cycle passes through the current block aborts
// that cycle's highest-tid current transaction.  Returns the extra aborts,
// sorted.
inline std::vector<Tid> cycle_guard(const BlockFootprint& cur_survivors, const BlockFootprint* prev,
                                    const BlockFootprint* prev2) {
  std::set<Tid> removed;
  auto in_cur = [&](Tid t) { return t >= cur_survivors.first_tid && t < cur_survivors.end_tid; };
  for (;;) {
    auto cur = restrict_footprint(cur_survivors, [&](Tid t) { return !removed.contains(t); });
    PrecedenceGraph g;
    add_intra_edges(g, cur, true);
    add_inter_edges(g, cur.inter_deps);
    if (prev) {
      add_intra_edges(g, *prev, true);
      add_inter_edges(g, prev->inter_deps);
    }
    if (prev2) {
      add_intra_edges(g, *prev2, true);
      add_inter_edges(g, compute_forward_deps(cur, *prev2));
    }
    bool changed = false;
    for (const auto& comp : strongly_connected(g)) {
      if (comp.size() < 2) continue;
      for (auto it = comp.rbegin(); it != comp.rend(); ++it) {
        if (in_cur(*it)) {
          removed.insert(*it);
          changed = true;
          break;
        }
      }
    }
    if (!changed) break;
  }
  return {removed.begin(), removed.end()};
}

// ---------------------------------------------------------------------------
// Update reordering and coalescence

using OrderFn = std::function<OrderKey(Tid)>;

// Commit-side half of update reordering for one validated transaction: for
// each key it updated, the first transaction to claim the key filters out
// aborted issuers, sorts the survivors, coalesces them into one command chain
// and evaluates it on the base value.  Other claimants skip the key.
inline void apply_write_sets(const TxnExecution& txn, BlockExecution& exec, const std::vector<char>& aborted,
                             const SnapshotStore& store, BlockId base, const OrderFn& order) {
  for (const auto& key : txn.updated_keys) {
    auto* entry = exec.reservation.find(key);
    if (!entry) throw ContractViolation("apply_write_sets: key missing from reservation table");
    if (entry->handled.exchange(true)) continue;
    std::vector<std::pair<Tid, CompositeCommand>> cmds;
    {
      std::scoped_lock lock(entry->mu);
      cmds = entry->cmds;
    }
    std::erase_if(cmds, [&](const auto& c) { return aborted[exec.index_of(c.first)] != 0; });
    std::sort(cmds.begin(), cmds.end(), [&](const auto& x, const auto& y) { return order(x.first) < order(y.first); });
    std::vector<CompositeCommand> parts;
    parts.reserve(cmds.size());
    entry->applied_order.clear();
    for (auto& [tid, cmd] : cmds) {
      entry->applied_order.push_back(tid);
      parts.push_back(std::move(cmd));
    }
    entry->final_value = compose(std::span<const CompositeCommand>(parts)).apply(store.read(key, base));
  }
}

// Rule 2 order for the current block.
inline OrderFn harmony_order(const BlockExecution& exec) {
  return [&exec](Tid t) { return order_key(exec.dep_states[exec.index_of(t)]); };
}

inline OrderFn tid_order() {
  return [](Tid t) { return OrderKey{t, t}; };
}

// Aria-style ww rule: abort any transaction that updates a key some lower-tid
// transaction of the block also updates.
inline std::vector<char> ww_aborts(const BlockExecution& exec) {
  std::vector<char> out(exec.txns.size(), 0);
  std::unordered_map<Key, Tid> first_writer;
  for (const auto& t : exec.txns) {
    for (const auto& [k, _] : t.writes) first_writer.try_emplace(k, t.tid);
  }
  for (std::size_t i = 0; i < exec.txns.size(); ++i) {
    for (const auto& [k, _] : exec.txns[i].writes) {
      if (first_writer.at(k) < exec.txns[i].tid) out[i] = 1;
    }
  }
  return out;
}

}  // namespace harmony
