#pragma once

// Block engine: simulate -> resolve -> validate -> apply -> install, for
// Harmony and the baselines.  Simulation and commit are separate calls so a
// driver can overlap simulation of block i+1 with the commit of block i.

#include "harmony/baselines.hpp"
#include "harmony/dcc.hpp"

#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <deque>
#include <memory>
#include <stdexcept>
#include <string>

namespace harmony {

enum class EngineKind : std::uint8_t { Harmony, Fabric, Aria, Serial };

inline const char* to_string(EngineKind k) {
  switch (k) {
    case EngineKind::Harmony: return "harmony";
    case EngineKind::Fabric: return "fabric";
    case EngineKind::Aria: return "aria";
    case EngineKind::Serial: return "serial";
  }
  return "?";
}

inline EngineKind engine_kind_from_string(const std::string& s) {
  if (s == "harmony") return EngineKind::Harmony;
  if (s == "fabric") return EngineKind::Fabric;
  if (s == "aria") return EngineKind::Aria;
  if (s == "serial") return EngineKind::Serial;
  throw std::invalid_argument("unknown engine: " + s);
}

struct EngineOptions {
  EngineKind kind = EngineKind::Harmony;
  bool inter_block = false;
  bool update_optim = true;
  // Aborts any cycle Rule 3 leaves across the last three blocks.
  bool cycle_guard = true;
  // Lets ww/wr edges from the update order close Rule 3 structures that
  // contain an inter-block edge.  Stricter; off by default.
  bool rule3_order_edges = false;
  int workers = 1;
};

// Rejects option combinations that have no meaning.
inline void check_options(const EngineOptions& o) {
  if (o.workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (o.kind != EngineKind::Harmony && o.inter_block) {
    throw std::invalid_argument(std::string("--inter-block is only supported by the harmony engine, not ") +
                                to_string(o.kind));
  }
  if (o.kind != EngineKind::Harmony && !o.update_optim) {
    throw std::invalid_argument(std::string("--update-optim off is only meaningful for the harmony engine, not ") +
                                to_string(o.kind));
  }
}

class Engine {
 public:
  explicit Engine(EngineOptions opts, SnapshotStore store = {}, const nlohmann::json& context = nullptr)
      : opts_(opts), store_(std::move(store)) {
    check_options(opts_);
    if (!context.is_null()) restore_context(context);
  }

  const EngineOptions& options() const { return opts_; }
  const SnapshotStore& store() const { return store_; }
  BlockId last_committed() const { return store_.last_committed_block(); }

  BlockId snapshot_for(BlockId id) const {
    return std::max<BlockId>(kGenesisSnapshot, id - (opts_.inter_block ? 2 : 1));
  }

  bool can_simulate(BlockId id) const { return snapshot_for(id) <= last_committed(); }

  std::unique_ptr<BlockExecution> simulate(std::shared_ptr<const Block> block) const {
    if (!can_simulate(block->id)) {
      throw ContractViolation("simulate: snapshot " + std::to_string(snapshot_for(block->id)) + " for block " +
                              std::to_string(block->id) + " not materialized");
    }
    const BlockId snapshot = snapshot_for(block->id);
    if (opts_.kind == EngineKind::Serial) {
      auto exec = std::make_unique<BlockExecution>();
      exec->block = std::move(block);
      exec->snapshot = snapshot;
      return exec;
    }
    return simulate_block(std::move(block), store_, snapshot, opts_.workers);
  }

  // Validates and applies a simulated block, then installs its writes.
  BlockResult commit(std::unique_ptr<BlockExecution> exec) {
    const BlockId id = exec->id();
    if (id != last_committed() + 1) {
      throw ContractViolation("commit: expected block " + std::to_string(last_committed() + 1) + ", got " +
                              std::to_string(id));
    }
    BlockResult result = opts_.kind == EngineKind::Serial ? serial_execute(*exec->block, store_) : validate_and_apply(*exec);
    store_.install_block_writes(id, result.writes);
    result.state_hash = store_.state_hash(id);
    return result;
  }

  BlockResult process_block(std::shared_ptr<const Block> block) { return commit(simulate(std::move(block))); }
  BlockResult process_block(const Block& block) { return process_block(std::make_shared<const Block>(block)); }

  // Engine state beyond the store that a restarted replica needs: committed
  // footprints of the last two blocks, used by inter-block validation.
  nlohmann::json context() const { return {{"history", history_}}; }

  void restore_context(const nlohmann::json& j) {
    history_.clear();
    for (const auto& b : j.at("history")) history_.push_back(b.get<BlockFootprint>());
  }

 private:
  const BlockFootprint* history_at(BlockId id) const {
    for (const auto& b : history_) {
      if (b.id == id) return &b;
    }
    return nullptr;
  }

  BlockResult validate_and_apply(BlockExecution& exec) {
    const std::size_t n = exec.size();
    resolve_dependencies(exec);

    std::vector<char> aborted(n, 0);
    std::vector<Tid> hits;
    std::vector<Tid> guard;
    BlockFootprint fp = block_footprint(exec);
    const BlockFootprint* prev = history_at(exec.id() - 1);

    if (opts_.kind == EngineKind::Harmony && opts_.inter_block) {
      if (prev) {
        exec.inter_deps = compute_inter_deps(fp, *prev);
        fp.inter_deps = exec.inter_deps;
      }
      for (auto t : enhanced_validate(fp, prev, opts_.rule3_order_edges).aborts) {
        aborted[exec.index_of(t)] = 1;
        hits.push_back(t);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (validate(exec.dep_states[i]) == Decision::Abort) hits.push_back(exec.txns[i].tid);
      }
      if (opts_.kind == EngineKind::Harmony) {
        for (auto t : hits) aborted[exec.index_of(t)] = 1;
      }
    }

    if (opts_.kind == EngineKind::Fabric) aborted = fabric_validate(exec);
    if (opts_.kind == EngineKind::Aria) aborted = aria_validate(exec);
    if (opts_.kind == EngineKind::Harmony && !opts_.update_optim) {
      const auto ww = ww_aborts(exec);
      for (std::size_t i = 0; i < n; ++i) aborted[i] = aborted[i] || ww[i];
    }

    if (opts_.kind == EngineKind::Harmony && opts_.inter_block && opts_.cycle_guard) {
      auto survivors = restrict_footprint(fp, [&](Tid t) { return !aborted[exec.index_of(t)]; });
      guard = cycle_guard(survivors, prev, history_at(exec.id() - 2));
      for (auto t : guard) aborted[exec.index_of(t)] = 1;
    }

    const BlockId base = last_committed();
    const OrderFn order = opts_.kind == EngineKind::Harmony ? harmony_order(exec) : tid_order();
    auto body = [&](std::size_t i) {
      if (!aborted[i]) apply_write_sets(exec.txns[i], exec, aborted, store_, base, order);
    };
    const int workers = usable_workers(opts_.workers);
    if (workers <= 1 || n < 2) {
      for (std::size_t i = 0; i < n; ++i) body(i);
    } else {
      tbb::task_arena arena(workers);
      arena.execute([&] { tbb::parallel_for(std::size_t{0}, n, body); });
    }

    BlockResult r;
    r.block = exec.id();
    r.snapshot = exec.snapshot;
    for (const auto& key : exec.reservation.keys()) {
      auto* entry = exec.reservation.find(key);
      if (!entry->handled.load() || entry->applied_order.empty()) continue;
      r.writes[key] = entry->final_value.value_or(0);
      r.applied_order[key] = entry->applied_order;
    }
    for (std::size_t i = 0; i < n; ++i) {
      exec.txns[i].status = aborted[i] ? TxnStatus::Aborted : TxnStatus::Committed;
      (aborted[i] ? r.aborted : r.committed).push_back(exec.txns[i].tid);
    }
    r.hits = std::move(hits);
    r.guard_aborts = std::move(guard);
    r.rw_edges = exec.rw_edges;
    r.inter_deps = exec.inter_deps;
    r.handler_invocations = exec.handler_invocations;
    r.dep_states = exec.dep_states;
    r.txns = std::move(exec.txns);

    if (opts_.inter_block) {
      history_.push_back(restrict_footprint(std::move(fp), [&](Tid t) { return r.is_committed(t); }));
      while (history_.size() > 2) history_.pop_front();
    }
    return r;
  }

  EngineOptions opts_;
  SnapshotStore store_;
  std::deque<BlockFootprint> history_;
};

}  // namespace harmony
