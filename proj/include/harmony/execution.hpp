#pragma once

#include "harmony/core.hpp"
#include "harmony/storage.hpp"

#include <tbb/parallel_for.h>
#include <tbb/info.h>
#include <tbb/task_arena.h>

#include <algorithm>
#include <atomic>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

namespace harmony {

struct ReadRecord {
  Key key;
  BlockId snapshot_block = kGenesisSnapshot;
  Value observed;
  // Served from the transaction's own update commands.
  bool own_read = false;

  friend bool operator==(const ReadRecord&, const ReadRecord&) = default;
};

inline constexpr Tid kNegInf = std::numeric_limits<Tid>::min();

// Per-transaction rw accumulators.  min_out starts at tid+1 and only
// decreases; max_in starts at -inf and only increases.
struct DependencyState {
  Tid tid = 0;
  Tid min_out = 1;
  Tid max_in = kNegInf;

  static DependencyState initial(Tid tid) { return {tid, tid + 1, kNegInf}; }

  friend bool operator==(const DependencyState&, const DependencyState&) = default;
};

// Rule 2 sort key: ascending min_out, ties by tid.
struct OrderKey {
  Tid min_out = 0;
  Tid tid = 0;
  friend auto operator<=>(const OrderKey&, const OrderKey&) = default;
};

inline OrderKey order_key(const DependencyState& s) { return {s.min_out, s.tid}; }

// What one transaction did during simulation.
struct TxnExecution {
  Tid tid = 0;
  TxnStatus status = TxnStatus::Pending;
  std::vector<ReadRecord> reads;
  // Distinct keys read (own reads included), sorted.
  std::vector<Key> read_keys;
  // One coalesced command chain per updated key.
  std::map<Key, CompositeCommand> writes;
  // Keys in order of first update.
  std::vector<Key> updated_keys;
  std::size_t steps_executed = 0;

  bool reads_key(const Key& k) const { return std::binary_search(read_keys.begin(), read_keys.end(), k); }
  bool writes_key(const Key& k) const { return writes.contains(k); }
};

// Key -> update commands collected during simulation.  Appends are mutually
// exclusive per key; the handled flag is claimed once by test-and-set.
class UpdateReservationTable {
 public:
  struct Entry {
    std::mutex mu;
    std::vector<std::pair<Tid, CompositeCommand>> cmds;
    std::atomic<bool> handled{false};
    // Filled by the claimant.
    std::vector<Tid> applied_order;
    Value final_value;
  };

  // Appends `op` for `tid`, coalescing with that transaction's earlier command
  // on the same key so each transaction holds at most one entry per key.
  void on_update(const Key& key, Tid tid, const Op& op) {
    Entry& e = entry(key);
    std::scoped_lock lock(e.mu);
    for (auto& [issuer, cmd] : e.cmds) {
      if (issuer == tid) {
        cmd.then(op);
        return;
      }
    }
    e.cmds.emplace_back(tid, CompositeCommand({op}));
  }

  Entry* find(const Key& key) {
    std::shared_lock lock(mu_);
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : it->second.get();
  }

  const Entry* find(const Key& key) const { return const_cast<UpdateReservationTable*>(this)->find(key); }

  // Commands for `key` in issuer-tid order (the collection order is racy).
  std::vector<std::pair<Tid, CompositeCommand>> commands(const Key& key) const {
    const Entry* e = find(key);
    if (!e) return {};
    std::vector<std::pair<Tid, CompositeCommand>> out;
    {
      std::scoped_lock lock(const_cast<Entry*>(e)->mu);
      out = e->cmds;
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  std::vector<Key> keys() const {
    std::shared_lock lock(mu_);
    std::vector<Key> out;
    out.reserve(entries_.size());
    for (const auto& [k, _] : entries_) out.push_back(k);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  Entry& entry(const Key& key) {
    {
      std::shared_lock lock(mu_);
      if (auto it = entries_.find(key); it != entries_.end()) return *it->second;
    }
    std::scoped_lock lock(mu_);
    auto& slot = entries_[key];
    if (!slot) slot = std::make_unique<Entry>();
    return *slot;
  }

  mutable std::shared_mutex mu_;
  std::unordered_map<Key, std::unique_ptr<Entry>> entries_;
};

// Intra-block rw edge T_writer <-rw T_reader: the reader saw the before-image
// of the writer's update, so the reader precedes the writer.
struct RwEdge {
  Tid writer = 0;
  Tid reader = 0;
  friend auto operator<=>(const RwEdge&, const RwEdge&) = default;
};

enum class DepKind : std::uint8_t { Rw, Ww, Wr };

// Dependency between a transaction of this block and one of the previous
// block.  `before` must serialize ahead of `after`.
struct InterDep {
  Tid before = 0;
  Tid after = 0;
  DepKind kind = DepKind::Rw;
  friend auto operator<=>(const InterDep&, const InterDep&) = default;
};

struct BlockExecution {
  std::shared_ptr<const Block> block;
  BlockId snapshot = kGenesisSnapshot;
  std::vector<TxnExecution> txns;  // aligned with block->txns
  UpdateReservationTable reservation;
  std::vector<DependencyState> dep_states;  // aligned with txns
  std::vector<RwEdge> rw_edges;             // sorted, unique
  std::vector<InterDep> inter_deps;         // sorted, unique
  std::size_t handler_invocations = 0;
  bool resolved = false;

  BlockId id() const { return block->id; }
  std::size_t size() const { return txns.size(); }

  std::size_t index_of(Tid tid) const {
    const Tid first = txns.empty() ? 0 : txns.front().tid;
    const auto idx = static_cast<std::size_t>(tid - first);
    if (tid < first || idx >= txns.size() || txns[idx].tid != tid) {
      throw ContractViolation("tid " + std::to_string(tid) + " not in block " + std::to_string(id()));
    }
    return idx;
  }
};

// Requested worker count capped by what the machine offers.
inline int usable_workers(int requested) { return std::max(1, std::min(requested, tbb::info::default_concurrency())); }

// Runs a transaction program against `snapshot`, recording reads and
// publishing update commands to the reservation table.  Reads of a key the
// transaction already updated evaluate its own command chain on the snapshot
// value and still count as reads of that key.
inline TxnExecution simulate_txn(const Transaction& txn, const SnapshotStore& store, BlockId snapshot,
                                 UpdateReservationTable* reservation) {
  TxnExecution out;
  out.tid = txn.tid;
  auto read_fn = [&](const Key& key) -> Value {
    if (key.empty()) throw WorkloadError("empty key");
    Value base = store.read(key, snapshot);
    auto own = out.writes.find(key);
    if (own != out.writes.end()) {
      Value v = own->second.apply(base);
      out.reads.push_back({key, snapshot, v, true});
      return v;
    }
    out.reads.push_back({key, snapshot, base, false});
    return base;
  };
  auto emit = [&](const Key& key, const Op& op) {
    if (key.empty()) throw WorkloadError("empty key");
    auto [it, inserted] = out.writes.try_emplace(key);
    if (inserted) out.updated_keys.push_back(key);
    it->second.then(op);
    if (reservation) reservation->on_update(key, txn.tid, op);
  };
  out.steps_executed = txn.program.run(read_fn, emit);
  for (const auto& r : out.reads) out.read_keys.push_back(r.key);
  std::sort(out.read_keys.begin(), out.read_keys.end());
  out.read_keys.erase(std::unique(out.read_keys.begin(), out.read_keys.end()), out.read_keys.end());
  out.status = TxnStatus::Simulated;
  return out;
}

// Simulates every transaction of `block` against `snapshot` on up to
// `workers` threads.
inline std::unique_ptr<BlockExecution> simulate_block(std::shared_ptr<const Block> block, const SnapshotStore& store,
                                                      BlockId snapshot, int workers) {
  auto exec = std::make_unique<BlockExecution>();
  exec->block = std::move(block);
  exec->snapshot = snapshot;
  const auto& txns = exec->block->txns;
  for (std::size_t i = 1; i < txns.size(); ++i) {
    if (txns[i].tid != txns[i - 1].tid + 1) throw ContractViolation("block tids must be contiguous and ascending");
  }
  exec->txns.resize(txns.size());
  auto body = [&](std::size_t i) { exec->txns[i] = simulate_txn(txns[i], store, snapshot, &exec->reservation); };
  workers = usable_workers(workers);
  if (workers <= 1 || txns.size() < 2) {
    for (std::size_t i = 0; i < txns.size(); ++i) body(i);
  } else {
    tbb::task_arena arena(workers);
    arena.execute([&] { tbb::parallel_for(std::size_t{0}, txns.size(), body); });
  }
  exec->dep_states.reserve(txns.size());
  for (const auto& t : txns) exec->dep_states.push_back(DependencyState::initial(t.tid));
  return exec;
}

// Outcome of one block's commit step.
struct BlockResult {
  BlockId block = 0;
  BlockId snapshot = kGenesisSnapshot;
  std::vector<Tid> committed;  // ascending
  std::vector<Tid> aborted;    // ascending
  WriteSet writes;
  // Per updated key, the committed issuers in the order their commands applied.
  std::map<Key, std::vector<Tid>> applied_order;
  // Transactions matching a (generalized) backward dangerous structure.
  std::vector<Tid> hits;
  std::vector<Tid> guard_aborts;
  std::vector<TxnExecution> txns;  // simulation records, aligned with the block
  std::vector<DependencyState> dep_states;
  std::vector<RwEdge> rw_edges;
  std::vector<InterDep> inter_deps;
  std::size_t handler_invocations = 0;
  Digest state_hash = kZeroDigest;

  bool is_committed(Tid t) const { return std::binary_search(committed.begin(), committed.end(), t); }
};

}  // namespace harmony
