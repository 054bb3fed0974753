#pragma once

// Abort rules of the comparison systems.  They only decide which simulated
// transactions survive; the engine applies the survivors.

#include "harmony/execution.hpp"

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace harmony {

enum class BaselineKind : std::uint8_t { FabricStaleRead, AriaWW, Serial };

// Keys whose value a transaction depended on: its reads plus the keys it
// updated with Add/Mul.  Both baselines validate values, not commands, so a
// read-modify-write counts as a read.
inline std::vector<Key> value_read_keys(const TxnExecution& t) {
  std::vector<Key> out = t.read_keys;
  for (const auto& [k, cmd] : t.writes) {
    if (cmd.read_modify_write()) out.push_back(k);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Scans in tid order; a transaction aborts when any key it read was written by
// a lower-tid transaction already committed in the scan.
inline std::vector<char> fabric_validate(const BlockExecution& exec) {
  std::vector<char> aborted(exec.size(), 0);
  std::unordered_set<Key> written;
  for (std::size_t j = 0; j < exec.size(); ++j) {
    const auto& t = exec.txns[j];
    for (const auto& k : value_read_keys(t)) {
      if (written.contains(k)) {
        aborted[j] = 1;
        break;
      }
    }
    if (!aborted[j]) {
      for (const auto& [k, _] : t.writes) written.insert(k);
    }
  }
  return aborted;
}

// (a) abort when a lower-tid transaction writes a key this one writes;
// (b) abort on a stale read against a lower-tid writer that survived (a) when
//     the transaction also has an incoming rw edge.
inline std::vector<char> aria_validate(const BlockExecution& exec) {
  const std::size_t n = exec.size();
  std::vector<char> aborted(n, 0);
  std::unordered_map<Key, Tid> min_writer;
  for (const auto& t : exec.txns) {
    for (const auto& [k, _] : t.writes) min_writer.try_emplace(k, t.tid);
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (const auto& [k, _] : exec.txns[j].writes) {
      if (min_writer.at(k) < exec.txns[j].tid) aborted[j] = 1;
    }
  }
  const std::vector<char> ww = aborted;

  std::vector<std::vector<Key>> reads(n);
  std::unordered_map<Key, std::vector<std::size_t>> readers;
  std::unordered_map<Key, Tid> min_surviving_writer;
  for (std::size_t i = 0; i < n; ++i) {
    reads[i] = value_read_keys(exec.txns[i]);
    for (const auto& k : reads[i]) readers[k].push_back(i);
    if (!ww[i]) {
      for (const auto& [k, _] : exec.txns[i].writes) min_surviving_writer.try_emplace(k, exec.txns[i].tid);
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (aborted[j]) continue;
    const Tid tid = exec.txns[j].tid;
    bool stale = false;
    for (const auto& k : reads[j]) {
      auto it = min_surviving_writer.find(k);
      if (it != min_surviving_writer.end() && it->second < tid) {
        stale = true;
        break;
      }
    }
    if (!stale) continue;
    bool incoming = false;
    for (const auto& [k, _] : exec.txns[j].writes) {
      auto it = readers.find(k);
      if (it == readers.end()) continue;
      for (auto r : it->second) {
        if (r != j) {
          incoming = true;
          break;
        }
      }
      if (incoming) break;
    }
    if (incoming) aborted[j] = 1;
  }
  return aborted;
}

// Runs the block one transaction at a time in tid order against the live
// state; nothing aborts.
inline BlockResult serial_execute(const Block& block, const SnapshotStore& store) {
  BlockResult out;
  out.block = block.id;
  out.snapshot = store.last_committed_block();
  std::map<Key, Value> live;
  for (const auto& txn : block.txns) {
    TxnExecution rec;
    rec.tid = txn.tid;
    auto read_fn = [&](const Key& key) -> Value {
      if (key.empty()) throw WorkloadError("empty key");
      auto it = live.find(key);
      Value v = it != live.end() ? it->second : store.read(key, out.snapshot);
      rec.reads.push_back({key, out.snapshot, v, rec.writes.contains(key)});
      return v;
    };
    auto emit = [&](const Key& key, const Op& op) {
      if (key.empty()) throw WorkloadError("empty key");
      auto it = live.find(key);
      Value base = it != live.end() ? it->second : store.read(key, out.snapshot);
      live[key] = apply_command(op, base);
      auto [w, inserted] = rec.writes.try_emplace(key);
      if (inserted) {
        rec.updated_keys.push_back(key);
        auto& order = out.applied_order[key];
        order.push_back(txn.tid);
      }
      w->second.then(op);
    };
    rec.steps_executed = txn.program.run(read_fn, emit);
    for (const auto& r : rec.reads) rec.read_keys.push_back(r.key);
    std::sort(rec.read_keys.begin(), rec.read_keys.end());
    rec.read_keys.erase(std::unique(rec.read_keys.begin(), rec.read_keys.end()), rec.read_keys.end());
    rec.status = TxnStatus::Committed;
    out.committed.push_back(txn.tid);
    out.dep_states.push_back(DependencyState::initial(txn.tid));
    out.txns.push_back(std::move(rec));
  }
  for (const auto& [k, v] : live) out.writes[k] = v.value_or(0);
  return out;
}

}  // namespace harmony
