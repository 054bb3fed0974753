#pragma once

// Order-execute pipeline: a sequencer cuts transactions into hash-chained
// blocks, a seeded discrete-event network delivers them to replicas, and each
// replica logs then executes them.

#include "harmony/engine.hpp"
#include "harmony/workloads.hpp"

#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace harmony {

class Sequencer {
 public:
  explicit Sequencer(std::size_t block_size) : block_size_(block_size) {
    if (block_size == 0) throw std::invalid_argument("block_size must be positive");
  }

  Tid submit(Program program) {
    const Tid tid = next_tid_++;
    pending_.push_back({tid, 0, std::move(program)});
    return tid;
  }

  // Cuts every full block; with `flush`, also the short remainder.
  std::vector<Block> cut(bool flush = false) {
    std::vector<Block> out;
    while (pending_.size() >= block_size_ || (flush && !pending_.empty())) {
      const std::size_t n = std::min(block_size_, pending_.size());
      std::vector<Transaction> txns(std::make_move_iterator(pending_.begin()),
                                    std::make_move_iterator(pending_.begin() + static_cast<std::ptrdiff_t>(n)));
      pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(n));
      for (auto& t : txns) t.block = next_block_;
      Block b = make_block(next_block_++, std::move(txns), prev_hash_);
      prev_hash_ = b.hash;
      out.push_back(std::move(b));
    }
    return out;
  }

  Tid next_tid() const { return next_tid_; }

 private:
  std::size_t block_size_;
  Tid next_tid_ = 0;
  BlockId next_block_ = 0;
  Digest prev_hash_ = kZeroDigest;
  std::deque<Transaction> pending_;
};

inline std::vector<Block> make_blocks(std::vector<Program> programs, std::size_t block_size) {
  Sequencer seq(block_size);
  for (auto& p : programs) seq.submit(std::move(p));
  return seq.cut(true);
}

// Thrown by a replica to model a crash injected during checkpointing.
class SimulatedCrash : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReplicaConfig {
  EngineOptions engine;
  // Checkpoint after every block b with b % checkpoint_p == 0 and b > 0; 0 disables.
  std::size_t checkpoint_p = 0;
  // Directory for the log and checkpoints; in-memory when unset.
  std::optional<std::filesystem::path> dir;
  // Crash while writing the checkpoint for this block.
  std::optional<std::pair<BlockId, CheckpointFault>> checkpoint_crash;
};

// One replica: logs each received block, simulates and commits in block order,
// and records the state hash of every committed block.
class Replica {
 public:
  Replica(int id, ReplicaConfig cfg) : id_(id), cfg_(std::move(cfg)), engine_(cfg_.engine), log_(open_log(cfg_)) {
    if (log_.size() != 0) throw ContractViolation("replica: log already has blocks; use recover()");
  }

  // Rebuilds a replica from its directory: newest complete checkpoint, then
  // the log.  Blocks after the checkpoint still need process_available().
  static Replica recover(int id, ReplicaConfig cfg) {
    if (!cfg.dir) throw ContractViolation("recover: replica has no directory");
    Replica r(id, std::move(cfg), RecoverTag{});
    const auto plan = plan_recovery(r.log_, CheckpointStore(*r.cfg_.dir / "checkpoints"));
    if (plan.checkpoint) {
      r.engine_ = Engine(r.cfg_.engine, plan.checkpoint->store, plan.checkpoint->context);
    }
    r.next_sim_ = plan.start_block() + 1;
    return r;
  }

  int id() const { return id_; }
  const Engine& engine() const { return engine_; }
  const ChainLog& log() const { return log_; }
  const std::map<BlockId, Digest>& hashes() const { return hashes_; }
  BlockId last_committed() const { return engine_.last_committed(); }
  BlockId received() const { return static_cast<BlockId>(log_.size()); }

  // Appends to the log before anything executes.  A block that fails the hash
  // chain throws IntegrityError.
  void receive(const Block& b) { log_.append_block(b); }

  bool can_simulate_next() const { return next_sim_ < received() && engine_.can_simulate(next_sim_); }

  BlockId simulate_next() {
    auto block = std::make_shared<const Block>(log_.at(next_sim_));
    pending_.push_back(engine_.simulate(std::move(block)));
    return next_sim_++;
  }

  bool can_commit_next() const { return !pending_.empty() && pending_.front()->id() == last_committed() + 1; }

  BlockResult commit_next() {
    auto exec = std::move(pending_.front());
    pending_.pop_front();
    BlockResult r = engine_.commit(std::move(exec));
    hashes_[r.block] = r.state_hash;
    maybe_checkpoint(r.block);
    return r;
  }

  // Runs every received block to completion; returns the results in order.
  std::vector<BlockResult> process_available() {
    std::vector<BlockResult> out;
    for (;;) {
      if (can_simulate_next() && (pending_.empty() || cfg_.engine.inter_block)) {
        simulate_next();
      } else if (can_commit_next()) {
        out.push_back(commit_next());
      } else {
        break;
      }
    }
    return out;
  }

 private:
  struct RecoverTag {};
  Replica(int id, ReplicaConfig cfg, RecoverTag) : id_(id), cfg_(std::move(cfg)), engine_(cfg_.engine), log_(open_log(cfg_)) {}

  static ChainLog open_log(const ReplicaConfig& cfg) {
    if (!cfg.dir) return ChainLog();
    std::filesystem::create_directories(*cfg.dir);
    return ChainLog(*cfg.dir / "chain.jsonl");
  }

  void maybe_checkpoint(BlockId b) {
    if (cfg_.checkpoint_p == 0 || !cfg_.dir || b <= 0 || b % static_cast<BlockId>(cfg_.checkpoint_p) != 0) return;
    CheckpointStore store(*cfg_.dir / "checkpoints");
    if (cfg_.checkpoint_crash && cfg_.checkpoint_crash->first == b) {
      store.write(b, engine_.store(), engine_.context(), cfg_.checkpoint_crash->second);
      throw SimulatedCrash("crash while checkpointing block " + std::to_string(b));
    }
    store.write(b, engine_.store(), engine_.context());
  }

  int id_;
  ReplicaConfig cfg_;
  Engine engine_;
  ChainLog log_;
  BlockId next_sim_ = 0;
  std::deque<std::unique_ptr<BlockExecution>> pending_;
  std::map<BlockId, Digest> hashes_;
};

// ---------------------------------------------------------------------------
// Multi-replica harness

struct PipelineConfig {
  int replicas = 4;
  std::size_t block_size = 25;
  double delay_max = 5.0;  // per-block per-replica delay ~ uniform(0, delay_max)
  std::uint64_t seed = 1;
  EngineOptions engine;
  // Carried for config round-trips; replicas in this harness keep no files.
  std::size_t checkpoint_p = 10;
  double block_interval = 1.0;
  // Per-replica processing times are drawn from uniform(0, 2 * mean).
  double sim_cost_mean = 0.6;
  double commit_cost_mean = 0.6;
  std::uint64_t event_horizon = 10'000'000;
  // Deliver a payload-tampered copy of this block to this replica.
  std::optional<std::pair<int, BlockId>> tamper;
};

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  c.replicas = j.value("replicas", c.replicas);
  c.block_size = j.value("block_size", c.block_size);
  c.delay_max = j.value("delay_max", c.delay_max);
  c.seed = j.value("seed", c.seed);
  c.engine.kind = engine_kind_from_string(j.value("engine", std::string("harmony")));
  c.engine.inter_block = j.value("inter_block", c.engine.inter_block);
  c.engine.update_optim = j.value("update_optim", c.engine.update_optim);
  c.checkpoint_p = j.value("checkpoint_p", c.checkpoint_p);
  if (c.replicas < 1) throw std::invalid_argument("replicas must be >= 1");
  if (c.block_size == 0) throw std::invalid_argument("block_size must be positive");
  if (c.delay_max < 0) throw std::invalid_argument("delay_max must be non-negative");
  check_options(c.engine);
  return c;
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"replicas", c.replicas},       {"block_size", c.block_size},
          {"delay_max", c.delay_max},     {"seed", c.seed},
          {"engine", to_string(c.engine.kind)}, {"inter_block", c.engine.inter_block},
          {"update_optim", c.engine.update_optim}, {"checkpoint_p", c.checkpoint_p}};
}

struct ReplicaRun {
  std::vector<Digest> hashes;  // index = block id
  std::vector<BlockResult> results;
  bool halted = false;
  std::string halt_reason;
  // Blocks whose simulation started before the previous block committed.
  std::size_t overlapped = 0;
};

struct PipelineRun {
  std::vector<ReplicaRun> replicas;

  // Whether every replica that did not halt produced the same hash row.
  bool rows_identical() const {
    const std::vector<Digest>* first = nullptr;
    for (const auto& r : replicas) {
      if (r.halted) continue;
      if (!first) first = &r.hashes;
      else if (r.hashes != *first) return false;
    }
    return true;
  }
};

class LivenessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Block tampered_copy(const Block& b) {
  Block t = b;
  if (t.txns.empty()) t.txns.push_back({0, t.id, Program{}});
  t.txns.front().program.add("tampered", 1);
  return t;  // hash left as sealed by the sequencer
}

// Event-driven run of `cfg.replicas` replicas over one block stream.  Each
// replica has one simulation slot and one commit slot, so with inter-block
// parallelism a replica may simulate block i+1 while block i commits.
inline PipelineRun run_replicas(const PipelineConfig& cfg, const std::vector<Block>& stream) {
  check_options(cfg.engine);
  enum class Ev : std::uint8_t { Deliver, SimDone, CommitDone };
  struct Event {
    double time;
    std::uint64_t seq;
    int replica;
    Ev kind;
    BlockId block;
    bool operator>(const Event& o) const { return std::tie(time, seq) > std::tie(o.time, o.seq); }
  };
  struct Slot {
    std::unique_ptr<Replica> replica;
    Rng rng{0};
    bool sim_busy = false;
    bool commit_busy = false;
    std::set<BlockId> sim_ready;
  };

  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  std::uint64_t seq = 0;
  Rng net(cfg.seed);
  std::vector<Slot> slots(static_cast<std::size_t>(cfg.replicas));
  PipelineRun run;
  run.replicas.resize(slots.size());
  for (std::size_t r = 0; r < slots.size(); ++r) {
    slots[r].replica = std::make_unique<Replica>(static_cast<int>(r), ReplicaConfig{cfg.engine, 0, std::nullopt, {}});
    slots[r].rng = Rng(cfg.seed * 0x9e3779b97f4a7c15ULL + r + 1);
    double last = 0.0;
    for (const auto& b : stream) {
      const double send = static_cast<double>(b.id) * cfg.block_interval;
      last = std::max(last, send + net.uniform() * cfg.delay_max);  // FIFO per replica
      events.push({last, seq++, static_cast<int>(r), Ev::Deliver, b.id});
    }
  }

  // Simulation reads its snapshot when it starts; a commit's writes become
  // visible when it finishes.
  auto try_start = [&](std::size_t r, double now) {
    auto& s = slots[r];
    auto& rep = *s.replica;
    if (run.replicas[r].halted) return;
    if (!s.sim_busy && rep.can_simulate_next()) {
      const BlockId b = rep.simulate_next();
      if (b - 1 > rep.last_committed()) ++run.replicas[r].overlapped;
      s.sim_busy = true;
      events.push({now + s.rng.uniform() * 2 * cfg.sim_cost_mean, seq++, static_cast<int>(r), Ev::SimDone, b});
    }
    if (!s.commit_busy && rep.can_commit_next() && s.sim_ready.contains(rep.last_committed() + 1)) {
      const BlockId b = rep.last_committed() + 1;
      s.sim_ready.erase(b);
      s.commit_busy = true;
      events.push({now + s.rng.uniform() * 2 * cfg.commit_cost_mean, seq++, static_cast<int>(r), Ev::CommitDone, b});
    }
  };

  std::uint64_t processed = 0;
  while (!events.empty()) {
    if (++processed > cfg.event_horizon) throw LivenessError("event horizon exceeded");
    const Event e = events.top();
    events.pop();
    const auto r = static_cast<std::size_t>(e.replica);
    auto& s = slots[r];
    if (run.replicas[r].halted) continue;
    switch (e.kind) {
      case Ev::Deliver: {
        const Block& b = stream.at(static_cast<std::size_t>(e.block));
        try {
          if (cfg.tamper && cfg.tamper->first == e.replica && cfg.tamper->second == e.block) {
            s.replica->receive(tampered_copy(b));
          } else {
            s.replica->receive(b);
          }
        } catch (const IntegrityError& err) {
          run.replicas[r].halted = true;
          run.replicas[r].halt_reason = err.what();
          continue;
        }
        break;
      }
      case Ev::SimDone:
        s.sim_busy = false;
        s.sim_ready.insert(e.block);
        break;
      case Ev::CommitDone: {
        auto res = s.replica->commit_next();
        run.replicas[r].hashes.push_back(res.state_hash);
        run.replicas[r].results.push_back(std::move(res));
        s.commit_busy = false;
        break;
      }
    }
    try_start(r, e.time);
  }

  for (std::size_t r = 0; r < slots.size(); ++r) {
    if (run.replicas[r].halted) continue;
    if (run.replicas[r].hashes.size() != stream.size()) {
      throw LivenessError("replica " + std::to_string(r) + " stalled at block " +
                          std::to_string(run.replicas[r].hashes.size()));
    }
  }
  return run;
}

}  // namespace harmony
