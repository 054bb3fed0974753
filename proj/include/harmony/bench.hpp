#pragma once

// Experiment driver: runs one engine over one generated workload and reports
// abort, false-abort and structure-hit rates plus a modeled throughput.

#include "harmony/oracle.hpp"
#include "harmony/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace harmony::bench {

// Throughput is not measured on the host (one core, noisy); it comes from a
// fixed list schedule of per-transaction costs on `workers` simulated workers.
struct CostModel {
  int workers = 8;
  double sim_base_us = 20.0;
  double sim_per_step_us = 2.0;
  // Every 16th transaction (by tid hash) runs this many times slower.
  double straggler_factor = 6.0;
  double commit_base_us = 4.0;
  double commit_per_write_us = 1.0;
  double validate_per_txn_us = 0.5;
};

struct RunConfig {
  EngineOptions engine;
  WorkloadSpec workload;
  std::size_t txns = 5000;
  std::size_t block_size = 25;
  int replicas = 1;
  std::size_t checkpoint_p = 10;
  bool oracle_check = false;
  bool reinject = false;
  std::size_t max_reinjections = 8;
  CostModel cost;
};

struct RunMetrics {
  std::size_t committed = 0;
  std::size_t aborted = 0;
  double abort_rate = 0;
  double false_abort_rate = 0;
  double hit_rate = 0;
  std::size_t blocks = 0;
  double wall_time = 0;
  double commits_per_second = 0;
  std::size_t guard_aborts = 0;
  // Oracle or replica-agreement failures.
  std::size_t violations = 0;
  std::vector<std::string> violation_details;
};

// Deterministic per-tid mixing for the straggler choice.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Greedy list scheduler over a fixed worker pool.
class Schedule {
 public:
  explicit Schedule(int workers) : free_(static_cast<std::size_t>(std::max(1, workers)), 0.0) {}

  // Runs the tasks (in order, each on the earliest free worker) no earlier
  // than `ready`; returns when the last one finishes.
  double run(const std::vector<double>& tasks, double ready) {
    double end = ready;
    for (auto cost : tasks) {
      auto it = std::min_element(free_.begin(), free_.end());
      const double start = std::max(*it, ready);
      *it = start + cost;
      end = std::max(end, *it);
    }
    return end;
  }

 private:
  std::vector<double> free_;
};

struct BlockCost {
  std::vector<double> sim;
  std::vector<double> commit;
};

inline BlockCost block_cost(const BlockResult& r, const CostModel& m) {
  BlockCost c;
  for (const auto& t : r.txns) {
    double s = m.sim_base_us + m.sim_per_step_us * static_cast<double>(t.steps_executed);
    if (mix64(static_cast<std::uint64_t>(t.tid)) % 16 == 0) s *= m.straggler_factor;
    c.sim.push_back(s);
  }
  // Validation is one serial task; writes apply in parallel.
  c.commit.push_back(m.validate_per_txn_us * static_cast<double>(r.txns.size()));
  for (const auto& t : r.txns) {
    if (r.is_committed(t.tid)) c.commit.push_back(m.commit_base_us + m.commit_per_write_us * static_cast<double>(t.writes.size()));
  }
  return c;
}

// Modeled makespan in microseconds.  Without inter-block parallelism block i
// starts simulating when block i-1 has committed; with it, once block i-2 has
// committed, so its simulations fill workers idled by block i-1's stragglers.
inline double modeled_makespan(const std::vector<BlockCost>& blocks, const CostModel& m, bool inter_block) {
  Schedule pool(m.workers);
  std::vector<double> sim_end(blocks.size(), 0.0), commit_end(blocks.size(), 0.0);
  auto committed_at = [&](std::ptrdiff_t i) { return i < 0 ? 0.0 : commit_end[static_cast<std::size_t>(i)]; };
  auto simulate = [&](std::size_t i) {
    const auto lag = static_cast<std::ptrdiff_t>(inter_block ? 2 : 1);
    sim_end[i] = pool.run(blocks[i].sim, committed_at(static_cast<std::ptrdiff_t>(i) - lag));
  };
  auto commit = [&](std::size_t i) {
    const double ready = std::max(sim_end[i], committed_at(static_cast<std::ptrdiff_t>(i) - 1));
    commit_end[i] = pool.run(blocks[i].commit, ready);
  };
  if (blocks.empty()) return 0.0;
  if (inter_block) {
    simulate(0);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (i + 1 < blocks.size()) simulate(i + 1);
      commit(i);
    }
  } else {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      simulate(i);
      commit(i);
    }
  }
  return commit_end.back();
}

inline RunMetrics run_experiment(const RunConfig& cfg) {
  check_options(cfg.engine);
  if (cfg.block_size == 0) throw std::invalid_argument("--block-size must be positive");
  if (cfg.replicas < 1) throw std::invalid_argument("--replicas must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  RunMetrics m;
  Sequencer seq(cfg.block_size);
  auto programs = generate(cfg.workload, cfg.txns);
  std::map<Tid, std::size_t> attempts;
  for (auto& p : programs) attempts[seq.submit(std::move(p))] = 0;

  Engine engine(cfg.engine);
  oracle::HistoryOracle history;
  std::vector<Block> stream;
  std::vector<BlockCost> costs;
  std::size_t hits = 0, false_aborts = 0, processed = 0;
  auto violation = [&](std::string what) {
    ++m.violations;
    if (m.violation_details.size() < 20) m.violation_details.push_back(std::move(what));
  };

  for (;;) {
    auto blocks = seq.cut(false);
    if (blocks.empty()) blocks = seq.cut(true);
    if (blocks.empty()) break;
    for (auto& block : blocks) {
      const auto r = engine.process_block(block);
      processed += r.txns.size();
      m.committed += r.committed.size();
      m.aborted += r.aborted.size();
      m.guard_aborts += r.guard_aborts.size();
      hits += r.hits.size();
      false_aborts += oracle::false_aborts(r).size();
      costs.push_back(block_cost(r, cfg.cost));
      if (cfg.oracle_check) {
        if (cfg.engine.inter_block) {
          history.add(block, r);
        } else if (cfg.engine.kind != EngineKind::Serial) {
          const auto pre = engine.store().materialize(block.id - 1);
          const auto post = engine.store().materialize(block.id);
          if (!oracle::is_acyclic(oracle::build_graph(r))) violation("block " + std::to_string(block.id) + ": cycle");
          if (auto v = oracle::serial_equivalence(block, r, pre, post); !v) {
            violation("block " + std::to_string(block.id) + ": " + v.reason);
          }
        }
      }
      if (cfg.reinject) {
        for (auto tid : r.aborted) {
          const auto& txn = block.txns[static_cast<std::size_t>(tid - block.txns.front().tid)];
          const auto tries = attempts.at(tid);
          if (tries < cfg.max_reinjections) attempts[seq.submit(txn.program)] = tries + 1;
        }
      }
      stream.push_back(std::move(block));
    }
  }
  if (cfg.oracle_check && cfg.engine.inter_block) {
    if (auto v = history.check(engine.store().materialize(engine.last_committed())); !v) violation("history: " + v.reason);
  }

  if (cfg.replicas > 1) {
    PipelineConfig pc;
    pc.replicas = cfg.replicas;
    pc.block_size = cfg.block_size;
    pc.seed = cfg.workload.seed;
    pc.engine = cfg.engine;
    const auto run = run_replicas(pc, stream);
    if (!run.rows_identical()) violation("replica state hashes diverge");
    for (const auto& rr : run.replicas) {
      for (std::size_t b = 0; b < rr.hashes.size(); ++b) {
        if (rr.hashes[b] != engine.store().state_hash(static_cast<BlockId>(b))) {
          violation("replica hash differs from reference at block " + std::to_string(b));
          break;
        }
      }
    }
  }

  m.blocks = stream.size();
  const double n = static_cast<double>(std::max<std::size_t>(processed, 1));
  m.abort_rate = static_cast<double>(m.aborted) / n;
  m.false_abort_rate = static_cast<double>(false_aborts) / n;
  m.hit_rate = static_cast<double>(hits) / n;
  const double makespan_us = modeled_makespan(costs, cfg.cost, cfg.engine.inter_block);
  m.commits_per_second = makespan_us > 0 ? static_cast<double>(m.committed) / (makespan_us * 1e-6) : 0.0;
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

// ---------------------------------------------------------------------------
// CSV

inline const char* kCsvHeader =
    "engine,workload,theta,block_size,inter_block,update_optim,committed,aborted,abort_rate,false_abort_rate,"
    "hit_rate,wall_time,commits_per_second";

inline std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline std::string csv_row(const RunConfig& c, const RunMetrics& m) {
  std::ostringstream os;
  os << to_string(c.engine.kind) << ',' << to_string(c.workload.kind) << ',' << fmt(c.workload.theta, 2) << ','
     << c.block_size << ',' << (c.engine.inter_block ? 1 : 0) << ',' << (c.engine.update_optim ? 1 : 0) << ','
     << m.committed << ',' << m.aborted << ',' << fmt(m.abort_rate) << ',' << fmt(m.false_abort_rate) << ','
     << fmt(m.hit_rate) << ',' << fmt(m.wall_time, 3) << ',' << fmt(m.commits_per_second, 1);
  return os.str();
}

struct CsvRow {
  std::map<std::string, std::string> fields;

  const std::string& at(const std::string& k) const {
    auto it = fields.find(k);
    if (it == fields.end()) throw std::runtime_error("csv: missing column " + k);
    return it->second;
  }
  double num(const std::string& k) const { return std::stod(at(k)); }

  // Identifies the engine configuration of the row.
  std::string label() const {
    std::string l = at("engine");
    if (at("engine") == "harmony") {
      l += at("inter_block") == "1" ? "+inter" : "";
      l += at("update_optim") == "1" ? "" : "-noreorder";
    }
    return l;
  }
  std::string grid_point() const { return at("workload") + " theta=" + at("theta") + " block_size=" + at("block_size"); }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

inline std::vector<CsvRow> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split_csv_line(line);
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw std::runtime_error("csv: row has " + std::to_string(cells.size()) + " cells");
    CsvRow r;
    for (std::size_t i = 0; i < header.size(); ++i) r.fields[header[i]] = cells[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

// Joins runs from several files on (workload, theta, block_size) and ranks
// the engine configurations at each grid point present in every file.
inline std::string compare(const std::vector<std::vector<CsvRow>>& files) {
  std::ostringstream out;
  if (files.empty()) return "no input files\n";
  std::map<std::string, std::vector<const CsvRow*>> by_point;
  std::map<std::string, std::set<std::size_t>> present;
  for (std::size_t f = 0; f < files.size(); ++f) {
    for (const auto& r : files[f]) {
      by_point[r.grid_point()].push_back(&r);
      present[r.grid_point()].insert(f);
    }
  }
  std::size_t joined = 0;
  for (const auto& [point, rows] : by_point) {
    if (present[point].size() != files.size()) {
      out << "mismatch: " << point << " missing from " << files.size() - present[point].size() << " file(s)\n";
      continue;
    }
    ++joined;
    auto by_abort = rows;
    std::stable_sort(by_abort.begin(), by_abort.end(),
                     [](const auto* a, const auto* b) { return a->num("abort_rate") < b->num("abort_rate"); });
    out << point << "\n  abort_rate:";
    for (const auto* r : by_abort) out << ' ' << r->label() << '=' << r->at("abort_rate");
    auto by_tput = rows;
    std::stable_sort(by_tput.begin(), by_tput.end(), [](const auto* a, const auto* b) {
      return a->num("commits_per_second") > b->num("commits_per_second");
    });
    out << "\n  commits_per_second:";
    for (const auto* r : by_tput) out << ' ' << r->label() << '=' << r->at("commits_per_second");
    out << '\n';
  }
  if (joined == 0) out << "no common grid\n";
  return out.str();
}

// gnuplot data: one indexed data set per engine configuration, columns
// theta abort_rate hit_rate commits_per_second.
inline std::string plot_data(const std::vector<std::pair<RunConfig, RunMetrics>>& runs) {
  std::map<std::string, std::vector<std::string>> series;
  for (const auto& [c, m] : runs) {
    std::string label = std::string(to_string(c.engine.kind)) + "_" + to_string(c.workload.kind) + "_bs" +
                        std::to_string(c.block_size) + (c.engine.inter_block ? "_inter" : "") +
                        (c.engine.update_optim ? "" : "_noreorder");
    series[label].push_back(fmt(c.workload.theta, 2) + ' ' + fmt(m.abort_rate) + ' ' + fmt(m.hit_rate) + ' ' +
                            fmt(m.commits_per_second, 1));
  }
  std::ostringstream out;
  for (const auto& [label, lines] : series) {
    out << "# " << label << "\n# theta abort_rate hit_rate commits_per_second\n";
    for (const auto& l : lines) out << l << '\n';
    out << "\n\n";
  }
  return out.str();
}

}  // namespace harmony::bench
