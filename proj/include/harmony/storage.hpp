#pragma once

#include "harmony/core.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

namespace harmony {

using WriteSet = std::map<Key, std::int64_t>;
using State = std::map<Key, std::int64_t>;

// Multi-versioned key/value store.  Each block installs one version per
// written key; a read at snapshot b sees the newest version <= b.
class SnapshotStore {
 public:
  SnapshotStore() = default;

  SnapshotStore(const SnapshotStore& other) {
    std::shared_lock lock(other.mu_);
    versions_ = other.versions_;
    latest_ = other.latest_;
    hashes_ = other.hashes_;
    oldest_ = other.oldest_;
    last_ = other.last_;
  }

  SnapshotStore& operator=(const SnapshotStore& other) {
    if (this != &other) {
      SnapshotStore copy(other);
      std::scoped_lock lock(mu_);
      versions_ = std::move(copy.versions_);
      latest_ = std::move(copy.latest_);
      hashes_ = std::move(copy.hashes_);
      oldest_ = copy.oldest_;
      last_ = copy.last_;
    }
    return *this;
  }

  BlockId last_committed_block() const {
    std::shared_lock lock(mu_);
    return last_;
  }

  // Oldest snapshot still readable; older versions may have been compacted
  // away by a checkpoint restore.
  BlockId oldest_readable() const {
    std::shared_lock lock(mu_);
    return oldest_;
  }

  Value read(const Key& key, BlockId snapshot) const {
    std::shared_lock lock(mu_);
    check_readable(snapshot);
    return read_locked(key, snapshot);
  }

  void install_block_writes(BlockId block, const WriteSet& writes) {
    std::scoped_lock lock(mu_);
    if (block != last_ + 1) {
      throw ContractViolation("install_block_writes: expected block " + std::to_string(last_ + 1) + ", got " +
                              std::to_string(block));
    }
    for (const auto& [key, value] : writes) {
      if (key.empty()) throw ContractViolation("install_block_writes: empty key");
      versions_[key].emplace_back(block, value);
      latest_[key] = value;
    }
    last_ = block;
    hashes_.emplace_back(block, hash_state(block, latest_));
  }

  State materialize(BlockId snapshot) const {
    std::shared_lock lock(mu_);
    check_readable(snapshot);
    return materialize_locked(snapshot);
  }

  // SHA-256 over the block id and the sorted (key, value) pairs visible at
  // `block`.
  Digest state_hash(BlockId block) const {
    std::shared_lock lock(mu_);
    check_readable(block);
    auto it = std::lower_bound(hashes_.begin(), hashes_.end(), block,
                               [](const auto& e, BlockId b) { return e.first < b; });
    if (it != hashes_.end() && it->first == block) return it->second;
    return hash_state(block, materialize_locked(block));
  }

  static Digest hash_state(BlockId block, const State& state) {
    std::string buf;
    buf.reserve(24 + state.size() * 32);
    auto put_u64 = [&](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    buf.append("harmony-state-v1");
    put_u64(static_cast<std::uint64_t>(block));
    for (const auto& [key, value] : state) {
      put_u64(key.size());
      buf.append(key);
      put_u64(static_cast<std::uint64_t>(value));
    }
    return sha256(buf);
  }

  // Drops versions no snapshot >= horizon can observe.  Off unless called.
  void collect_garbage(BlockId horizon) {
    std::scoped_lock lock(mu_);
    if (horizon > last_) throw ContractViolation("collect_garbage: horizon beyond last committed block");
    if (horizon <= oldest_) return;
    for (auto& [key, list] : versions_) {
      auto first_visible = std::upper_bound(list.begin(), list.end(), horizon,
                                            [](BlockId b, const auto& v) { return b < v.first; });
      if (first_visible != list.begin()) --first_visible;  // newest version <= horizon stays
      list.erase(list.begin(), first_visible);
    }
    std::erase_if(hashes_, [&](const auto& e) { return e.first < horizon; });
    oldest_ = horizon;
  }

  // Versions needed to serve every snapshot >= keep_from.
  nlohmann::json to_json(BlockId keep_from) const {
    std::shared_lock lock(mu_);
    nlohmann::json versions = nlohmann::json::object();
    for (const auto& [key, list] : versions_) {
      auto first_visible = std::upper_bound(list.begin(), list.end(), keep_from,
                                            [](BlockId b, const auto& v) { return b < v.first; });
      if (first_visible != list.begin()) --first_visible;
      auto arr = nlohmann::json::array();
      for (auto it = first_visible; it != list.end(); ++it) arr.push_back({it->first, it->second});
      if (!arr.empty()) versions[key] = std::move(arr);
    }
    return {{"last", last_}, {"oldest", std::max(keep_from, oldest_)}, {"versions", std::move(versions)}};
  }

  static SnapshotStore from_json(const nlohmann::json& j) {
    SnapshotStore s;
    s.last_ = j.at("last").get<BlockId>();
    s.oldest_ = j.at("oldest").get<BlockId>();
    for (const auto& [key, arr] : j.at("versions").items()) {
      auto& list = s.versions_[key];
      for (const auto& v : arr) {
        const auto b = v.at(0).get<BlockId>();
        if (!list.empty() && list.back().first >= b) throw IntegrityError("non-monotone versions for key " + key);
        list.emplace_back(b, v.at(1).get<std::int64_t>());
      }
      if (!list.empty()) s.latest_[key] = list.back().second;
    }
    return s;
  }

 private:
  void check_readable(BlockId snapshot) const {
    if (snapshot > last_) {
      throw ContractViolation("read at snapshot " + std::to_string(snapshot) + " beyond last committed block " +
                              std::to_string(last_));
    }
    if (snapshot < oldest_) {
      throw ContractViolation("snapshot " + std::to_string(snapshot) + " was compacted away");
    }
  }

  Value read_locked(const Key& key, BlockId snapshot) const {
    auto it = versions_.find(key);
    if (it == versions_.end()) return std::nullopt;
    const auto& list = it->second;
    auto v = std::upper_bound(list.begin(), list.end(), snapshot,
                              [](BlockId b, const auto& e) { return b < e.first; });
    if (v == list.begin()) return std::nullopt;
    return std::prev(v)->second;
  }

  State materialize_locked(BlockId snapshot) const {
    if (snapshot == last_) return latest_;
    State out;
    for (const auto& [key, list] : versions_) {
      if (auto v = read_locked(key, snapshot)) out.emplace(key, *v);
    }
    return out;
  }

  mutable std::shared_mutex mu_;
  std::map<Key, std::vector<std::pair<BlockId, std::int64_t>>> versions_;
  State latest_;
  std::vector<std::pair<BlockId, Digest>> hashes_;
  BlockId oldest_ = kGenesisSnapshot;
  BlockId last_ = kGenesisSnapshot;
};

// ---------------------------------------------------------------------------
// Hash-chained logical log.  Blocks are appended (and persisted, when a path
// is configured) before they execute.

inline nlohmann::json block_to_json(const Block& b) {
  nlohmann::json txns = nlohmann::json::array();
  for (const auto& t : b.txns) txns.push_back(t);
  return {{"id", b.id}, {"prev_hash", to_hex(b.prev_hash)}, {"hash", to_hex(b.hash)}, {"txns", std::move(txns)}};
}

inline Block block_from_json(const nlohmann::json& j) {
  Block b;
  b.id = j.at("id").get<BlockId>();
  b.prev_hash = digest_from_hex(j.at("prev_hash").get<std::string>());
  b.hash = digest_from_hex(j.at("hash").get<std::string>());
  b.txns = j.at("txns").get<std::vector<Transaction>>();
  return b;
}

class ChainLog {
 public:
  ChainLog() = default;

  // Persistent log; existing lines are loaded without verification (call
  // verify() for that).  Unparseable lines are kept as holes so verification
  // can report them.
  explicit ChainLog(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(*path_)) {
      std::ifstream in(*path_);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
          blocks_.push_back(block_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception&) {
          corrupt_from_ = static_cast<BlockId>(blocks_.size());
          break;
        }
      }
    }
  }

  std::size_t size() const { return blocks_.size(); }
  const Block& at(BlockId id) const { return blocks_.at(static_cast<std::size_t>(id)); }
  const std::vector<Block>& blocks() const { return blocks_; }
  Digest head_hash() const { return blocks_.empty() ? kZeroDigest : blocks_.back().hash; }
  const std::optional<std::filesystem::path>& path() const { return path_; }

  void append_block(const Block& block) {
    if (corrupt_from_) throw IntegrityError("append to a log with an unreadable tail");
    if (block.id != static_cast<BlockId>(blocks_.size())) {
      throw ContractViolation("append_block: expected id " + std::to_string(blocks_.size()) + ", got " +
                              std::to_string(block.id));
    }
    if (block.prev_hash != head_hash()) {
      throw IntegrityError("append_block: prev_hash of block " + std::to_string(block.id) + " does not link");
    }
    if (block.hash != compute_block_hash(block.prev_hash, block.id, block.txns)) {
      throw IntegrityError("append_block: hash of block " + std::to_string(block.id) + " does not match payload");
    }
    if (path_) {
      std::ofstream out(*path_, std::ios::app);
      out << block_to_json(block).dump() << '\n';
      out.flush();
      if (!out) throw std::runtime_error("append_block: write failed");
    }
    blocks_.push_back(block);
  }

  // Smallest block id whose hash or link fails, or nullopt when intact.
  std::optional<BlockId> verify() const {
    Digest prev = kZeroDigest;
    for (const auto& b : blocks_) {
      if (b.prev_hash != prev) return b.id;
      if (compute_block_hash(b.prev_hash, b.id, b.txns) != b.hash) return b.id;
      prev = b.hash;
    }
    if (corrupt_from_) return corrupt_from_;
    return std::nullopt;
  }

  // Test hook: in-memory mutation without re-sealing.
  Block& mutable_block(BlockId id) { return blocks_.at(static_cast<std::size_t>(id)); }

 private:
  std::optional<std::filesystem::path> path_;
  std::vector<Block> blocks_;
  std::optional<BlockId> corrupt_from_;
};

inline std::optional<BlockId> verify_chain(const ChainLog& chain) { return chain.verify(); }

// Verifies a log file line by line; a line that does not parse is reported at
// its own position.
inline std::optional<BlockId> verify_chain_file(const std::filesystem::path& path) {
  return ChainLog(path).verify();
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// checkpoint_<b>.json holds the store versions needed for snapshots >= b-1,
// an opaque engine context, and a SHA-256 self-checksum.  The marker file
// block_checkpoint_log.json names the newest complete checkpoint and is only
// rewritten after that checkpoint is durable.

struct Checkpoint {
  BlockId block = kGenesisSnapshot;
  SnapshotStore store;
  nlohmann::json context;
};

enum class CheckpointFault : std::uint8_t {
  None,
  TruncatedFile,  // crash while writing the checkpoint file
  BeforeMarker,   // checkpoint file complete, marker not yet updated
};

class CheckpointStore {
 public:
  explicit CheckpointStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path file_for(BlockId b) const { return dir_ / ("checkpoint_" + std::to_string(b) + ".json"); }
  std::filesystem::path marker() const { return dir_ / "block_checkpoint_log.json"; }

  void write(BlockId block, const SnapshotStore& store, const nlohmann::json& context,
             CheckpointFault fault = CheckpointFault::None) const {
    nlohmann::json body = {{"block", block}, {"store", store.to_json(block - 1)}, {"context", context}};
    const std::string checksum = to_hex(sha256(body.dump()));
    body["checksum"] = checksum;
    const std::string text = body.dump();

    const auto tmp = file_for(block).string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (fault == CheckpointFault::TruncatedFile) {
        out << text.substr(0, text.size() / 2);
        return;
      }
      out << text;
      out.flush();
      if (!out) throw std::runtime_error("checkpoint write failed");
    }
    std::filesystem::rename(tmp, file_for(block));
    if (fault == CheckpointFault::BeforeMarker) return;

    write_atomically(marker(), nlohmann::json{{"checkpoint_block", block}}.dump());
    prune(block);
  }

  std::optional<BlockId> marked_block() const {
    if (!std::filesystem::exists(marker())) return std::nullopt;
    std::ifstream in(marker());
    try {
      return nlohmann::json::parse(in).at("checkpoint_block").get<BlockId>();
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  std::optional<Checkpoint> load(BlockId block) const {
    std::ifstream in(file_for(block));
    if (!in) return std::nullopt;
    try {
      auto j = nlohmann::json::parse(in);
      const auto checksum = j.at("checksum").get<std::string>();
      j.erase("checksum");
      if (to_hex(sha256(j.dump())) != checksum) return std::nullopt;
      Checkpoint cp;
      cp.block = j.at("block").get<BlockId>();
      cp.store = SnapshotStore::from_json(j.at("store"));
      cp.context = j.at("context");
      if (cp.block != block || cp.store.last_committed_block() != block) return std::nullopt;
      return cp;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  // Newest complete checkpoint at or below the marker; nullopt means start
  // from genesis.
  std::optional<Checkpoint> load_latest() const {
    const auto marked = marked_block();
    if (!marked) return std::nullopt;
    if (auto cp = load(*marked)) return cp;
    std::vector<BlockId> older;
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
      const auto name = entry.path().filename().string();
      if (name.starts_with("checkpoint_") && name.ends_with(".json")) {
        try {
          const auto b = std::stoll(name.substr(11, name.size() - 16));
          if (b < *marked) older.push_back(b);
        } catch (const std::exception&) {
        }
      }
    }
    std::sort(older.rbegin(), older.rend());
    for (auto b : older) {
      if (auto cp = load(b)) return cp;
    }
    return std::nullopt;
  }

 private:
  static void write_atomically(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << text;
      out.flush();
      if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  // Keeps the newest checkpoint and the one before it.
  void prune(BlockId newest) const {
    std::vector<BlockId> all;
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
      const auto name = entry.path().filename().string();
      if (name.starts_with("checkpoint_") && name.ends_with(".json")) {
        try {
          all.push_back(std::stoll(name.substr(11, name.size() - 16)));
        } catch (const std::exception&) {
        }
      }
    }
    std::sort(all.rbegin(), all.rend());
    std::size_t kept = 0;
    for (auto b : all) {
      if (b > newest) continue;
      if (++kept > 2) std::filesystem::remove(file_for(b));
    }
  }

  std::filesystem::path dir_;
};

// Storage half of recovery: the newest checkpoint plus the logged blocks that
// must be re-executed after it.
struct RecoveryPlan {
  std::optional<Checkpoint> checkpoint;
  std::vector<Block> replay;

  BlockId start_block() const { return checkpoint ? checkpoint->block : kGenesisSnapshot; }
};

inline RecoveryPlan plan_recovery(const ChainLog& log, const CheckpointStore& checkpoints) {
  if (auto bad = log.verify()) {
    throw IntegrityError("recovery: logical log fails verification at block " + std::to_string(*bad));
  }
  RecoveryPlan plan;
  plan.checkpoint = checkpoints.load_latest();
  const BlockId start = plan.start_block();
  if (static_cast<BlockId>(log.size()) <= start) {
    throw IntegrityError("recovery: log ends at block " + std::to_string(static_cast<BlockId>(log.size()) - 1) +
                         " before checkpoint " + std::to_string(start));
  }
  for (BlockId b = start + 1; b < static_cast<BlockId>(log.size()); ++b) plan.replay.push_back(log.at(b));
  return plan;
}

}  // namespace harmony
