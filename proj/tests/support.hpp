#pragma once

// Shared helpers for the test binaries.

#include "harmony/bench.hpp"

#include <filesystem>
#include <random>

namespace harmony::testing {

// Block `id` whose transactions get tids first, first+1, ...
inline Block block_at(BlockId id, Tid first, std::vector<Program> programs, const Digest& prev = kZeroDigest) {
  std::vector<Transaction> txns;
  for (std::size_t i = 0; i < programs.size(); ++i) {
    txns.push_back({first + static_cast<Tid>(i), id, std::move(programs[i])});
  }
  return make_block(id, std::move(txns), prev);
}

// Chains `batches` into consecutive blocks starting at block 0, tid 0.
inline std::vector<Block> chain_of(std::vector<std::vector<Program>> batches) {
  std::vector<Block> out;
  Tid next = 0;
  Digest prev = kZeroDigest;
  for (auto& batch : batches) {
    const auto n = static_cast<Tid>(batch.size());
    out.push_back(block_at(static_cast<BlockId>(out.size()), next, std::move(batch), prev));
    prev = out.back().hash;
    next += n;
  }
  return out;
}

// Random program over keys "r0".."r<keys-1>": reads, bounded updates and an
// occasional guard.  Values stay small so long runs cannot overflow.
inline Program random_program(Rng& rng, std::uint64_t keys, std::size_t max_ops) {
  Program p;
  const std::size_t ops = 1 + rng.below(max_ops);
  std::size_t slots = 0;
  for (std::size_t i = 0; i < ops; ++i) {
    const Key k = "r" + std::to_string(rng.below(keys));
    const auto roll = rng.below(100);
    if (roll < 40) {
      p.read(k, slots++);
    } else if (roll < 65) {
      p.add(k, rng.between(-5, 5));
    } else if (roll < 78) {
      if (slots > 0) {
        Expr e = Expr::reg(rng.below(slots));
        e.constant = rng.between(0, 3);
        p.update(k, OpKind::Set, e);
      } else {
        p.set(k, rng.between(0, 9));
      }
    } else if (roll < 88) {
      p.mul(k, -1);
    } else if (slots > 0) {
      // The guarded step is always an update so no register goes unset.
      p.guard(Expr::reg(rng.below(slots)), Cmp::Ge, rng.between(-3, 3), 1);
      p.add(k, rng.between(1, 5));
    } else {
      p.read(k, slots++);
    }
  }
  return p;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("harmony-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace harmony::testing
