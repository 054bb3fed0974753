#pragma once

// Deterministic workload generators.  Streams are pure functions of
// (spec, count): they use mt19937_64 and convert bits to doubles by hand so
// output does not depend on the standard library's distribution code.

#include "harmony/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace harmony {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool chance(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

// P(rank r) proportional to 1 / (r+1)^theta over ranks [0, n).  Samples by
// binary search over the exact cumulative table, which stays exact at
// theta = 1 where the usual closed-form approximation breaks down.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double theta) : n_(n), theta_(theta) {
    if (n == 0) throw std::invalid_argument("zipf: n must be positive");
    if (theta < 0.0 || theta > 1.0) throw std::invalid_argument("zipf: theta must be in [0, 1]");
    if (theta > 0.0) {
      cdf_.resize(n);
      double acc = 0.0;
      for (std::uint64_t r = 0; r < n; ++r) {
        acc += 1.0 / std::pow(static_cast<double>(r + 1), theta);
        cdf_[r] = acc;
      }
      for (auto& c : cdf_) c /= acc;
      cdf_.back() = 1.0;
    }
  }

  std::uint64_t n() const { return n_; }
  double theta() const { return theta_; }

  // Closed-form probability mass of rank r.
  double mass(std::uint64_t r) const {
    if (theta_ == 0.0) return 1.0 / static_cast<double>(n_);
    return cdf_[r] - (r == 0 ? 0.0 : cdf_[r - 1]);
  }

  std::uint64_t sample(Rng& rng) const {
    if (theta_ == 0.0) return rng.below(n_);
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::uint64_t>(static_cast<std::uint64_t>(it - cdf_.begin()), n_ - 1);
  }

 private:
  std::uint64_t n_;
  double theta_;
  std::vector<double> cdf_;
};

enum class WorkloadKind : std::uint8_t { Ycsb, Smallbank, YcsbHotspot };

inline const char* to_string(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::Ycsb: return "ycsb";
    case WorkloadKind::Smallbank: return "smallbank";
    case WorkloadKind::YcsbHotspot: return "hotspot";
  }
  return "?";
}

inline WorkloadKind workload_kind_from_string(const std::string& s) {
  if (s == "ycsb") return WorkloadKind::Ycsb;
  if (s == "smallbank") return WorkloadKind::Smallbank;
  if (s == "hotspot") return WorkloadKind::YcsbHotspot;
  throw std::invalid_argument("unknown workload: " + s);
}

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::Ycsb;
  std::uint64_t keys = 10000;
  std::size_t ops_per_txn = 10;
  double read_ratio = 0.5;
  double theta = 0.0;
  double hotspot_fraction = 0.01;
  double hotspot_prob = 0.0;
  std::uint64_t seed = 1;
  // Relative weights of Amalgamate, Balance, DepositChecking, SendPayment,
  // TransactSavings, WriteCheck.
  std::array<double, 6> smallbank_mix{1, 1, 1, 1, 1, 1};
};

inline Key ycsb_key(std::uint64_t i) { return "k" + std::to_string(i); }
inline Key checking_key(std::uint64_t a) { return "chk:" + std::to_string(a); }
inline Key savings_key(std::uint64_t a) { return "sav:" + std::to_string(a); }

// Each operation reads a key into its own register or adds a small constant
// to it.
inline std::vector<Program> gen_ycsb(const WorkloadSpec& spec, std::size_t count) {
  Rng rng(spec.seed);
  ZipfSampler zipf(spec.keys, spec.theta);
  std::vector<Program> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    Program p;
    for (std::size_t op = 0; op < spec.ops_per_txn; ++op) {
      const Key key = ycsb_key(zipf.sample(rng));
      if (rng.chance(spec.read_ratio)) {
        p.read(key, op);
      } else {
        p.add(key, rng.between(1, 10));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace smallbank {

inline Program amalgamate(std::uint64_t a, std::uint64_t b) {
  Program p;
  p.read(savings_key(a), 0).read(checking_key(a), 1);
  p.set(savings_key(a), 0).set(checking_key(a), 0);
  p.update(checking_key(b), OpKind::Add, Expr::reg(0).plus(1));
  return p;
}

inline Program balance(std::uint64_t a) {
  Program p;
  p.read(checking_key(a), 0).read(savings_key(a), 1);
  return p;
}

inline Program deposit_checking(std::uint64_t a, std::int64_t v) {
  Program p;
  p.add(checking_key(a), v);
  return p;
}

// Moves v from a's checking to b's checking if a can cover it.
inline Program send_payment(std::uint64_t a, std::uint64_t b, std::int64_t v) {
  Program p;
  p.read(checking_key(a), 0);
  p.guard(Expr::reg(0), Cmp::Ge, v, 2);
  p.add(checking_key(a), -v).add(checking_key(b), v);
  return p;
}

// Adds v (possibly negative) to savings unless the balance would go negative.
inline Program transact_savings(std::uint64_t a, std::int64_t v) {
  Program p;
  p.read(savings_key(a), 0);
  p.guard(Expr::reg(0), Cmp::Ge, -v, 1);
  p.add(savings_key(a), v);
  return p;
}

// Debits v from checking, with a penalty of 1 when the combined balance is
// short.
inline Program write_check(std::uint64_t a, std::int64_t v) {
  Program p;
  p.read(checking_key(a), 0).read(savings_key(a), 1);
  p.guard(Expr::reg(0).plus(1), Cmp::Ge, v, 2);
  p.add(checking_key(a), -v);
  p.guard(Expr::lit(0), Cmp::Ne, 0, 1);  // jump over the penalty branch
  p.add(checking_key(a), -(v + 1));
  return p;
}

}  // namespace smallbank

inline std::vector<Program> gen_smallbank(const WorkloadSpec& spec, std::size_t count) {
  Rng rng(spec.seed);
  ZipfSampler zipf(spec.keys, spec.theta);
  double total = 0;
  for (auto w : spec.smallbank_mix) total += w;
  if (total <= 0) throw std::invalid_argument("smallbank mix must have positive weight");
  std::vector<Program> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    double u = rng.uniform() * total;
    std::size_t proc = 0;
    while (proc + 1 < spec.smallbank_mix.size() && u >= spec.smallbank_mix[proc]) u -= spec.smallbank_mix[proc++];
    const std::uint64_t a = zipf.sample(rng);
    std::uint64_t b = zipf.sample(rng);
    if (spec.keys > 1) {
      while (b == a) b = zipf.sample(rng);
    }
    const std::int64_t v = rng.between(1, 100);
    switch (proc) {
      case 0: out.push_back(smallbank::amalgamate(a, b)); break;
      case 1: out.push_back(smallbank::balance(a)); break;
      case 2: out.push_back(smallbank::deposit_checking(a, v)); break;
      case 3: out.push_back(smallbank::send_payment(a, b, v)); break;
      case 4: out.push_back(smallbank::transact_savings(a, rng.chance(0.5) ? v : -v)); break;
      default: out.push_back(smallbank::write_check(a, v)); break;
    }
  }
  return out;
}

// YCSB where each operation hits one of the hotspot keys with probability
// hotspot_prob.  A hotspot access is a single fused Add.  Other operations
// follow YCSB over the remaining keys.
inline std::vector<Program> gen_hotspot(const WorkloadSpec& spec, std::size_t count) {
  if (spec.hotspot_prob <= 0.0) return gen_ycsb(spec, count);
  const auto hot = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(spec.keys * spec.hotspot_fraction)));
  if (hot >= spec.keys) throw std::invalid_argument("hotspot: hotspot set must leave some cold keys");
  Rng rng(spec.seed);
  ZipfSampler zipf(spec.keys - hot, spec.theta);
  std::vector<Program> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    Program p;
    for (std::size_t op = 0; op < spec.ops_per_txn; ++op) {
      if (rng.chance(spec.hotspot_prob)) {
        p.add(ycsb_key(rng.below(hot)), 1);
        continue;
      }
      const Key key = ycsb_key(hot + zipf.sample(rng));
      if (rng.chance(spec.read_ratio)) {
        p.read(key, op);
      } else {
        p.add(key, rng.between(1, 10));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<Program> generate(const WorkloadSpec& spec, std::size_t count) {
  switch (spec.kind) {
    case WorkloadKind::Ycsb: return gen_ycsb(spec, count);
    case WorkloadKind::Smallbank: return gen_smallbank(spec, count);
    case WorkloadKind::YcsbHotspot: return gen_hotspot(spec, count);
  }
  throw std::invalid_argument("unknown workload kind");
}

}  // namespace harmony
