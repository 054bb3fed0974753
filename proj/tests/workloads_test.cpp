#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace harmony {
namespace {

using testing::chain_of;

TEST(Zipf, UniformAtThetaZero) {
  constexpr std::uint64_t n = 20;
  constexpr int draws = 200000;
  ZipfSampler z(n, 0.0);
  Rng rng(5);
  std::vector<int> counts(n, 0);
  for (int i = 0; i < draws; ++i) ++counts[z.sample(rng)];
  const double p = 1.0 / n;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (auto c : counts) EXPECT_LT(std::abs(c - draws * p), 3 * sigma);
}

TEST(Zipf, TopKeyMatchesHarmonicMass) {
  constexpr std::uint64_t n = 10000;
  constexpr int draws = 1000000;
  const double theta = 0.99;
  double harmonic = 0;
  for (std::uint64_t r = 1; r <= n; ++r) harmonic += std::pow(static_cast<double>(r), -theta);
  const double expected = 1.0 / harmonic;

  ZipfSampler z(n, theta);
  EXPECT_NEAR(z.mass(0), expected, 1e-12);
  Rng rng(11);
  int top = 0;
  for (int i = 0; i < draws; ++i) top += z.sample(rng) == 0;
  EXPECT_NEAR(top / static_cast<double>(draws), expected, 0.05 * expected);
}

TEST(Zipf, RejectsBadParameters) {
  EXPECT_THROW(ZipfSampler(0, 0.5), std::invalid_argument);
  EXPECT_THROW(ZipfSampler(10, 1.5), std::invalid_argument);
}

TEST(Generators, SameSeedSameStream) {
  for (auto kind : {WorkloadKind::Ycsb, WorkloadKind::Smallbank, WorkloadKind::YcsbHotspot}) {
    WorkloadSpec spec;
    spec.kind = kind;
    spec.theta = 0.7;
    spec.hotspot_prob = 0.2;
    spec.seed = 42;
    const auto a = make_blocks(generate(spec, 300), 25);
    const auto b = make_blocks(generate(spec, 300), 25);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].hash, b[i].hash) << to_string(kind);
    spec.seed = 43;
    EXPECT_NE(make_blocks(generate(spec, 300), 25).back().hash, a.back().hash);
  }
}

TEST(Generators, YcsbShape) {
  WorkloadSpec spec;
  spec.keys = 100;
  for (const auto& p : gen_ycsb(spec, 50)) {
    std::size_t ops = 0;
    p.run([&](const Key& k) {
            EXPECT_EQ(k[0], 'k');
            ++ops;
            return Value{};
          },
          [&](const Key&, const Op&) { ++ops; });
    EXPECT_EQ(ops, spec.ops_per_txn);
  }
}

// Runs one program against a prepared state and returns the final state.
State run_against(const std::vector<Program>& setup, const Program& p) {
  const auto blocks = chain_of({setup, {p}});
  Engine e({});
  e.process_block(blocks[0]);
  e.process_block(blocks[1]);
  return e.store().materialize(1);
}

TEST(Smallbank, DepositChecking) {
  const auto s = run_against({Program().set(checking_key(1), 10)}, smallbank::deposit_checking(1, 5));
  EXPECT_EQ(s.at(checking_key(1)), 15);
}

TEST(Smallbank, SendPaymentNeedsFunds) {
  const auto blocks = chain_of({{Program().set(checking_key(1), 3)}, {smallbank::send_payment(1, 2, 5)}});
  Engine e({});
  e.process_block(blocks[0]);
  const auto r = e.process_block(blocks[1]);
  EXPECT_TRUE(r.writes.empty());
  EXPECT_EQ(e.store().read(checking_key(1), 1), 3);

  const auto ok = run_against({Program().set(checking_key(1), 8)}, smallbank::send_payment(1, 2, 5));
  EXPECT_EQ(ok.at(checking_key(1)), 3);
  EXPECT_EQ(ok.at(checking_key(2)), 5);
}

TEST(Smallbank, WriteCheckBranches) {
  const auto covered = run_against({Program().set(checking_key(1), 20).set(savings_key(1), 0)}, smallbank::write_check(1, 7));
  EXPECT_EQ(covered.at(checking_key(1)), 13);
  const auto short_funds = run_against({Program().set(checking_key(1), 2)}, smallbank::write_check(1, 7));
  EXPECT_EQ(short_funds.at(checking_key(1)), 2 - 8);
}

TEST(Smallbank, TransactSavingsKeepsBalanceNonNegative) {
  EXPECT_EQ(run_against({Program().set(savings_key(1), 4)}, smallbank::transact_savings(1, -5)).at(savings_key(1)), 4);
  EXPECT_EQ(run_against({Program().set(savings_key(1), 4)}, smallbank::transact_savings(1, -4)).at(savings_key(1)), 0);
}

TEST(Smallbank, AmalgamateMovesEverything) {
  const auto s = run_against({Program().set(checking_key(1), 6).set(savings_key(1), 4).set(checking_key(2), 1)},
                             smallbank::amalgamate(1, 2));
  EXPECT_EQ(s.at(checking_key(1)), 0);
  EXPECT_EQ(s.at(savings_key(1)), 0);
  EXPECT_EQ(s.at(checking_key(2)), 1 + 4 + 6);
}

double abort_rate(EngineKind kind, const std::vector<Block>& blocks) {
  Engine e({.kind = kind});
  std::size_t aborted = 0, total = 0;
  for (const auto& b : blocks) {
    const auto r = e.process_block(b);
    aborted += r.aborted.size();
    total += b.txns.size();
  }
  return static_cast<double>(aborted) / static_cast<double>(total);
}

TEST(Smallbank, HarmonyAbortsLessThanAria) {
  WorkloadSpec spec;
  spec.kind = WorkloadKind::Smallbank;
  spec.theta = 0.6;
  spec.keys = 1000;
  const auto blocks = make_blocks(generate(spec, 2000), 25);
  EXPECT_LT(abort_rate(EngineKind::Harmony, blocks), abort_rate(EngineKind::Aria, blocks));
}

TEST(Hotspot, ZeroProbabilityIsYcsb) {
  WorkloadSpec spec;
  spec.kind = WorkloadKind::YcsbHotspot;
  spec.hotspot_prob = 0;
  auto plain = spec;
  plain.kind = WorkloadKind::Ycsb;
  EXPECT_EQ(make_blocks(generate(spec, 100), 25).back().hash, make_blocks(generate(plain, 100), 25).back().hash);
}

TEST(Hotspot, SingleHotKey) {
  WorkloadSpec spec;
  spec.kind = WorkloadKind::YcsbHotspot;
  spec.hotspot_prob = 1.0;
  spec.keys = 100;
  spec.hotspot_fraction = 0.01;
  const auto blocks = make_blocks(generate(spec, 500), 25);
  for (const auto& b : blocks) {
    for (const auto& t : b.txns) {
      t.program.run([](const Key&) -> Value { ADD_FAILURE() << "hotspot txn read"; return {}; },
                    [](const Key& k, const Op&) { EXPECT_EQ(k, "k0"); });
    }
  }
  EXPECT_EQ(abort_rate(EngineKind::Harmony, blocks), 0.0);
  EXPECT_GE(abort_rate(EngineKind::Aria, blocks), 24.0 / 25.0);
}

TEST(WorkloadKind, StringRoundTrip) {
  for (auto k : {WorkloadKind::Ycsb, WorkloadKind::Smallbank, WorkloadKind::YcsbHotspot}) {
    EXPECT_EQ(workload_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(workload_kind_from_string("tpcc"), std::invalid_argument);
}

}  // namespace
}  // namespace harmony
