#include "support.hpp"

#include <gtest/gtest.h>

namespace harmony {
namespace {

TEST(ApplyCommand, AddMulSet) {
  EXPECT_EQ(apply_command(Op::add(10), 10), 20);
  EXPECT_EQ(apply_command(Op::mul(3), 10), 30);
  EXPECT_EQ(apply_command(Op::set(7), std::nullopt), 7);
}

TEST(ApplyCommand, AbsentCountsAsZero) {
  EXPECT_EQ(apply_command(Op::add(4), std::nullopt), 4);
  EXPECT_EQ(apply_command(Op::mul(4), std::nullopt), 0);
}

TEST(ApplyCommand, OverflowIsAnError) {
  EXPECT_THROW(apply_command(Op::add(1), std::numeric_limits<std::int64_t>::max()), WorkloadError);
  EXPECT_THROW(apply_command(Op::mul(2), std::numeric_limits<std::int64_t>::min()), WorkloadError);
}

TEST(ApplyCommand, UpdateCommandDelegates) {
  EXPECT_EQ(apply_command(UpdateCommand{Op::mul(3), 2}, 10), 30);
}

TEST(Compose, OrderMatters) {
  const std::vector<UpdateCommand> mul_then_add{{Op::mul(3), 2}, {Op::add(10), 1}};
  const std::vector<UpdateCommand> add_then_mul{{Op::add(10), 1}, {Op::mul(3), 2}};
  EXPECT_EQ(compose(mul_then_add).apply(10), 40);
  EXPECT_EQ(compose(add_then_mul).apply(10), 60);
  const std::vector<UpdateCommand> single{{Op::set(5), 0}};
  EXPECT_EQ(compose(single).apply(123), 5);
  EXPECT_EQ(compose(single).apply(std::nullopt), 5);
}

TEST(Compose, EmptyListRejected) {
  EXPECT_THROW(compose(std::span<const UpdateCommand>{}), ContractViolation);
}

Op random_op(Rng& rng) {
  switch (rng.below(3)) {
    case 0: return Op::add(rng.between(-100, 100));
    case 1: return Op::mul(rng.between(-3, 3));
    default: return Op::set(rng.between(-100, 100));
  }
}

// apply(compose(L), v) equals folding apply_command over L.
TEST(Compose, MatchesSequentialFold) {
  Rng rng(5);
  for (int trial = 0; trial < 5000; ++trial) {
    std::vector<UpdateCommand> list(1 + rng.below(8));
    for (auto& c : list) c.op = random_op(rng);
    const Value start = rng.chance(0.1) ? Value{} : Value{rng.between(-100, 100)};
    Value folded = start;
    for (const auto& c : list) folded = apply_command(c, folded);
    ASSERT_EQ(compose(list).apply(start), folded);
    ASSERT_EQ(compose(list).apply(start), compose(list).apply(start));
  }
}

TEST(Compose, Associative) {
  Rng rng(6);
  for (int trial = 0; trial < 2000; ++trial) {
    CompositeCommand a({random_op(rng)}), b({random_op(rng), random_op(rng)}), c({random_op(rng)});
    const std::vector<CompositeCommand> ab{a, b};
    const std::vector<CompositeCommand> bc{b, c};
    const std::vector<CompositeCommand> left{compose(ab), c};
    const std::vector<CompositeCommand> right{a, compose(bc)};
    const Value v = rng.between(-100, 100);
    ASSERT_EQ(compose(left).apply(v), compose(right).apply(v));
  }
}

TEST(Program, ReadsGuardsAndUpdates) {
  Program p;
  p.read("a", 0).guard(Expr::reg(0), Cmp::Ge, 5, 1).add("b", 1).update("c", OpKind::Set, Expr::reg(0, 2).plus(0, 1));
  std::vector<std::pair<Key, Op>> emitted;
  auto run = [&](std::int64_t a) {
    emitted.clear();
    return p.run([&](const Key&) -> Value { return a; }, [&](const Key& k, const Op& op) { emitted.emplace_back(k, op); });
  };
  EXPECT_EQ(run(7), 4u);
  ASSERT_EQ(emitted.size(), 2u);
  EXPECT_EQ(emitted[0], (std::pair<Key, Op>{"b", Op::add(1)}));
  EXPECT_EQ(emitted[1], (std::pair<Key, Op>{"c", Op::set(21)}));
  EXPECT_EQ(run(2), 3u);
  ASSERT_EQ(emitted.size(), 1u);
  EXPECT_EQ(emitted[0].first, "c");
}

TEST(Program, GuardPastEndIsAnError) {
  Program p;
  p.guard(Expr::lit(0), Cmp::Eq, 1, 3).add("x", 1);
  EXPECT_THROW(p.run([](const Key&) -> Value { return 0; }, [](const Key&, const Op&) {}), WorkloadError);
}

TEST(Program, UnsetRegisterIsAnError) {
  Program p;
  p.update("x", OpKind::Add, Expr::reg(2));
  EXPECT_THROW(p.run([](const Key&) -> Value { return 0; }, [](const Key&, const Op&) {}), WorkloadError);
}

TEST(Json, TransactionRoundTrip) {
  Program p;
  p.read("a", 0).guard(Expr::reg(0).plus(1, -2), Cmp::Lt, 4, 1).mul("b", -3).update("c", OpKind::Set, Expr::reg(0));
  const Transaction t{42, 3, p};
  const nlohmann::json j = t;
  EXPECT_EQ(j.get<Transaction>(), t);
}

// The hand-written canonical payload must equal nlohmann's sorted-key dump.
TEST(Json, CanonicalPayloadMatchesLibraryDump) {
  for (auto kind : {WorkloadKind::Ycsb, WorkloadKind::Smallbank}) {
    WorkloadSpec spec;
    spec.kind = kind;
    spec.theta = 0.6;
    const auto blocks = make_blocks(generate(spec, 200), 25);
    for (const auto& b : blocks) {
      const nlohmann::json j{{"id", b.id}, {"txns", b.txns}};
      ASSERT_EQ(canonical_payload(b.id, b.txns), j.dump());
    }
  }
  // Keys needing escapes take the library path.
  const auto b = testing::block_at(0, 0, {Program().add("quote\"key\n", 1)});
  const nlohmann::json j{{"id", b.id}, {"txns", b.txns}};
  EXPECT_EQ(canonical_payload(b.id, b.txns), j.dump());
}

TEST(Block, HashLinksAndDependsOnPayload) {
  const auto b0 = testing::block_at(0, 0, {Program().add("x", 1)});
  EXPECT_EQ(b0.prev_hash, kZeroDigest);
  EXPECT_EQ(b0.hash, compute_block_hash(kZeroDigest, 0, b0.txns));
  const auto other = testing::block_at(0, 0, {Program().add("x", 2)});
  EXPECT_NE(b0.hash, other.hash);
  const auto b1 = testing::block_at(1, 1, {Program().add("x", 1)}, b0.hash);
  EXPECT_EQ(b1.prev_hash, b0.hash);
  EXPECT_NE(b1.hash, testing::block_at(1, 1, {Program().add("x", 1)}).hash);
}

TEST(Digest, HexRoundTrip) {
  const auto d = sha256(std::string("abc"));
  EXPECT_EQ(to_hex(d), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(digest_from_hex(to_hex(d)), d);
}

}  // namespace
}  // namespace harmony
