#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace harmony {
namespace {

using testing::TempDir;

SnapshotStore with_blocks(const std::vector<WriteSet>& blocks) {
  SnapshotStore s;
  for (std::size_t b = 0; b < blocks.size(); ++b) s.install_block_writes(static_cast<BlockId>(b), blocks[b]);
  return s;
}

TEST(SnapshotStore, ReadsNewestVersionAtOrBelowSnapshot) {
  const auto s = with_blocks({{}, {}, {}, {{"k", 9}}, {}, {}});
  EXPECT_EQ(s.read("k", 5), 9);
  EXPECT_EQ(s.read("k", 2), std::nullopt);
  EXPECT_EQ(s.read("k", kGenesisSnapshot), std::nullopt);
}

TEST(SnapshotStore, VersionVisibility) {
  const auto s = with_blocks({{}, {{"a", 1}}});
  EXPECT_EQ(s.read("a", 0), std::nullopt);
  EXPECT_EQ(s.read("a", 1), 1);
}

TEST(SnapshotStore, ReadBeyondLastCommittedIsRejected) {
  const auto s = with_blocks({{{"a", 1}}});
  EXPECT_THROW(s.read("a", 1), ContractViolation);
}

TEST(SnapshotStore, InstallMustBeInOrder) {
  SnapshotStore s;
  EXPECT_THROW(s.install_block_writes(1, {}), ContractViolation);
  s.install_block_writes(0, {});
  EXPECT_THROW(s.install_block_writes(0, {}), ContractViolation);
}

TEST(SnapshotStore, EmptyBlockAdvancesAndChangesHashOnlyByBlockId) {
  auto s = with_blocks({{{"a", 1}}, {}});
  s.install_block_writes(2, {});
  EXPECT_EQ(s.last_committed_block(), 2);
  EXPECT_EQ(s.materialize(2), s.materialize(1));
  EXPECT_NE(s.state_hash(2), s.state_hash(1));
  EXPECT_EQ(s.state_hash(2), SnapshotStore::hash_state(2, s.materialize(1)));
}

TEST(SnapshotStore, MaterializeOlderSnapshots) {
  const auto s = with_blocks({{{"a", 1}, {"b", 2}}, {{"a", 5}}, {{"c", 3}}});
  EXPECT_EQ(s.materialize(0), (State{{"a", 1}, {"b", 2}}));
  EXPECT_EQ(s.materialize(1), (State{{"a", 5}, {"b", 2}}));
  EXPECT_EQ(s.materialize(2), (State{{"a", 5}, {"b", 2}, {"c", 3}}));
  EXPECT_TRUE(s.materialize(kGenesisSnapshot).empty());
}

TEST(StateHash, IdenticalInputsGiveIdenticalDigests) {
  SnapshotStore a, b;
  a.install_block_writes(0, {});
  b.install_block_writes(0, {});
  EXPECT_EQ(a.state_hash(0), b.state_hash(0));
}

TEST(StateHash, SensitiveToValues) {
  const auto a = with_blocks({{{"x", 1}, {"y", 2}}});
  const auto b = with_blocks({{{"x", 1}, {"y", 3}}});
  EXPECT_NE(a.state_hash(0), b.state_hash(0));
  // Cached and recomputed hashes agree.
  EXPECT_EQ(a.state_hash(0), SnapshotStore::hash_state(0, a.materialize(0)));
}

TEST(StateHash, KeyBoundariesAreUnambiguous) {
  EXPECT_NE(SnapshotStore::hash_state(0, {{"ab", 1}}), SnapshotStore::hash_state(0, {{"a", 1}, {"b", 1}}));
}

TEST(StateHash, ReplayedLogReproducesPerBlockHashes) {
  WorkloadSpec spec;
  spec.theta = 0.8;
  spec.keys = 200;
  const auto blocks = make_blocks(generate(spec, 250), 25);
  Engine original({});
  std::vector<Digest> hashes;
  for (const auto& b : blocks) hashes.push_back(original.process_block(b).state_hash);
  SnapshotStore replay;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    replay.install_block_writes(static_cast<BlockId>(b), original.store().materialize(static_cast<BlockId>(b)));
    EXPECT_EQ(replay.state_hash(static_cast<BlockId>(b)), hashes[b]);
  }
}

TEST(SnapshotStore, JsonRoundTripKeepsRequestedSnapshots) {
  const auto s = with_blocks({{{"a", 1}}, {{"a", 2}, {"b", 1}}, {{"a", 3}}, {{"c", 4}}});
  const auto restored = SnapshotStore::from_json(s.to_json(2));
  EXPECT_EQ(restored.last_committed_block(), 3);
  EXPECT_EQ(restored.oldest_readable(), 2);
  for (BlockId b : {2, 3}) {
    EXPECT_EQ(restored.materialize(b), s.materialize(b));
    EXPECT_EQ(restored.state_hash(b), s.state_hash(b));
  }
  EXPECT_THROW(restored.read("a", 1), ContractViolation);
}

TEST(SnapshotStore, GarbageCollectionKeepsVisibleVersions) {
  auto s = with_blocks({{{"a", 1}}, {{"a", 2}}, {{"b", 1}}});
  const auto before = s.materialize(2);
  s.collect_garbage(1);
  EXPECT_EQ(s.materialize(2), before);
  EXPECT_EQ(s.read("a", 1), 2);
  EXPECT_THROW(s.read("a", 0), ContractViolation);
}

std::vector<Block> sample_chain(std::size_t n) {
  WorkloadSpec spec;
  spec.keys = 100;
  return make_blocks(generate(spec, n * 5), 5);
}

TEST(ChainLog, GenesisHasZeroPrevHash) {
  ChainLog log;
  const auto blocks = sample_chain(1);
  log.append_block(blocks[0]);
  EXPECT_EQ(log.at(0).prev_hash, kZeroDigest);
}

TEST(ChainLog, RejectsBrokenLinkAndWrongId) {
  const auto blocks = sample_chain(6);
  ChainLog log;
  for (int b = 0; b < 5; ++b) log.append_block(blocks[b]);
  Block bad = blocks[5];
  bad.prev_hash[0] ^= 1;
  EXPECT_THROW(log.append_block(bad), IntegrityError);
  EXPECT_THROW(log.append_block(blocks[4]), ContractViolation);
  Block resealed_payload = blocks[5];
  resealed_payload.txns[0].program.add("x", 1);
  EXPECT_THROW(log.append_block(resealed_payload), IntegrityError);
  log.append_block(blocks[5]);
  EXPECT_EQ(log.size(), 6u);
}

TEST(VerifyChain, IntactLogIsOk) {
  const auto blocks = sample_chain(20);
  ChainLog log;
  for (const auto& b : blocks) log.append_block(b);
  EXPECT_EQ(verify_chain(log), std::nullopt);
}

TEST(VerifyChain, LocatesMutatedPayloadAndPrevHash) {
  const auto blocks = sample_chain(20);
  ChainLog log;
  for (const auto& b : blocks) log.append_block(b);
  auto payload = log;
  payload.mutable_block(7).txns[0].program.add("x", 1);
  EXPECT_EQ(verify_chain(payload), 7);
  auto link = log;
  link.mutable_block(12).prev_hash[3] ^= 0x80;
  EXPECT_EQ(verify_chain(link), 12);
}

TEST(VerifyChain, LocatesTamperedBytesOnDisk) {
  TempDir dir("chain");
  const auto path = dir.path() / "chain.jsonl";
  const auto blocks = sample_chain(5);
  {
    ChainLog log(path);
    for (const auto& b : blocks) log.append_block(b);
  }
  EXPECT_EQ(verify_chain_file(path), std::nullopt);
  std::vector<std::string> lines;
  {
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
  }
  // Change one digit inside block 3's transactions.
  auto& line = lines.at(3);
  const auto pos = line.find("\"operand\":{\"c\":");
  ASSERT_NE(pos, std::string::npos);
  auto digit = line.find_first_of("0123456789", pos);
  line[digit] = line[digit] == '9' ? '8' : static_cast<char>(line[digit] + 1);
  {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
  }
  EXPECT_EQ(verify_chain_file(path), 3);
}

TEST(VerifyChain, UnparseableLineIsReportedAtItsPosition) {
  TempDir dir("chain");
  const auto path = dir.path() / "chain.jsonl";
  const auto blocks = sample_chain(4);
  {
    ChainLog log(path);
    for (const auto& b : blocks) log.append_block(b);
  }
  std::vector<std::string> lines;
  {
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
  }
  lines[2] = lines[2].substr(0, lines[2].size() / 2);
  {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
  }
  EXPECT_EQ(verify_chain_file(path), 2);
}

TEST(Checkpoint, WriteLoadAndMarker) {
  TempDir dir("ckpt");
  CheckpointStore cps(dir.path());
  EXPECT_FALSE(cps.load_latest().has_value());
  const auto s = with_blocks({{{"a", 1}}, {{"a", 2}}});
  cps.write(1, s, {{"note", 1}});
  const auto cp = cps.load_latest();
  ASSERT_TRUE(cp);
  EXPECT_EQ(cp->block, 1);
  EXPECT_EQ(cp->store.state_hash(1), s.state_hash(1));
  EXPECT_EQ(cp->context.at("note"), 1);
}

TEST(Checkpoint, CrashMidWriteFallsBackToPrevious) {
  TempDir dir("ckpt");
  CheckpointStore cps(dir.path());
  std::vector<WriteSet> writes;
  for (int b = 0; b <= 20; ++b) writes.push_back({{"k" + std::to_string(b % 3), b}});
  const auto s = with_blocks(writes);
  SnapshotStore at10 = with_blocks({writes.begin(), writes.begin() + 11});
  cps.write(10, at10, nullptr);
  cps.write(20, s, nullptr, CheckpointFault::TruncatedFile);
  EXPECT_EQ(cps.load_latest()->block, 10);
  cps.write(20, s, nullptr, CheckpointFault::BeforeMarker);
  EXPECT_EQ(cps.load_latest()->block, 10);
}

TEST(Checkpoint, CorruptedFileIsIgnored) {
  TempDir dir("ckpt");
  CheckpointStore cps(dir.path());
  const auto s = with_blocks({{{"a", 1}}, {{"a", 2}}, {{"a", 3}}});
  cps.write(1, with_blocks({{{"a", 1}}, {{"a", 2}}}), nullptr);
  cps.write(2, s, nullptr);
  {
    std::ofstream out(cps.file_for(2), std::ios::app);
    out << " ";
  }
  std::string text;
  {
    std::ifstream in(cps.file_for(2));
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  text.replace(text.find("\"last\":2"), 8, "\"last\":9");
  {
    std::ofstream out(cps.file_for(2), std::ios::trunc);
    out << text;
  }
  EXPECT_EQ(cps.load_latest()->block, 1);
}

TEST(Recovery, PlansReplayAfterCheckpoint) {
  TempDir dir("plan");
  const auto blocks = sample_chain(18);
  ChainLog log;
  for (const auto& b : blocks) log.append_block(b);
  CheckpointStore cps(dir.path());
  auto plan = plan_recovery(log, cps);
  EXPECT_EQ(plan.start_block(), kGenesisSnapshot);
  EXPECT_EQ(plan.replay.size(), 18u);

  Engine e({});
  for (BlockId b = 0; b <= 10; ++b) e.process_block(blocks[static_cast<std::size_t>(b)]);
  cps.write(10, e.store(), e.context());
  plan = plan_recovery(log, cps);
  EXPECT_EQ(plan.start_block(), 10);
  ASSERT_EQ(plan.replay.size(), 7u);
  EXPECT_EQ(plan.replay.front().id, 11);
}

TEST(Recovery, RefusesTamperedLog) {
  TempDir dir("plan");
  const auto blocks = sample_chain(5);
  ChainLog log;
  for (const auto& b : blocks) log.append_block(b);
  log.mutable_block(2).txns[0].tid += 100;
  EXPECT_THROW(plan_recovery(log, CheckpointStore(dir.path())), IntegrityError);
}

}  // namespace
}  // namespace harmony
