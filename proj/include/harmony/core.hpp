#pragma once

#include "harmony/digest.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace harmony {

using Tid = std::int64_t;
using BlockId = std::int64_t;
using Key = std::string;

// Numeric value or Absent (never written).
using Value = std::optional<std::int64_t>;

// Snapshot id of the empty state that precedes block 0.
inline constexpr BlockId kGenesisSnapshot = -1;

// Raised when a workload drives the engine outside its arithmetic or control
// contract (64-bit overflow, branch past the end of a program).
class WorkloadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised on misuse of an API precondition (out-of-order install, reading an
// unmaterialized snapshot, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Raised when persisted data fails a hash or checksum.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace checked {

inline std::int64_t add(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw WorkloadError("int64 overflow in add");
  return r;
}

inline std::int64_t mul(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw WorkloadError("int64 overflow in mul");
  return r;
}

}  // namespace checked

// ---------------------------------------------------------------------------
// Update commands

enum class OpKind : std::uint8_t { Add, Mul, Set };

struct Op {
  OpKind kind = OpKind::Add;
  std::int64_t operand = 0;

  static Op add(std::int64_t c) { return {OpKind::Add, c}; }
  static Op mul(std::int64_t c) { return {OpKind::Mul, c}; }
  static Op set(std::int64_t v) { return {OpKind::Set, v}; }

  // Add and Mul read the value they modify; Set is a blind write.
  bool read_modify_write() const { return kind != OpKind::Set; }

  friend bool operator==(const Op&, const Op&) = default;
};

struct UpdateCommand {
  Op op;
  Tid issuer = 0;

  friend bool operator==(const UpdateCommand&, const UpdateCommand&) = default;
};

inline Value apply_command(const Op& op, const Value& input) {
  const std::int64_t base = input.value_or(0);
  switch (op.kind) {
    case OpKind::Add:
      return checked::add(base, op.operand);
    case OpKind::Mul:
      return checked::mul(base, op.operand);
    case OpKind::Set:
      return op.operand;
  }
  throw std::logic_error("unknown op kind");
}

inline Value apply_command(const UpdateCommand& cmd, const Value& input) {
  return apply_command(cmd.op, input);
}

// An ordered chain of ops evaluated left to right in a single pass.  Composing
// is concatenation, so it is associative by construction.
class CompositeCommand {
 public:
  CompositeCommand() = default;
  explicit CompositeCommand(std::vector<Op> ops) : ops_(std::move(ops)) {}

  Value apply(Value v) const {
    for (const auto& op : ops_) v = apply_command(op, v);
    return v;
  }

  CompositeCommand& then(const Op& op) {
    ops_.push_back(op);
    return *this;
  }

  CompositeCommand& then(const CompositeCommand& next) {
    ops_.insert(ops_.end(), next.ops_.begin(), next.ops_.end());
    return *this;
  }

  bool empty() const { return ops_.empty(); }
  std::span<const Op> ops() const { return ops_; }

  // Whether the chain's result depends on the value it is applied to.
  bool read_modify_write() const { return !ops_.empty() && ops_.front().read_modify_write(); }

  friend bool operator==(const CompositeCommand&, const CompositeCommand&) = default;

 private:
  std::vector<Op> ops_;
};

inline CompositeCommand compose(std::span<const UpdateCommand> commands) {
  if (commands.empty()) throw ContractViolation("compose: empty command list");
  CompositeCommand out;
  for (const auto& c : commands) out.then(c.op);
  return out;
}

inline CompositeCommand compose(std::span<const CompositeCommand> parts) {
  if (parts.empty()) throw ContractViolation("compose: empty command list");
  CompositeCommand out;
  for (const auto& p : parts) out.then(p);
  return out;
}

// ---------------------------------------------------------------------------
// Transaction programs
//
// A program is a small step list: read a key into a register, guard on an
// expression over registers, or emit an update command whose operand may
// depend on registers.  Programs are pure functions of the values they read.

struct Expr {
  std::int64_t constant = 0;
  // (register slot, coefficient)
  std::vector<std::pair<std::size_t, std::int64_t>> terms;

  static Expr lit(std::int64_t c) { return {c, {}}; }
  static Expr reg(std::size_t slot, std::int64_t coef = 1) { return {0, {{slot, coef}}}; }

  Expr& plus(std::size_t slot, std::int64_t coef = 1) {
    terms.emplace_back(slot, coef);
    return *this;
  }

  std::int64_t eval(std::span<const std::int64_t> regs) const {
    std::int64_t acc = constant;
    for (auto [slot, coef] : terms) {
      if (slot >= regs.size()) throw WorkloadError("expression reads an unset register");
      acc = checked::add(acc, checked::mul(coef, regs[slot]));
    }
    return acc;
  }

  friend bool operator==(const Expr&, const Expr&) = default;
};

enum class Cmp : std::uint8_t { Lt, Le, Gt, Ge, Eq, Ne };

inline bool compare(std::int64_t lhs, Cmp cmp, std::int64_t rhs) {
  switch (cmp) {
    case Cmp::Lt: return lhs < rhs;
    case Cmp::Le: return lhs <= rhs;
    case Cmp::Gt: return lhs > rhs;
    case Cmp::Ge: return lhs >= rhs;
    case Cmp::Eq: return lhs == rhs;
    case Cmp::Ne: return lhs != rhs;
  }
  return false;
}

struct ReadStep {
  Key key;
  std::size_t slot = 0;
  friend bool operator==(const ReadStep&, const ReadStep&) = default;
};

struct UpdateStep {
  Key key;
  OpKind kind = OpKind::Add;
  Expr operand;
  friend bool operator==(const UpdateStep&, const UpdateStep&) = default;
};

// When `lhs cmp rhs` is false the next `skip` steps are skipped.
struct GuardStep {
  Expr lhs;
  Cmp cmp = Cmp::Ge;
  std::int64_t rhs = 0;
  std::size_t skip = 0;
  friend bool operator==(const GuardStep&, const GuardStep&) = default;
};

using Step = std::variant<ReadStep, UpdateStep, GuardStep>;

using ReadFn = std::function<Value(const Key&)>;
using EmitFn = std::function<void(const Key&, const Op&)>;

struct Program {
  std::vector<Step> steps;

  Program& read(Key key, std::size_t slot) {
    steps.emplace_back(ReadStep{std::move(key), slot});
    return *this;
  }
  Program& update(Key key, OpKind kind, Expr operand) {
    steps.emplace_back(UpdateStep{std::move(key), kind, std::move(operand)});
    return *this;
  }
  Program& add(Key key, std::int64_t c) { return update(std::move(key), OpKind::Add, Expr::lit(c)); }
  Program& mul(Key key, std::int64_t c) { return update(std::move(key), OpKind::Mul, Expr::lit(c)); }
  Program& set(Key key, std::int64_t v) { return update(std::move(key), OpKind::Set, Expr::lit(v)); }
  Program& guard(Expr lhs, Cmp cmp, std::int64_t rhs, std::size_t skip) {
    steps.emplace_back(GuardStep{std::move(lhs), cmp, rhs, skip});
    return *this;
  }

  // Interprets the program; returns the number of steps executed.
  std::size_t run(const ReadFn& read_fn, const EmitFn& emit) const {
    std::vector<std::int64_t> regs;
    std::size_t executed = 0;
    std::size_t pc = 0;
    while (pc < steps.size()) {
      ++executed;
      const Step& step = steps[pc];
      if (const auto* r = std::get_if<ReadStep>(&step)) {
        if (regs.size() <= r->slot) regs.resize(r->slot + 1, 0);
        regs[r->slot] = read_fn(r->key).value_or(0);
        ++pc;
      } else if (const auto* u = std::get_if<UpdateStep>(&step)) {
        emit(u->key, Op{u->kind, u->operand.eval(regs)});
        ++pc;
      } else {
        const auto& g = std::get<GuardStep>(step);
        const bool pass = compare(g.lhs.eval(regs), g.cmp, g.rhs);
        std::size_t next = pc + 1;
        if (!pass) {
          next += g.skip;
          if (next > steps.size()) throw WorkloadError("guard skips past the end of the program");
        }
        pc = next;
      }
    }
    return executed;
  }

  friend bool operator==(const Program&, const Program&) = default;
};

enum class TxnStatus : std::uint8_t { Pending, Simulated, Committed, Aborted };

struct Transaction {
  Tid tid = 0;
  BlockId block = 0;
  Program program;

  friend bool operator==(const Transaction&, const Transaction&) = default;
};

struct Block {
  BlockId id = 0;
  std::vector<Transaction> txns;
  Digest prev_hash = kZeroDigest;
  Digest hash = kZeroDigest;
};

// ---------------------------------------------------------------------------
// Canonical JSON.  nlohmann::json keeps object keys sorted and dump() emits no
// whitespace, which is the canonical form used for hashing and the log.

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Set: return "set";
  }
  return "?";
}

inline OpKind op_kind_from_string(const std::string& s) {
  if (s == "add") return OpKind::Add;
  if (s == "mul") return OpKind::Mul;
  if (s == "set") return OpKind::Set;
  throw std::invalid_argument("unknown op kind: " + s);
}

inline const char* to_string(Cmp c) {
  switch (c) {
    case Cmp::Lt: return "lt";
    case Cmp::Le: return "le";
    case Cmp::Gt: return "gt";
    case Cmp::Ge: return "ge";
    case Cmp::Eq: return "eq";
    case Cmp::Ne: return "ne";
  }
  return "?";
}

inline Cmp cmp_from_string(const std::string& s) {
  static constexpr std::pair<const char*, Cmp> kAll[] = {
      {"lt", Cmp::Lt}, {"le", Cmp::Le}, {"gt", Cmp::Gt}, {"ge", Cmp::Ge}, {"eq", Cmp::Eq}, {"ne", Cmp::Ne}};
  for (auto [name, c] : kAll) {
    if (s == name) return c;
  }
  throw std::invalid_argument("unknown comparison: " + s);
}

inline void to_json(nlohmann::json& j, const Expr& e) {
  auto terms = nlohmann::json::array();
  for (auto [slot, coef] : e.terms) terms.push_back({slot, coef});
  j = {{"c", e.constant}, {"terms", std::move(terms)}};
}

inline void from_json(const nlohmann::json& j, Expr& e) {
  e.constant = j.at("c").get<std::int64_t>();
  e.terms.clear();
  for (const auto& t : j.at("terms")) {
    e.terms.emplace_back(t.at(0).get<std::size_t>(), t.at(1).get<std::int64_t>());
  }
}

inline void to_json(nlohmann::json& j, const Step& step) {
  if (const auto* r = std::get_if<ReadStep>(&step)) {
    j = {{"op", "read"}, {"key", r->key}, {"slot", r->slot}};
  } else if (const auto* u = std::get_if<UpdateStep>(&step)) {
    j = {{"op", "update"}, {"key", u->key}, {"kind", to_string(u->kind)}, {"operand", u->operand}};
  } else {
    const auto& g = std::get<GuardStep>(step);
    j = {{"op", "guard"}, {"lhs", g.lhs}, {"cmp", to_string(g.cmp)}, {"rhs", g.rhs}, {"skip", g.skip}};
  }
}

inline void from_json(const nlohmann::json& j, Step& step) {
  const auto op = j.at("op").get<std::string>();
  if (op == "read") {
    step = ReadStep{j.at("key").get<std::string>(), j.at("slot").get<std::size_t>()};
  } else if (op == "update") {
    step = UpdateStep{j.at("key").get<std::string>(), op_kind_from_string(j.at("kind").get<std::string>()),
                      j.at("operand").get<Expr>()};
  } else if (op == "guard") {
    step = GuardStep{j.at("lhs").get<Expr>(), cmp_from_string(j.at("cmp").get<std::string>()),
                     j.at("rhs").get<std::int64_t>(), j.at("skip").get<std::size_t>()};
  } else {
    throw std::invalid_argument("unknown step op: " + op);
  }
}

inline void to_json(nlohmann::json& j, const Transaction& t) {
  j = {{"tid", t.tid}, {"block", t.block}, {"steps", t.program.steps}};
}

inline void from_json(const nlohmann::json& j, Transaction& t) {
  t.tid = j.at("tid").get<Tid>();
  t.block = j.at("block").get<BlockId>();
  t.program.steps = j.at("steps").get<std::vector<Step>>();
}

namespace detail {

// Appends `s` as a JSON string literal, escaped exactly as nlohmann::json::dump.
inline void append_json_string(std::string& out, std::string_view s) {
  const bool plain = std::all_of(s.begin(), s.end(), [](char c) {
    return static_cast<unsigned char>(c) >= 0x20 && c != '"' && c != '\\' && static_cast<unsigned char>(c) < 0x7f;
  });
  if (plain) {
    out.push_back('"');
    out.append(s);
    out.push_back('"');
  } else {
    out.append(nlohmann::json(std::string(s)).dump());
  }
}

inline void append_expr(std::string& out, const Expr& e) {
  out.append("{\"c\":").append(std::to_string(e.constant)).append(",\"terms\":[");
  for (std::size_t i = 0; i < e.terms.size(); ++i) {
    if (i) out.push_back(',');
    out.push_back('[');
    out.append(std::to_string(e.terms[i].first)).push_back(',');
    out.append(std::to_string(e.terms[i].second)).push_back(']');
  }
  out.append("]}");
}

inline void append_step(std::string& out, const Step& step) {
  if (const auto* r = std::get_if<ReadStep>(&step)) {
    out.append("{\"key\":");
    append_json_string(out, r->key);
    out.append(",\"op\":\"read\",\"slot\":").append(std::to_string(r->slot)).push_back('}');
  } else if (const auto* u = std::get_if<UpdateStep>(&step)) {
    out.append("{\"key\":");
    append_json_string(out, u->key);
    out.append(",\"kind\":\"").append(to_string(u->kind)).append("\",\"op\":\"update\",\"operand\":");
    append_expr(out, u->operand);
    out.push_back('}');
  } else {
    const auto& g = std::get<GuardStep>(step);
    out.append("{\"cmp\":\"").append(to_string(g.cmp)).append("\",\"lhs\":");
    append_expr(out, g.lhs);
    out.append(",\"op\":\"guard\",\"rhs\":").append(std::to_string(g.rhs));
    out.append(",\"skip\":").append(std::to_string(g.skip)).push_back('}');
  }
}

}  // namespace detail

// Same bytes as nlohmann::json{{"id", id}, {"txns", txns}}.dump(), written
// directly because every replica recomputes it for each logged block.
inline std::string canonical_payload(BlockId id, std::span<const Transaction> txns) {
  std::string out;
  out.reserve(64 + txns.size() * 256);
  out.append("{\"id\":").append(std::to_string(id)).append(",\"txns\":[");
  for (std::size_t i = 0; i < txns.size(); ++i) {
    if (i) out.push_back(',');
    out.append("{\"block\":").append(std::to_string(txns[i].block)).append(",\"steps\":[");
    const auto& steps = txns[i].program.steps;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      if (k) out.push_back(',');
      detail::append_step(out, steps[k]);
    }
    out.append("],\"tid\":").append(std::to_string(txns[i].tid)).push_back('}');
  }
  out.append("]}");
  return out;
}

inline Digest compute_block_hash(const Digest& prev_hash, BlockId id, std::span<const Transaction> txns) {
  return Sha256{}.update(prev_hash).update(canonical_payload(id, txns)).finish();
}

// Builds a block and seals it against the previous block's hash.
inline Block make_block(BlockId id, std::vector<Transaction> txns, const Digest& prev_hash) {
  Block b;
  b.id = id;
  b.txns = std::move(txns);
  b.prev_hash = prev_hash;
  b.hash = compute_block_hash(prev_hash, id, b.txns);
  return b;
}

}  // namespace harmony
