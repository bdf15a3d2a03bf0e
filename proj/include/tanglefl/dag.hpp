#pragma once

// Permissioned Tangle-style DAG: content-addressed blocks, tip tracking,
// milestone confirmation, and a multi-node gossip fabric driven by the
// simulated clock.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tanglefl/hash.hpp"
#include "tanglefl/rng.hpp"
#include "tanglefl/sim.hpp"

namespace tanglefl::dag {

using NodeId = std::string;

constexpr std::size_t kMaxPayloadBytes = 32768;
constexpr std::size_t kMaxParents = 8;

struct DagError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PayloadTooLarge : DagError {
    using DagError::DagError;
};
struct UnknownParent : DagError {
    using DagError::DagError;
};
struct EmptyLedger : DagError {
    using DagError::DagError;
};
struct TooEarly : DagError {
    using DagError::DagError;
};

struct BlockId {
    Digest256 digest{};

    auto operator<=>(const BlockId&) const = default;
    std::string hex() const { return to_hex(digest); }
};

struct BlockIdHash {
    std::size_t operator()(const BlockId& id) const {
        std::size_t h = 0;
        for (int i = 0; i < 8; ++i) h = (h << 8) | id.digest[i];
        return h;
    }
};

struct Block {
    std::vector<BlockId> parents;
    std::vector<std::uint8_t> payload;
    NodeId issuer;
    std::int64_t issued_at_us = 0;
    BlockId id;

    double issued_at_s() const { return static_cast<double>(issued_at_us) / 1e6; }
};

// Length-prefixed little-endian field order: parent count, parent ids,
// payload length, payload, issuer length, issuer, timestamp (microseconds).
std::vector<std::uint8_t> canonical_encoding(const std::vector<BlockId>& parents,
                                             const std::vector<std::uint8_t>& payload,
                                             const NodeId& issuer,
                                             std::int64_t issued_at_us);
BlockId compute_block_id(const Block& b);

Block genesis_block();

// Milestone / checkpoint payload markers.
std::vector<std::uint8_t> milestone_payload(std::uint64_t index);
std::vector<std::uint8_t> checkpoint_payload();
bool is_milestone_payload(const std::vector<std::uint8_t>& payload);
bool is_checkpoint_payload(const std::vector<std::uint8_t>& payload);
// Returns the milestone index, or nullopt when not a milestone payload.
std::optional<std::uint64_t> parse_milestone_index(const std::vector<std::uint8_t>& payload);

enum class AttachResult { attached, duplicate, buffered };

struct IntegrityViolation {
    enum class Kind { id_mismatch, dangling_parent };
    Kind kind;
    BlockId block;
    std::string detail;
};

std::vector<IntegrityViolation> verify_block_set(const std::vector<Block>& blocks);

// One ledger node's view of the Tangle. Out-of-order blocks are buffered
// until their parents arrive, never rejected.
class NodeState {
public:
    explicit NodeState(NodeId id) : node_id_(std::move(id)) {}

    const NodeId& node_id() const { return node_id_; }

    bool knows(const BlockId& id) const { return known_.count(id) > 0; }
    const Block& block(const BlockId& id) const;
    std::size_t block_count() const { return attach_order_.size(); }

    const std::set<BlockId>& tips() const { return tips_; }
    const std::vector<BlockId>& attach_order() const { return attach_order_; }
    bool is_confirmed(const BlockId& id) const { return confirmed_.count(id) > 0; }
    std::size_t confirmed_count() const { return confirmed_.size(); }

    // Attaches a block, flushing any buffered descendants that become
    // attachable. Newly attached blocks (in attach order) are appended to
    // `out_attached` when provided. Idempotent on duplicates.
    AttachResult attach(const Block& b, std::vector<Block>* out_attached = nullptr);

    std::size_t buffered_count() const;

    // Past cone of `roots` over this node's view, in deterministic DFS
    // order. Unknown roots are skipped.
    std::vector<BlockId> past_cone(const std::vector<BlockId>& roots) const;

    // Marks the past cone of the milestone's parents confirmed; returns the
    // newly confirmed ids in deterministic order.
    std::vector<BlockId> confirm(const Block& milestone);

    // Tips recomputed from scratch; used to cross-check incremental upkeep.
    std::set<BlockId> recompute_tips() const;

    std::vector<IntegrityViolation> verify_integrity() const;

    std::vector<Block> blocks_in_attach_order() const;

private:
    void attach_now(const Block& b, std::vector<Block>* out_attached);

    NodeId node_id_;
    std::unordered_map<BlockId, Block, BlockIdHash> known_;
    std::vector<BlockId> attach_order_;
    std::set<BlockId> tips_;
    std::unordered_set<BlockId, BlockIdHash> confirmed_;
    std::unordered_set<BlockId, BlockIdHash> ever_parent_;
    // missing parent id -> blocks waiting on it
    std::map<BlockId, std::vector<Block>> pending_;
};

// Validates and builds a block against the issuer's current view. Pure:
// the block is not attached.
Block make_block(const NodeState& issuer_view, std::vector<BlockId> parents,
                 std::vector<std::uint8_t> payload, NodeId issuer, double now_s);

// min(k, |tips|) distinct tips, uniform without replacement.
std::vector<BlockId> select_tips(const NodeState& state, std::size_t k, Rng& rng);

struct Milestone {
    Block block;
    std::uint64_t index = 0;
    std::vector<BlockId> confirmed; // newly confirmed at the issuing node
};

// Multi-node gossip fabric. Every block attached at node i is forwarded to
// each neighbor j and arrives latency(i,j) later; constant per-link latency
// plus the clock's tie-breaking keeps per-link delivery FIFO.
class LedgerFabric {
public:
    using AttachHook = std::function<void(std::size_t node, const Block&)>;
    using ConfirmHook =
        std::function<void(std::size_t node, std::uint64_t ms_index, const BlockId&, double t)>;

    LedgerFabric(sim::SimClock& clock, std::size_t n_nodes,
                 std::vector<std::vector<double>> latency_s);

    std::size_t node_count() const { return nodes_.size(); }
    NodeState& node(std::size_t i) { return nodes_.at(i); }
    const NodeState& node(std::size_t i) const { return nodes_.at(i); }
    const Block& genesis() const { return genesis_; }

    void set_attach_hook(AttachHook h) { on_attach_ = std::move(h); }
    void set_confirm_hook(ConfirmHook h) { on_confirm_ = std::move(h); }

    // Builds a block on `origin`'s view, attaches it there now, and gossips.
    const Block& submit(std::size_t origin, std::vector<BlockId> parents,
                        std::vector<std::uint8_t> payload, NodeId issuer);

    // Issues checkpoints while more than kMaxParents tips exist, then the
    // milestone over the remaining tips, and confirms its past cone.
    Milestone issue_milestone(std::size_t origin, std::uint64_t index, NodeId issuer);

    // True when every node knows every block (quiescence check).
    bool converged() const;

private:
    void deliver(std::size_t to, Block b);
    void after_attach(std::size_t at, const Block& b);

    sim::SimClock& clock_;
    std::vector<NodeState> nodes_;
    std::vector<std::vector<double>> latency_;
    Block genesis_;
    AttachHook on_attach_;
    ConfirmHook on_confirm_;
};

// Milestone cadence guard: enforces the issue interval and index monotony.
class MilestoneSchedule {
public:
    explicit MilestoneSchedule(double interval_s) : interval_(interval_s) {}

    double interval() const { return interval_; }
    std::uint64_t next_index() const { return next_index_; }
    bool can_issue(double now) const {
        return !has_last_ || now >= last_issue_ + interval_ - 1e-9;
    }

    // Throws TooEarly when called before the interval has elapsed.
    Milestone issue(LedgerFabric& fabric, std::size_t origin, NodeId issuer, double now);

private:
    double interval_;
    bool has_last_ = false;
    double last_issue_ = 0.0;
    std::uint64_t next_index_ = 1;
};

// Snapshot export/import: one block per line,
//   id_hex issuer_hex issued_at_us parent_hex,... payload_hex
// with '-' standing in for empty parent or payload fields. Stored ids are
// kept verbatim so integrity audits can detect tampering.
std::string write_snapshot(const std::vector<Block>& blocks);
std::vector<Block> parse_snapshot(const std::string& text);

} // namespace tanglefl::dag
