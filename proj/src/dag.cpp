#include "tanglefl/dag.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace tanglefl::dag {

namespace {

void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_i64le(std::vector<std::uint8_t>& out, std::int64_t v) {
    auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

const std::string kMilestonePrefix = "milestone index=";
const std::string kCheckpointMarker = "checkpoint";

} // namespace

std::vector<std::uint8_t> canonical_encoding(const std::vector<BlockId>& parents,
                                             const std::vector<std::uint8_t>& payload,
                                             const NodeId& issuer,
                                             std::int64_t issued_at_us) {
    std::vector<std::uint8_t> out;
    out.reserve(4 + parents.size() * 32 + 4 + payload.size() + 4 + issuer.size() + 8);
    append_u32le(out, static_cast<std::uint32_t>(parents.size()));
    for (const auto& p : parents) out.insert(out.end(), p.digest.begin(), p.digest.end());
    append_u32le(out, static_cast<std::uint32_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    append_u32le(out, static_cast<std::uint32_t>(issuer.size()));
    out.insert(out.end(), issuer.begin(), issuer.end());
    append_i64le(out, issued_at_us);
    return out;
}

BlockId compute_block_id(const Block& b) {
    auto enc = canonical_encoding(b.parents, b.payload, b.issuer, b.issued_at_us);
    return BlockId{blake2b_256(enc)};
}

Block genesis_block() {
    Block g;
    g.issuer = "genesis";
    g.issued_at_us = 0;
    g.id = compute_block_id(g);
    return g;
}

std::vector<std::uint8_t> milestone_payload(std::uint64_t index) {
    std::string s = kMilestonePrefix + std::to_string(index);
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

std::vector<std::uint8_t> checkpoint_payload() {
    return std::vector<std::uint8_t>(kCheckpointMarker.begin(), kCheckpointMarker.end());
}

bool is_milestone_payload(const std::vector<std::uint8_t>& payload) {
    return parse_milestone_index(payload).has_value();
}

bool is_checkpoint_payload(const std::vector<std::uint8_t>& payload) {
    return std::string(payload.begin(), payload.end()) == kCheckpointMarker;
}

std::optional<std::uint64_t> parse_milestone_index(const std::vector<std::uint8_t>& payload) {
    if (payload.size() <= kMilestonePrefix.size()) return std::nullopt;
    std::string s(payload.begin(), payload.end());
    if (s.compare(0, kMilestonePrefix.size(), kMilestonePrefix) != 0) return std::nullopt;
    std::uint64_t idx = 0;
    const char* first = s.data() + kMilestonePrefix.size();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, idx);
    if (ec != std::errc{} || ptr != last) return std::nullopt;
    return idx;
}

const Block& NodeState::block(const BlockId& id) const {
    auto it = known_.find(id);
    if (it == known_.end()) throw UnknownParent("block not known: " + id.hex());
    return it->second;
}

AttachResult NodeState::attach(const Block& b, std::vector<Block>* out_attached) {
    if (known_.count(b.id)) return AttachResult::duplicate;
    for (const auto& p : b.parents) {
        if (!known_.count(p)) {
            auto& waiting = pending_[p];
            for (const auto& w : waiting) {
                if (w.id == b.id) return AttachResult::buffered;
            }
            waiting.push_back(b);
            return AttachResult::buffered;
        }
    }
    attach_now(b, out_attached);
    return AttachResult::attached;
}

void NodeState::attach_now(const Block& b, std::vector<Block>* out_attached) {
    known_.emplace(b.id, b);
    attach_order_.push_back(b.id);
    for (const auto& p : b.parents) {
        ever_parent_.insert(p);
        tips_.erase(p);
    }
    if (!ever_parent_.count(b.id)) tips_.insert(b.id);
    if (out_attached) out_attached->push_back(b);

    auto it = pending_.find(b.id);
    if (it != pending_.end()) {
        std::vector<Block> waiting = std::move(it->second);
        pending_.erase(it);
        for (auto& w : waiting) attach(w, out_attached);
    }
}

std::size_t NodeState::buffered_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : pending_) n += v.size();
    return n;
}

std::vector<BlockId> NodeState::past_cone(const std::vector<BlockId>& roots) const {
    std::vector<BlockId> order;
    std::unordered_set<BlockId, BlockIdHash> seen;
    std::vector<BlockId> stack(roots.rbegin(), roots.rend());
    while (!stack.empty()) {
        BlockId id = stack.back();
        stack.pop_back();
        if (seen.count(id)) continue;
        auto it = known_.find(id);
        if (it == known_.end()) continue;
        seen.insert(id);
        order.push_back(id);
        const auto& parents = it->second.parents;
        for (auto p = parents.rbegin(); p != parents.rend(); ++p) stack.push_back(*p);
    }
    return order;
}

std::vector<BlockId> NodeState::confirm(const Block& milestone) {
    std::vector<BlockId> newly;
    for (const auto& id : past_cone(milestone.parents)) {
        if (confirmed_.insert(id).second) newly.push_back(id);
    }
    return newly;
}

std::set<BlockId> NodeState::recompute_tips() const {
    std::set<BlockId> tips;
    for (const auto& [id, _] : known_) tips.insert(id);
    for (const auto& [_, b] : known_) {
        for (const auto& p : b.parents) tips.erase(p);
    }
    return tips;
}

std::vector<IntegrityViolation> NodeState::verify_integrity() const {
    return verify_block_set(blocks_in_attach_order());
}

std::vector<Block> NodeState::blocks_in_attach_order() const {
    std::vector<Block> out;
    out.reserve(attach_order_.size());
    for (const auto& id : attach_order_) out.push_back(known_.at(id));
    return out;
}

std::vector<IntegrityViolation> verify_block_set(const std::vector<Block>& blocks) {
    std::vector<IntegrityViolation> violations;
    std::unordered_set<BlockId, BlockIdHash> ids;
    for (const auto& b : blocks) ids.insert(b.id);
    for (const auto& b : blocks) {
        BlockId actual = compute_block_id(b);
        if (!(actual == b.id)) {
            violations.push_back({IntegrityViolation::Kind::id_mismatch, b.id,
                                  "stored id does not re-derive from content"});
        }
        for (const auto& p : b.parents) {
            if (!ids.count(p)) {
                violations.push_back({IntegrityViolation::Kind::dangling_parent, b.id,
                                      "missing parent " + p.hex()});
            }
        }
    }
    return violations;
}

Block make_block(const NodeState& issuer_view, std::vector<BlockId> parents,
                 std::vector<std::uint8_t> payload, NodeId issuer, double now_s) {
    if (payload.size() > kMaxPayloadBytes) {
        throw PayloadTooLarge("payload of " + std::to_string(payload.size()) +
                              " bytes exceeds " + std::to_string(kMaxPayloadBytes));
    }
    if (parents.empty() || parents.size() > kMaxParents) {
        throw DagError("block must reference 1.." + std::to_string(kMaxParents) +
                       " parents, got " + std::to_string(parents.size()));
    }
    for (const auto& p : parents) {
        if (!issuer_view.knows(p)) throw UnknownParent("unknown parent " + p.hex());
    }
    Block b;
    b.parents = std::move(parents);
    b.payload = std::move(payload);
    b.issuer = std::move(issuer);
    b.issued_at_us = sim::to_micros(now_s);
    b.id = compute_block_id(b);
    return b;
}

std::vector<BlockId> select_tips(const NodeState& state, std::size_t k, Rng& rng) {
    const auto& tip_set = state.tips();
    if (tip_set.empty()) throw EmptyLedger("no tips: ledger has no genesis");
    std::vector<BlockId> tips(tip_set.begin(), tip_set.end());
    if (k >= tips.size()) return tips;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(tips.size() - i));
        std::swap(tips[i], tips[j]);
    }
    tips.resize(k);
    return tips;
}

LedgerFabric::LedgerFabric(sim::SimClock& clock, std::size_t n_nodes,
                           std::vector<std::vector<double>> latency_s)
    : clock_(clock), latency_(std::move(latency_s)), genesis_(genesis_block()) {
    if (n_nodes == 0) throw DagError("fabric needs at least one node");
    if (latency_.size() != n_nodes) throw DagError("latency matrix size mismatch");
    for (const auto& row : latency_) {
        if (row.size() != n_nodes) throw DagError("latency matrix size mismatch");
        for (double v : row) {
            if (v < 0.0) throw DagError("negative gossip latency");
        }
    }
    nodes_.reserve(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) {
        nodes_.emplace_back("node" + std::to_string(i));
        nodes_.back().attach(genesis_);
    }
}

const Block& LedgerFabric::submit(std::size_t origin, std::vector<BlockId> parents,
                                  std::vector<std::uint8_t> payload, NodeId issuer) {
    NodeState& n = nodes_.at(origin);
    Block b = make_block(n, std::move(parents), std::move(payload), std::move(issuer),
                         clock_.now());
    std::vector<Block> attached;
    n.attach(b, &attached);
    for (const auto& a : attached) after_attach(origin, a);
    return n.block(b.id);
}

void LedgerFabric::deliver(std::size_t to, Block b) {
    std::vector<Block> attached;
    nodes_.at(to).attach(b, &attached);
    for (const auto& a : attached) after_attach(to, a);
}

void LedgerFabric::after_attach(std::size_t at, const Block& b) {
    if (on_attach_) on_attach_(at, b);
    if (auto idx = parse_milestone_index(b.payload)) {
        auto newly = nodes_.at(at).confirm(b);
        if (on_confirm_) {
            for (const auto& id : newly) on_confirm_(at, *idx, id, clock_.now());
        }
    }
    for (std::size_t j = 0; j < nodes_.size(); ++j) {
        if (j == at) continue;
        Block copy = b;
        clock_.schedule_in(latency_[at][j],
                           [this, j, copy = std::move(copy)]() { deliver(j, copy); });
    }
}

Milestone LedgerFabric::issue_milestone(std::size_t origin, std::uint64_t index,
                                        NodeId issuer) {
    NodeState& n = nodes_.at(origin);
    while (n.tips().size() > kMaxParents) {
        std::vector<BlockId> batch;
        for (const auto& t : n.tips()) {
            batch.push_back(t);
            if (batch.size() == kMaxParents) break;
        }
        submit(origin, std::move(batch), checkpoint_payload(), issuer);
    }
    std::vector<BlockId> parents(n.tips().begin(), n.tips().end());

    // Compute the newly confirmed set before attaching; after_attach will
    // apply the same confirmation when the milestone block lands.
    std::vector<BlockId> newly;
    for (const auto& id : n.past_cone(parents)) {
        if (!n.is_confirmed(id)) newly.push_back(id);
    }
    const Block& ms = submit(origin, parents, milestone_payload(index), issuer);
    return Milestone{ms, index, std::move(newly)};
}

bool LedgerFabric::converged() const {
    if (nodes_.empty()) return true;
    std::set<BlockId> reference(nodes_[0].attach_order().begin(),
                                nodes_[0].attach_order().end());
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
        std::set<BlockId> other(nodes_[i].attach_order().begin(),
                                nodes_[i].attach_order().end());
        if (other != reference) return false;
    }
    return true;
}

Milestone MilestoneSchedule::issue(LedgerFabric& fabric, std::size_t origin,
                                   NodeId issuer, double now) {
    if (!can_issue(now)) {
        throw TooEarly("milestone interval not elapsed: now=" + std::to_string(now) +
                       " last=" + std::to_string(last_issue_));
    }
    Milestone m = fabric.issue_milestone(origin, next_index_, std::move(issuer));
    has_last_ = true;
    last_issue_ = now;
    ++next_index_;
    return m;
}

std::string write_snapshot(const std::vector<Block>& blocks) {
    std::string out;
    for (const auto& b : blocks) {
        out += b.id.hex();
        out += ' ';
        out += to_hex(std::span<const std::uint8_t>(
            reinterpret_cast<const std::uint8_t*>(b.issuer.data()), b.issuer.size()));
        out += ' ';
        out += std::to_string(b.issued_at_us);
        out += ' ';
        if (b.parents.empty()) {
            out += '-';
        } else {
            for (std::size_t i = 0; i < b.parents.size(); ++i) {
                if (i) out += ',';
                out += b.parents[i].hex();
            }
        }
        out += ' ';
        if (b.payload.empty()) {
            out += '-';
        } else {
            out += to_hex(b.payload);
        }
        out += '\n';
    }
    return out;
}

std::vector<Block> parse_snapshot(const std::string& text) {
    std::vector<Block> blocks;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id_hex, issuer_hex, ts, parents_field, payload_field;
        if (!(ls >> id_hex >> issuer_hex >> ts >> parents_field >> payload_field)) {
            throw DagError("malformed snapshot line " + std::to_string(line_no));
        }
        Block b;
        b.id = BlockId{digest_from_hex(id_hex)};
        auto issuer_bytes = from_hex(issuer_hex);
        b.issuer.assign(issuer_bytes.begin(), issuer_bytes.end());
        b.issued_at_us = std::stoll(ts);
        if (parents_field != "-") {
            std::size_t pos = 0;
            while (pos < parents_field.size()) {
                std::size_t comma = parents_field.find(',', pos);
                if (comma == std::string::npos) comma = parents_field.size();
                b.parents.push_back(
                    BlockId{digest_from_hex(parents_field.substr(pos, comma - pos))});
                pos = comma + 1;
            }
        }
        if (payload_field != "-") b.payload = from_hex(payload_field);
        blocks.push_back(std::move(b));
    }
    return blocks;
}

} // namespace tanglefl::dag
