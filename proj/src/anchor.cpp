#include "tanglefl/anchor.hpp"

#include <algorithm>

namespace tanglefl::dapp {

std::string_view to_string(AnchorKind k) {
    switch (k) {
        case AnchorKind::device_update: return "DeviceUpdate";
        case AnchorKind::global_model: return "GlobalModel";
        case AnchorKind::reputation_digest: return "ReputationDigest";
    }
    return "DeviceUpdate";
}

AnchorKind anchor_kind_from_string(std::string_view s) {
    if (s == "DeviceUpdate") return AnchorKind::device_update;
    if (s == "GlobalModel") return AnchorKind::global_model;
    if (s == "ReputationDigest") return AnchorKind::reputation_digest;
    throw MalformedAnchor("unknown anchor kind: " + std::string(s));
}

namespace {

bool valid_key(std::string_view key) {
    if (key.empty()) return false;
    for (char c : key) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '.' || c == '-';
        if (!ok) return false;
    }
    return true;
}

void require_value(std::string_view key, std::string_view value) {
    if (value.find('\n') != std::string_view::npos) {
        throw MalformedAnchor("value for key '" + std::string(key) + "' contains newline");
    }
}

} // namespace

std::vector<std::uint8_t> encode_anchor_record(const AnchorRecord& rec) {
    std::map<std::string, std::string> fields;
    fields["kind"] = std::string(to_string(rec.kind));
    fields["round"] = std::to_string(rec.round);
    fields["hash"] = rec.content_hash.hex();
    if (rec.kind == AnchorKind::device_update) {
        if (rec.device_id.empty()) throw MalformedAnchor("DeviceUpdate needs device_id");
        fields["device"] = rec.device_id;
    }
    if (rec.kind == AnchorKind::global_model) {
        if (rec.contributing.empty()) {
            throw MalformedAnchor("GlobalModel must list contributing updates");
        }
        std::string joined;
        for (std::size_t i = 0; i < rec.contributing.size(); ++i) {
            if (i) joined += ',';
            joined += rec.contributing[i].hex();
        }
        fields["contrib"] = std::move(joined);
    }
    for (const auto& [k, v] : rec.meta) {
        if (!valid_key(k)) throw MalformedAnchor("bad meta key: " + k);
        fields["meta." + k] = v;
    }
    std::string out;
    for (const auto& [k, v] : fields) {
        require_value(k, v);
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return std::vector<std::uint8_t>(out.begin(), out.end());
}

AnchorRecord decode_anchor_record(const std::vector<std::uint8_t>& payload) {
    AnchorRecord rec;
    bool saw_kind = false, saw_round = false, saw_hash = false;
    std::string text(payload.begin(), payload.end());
    if (text.empty() || text.back() != '\n') {
        throw MalformedAnchor("anchor payload must be newline terminated");
    }
    std::size_t pos = 0;
    std::string prev_key;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw MalformedAnchor("anchor line missing '='");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (!valid_key(key)) throw MalformedAnchor("bad anchor key: " + key);
        if (key <= prev_key) throw MalformedAnchor("anchor keys not strictly sorted");
        prev_key = key;

        if (key == "kind") {
            rec.kind = anchor_kind_from_string(value);
            saw_kind = true;
        } else if (key == "round") {
            rec.round = std::stoull(value);
            saw_round = true;
        } else if (key == "hash") {
            rec.content_hash = store::ContentId{digest_from_hex(value)};
            saw_hash = true;
        } else if (key == "device") {
            rec.device_id = value;
        } else if (key == "contrib") {
            std::size_t p = 0;
            while (p < value.size()) {
                std::size_t comma = value.find(',', p);
                if (comma == std::string::npos) comma = value.size();
                rec.contributing.push_back(
                    dag::BlockId{digest_from_hex(value.substr(p, comma - p))});
                p = comma + 1;
            }
        } else if (key.rfind("meta.", 0) == 0) {
            rec.meta[key.substr(5)] = value;
        } else {
            throw MalformedAnchor("unknown anchor key: " + key);
        }
    }
    if (!saw_kind || !saw_round || !saw_hash) {
        throw MalformedAnchor("anchor record missing required fields");
    }
    if (rec.kind == AnchorKind::device_update && rec.device_id.empty()) {
        throw MalformedAnchor("DeviceUpdate needs device_id");
    }
    if (rec.kind == AnchorKind::global_model && rec.contributing.empty()) {
        throw MalformedAnchor("GlobalModel must list contributing updates");
    }
    return rec;
}

bool is_anchor_payload(const std::vector<std::uint8_t>& payload) {
    try {
        decode_anchor_record(payload);
        return true;
    } catch (const AnchorError&) {
        return false;
    }
}

void pad_to_size(AnchorRecord& rec, std::size_t target_bytes) {
    rec.meta.erase("pad");
    const std::size_t base = encode_anchor_record(rec).size();
    const std::size_t overhead = std::string("meta.pad=\n").size();
    if (base + overhead >= target_bytes) return;
    rec.meta["pad"] = std::string(target_bytes - base - overhead, 'x');
}

void DeviceRegistry::enroll(const std::string& device_id, std::string_view credential) {
    entries_[device_id] = Entry{blake2b_256(credential), true};
}

void DeviceRegistry::revoke(const std::string& device_id) {
    auto it = entries_.find(device_id);
    if (it != entries_.end()) it->second.enrolled = false;
}

bool DeviceRegistry::is_enrolled(const std::string& device_id) const {
    auto it = entries_.find(device_id);
    return it != entries_.end() && it->second.enrolled;
}

bool DeviceRegistry::authenticate(const std::string& device_id,
                                  std::string_view credential) const {
    auto it = entries_.find(device_id);
    if (it == entries_.end() || !it->second.enrolled) return false;
    return blake2b_256(credential) == it->second.credential_digest;
}

} // namespace tanglefl::dapp
