#pragma once

// On-ledger anchor payloads and the permissioned device registry. Anchor
// records are a canonical sorted-key text map so encoding is deterministic
// and byte-exact; sizes are padded into the configured payload bands via
// declared metadata.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tanglefl/dag.hpp"
#include "tanglefl/hash.hpp"
#include "tanglefl/store.hpp"

namespace tanglefl::dapp {

struct AnchorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MalformedAnchor : AnchorError {
    using AnchorError::AnchorError;
};

enum class AnchorKind { device_update, global_model, reputation_digest };

std::string_view to_string(AnchorKind k);
AnchorKind anchor_kind_from_string(std::string_view s);

struct AnchorRecord {
    AnchorKind kind = AnchorKind::device_update;
    std::string device_id; // DeviceUpdate only
    std::uint64_t round = 0;
    store::ContentId content_hash;
    std::vector<dag::BlockId> contributing; // GlobalModel only, >= 1
    std::map<std::string, std::string> meta;
};

// Encoding: one `key=value` line per field, lexicographically sorted keys,
// '\n' terminated. Field keys: contrib, device, hash, kind, round; metadata
// keys carry a `meta.` prefix. Keys are [A-Za-z0-9_.-]; values must not
// contain newlines.
std::vector<std::uint8_t> encode_anchor_record(const AnchorRecord& rec);
AnchorRecord decode_anchor_record(const std::vector<std::uint8_t>& payload);

// True when the payload parses as an anchor record.
bool is_anchor_payload(const std::vector<std::uint8_t>& payload);

// Pads rec.meta["pad"] so the encoding lands exactly on `target_bytes`
// (no-op when the natural encoding is already larger).
void pad_to_size(AnchorRecord& rec, std::size_t target_bytes);

// Per-kind payload size targets, defaulted into the reported bands:
// adapter and aggregator records 2-3 KB, verifier records 1.5-2 KB.
struct PayloadBands {
    std::size_t update_bytes = 2560;
    std::size_t global_bytes = 2816;
    std::size_t reputation_bytes = 1792;

    std::size_t target_for(AnchorKind k) const {
        switch (k) {
            case AnchorKind::device_update: return update_bytes;
            case AnchorKind::global_model: return global_bytes;
            case AnchorKind::reputation_digest: return reputation_bytes;
        }
        return update_bytes;
    }
};

class DeviceRegistry {
public:
    void enroll(const std::string& device_id, std::string_view credential);
    void revoke(const std::string& device_id);
    bool is_enrolled(const std::string& device_id) const;
    bool authenticate(const std::string& device_id, std::string_view credential) const;
    std::size_t size() const { return entries_.size(); }

private:
    struct Entry {
        Digest256 credential_digest{};
        bool enrolled = false;
    };
    std::map<std::string, Entry> entries_;
};

} // namespace tanglefl::dapp
