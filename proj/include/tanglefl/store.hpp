#pragma once

// In-process content-addressed blob store (IPFS stand-in). Model weights
// live here; only their hashes go on the ledger.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tanglefl/hash.hpp"

namespace tanglefl::store {

struct StoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyBlob : StoreError {
    using StoreError::StoreError;
};
struct NotFound : StoreError {
    using StoreError::StoreError;
};
struct IntegrityFailure : StoreError {
    using StoreError::StoreError;
};

struct ContentId {
    Digest256 digest{};

    auto operator<=>(const ContentId&) const = default;
    std::string hex() const { return to_hex(digest); }
};

ContentId content_id_of(const std::vector<std::uint8_t>& blob);

// In-memory map keyed by content hash, with optional directory persistence
// (one file per blob, hex id as filename) for post-mortems.
class BlobStore {
public:
    BlobStore() = default;
    // Enables persistence; creates the directory and loads any blobs in it.
    explicit BlobStore(std::string root_dir);

    ContentId put(const std::vector<std::uint8_t>& blob);

    // Re-hashes before returning; a corrupted entry raises IntegrityFailure.
    std::vector<std::uint8_t> get(const ContentId& id) const;

    bool contains(const ContentId& id) const { return blobs_.count(id) > 0; }
    static bool verify(const ContentId& id, const std::vector<std::uint8_t>& blob);

    std::size_t size() const { return blobs_.size(); }
    const std::string& root() const { return root_; }

    // Test hook: corrupts the stored copy without touching its key.
    void tamper(const ContentId& id, std::size_t byte_index);

private:
    std::string root_;
    std::map<ContentId, std::vector<std::uint8_t>> blobs_;
};

} // namespace tanglefl::store
