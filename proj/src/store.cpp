#include "tanglefl/store.hpp"

#include <filesystem>
#include <fstream>

namespace tanglefl::store {

namespace fs = std::filesystem;

ContentId content_id_of(const std::vector<std::uint8_t>& blob) {
    return ContentId{blake2b_256(std::span<const std::uint8_t>(blob.data(), blob.size()))};
}

BlobStore::BlobStore(std::string root_dir) : root_(std::move(root_dir)) {
    fs::create_directories(root_);
    for (const auto& entry : fs::directory_iterator(root_)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        if (name.size() != 64) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        blobs_[ContentId{digest_from_hex(name)}] = std::move(bytes);
    }
}

ContentId BlobStore::put(const std::vector<std::uint8_t>& blob) {
    if (blob.empty()) throw EmptyBlob("cannot store an empty blob");
    ContentId id = content_id_of(blob);
    auto [it, inserted] = blobs_.try_emplace(id, blob);
    if (inserted && !root_.empty()) {
        fs::path p = fs::path(root_) / id.hex();
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size()));
        if (!out) throw StoreError("failed to persist blob " + id.hex());
    }
    return id;
}

std::vector<std::uint8_t> BlobStore::get(const ContentId& id) const {
    auto it = blobs_.find(id);
    if (it == blobs_.end()) throw NotFound("no blob for " + id.hex());
    if (!verify(id, it->second)) {
        throw IntegrityFailure("stored bytes no longer hash to " + id.hex());
    }
    return it->second;
}

bool BlobStore::verify(const ContentId& id, const std::vector<std::uint8_t>& blob) {
    return content_id_of(blob) == id;
}

void BlobStore::tamper(const ContentId& id, std::size_t byte_index) {
    auto it = blobs_.find(id);
    if (it == blobs_.end()) throw NotFound("no blob for " + id.hex());
    it->second.at(byte_index) ^= 0x01;
}

} // namespace tanglefl::store
