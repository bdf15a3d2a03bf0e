#pragma once

// BLAKE2b-256 digests and hex helpers. One hash function is pinned
// project-wide: block ids, content ids, and anchored table digests all
// use the same 256-bit BLAKE2b so hashes are directly comparable.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tanglefl {

using Digest256 = std::array<std::uint8_t, 32>;

Digest256 blake2b_256(std::span<const std::uint8_t> data);
Digest256 blake2b_256(std::string_view data);

// Incremental variant for canonical encodings built field by field.
class Blake2bHasher {
public:
    Blake2bHasher();
    void update(std::span<const std::uint8_t> data);
    void update(std::string_view data);
    void update_u32le(std::uint32_t v);
    void update_i64le(std::int64_t v);
    Digest256 finish();

private:
    std::array<unsigned char, 384> state_storage_{};
    bool finished_ = false;
};

std::string to_hex(std::span<const std::uint8_t> bytes);
std::string to_hex(const Digest256& d);

// Strict: even length, [0-9a-fA-F] only. Throws std::invalid_argument.
std::vector<std::uint8_t> from_hex(std::string_view hex);
Digest256 digest_from_hex(std::string_view hex);

} // namespace tanglefl
