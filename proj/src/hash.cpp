#include "tanglefl/hash.hpp"

#include <sodium/crypto_generichash_blake2b.h>

#include <cstring>
#include <stdexcept>

namespace tanglefl {

static_assert(sizeof(crypto_generichash_blake2b_state) <= 384,
              "hasher state storage too small");

Digest256 blake2b_256(std::span<const std::uint8_t> data) {
    Digest256 out{};
    crypto_generichash_blake2b(out.data(), out.size(), data.data(), data.size(),
                               nullptr, 0);
    return out;
}

Digest256 blake2b_256(std::string_view data) {
    return blake2b_256(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

Blake2bHasher::Blake2bHasher() {
    auto* st = reinterpret_cast<crypto_generichash_blake2b_state*>(state_storage_.data());
    crypto_generichash_blake2b_init(st, nullptr, 0, 32);
}

void Blake2bHasher::update(std::span<const std::uint8_t> data) {
    auto* st = reinterpret_cast<crypto_generichash_blake2b_state*>(state_storage_.data());
    crypto_generichash_blake2b_update(st, data.data(), data.size());
}

void Blake2bHasher::update(std::string_view data) {
    update(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

void Blake2bHasher::update_u32le(std::uint32_t v) {
    std::uint8_t buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    update(std::span<const std::uint8_t>(buf, 4));
}

void Blake2bHasher::update_i64le(std::int64_t v) {
    auto u = static_cast<std::uint64_t>(v);
    std::uint8_t buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<std::uint8_t>(u >> (8 * i));
    update(std::span<const std::uint8_t>(buf, 8));
}

Digest256 Blake2bHasher::finish() {
    if (finished_) throw std::logic_error("Blake2bHasher::finish called twice");
    finished_ = true;
    auto* st = reinterpret_cast<crypto_generichash_blake2b_state*>(state_storage_.data());
    Digest256 out{};
    crypto_generichash_blake2b_final(st, out.data(), out.size());
    return out;
}

static constexpr char kHexDigits[] = "0123456789abcdef";

std::string to_hex(std::span<const std::uint8_t> bytes) {
    std::string s;
    s.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        s.push_back(kHexDigits[b >> 4]);
        s.push_back(kHexDigits[b & 0x0f]);
    }
    return s;
}

std::string to_hex(const Digest256& d) {
    return to_hex(std::span<const std::uint8_t>(d.data(), d.size()));
}

static int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw std::invalid_argument("hex string has odd length");
    std::vector<std::uint8_t> out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        int hi = hex_nibble(hex[2 * i]);
        int lo = hex_nibble(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) throw std::invalid_argument("invalid hex digit");
        out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
    }
    return out;
}

Digest256 digest_from_hex(std::string_view hex) {
    if (hex.size() != 64) throw std::invalid_argument("digest hex must be 64 chars");
    auto bytes = from_hex(hex);
    Digest256 d{};
    std::memcpy(d.data(), bytes.data(), 32);
    return d;
}

} // namespace tanglefl
