#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>

#include "iotsec/bytes.hpp"

namespace iotsec {

/// Streaming SHA-256. Copying an instance snapshots the running state,
/// which the handshake transcript relies on.
class Sha256 {
public:
    static constexpr std::size_t kDigestSize = 32;
    static constexpr std::size_t kBlockSize = 64;

    Sha256() { reset(); }

    void reset() {
        state_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
                  0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
        total_ = 0;
        buffered_ = 0;
    }

    void update(std::span<const std::uint8_t> data) {
        total_ += data.size();
        std::size_t off = 0;
        if (buffered_ > 0) {
            std::size_t take = std::min(kBlockSize - buffered_, data.size());
            std::memcpy(buf_.data() + buffered_, data.data(), take);
            buffered_ += take;
            off += take;
            if (buffered_ == kBlockSize) {
                compress(buf_.data());
                buffered_ = 0;
            }
        }
        while (off + kBlockSize <= data.size()) {
            compress(data.data() + off);
            off += kBlockSize;
        }
        if (off < data.size()) {
            std::memcpy(buf_.data(), data.data() + off, data.size() - off);
            buffered_ = data.size() - off;
        }
    }

    void update(std::string_view s) {
        update(std::span<const std::uint8_t>(
            reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    }

    std::array<std::uint8_t, kDigestSize> digest() const {
        Sha256 copy = *this;
        return copy.finalize();
    }

    std::array<std::uint8_t, kDigestSize> finalize() {
        std::uint64_t bit_len = total_ * 8;
        std::uint8_t pad = 0x80;
        update(std::span<const std::uint8_t>(&pad, 1));
        static constexpr std::uint8_t zeros[kBlockSize] = {};
        std::size_t rem = (buffered_ + 8 <= kBlockSize) ? kBlockSize - 8 - buffered_
                                                        : 2 * kBlockSize - 8 - buffered_;
        update(std::span<const std::uint8_t>(zeros, rem));
        std::uint8_t len_be[8];
        for (int i = 0; i < 8; ++i)
            len_be[i] = static_cast<std::uint8_t>(bit_len >> (56 - 8 * i));
        update(std::span<const std::uint8_t>(len_be, 8));

        std::array<std::uint8_t, kDigestSize> out{};
        for (int i = 0; i < 8; ++i) {
            out[4 * i] = static_cast<std::uint8_t>(state_[i] >> 24);
            out[4 * i + 1] = static_cast<std::uint8_t>(state_[i] >> 16);
            out[4 * i + 2] = static_cast<std::uint8_t>(state_[i] >> 8);
            out[4 * i + 3] = static_cast<std::uint8_t>(state_[i]);
        }
        return out;
    }

private:
    static std::uint32_t rotr(std::uint32_t x, int n) {
        return (x >> n) | (x << (32 - n));
    }

    void compress(const std::uint8_t* block) {
        static constexpr std::uint32_t k[64] = {
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
            0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
            0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
            0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
            0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
            0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
            0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
            0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
            0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
            0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
            0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(block[4 * i]) << 24) | (std::uint32_t(block[4 * i + 1]) << 16) |
                   (std::uint32_t(block[4 * i + 2]) << 8) | block[4 * i + 3];
        for (int i = 16; i < 64; ++i) {
            std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }

        std::uint32_t a = state_[0], b = state_[1], c = state_[2], d = state_[3];
        std::uint32_t e = state_[4], f = state_[5], g = state_[6], h = state_[7];
        for (int i = 0; i < 64; ++i) {
            std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            std::uint32_t ch = (e & f) ^ (~e & g);
            std::uint32_t t1 = h + s1 + ch + k[i] + w[i];
            std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            std::uint32_t t2 = s0 + maj;
            h = g; g = f; f = e; e = d + t1;
            d = c; c = b; b = a; a = t1 + t2;
        }
        state_[0] += a; state_[1] += b; state_[2] += c; state_[3] += d;
        state_[4] += e; state_[5] += f; state_[6] += g; state_[7] += h;
    }

    std::array<std::uint32_t, 8> state_{};
    std::array<std::uint8_t, kBlockSize> buf_{};
    std::uint64_t total_ = 0;
    std::size_t buffered_ = 0;
};

inline std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data) {
    Sha256 h;
    h.update(data);
    return h.finalize();
}

inline std::array<std::uint8_t, 32> sha256(std::string_view s) {
    Sha256 h;
    h.update(s);
    return h.finalize();
}

/// HMAC-SHA-256 (RFC 2104). The module-wide keyed hash: handshake
/// cookies, Finished MACs, and tunnel frame tags all go through here.
inline std::array<std::uint8_t, 32> hmac_sha256(std::span<const std::uint8_t> key,
                                                std::span<const std::uint8_t> msg) {
    std::array<std::uint8_t, Sha256::kBlockSize> k{};
    if (key.size() > Sha256::kBlockSize) {
        auto kh = sha256(key);
        std::memcpy(k.data(), kh.data(), kh.size());
    } else {
        std::memcpy(k.data(), key.data(), key.size());
    }
    std::array<std::uint8_t, Sha256::kBlockSize> ipad{}, opad{};
    for (std::size_t i = 0; i < Sha256::kBlockSize; ++i) {
        ipad[i] = k[i] ^ 0x36;
        opad[i] = k[i] ^ 0x5c;
    }
    Sha256 inner;
    inner.update(ipad);
    inner.update(msg);
    auto inner_digest = inner.finalize();
    Sha256 outer;
    outer.update(opad);
    outer.update(inner_digest);
    return outer.finalize();
}

}  // namespace iotsec
