#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

#include "iotsec/bigint.hpp"
#include "iotsec/hash.hpp"

namespace iotsec {

/// Deterministic random source: a SHA-256 counter generator.
///
/// The whole artifact (key generation, nonces, the network simulator)
/// draws from instances of this class, so a run is a pure function of
/// its seeds. Not a cryptographic RNG for production use; the point is
/// bit-identical behavior across platforms, which std::mt19937 plus
/// std distributions do not provide.
class DetRng {
public:
    explicit DetRng(std::uint64_t seed) : seed_(seed) {}

    /// Derive an independent child stream (e.g. one per simulated node).
    DetRng fork(std::string_view label) {
        Sha256 h;
        std::uint8_t seed_be[8];
        for (int i = 0; i < 8; ++i) seed_be[i] = static_cast<std::uint8_t>(seed_ >> (56 - 8 * i));
        h.update(std::span<const std::uint8_t>(seed_be, 8));
        h.update(label);
        auto d = h.finalize();
        std::uint64_t child = 0;
        for (int i = 0; i < 8; ++i) child = (child << 8) | d[i];
        return DetRng(child);
    }

    void fill(std::span<std::uint8_t> out) {
        for (auto& b : out) b = next_byte();
    }

    Bytes bytes(std::size_t n) {
        Bytes out(n);
        fill(out);
        return out;
    }

    std::uint8_t next_byte() {
        if (pos_ == 32) refill();
        return block_[pos_++];
    }

    std::uint64_t next_u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | next_byte();
        return v;
    }

    /// Bernoulli draw with probability p.
    bool chance(double p) {
        if (p <= 0.0) return false;
        if (p >= 1.0) return true;
        return next_u64() < static_cast<std::uint64_t>(p * 18446744073709551616.0);
    }

    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) {
        if (bound == 0) throw std::invalid_argument("DetRng::below: zero bound");
        std::uint64_t limit = bound * ((~std::uint64_t{0}) / bound);
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % bound;
    }

    /// Uniform scalar in [1, n-1] by masked rejection sampling.
    BigUint scalar_in_group(const BigUint& n) {
        std::size_t bits = n.bit_length();
        std::size_t nbytes = (bits + 7) / 8;
        unsigned top_mask = bits % 8 ? (1u << (bits % 8)) - 1 : 0xffu;
        Bytes buf(nbytes);
        for (;;) {
            fill(buf);
            buf[0] &= static_cast<std::uint8_t>(top_mask);
            BigUint v = BigUint::from_bytes_be(buf);
            if (!v.is_zero() && v < n) return v;
        }
    }

private:
    void refill() {
        Sha256 h;
        std::uint8_t hdr[16];
        for (int i = 0; i < 8; ++i) hdr[i] = static_cast<std::uint8_t>(seed_ >> (56 - 8 * i));
        for (int i = 0; i < 8; ++i) hdr[8 + i] = static_cast<std::uint8_t>(counter_ >> (56 - 8 * i));
        h.update(std::span<const std::uint8_t>(hdr, 16));
        block_ = h.finalize();
        ++counter_;
        pos_ = 0;
    }

    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    std::array<std::uint8_t, 32> block_{};
    std::size_t pos_ = 32;  // force refill on first use
};

}  // namespace iotsec
