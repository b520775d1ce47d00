#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <utility>
#include <stdexcept>
#include <string>
#include <string_view>

#include "iotsec/bytes.hpp"

namespace iotsec {

/// Unsigned big integer with inline storage.
///
/// Capacity is 22 64-bit limbs (1408 bits), which supports moduli up to
/// 576 bits together with the double-width intermediates Barrett
/// reduction needs. Exceeding the capacity throws std::overflow_error.
/// Values are plain copyable data; nothing here is constant-time.
class BigUint {
public:
    static constexpr std::size_t kMaxLimbs = 22;

    BigUint() = default;

    BigUint(std::uint64_t v) {  // NOLINT: implicit by design
        if (v != 0) {
            limb_[0] = v;
            size_ = 1;
        }
    }

    static BigUint from_hex(std::string_view s) {
        if (s.empty()) throw std::invalid_argument("BigUint::from_hex: empty");
        BigUint r;
        for (char c : s) {
            int nib = hex_nibble(c);
            if (nib < 0) throw std::invalid_argument("BigUint::from_hex: bad digit");
            r = r.shifted_left_bits(4);
            r.limb_[0] |= static_cast<std::uint64_t>(nib);
            if (r.size_ == 0 && nib != 0) r.size_ = 1;
        }
        r.normalize();
        return r;
    }

    static BigUint from_bytes_be(std::span<const std::uint8_t> bytes) {
        BigUint r;
        for (std::uint8_t b : bytes) {
            r = r.shifted_left_bits(8);
            r.limb_[0] |= b;
            if (r.size_ == 0 && b != 0) r.size_ = 1;
        }
        r.normalize();
        return r;
    }

    /// Big-endian encoding left-padded to `width` bytes.
    Bytes to_bytes_be(std::size_t width) const {
        if (byte_length() > width)
            throw std::overflow_error("BigUint::to_bytes_be: value wider than field");
        Bytes out(width, 0);
        for (std::size_t i = 0; i < width; ++i) {
            std::size_t bit = 8 * i;
            std::size_t limb = bit / 64;
            if (limb < size_)
                out[width - 1 - i] = static_cast<std::uint8_t>(limb_[limb] >> (bit % 64));
        }
        return out;
    }

    std::string to_hex() const {
        if (is_zero()) return "0";
        static const char* digits = "0123456789abcdef";
        std::string s;
        bool leading = true;
        for (std::size_t i = size_; i-- > 0;) {
            for (int shift = 60; shift >= 0; shift -= 4) {
                int nib = static_cast<int>((limb_[i] >> shift) & 0xf);
                if (leading && nib == 0) continue;
                leading = false;
                s.push_back(digits[nib]);
            }
        }
        return s;
    }

    bool is_zero() const { return size_ == 0; }
    bool is_one() const { return size_ == 1 && limb_[0] == 1; }

    std::size_t bit_length() const {
        if (size_ == 0) return 0;
        std::uint64_t top = limb_[size_ - 1];
        std::size_t bits = (size_ - 1) * 64;
        while (top) {
            ++bits;
            top >>= 1;
        }
        return bits;
    }

    std::size_t byte_length() const { return (bit_length() + 7) / 8; }

    bool bit(std::size_t i) const {
        std::size_t limb = i / 64;
        if (limb >= size_) return false;
        return (limb_[limb] >> (i % 64)) & 1;
    }

    std::uint64_t low_u64() const { return size_ ? limb_[0] : 0; }

    friend bool operator==(const BigUint& a, const BigUint& b) {
        if (a.size_ != b.size_) return false;
        for (std::size_t i = 0; i < a.size_; ++i)
            if (a.limb_[i] != b.limb_[i]) return false;
        return true;
    }

    friend std::strong_ordering operator<=>(const BigUint& a, const BigUint& b) {
        if (a.size_ != b.size_) return a.size_ <=> b.size_;
        for (std::size_t i = a.size_; i-- > 0;) {
            if (a.limb_[i] != b.limb_[i]) return a.limb_[i] <=> b.limb_[i];
        }
        return std::strong_ordering::equal;
    }

    friend BigUint operator+(const BigUint& a, const BigUint& b) {
        BigUint r;
        std::size_t n = a.size_ > b.size_ ? a.size_ : b.size_;
        unsigned __int128 carry = 0;
        for (std::size_t i = 0; i < n; ++i) {
            unsigned __int128 sum = carry;
            if (i < a.size_) sum += a.limb_[i];
            if (i < b.size_) sum += b.limb_[i];
            r.limb_[i] = static_cast<std::uint64_t>(sum);
            carry = sum >> 64;
        }
        if (carry) {
            if (n >= kMaxLimbs) throw std::overflow_error("BigUint: capacity exceeded");
            r.limb_[n++] = static_cast<std::uint64_t>(carry);
        }
        r.size_ = static_cast<std::uint32_t>(n);
        r.normalize();
        return r;
    }

    /// Requires a >= b.
    friend BigUint operator-(const BigUint& a, const BigUint& b) {
        if (a < b) throw std::underflow_error("BigUint: negative difference");
        BigUint r;
        std::uint64_t borrow = 0;
        for (std::size_t i = 0; i < a.size_; ++i) {
            std::uint64_t bv = i < b.size_ ? b.limb_[i] : 0;
            std::uint64_t av = a.limb_[i];
            std::uint64_t d = av - bv;
            std::uint64_t borrow2 = av < bv;
            std::uint64_t d2 = d - borrow;
            borrow2 |= d < borrow;
            r.limb_[i] = d2;
            borrow = borrow2;
        }
        r.size_ = a.size_;
        r.normalize();
        return r;
    }

    friend BigUint operator*(const BigUint& a, const BigUint& b) {
        BigUint r;
        if (a.size_ == 0 || b.size_ == 0) return r;
        std::size_t n = a.size_ + b.size_;
        if (n > kMaxLimbs) throw std::overflow_error("BigUint: capacity exceeded");
        std::array<std::uint64_t, kMaxLimbs> acc{};
        for (std::size_t i = 0; i < a.size_; ++i) {
            unsigned __int128 carry = 0;
            std::uint64_t av = a.limb_[i];
            for (std::size_t j = 0; j < b.size_; ++j) {
                unsigned __int128 cur = static_cast<unsigned __int128>(av) * b.limb_[j] +
                                        acc[i + j] + carry;
                acc[i + j] = static_cast<std::uint64_t>(cur);
                carry = cur >> 64;
            }
            std::size_t k = i + b.size_;
            while (carry) {
                unsigned __int128 cur = carry + acc[k];
                acc[k] = static_cast<std::uint64_t>(cur);
                carry = cur >> 64;
                ++k;
            }
        }
        r.limb_ = acc;
        r.size_ = static_cast<std::uint32_t>(n);
        r.normalize();
        return r;
    }

    /// Knuth division over base-2^32 digits; returns {quotient, remainder}.
    static std::pair<BigUint, BigUint> divrem(const BigUint& a, const BigUint& b) {
        if (b.is_zero()) throw std::domain_error("BigUint: division by zero");
        if (a < b) return {BigUint{}, a};

        constexpr std::size_t kMaxDigits = kMaxLimbs * 2;
        std::array<std::uint32_t, kMaxDigits + 1> u{};
        std::array<std::uint32_t, kMaxDigits> v{};
        std::size_t un = a.to_digits(u);
        std::size_t vn = b.to_digits(v);

        if (vn == 1) {
            std::uint64_t d = v[0];
            std::uint64_t rem = 0;
            std::array<std::uint32_t, kMaxDigits> q{};
            for (std::size_t i = un; i-- > 0;) {
                std::uint64_t cur = (rem << 32) | u[i];
                q[i] = static_cast<std::uint32_t>(cur / d);
                rem = cur % d;
            }
            return {from_digits(q.data(), un), BigUint(rem)};
        }

        // Normalize so the top divisor digit has its high bit set.
        int shift = 0;
        while (((v[vn - 1] << shift) & 0x80000000u) == 0) ++shift;
        if (shift) {
            for (std::size_t i = vn; i-- > 1;)
                v[i] = (v[i] << shift) | (v[i - 1] >> (32 - shift));
            v[0] <<= shift;
            u[un] = u[un - 1] >> (32 - shift);
            for (std::size_t i = un; i-- > 1;)
                u[i] = (u[i] << shift) | (u[i - 1] >> (32 - shift));
            u[0] <<= shift;
        } else {
            u[un] = 0;
        }

        std::array<std::uint32_t, kMaxDigits> q{};
        for (std::size_t j = un - vn + 1; j-- > 0;) {
            std::uint64_t top = (static_cast<std::uint64_t>(u[j + vn]) << 32) | u[j + vn - 1];
            std::uint64_t qhat = top / v[vn - 1];
            std::uint64_t rhat = top % v[vn - 1];
            while (qhat > 0xffffffffull ||
                   qhat * v[vn - 2] > ((rhat << 32) | u[j + vn - 2])) {
                --qhat;
                rhat += v[vn - 1];
                if (rhat > 0xffffffffull) break;
            }
            // Multiply-subtract qhat*v from u[j..j+vn].
            std::int64_t borrow = 0;
            std::uint64_t carry = 0;
            for (std::size_t i = 0; i < vn; ++i) {
                std::uint64_t prod = qhat * v[i] + carry;
                carry = prod >> 32;
                std::int64_t diff = static_cast<std::int64_t>(u[i + j]) -
                                    static_cast<std::int64_t>(prod & 0xffffffffull) + borrow;
                u[i + j] = static_cast<std::uint32_t>(diff);
                borrow = diff >> 32;
            }
            std::int64_t diff = static_cast<std::int64_t>(u[j + vn]) -
                                static_cast<std::int64_t>(carry) + borrow;
            u[j + vn] = static_cast<std::uint32_t>(diff);

            if (diff < 0) {
                // qhat was one too large; add the divisor back.
                --qhat;
                std::uint64_t c = 0;
                for (std::size_t i = 0; i < vn; ++i) {
                    std::uint64_t sum = static_cast<std::uint64_t>(u[i + j]) + v[i] + c;
                    u[i + j] = static_cast<std::uint32_t>(sum);
                    c = sum >> 32;
                }
                u[j + vn] += static_cast<std::uint32_t>(c);
            }
            q[j] = static_cast<std::uint32_t>(qhat);
        }

        if (shift) {
            for (std::size_t i = 0; i + 1 < vn; ++i)
                u[i] = (u[i] >> shift) | (u[i + 1] << (32 - shift));
            u[vn - 1] >>= shift;
        }
        return {from_digits(q.data(), un - vn + 1), from_digits(u.data(), vn)};
    }

    friend BigUint operator%(const BigUint& a, const BigUint& m) {
        return divrem(a, m).second;
    }

    friend BigUint operator/(const BigUint& a, const BigUint& b) {
        return divrem(a, b).first;
    }

    /// Shift left by whole limbs (multiply by 2^(64*count)).
    BigUint shifted_left_limbs(std::size_t count) const {
        if (size_ == 0) return {};
        if (size_ + count > kMaxLimbs) throw std::overflow_error("BigUint: capacity exceeded");
        BigUint r;
        for (std::size_t i = size_; i-- > 0;) r.limb_[i + count] = limb_[i];
        r.size_ = static_cast<std::uint32_t>(size_ + count);
        return r;
    }

    /// Shift right by whole limbs.
    BigUint shifted_right_limbs(std::size_t count) const {
        if (count >= size_) return {};
        BigUint r;
        for (std::size_t i = count; i < size_; ++i) r.limb_[i - count] = limb_[i];
        r.size_ = static_cast<std::uint32_t>(size_ - count);
        r.normalize();
        return r;
    }

    /// Keep only the low `count` limbs.
    BigUint low_limbs(std::size_t count) const {
        BigUint r;
        std::size_t n = size_ < count ? size_ : count;
        for (std::size_t i = 0; i < n; ++i) r.limb_[i] = limb_[i];
        r.size_ = static_cast<std::uint32_t>(n);
        r.normalize();
        return r;
    }

    std::size_t limb_count() const { return size_; }

private:
    BigUint shifted_left_bits(unsigned bits) const {
        // Only small shifts (< 64) are used, by the hex/byte readers.
        BigUint r;
        std::uint64_t carry = 0;
        for (std::size_t i = 0; i < size_; ++i) {
            r.limb_[i] = (limb_[i] << bits) | carry;
            carry = bits ? (limb_[i] >> (64 - bits)) : 0;
        }
        std::size_t n = size_;
        if (carry) {
            if (n >= kMaxLimbs) throw std::overflow_error("BigUint: capacity exceeded");
            r.limb_[n++] = carry;
        }
        r.size_ = static_cast<std::uint32_t>(n);
        r.normalize();
        return r;
    }

    void normalize() {
        while (size_ > 0 && limb_[size_ - 1] == 0) --size_;
    }

    template <std::size_t N>
    std::size_t to_digits(std::array<std::uint32_t, N>& out) const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < size_; ++i) {
            out[2 * i] = static_cast<std::uint32_t>(limb_[i]);
            out[2 * i + 1] = static_cast<std::uint32_t>(limb_[i] >> 32);
            n = 2 * i + 2;
        }
        while (n > 0 && out[n - 1] == 0) --n;
        return n;
    }

    static BigUint from_digits(const std::uint32_t* digits, std::size_t n) {
        BigUint r;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t limb = i / 2;
            if (limb >= kMaxLimbs) throw std::overflow_error("BigUint: capacity exceeded");
            if (i % 2 == 0)
                r.limb_[limb] = digits[i];
            else
                r.limb_[limb] |= static_cast<std::uint64_t>(digits[i]) << 32;
            r.size_ = static_cast<std::uint32_t>(limb + 1);
        }
        r.normalize();
        return r;
    }

    std::array<std::uint64_t, kMaxLimbs> limb_{};
    std::uint32_t size_ = 0;
};

/// Modular arithmetic context with a precomputed Barrett constant.
/// Reduction of products is division-free; the one-off setup and the
/// extended-Euclid inverse use plain division.
class ModContext {
public:
    ModContext() = default;

    explicit ModContext(const BigUint& modulus) : m_(modulus) {
        if (m_.is_zero() || m_.is_one())
            throw std::invalid_argument("ModContext: modulus must be > 1");
        k_ = m_.limb_count();
        mu_ = BigUint(1).shifted_left_limbs(2 * k_) / m_;
    }

    const BigUint& modulus() const { return m_; }

    BigUint reduce(const BigUint& x) const {
        if (x < m_) return x;
        if (x.limb_count() > 2 * k_) return x % m_;  // out of Barrett range
        BigUint q1 = x.shifted_right_limbs(k_ - 1);
        BigUint q3 = (q1 * mu_).shifted_right_limbs(k_ + 1);
        BigUint r1 = x.low_limbs(k_ + 1);
        BigUint r2 = (q3 * m_).low_limbs(k_ + 1);
        BigUint r = r1 >= r2
                        ? r1 - r2
                        : r1 + BigUint(1).shifted_left_limbs(k_ + 1) - r2;
        while (r >= m_) r = r - m_;
        return r;
    }

    BigUint add(const BigUint& a, const BigUint& b) const {
        BigUint s = a + b;
        if (s >= m_) s = s - m_;
        return s;
    }

    BigUint sub(const BigUint& a, const BigUint& b) const {
        if (a >= b) return a - b;
        return a + m_ - b;
    }

    BigUint mul(const BigUint& a, const BigUint& b) const { return reduce(a * b); }

    BigUint sqr(const BigUint& a) const { return reduce(a * a); }

    BigUint neg(const BigUint& a) const { return a.is_zero() ? a : m_ - a; }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    /// Throws std::domain_error when gcd(a, m) != 1.
    BigUint inverse(const BigUint& a) const {
        BigUint r0 = m_;
        BigUint r1 = a >= m_ ? a % m_ : a;
        if (r1.is_zero()) throw std::domain_error("ModContext: zero has no inverse");
        // Bezout coefficient of `a`, tracked with an explicit sign.
        BigUint t0_mag = 0, t1_mag = 1;
        bool t0_neg = false, t1_neg = false;
        while (!r1.is_zero()) {
            auto [q, r2] = BigUint::divrem(r0, r1);
            BigUint prod = q * t1_mag;
            BigUint t2_mag;
            bool t2_neg;
            if (t0_neg == t1_neg) {
                if (t0_mag >= prod) {
                    t2_mag = t0_mag - prod;
                    t2_neg = t0_neg;
                } else {
                    t2_mag = prod - t0_mag;
                    t2_neg = !t0_neg;
                }
            } else {
                t2_mag = t0_mag + prod;
                t2_neg = t0_neg;
            }
            r0 = r1;
            r1 = r2;
            t0_mag = t1_mag;
            t0_neg = t1_neg;
            t1_mag = t2_mag;
            t1_neg = t2_neg;
        }
        if (!r0.is_one()) throw std::domain_error("ModContext: value not invertible");
        BigUint t = t0_mag % m_;
        if (t0_neg && !t.is_zero()) t = m_ - t;
        return t;
    }

private:
    BigUint m_;
    BigUint mu_;
    std::size_t k_ = 0;
};

}  // namespace iotsec
