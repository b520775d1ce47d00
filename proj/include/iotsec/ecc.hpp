#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "iotsec/bigint.hpp"
#include "iotsec/bytes.hpp"
#include "iotsec/hash.hpp"
#include "iotsec/rng.hpp"

namespace iotsec::ecc {

struct InvalidPoint : std::runtime_error {
    explicit InvalidPoint(const std::string& what) : std::runtime_error(what) {}
};

struct MalformedEncoding : std::runtime_error {
    explicit MalformedEncoding(const std::string& what) : std::runtime_error(what) {}
};

struct UnknownLevel : std::runtime_error {
    explicit UnknownLevel(const std::string& what) : std::runtime_error(what) {}
};

/// Point on a short Weierstrass curve, or the distinguished identity.
struct CurvePoint {
    bool is_identity = true;
    BigUint x;
    BigUint y;

    static CurvePoint identity() { return CurvePoint{}; }

    static CurvePoint affine(BigUint px, BigUint py) {
        CurvePoint p;
        p.is_identity = false;
        p.x = std::move(px);
        p.y = std::move(py);
        return p;
    }

    friend bool operator==(const CurvePoint& a, const CurvePoint& b) {
        if (a.is_identity || b.is_identity) return a.is_identity == b.is_identity;
        return a.x == b.x && a.y == b.y;
    }
};

/// Domain parameters for y^2 = x^3 + ax + b over F_p.
///
/// Construction checks non-singularity, that the base point satisfies
/// the curve equation, and that n*g is the identity. Arithmetic here is
/// not constant-time; this library exists for protocol fidelity, not
/// production key material.
class CurveParams {
public:
    CurveParams(std::string name, const BigUint& p, const BigUint& a, const BigUint& b,
                const BigUint& gx, const BigUint& gy, const BigUint& n, std::uint64_t h)
        : name_(std::move(name)),
          p_(p),
          a_(a),
          b_(b),
          n_(n),
          h_(h),
          fp_(p),
          fn_(n),
          g_(CurvePoint::affine(gx, gy)) {
        field_bytes_ = (p_.bit_length() + 7) / 8;
        scalar_bytes_ = (n_.bit_length() + 7) / 8;
        // 4a^3 + 27b^2 != 0 (mod p)
        BigUint disc = fp_.add(fp_.mul(BigUint(4), fp_.mul(a_, fp_.mul(a_, a_))),
                               fp_.mul(BigUint(27), fp_.mul(b_, b_)));
        if (disc.is_zero())
            throw std::invalid_argument("CurveParams: singular curve");
        if (!is_on_curve(g_))
            throw std::invalid_argument("CurveParams: base point not on curve");
        if (!multiply(n_, g_).is_identity)
            throw std::invalid_argument("CurveParams: order does not annihilate base point");
    }

    const std::string& name() const { return name_; }
    const BigUint& p() const { return p_; }
    const BigUint& a() const { return a_; }
    const BigUint& b() const { return b_; }
    const BigUint& n() const { return n_; }
    std::uint64_t h() const { return h_; }
    const CurvePoint& g() const { return g_; }
    const ModContext& fp() const { return fp_; }
    const ModContext& fn() const { return fn_; }
    std::size_t field_bytes() const { return field_bytes_; }
    std::size_t scalar_bytes() const { return scalar_bytes_; }

    bool is_on_curve(const CurvePoint& pt) const {
        if (pt.is_identity) return true;
        if (pt.x >= p_ || pt.y >= p_) return false;
        BigUint lhs = fp_.mul(pt.y, pt.y);
        BigUint rhs = fp_.add(fp_.mul(pt.x, fp_.mul(pt.x, pt.x)),
                              fp_.add(fp_.mul(a_, pt.x), b_));
        return lhs == rhs;
    }

    /// k-fold sum via double-and-add (Jacobian internally, one final
    /// inversion). Callers validate inputs.
    CurvePoint multiply(const BigUint& k, const CurvePoint& pt) const {
        if (k.is_zero() || pt.is_identity) return CurvePoint::identity();
        Jac acc;  // starts at infinity
        for (std::size_t i = k.bit_length(); i-- > 0;) {
            jac_double(acc);
            if (k.bit(i)) jac_add_affine(acc, pt);
        }
        return jac_to_affine(acc);
    }

    /// Affine chord-and-tangent sum. Callers validate inputs.
    CurvePoint add(const CurvePoint& p1, const CurvePoint& p2) const {
        if (p1.is_identity) return p2;
        if (p2.is_identity) return p1;
        BigUint lambda;
        if (p1.x == p2.x) {
            if (fp_.add(p1.y, p2.y).is_zero()) return CurvePoint::identity();
            // Tangent: (3x^2 + a) / 2y
            BigUint num = fp_.add(fp_.mul(BigUint(3), fp_.mul(p1.x, p1.x)), a_);
            lambda = fp_.mul(num, fp_.inverse(fp_.add(p1.y, p1.y)));
        } else {
            lambda = fp_.mul(fp_.sub(p2.y, p1.y), fp_.inverse(fp_.sub(p2.x, p1.x)));
        }
        BigUint x3 = fp_.sub(fp_.sub(fp_.mul(lambda, lambda), p1.x), p2.x);
        BigUint y3 = fp_.sub(fp_.mul(lambda, fp_.sub(p1.x, x3)), p1.y);
        return CurvePoint::affine(x3, y3);
    }

    CurvePoint negate(const CurvePoint& pt) const {
        if (pt.is_identity) return pt;
        return CurvePoint::affine(pt.x, fp_.neg(pt.y));
    }

private:
    struct Jac {
        BigUint X, Y, Z;  // Z = 0 encodes infinity
        bool infinite() const { return Z.is_zero(); }
    };

    void jac_double(Jac& j) const {
        if (j.infinite()) return;
        if (j.Y.is_zero()) {
            j = Jac{};
            return;
        }
        BigUint y2 = fp_.sqr(j.Y);
        BigUint s = fp_.mul(BigUint(4), fp_.mul(j.X, y2));
        BigUint z2 = fp_.sqr(j.Z);
        BigUint m = fp_.add(fp_.mul(BigUint(3), fp_.sqr(j.X)), fp_.mul(a_, fp_.sqr(z2)));
        BigUint x3 = fp_.sub(fp_.sqr(m), fp_.add(s, s));
        BigUint y3 = fp_.sub(fp_.mul(m, fp_.sub(s, x3)), fp_.mul(BigUint(8), fp_.sqr(y2)));
        BigUint z3 = fp_.mul(fp_.add(j.Y, j.Y), j.Z);
        j = Jac{x3, y3, z3};
    }

    void jac_add_affine(Jac& j, const CurvePoint& pt) const {
        if (j.infinite()) {
            j = Jac{pt.x, pt.y, BigUint(1)};
            return;
        }
        BigUint z1z1 = fp_.sqr(j.Z);
        BigUint u2 = fp_.mul(pt.x, z1z1);
        BigUint s2 = fp_.mul(pt.y, fp_.mul(j.Z, z1z1));
        if (u2 == j.X) {
            if (s2 == j.Y) {
                jac_double(j);
            } else {
                j = Jac{};
            }
            return;
        }
        BigUint h = fp_.sub(u2, j.X);
        BigUint hh = fp_.sqr(h);
        BigUint hhh = fp_.mul(h, hh);
        BigUint r = fp_.sub(s2, j.Y);
        BigUint v = fp_.mul(j.X, hh);
        BigUint x3 = fp_.sub(fp_.sub(fp_.sqr(r), hhh), fp_.add(v, v));
        BigUint y3 = fp_.sub(fp_.mul(r, fp_.sub(v, x3)), fp_.mul(j.Y, hhh));
        BigUint z3 = fp_.mul(j.Z, h);
        j = Jac{x3, y3, z3};
    }

    CurvePoint jac_to_affine(const Jac& j) const {
        if (j.infinite()) return CurvePoint::identity();
        BigUint zi = fp_.inverse(j.Z);
        BigUint zi2 = fp_.sqr(zi);
        return CurvePoint::affine(fp_.mul(j.X, zi2), fp_.mul(j.Y, fp_.mul(zi, zi2)));
    }

    std::string name_;
    BigUint p_, a_, b_, n_;
    std::uint64_t h_;
    ModContext fp_, fn_;
    CurvePoint g_;
    std::size_t field_bytes_ = 0;
    std::size_t scalar_bytes_ = 0;
};

struct KeyPair {
    BigUint d;     // private scalar in [1, n-1]
    CurvePoint q;  // public point d*g
};

/// Schnorr-style signature: commitment point plus response scalar.
struct Signature {
    CurvePoint r_point;
    BigUint s;
};

inline bool validate_point(const CurveParams& curve, const CurvePoint& pt) {
    return curve.is_on_curve(pt);
}

inline CurvePoint point_add(const CurveParams& curve, const CurvePoint& p1,
                            const CurvePoint& p2) {
    if (!curve.is_on_curve(p1) || !curve.is_on_curve(p2))
        throw InvalidPoint("point_add: input not on curve");
    return curve.add(p1, p2);
}

inline CurvePoint scalar_mul(const CurveParams& curve, const BigUint& k,
                             const CurvePoint& pt) {
    if (!curve.is_on_curve(pt)) throw InvalidPoint("scalar_mul: input not on curve");
    return curve.multiply(k, pt);
}

inline KeyPair keygen(const CurveParams& curve, DetRng& rng) {
    KeyPair kp;
    kp.d = rng.scalar_in_group(curve.n());
    kp.q = curve.multiply(kp.d, curve.g());
    return kp;
}

/// Uncompressed point encoding: 0x00 for identity, else
/// 0x04 || x || y with fixed field-width big-endian coordinates.
inline Bytes encode_point(const CurveParams& curve, const CurvePoint& pt) {
    if (pt.is_identity) return Bytes{0x00};
    Bytes out;
    out.reserve(1 + 2 * curve.field_bytes());
    out.push_back(0x04);
    Bytes x = pt.x.to_bytes_be(curve.field_bytes());
    Bytes y = pt.y.to_bytes_be(curve.field_bytes());
    append(out, x);
    append(out, y);
    return out;
}

inline CurvePoint decode_point(const CurveParams& curve, std::span<const std::uint8_t> in) {
    if (in.size() == 1 && in[0] == 0x00) return CurvePoint::identity();
    std::size_t w = curve.field_bytes();
    if (in.size() != 1 + 2 * w || in[0] != 0x04)
        throw MalformedEncoding("decode_point: bad length or prefix");
    CurvePoint pt = CurvePoint::affine(BigUint::from_bytes_be(in.subspan(1, w)),
                                       BigUint::from_bytes_be(in.subspan(1 + w, w)));
    if (!curve.is_on_curve(pt)) throw InvalidPoint("decode_point: point not on curve");
    return pt;
}

/// Shared secret: x-coordinate of d*peer, fixed field width.
/// Rejects identity and off-curve peer keys.
inline Bytes ecdh(const CurveParams& curve, const KeyPair& own, const CurvePoint& peer_public) {
    if (peer_public.is_identity || !curve.is_on_curve(peer_public))
        throw InvalidPoint("ecdh: bad peer public key");
    CurvePoint shared = curve.multiply(own.d, peer_public);
    if (shared.is_identity) throw InvalidPoint("ecdh: degenerate shared point");
    return shared.x.to_bytes_be(curve.field_bytes());
}

/// Wire form of a signature: u8 len(R) || R || u8 len(s) || s, with s at
/// fixed scalar width.
inline Bytes encode_signature(const CurveParams& curve, const Signature& sig) {
    Bytes out;
    Bytes r = encode_point(curve, sig.r_point);
    out.push_back(static_cast<std::uint8_t>(r.size()));
    append(out, r);
    Bytes s = sig.s.to_bytes_be(curve.scalar_bytes());
    out.push_back(static_cast<std::uint8_t>(s.size()));
    append(out, s);
    return out;
}

/// Consumes a signature from `in` starting at `off`, advancing it.
inline Signature decode_signature(const CurveParams& curve, std::span<const std::uint8_t> in,
                                  std::size_t& off) {
    auto need = [&](std::size_t n) {
        if (off + n > in.size()) throw MalformedEncoding("signature: truncated");
    };
    Signature sig;
    need(1);
    std::size_t r_len = in[off++];
    need(r_len);
    sig.r_point = decode_point(curve, in.subspan(off, r_len));
    off += r_len;
    need(1);
    std::size_t s_len = in[off++];
    need(s_len);
    sig.s = BigUint::from_bytes_be(in.subspan(off, s_len));
    off += s_len;
    return sig;
}

namespace detail {

inline BigUint hash_to_scalar(const CurveParams& curve, std::span<const std::uint8_t> data) {
    auto d = sha256(data);
    return BigUint::from_bytes_be(d) % curve.n();
}

inline BigUint challenge(const CurveParams& curve, const CurvePoint& r, const CurvePoint& q,
                         std::span<const std::uint8_t> message) {
    Bytes buf = encode_point(curve, r);
    append(buf, encode_point(curve, q));
    append(buf, message);
    return hash_to_scalar(curve, buf);
}

}  // namespace detail

/// Deterministic Schnorr: R = kG with k = H(d || ctr || m) mod n,
/// e = H(enc(R) || enc(Q) || m) mod n, s = k + e*d mod n.
inline Signature sign(const CurveParams& curve, const KeyPair& key,
                      std::span<const std::uint8_t> message) {
    if (message.empty()) throw std::invalid_argument("sign: empty message");
    BigUint k;
    Bytes d_fixed = key.d.to_bytes_be(curve.scalar_bytes());
    for (std::uint8_t ctr = 0;; ++ctr) {
        Sha256 h;
        std::uint8_t tag = 0x6e;
        h.update(std::span<const std::uint8_t>(&tag, 1));
        h.update(d_fixed);
        h.update(std::span<const std::uint8_t>(&ctr, 1));
        h.update(message);
        k = BigUint::from_bytes_be(h.finalize()) % curve.n();
        if (!k.is_zero()) break;
    }
    Signature sig;
    sig.r_point = curve.multiply(k, curve.g());
    BigUint e = detail::challenge(curve, sig.r_point, key.q, message);
    sig.s = curve.fn().add(k, curve.fn().mul(e, key.d));
    return sig;
}

/// True iff s*G = R + e*Q.
inline bool verify(const CurveParams& curve, const CurvePoint& signer_public,
                   std::span<const std::uint8_t> message, const Signature& sig) {
    if (message.empty()) throw std::invalid_argument("verify: empty message");
    if (signer_public.is_identity || !curve.is_on_curve(signer_public))
        throw InvalidPoint("verify: bad signer public key");
    if (!curve.is_on_curve(sig.r_point)) return false;
    if (sig.s >= curve.n()) return false;
    BigUint e = detail::challenge(curve, sig.r_point, signer_public, message);
    CurvePoint lhs = curve.multiply(sig.s, curve.g());
    CurvePoint rhs = curve.add(sig.r_point, curve.multiply(e, signer_public));
    return lhs == rhs;
}

/// Named levels from the RSA/ECC key-size comparison table.
struct SecurityLevel {
    int bits;
};

inline constexpr std::array<int, 5> kSecurityLevelBits{80, 112, 128, 192, 256};

enum class Scheme { ecc, rsa };

/// Tabulated key size in bits for a scheme at a security level.
/// This is lookup data, not a formula; the table is reproduced as
/// published, including its anomalous 80-bit ECC and 256-bit RSA rows.
inline int key_material_size(Scheme scheme, SecurityLevel level) {
    struct Row {
        int security, ecc, rsa;
    };
    static constexpr Row rows[] = {
        {80, 260, 1024}, {112, 224, 2048}, {128, 256, 3072},
        {192, 384, 7680}, {256, 521, 15350},
    };
    for (const Row& r : rows) {
        if (r.security == level.bits) return scheme == Scheme::ecc ? r.ecc : r.rsa;
    }
    throw UnknownLevel("key_material_size: no table row for " + std::to_string(level.bits));
}

/// Version of the built-in curve parameter table.
inline constexpr int kCurveTableVersion = 1;

/// Built-in curves, keyed by name.
///
/// T17 is a 19-element toy group small enough for exhaustive oracles;
/// P256 carries the standard parameters for realistic key sizes.
inline const CurveParams& curve_by_name(std::string_view name) {
    static const CurveParams t17{
        "T17", BigUint(17), BigUint(2), BigUint(2), BigUint(5), BigUint(1), BigUint(19), 1};
    static const CurveParams p256{
        "P256",
        BigUint::from_hex("ffffffff00000001000000000000000000000000ffffffffffffffffffffffff"),
        BigUint::from_hex("ffffffff00000001000000000000000000000000fffffffffffffffffffffffc"),
        BigUint::from_hex("5ac635d8aa3a93e7b3ebbd55769886bc651d06b0cc53b0f63bce3c3e27d2604b"),
        BigUint::from_hex("6b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296"),
        BigUint::from_hex("4fe342e2fe1a7f9b8ee7eb4a7c0f9e162bce33576b315ececbb6406837bf51f5"),
        BigUint::from_hex("ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551"),
        1};
    if (name == "T17") return t17;
    if (name == "P256") return p256;
    throw std::invalid_argument("curve_by_name: unknown curve " + std::string(name));
}

}  // namespace iotsec::ecc
