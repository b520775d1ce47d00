#include <catch2/catch_amalgamated.hpp>

#include "iotsec/bigint.hpp"
#include "iotsec/rng.hpp"

using iotsec::BigUint;
using iotsec::DetRng;
using iotsec::ModContext;

TEST_CASE("hex round trip and byte conversions") {
    CHECK(BigUint::from_hex("0").is_zero());
    CHECK(BigUint::from_hex("00").is_zero());
    CHECK(BigUint::from_hex("ff").low_u64() == 255);
    CHECK(BigUint(0xdeadbeefULL).to_hex() == "deadbeef");

    BigUint v = BigUint::from_hex("0123456789abcdef0123456789abcdef01");
    CHECK(BigUint::from_hex(v.to_hex()) == v);

    auto bytes = v.to_bytes_be(20);
    CHECK(bytes.size() == 20);
    CHECK(bytes[0] == 0);  // left padding
    CHECK(BigUint::from_bytes_be(bytes) == v);

    CHECK_THROWS_AS(v.to_bytes_be(10), std::overflow_error);
}

TEST_CASE("small arithmetic identities") {
    BigUint a(1000), b(37);
    CHECK((a + b).low_u64() == 1037);
    CHECK((a - b).low_u64() == 963);
    CHECK((a * b).low_u64() == 37000);
    CHECK((a / b).low_u64() == 27);
    CHECK((a % b).low_u64() == 1000 % 37);
    CHECK_THROWS_AS(b - a, std::underflow_error);
    CHECK_THROWS_AS(a / BigUint(0), std::domain_error);
    CHECK(BigUint(0) + BigUint(0) == BigUint(0));
    CHECK(BigUint(1) * BigUint(0) == BigUint(0));
}

TEST_CASE("division is exact inverse of multiply-add") {
    DetRng rng(0x42);
    for (int trial = 0; trial < 500; ++trial) {
        std::size_t alen = 1 + rng.below(64);
        std::size_t blen = 1 + rng.below(32);
        BigUint a = BigUint::from_bytes_be(rng.bytes(alen));
        BigUint b = BigUint::from_bytes_be(rng.bytes(blen));
        if (b.is_zero()) continue;
        auto [q, r] = BigUint::divrem(a, b);
        CHECK(r < b);
        CHECK(q * b + r == a);
    }
}

TEST_CASE("addition and subtraction are inverses") {
    DetRng rng(0x43);
    for (int trial = 0; trial < 200; ++trial) {
        BigUint a = BigUint::from_bytes_be(rng.bytes(1 + rng.below(48)));
        BigUint b = BigUint::from_bytes_be(rng.bytes(1 + rng.below(48)));
        CHECK((a + b) - b == a);
        CHECK((a + b) - a == b);
    }
}

TEST_CASE("comparison ordering") {
    CHECK(BigUint(2) < BigUint(10));
    CHECK(BigUint::from_hex("100000000000000000") > BigUint::from_hex("ffffffffffffffff"));
    CHECK(BigUint(5) == BigUint(5));
}

TEST_CASE("capacity limit is enforced") {
    // 1408-bit capacity; squaring an 896-bit number must throw.
    BigUint big = BigUint::from_hex(std::string(224, 'f'));
    CHECK_THROWS_AS(big * big, std::overflow_error);
}

TEST_CASE("barrett context matches plain division") {
    DetRng rng(0x44);
    const BigUint p = iotsec::BigUint::from_hex(
        "ffffffff00000001000000000000000000000000ffffffffffffffffffffffff");
    ModContext ctx(p);
    for (int trial = 0; trial < 300; ++trial) {
        BigUint a = BigUint::from_bytes_be(rng.bytes(32)) % p;
        BigUint b = BigUint::from_bytes_be(rng.bytes(32)) % p;
        CHECK(ctx.mul(a, b) == (a * b) % p);
        CHECK(ctx.add(a, b) == (a + b) % p);
        BigUint d = ctx.sub(a, b);
        CHECK((d + b) % p == a);
    }
}

TEST_CASE("barrett context on tiny modulus") {
    ModContext ctx((BigUint(17)));
    for (std::uint64_t a = 0; a < 17; ++a)
        for (std::uint64_t b = 0; b < 17; ++b)
            CHECK(ctx.mul(BigUint(a), BigUint(b)).low_u64() == (a * b) % 17);
}

TEST_CASE("modular inverse via extended euclid") {
    const BigUint p = BigUint::from_hex(
        "ffffffff00000001000000000000000000000000ffffffffffffffffffffffff");
    ModContext ctx(p);
    DetRng rng(0x45);
    for (int trial = 0; trial < 50; ++trial) {
        BigUint a = BigUint::from_bytes_be(rng.bytes(32)) % p;
        if (a.is_zero()) continue;
        BigUint inv = ctx.inverse(a);
        CHECK(ctx.mul(a, inv).is_one());
    }
    CHECK_THROWS_AS(ctx.inverse(BigUint(0)), std::domain_error);

    ModContext small((BigUint(17)));
    for (std::uint64_t a = 1; a < 17; ++a) {
        BigUint inv = small.inverse(BigUint(a));
        CHECK(small.mul(BigUint(a), inv).is_one());
    }

    // Non-invertible residue mod a composite.
    ModContext comp((BigUint(15)));
    CHECK_THROWS_AS(comp.inverse(BigUint(5)), std::domain_error);
}

TEST_CASE("bit accessors") {
    BigUint v = BigUint::from_hex("8000000000000001");
    CHECK(v.bit_length() == 64);
    CHECK(v.bit(0));
    CHECK(v.bit(63));
    CHECK_FALSE(v.bit(1));
    CHECK_FALSE(v.bit(64));
    CHECK(BigUint(0).bit_length() == 0);
    CHECK(BigUint(0).byte_length() == 0);
    CHECK(BigUint(255).byte_length() == 1);
    CHECK(BigUint(256).byte_length() == 2);
}
