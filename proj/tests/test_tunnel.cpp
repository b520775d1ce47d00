#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "iotsec/tunnel.hpp"

using namespace iotsec;
using namespace iotsec::tunnel;
using handshake::Role;
using handshake::SessionKeys;
using identity::Ipv4;

namespace {

SessionKeys test_keys(std::uint64_t seed = 1) {
    DetRng rng(seed);
    Bytes secret = rng.bytes(32);
    Bytes cn = rng.bytes(32), sn = rng.bytes(32);
    return handshake::derive_session_keys(secret, cn, sn);
}

std::pair<TunnelSession, TunnelSession> tunnel_pair(std::uint64_t seed = 1) {
    SessionKeys keys = test_keys(seed);
    return {establish_tunnel(keys, Role::initiator, {"alice", "gw1"}),
            establish_tunnel(keys, Role::responder, {"gw1", "alice"})};
}

InnerPacket packet(std::string_view payload, const char* src = "10.0.100.1",
                   const char* dst = "10.0.1.2") {
    InnerPacket p;
    p.src_private = Ipv4::parse(src);
    p.dst_private = Ipv4::parse(dst);
    p.payload.assign(payload.begin(), payload.end());
    return p;
}

}  // namespace

TEST_CASE("role key assignment mirrors") {
    auto [a, b] = tunnel_pair();
    CHECK(a.write_key() == b.peer_key());
    CHECK(b.write_key() == a.peer_key());
    CHECK(a.write_mac_key() == b.peer_mac_key());
    CHECK(a.session_id() == b.session_id());
    CHECK(a.send_seq() == 0);
}

TEST_CASE("encapsulate/decapsulate round trip") {
    auto [a, b] = tunnel_pair();
    InnerPacket p = packet("turn on the lamp");
    TunnelFrame f = a.encapsulate(p);
    InnerPacket out = b.decapsulate(f);
    CHECK(out == p);

    // Wire-level round trip too.
    TunnelFrame f2 = a.encapsulate(p);
    CHECK(b.decapsulate(f2.encode()) == p);
}

TEST_CASE("round trip is identity over random packets") {
    auto [a, b] = tunnel_pair(7);
    DetRng rng(20);
    for (int i = 0; i < 200; ++i) {
        InnerPacket p;
        rng.fill(p.src_private.octets);
        rng.fill(p.dst_private.octets);
        p.payload = rng.bytes(rng.below(kMaxPayload + 1));
        CHECK(b.decapsulate(a.encapsulate(p)) == p);
    }
    // Boundary sizes.
    InnerPacket empty = packet("");
    CHECK(b.decapsulate(a.encapsulate(empty)) == empty);
    InnerPacket big = packet(std::string(kMaxPayload, 'x'));
    CHECK(b.decapsulate(a.encapsulate(big)) == big);
}

TEST_CASE("sequence numbers increment and never repeat") {
    auto [a, b] = tunnel_pair();
    TunnelFrame f0 = a.encapsulate(packet("one"));
    TunnelFrame f1 = a.encapsulate(packet("two"));
    CHECK(f0.seq == 0);
    CHECK(f1.seq == 1);
    CHECK(a.send_seq() == 2);
}

TEST_CASE("same plaintext twice gives different ciphertexts") {
    auto [a, b] = tunnel_pair();
    InnerPacket p = packet("repeat me");
    TunnelFrame f0 = a.encapsulate(p);
    TunnelFrame f1 = a.encapsulate(p);
    CHECK(f0.ciphertext != f1.ciphertext);
}

TEST_CASE("frame byte layout") {
    auto [a, b] = tunnel_pair();
    InnerPacket p = packet("xy");
    TunnelFrame f = a.encapsulate(p);
    Bytes wire = f.encode();
    std::size_t inner = kInnerHeader + 2;
    REQUIRE(wire.size() == kHeaderSize + inner + kTagSize);
    CHECK(wire[0] == 0x56);
    CHECK(wire[1] == 0x54);
    CHECK(wire[2] == 0x01);
    CHECK(std::equal(wire.begin() + 3, wire.begin() + 7, a.session_id().begin()));
    CHECK(get_u64_be(wire.data() + 7) == 0);
    CHECK(get_u16_be(wire.data() + 15) == inner);

    TunnelFrame dec = TunnelFrame::decode(wire);
    CHECK(dec.encode() == wire);
}

TEST_CASE("structural rejects precede cryptographic ones") {
    auto [a, b] = tunnel_pair();
    Bytes wire = a.encapsulate(packet("hello")).encode();

    Bytes bad = wire;
    bad[0] = 0x00;
    CHECK_THROWS_MATCHES(b.decapsulate(TunnelFrame::decode(bad)), TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::bad_magic;
                         }));
    bad = wire;
    bad[2] = 0x02;
    CHECK_THROWS_MATCHES(b.decapsulate(TunnelFrame::decode(bad)), TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::bad_version;
                         }));
    bad = wire;
    bad.pop_back();
    CHECK_THROWS_MATCHES(b.decapsulate(bad), TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::bad_length;
                         }));
    // Declared ct_len inconsistent with actual size.
    bad = wire;
    bad[16] += 1;
    CHECK_THROWS_MATCHES(b.decapsulate(bad), TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::bad_length;
                         }));
}

TEST_CASE("session id mismatch is rejected") {
    auto [a, b] = tunnel_pair(1);
    auto [c, d] = tunnel_pair(2);
    TunnelFrame f = a.encapsulate(packet("hi"));
    CHECK_THROWS_MATCHES(d.decapsulate(f), TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::wrong_session;
                         }));
}

TEST_CASE("any single bit flip in header or ciphertext is rejected") {
    auto [a, b] = tunnel_pair(3);
    DetRng rng(30);
    int trials = 0;
    while (trials < 300) {
        Bytes wire = a.encapsulate(packet("integrity probe", "10.0.100.1", "10.0.1.3")).encode();
        std::size_t bit = rng.below(wire.size() * 8);
        Bytes bad = wire;
        bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        bool accepted = false;
        try {
            b.decapsulate(bad);
            accepted = true;
        } catch (const TunnelError&) {
        }
        CHECK_FALSE(accepted);
        // The untampered frame still goes through afterwards: rejection
        // must not consume the sequence number.
        CHECK(b.decapsulate(wire).payload.size() == 15);
        ++trials;
    }
}

TEST_CASE("frames forged under a random mac key are rejected") {
    auto [a, b] = tunnel_pair(4);
    DetRng rng(40);
    int accepted = 0;
    for (int i = 0; i < 1000; ++i) {
        TunnelFrame f;
        f.session_id = b.session_id();
        f.seq = i;
        f.ciphertext = rng.bytes(24);
        std::array<std::uint8_t, 32> random_key{};
        rng.fill(random_key);
        Bytes mac_input = f.header_bytes();
        append(mac_input, f.ciphertext);
        f.tag = hmac_sha256(random_key, mac_input);
        try {
            b.decapsulate(f);
            ++accepted;
        } catch (const TunnelError&) {
        }
    }
    CHECK(accepted == 0);
}

TEST_CASE("replay of a delivered frame is rejected") {
    auto [a, b] = tunnel_pair();
    TunnelFrame f = a.encapsulate(packet("once"));
    CHECK(b.decapsulate(f).payload == Bytes{'o', 'n', 'c', 'e'});
    CHECK_THROWS_MATCHES(b.decapsulate(f), TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::replay;
                         }));
}

TEST_CASE("replay window accepts in-window reordering exactly once") {
    auto [a, b] = tunnel_pair(5);
    std::vector<TunnelFrame> frames;
    for (int i = 0; i < 100; ++i) frames.push_back(a.encapsulate(packet("p" + std::to_string(i))));

    // Deliver a mildly shuffled order (swap adjacent pairs): everything
    // stays within the 64-deep window, so all 100 must be accepted.
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i + 1 < 100; i += 2) {
        order.push_back(i + 1);
        order.push_back(i);
    }
    int accepted = 0;
    for (std::size_t idx : order) {
        try {
            b.decapsulate(frames[idx]);
            ++accepted;
        } catch (const TunnelError&) {
        }
    }
    CHECK(accepted == 100);
    // Second delivery of any of them is a replay.
    CHECK_THROWS_AS(b.decapsulate(frames[98]), TunnelError);
    CHECK_THROWS_AS(b.decapsulate(frames[3]), TunnelError);
}

TEST_CASE("random permutation with duplicates: no frame accepted twice") {
    DetRng rng(60);
    for (int round = 0; round < 5; ++round) {
        auto [a, b] = tunnel_pair(600 + round);
        std::vector<TunnelFrame> frames;
        for (int i = 0; i < 100; ++i)
            frames.push_back(a.encapsulate(packet("payload-" + std::to_string(i))));

        // Random permutation with one duplicate of every 5th frame.
        std::vector<std::size_t> deliveries;
        for (std::size_t i = 0; i < 100; ++i) {
            deliveries.push_back(i);
            if (i % 5 == 0) deliveries.push_back(i);
        }
        for (std::size_t i = deliveries.size(); i > 1; --i)
            std::swap(deliveries[i - 1], deliveries[rng.below(i)]);

        std::map<std::uint64_t, int> accepted_count;
        for (std::size_t idx : deliveries) {
            try {
                b.decapsulate(frames[idx]);
                accepted_count[frames[idx].seq]++;
            } catch (const TunnelError&) {
            }
        }
        for (const auto& [seq, count] : accepted_count) CHECK(count == 1);
    }
}

TEST_CASE("sequences older than the window are rejected") {
    auto [a, b] = tunnel_pair(8);
    std::vector<TunnelFrame> frames;
    for (int i = 0; i < 70; ++i) frames.push_back(a.encapsulate(packet("x")));
    // Deliver the newest first; 69 - 0 >= 64 puts frame 0 out of window,
    // while 69 - 63 = 6 keeps frame 6 inside.
    CHECK_NOTHROW(b.decapsulate(frames[69]));
    CHECK_THROWS_MATCHES(b.decapsulate(frames[0]), TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::replay;
                         }));
    CHECK_NOTHROW(b.decapsulate(frames[6]));
}

TEST_CASE("payload bound and sequence exhaustion") {
    auto [a, b] = tunnel_pair();
    InnerPacket too_big = packet(std::string(kMaxPayload + 1, 'x'));
    CHECK_THROWS_MATCHES(a.encapsulate(too_big), TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::payload_too_large;
                         }));

    a.set_send_seq(~std::uint64_t{0} - 1);
    CHECK_NOTHROW(a.encapsulate(packet("last one")));
    CHECK(a.send_seq() == ~std::uint64_t{0});
    CHECK_THROWS_MATCHES(a.encapsulate(packet("wraps")), TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::sequence_exhausted;
                         }));
}

TEST_CASE("route_inner resolves addresses by table, plan, then fails") {
    RouteTable table;
    table.entries[Ipv4::parse("10.0.1.2")] = "gw1";
    table.entries[Ipv4::parse("10.0.2.2")] = "gw2";
    table.entries[Ipv4::parse("10.0.0.1")] = "server";
    table.plan_prefix = Ipv4::parse("10.0.0.0");
    table.plan_prefix_bits = 16;
    table.server_id = "server";

    CHECK(route_inner(packet("x", "10.0.100.1", "10.0.1.2"), table) == "gw1");
    CHECK(route_inner(packet("x", "10.0.100.1", "10.0.2.2"), table) == "gw2");

    // Outside the plan: no route, mediated or not.
    CHECK_THROWS_MATCHES(route_inner(packet("x", "10.0.100.1", "192.168.1.1"), table),
                         TunnelError,
                         Catch::Matchers::Predicate<TunnelError>([](const TunnelError& e) {
                             return e.code == TunnelErrorCode::no_route;
                         }));

    // In plan but unlisted: server-mediated mode forwards to the server.
    CHECK_THROWS_AS(route_inner(packet("x", "10.0.100.1", "10.0.3.9"), table), TunnelError);
    table.server_mediated = true;
    CHECK(route_inner(packet("x", "10.0.100.1", "10.0.3.9"), table) == "server");
}

TEST_CASE("observer without keys sees no payload substring") {
    auto [a, b] = tunnel_pair(9);
    DetRng rng(90);
    Bytes capture;
    std::vector<Bytes> payloads;
    for (int i = 0; i < 100; ++i) {
        InnerPacket p;
        p.src_private = Ipv4::parse("10.0.100.1");
        p.dst_private = Ipv4::parse("10.0.1.2");
        p.payload = rng.bytes(32);
        payloads.push_back(p.payload);
        append(capture, a.encapsulate(p).encode());
    }
    // No 8-byte window of any payload appears in the captured stream.
    int hits = 0;
    for (const auto& payload : payloads) {
        for (std::size_t off = 0; off + 8 <= payload.size(); ++off) {
            auto begin = payload.begin() + off;
            if (std::search(capture.begin(), capture.end(), begin, begin + 8) !=
                capture.end())
                ++hits;
        }
    }
    CHECK(hits == 0);
}
