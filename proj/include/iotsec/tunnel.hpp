#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "iotsec/bytes.hpp"
#include "iotsec/handshake.hpp"
#include "iotsec/hash.hpp"
#include "iotsec/registry.hpp"

namespace iotsec::tunnel {

enum class TunnelErrorCode : std::uint8_t {
    bad_magic,
    bad_version,
    bad_length,
    wrong_session,
    bad_tag,
    replay,
    payload_too_large,
    sequence_exhausted,
    no_route,
};

inline std::string_view tunnel_error_name(TunnelErrorCode c) {
    switch (c) {
        case TunnelErrorCode::bad_magic: return "bad_magic";
        case TunnelErrorCode::bad_version: return "bad_version";
        case TunnelErrorCode::bad_length: return "bad_length";
        case TunnelErrorCode::wrong_session: return "wrong_session";
        case TunnelErrorCode::bad_tag: return "bad_tag";
        case TunnelErrorCode::replay: return "replay";
        case TunnelErrorCode::payload_too_large: return "payload_too_large";
        case TunnelErrorCode::sequence_exhausted: return "sequence_exhausted";
        case TunnelErrorCode::no_route: return "no_route";
    }
    return "?";
}

struct TunnelError : std::runtime_error {
    TunnelErrorCode code;
    explicit TunnelError(TunnelErrorCode c)
        : std::runtime_error(std::string(tunnel_error_name(c))), code(c) {}
};

constexpr std::uint8_t kMagic0 = 0x56;
constexpr std::uint8_t kMagic1 = 0x54;
constexpr std::uint8_t kVersion = 0x01;
constexpr std::size_t kHeaderSize = 2 + 1 + 4 + 8 + 2;
constexpr std::size_t kTagSize = 32;
constexpr std::size_t kMaxPayload = 1200;
constexpr std::size_t kInnerHeader = 8;  // src + dst

/// Private-address packet carried inside the tunnel:
/// 4 bytes src || 4 bytes dst || payload.
struct InnerPacket {
    identity::Ipv4 src_private;
    identity::Ipv4 dst_private;
    Bytes payload;

    Bytes serialize() const {
        Bytes out;
        out.reserve(kInnerHeader + payload.size());
        append(out, src_private.octets);
        append(out, dst_private.octets);
        append(out, payload);
        return out;
    }

    static InnerPacket deserialize(std::span<const std::uint8_t> in) {
        if (in.size() < kInnerHeader) throw TunnelError(TunnelErrorCode::bad_length);
        InnerPacket p;
        std::copy(in.begin(), in.begin() + 4, p.src_private.octets.begin());
        std::copy(in.begin() + 4, in.begin() + 8, p.dst_private.octets.begin());
        p.payload.assign(in.begin() + 8, in.end());
        return p;
    }

    friend bool operator==(const InnerPacket&, const InnerPacket&) = default;
};

/// On-the-wire frame: magic(2) version(1) session_id(4) seq(8, BE)
/// ct_len(2, BE) ciphertext tag(32). The tag is
/// hmac(sender mac key, header || ciphertext).
struct TunnelFrame {
    std::array<std::uint8_t, 4> session_id{};
    std::uint64_t seq = 0;
    Bytes ciphertext;
    std::array<std::uint8_t, kTagSize> tag{};

    Bytes header_bytes() const {
        Bytes h;
        h.reserve(kHeaderSize);
        h.push_back(kMagic0);
        h.push_back(kMagic1);
        h.push_back(kVersion);
        append(h, session_id);
        put_u64_be(h, seq);
        put_u16_be(h, static_cast<std::uint16_t>(ciphertext.size()));
        return h;
    }

    Bytes encode() const {
        Bytes out = header_bytes();
        append(out, ciphertext);
        append(out, tag);
        return out;
    }

    /// Structural checks only; cryptographic checks happen in the
    /// session, after this succeeds.
    static TunnelFrame decode(std::span<const std::uint8_t> in) {
        if (in.size() < kHeaderSize + kTagSize) throw TunnelError(TunnelErrorCode::bad_length);
        if (in[0] != kMagic0 || in[1] != kMagic1) throw TunnelError(TunnelErrorCode::bad_magic);
        if (in[2] != kVersion) throw TunnelError(TunnelErrorCode::bad_version);
        TunnelFrame f;
        std::copy(in.begin() + 3, in.begin() + 7, f.session_id.begin());
        f.seq = get_u64_be(in.data() + 7);
        std::uint16_t ct_len = get_u16_be(in.data() + 15);
        if (in.size() != kHeaderSize + ct_len + kTagSize)
            throw TunnelError(TunnelErrorCode::bad_length);
        if (ct_len > kInnerHeader + kMaxPayload) throw TunnelError(TunnelErrorCode::bad_length);
        f.ciphertext.assign(in.begin() + kHeaderSize, in.begin() + kHeaderSize + ct_len);
        std::copy(in.begin() + kHeaderSize + ct_len, in.end(), f.tag.begin());
        return f;
    }
};

/// Classic 64-entry sliding bitmap over sequence numbers: each number
/// is accepted at most once, and anything older than 63 behind the
/// highest seen is rejected outright.
class ReplayWindow {
public:
    static constexpr std::uint64_t kWindow = 64;

    bool would_accept(std::uint64_t seq) const {
        if (!has_any_) return true;
        if (seq > highest_) return true;
        std::uint64_t behind = highest_ - seq;
        if (behind >= kWindow) return false;
        return ((bitmap_ >> behind) & 1) == 0;
    }

    /// Call only after would_accept(seq) returned true.
    void mark(std::uint64_t seq) {
        if (!has_any_) {
            has_any_ = true;
            highest_ = seq;
            bitmap_ = 1;
            return;
        }
        if (seq > highest_) {
            std::uint64_t shift = seq - highest_;
            bitmap_ = shift >= kWindow ? 0 : bitmap_ << shift;
            bitmap_ |= 1;
            highest_ = seq;
            return;
        }
        bitmap_ |= std::uint64_t{1} << (highest_ - seq);
    }

    std::uint64_t highest() const { return highest_; }

private:
    std::uint64_t highest_ = 0;
    std::uint64_t bitmap_ = 0;
    bool has_any_ = false;
};

/// Tunnel endpoints by id; the two ends of a session see the same pair
/// in opposite order.
struct TunnelRoute {
    std::string local_id;
    std::string remote_id;
};

/// One endpoint of an established tunnel. Encrypt-then-MAC built on the
/// module-wide hash: keystream block i = sha256(write_key || seq || i),
/// tag = hmac(write mac key, header || ciphertext).
///
/// Send state (the sequence counter) and receive state (the replay
/// window) are disjoint, so one sender task and one receiver task may
/// drive the same session concurrently; nothing else may.
class TunnelSession {
public:
    TunnelSession(const handshake::SessionKeys& keys, handshake::Role role, TunnelRoute route)
        : route_(std::move(route)), session_id_(keys.session_id) {
        if (role == handshake::Role::initiator) {
            write_key_ = keys.initiator_write_key;
            write_mac_key_ = keys.initiator_mac_key;
            peer_key_ = keys.responder_write_key;
            peer_mac_key_ = keys.responder_mac_key;
        } else {
            write_key_ = keys.responder_write_key;
            write_mac_key_ = keys.responder_mac_key;
            peer_key_ = keys.initiator_write_key;
            peer_mac_key_ = keys.initiator_mac_key;
        }
    }

    const TunnelRoute& route() const { return route_; }
    const std::array<std::uint8_t, 4>& session_id() const { return session_id_; }
    std::uint64_t send_seq() const { return send_seq_; }

    /// Test hook: fast-forward the send counter (e.g. toward wrap).
    void set_send_seq(std::uint64_t seq) { send_seq_ = seq; }

    const std::array<std::uint8_t, 32>& write_key() const { return write_key_; }
    const std::array<std::uint8_t, 32>& peer_key() const { return peer_key_; }
    const std::array<std::uint8_t, 32>& write_mac_key() const { return write_mac_key_; }
    const std::array<std::uint8_t, 32>& peer_mac_key() const { return peer_mac_key_; }

    TunnelFrame encapsulate(const InnerPacket& packet) {
        if (packet.payload.size() > kMaxPayload)
            throw TunnelError(TunnelErrorCode::payload_too_large);
        if (send_seq_ == ~std::uint64_t{0})
            throw TunnelError(TunnelErrorCode::sequence_exhausted);
        TunnelFrame f;
        f.session_id = session_id_;
        f.seq = send_seq_;
        f.ciphertext = apply_keystream(write_key_, f.seq, packet.serialize());
        Bytes mac_input = f.header_bytes();
        append(mac_input, f.ciphertext);
        f.tag = hmac_sha256(write_mac_key_, mac_input);
        ++send_seq_;
        return f;
    }

    InnerPacket decapsulate(const TunnelFrame& frame) {
        if (frame.session_id != session_id_) throw TunnelError(TunnelErrorCode::wrong_session);
        Bytes mac_input = frame.header_bytes();
        append(mac_input, frame.ciphertext);
        auto expected = hmac_sha256(peer_mac_key_, mac_input);
        if (!ct_equal(expected, frame.tag)) throw TunnelError(TunnelErrorCode::bad_tag);
        if (!replay_.would_accept(frame.seq)) throw TunnelError(TunnelErrorCode::replay);
        Bytes plain = apply_keystream(peer_key_, frame.seq, frame.ciphertext);
        InnerPacket packet = InnerPacket::deserialize(plain);
        replay_.mark(frame.seq);
        return packet;
    }

    InnerPacket decapsulate(std::span<const std::uint8_t> wire) {
        return decapsulate(TunnelFrame::decode(wire));
    }

private:
    static Bytes apply_keystream(const std::array<std::uint8_t, 32>& key, std::uint64_t seq,
                                 std::span<const std::uint8_t> data) {
        Bytes out(data.begin(), data.end());
        std::size_t blocks = (out.size() + 31) / 32;
        for (std::size_t i = 0; i < blocks; ++i) {
            Sha256 h;
            h.update(key);
            Bytes ctr;
            put_u64_be(ctr, seq);
            put_u32_be(ctr, static_cast<std::uint32_t>(i));
            h.update(ctr);
            auto block = h.finalize();
            std::size_t base = i * 32;
            std::size_t n = std::min<std::size_t>(32, out.size() - base);
            for (std::size_t j = 0; j < n; ++j) out[base + j] ^= block[j];
        }
        return out;
    }

    TunnelRoute route_;
    std::array<std::uint8_t, 4> session_id_;
    std::array<std::uint8_t, 32> write_key_{}, write_mac_key_{}, peer_key_{}, peer_mac_key_{};
    std::uint64_t send_seq_ = 0;
    ReplayWindow replay_;
};

inline TunnelSession establish_tunnel(const handshake::SessionKeys& keys, handshake::Role role,
                                      TunnelRoute route) {
    return TunnelSession(keys, role, std::move(route));
}

/// Private-address plan: entries map addresses to owning endpoints
/// (gateway ids for device addresses); addresses inside the plan prefix
/// but not in the table fall back to the server when server-mediated
/// delivery is on.
struct RouteTable {
    std::map<identity::Ipv4, std::string> entries;
    identity::Ipv4 plan_prefix;
    int plan_prefix_bits = 0;
    bool server_mediated = false;
    std::string server_id;

    bool in_plan(const identity::Ipv4& ip) const {
        if (plan_prefix_bits <= 0) return false;
        std::uint32_t a = get_u32_be(ip.octets.data());
        std::uint32_t p = get_u32_be(plan_prefix.octets.data());
        std::uint32_t mask = plan_prefix_bits >= 32
                                 ? 0xffffffffu
                                 : ~((1u << (32 - plan_prefix_bits)) - 1);
        return (a & mask) == (p & mask);
    }
};

inline std::string route_inner(const InnerPacket& packet, const RouteTable& table) {
    auto it = table.entries.find(packet.dst_private);
    if (it != table.entries.end()) return it->second;
    if (table.server_mediated && table.in_plan(packet.dst_private)) return table.server_id;
    throw TunnelError(TunnelErrorCode::no_route);
}

}  // namespace iotsec::tunnel
