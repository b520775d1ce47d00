#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "iotsec/bytes.hpp"
#include "iotsec/ecc.hpp"
#include "iotsec/hash.hpp"
#include "iotsec/registry.hpp"
#include "iotsec/rng.hpp"

namespace iotsec::handshake {

constexpr std::size_t kNonceSize = 32;
constexpr std::size_t kCookieSize = 16;
constexpr std::size_t kMacSize = 32;

enum class MsgType : std::uint8_t {
    client_hello = 0x01,
    hello_verify = 0x02,
    server_hello = 0x03,
    certificate = 0x04,
    key_exchange = 0x05,
    certificate_verify = 0x06,
    finished = 0x07,
    abort_msg = 0x08,
};

enum class AbortReason : std::uint8_t {
    bad_cookie = 0x01,
    bad_certificate = 0x02,
    bad_signature = 0x03,
    bad_finished = 0x04,
    wrong_phase = 0x05,
    malformed_message = 0x06,
    timeout = 0x07,
};

inline std::string_view abort_reason_name(AbortReason r) {
    switch (r) {
        case AbortReason::bad_cookie: return "bad_cookie";
        case AbortReason::bad_certificate: return "bad_certificate";
        case AbortReason::bad_signature: return "bad_signature";
        case AbortReason::bad_finished: return "bad_finished";
        case AbortReason::wrong_phase: return "wrong_phase";
        case AbortReason::malformed_message: return "malformed_message";
        case AbortReason::timeout: return "timeout";
    }
    return "?";
}

struct MalformedMessage : std::runtime_error {
    explicit MalformedMessage(const std::string& w) : std::runtime_error(w) {}
};
struct WrongPhase : std::runtime_error {
    explicit WrongPhase(const std::string& w) : std::runtime_error(w) {}
};

using Nonce = std::array<std::uint8_t, kNonceSize>;
using Cookie = std::array<std::uint8_t, kCookieSize>;
using Mac = std::array<std::uint8_t, kMacSize>;

struct ClientHello {
    Nonce client_nonce{};
    std::optional<Cookie> cookie;
};
struct HelloVerifyRequest {
    Cookie cookie{};
};
struct ServerHello {
    Nonce server_nonce{};
};
struct CertificateMsg {
    identity::Certificate certificate;
};
struct KeyExchange {
    Bytes ephemeral_public;    // encoded curve point
    ecc::Signature signature;  // by the sender's static key, see kx_signed_blob
};
struct CertificateVerify {
    ecc::Signature signature;  // over the transcript hash
};
struct Finished {
    Mac verify_mac{};
};
struct AbortMsg {
    AbortReason reason = AbortReason::malformed_message;
};

struct HandshakeMessage {
    std::variant<ClientHello, HelloVerifyRequest, ServerHello, CertificateMsg, KeyExchange,
                 CertificateVerify, Finished, AbortMsg>
        body;

    MsgType type() const { return static_cast<MsgType>(body.index() + 1); }
};

/// Traffic keys released by a completed handshake.
struct SessionKeys {
    std::array<std::uint8_t, 32> initiator_write_key{};
    std::array<std::uint8_t, 32> responder_write_key{};
    std::array<std::uint8_t, 32> initiator_mac_key{};
    std::array<std::uint8_t, 32> responder_mac_key{};
    std::array<std::uint8_t, 4> session_id{};

    friend bool operator==(const SessionKeys&, const SessionKeys&) = default;
};

/// master = sha256(0x01 || secret || client_nonce || server_nonce),
/// then one labeled hash per key.
inline SessionKeys derive_session_keys(std::span<const std::uint8_t> shared_secret,
                                       std::span<const std::uint8_t> client_nonce,
                                       std::span<const std::uint8_t> server_nonce) {
    if (client_nonce.size() != kNonceSize || server_nonce.size() != kNonceSize)
        throw std::invalid_argument("derive_session_keys: bad nonce length");
    Sha256 m;
    std::uint8_t tag = 0x01;
    m.update(std::span<const std::uint8_t>(&tag, 1));
    m.update(shared_secret);
    m.update(client_nonce);
    m.update(server_nonce);
    auto master = m.finalize();

    auto labeled = [&](std::string_view label) {
        Sha256 h;
        h.update(master);
        h.update(label);
        return h.finalize();
    };
    SessionKeys keys;
    keys.initiator_write_key = labeled("iwk");
    keys.responder_write_key = labeled("rwk");
    keys.initiator_mac_key = labeled("imk");
    keys.responder_mac_key = labeled("rmk");
    auto sid = labeled("sid");
    std::copy(sid.begin(), sid.begin() + 4, keys.session_id.begin());
    return keys;
}

/// Stateless anti-DoS cookie: first 16 bytes of
/// hmac(server_secret, initiator_address || client_nonce).
inline Cookie compute_cookie(std::span<const std::uint8_t> server_secret,
                             std::span<const std::uint8_t> initiator_address,
                             std::span<const std::uint8_t> client_nonce) {
    Bytes msg;
    append(msg, initiator_address);
    append(msg, client_nonce);
    auto mac = hmac_sha256(server_secret, msg);
    Cookie c{};
    std::copy(mac.begin(), mac.begin() + kCookieSize, c.begin());
    return c;
}

// --- Wire codec: u8 type || u16 big-endian body length || body -------

inline Bytes encode_message(const ecc::CurveParams& curve, const HandshakeMessage& msg) {
    Bytes body;
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, ClientHello>) {
                append(body, m.client_nonce);
                body.push_back(m.cookie ? static_cast<std::uint8_t>(kCookieSize) : 0);
                if (m.cookie) append(body, *m.cookie);
            } else if constexpr (std::is_same_v<T, HelloVerifyRequest>) {
                append(body, m.cookie);
            } else if constexpr (std::is_same_v<T, ServerHello>) {
                append(body, m.server_nonce);
            } else if constexpr (std::is_same_v<T, CertificateMsg>) {
                append(body, m.certificate.encode(curve));
            } else if constexpr (std::is_same_v<T, KeyExchange>) {
                body.push_back(static_cast<std::uint8_t>(m.ephemeral_public.size()));
                append(body, m.ephemeral_public);
                append(body, ecc::encode_signature(curve, m.signature));
            } else if constexpr (std::is_same_v<T, CertificateVerify>) {
                append(body, ecc::encode_signature(curve, m.signature));
            } else if constexpr (std::is_same_v<T, Finished>) {
                append(body, m.verify_mac);
            } else if constexpr (std::is_same_v<T, AbortMsg>) {
                body.push_back(static_cast<std::uint8_t>(m.reason));
            }
        },
        msg.body);
    if (body.size() > 0xffff) throw std::length_error("encode_message: body too large");
    Bytes out;
    out.push_back(static_cast<std::uint8_t>(msg.type()));
    put_u16_be(out, static_cast<std::uint16_t>(body.size()));
    append(out, body);
    return out;
}

/// Decodes one message starting at `off`; advances `off` past it.
/// Rejects unknown tags, truncation, and trailing bytes inside a body.
inline HandshakeMessage decode_message(const ecc::CurveParams& curve,
                                       std::span<const std::uint8_t> in, std::size_t& off) {
    if (off + 3 > in.size()) throw MalformedMessage("message header truncated");
    std::uint8_t tag = in[off];
    std::uint16_t len = get_u16_be(in.data() + off + 1);
    off += 3;
    if (off + len > in.size()) throw MalformedMessage("message body truncated");
    std::span<const std::uint8_t> body = in.subspan(off, len);
    off += len;

    auto as_array = [&]<std::size_t N>(std::span<const std::uint8_t> src,
                                       std::array<std::uint8_t, N>& dst, std::size_t at) {
        std::copy(src.begin() + at, src.begin() + at + N, dst.begin());
    };

    try {
        switch (static_cast<MsgType>(tag)) {
            case MsgType::client_hello: {
                if (body.size() < kNonceSize + 1) throw MalformedMessage("short client hello");
                ClientHello m;
                as_array(body, m.client_nonce, 0);
                std::uint8_t clen = body[kNonceSize];
                if (clen == 0) {
                    if (body.size() != kNonceSize + 1)
                        throw MalformedMessage("trailing bytes in client hello");
                } else if (clen == kCookieSize) {
                    if (body.size() != kNonceSize + 1 + kCookieSize)
                        throw MalformedMessage("bad client hello cookie length");
                    Cookie c{};
                    as_array(body, c, kNonceSize + 1);
                    m.cookie = c;
                } else {
                    throw MalformedMessage("bad cookie length marker");
                }
                return HandshakeMessage{m};
            }
            case MsgType::hello_verify: {
                if (body.size() != kCookieSize) throw MalformedMessage("bad hello verify");
                HelloVerifyRequest m;
                as_array(body, m.cookie, 0);
                return HandshakeMessage{m};
            }
            case MsgType::server_hello: {
                if (body.size() != kNonceSize) throw MalformedMessage("bad server hello");
                ServerHello m;
                as_array(body, m.server_nonce, 0);
                return HandshakeMessage{m};
            }
            case MsgType::certificate: {
                CertificateMsg m;
                m.certificate = identity::Certificate::decode(curve, body);
                return HandshakeMessage{m};
            }
            case MsgType::key_exchange: {
                if (body.empty()) throw MalformedMessage("empty key exchange");
                std::size_t pt_len = body[0];
                std::size_t pos = 1;
                if (pos + pt_len > body.size()) throw MalformedMessage("key exchange truncated");
                KeyExchange m;
                m.ephemeral_public.assign(body.begin() + pos, body.begin() + pos + pt_len);
                pos += pt_len;
                m.signature = ecc::decode_signature(curve, body, pos);
                if (pos != body.size())
                    throw MalformedMessage("trailing bytes in key exchange");
                return HandshakeMessage{m};
            }
            case MsgType::certificate_verify: {
                std::size_t pos = 0;
                CertificateVerify m;
                m.signature = ecc::decode_signature(curve, body, pos);
                if (pos != body.size())
                    throw MalformedMessage("trailing bytes in certificate verify");
                return HandshakeMessage{m};
            }
            case MsgType::finished: {
                if (body.size() != kMacSize) throw MalformedMessage("bad finished length");
                Finished m;
                as_array(body, m.verify_mac, 0);
                return HandshakeMessage{m};
            }
            case MsgType::abort_msg: {
                if (body.size() != 1 || body[0] < 0x01 || body[0] > 0x07)
                    throw MalformedMessage("bad abort body");
                return HandshakeMessage{AbortMsg{static_cast<AbortReason>(body[0])}};
            }
        }
    } catch (const ecc::MalformedEncoding& e) {
        throw MalformedMessage(e.what());
    } catch (const ecc::InvalidPoint& e) {
        throw MalformedMessage(e.what());
    }
    throw MalformedMessage("unknown message type tag");
}

inline std::vector<HandshakeMessage> decode_flight(const ecc::CurveParams& curve,
                                                   std::span<const std::uint8_t> in) {
    std::vector<HandshakeMessage> msgs;
    std::size_t off = 0;
    while (off < in.size()) msgs.push_back(decode_message(curve, in, off));
    if (msgs.empty()) throw MalformedMessage("empty datagram");
    return msgs;
}

inline Bytes encode_flight(const ecc::CurveParams& curve,
                           const std::vector<HandshakeMessage>& msgs) {
    Bytes out;
    for (const auto& m : msgs) append(out, encode_message(curve, m));
    return out;
}

enum class Role : std::uint8_t { initiator, responder };
enum class Phase : std::uint8_t {
    idle,
    awaiting_cookie,
    hello_sent,
    params_sent,
    keys_sent,
    finished_wait,
    established,
    failed,
};

inline std::string_view phase_name(Phase p) {
    switch (p) {
        case Phase::idle: return "idle";
        case Phase::awaiting_cookie: return "awaiting_cookie";
        case Phase::hello_sent: return "hello_sent";
        case Phase::params_sent: return "params_sent";
        case Phase::keys_sent: return "keys_sent";
        case Phase::finished_wait: return "finished_wait";
        case Phase::established: return "established";
        case Phase::failed: return "failed";
    }
    return "?";
}

struct HandshakeConfig {
    const ecc::CurveParams* curve = nullptr;
    ecc::CurvePoint root_public;  // trust anchor for peer certificates
    std::function<identity::CertStatus(std::string_view)> status_lookup;
    identity::Certificate own_certificate;
    ecc::KeyPair static_key;
    std::optional<std::string> expected_peer_id;  // enforced when set
    Bytes peer_address;    // transport address the cookie binds to
    Bytes cookie_secret;   // responder side only
    std::uint64_t rto_epochs = 8;
    int retransmit_budget = 5;
};

struct FlightRecord {
    int flight = 0;        // 1..6
    std::size_t bytes = 0; // first transmission, wire size
};

/// One endpoint of the cookie-protected mutually authenticated
/// handshake. Single-owner: one logical thread drives an instance via
/// process_message / process_datagram / on_timeout.
///
/// Flights: F1 I->R ClientHello, F2 R->I HelloVerifyRequest,
/// F3 I->R ClientHello+cookie, F4 R->I ServerHello|Certificate|
/// KeyExchange, F5 I->R Certificate|KeyExchange|CertificateVerify|
/// Finished, F6 R->I Finished.
///
/// The responder commits no handshake state before the cookie round
/// trip: the transcript over F1/F2 is reconstructed from the returned
/// ClientHello when the cookie verifies. Verification failures move the
/// phase to failed and emit a single Abort with the matching reason;
/// session keys are released only in the established phase.
class HandshakeState {
public:
    struct StepResult {
        std::vector<HandshakeMessage> outbound;
        std::optional<SessionKeys> session_keys;  // set when this step establishes
    };

    struct DatagramResult {
        Bytes outbound;
        bool established_now = false;
    };

    HandshakeState(Role role, HandshakeConfig config, DetRng rng)
        : role_(role), cfg_(std::move(config)), rng_(rng) {
        if (!cfg_.curve) throw std::invalid_argument("HandshakeState: missing curve");
    }

    Role role() const { return role_; }
    Phase phase() const { return phase_; }
    bool established() const { return phase_ == Phase::established; }
    bool failed() const { return phase_ == Phase::failed; }
    std::optional<AbortReason> failure_reason() const { return failure_reason_; }
    const std::vector<FlightRecord>& flight_records() const { return flights_; }

    const SessionKeys& session_keys() const {
        if (phase_ != Phase::established)
            throw WrongPhase("session_keys: handshake not established");
        return *keys_;
    }

    const identity::Certificate& peer_certificate() const {
        if (!peer_cert_) throw WrongPhase("peer_certificate: none received");
        return *peer_cert_;
    }

    /// Epoch at which on_timeout will act, while a flight is pending.
    std::optional<std::uint64_t> next_timeout() const { return next_timeout_; }

    /// Initiator only, from idle: emits the cookie-less ClientHello.
    std::vector<HandshakeMessage> start_handshake(std::uint64_t now) {
        if (role_ != Role::initiator) throw WrongPhase("start_handshake: not an initiator");
        if (phase_ != Phase::idle) throw WrongPhase("start_handshake: already started");
        rng_.fill(client_nonce_);
        ClientHello hello;
        hello.client_nonce = client_nonce_;
        std::vector<HandshakeMessage> flight{HandshakeMessage{hello}};
        send_flight(1, flight, now);
        phase_ = Phase::awaiting_cookie;
        return flight;
    }

    /// Spec-level single-message step. Out-of-order or malformed input
    /// fails the handshake; the returned flight carries the Abort.
    StepResult process_message(const HandshakeMessage& msg, std::uint64_t now) {
        if (phase_ == Phase::failed) return {};
        return std::visit([&](const auto& m) { return dispatch(m, now); }, msg.body);
    }

    /// Transport-level step: decodes a whole flight, tolerates
    /// duplicate datagrams, and answers retransmitted peer flights by
    /// retransmitting our own last flight.
    DatagramResult process_datagram(std::span<const std::uint8_t> datagram, std::uint64_t now) {
        DatagramResult result;
        if (phase_ == Phase::failed) return result;

        auto digest = sha256(datagram);
        if (seen_datagrams_.count(digest)) {
            if (digest == last_peer_flight_) {
                // Peer retransmitted its latest flight: ours was lost.
                if (!(role_ == Role::initiator && phase_ == Phase::established))
                    result.outbound = encode_flight(*cfg_.curve, last_sent_flight_);
            }
            return result;
        }

        std::vector<HandshakeMessage> msgs;
        try {
            msgs = decode_flight(*cfg_.curve, datagram);
        } catch (const MalformedMessage&) {
            result.outbound = encode_flight(*cfg_.curve, fail(AbortReason::malformed_message));
            return result;
        }

        std::vector<HandshakeMessage> outbound;
        for (const auto& m : msgs) {
            StepResult step = process_message(m, now);
            for (auto& out : step.outbound) outbound.push_back(std::move(out));
            if (step.session_keys) result.established_now = true;
            if (phase_ == Phase::failed) break;
        }
        if (phase_ != Phase::failed) {
            seen_datagrams_.insert(digest);
            last_peer_flight_ = digest;
        }
        result.outbound = encode_flight(*cfg_.curve, outbound);
        return result;
    }

    /// Retransmits the last flight once the deadline passes; after the
    /// budget is spent, aborts with Timeout. No-op when idle,
    /// established, or failed.
    std::vector<HandshakeMessage> on_timeout(std::uint64_t now) {
        if (phase_ == Phase::idle || phase_ == Phase::established || phase_ == Phase::failed)
            return {};
        if (!next_timeout_ || now < *next_timeout_) return {};
        if (retransmits_used_ >= cfg_.retransmit_budget) return fail(AbortReason::timeout);
        ++retransmits_used_;
        next_timeout_ = now + cfg_.rto_epochs;
        return last_sent_flight_;
    }

private:
    // --- shared helpers -------------------------------------------------

    static Bytes kx_signed_blob(Role sender, std::span<const std::uint8_t> client_nonce,
                                std::span<const std::uint8_t> server_nonce,
                                std::span<const std::uint8_t> ephemeral) {
        Bytes blob;
        blob.push_back(sender == Role::initiator ? 0x49 : 0x52);
        append(blob, client_nonce);
        append(blob, server_nonce);
        append(blob, ephemeral);
        return blob;
    }

    void append_transcript(const HandshakeMessage& msg) {
        transcript_.update(encode_message(*cfg_.curve, msg));
    }

    std::array<std::uint8_t, 32> transcript_hash() const { return transcript_.digest(); }

    void send_flight(int number, const std::vector<HandshakeMessage>& flight,
                     std::uint64_t now) {
        last_sent_flight_ = flight;
        retransmits_used_ = 0;
        next_timeout_ = now + cfg_.rto_epochs;
        std::size_t size = encode_flight(*cfg_.curve, flight).size();
        for (auto& rec : flights_) {
            if (rec.flight == number) {
                rec.bytes = size;
                return;
            }
        }
        flights_.push_back({number, size});
    }

    std::vector<HandshakeMessage> fail(AbortReason reason) {
        phase_ = Phase::failed;
        failure_reason_ = reason;
        keys_.reset();
        pending_keys_.reset();
        next_timeout_.reset();
        return {HandshakeMessage{AbortMsg{reason}}};
    }

    StepResult failed_step(AbortReason reason) { return {fail(reason), std::nullopt}; }

    bool verify_peer_certificate(const identity::Certificate& cert) {
        if (!cert.verify_with(*cfg_.curve, cfg_.root_public)) return false;
        if (cfg_.expected_peer_id && cert.subject_id != *cfg_.expected_peer_id) return false;
        if (!cfg_.status_lookup) return false;
        return cfg_.status_lookup(cert.subject_id) == identity::CertStatus::active;
    }

    // --- per-message dispatch -------------------------------------------

    StepResult dispatch(const ClientHello& m, std::uint64_t now) {
        if (role_ != Role::responder) return failed_step(AbortReason::wrong_phase);
        if (!m.cookie) {
            // Flight 1: answer statelessly with a cookie challenge.
            if (phase_ != Phase::idle) return failed_step(AbortReason::wrong_phase);
            HelloVerifyRequest hvr;
            hvr.cookie = compute_cookie(cfg_.cookie_secret, cfg_.peer_address, m.client_nonce);
            std::vector<HandshakeMessage> flight{HandshakeMessage{hvr}};
            // Record the flight size, but commit no handshake state.
            std::size_t size = encode_flight(*cfg_.curve, flight).size();
            bool present = false;
            for (auto& rec : flights_)
                if (rec.flight == 2) present = true;
            if (!present) flights_.push_back({2, size});
            last_sent_flight_ = flight;
            return {flight, std::nullopt};
        }
        // Flight 3: cookie must match before anything is committed.
        if (phase_ != Phase::idle) return failed_step(AbortReason::wrong_phase);
        Cookie expected = compute_cookie(cfg_.cookie_secret, cfg_.peer_address, m.client_nonce);
        if (!ct_equal(*m.cookie, expected)) return failed_step(AbortReason::bad_cookie);

        client_nonce_ = m.client_nonce;
        // Reconstruct the cookie exchange into the transcript: the
        // original hello is the same message without the cookie.
        ClientHello first;
        first.client_nonce = m.client_nonce;
        append_transcript(HandshakeMessage{first});
        append_transcript(HandshakeMessage{HelloVerifyRequest{expected}});
        append_transcript(HandshakeMessage{m});

        rng_.fill(server_nonce_);
        ephemeral_ = ecc::keygen(*cfg_.curve, rng_);

        ServerHello sh;
        sh.server_nonce = server_nonce_;
        HandshakeMessage sh_msg{sh};
        append_transcript(sh_msg);

        HandshakeMessage cert_msg{CertificateMsg{cfg_.own_certificate}};
        append_transcript(cert_msg);

        KeyExchange kx;
        kx.ephemeral_public = ecc::encode_point(*cfg_.curve, ephemeral_.q);
        kx.signature = ecc::sign(
            *cfg_.curve, cfg_.static_key,
            kx_signed_blob(Role::responder, client_nonce_, server_nonce_, kx.ephemeral_public));
        HandshakeMessage kx_msg{kx};
        append_transcript(kx_msg);

        std::vector<HandshakeMessage> flight{sh_msg, cert_msg, kx_msg};
        send_flight(4, flight, now);
        phase_ = Phase::params_sent;
        return {flight, std::nullopt};
    }

    StepResult dispatch(const HelloVerifyRequest& m, std::uint64_t now) {
        if (role_ != Role::initiator || phase_ != Phase::awaiting_cookie)
            return failed_step(AbortReason::wrong_phase);
        // Transcript starts now: original hello, the challenge, the echo.
        ClientHello first;
        first.client_nonce = client_nonce_;
        append_transcript(HandshakeMessage{first});
        append_transcript(HandshakeMessage{m});
        ClientHello echo;
        echo.client_nonce = client_nonce_;
        echo.cookie = m.cookie;
        HandshakeMessage echo_msg{echo};
        append_transcript(echo_msg);
        std::vector<HandshakeMessage> flight{echo_msg};
        send_flight(3, flight, now);
        phase_ = Phase::hello_sent;
        return {flight, std::nullopt};
    }

    StepResult dispatch(const ServerHello& m, std::uint64_t) {
        if (role_ != Role::initiator || phase_ != Phase::hello_sent || peer_flight_progress_ != 0)
            return failed_step(AbortReason::wrong_phase);
        server_nonce_ = m.server_nonce;
        append_transcript(HandshakeMessage{m});
        peer_flight_progress_ = 1;
        return {};
    }

    StepResult dispatch(const CertificateMsg& m, std::uint64_t) {
        bool expected = (role_ == Role::initiator && phase_ == Phase::hello_sent &&
                         peer_flight_progress_ == 1) ||
                        (role_ == Role::responder && phase_ == Phase::params_sent &&
                         peer_flight_progress_ == 0);
        if (!expected) return failed_step(AbortReason::wrong_phase);
        if (!verify_peer_certificate(m.certificate))
            return failed_step(AbortReason::bad_certificate);
        peer_cert_ = m.certificate;
        append_transcript(HandshakeMessage{m});
        ++peer_flight_progress_;
        return {};
    }

    StepResult dispatch(const KeyExchange& m, std::uint64_t now) {
        bool initiator_turn = role_ == Role::initiator && phase_ == Phase::hello_sent &&
                              peer_flight_progress_ == 2;
        bool responder_turn = role_ == Role::responder && phase_ == Phase::params_sent &&
                              peer_flight_progress_ == 1;
        if (!initiator_turn && !responder_turn) return failed_step(AbortReason::wrong_phase);

        ecc::CurvePoint peer_eph;
        try {
            peer_eph = ecc::decode_point(*cfg_.curve, m.ephemeral_public);
        } catch (const ecc::MalformedEncoding&) {
            return failed_step(AbortReason::malformed_message);
        } catch (const ecc::InvalidPoint&) {
            return failed_step(AbortReason::malformed_message);
        }
        if (peer_eph.is_identity) return failed_step(AbortReason::malformed_message);

        Role sender = role_ == Role::initiator ? Role::responder : Role::initiator;
        Bytes blob = kx_signed_blob(sender, client_nonce_, server_nonce_, m.ephemeral_public);
        if (!ecc::verify(*cfg_.curve, peer_cert_->subject_public_key, blob, m.signature))
            return failed_step(AbortReason::bad_signature);
        append_transcript(HandshakeMessage{m});

        if (initiator_turn) {
            // Full server flight received: derive keys and send flight 5.
            ephemeral_ = ecc::keygen(*cfg_.curve, rng_);
            Bytes secret = ecc::ecdh(*cfg_.curve, ephemeral_, peer_eph);
            pending_keys_ = derive_session_keys(secret, client_nonce_, server_nonce_);

            HandshakeMessage cert_msg{CertificateMsg{cfg_.own_certificate}};
            append_transcript(cert_msg);

            KeyExchange kx;
            kx.ephemeral_public = ecc::encode_point(*cfg_.curve, ephemeral_.q);
            kx.signature =
                ecc::sign(*cfg_.curve, cfg_.static_key,
                          kx_signed_blob(Role::initiator, client_nonce_, server_nonce_,
                                         kx.ephemeral_public));
            HandshakeMessage kx_msg{kx};
            append_transcript(kx_msg);

            CertificateVerify cv;
            cv.signature = ecc::sign(*cfg_.curve, cfg_.static_key, transcript_hash());
            HandshakeMessage cv_msg{cv};
            append_transcript(cv_msg);

            Finished fin;
            fin.verify_mac = hmac_sha256(pending_keys_->initiator_mac_key, transcript_hash());
            HandshakeMessage fin_msg{fin};
            append_transcript(fin_msg);

            std::vector<HandshakeMessage> flight{cert_msg, kx_msg, cv_msg, fin_msg};
            send_flight(5, flight, now);
            phase_ = Phase::keys_sent;
            return {flight, std::nullopt};
        }

        // Responder: derive keys, keep collecting flight 5.
        Bytes secret = ecc::ecdh(*cfg_.curve, ephemeral_, peer_eph);
        pending_keys_ = derive_session_keys(secret, client_nonce_, server_nonce_);
        peer_flight_progress_ = 2;
        return {};
    }

    StepResult dispatch(const CertificateVerify& m, std::uint64_t) {
        if (role_ != Role::responder || phase_ != Phase::params_sent ||
            peer_flight_progress_ != 2)
            return failed_step(AbortReason::wrong_phase);
        if (!ecc::verify(*cfg_.curve, peer_cert_->subject_public_key, transcript_hash(),
                         m.signature))
            return failed_step(AbortReason::bad_signature);
        append_transcript(HandshakeMessage{m});
        phase_ = Phase::finished_wait;
        return {};
    }

    StepResult dispatch(const Finished& m, std::uint64_t now) {
        if (role_ == Role::responder) {
            if (phase_ != Phase::finished_wait) return failed_step(AbortReason::wrong_phase);
            Mac expected = hmac_sha256(pending_keys_->initiator_mac_key, transcript_hash());
            if (!ct_equal(m.verify_mac, expected))
                return failed_step(AbortReason::bad_finished);
            append_transcript(HandshakeMessage{m});

            Finished reply;
            reply.verify_mac = hmac_sha256(pending_keys_->responder_mac_key, transcript_hash());
            HandshakeMessage reply_msg{reply};
            append_transcript(reply_msg);
            std::vector<HandshakeMessage> flight{reply_msg};
            send_flight(6, flight, now);
            phase_ = Phase::established;
            keys_ = pending_keys_;
            next_timeout_.reset();
            return {flight, keys_};
        }
        if (phase_ != Phase::keys_sent) return failed_step(AbortReason::wrong_phase);
        Mac expected = hmac_sha256(pending_keys_->responder_mac_key, transcript_hash());
        if (!ct_equal(m.verify_mac, expected)) return failed_step(AbortReason::bad_finished);
        append_transcript(HandshakeMessage{m});
        phase_ = Phase::established;
        keys_ = pending_keys_;
        next_timeout_.reset();
        return {{}, keys_};
    }

    StepResult dispatch(const AbortMsg& m, std::uint64_t) {
        phase_ = Phase::failed;
        failure_reason_ = m.reason;
        keys_.reset();
        pending_keys_.reset();
        next_timeout_.reset();
        return {};
    }

    Role role_;
    HandshakeConfig cfg_;
    DetRng rng_;
    Phase phase_ = Phase::idle;
    Sha256 transcript_;
    Nonce client_nonce_{};
    Nonce server_nonce_{};
    ecc::KeyPair ephemeral_;
    std::optional<identity::Certificate> peer_cert_;
    std::optional<SessionKeys> pending_keys_;
    std::optional<SessionKeys> keys_;
    std::optional<AbortReason> failure_reason_;
    int peer_flight_progress_ = 0;
    std::vector<HandshakeMessage> last_sent_flight_;
    std::set<std::array<std::uint8_t, 32>> seen_datagrams_;
    std::array<std::uint8_t, 32> last_peer_flight_{};
    std::vector<FlightRecord> flights_;
    std::optional<std::uint64_t> next_timeout_;
    int retransmits_used_ = 0;
};

}  // namespace iotsec::handshake
