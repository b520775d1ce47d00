#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "iotsec/bytes.hpp"
#include "iotsec/ecc.hpp"
#include "iotsec/hash.hpp"
#include "iotsec/rng.hpp"

namespace iotsec::identity {

struct DuplicateUsername : std::runtime_error {
    explicit DuplicateUsername(const std::string& w) : std::runtime_error(w) {}
};
struct DuplicateId : std::runtime_error {
    explicit DuplicateId(const std::string& w) : std::runtime_error(w) {}
};
struct DuplicateAddress : std::runtime_error {
    explicit DuplicateAddress(const std::string& w) : std::runtime_error(w) {}
};
struct UnknownGateway : std::runtime_error {
    explicit UnknownGateway(const std::string& w) : std::runtime_error(w) {}
};
struct UnknownSubject : std::runtime_error {
    explicit UnknownSubject(const std::string& w) : std::runtime_error(w) {}
};
struct SnapshotError : std::runtime_error {
    explicit SnapshotError(const std::string& w) : std::runtime_error(w) {}
};

/// Six-octet link-layer address. Canonical text form is lowercase
/// colon-separated hex; parse accepts either case.
struct MacAddress {
    std::array<std::uint8_t, 6> octets{};

    static MacAddress parse(std::string_view s) {
        if (s.size() != 17) throw std::invalid_argument("MacAddress: bad length");
        MacAddress m;
        for (int i = 0; i < 6; ++i) {
            int hi = hex_nibble(s[3 * i]);
            int lo = hex_nibble(s[3 * i + 1]);
            if (hi < 0 || lo < 0) throw std::invalid_argument("MacAddress: bad hex");
            if (i < 5 && s[3 * i + 2] != ':')
                throw std::invalid_argument("MacAddress: expected colon");
            m.octets[i] = static_cast<std::uint8_t>((hi << 4) | lo);
        }
        return m;
    }

    std::string format() const {
        static const char* digits = "0123456789abcdef";
        std::string s;
        for (int i = 0; i < 6; ++i) {
            if (i) s.push_back(':');
            s.push_back(digits[octets[i] >> 4]);
            s.push_back(digits[octets[i] & 0xf]);
        }
        return s;
    }

    friend bool operator==(const MacAddress&, const MacAddress&) = default;
};

/// Four-octet private address, dotted-quad text form.
struct Ipv4 {
    std::array<std::uint8_t, 4> octets{};

    static Ipv4 parse(std::string_view s) {
        Ipv4 ip;
        int part = 0;
        long value = -1;
        for (char c : s) {
            if (c == '.') {
                if (value < 0 || part >= 3) throw std::invalid_argument("Ipv4: bad format");
                ip.octets[part++] = static_cast<std::uint8_t>(value);
                value = -1;
            } else if (c >= '0' && c <= '9') {
                value = (value < 0 ? 0 : value) * 10 + (c - '0');
                if (value > 255) throw std::invalid_argument("Ipv4: octet overflow");
            } else {
                throw std::invalid_argument("Ipv4: bad character");
            }
        }
        if (part != 3 || value < 0) throw std::invalid_argument("Ipv4: bad format");
        ip.octets[3] = static_cast<std::uint8_t>(value);
        return ip;
    }

    std::string format() const {
        return std::to_string(octets[0]) + "." + std::to_string(octets[1]) + "." +
               std::to_string(octets[2]) + "." + std::to_string(octets[3]);
    }

    friend bool operator==(const Ipv4&, const Ipv4&) = default;
    friend auto operator<=>(const Ipv4&, const Ipv4&) = default;
};

enum class SubjectKind : std::uint8_t { user = 0, gateway = 1, iot_device = 2, server = 3 };

inline std::string_view subject_kind_name(SubjectKind k) {
    switch (k) {
        case SubjectKind::user: return "user";
        case SubjectKind::gateway: return "gateway";
        case SubjectKind::iot_device: return "iot_device";
        case SubjectKind::server: return "server";
    }
    return "?";
}

enum class RecordStatus : std::uint8_t { active = 0, revoked = 1 };
enum class CertStatus : std::uint8_t { active = 0, revoked = 1, unknown = 2 };

/// Identity assertion signed by the registry's root key.
struct Certificate {
    std::string subject_id;
    SubjectKind subject_kind = SubjectKind::user;
    ecc::CurvePoint subject_public_key;
    std::uint64_t issued_at = 0;
    ecc::Signature signature;

    /// Canonical to-be-signed encoding:
    /// u16 id_len || id || u8 kind || u8 point_len || point || u64 issued_at.
    Bytes tbs_encoding(const ecc::CurveParams& curve) const {
        Bytes out;
        if (subject_id.size() > 0xffff)
            throw std::invalid_argument("Certificate: subject id too long");
        put_u16_be(out, static_cast<std::uint16_t>(subject_id.size()));
        for (char c : subject_id) out.push_back(static_cast<std::uint8_t>(c));
        out.push_back(static_cast<std::uint8_t>(subject_kind));
        Bytes pt = ecc::encode_point(curve, subject_public_key);
        out.push_back(static_cast<std::uint8_t>(pt.size()));
        append(out, pt);
        put_u64_be(out, issued_at);
        return out;
    }

    Bytes encode(const ecc::CurveParams& curve) const {
        Bytes out = tbs_encoding(curve);
        append(out, ecc::encode_signature(curve, signature));
        return out;
    }

    static Certificate decode(const ecc::CurveParams& curve, std::span<const std::uint8_t> in) {
        std::size_t off = 0;
        auto need = [&](std::size_t n) {
            if (off + n > in.size())
                throw ecc::MalformedEncoding("Certificate: truncated encoding");
        };
        Certificate cert;
        need(2);
        std::size_t id_len = get_u16_be(in.data());
        off = 2;
        need(id_len + 1);
        cert.subject_id.assign(reinterpret_cast<const char*>(in.data() + off), id_len);
        off += id_len;
        std::uint8_t kind = in[off++];
        if (kind > 3) throw ecc::MalformedEncoding("Certificate: bad subject kind");
        cert.subject_kind = static_cast<SubjectKind>(kind);
        need(1);
        std::size_t pt_len = in[off++];
        need(pt_len);
        cert.subject_public_key = ecc::decode_point(curve, in.subspan(off, pt_len));
        off += pt_len;
        need(8);
        cert.issued_at = get_u64_be(in.data() + off);
        off += 8;
        cert.signature = ecc::decode_signature(curve, in, off);
        if (off != in.size())
            throw ecc::MalformedEncoding("Certificate: trailing bytes");
        return cert;
    }

    bool verify_with(const ecc::CurveParams& curve, const ecc::CurvePoint& root_public) const {
        try {
            return ecc::verify(curve, root_public, tbs_encoding(curve), signature);
        } catch (const ecc::InvalidPoint&) {
            return false;
        }
    }
};

struct UserRecord {
    std::string username;
    Bytes password_salt;                         // 16 bytes
    std::array<std::uint8_t, 32> password_hash;  // sha256(salt || password)
    MacAddress mac;
    ecc::CurvePoint public_key;
    Certificate certificate;
    RecordStatus status = RecordStatus::active;
};

struct DeviceRecord {
    std::string device_id;
    SubjectKind kind = SubjectKind::iot_device;  // gateway or iot_device
    std::string gateway_id;                      // owning gateway; empty for gateways
    Ipv4 private_address;
    ecc::CurvePoint public_key;
    Certificate certificate;
    RecordStatus status = RecordStatus::active;
};

enum class AuthDecision : std::uint8_t { accepted, bad_credentials, mac_mismatch, revoked };

inline std::string_view auth_decision_name(AuthDecision d) {
    switch (d) {
        case AuthDecision::accepted: return "accepted";
        case AuthDecision::bad_credentials: return "bad_credentials";
        case AuthDecision::mac_mismatch: return "mac_mismatch";
        case AuthDecision::revoked: return "revoked";
    }
    return "?";
}

/// The VPN server's registration database: users and devices with
/// their credentials and issued certificates.
///
/// Passwords are stored only as sha256(salt || password). MAC addresses
/// are self-reported, spoofable fields; the MAC check is a fail-safe
/// layer on top of credentials, not a cryptographic binding.
///
/// Single-owner mutation: the owning server serializes all writes.
/// Issued-at values are monotonic integers, not wall-clock time.
class Registry {
public:
    Registry(const ecc::CurveParams& curve, DetRng rng)
        : curve_(&curve), rng_(rng), root_(ecc::keygen(*curve_, rng_)) {}

    Registry(const ecc::CurveParams& curve, ecc::KeyPair root, DetRng rng)
        : curve_(&curve), rng_(rng), root_(std::move(root)) {}

    const ecc::CurveParams& curve() const { return *curve_; }
    const ecc::CurvePoint& root_public() const { return root_.q; }

    static std::array<std::uint8_t, 32> hash_password(std::span<const std::uint8_t> salt,
                                                      std::string_view password) {
        Sha256 h;
        h.update(salt);
        h.update(password);
        return h.finalize();
    }

    const UserRecord& register_user(const std::string& username, std::string_view password,
                                    const MacAddress& mac, const ecc::CurvePoint& public_key) {
        check_subject_name(username);
        if (subject_exists(username)) throw DuplicateUsername("user exists: " + username);
        if (!ecc::validate_point(*curve_, public_key) || public_key.is_identity)
            throw ecc::InvalidPoint("register_user: bad public key");
        UserRecord rec;
        rec.username = username;
        rec.password_salt = rng_.bytes(16);
        rec.password_hash = hash_password(rec.password_salt, password);
        rec.mac = mac;
        rec.public_key = public_key;
        rec.certificate = issue_certificate(username, SubjectKind::user, public_key);
        auto [it, ok] = users_.emplace(username, std::move(rec));
        (void)ok;
        return it->second;
    }

    /// Phase-1 login decision. Precedence: unknown user or wrong
    /// password give bad_credentials, then revocation, then the MAC
    /// fail-safe; accepted only when every factor holds.
    AuthDecision authenticate_credentials(std::string_view username, std::string_view password,
                                          const MacAddress& presented_mac) const {
        auto it = users_.find(std::string(username));
        if (it == users_.end()) return AuthDecision::bad_credentials;
        const UserRecord& rec = it->second;
        if (hash_password(rec.password_salt, password) != rec.password_hash)
            return AuthDecision::bad_credentials;
        if (rec.status == RecordStatus::revoked) return AuthDecision::revoked;
        if (!(presented_mac == rec.mac)) return AuthDecision::mac_mismatch;
        return AuthDecision::accepted;
    }

    const DeviceRecord& register_device(const std::string& device_id, SubjectKind kind,
                                        const std::string& gateway_id,
                                        const Ipv4& private_address,
                                        const ecc::CurvePoint& public_key) {
        check_subject_name(device_id);
        if (kind != SubjectKind::gateway && kind != SubjectKind::iot_device)
            throw std::invalid_argument("register_device: kind must be gateway or iot_device");
        if (subject_exists(device_id)) throw DuplicateId("device exists: " + device_id);
        if (kind == SubjectKind::iot_device) {
            auto gw = devices_.find(gateway_id);
            if (gw == devices_.end() || gw->second.kind != SubjectKind::gateway)
                throw UnknownGateway("no such gateway: " + gateway_id);
        } else if (!gateway_id.empty()) {
            throw std::invalid_argument("register_device: gateway records take no gateway_id");
        }
        for (const auto& [id, dev] : devices_) {
            if (dev.private_address == private_address)
                throw DuplicateAddress("address in use: " + private_address.format());
        }
        if (!ecc::validate_point(*curve_, public_key) || public_key.is_identity)
            throw ecc::InvalidPoint("register_device: bad public key");
        DeviceRecord rec;
        rec.device_id = device_id;
        rec.kind = kind;
        rec.gateway_id = kind == SubjectKind::iot_device ? gateway_id : std::string{};
        rec.private_address = private_address;
        rec.public_key = public_key;
        rec.certificate = issue_certificate(device_id, kind, public_key);
        auto [it, ok] = devices_.emplace(device_id, std::move(rec));
        (void)ok;
        return it->second;
    }

    /// Issue a certificate for a subject that is not a stored record
    /// (the server's own handshake identity).
    Certificate issue_server_certificate(const std::string& subject_id,
                                         const ecc::CurvePoint& public_key) {
        check_subject_name(subject_id);
        if (subject_exists(subject_id)) throw DuplicateId("subject exists: " + subject_id);
        Certificate cert = issue_certificate(subject_id, SubjectKind::server, public_key);
        extra_subjects_.emplace(subject_id, RecordStatus::active);
        return cert;
    }

    void revoke(const std::string& subject_id) {
        if (auto it = users_.find(subject_id); it != users_.end()) {
            it->second.status = RecordStatus::revoked;
            return;
        }
        if (auto it = devices_.find(subject_id); it != devices_.end()) {
            it->second.status = RecordStatus::revoked;
            return;
        }
        if (auto it = extra_subjects_.find(subject_id); it != extra_subjects_.end()) {
            it->second = RecordStatus::revoked;
            return;
        }
        throw UnknownSubject("no such subject: " + subject_id);
    }

    CertStatus lookup_certificate_status(std::string_view subject_id) const {
        std::string key(subject_id);
        if (auto it = users_.find(key); it != users_.end())
            return it->second.status == RecordStatus::active ? CertStatus::active
                                                             : CertStatus::revoked;
        if (auto it = devices_.find(key); it != devices_.end())
            return it->second.status == RecordStatus::active ? CertStatus::active
                                                             : CertStatus::revoked;
        if (auto it = extra_subjects_.find(key); it != extra_subjects_.end())
            return it->second == RecordStatus::active ? CertStatus::active : CertStatus::revoked;
        return CertStatus::unknown;
    }

    const UserRecord* find_user(std::string_view username) const {
        auto it = users_.find(std::string(username));
        return it == users_.end() ? nullptr : &it->second;
    }

    const DeviceRecord* find_device(std::string_view device_id) const {
        auto it = devices_.find(std::string(device_id));
        return it == devices_.end() ? nullptr : &it->second;
    }

    const std::map<std::string, UserRecord>& users() const { return users_; }
    const std::map<std::string, DeviceRecord>& devices() const { return devices_; }

    // --- Snapshot format: line-oriented UTF-8, tab-separated fields,
    // binary fields hex-encoded. First line is the version banner.
    static constexpr std::string_view kSnapshotBanner = "IOTSEC-REGISTRY v1";

    void save(std::ostream& out) const {
        out << kSnapshotBanner << "\n";
        out << "CURVE\t" << curve_->name() << "\n";
        out << "ROOT\t" << root_.d.to_hex() << "\t"
            << to_hex(ecc::encode_point(*curve_, root_.q)) << "\n";
        out << "EPOCH\t" << next_issued_at_ << "\n";
        for (const auto& [id, status] : extra_subjects_)
            out << "SUBJ\t" << id << "\t" << status_name(status) << "\n";
        for (const auto& [name, rec] : users_) {
            out << "USER\t" << name << "\t" << to_hex(rec.password_salt) << "\t"
                << to_hex(rec.password_hash) << "\t" << rec.mac.format() << "\t"
                << to_hex(ecc::encode_point(*curve_, rec.public_key)) << "\t"
                << to_hex(rec.certificate.encode(*curve_)) << "\t" << status_name(rec.status)
                << "\n";
        }
        for (const auto& [id, rec] : devices_) {
            out << "DEV\t" << id << "\t" << subject_kind_name(rec.kind) << "\t"
                << (rec.gateway_id.empty() ? "-" : rec.gateway_id) << "\t"
                << rec.private_address.format() << "\t"
                << to_hex(ecc::encode_point(*curve_, rec.public_key)) << "\t"
                << to_hex(rec.certificate.encode(*curve_)) << "\t" << status_name(rec.status)
                << "\n";
        }
    }

    std::string save_to_string() const {
        std::ostringstream os;
        save(os);
        return os.str();
    }

    static Registry load(std::istream& in, std::uint64_t rng_seed = 0) {
        std::string line;
        if (!std::getline(in, line) || line != kSnapshotBanner)
            throw SnapshotError("unsupported registry snapshot version");
        const ecc::CurveParams* curve = nullptr;
        std::optional<ecc::KeyPair> root;
        std::uint64_t epoch = 0;
        std::vector<std::vector<std::string>> subj, user_rows, dev_rows;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto fields = split_tabs(line);
            const std::string& tag = fields[0];
            if (tag == "CURVE" && fields.size() == 2) {
                curve = &ecc::curve_by_name(fields[1]);
            } else if (tag == "ROOT" && fields.size() == 3) {
                if (!curve) throw SnapshotError("ROOT before CURVE");
                ecc::KeyPair kp;
                kp.d = BigUint::from_hex(fields[1]);
                kp.q = ecc::decode_point(*curve, iotsec::from_hex(fields[2]));
                root = kp;
            } else if (tag == "EPOCH" && fields.size() == 2) {
                epoch = std::stoull(fields[1]);
            } else if (tag == "SUBJ" && fields.size() == 3) {
                subj.push_back(fields);
            } else if (tag == "USER" && fields.size() == 8) {
                user_rows.push_back(fields);
            } else if (tag == "DEV" && fields.size() == 8) {
                dev_rows.push_back(fields);
            } else {
                throw SnapshotError("unrecognized snapshot line: " + line);
            }
        }
        if (!curve || !root) throw SnapshotError("snapshot missing CURVE or ROOT");
        Registry reg(*curve, *root, DetRng(rng_seed));
        reg.next_issued_at_ = epoch;
        for (const auto& f : subj)
            reg.extra_subjects_.emplace(f[1], parse_status(f[2]));
        for (const auto& f : user_rows) {
            UserRecord rec;
            rec.username = f[1];
            rec.password_salt = iotsec::from_hex(f[2]);
            Bytes h = iotsec::from_hex(f[3]);
            if (h.size() != 32) throw SnapshotError("bad password hash length");
            std::copy(h.begin(), h.end(), rec.password_hash.begin());
            rec.mac = MacAddress::parse(f[4]);
            rec.public_key = ecc::decode_point(*curve, iotsec::from_hex(f[5]));
            rec.certificate = Certificate::decode(*curve, iotsec::from_hex(f[6]));
            rec.status = parse_status(f[7]);
            reg.users_.emplace(rec.username, std::move(rec));
        }
        for (const auto& f : dev_rows) {
            DeviceRecord rec;
            rec.device_id = f[1];
            if (f[2] == "gateway")
                rec.kind = SubjectKind::gateway;
            else if (f[2] == "iot_device")
                rec.kind = SubjectKind::iot_device;
            else
                throw SnapshotError("bad device kind: " + f[2]);
            rec.gateway_id = f[3] == "-" ? std::string{} : f[3];
            rec.private_address = Ipv4::parse(f[4]);
            rec.public_key = ecc::decode_point(*curve, iotsec::from_hex(f[5]));
            rec.certificate = Certificate::decode(*curve, iotsec::from_hex(f[6]));
            rec.status = parse_status(f[7]);
            reg.devices_.emplace(rec.device_id, std::move(rec));
        }
        return reg;
    }

private:
    Certificate issue_certificate(const std::string& subject_id, SubjectKind kind,
                                  const ecc::CurvePoint& public_key) {
        Certificate cert;
        cert.subject_id = subject_id;
        cert.subject_kind = kind;
        cert.subject_public_key = public_key;
        cert.issued_at = next_issued_at_++;
        cert.signature = ecc::sign(*curve_, root_, cert.tbs_encoding(*curve_));
        return cert;
    }

    bool subject_exists(const std::string& id) const {
        return users_.count(id) || devices_.count(id) || extra_subjects_.count(id);
    }

    static void check_subject_name(const std::string& id) {
        if (id.empty()) throw std::invalid_argument("subject id must be non-empty");
        for (char c : id)
            if (c == '\t' || c == '\n' || c == '\r')
                throw std::invalid_argument("subject id contains control characters");
    }

    static std::string_view status_name(RecordStatus s) {
        return s == RecordStatus::active ? "active" : "revoked";
    }

    static RecordStatus parse_status(const std::string& s) {
        if (s == "active") return RecordStatus::active;
        if (s == "revoked") return RecordStatus::revoked;
        throw SnapshotError("bad status: " + s);
    }

    static std::vector<std::string> split_tabs(const std::string& line) {
        std::vector<std::string> out;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == '\t') {
                out.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        return out;
    }

    const ecc::CurveParams* curve_;
    DetRng rng_;
    ecc::KeyPair root_;
    std::uint64_t next_issued_at_ = 1;
    std::map<std::string, UserRecord> users_;
    std::map<std::string, DeviceRecord> devices_;
    std::map<std::string, RecordStatus> extra_subjects_;
};

}  // namespace iotsec::identity
