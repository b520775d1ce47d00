#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "iotsec/registry.hpp"

using namespace iotsec;
using namespace iotsec::identity;

namespace {

const ecc::CurveParams& curve() { return ecc::curve_by_name("T17"); }

ecc::CurvePoint fresh_key(std::uint64_t seed) {
    DetRng rng(seed);
    return ecc::keygen(curve(), rng).q;
}

Registry fresh_registry(std::uint64_t seed = 1) { return Registry(curve(), DetRng(seed)); }

const MacAddress kMacA = MacAddress::parse("aa:bb:cc:dd:ee:ff");
const MacAddress kMacB = MacAddress::parse("11:22:33:44:55:66");

}  // namespace

TEST_CASE("mac address parse/format round trip") {
    CHECK(kMacA.format() == "aa:bb:cc:dd:ee:ff");
    CHECK(MacAddress::parse("AA:BB:CC:DD:EE:FF") == kMacA);  // case-insensitive parse
    CHECK(MacAddress::parse(kMacA.format()) == kMacA);
    CHECK_THROWS_AS(MacAddress::parse("aa:bb:cc:dd:ee"), std::invalid_argument);
    CHECK_THROWS_AS(MacAddress::parse("aa-bb-cc-dd-ee-ff"), std::invalid_argument);
    CHECK_THROWS_AS(MacAddress::parse("zz:bb:cc:dd:ee:ff"), std::invalid_argument);
}

TEST_CASE("ipv4 parse/format") {
    CHECK(Ipv4::parse("10.0.1.2").format() == "10.0.1.2");
    CHECK(Ipv4::parse("255.255.255.255").octets[3] == 255);
    CHECK_THROWS_AS(Ipv4::parse("10.0.1"), std::invalid_argument);
    CHECK_THROWS_AS(Ipv4::parse("10.0.1.256"), std::invalid_argument);
    CHECK_THROWS_AS(Ipv4::parse("10..1.2"), std::invalid_argument);
}

TEST_CASE("register user, lookup, duplicates") {
    Registry reg = fresh_registry();
    const UserRecord& rec = reg.register_user("alice", "hunter2", kMacA, fresh_key(10));
    CHECK(rec.mac == kMacA);
    CHECK(rec.status == RecordStatus::active);
    REQUIRE(reg.find_user("alice") != nullptr);
    CHECK(reg.find_user("alice")->mac == kMacA);

    CHECK_THROWS_AS(reg.register_user("alice", "x", kMacB, fresh_key(11)), DuplicateUsername);
    CHECK_THROWS_AS(
        reg.register_user("mallory", "x", kMacB,
                          ecc::CurvePoint::affine(BigUint(5), BigUint(2))),
        ecc::InvalidPoint);
    CHECK_THROWS_AS(reg.register_user("mallory", "x", kMacB, ecc::CurvePoint::identity()),
                    ecc::InvalidPoint);
}

TEST_CASE("issued certificates verify under the root key") {
    Registry reg = fresh_registry();
    const UserRecord& rec = reg.register_user("alice", "pw", kMacA, fresh_key(10));
    CHECK(rec.certificate.verify_with(curve(), reg.root_public()));
    CHECK(rec.certificate.subject_id == "alice");
    CHECK(rec.certificate.subject_kind == SubjectKind::user);

    // Mutating any field breaks verification.
    Certificate c = rec.certificate;
    c.subject_id = "alicia";
    CHECK_FALSE(c.verify_with(curve(), reg.root_public()));
    c = rec.certificate;
    c.subject_kind = SubjectKind::gateway;
    CHECK_FALSE(c.verify_with(curve(), reg.root_public()));
    c = rec.certificate;
    c.issued_at += 1;
    CHECK_FALSE(c.verify_with(curve(), reg.root_public()));
    c = rec.certificate;
    c.subject_public_key = fresh_key(99);
    CHECK_FALSE(c.verify_with(curve(), reg.root_public()));
}

TEST_CASE("certificate encode/decode round trip") {
    Registry reg = fresh_registry();
    const UserRecord& rec = reg.register_user("alice", "pw", kMacA, fresh_key(10));
    Bytes enc = rec.certificate.encode(curve());
    Certificate dec = Certificate::decode(curve(), enc);
    CHECK(dec.encode(curve()) == enc);
    CHECK(dec.verify_with(curve(), reg.root_public()));

    Bytes truncated(enc.begin(), enc.end() - 1);
    CHECK_THROWS_AS(Certificate::decode(curve(), truncated), ecc::MalformedEncoding);
    Bytes trailing = enc;
    trailing.push_back(0);
    CHECK_THROWS_AS(Certificate::decode(curve(), trailing), ecc::MalformedEncoding);
}

TEST_CASE("authentication decision covers the full truth table") {
    Registry reg = fresh_registry();
    reg.register_user("alice", "hunter2", kMacA, fresh_key(10));

    // All three factors hold.
    CHECK(reg.authenticate_credentials("alice", "hunter2", kMacA) == AuthDecision::accepted);
    // Correct password, different MAC: the paper's fail-safe case.
    CHECK(reg.authenticate_credentials("alice", "hunter2", kMacB) ==
          AuthDecision::mac_mismatch);
    // Wrong password, registered MAC.
    CHECK(reg.authenticate_credentials("alice", "wrong", kMacA) ==
          AuthDecision::bad_credentials);
    // Wrong password and wrong MAC: credentials checked first.
    CHECK(reg.authenticate_credentials("alice", "wrong", kMacB) ==
          AuthDecision::bad_credentials);
    // Unknown user, any password/MAC.
    CHECK(reg.authenticate_credentials("bob", "hunter2", kMacA) ==
          AuthDecision::bad_credentials);
    CHECK(reg.authenticate_credentials("bob", "wrong", kMacB) ==
          AuthDecision::bad_credentials);

    reg.revoke("alice");
    CHECK(reg.authenticate_credentials("alice", "hunter2", kMacA) == AuthDecision::revoked);
    CHECK(reg.authenticate_credentials("alice", "wrong", kMacA) ==
          AuthDecision::bad_credentials);
}

TEST_CASE("register devices with gateway constraints") {
    Registry reg = fresh_registry();
    reg.register_device("gw1", SubjectKind::gateway, "", Ipv4::parse("10.0.1.1"),
                        fresh_key(20));
    const DeviceRecord& lamp = reg.register_device(
        "lamp1", SubjectKind::iot_device, "gw1", Ipv4::parse("10.0.1.2"), fresh_key(21));
    CHECK(lamp.gateway_id == "gw1");
    CHECK(lamp.certificate.verify_with(curve(), reg.root_public()));

    CHECK_THROWS_AS(reg.register_device("lamp2", SubjectKind::iot_device, "nope",
                                        Ipv4::parse("10.0.1.3"), fresh_key(22)),
                    UnknownGateway);
    // A device cannot hang off another plain device.
    CHECK_THROWS_AS(reg.register_device("lamp3", SubjectKind::iot_device, "lamp1",
                                        Ipv4::parse("10.0.1.4"), fresh_key(23)),
                    UnknownGateway);
    CHECK_THROWS_AS(reg.register_device("lamp1", SubjectKind::iot_device, "gw1",
                                        Ipv4::parse("10.0.1.5"), fresh_key(24)),
                    DuplicateId);
    CHECK_THROWS_AS(reg.register_device("lamp4", SubjectKind::iot_device, "gw1",
                                        Ipv4::parse("10.0.1.2"), fresh_key(25)),
                    DuplicateAddress);
    CHECK_THROWS_AS(reg.register_device("srv", SubjectKind::server, "",
                                        Ipv4::parse("10.0.1.6"), fresh_key(26)),
                    std::invalid_argument);
}

TEST_CASE("revocation and status lookup") {
    Registry reg = fresh_registry();
    reg.register_user("alice", "pw", kMacA, fresh_key(10));
    reg.register_device("gw1", SubjectKind::gateway, "", Ipv4::parse("10.0.1.1"),
                        fresh_key(20));

    CHECK(reg.lookup_certificate_status("alice") == CertStatus::active);
    CHECK(reg.lookup_certificate_status("gw1") == CertStatus::active);
    CHECK(reg.lookup_certificate_status("nobody") == CertStatus::unknown);

    reg.revoke("alice");
    CHECK(reg.lookup_certificate_status("alice") == CertStatus::revoked);
    reg.revoke("gw1");
    CHECK(reg.lookup_certificate_status("gw1") == CertStatus::revoked);
    CHECK_THROWS_AS(reg.revoke("nobody"), UnknownSubject);
}

TEST_CASE("server certificate issuance") {
    Registry reg = fresh_registry();
    Certificate cert = reg.issue_server_certificate("server", fresh_key(30));
    CHECK(cert.subject_kind == SubjectKind::server);
    CHECK(cert.verify_with(curve(), reg.root_public()));
    CHECK(reg.lookup_certificate_status("server") == CertStatus::active);
    CHECK_THROWS_AS(reg.issue_server_certificate("server", fresh_key(31)), DuplicateId);
}

TEST_CASE("snapshot round trip preserves all records") {
    Registry reg = fresh_registry(7);
    reg.register_user("alice", "pw1", kMacA, fresh_key(10));
    reg.register_user("bob", "pw2", kMacB, fresh_key(11));
    reg.register_device("gw1", SubjectKind::gateway, "", Ipv4::parse("10.0.1.1"),
                        fresh_key(20));
    reg.register_device("lamp1", SubjectKind::iot_device, "gw1", Ipv4::parse("10.0.1.2"),
                        fresh_key(21));
    reg.issue_server_certificate("server", fresh_key(30));
    reg.revoke("bob");

    std::string snap = reg.save_to_string();
    std::istringstream in(snap);
    Registry loaded = Registry::load(in);

    CHECK(loaded.save_to_string() == snap);
    CHECK(loaded.authenticate_credentials("alice", "pw1", kMacA) == AuthDecision::accepted);
    CHECK(loaded.lookup_certificate_status("bob") == CertStatus::revoked);
    CHECK(loaded.lookup_certificate_status("server") == CertStatus::active);
    REQUIRE(loaded.find_device("lamp1") != nullptr);
    CHECK(loaded.find_device("lamp1")->gateway_id == "gw1");
    CHECK(loaded.find_user("alice")->certificate.verify_with(curve(), loaded.root_public()));
}

TEST_CASE("snapshot rejects unknown versions and garbage") {
    {
        std::istringstream in("IOTSEC-REGISTRY v2\n");
        CHECK_THROWS_AS(Registry::load(in), SnapshotError);
    }
    {
        std::istringstream in("something else\n");
        CHECK_THROWS_AS(Registry::load(in), SnapshotError);
    }
    {
        std::istringstream in("IOTSEC-REGISTRY v1\nBOGUS\tline\n");
        CHECK_THROWS_AS(Registry::load(in), SnapshotError);
    }
    {
        // Banner alone: no curve/root.
        std::istringstream in("IOTSEC-REGISTRY v1\n");
        CHECK_THROWS_AS(Registry::load(in), SnapshotError);
    }
}

TEST_CASE("serialized state never contains the plaintext password") {
    Registry reg = fresh_registry();
    const std::string password = "extremely-secret-passphrase";
    reg.register_user("alice", password, kMacA, fresh_key(10));
    std::string snap = reg.save_to_string();
    CHECK(snap.find(password) == std::string::npos);
    // Hex form of the raw password bytes must not appear either.
    Bytes pw_bytes(password.begin(), password.end());
    CHECK(snap.find(to_hex(pw_bytes)) == std::string::npos);
}

TEST_CASE("subject ids reject snapshot-breaking characters") {
    Registry reg = fresh_registry();
    CHECK_THROWS_AS(reg.register_user("bad\tname", "pw", kMacA, fresh_key(10)),
                    std::invalid_argument);
    CHECK_THROWS_AS(reg.register_user("", "pw", kMacA, fresh_key(10)), std::invalid_argument);
}
