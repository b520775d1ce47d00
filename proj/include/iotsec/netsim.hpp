#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "iotsec/bytes.hpp"
#include "iotsec/handshake.hpp"
#include "iotsec/registry.hpp"
#include "iotsec/rng.hpp"
#include "iotsec/tunnel.hpp"

namespace iotsec::sim {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
    std::string path;
    ConfigError(std::string p, const std::string& what)
        : std::runtime_error(p + ": " + what), path(std::move(p)) {}
};

struct NoHandshake : std::runtime_error {
    explicit NoHandshake(const std::string& w) : std::runtime_error(w) {}
};

// --- Scenario configuration ------------------------------------------

struct DeviceSpec {
    std::string id;
    std::string behavior = "echo";  // echo | temperature | toggle
};

struct GatewaySpec {
    std::string id;
    std::vector<DeviceSpec> devices;
};

struct UserSpec {
    std::string id;  // doubles as the registered username
    std::string password;
    identity::MacAddress mac;
};

struct LinkParams {
    double loss_rate = 0.0;
    double reorder_rate = 0.0;
    double duplicate_rate = 0.0;
    std::uint64_t delay = 1;
};

struct AdversaryAction {
    std::string action;  // sniff_all | replay_frame | inject_frame |
                         // impersonate_user | self_signed_handshake
    std::uint64_t at_epoch = 0;
    std::size_t index = 0;     // replay_frame
    Bytes bytes;               // inject_frame
    std::string target;        // inject_frame, self_signed_handshake
    std::string username;      // impersonate_user
    std::string password;      // impersonate_user
    identity::MacAddress mac;  // impersonate_user
};

struct TrafficEntry {
    std::string from;
    std::string to;
    Bytes payload;
    std::uint64_t epoch = 0;
};

struct RandomTraffic {
    std::string from;
    std::string to;
    int count = 0;
    std::size_t payload_len = 32;
    std::uint64_t start_epoch = 0;
    std::uint64_t interval = 1;
};

struct ScenarioConfig {
    std::string curve_name = "P256";
    std::vector<GatewaySpec> gateways;
    std::vector<UserSpec> users;
    LinkParams link;
    bool server_mediated = false;
    bool device_terminated = false;  // devices run their own handshakes/tunnels
    std::uint64_t rto = 8;
    std::vector<AdversaryAction> adversary_script;
    std::vector<TrafficEntry> traffic;
    std::optional<RandomTraffic> random_traffic;

    static ScenarioConfig from_json(const json& j);
    static ScenarioConfig load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError(path, "cannot open scenario file");
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError(path, std::string("invalid JSON: ") + e.what());
        }
        return from_json(j);
    }
};

namespace detail {

inline const json& require_field(const json& j, const char* key, const std::string& path) {
    if (!j.contains(key)) throw ConfigError(path + "." + key, "missing required field");
    return j.at(key);
}

inline std::string require_string(const json& j, const char* key, const std::string& path) {
    const json& v = require_field(j, key, path);
    if (!v.is_string()) throw ConfigError(path + "." + key, "expected a string");
    return v.get<std::string>();
}

inline double rate_field(const json& j, const char* key, const std::string& path) {
    if (!j.contains(key)) return 0.0;
    const json& v = j.at(key);
    if (!v.is_number()) throw ConfigError(path + "." + key, "expected a number");
    double r = v.get<double>();
    if (r < 0.0 || r > 1.0) throw ConfigError(path + "." + key, "rate must be in [0,1]");
    return r;
}

}  // namespace detail

inline ScenarioConfig ScenarioConfig::from_json(const json& j) {
    using detail::require_field;
    using detail::require_string;
    if (!j.is_object()) throw ConfigError("$", "scenario must be a JSON object");
    if (!j.contains("schema") || !j.at("schema").is_number_integer() ||
        j.at("schema").get<int>() != 1)
        throw ConfigError("schema", "unsupported or missing schema version (expected 1)");

    ScenarioConfig cfg;
    if (j.contains("curve")) {
        cfg.curve_name = j.at("curve").get<std::string>();
        if (cfg.curve_name != "T17" && cfg.curve_name != "P256")
            throw ConfigError("curve", "unknown curve " + cfg.curve_name);
    }

    const json& topo = require_field(j, "topology", "$");
    std::set<std::string> ids{"server", "adversary"};
    auto claim_id = [&](const std::string& id, const std::string& path) {
        if (id.empty()) throw ConfigError(path, "id must be non-empty");
        if (!ids.insert(id).second) throw ConfigError(path, "duplicate id " + id);
    };

    if (topo.contains("gateways")) {
        const json& gws = topo.at("gateways");
        if (!gws.is_array()) throw ConfigError("topology.gateways", "expected an array");
        for (std::size_t g = 0; g < gws.size(); ++g) {
            std::string gpath = "topology.gateways[" + std::to_string(g) + "]";
            GatewaySpec gw;
            gw.id = require_string(gws[g], "id", gpath);
            claim_id(gw.id, gpath + ".id");
            if (gws[g].contains("devices")) {
                const json& devs = gws[g].at("devices");
                if (!devs.is_array()) throw ConfigError(gpath + ".devices", "expected an array");
                for (std::size_t d = 0; d < devs.size(); ++d) {
                    std::string dpath = gpath + ".devices[" + std::to_string(d) + "]";
                    DeviceSpec dev;
                    dev.id = require_string(devs[d], "id", dpath);
                    claim_id(dev.id, dpath + ".id");
                    if (devs[d].contains("behavior"))
                        dev.behavior = devs[d].at("behavior").get<std::string>();
                    if (dev.behavior != "echo" && dev.behavior != "temperature" &&
                        dev.behavior != "toggle")
                        throw ConfigError(dpath + ".behavior",
                                          "unknown behavior " + dev.behavior);
                    gw.devices.push_back(std::move(dev));
                }
            }
            cfg.gateways.push_back(std::move(gw));
        }
    }
    if (cfg.gateways.size() > 199) throw ConfigError("topology.gateways", "too many gateways");
    for (const auto& gw : cfg.gateways)
        if (gw.devices.size() > 250)
            throw ConfigError("topology.gateways", "too many devices under " + gw.id);

    if (topo.contains("users")) {
        const json& users = topo.at("users");
        if (!users.is_array()) throw ConfigError("topology.users", "expected an array");
        for (std::size_t u = 0; u < users.size(); ++u) {
            std::string upath = "topology.users[" + std::to_string(u) + "]";
            UserSpec spec;
            spec.id = require_string(users[u], "id", upath);
            claim_id(spec.id, upath + ".id");
            spec.password = require_string(users[u], "password", upath);
            try {
                spec.mac = identity::MacAddress::parse(require_string(users[u], "mac", upath));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(upath + ".mac", e.what());
            }
            cfg.users.push_back(std::move(spec));
        }
    }
    if (cfg.users.size() > 250) throw ConfigError("topology.users", "too many users");

    if (j.contains("link")) {
        const json& link = j.at("link");
        cfg.link.loss_rate = detail::rate_field(link, "loss_rate", "link");
        cfg.link.reorder_rate = detail::rate_field(link, "reorder_rate", "link");
        cfg.link.duplicate_rate = detail::rate_field(link, "duplicate_rate", "link");
        if (link.contains("delay")) cfg.link.delay = link.at("delay").get<std::uint64_t>();
        if (cfg.link.delay < 1) throw ConfigError("link.delay", "delay must be >= 1");
    }

    if (j.contains("options")) {
        const json& opt = j.at("options");
        if (opt.contains("server_mediated"))
            cfg.server_mediated = opt.at("server_mediated").get<bool>();
        if (opt.contains("device_terminated_tunnels"))
            cfg.device_terminated = opt.at("device_terminated_tunnels").get<bool>();
        if (opt.contains("rto")) {
            cfg.rto = opt.at("rto").get<std::uint64_t>();
            if (cfg.rto < 1) throw ConfigError("options.rto", "rto must be >= 1");
        }
    }

    auto known_endpoint = [&](const std::string& id) { return ids.count(id) != 0; };

    if (j.contains("adversary")) {
        const json& adv = j.at("adversary");
        if (adv.contains("script")) {
            const json& script = adv.at("script");
            if (!script.is_array()) throw ConfigError("adversary.script", "expected an array");
            for (std::size_t a = 0; a < script.size(); ++a) {
                std::string apath = "adversary.script[" + std::to_string(a) + "]";
                AdversaryAction act;
                act.action = require_string(script[a], "action", apath);
                if (script[a].contains("at_epoch"))
                    act.at_epoch = script[a].at("at_epoch").get<std::uint64_t>();
                if (act.action == "sniff_all") {
                    // no params
                } else if (act.action == "replay_frame") {
                    act.index = require_field(script[a], "index", apath).get<std::size_t>();
                } else if (act.action == "inject_frame") {
                    act.bytes = iotsec::from_hex(require_string(script[a], "bytes_hex", apath));
                    act.target = require_string(script[a], "target", apath);
                    if (!known_endpoint(act.target))
                        throw ConfigError(apath + ".target", "unknown node " + act.target);
                } else if (act.action == "impersonate_user") {
                    act.username = require_string(script[a], "username", apath);
                    act.password = require_string(script[a], "password", apath);
                    act.mac = identity::MacAddress::parse(
                        require_string(script[a], "mac", apath));
                } else if (act.action == "self_signed_handshake") {
                    act.target = require_string(script[a], "target", apath);
                    if (!known_endpoint(act.target))
                        throw ConfigError(apath + ".target", "unknown node " + act.target);
                } else {
                    throw ConfigError(apath + ".action", "unknown action " + act.action);
                }
                cfg.adversary_script.push_back(std::move(act));
            }
        }
    }

    auto parse_traffic_endpoint = [&](const std::string& id, const std::string& path) {
        if (!known_endpoint(id) || id == "adversary")
            throw ConfigError(path, "unknown traffic endpoint " + id);
    };

    if (j.contains("traffic")) {
        const json& traffic = j.at("traffic");
        if (!traffic.is_array()) throw ConfigError("traffic", "expected an array");
        for (std::size_t t = 0; t < traffic.size(); ++t) {
            std::string tpath = "traffic[" + std::to_string(t) + "]";
            TrafficEntry entry;
            entry.from = require_string(traffic[t], "from", tpath);
            entry.to = require_string(traffic[t], "to", tpath);
            parse_traffic_endpoint(entry.from, tpath + ".from");
            parse_traffic_endpoint(entry.to, tpath + ".to");
            if (traffic[t].contains("payload_hex")) {
                entry.payload =
                    iotsec::from_hex(traffic[t].at("payload_hex").get<std::string>());
            } else {
                std::string p = require_string(traffic[t], "payload", tpath);
                entry.payload.assign(p.begin(), p.end());
            }
            if (entry.payload.size() > tunnel::kMaxPayload)
                throw ConfigError(tpath + ".payload", "payload exceeds 1200 bytes");
            if (traffic[t].contains("epoch"))
                entry.epoch = traffic[t].at("epoch").get<std::uint64_t>();
            cfg.traffic.push_back(std::move(entry));
        }
    }

    if (j.contains("random_traffic")) {
        const json& rt = j.at("random_traffic");
        RandomTraffic r;
        r.from = require_string(rt, "from", "random_traffic");
        r.to = require_string(rt, "to", "random_traffic");
        parse_traffic_endpoint(r.from, "random_traffic.from");
        parse_traffic_endpoint(r.to, "random_traffic.to");
        r.count = detail::require_field(rt, "count", "random_traffic").get<int>();
        if (r.count < 0) throw ConfigError("random_traffic.count", "count must be >= 0");
        if (rt.contains("payload_len"))
            r.payload_len = rt.at("payload_len").get<std::size_t>();
        if (r.payload_len > tunnel::kMaxPayload)
            throw ConfigError("random_traffic.payload_len", "payload exceeds 1200 bytes");
        if (rt.contains("start_epoch")) r.start_epoch = rt.at("start_epoch").get<std::uint64_t>();
        if (rt.contains("interval")) r.interval = std::max<std::uint64_t>(1, rt.at("interval").get<std::uint64_t>());
        cfg.random_traffic = r;
    }

    return cfg;
}

// --- Reporting --------------------------------------------------------

struct FrameCounts {
    std::uint64_t sent = 0;       // every tunnel-frame transmission, incl. duplicates/adversarial
    std::uint64_t honest_sent = 0;
    std::uint64_t link_duplicates = 0;
    std::uint64_t adversarial_sent = 0;
    std::uint64_t delivered = 0;
    std::uint64_t rejected = 0;
    std::uint64_t replay_rejected = 0;  // subset of rejected
    std::uint64_t dropped = 0;          // link loss + in flight at termination
};

struct AdversaryReport {
    bool sniffing = false;
    std::uint64_t captured_datagrams = 0;
    std::uint64_t captured_bytes = 0;
    int plaintext_recovered = 0;
    std::vector<std::string> impersonation_decisions;
    int self_signed_attempts = 0;
    int self_signed_established = 0;
    int injected_frames = 0;
    int replayed_frames = 0;
    int adversarial_accepted = 0;
};

struct HandshakeOutcome {
    std::string initiator;
    std::string responder;
    std::string outcome;  // pending | established | failed:<reason>
    std::map<int, std::size_t> flight_bytes;
    std::size_t total_bytes = 0;
};

struct KeysizeRow {
    int security_bits;
    int ecc_key_bits;
    int rsa_key_bits;
    std::size_t ecc_handshake_bytes;
    std::size_t rsa_handshake_bytes;
};

struct HandshakeMeasurement {
    std::map<int, std::size_t> flight_bytes;
    std::size_t total_bytes = 0;
    std::size_t point_field_bytes = 0;      // per point field at the measured curve
    std::size_t signature_field_bytes = 0;  // per signature field
    std::vector<KeysizeRow> scheme_comparison;
};

struct SimReport {
    std::vector<HandshakeOutcome> handshakes;
    FrameCounts frames;
    AdversaryReport adversary;
    bool confidentiality = true;
    bool integrity = true;
    bool authenticity = true;
    bool replay_protection = true;
    bool counts_consistent = true;
    std::vector<std::string> security_violations;
    std::optional<HandshakeMeasurement> measurement;  // first established pair
    std::uint64_t final_epoch = 0;

    ojson to_json() const {
        ojson j;
        ojson hs = ojson::array();
        for (const auto& h : handshakes) {
            ojson row;
            row["initiator"] = h.initiator;
            row["responder"] = h.responder;
            row["outcome"] = h.outcome;
            ojson flights = ojson::object();
            for (const auto& [f, b] : h.flight_bytes) flights["F" + std::to_string(f)] = b;
            row["flight_bytes"] = flights;
            row["total_bytes"] = h.total_bytes;
            hs.push_back(row);
        }
        j["handshakes"] = hs;
        j["frames"] = {{"sent", frames.sent},
                       {"honest_sent", frames.honest_sent},
                       {"link_duplicates", frames.link_duplicates},
                       {"adversarial_sent", frames.adversarial_sent},
                       {"delivered", frames.delivered},
                       {"rejected", frames.rejected},
                       {"replay_rejected", frames.replay_rejected},
                       {"dropped", frames.dropped}};
        j["adversary"] = {{"sniffing", adversary.sniffing},
                          {"captured_datagrams", adversary.captured_datagrams},
                          {"captured_bytes", adversary.captured_bytes},
                          {"plaintext_recovered", adversary.plaintext_recovered},
                          {"impersonation_decisions", adversary.impersonation_decisions},
                          {"self_signed_attempts", adversary.self_signed_attempts},
                          {"self_signed_established", adversary.self_signed_established},
                          {"injected_frames", adversary.injected_frames},
                          {"replayed_frames", adversary.replayed_frames},
                          {"adversarial_accepted", adversary.adversarial_accepted}};
        j["cia"] = {{"confidentiality", confidentiality},
                    {"integrity", integrity},
                    {"authenticity", authenticity},
                    {"replay_protection", replay_protection}};
        j["counts_consistent"] = counts_consistent;
        j["security_violations"] = security_violations;
        if (measurement) {
            ojson m;
            ojson flights = ojson::object();
            for (const auto& [f, b] : measurement->flight_bytes)
                flights["F" + std::to_string(f)] = b;
            m["flight_bytes"] = flights;
            m["total_bytes"] = measurement->total_bytes;
            ojson rows = ojson::array();
            for (const auto& r : measurement->scheme_comparison) {
                rows.push_back({{"security_bits", r.security_bits},
                                {"ecc_key_bits", r.ecc_key_bits},
                                {"rsa_key_bits", r.rsa_key_bits},
                                {"ecc_handshake_bytes", r.ecc_handshake_bytes},
                                {"rsa_handshake_bytes", r.rsa_handshake_bytes}});
            }
            m["scheme_comparison"] = rows;
            j["measurement"] = m;
        }
        j["final_epoch"] = final_epoch;
        return j;
    }
};

// --- The simulator ----------------------------------------------------

/// Deterministic epoch-driven network: one VPN server, gateways with
/// attached devices, remote users, and an optional on-path adversary.
/// Identical (scenario, seed) pairs produce byte-identical event logs
/// and reports.
class SimNetwork {
public:
    SimNetwork(ScenarioConfig cfg, std::uint64_t seed)
        : cfg_(std::move(cfg)),
          seed_(seed),
          curve_(ecc::curve_by_name(cfg_.curve_name)),
          rng_(seed),
          link_rng_(rng_.fork("link")),
          traffic_rng_(rng_.fork("traffic")),
          registry_(curve_, rng_.fork("registry")) {
        build();
    }

    const identity::Registry& registry() const { return registry_; }
    identity::Registry& registry() { return registry_; }
    const std::string& event_log() const { return log_; }
    std::size_t node_count() const {
        return nodes_.size() + (cfg_.device_terminated ? 0 : devices_.size());
    }
    bool has_adversary() const { return adversary_present_; }

    const std::string& device_state(const std::string& device_id) const {
        return devices_.at(device_id).visible_state;
    }

    /// Advance until quiescence or max_epochs; then finalize the report.
    SimReport run(std::uint64_t max_epochs) {
        while (epoch_ <= max_epochs) {
            bool worked = step_epoch();
            if (!worked && queue_.empty() && !pending_work()) break;
            ++epoch_;
        }
        finalize_report();
        return report_;
    }

    /// Execute one scripted adversary action immediately.
    void adversary_step(const AdversaryAction& act) {
        if (!adversary_present_)
            throw std::logic_error("adversary_step: no adversary in this simulation");
        run_adversary_action(act);
    }

    /// Exact wire bytes per flight for a completed handshake between the
    /// pair, plus the per-level RSA counterfactual.
    HandshakeMeasurement measure_handshake_bytes(const std::string& initiator,
                                                 const std::string& responder) const {
        const Node* init = find_node(initiator);
        const Node* resp = find_node(responder);
        if (!init || !resp) throw NoHandshake("no such node pair");
        auto i_it = init->handshakes.find(responder);
        auto r_it = resp->handshakes.find(initiator);
        if (i_it == init->handshakes.end() || r_it == resp->handshakes.end())
            throw NoHandshake("no handshake between " + initiator + " and " + responder);
        if (!i_it->second.established() || !r_it->second.established())
            throw NoHandshake("handshake not established between pair");

        HandshakeMeasurement m;
        for (const auto& rec : i_it->second.flight_records())
            m.flight_bytes[rec.flight] = rec.bytes;
        for (const auto& rec : r_it->second.flight_records())
            m.flight_bytes[rec.flight] = rec.bytes;
        for (const auto& [f, b] : m.flight_bytes) m.total_bytes += b;

        m.point_field_bytes = 1 + 2 * curve_.field_bytes();
        m.signature_field_bytes = 2 + m.point_field_bytes + curve_.scalar_bytes();
        // Field census for the full handshake: one certificate and one
        // KeyExchange per side (a point and a signature each), plus the
        // initiator's CertificateVerify signature.
        constexpr std::size_t kPoints = 4, kSigs = 5;
        std::size_t overhead =
            m.total_bytes - kPoints * m.point_field_bytes - kSigs * m.signature_field_bytes;
        for (int bits : ecc::kSecurityLevelBits) {
            KeysizeRow row;
            row.security_bits = bits;
            row.ecc_key_bits = ecc::key_material_size(ecc::Scheme::ecc, {bits});
            row.rsa_key_bits = ecc::key_material_size(ecc::Scheme::rsa, {bits});
            std::size_t fb = (static_cast<std::size_t>(row.ecc_key_bits) + 7) / 8;
            std::size_t pt = 1 + 2 * fb;
            std::size_t sig = 2 + pt + fb;
            row.ecc_handshake_bytes = overhead + kPoints * pt + kSigs * sig;
            std::size_t kb = (static_cast<std::size_t>(row.rsa_key_bits) + 7) / 8;
            row.rsa_handshake_bytes = overhead + kPoints * kb + kSigs * kb;
            m.scheme_comparison.push_back(row);
        }
        return m;
    }

private:
    struct Datagram {
        std::uint64_t id = 0;
        std::string from;
        std::string to;
        Bytes payload;
        std::uint64_t deliver_at = 0;
        bool adversarial = false;
    };

    struct DeviceState {
        std::string id;
        std::string gateway_id;
        std::string behavior;
        identity::Ipv4 ip;
        bool toggled = false;
        std::string visible_state = "off";
    };

    struct Node {
        std::string id;
        identity::SubjectKind kind = identity::SubjectKind::user;
        identity::Ipv4 ip;
        ecc::KeyPair static_key;
        identity::Certificate certificate;
        Bytes cookie_secret;
        std::map<std::string, handshake::HandshakeState> handshakes;  // by peer node id
        std::map<std::string, tunnel::TunnelSession> tunnels;         // by peer node id
        std::map<std::array<std::uint8_t, 4>, std::string> session_index;
        std::map<std::string, std::vector<tunnel::InnerPacket>> pending;  // by peer node id
        bool is_adversary = false;
        identity::Certificate self_signed_cert;  // adversary only
    };

    // --- build ---------------------------------------------------------

    void build() {
        // Server node with root-signed identity.
        Node server;
        server.id = "server";
        server.kind = identity::SubjectKind::server;
        server.ip = identity::Ipv4::parse("10.0.0.1");
        DetRng key_rng = rng_.fork("key:server");
        server.static_key = ecc::keygen(curve_, key_rng);
        server.certificate = registry_.issue_server_certificate("server", server.static_key.q);
        server.cookie_secret = rng_.fork("cookie:server").bytes(32);
        nodes_.emplace("server", std::move(server));
        route_table_.entries[identity::Ipv4::parse("10.0.0.1")] = "server";
        log_event({{"event", "registered"}, {"subject", "server"}, {"kind", "server"}});

        int gw_index = 0;
        for (const auto& gw_spec : cfg_.gateways) {
            ++gw_index;
            Node gw;
            gw.id = gw_spec.id;
            gw.kind = identity::SubjectKind::gateway;
            gw.ip = make_ip(10, 0, gw_index, 1);
            DetRng krng = rng_.fork("key:" + gw.id);
            gw.static_key = ecc::keygen(curve_, krng);
            gw.certificate = registry_
                                 .register_device(gw.id, identity::SubjectKind::gateway, "",
                                                  gw.ip, gw.static_key.q)
                                 .certificate;
            gw.cookie_secret = rng_.fork("cookie:" + gw.id).bytes(32);
            route_table_.entries[gw.ip] = gw.id;
            log_event({{"event", "registered"}, {"subject", gw.id}, {"kind", "gateway"}});

            int dev_index = 1;
            for (const auto& dev_spec : gw_spec.devices) {
                ++dev_index;
                DeviceState dev;
                dev.id = dev_spec.id;
                dev.gateway_id = gw.id;
                dev.behavior = dev_spec.behavior;
                dev.ip = make_ip(10, 0, gw_index, dev_index);
                DetRng drng = rng_.fork("key:" + dev.id);
                ecc::KeyPair dev_key = ecc::keygen(curve_, drng);
                auto dev_cert = registry_
                                    .register_device(dev.id, identity::SubjectKind::iot_device,
                                                     gw.id, dev.ip, dev_key.q)
                                    .certificate;
                if (cfg_.device_terminated) {
                    // The device itself runs Phase 2 and terminates tunnels.
                    Node dev_node;
                    dev_node.id = dev.id;
                    dev_node.kind = identity::SubjectKind::iot_device;
                    dev_node.ip = dev.ip;
                    dev_node.static_key = dev_key;
                    dev_node.certificate = dev_cert;
                    dev_node.cookie_secret = rng_.fork("cookie:" + dev.id).bytes(32);
                    nodes_.emplace(dev.id, std::move(dev_node));
                    route_table_.entries[dev.ip] = dev.id;
                } else {
                    route_table_.entries[dev.ip] = gw.id;  // gateway terminates
                }
                devices_.emplace(dev.id, dev);
                log_event({{"event", "registered"},
                           {"subject", dev.id},
                           {"kind", "iot_device"},
                           {"gateway", gw.id}});
            }
            nodes_.emplace(gw.id, std::move(gw));
        }

        int user_index = 0;
        for (const auto& user_spec : cfg_.users) {
            ++user_index;
            Node user;
            user.id = user_spec.id;
            user.kind = identity::SubjectKind::user;
            user.ip = make_ip(10, 0, 200, user_index);
            DetRng krng = rng_.fork("key:" + user.id);
            user.static_key = ecc::keygen(curve_, krng);
            user.certificate = registry_
                                   .register_user(user.id, user_spec.password, user_spec.mac,
                                                  user.static_key.q)
                                   .certificate;
            route_table_.entries[user.ip] = user.id;
            nodes_.emplace(user.id, std::move(user));
            log_event({{"event", "registered"}, {"subject", user_spec.id}, {"kind", "user"}});
        }

        route_table_.plan_prefix = identity::Ipv4::parse("10.0.0.0");
        route_table_.plan_prefix_bits = 16;
        route_table_.server_mediated = cfg_.server_mediated;
        route_table_.server_id = "server";

        // The adversary is on the network but never registered.
        adversary_present_ = !cfg_.adversary_script.empty();
        if (adversary_present_) {
            Node adv;
            adv.id = "adversary";
            adv.is_adversary = true;
            adv.ip = identity::Ipv4::parse("10.0.250.1");
            DetRng arng = rng_.fork("key:adversary");
            adv.static_key = ecc::keygen(curve_, arng);
            adv.self_signed_cert.subject_id = "adversary";
            adv.self_signed_cert.subject_kind = identity::SubjectKind::user;
            adv.self_signed_cert.subject_public_key = adv.static_key.q;
            adv.self_signed_cert.issued_at = 1;
            adv.self_signed_cert.signature =
                ecc::sign(curve_, adv.static_key,
                          adv.self_signed_cert.tbs_encoding(curve_));
            adv.certificate = adv.self_signed_cert;
            nodes_.emplace("adversary", std::move(adv));
            log_event({{"event", "adversary_present"}});
        }

        // Expand scheduled traffic.
        for (const auto& t : cfg_.traffic) schedule_traffic(t);
        if (cfg_.random_traffic) {
            const RandomTraffic& rt = *cfg_.random_traffic;
            for (int i = 0; i < rt.count; ++i) {
                TrafficEntry entry;
                entry.from = rt.from;
                entry.to = rt.to;
                entry.payload = traffic_rng_.bytes(rt.payload_len);
                entry.epoch = rt.start_epoch + static_cast<std::uint64_t>(i) * rt.interval;
                schedule_traffic(entry);
            }
        }

        // Server-to-gateway tunnels come up at epoch 0 in mediated mode.
        if (cfg_.server_mediated) {
            for (const auto& gw : cfg_.gateways)
                handshake_wanted_.emplace_back("server", gw.id);
        }
    }

    void schedule_traffic(const TrafficEntry& entry) {
        traffic_by_epoch_[entry.epoch].push_back(entry);
    }

    static identity::Ipv4 make_ip(int a, int b, int c, int d) {
        identity::Ipv4 ip;
        ip.octets = {static_cast<std::uint8_t>(a), static_cast<std::uint8_t>(b),
                     static_cast<std::uint8_t>(c), static_cast<std::uint8_t>(d)};
        return ip;
    }

    const Node* find_node(const std::string& id) const {
        auto it = nodes_.find(id);
        return it == nodes_.end() ? nullptr : &it->second;
    }

    // --- epoch loop ------------------------------------------------------

    bool pending_work() const {
        if (!traffic_by_epoch_.empty()) return true;
        if (next_script_ < cfg_.adversary_script.size()) return true;
        for (const auto& [id, node] : nodes_) {
            for (const auto& [peer, hs] : node.handshakes) {
                if (!hs.established() && !hs.failed() &&
                    hs.phase() != handshake::Phase::idle)
                    return true;
            }
        }
        return false;
    }

    bool step_epoch() {
        bool worked = false;

        // Wanted handshakes (scheduled at build time) start immediately.
        for (const auto& [init, resp] : handshake_wanted_) {
            worked = true;
            ensure_handshake(init, resp);
        }
        handshake_wanted_.clear();

        // Adversary script.
        while (next_script_ < cfg_.adversary_script.size() &&
               cfg_.adversary_script[next_script_].at_epoch <= epoch_) {
            run_adversary_action(cfg_.adversary_script[next_script_]);
            ++next_script_;
            worked = true;
        }

        // Application traffic due this epoch.
        auto t_it = traffic_by_epoch_.begin();
        while (t_it != traffic_by_epoch_.end() && t_it->first <= epoch_) {
            for (const auto& entry : t_it->second) {
                send_application(entry);
                worked = true;
            }
            t_it = traffic_by_epoch_.erase(t_it);
        }

        // Deliver datagrams due this epoch, in deterministic order.
        std::vector<Datagram> due;
        for (auto it = queue_.begin(); it != queue_.end();) {
            if (it->deliver_at <= epoch_) {
                due.push_back(std::move(*it));
                it = queue_.erase(it);
            } else {
                ++it;
            }
        }
        std::sort(due.begin(), due.end(), [](const Datagram& a, const Datagram& b) {
            if (a.deliver_at != b.deliver_at) return a.deliver_at < b.deliver_at;
            return a.id < b.id;
        });
        for (auto& dgram : due) {
            deliver(dgram);
            worked = true;
        }

        // Handshake timeouts.
        for (auto& [id, node] : nodes_) {
            for (auto& [peer, hs] : node.handshakes) {
                auto due_at = hs.next_timeout();
                if (!due_at || *due_at > epoch_) continue;
                auto msgs = hs.on_timeout(epoch_);
                if (msgs.empty()) continue;
                worked = true;
                Bytes wire = handshake::encode_flight(curve_, msgs);
                if (hs.failed()) {
                    log_event({{"event", "handshake_failed"},
                               {"node", id},
                               {"peer", peer},
                               {"reason", std::string(handshake::abort_reason_name(
                                              *hs.failure_reason()))}});
                    record_outcome(id, peer, hs);
                } else {
                    log_event({{"event", "retransmit"}, {"from", id}, {"to", peer}});
                }
                send_datagram(id, peer, wire, false);
            }
        }

        return worked;
    }

    // --- handshake plumbing ----------------------------------------------

    handshake::HandshakeConfig make_handshake_config(const Node& node, const std::string& peer,
                                                     bool expect_peer) {
        handshake::HandshakeConfig cfg;
        cfg.curve = &curve_;
        cfg.root_public = registry_.root_public();
        cfg.status_lookup = [this](std::string_view id) {
            return registry_.lookup_certificate_status(id);
        };
        cfg.own_certificate = node.certificate;
        cfg.static_key = node.static_key;
        if (expect_peer && !node.is_adversary) cfg.expected_peer_id = peer;
        cfg.peer_address = Bytes(peer.begin(), peer.end());
        cfg.cookie_secret = node.cookie_secret;
        cfg.rto_epochs = cfg_.rto;
        return cfg;
    }

    void ensure_handshake(const std::string& initiator, const std::string& responder) {
        Node& node = nodes_.at(initiator);
        if (node.handshakes.count(responder)) return;
        handshake::HandshakeConfig cfg = make_handshake_config(node, responder, true);
        handshake::HandshakeState state(handshake::Role::initiator, cfg,
                                        rng_.fork("hs:" + initiator + ":" + responder));
        auto flight = state.start_handshake(epoch_);
        Bytes wire = handshake::encode_flight(curve_, flight);
        node.handshakes.emplace(responder, std::move(state));
        log_event({{"event", "handshake_start"},
                   {"initiator", initiator},
                   {"responder", responder}});
        send_datagram(initiator, responder, wire, false);
    }

    void record_outcome(const std::string& node_id, const std::string& peer,
                        const handshake::HandshakeState& hs) {
        // Store outcomes keyed by (initiator, responder).
        std::string init = hs.role() == handshake::Role::initiator ? node_id : peer;
        std::string resp = hs.role() == handshake::Role::initiator ? peer : node_id;
        std::string outcome;
        if (hs.established())
            outcome = "established";
        else if (hs.failed())
            outcome = "failed:" +
                      std::string(handshake::abort_reason_name(*hs.failure_reason()));
        else
            outcome = "pending";
        auto& existing = outcomes_[{init, resp}];
        // Never downgrade an established record (the peer may fail later
        // from a stray datagram without affecting the session).
        if (existing != "established") existing = outcome;
    }

    // --- traffic ----------------------------------------------------------

    std::string tunnel_peer_for(const std::string& node_id, const std::string& owner) const {
        if (node_id == owner) return owner;
        if (!cfg_.server_mediated) return owner;
        if (node_id == "server") return owner;
        return "server";
    }

    void send_application(const TrafficEntry& entry) {
        Node& from = nodes_.at(entry.from);
        tunnel::InnerPacket packet;
        packet.src_private = from.ip;
        packet.dst_private = endpoint_ip(entry.to);
        packet.payload = entry.payload;
        sent_payloads_.push_back(entry.payload);
        forward_inner(from, packet);
    }

    identity::Ipv4 endpoint_ip(const std::string& id) const {
        if (auto it = devices_.find(id); it != devices_.end()) return it->second.ip;
        return nodes_.at(id).ip;
    }

    /// Route and emit an inner packet from `node`: local delivery,
    /// through an established tunnel, or queued behind a handshake.
    void forward_inner(Node& node, const tunnel::InnerPacket& packet) {
        std::string owner;
        try {
            owner = tunnel::route_inner(packet, route_table_);
        } catch (const tunnel::TunnelError&) {
            log_event({{"event", "no_route"},
                       {"node", node.id},
                       {"dst", packet.dst_private.format()}});
            return;
        }
        if (owner == node.id) {
            deliver_local(node, packet);
            return;
        }
        std::string peer = tunnel_peer_for(node.id, owner);
        auto t_it = node.tunnels.find(peer);
        if (t_it == node.tunnels.end()) {
            node.pending[peer].push_back(packet);
            ensure_handshake(node.id, peer);
            return;
        }
        send_frame(node, t_it->second, peer, packet);
    }

    void send_frame(Node& node, tunnel::TunnelSession& session, const std::string& peer,
                    const tunnel::InnerPacket& packet) {
        try {
            tunnel::TunnelFrame frame = session.encapsulate(packet);
            ++report_.frames.honest_sent;
            send_datagram(node.id, peer, frame.encode(), false);
        } catch (const tunnel::TunnelError& e) {
            log_event({{"event", "encapsulate_error"},
                       {"node", node.id},
                       {"error", std::string(tunnel::tunnel_error_name(e.code))}});
        }
    }

    void deliver_local(Node& node, const tunnel::InnerPacket& packet) {
        if (packet.dst_private == node.ip) {
            log_event({{"event", "inner_delivered"},
                       {"node", node.id},
                       {"src", packet.src_private.format()},
                       {"dst", packet.dst_private.format()},
                       {"bytes", packet.payload.size()}});
            delivered_payloads_.push_back(packet.payload);
            if (auto it = devices_.find(node.id); it != devices_.end()) {
                // Device-terminated mode: the device node answers itself.
                device_respond(node, it->second, packet);
            } else if (node.kind == identity::SubjectKind::server) {
                // The server answers application probes like a device would.
                reply_from(node, packet, "ack:");
            }
            return;
        }
        // A gateway delivering into its WSN cluster.
        for (auto& [dev_id, dev] : devices_) {
            if (dev.ip == packet.dst_private && dev.gateway_id == node.id) {
                log_event({{"event", "inner_delivered"},
                           {"node", dev_id},
                           {"src", packet.src_private.format()},
                           {"dst", packet.dst_private.format()},
                           {"bytes", packet.payload.size()}});
                delivered_payloads_.push_back(packet.payload);
                device_respond(node, dev, packet);
                return;
            }
        }
        log_event({{"event", "no_route"},
                   {"node", node.id},
                   {"dst", packet.dst_private.format()}});
    }

    void reply_from(Node& node, const tunnel::InnerPacket& request, std::string_view prefix) {
        tunnel::InnerPacket reply;
        reply.src_private = request.dst_private;
        reply.dst_private = request.src_private;
        reply.payload.assign(prefix.begin(), prefix.end());
        append(reply.payload, request.payload);
        if (reply.payload.size() > tunnel::kMaxPayload)
            reply.payload.resize(tunnel::kMaxPayload);
        sent_payloads_.push_back(reply.payload);
        forward_inner(node, reply);
    }

    void device_respond(Node& gateway, DeviceState& dev, const tunnel::InnerPacket& request) {
        std::string response;
        if (dev.behavior == "echo") {
            response = "ack:" + std::string(request.payload.begin(), request.payload.end());
        } else if (dev.behavior == "temperature") {
            response = "temp:21.5";
        } else {  // toggle
            dev.toggled = !dev.toggled;
            dev.visible_state = dev.toggled ? "on" : "off";
            response = "state:" + dev.visible_state;
        }
        log_event({{"event", "device_reply"},
                   {"device", dev.id},
                   {"behavior", dev.behavior},
                   {"bytes", response.size()}});
        tunnel::InnerPacket reply;
        reply.src_private = dev.ip;
        reply.dst_private = request.src_private;
        reply.payload.assign(response.begin(), response.end());
        if (reply.payload.size() > tunnel::kMaxPayload) reply.payload.resize(tunnel::kMaxPayload);
        sent_payloads_.push_back(reply.payload);
        forward_inner(gateway, reply);
    }

    // --- transport ---------------------------------------------------------

    void send_datagram(const std::string& from, const std::string& to, const Bytes& payload,
                       bool adversarial) {
        if (payload.empty()) return;
        bool is_frame = payload.size() >= 2 && payload[0] == tunnel::kMagic0 &&
                        payload[1] == tunnel::kMagic1;
        if (is_frame) ++report_.frames.sent;

        if (sniffing_) {
            ++report_.adversary.captured_datagrams;
            report_.adversary.captured_bytes += payload.size();
            append(capture_, payload);
            capture_.push_back(0x00);  // datagram boundary marker
            if (is_frame) captured_frames_.push_back({to, payload});
        }
        log_event({{"event", "send"},
                   {"from", from},
                   {"to", to},
                   {"bytes", payload.size()},
                   {"kind", is_frame ? "tunnel" : "handshake"}});

        if (link_rng_.chance(cfg_.link.loss_rate)) {
            if (is_frame) ++report_.frames.dropped;
            log_event({{"event", "drop"}, {"from", from}, {"to", to}});
            // A lost datagram may still have been duplicated in flight.
        } else {
            enqueue(from, to, payload, adversarial, 0);
        }
        if (link_rng_.chance(cfg_.link.duplicate_rate)) {
            if (is_frame) {
                ++report_.frames.sent;
                ++report_.frames.link_duplicates;
            }
            log_event({{"event", "duplicate"}, {"from", from}, {"to", to}});
            enqueue(from, to, payload, adversarial, 1);
        }
    }

    void enqueue(const std::string& from, const std::string& to, const Bytes& payload,
                 bool adversarial, std::uint64_t extra_delay) {
        Datagram d;
        d.id = next_datagram_id_++;
        d.from = from;
        d.to = to;
        d.payload = payload;
        d.adversarial = adversarial;
        std::uint64_t delay = cfg_.link.delay + extra_delay;
        if (link_rng_.chance(cfg_.link.reorder_rate)) delay += 1 + link_rng_.below(4);
        d.deliver_at = epoch_ + delay;
        queue_.push_back(std::move(d));
    }

    void deliver(Datagram& dgram) {
        auto node_it = nodes_.find(dgram.to);
        if (node_it == nodes_.end()) return;
        Node& node = node_it->second;
        bool is_frame = dgram.payload.size() >= 2 && dgram.payload[0] == tunnel::kMagic0 &&
                        dgram.payload[1] == tunnel::kMagic1;
        log_event({{"event", "deliver"},
                   {"from", dgram.from},
                   {"to", dgram.to},
                   {"bytes", dgram.payload.size()},
                   {"kind", is_frame ? "tunnel" : "handshake"}});
        if (is_frame)
            receive_frame(node, dgram);
        else
            receive_handshake(node, dgram);
    }

    void receive_handshake(Node& node, const Datagram& dgram) {
        auto hs_it = node.handshakes.find(dgram.from);
        if (hs_it == node.handshakes.end()) {
            if (node.is_adversary) return;  // the adversary only initiates
            handshake::HandshakeConfig cfg = make_handshake_config(node, dgram.from, false);
            auto [it, ok] = node.handshakes.emplace(
                dgram.from,
                handshake::HandshakeState(handshake::Role::responder, cfg,
                                          rng_.fork("hs:" + node.id + ":" + dgram.from)));
            (void)ok;
            hs_it = it;
        }
        handshake::HandshakeState& hs = hs_it->second;
        bool was_terminal = hs.established() || hs.failed();
        auto result = hs.process_datagram(dgram.payload, epoch_);
        if (!result.outbound.empty()) send_datagram(node.id, dgram.from, result.outbound, false);

        if (hs.established() && result.established_now) {
            std::string peer_id = hs.peer_certificate().subject_id;
            log_event({{"event", "handshake_established"},
                       {"node", node.id},
                       {"peer", peer_id},
                       {"session_id",
                        to_hex(hs.session_keys().session_id)}});
            record_outcome(node.id, dgram.from, hs);
            open_tunnel(node, peer_id, hs);
        } else if (hs.failed() && !was_terminal) {
            log_event({{"event", "handshake_failed"},
                       {"node", node.id},
                       {"peer", dgram.from},
                       {"reason",
                        std::string(handshake::abort_reason_name(*hs.failure_reason()))}});
            record_outcome(node.id, dgram.from, hs);
            if (node.is_adversary) return;
            // Anything queued behind this handshake will never flow.
            node.pending.erase(dgram.from);
        }
    }

    void open_tunnel(Node& node, const std::string& peer_id,
                     const handshake::HandshakeState& hs) {
        tunnel::TunnelRoute route{node.id, peer_id};
        tunnel::TunnelSession session(hs.session_keys(),
                                      hs.role() == handshake::Role::initiator
                                          ? handshake::Role::initiator
                                          : handshake::Role::responder,
                                      route);
        node.session_index[session.session_id()] = peer_id;
        auto [it, inserted] = node.tunnels.emplace(peer_id, std::move(session));
        (void)inserted;
        log_event({{"event", "tunnel_up"}, {"local", node.id}, {"peer", peer_id}});
        // Flush anything that was waiting on this tunnel.
        auto pending = node.pending.find(peer_id);
        if (pending != node.pending.end()) {
            auto packets = std::move(pending->second);
            node.pending.erase(pending);
            for (const auto& p : packets) send_frame(node, it->second, peer_id, p);
        }
    }

    void receive_frame(Node& node, const Datagram& dgram) {
        if (node.is_adversary) return;
        tunnel::TunnelFrame frame;
        try {
            frame = tunnel::TunnelFrame::decode(dgram.payload);
            auto idx = node.session_index.find(frame.session_id);
            if (idx == node.session_index.end())
                throw tunnel::TunnelError(tunnel::TunnelErrorCode::wrong_session);
            tunnel::TunnelSession& session = node.tunnels.at(idx->second);
            tunnel::InnerPacket packet = session.decapsulate(frame);
            ++report_.frames.delivered;
            if (dgram.adversarial) {
                ++report_.adversary.adversarial_accepted;
                note_violation("adversarial frame accepted at " + node.id);
            }
            accepted_seqs_[{frame.session_id, frame.seq, node.id}]++;
            if (accepted_seqs_[{frame.session_id, frame.seq, node.id}] > 1) {
                report_.replay_protection = false;
                note_violation("sequence accepted twice at " + node.id);
            }
            forward_inner(node, packet);
        } catch (const tunnel::TunnelError& e) {
            ++report_.frames.rejected;
            if (e.code == tunnel::TunnelErrorCode::replay) ++report_.frames.replay_rejected;
            log_event({{"event", "frame_rejected"},
                       {"node", node.id},
                       {"error", std::string(tunnel::tunnel_error_name(e.code))},
                       {"adversarial", dgram.adversarial}});
        }
    }

    // --- adversary -----------------------------------------------------------

    void run_adversary_action(const AdversaryAction& act) {
        Node& adv = nodes_.at("adversary");
        if (act.action == "sniff_all") {
            sniffing_ = true;
            report_.adversary.sniffing = true;
            log_event({{"event", "adversary"}, {"action", "sniff_all"}});
        } else if (act.action == "replay_frame") {
            if (act.index >= captured_frames_.size())
                throw std::out_of_range("replay_frame: unseen frame index " +
                                        std::to_string(act.index));
            // Copy: sending while sniffing appends to captured_frames_.
            auto [to, payload] = captured_frames_[act.index];
            ++report_.adversary.replayed_frames;
            ++report_.frames.adversarial_sent;
            log_event({{"event", "adversary"},
                       {"action", "replay_frame"},
                       {"index", act.index},
                       {"to", to}});
            send_datagram("adversary", to, payload, true);
        } else if (act.action == "inject_frame") {
            ++report_.adversary.injected_frames;
            bool is_frame = act.bytes.size() >= 2 && act.bytes[0] == tunnel::kMagic0 &&
                            act.bytes[1] == tunnel::kMagic1;
            if (is_frame) ++report_.frames.adversarial_sent;
            log_event({{"event", "adversary"},
                       {"action", "inject_frame"},
                       {"to", act.target},
                       {"bytes", act.bytes.size()}});
            send_datagram("adversary", act.target, act.bytes, true);
        } else if (act.action == "impersonate_user") {
            auto decision =
                registry_.authenticate_credentials(act.username, act.password, act.mac);
            std::string name(identity::auth_decision_name(decision));
            report_.adversary.impersonation_decisions.push_back(name);
            log_event({{"event", "adversary"},
                       {"action", "impersonate_user"},
                       {"username", act.username},
                       {"decision", name}});
            if (decision == identity::AuthDecision::accepted)
                note_violation("impersonation accepted for " + act.username);
        } else if (act.action == "self_signed_handshake") {
            ++report_.adversary.self_signed_attempts;
            std::string peer_key = act.target + "#" +
                                   std::to_string(report_.adversary.self_signed_attempts);
            handshake::HandshakeConfig cfg = make_handshake_config(adv, act.target, false);
            handshake::HandshakeState state(
                handshake::Role::initiator, cfg,
                rng_.fork("hs:adversary:" + peer_key));
            auto flight = state.start_handshake(epoch_);
            Bytes wire = handshake::encode_flight(curve_, flight);
            adv.handshakes.erase(act.target);  // a fresh attempt supersedes
            adv.handshakes.emplace(act.target, std::move(state));
            log_event({{"event", "adversary"},
                       {"action", "self_signed_handshake"},
                       {"target", act.target}});
            send_datagram("adversary", act.target, wire, false);
        } else {
            throw std::invalid_argument("unknown adversary action " + act.action);
        }
    }

    // --- reporting -------------------------------------------------------------

    void note_violation(const std::string& what) {
        report_.security_violations.push_back("epoch " + std::to_string(epoch_) + ": " + what);
    }

    void finalize_report() {
        report_.final_epoch = epoch_;

        // Frames still in flight count as dropped.
        for (const auto& d : queue_) {
            if (d.payload.size() >= 2 && d.payload[0] == tunnel::kMagic0 &&
                d.payload[1] == tunnel::kMagic1)
                ++report_.frames.dropped;
        }

        // Outcomes for handshakes that never finished.
        for (const auto& [id, node] : nodes_) {
            for (const auto& [peer, hs] : node.handshakes) record_outcome(id, peer, hs);
        }
        for (const auto& [pair, outcome] : outcomes_) {
            HandshakeOutcome o;
            o.initiator = pair.first;
            o.responder = pair.second;
            o.outcome = outcome;
            const Node* init = find_node(pair.first);
            const Node* resp = find_node(pair.second);
            if (init) {
                if (auto it = init->handshakes.find(pair.second); it != init->handshakes.end())
                    for (const auto& rec : it->second.flight_records())
                        o.flight_bytes[rec.flight] = rec.bytes;
            }
            if (resp) {
                if (auto it = resp->handshakes.find(pair.first); it != resp->handshakes.end())
                    for (const auto& rec : it->second.flight_records())
                        o.flight_bytes[rec.flight] = rec.bytes;
            }
            for (const auto& [f, b] : o.flight_bytes) o.total_bytes += b;
            report_.handshakes.push_back(std::move(o));

            if (outcome == "established" && !report_.measurement) {
                try {
                    report_.measurement =
                        measure_handshake_bytes(pair.first, pair.second);
                } catch (const NoHandshake&) {
                }
            }
        }

        // The adversary must never have established a handshake.
        if (const Node* adv = find_node("adversary")) {
            for (const auto& [peer, hs] : adv->handshakes) {
                if (hs.established()) {
                    ++report_.adversary.self_signed_established;
                    note_violation("self-signed handshake established with " + peer);
                }
            }
        }

        // Confidentiality proxy: scan the capture for 8-byte windows of
        // any sent payload.
        if (sniffing_) {
            std::unordered_set<std::uint64_t> windows;
            if (capture_.size() >= 8) {
                for (std::size_t i = 0; i + 8 <= capture_.size(); ++i) {
                    std::uint64_t w;
                    std::memcpy(&w, capture_.data() + i, 8);
                    windows.insert(w);
                }
            }
            for (const auto& payload : sent_payloads_) {
                if (payload.size() < 8) continue;
                bool hit = false;
                for (std::size_t i = 0; !hit && i + 8 <= payload.size(); ++i) {
                    std::uint64_t w;
                    std::memcpy(&w, payload.data() + i, 8);
                    if (windows.count(w)) hit = true;
                }
                if (hit) {
                    ++report_.adversary.plaintext_recovered;
                    report_.confidentiality = false;
                }
            }
            if (report_.adversary.plaintext_recovered > 0)
                note_violation("plaintext recovered from capture");
        }

        if (report_.adversary.adversarial_accepted > 0) {
            report_.integrity = false;
            report_.authenticity = false;
        }
        if (report_.adversary.self_signed_established > 0) report_.authenticity = false;
        for (const auto& d : report_.adversary.impersonation_decisions)
            if (d == "accepted") report_.authenticity = false;

        report_.counts_consistent =
            report_.frames.delivered + report_.frames.rejected + report_.frames.dropped ==
            report_.frames.sent;
        if (!report_.counts_consistent)
            note_violation("frame count consistency equation failed");
    }

    void log_event(ojson fields) {
        ojson line;
        line["epoch"] = epoch_;
        for (auto& [k, v] : fields.items()) line[k] = v;
        log_ += line.dump();
        log_ += "\n";
    }

    ScenarioConfig cfg_;
    std::uint64_t seed_;
    const ecc::CurveParams& curve_;
    DetRng rng_;
    DetRng link_rng_;
    DetRng traffic_rng_;
    identity::Registry registry_;

    std::map<std::string, Node> nodes_;
    std::map<std::string, DeviceState> devices_;
    tunnel::RouteTable route_table_;
    bool adversary_present_ = false;

    std::uint64_t epoch_ = 0;
    std::uint64_t next_datagram_id_ = 0;
    std::deque<Datagram> queue_;
    std::map<std::uint64_t, std::vector<TrafficEntry>> traffic_by_epoch_;
    std::vector<std::pair<std::string, std::string>> handshake_wanted_;
    std::size_t next_script_ = 0;

    bool sniffing_ = false;
    Bytes capture_;
    std::vector<std::pair<std::string, Bytes>> captured_frames_;  // (dst, wire)
    std::vector<Bytes> sent_payloads_;
    std::vector<Bytes> delivered_payloads_;
    std::map<std::tuple<std::array<std::uint8_t, 4>, std::uint64_t, std::string>, int>
        accepted_seqs_;
    std::map<std::pair<std::string, std::string>, std::string> outcomes_;

    SimReport report_;
    std::string log_;
};

/// Spec-facing helpers mirroring the operation names.
inline SimNetwork build_simulation(const ScenarioConfig& cfg, std::uint64_t seed) {
    return SimNetwork(cfg, seed);
}

inline SimReport run(SimNetwork& sim, std::uint64_t max_epochs) { return sim.run(max_epochs); }

inline HandshakeMeasurement measure_handshake_bytes(const SimNetwork& sim,
                                                    const std::string& initiator,
                                                    const std::string& responder) {
    return sim.measure_handshake_bytes(initiator, responder);
}

}  // namespace iotsec::sim
