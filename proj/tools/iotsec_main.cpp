// Command-line front end: run scenarios, print the key-size comparison
// table, demo a verbose loopback handshake.
//
// Exit status contract:
//   0  success
//   1  a security property was violated during the run
//   2  usage or configuration error

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "iotsec/handshake.hpp"
#include "iotsec/netsim.hpp"

namespace {

constexpr const char* kVersion = "iotsec 1.0.0";

std::string keysize_table_text() {
    std::string out = "Security bits  ECC   RSA\n";
    for (int bits : iotsec::ecc::kSecurityLevelBits) {
        std::string row = std::to_string(bits);
        row.append(15 - row.size(), ' ');
        std::string ecc = std::to_string(iotsec::ecc::key_material_size(
            iotsec::ecc::Scheme::ecc, {bits}));
        ecc.append(6 - ecc.size(), ' ');
        row += ecc;
        row += std::to_string(iotsec::ecc::key_material_size(iotsec::ecc::Scheme::rsa, {bits}));
        out += row + "\n";
    }
    return out;
}

std::string keysize_table_json() {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int bits : iotsec::ecc::kSecurityLevelBits) {
        rows.push_back(
            {{"security_bits", bits},
             {"ecc_bits",
              iotsec::ecc::key_material_size(iotsec::ecc::Scheme::ecc, {bits})},
             {"rsa_bits",
              iotsec::ecc::key_material_size(iotsec::ecc::Scheme::rsa, {bits})}});
    }
    return rows.dump(2) + "\n";
}

int run_scenario(const std::string& scenario_path, std::uint64_t seed,
                 const std::string& report_path, const std::string& log_path) {
    iotsec::sim::ScenarioConfig cfg = iotsec::sim::ScenarioConfig::load_file(scenario_path);
    iotsec::sim::SimNetwork sim(cfg, seed);
    iotsec::sim::SimReport report = sim.run(100000);

    std::string report_text = report.to_json().dump(2) + "\n";
    if (report_path.empty()) {
        std::cout << report_text;
    } else {
        std::ofstream out(report_path, std::ios::binary);
        if (!out) {
            std::cerr << "error: cannot write report to " << report_path << "\n";
            return 2;
        }
        out << report_text;
    }
    if (!log_path.empty()) {
        std::ofstream out(log_path, std::ios::binary);
        if (!out) {
            std::cerr << "error: cannot write log to " << log_path << "\n";
            return 2;
        }
        out << sim.event_log();
    }

    if (!report.security_violations.empty()) {
        for (const auto& v : report.security_violations)
            std::cerr << "security violation: " << v << "\n";
        return 1;
    }
    return 0;
}

const char* message_name(iotsec::handshake::MsgType t) {
    using iotsec::handshake::MsgType;
    switch (t) {
        case MsgType::client_hello: return "ClientHello";
        case MsgType::hello_verify: return "HelloVerifyRequest";
        case MsgType::server_hello: return "ServerHello";
        case MsgType::certificate: return "Certificate";
        case MsgType::key_exchange: return "KeyExchange";
        case MsgType::certificate_verify: return "CertificateVerify";
        case MsgType::finished: return "Finished";
        case MsgType::abort_msg: return "Abort";
    }
    return "?";
}

int demo_handshake(const std::string& curve_name, bool verbose) {
    using namespace iotsec;
    const ecc::CurveParams& curve = ecc::curve_by_name(curve_name);

    identity::Registry registry(curve, DetRng(1));
    DetRng key_rng(2);
    ecc::KeyPair user_key = ecc::keygen(curve, key_rng);
    ecc::KeyPair gw_key = ecc::keygen(curve, key_rng);
    auto user_cert = registry
                         .register_user("demo-user", "demo-password",
                                        identity::MacAddress::parse("aa:bb:cc:dd:ee:ff"),
                                        user_key.q)
                         .certificate;
    auto gw_cert = registry
                       .register_device("demo-gateway", identity::SubjectKind::gateway, "",
                                        identity::Ipv4::parse("10.0.1.1"), gw_key.q)
                       .certificate;

    auto status = [&registry](std::string_view id) {
        return registry.lookup_certificate_status(id);
    };
    handshake::HandshakeConfig icfg;
    icfg.curve = &curve;
    icfg.root_public = registry.root_public();
    icfg.status_lookup = status;
    icfg.own_certificate = user_cert;
    icfg.static_key = user_key;
    icfg.expected_peer_id = "demo-gateway";
    icfg.peer_address = Bytes{'d', 'e', 'm', 'o'};
    handshake::HandshakeConfig rcfg = icfg;
    rcfg.own_certificate = gw_cert;
    rcfg.static_key = gw_key;
    rcfg.expected_peer_id.reset();
    rcfg.cookie_secret = DetRng(3).bytes(32);

    handshake::HandshakeState initiator(handshake::Role::initiator, icfg, DetRng(4));
    handshake::HandshakeState responder(handshake::Role::responder, rcfg, DetRng(5));

    std::cout << "Loopback handshake on " << curve.name() << " (demo-user -> demo-gateway)\n";
    Bytes dgram = handshake::encode_flight(curve, initiator.start_handshake(0));
    handshake::HandshakeState* receiver = &responder;
    const char* dir = "initiator -> responder";
    int flight = 1;
    std::size_t total = 0;
    while (!dgram.empty()) {
        auto msgs = handshake::decode_flight(curve, dgram);
        std::string names;
        for (const auto& m : msgs) {
            if (!names.empty()) names += " | ";
            names += message_name(m.type());
        }
        std::cout << "F" << flight << " " << dir << "  " << names << "  (" << dgram.size()
                  << " bytes)\n";
        if (verbose) std::cout << "    " << to_hex(dgram) << "\n";
        total += dgram.size();

        auto result = receiver->process_datagram(dgram, 0);
        dgram = std::move(result.outbound);
        receiver = receiver == &responder ? &initiator : &responder;
        dir = flight % 2 == 1 ? "responder -> initiator" : "initiator -> responder";
        ++flight;
        if (flight > 8) break;
    }

    if (!initiator.established() || !responder.established()) {
        std::cerr << "error: demo handshake did not establish\n";
        return 1;
    }
    bool keys_match = initiator.session_keys() == responder.session_keys();
    std::cout << "established: both sides, session id "
              << to_hex(initiator.session_keys().session_id) << "\n";
    std::cout << "session keys identical on both sides: " << (keys_match ? "yes" : "NO")
              << "\n";
    std::cout << "total handshake bytes on wire: " << total << "\n";
    if (verbose) {
        const auto& k = initiator.session_keys();
        std::cout << "initiator write key: " << to_hex(k.initiator_write_key) << "\n";
        std::cout << "responder write key: " << to_hex(k.responder_write_key) << "\n";
    }
    return keys_match ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-phase authentication and VPN tunneling simulator for IoT home networks"};
    app.require_subcommand(1);

    auto* run_cmd = app.add_subcommand("run", "Run a scenario and emit its report");
    std::string scenario_path, report_path, log_path;
    std::uint64_t seed = 1;
    run_cmd->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
    run_cmd->add_option("--seed", seed, "Simulation seed (default 1)");
    run_cmd->add_option("--report", report_path, "Write the report JSON here");
    run_cmd->add_option("--log", log_path, "Write the line-delimited event log here");

    auto* table_cmd =
        app.add_subcommand("keysize-table", "Print the ECC/RSA comparable key size table");
    std::string format = "text";
    table_cmd->add_option("--format", format, "text or json")
        ->check(CLI::IsMember({"text", "json"}));

    auto* demo_cmd = app.add_subcommand("demo-handshake", "Run a loopback handshake");
    std::string curve_name = "P256";
    bool verbose = false;
    demo_cmd->add_option("--curve", curve_name, "T17 or P256")
        ->check(CLI::IsMember({"T17", "P256"}));
    demo_cmd->add_flag("--verbose", verbose, "Dump each flight's bytes");

    auto* version_cmd = app.add_subcommand("version", "Print the version");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // help goes to stdout, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (*run_cmd) return run_scenario(scenario_path, seed, report_path, log_path);
        if (*table_cmd) {
            std::cout << (format == "json" ? keysize_table_json() : keysize_table_text());
            return 0;
        }
        if (*demo_cmd) return demo_handshake(curve_name, verbose);
        if (*version_cmd) {
            std::cout << kVersion << "\n";
            return 0;
        }
    } catch (const iotsec::sim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
