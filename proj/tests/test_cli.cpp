#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

// Exit-status contract of the command-line tool, exercised as real
// subprocesses: 0 success, 1 security violation, 2 usage/config error.

namespace {

struct CliResult {
    int exit_code;
    std::string out;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CliResult run_cli(const std::string& args) {
    std::string out_path = "/tmp/iotsec_cli_out.txt";
    std::string cmd = std::string(IOTSEC_CLI_PATH) + " " + args + " >" + out_path + " 2>&1";
    int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    return r;
}

std::string scenario(const std::string& name) {
    return std::string(IOTSEC_SCENARIO_DIR) + "/" + name;
}

}  // namespace

TEST_CASE("version prints and exits 0") {
    CliResult r = run_cli("version");
    CHECK(r.exit_code == 0);
    CHECK(r.out == "iotsec 1.0.0\n");
}

TEST_CASE("keysize-table text output matches the published table") {
    CliResult r = run_cli("keysize-table --format text");
    CHECK(r.exit_code == 0);
    CHECK(r.out ==
          "Security bits  ECC   RSA\n"
          "80             260   1024\n"
          "112            224   2048\n"
          "128            256   3072\n"
          "192            384   7680\n"
          "256            521   15350\n");

    // Default format is text.
    CliResult r2 = run_cli("keysize-table");
    CHECK(r2.out == r.out);
}

TEST_CASE("keysize-table json output carries all five rows") {
    CliResult r = run_cli("keysize-table --format json");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("\"security_bits\": 80") != std::string::npos);
    CHECK(r.out.find("\"ecc_bits\": 521") != std::string::npos);
    CHECK(r.out.find("\"rsa_bits\": 15350") != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
    CHECK(run_cli("").exit_code == 2);                       // missing subcommand
    CHECK(run_cli("frobnicate").exit_code == 2);             // unknown subcommand
    CHECK(run_cli("keysize-table --bogus").exit_code == 2);  // unknown flag
    CHECK(run_cli("keysize-table --format yaml").exit_code == 2);
    CHECK(run_cli("run").exit_code == 2);  // missing required --scenario
    CHECK(run_cli("run --scenario /nonexistent/missing.json").exit_code == 2);
    CHECK(run_cli("demo-handshake --curve P999").exit_code == 2);
}

TEST_CASE("run executes a scenario, writes report and log, exits 0") {
    CliResult r = run_cli("run --scenario " + scenario("honest.json") +
                          " --seed 5 --report /tmp/iotsec_rep_a.json --log /tmp/iotsec_log_a.jsonl");
    CHECK(r.exit_code == 0);
    std::string report = slurp("/tmp/iotsec_rep_a.json");
    CHECK(report.find("\"outcome\": \"established\"") != std::string::npos);
    CHECK(report.find("\"counts_consistent\": true") != std::string::npos);
    std::string log = slurp("/tmp/iotsec_log_a.jsonl");
    CHECK(log.find("\"event\":\"handshake_established\"") != std::string::npos);
}

TEST_CASE("same seed twice gives byte-identical report and log files") {
    std::string base = "run --scenario " + scenario("honest.json") + " --seed 77";
    CHECK(run_cli(base + " --report /tmp/iotsec_rep_b1.json --log /tmp/iotsec_log_b1.jsonl")
              .exit_code == 0);
    CHECK(run_cli(base + " --report /tmp/iotsec_rep_b2.json --log /tmp/iotsec_log_b2.jsonl")
              .exit_code == 0);
    CHECK(slurp("/tmp/iotsec_rep_b1.json") == slurp("/tmp/iotsec_rep_b2.json"));
    CHECK(slurp("/tmp/iotsec_log_b1.jsonl") == slurp("/tmp/iotsec_log_b2.jsonl"));
    CHECK(!slurp("/tmp/iotsec_rep_b1.json").empty());
}

TEST_CASE("a violated security property exits 1") {
    // Full credential theft including the MAC: the fail-safe cannot hold
    // and the report must flag it, driving exit status 1.
    std::string path = "/tmp/iotsec_violation.json";
    {
        std::ofstream out(path);
        out << R"({
          "schema": 1,
          "curve": "T17",
          "topology": {
            "users": [{"id": "alice", "password": "pw", "mac": "aa:bb:cc:dd:ee:01"}]
          },
          "adversary": {"script": [
            {"action": "impersonate_user", "username": "alice", "password": "pw",
             "mac": "aa:bb:cc:dd:ee:01", "at_epoch": 1}
          ]}
        })";
    }
    CliResult r = run_cli("run --scenario " + path);
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("security violation") != std::string::npos);
}

TEST_CASE("demo-handshake completes on both curves") {
    for (const char* curve : {"T17", "P256"}) {
        CliResult r = run_cli(std::string("demo-handshake --curve ") + curve);
        CHECK(r.exit_code == 0);
        CHECK(r.out.find("established: both sides") != std::string::npos);
        CHECK(r.out.find("session keys identical on both sides: yes") != std::string::npos);
    }
    CliResult v = run_cli("demo-handshake --curve T17 --verbose");
    CHECK(v.exit_code == 0);
    CHECK(v.out.find("initiator write key:") != std::string::npos);
}

TEST_CASE("shipped scenarios all run clean") {
    for (const char* name :
         {"honest.json", "impersonation.json", "self_signed.json", "replay.json",
          "lossy.json", "eavesdrop.json"}) {
        CliResult r = run_cli("run --scenario " + scenario(name) + " --report /dev/null");
        INFO(name << ": " << r.out);
        CHECK(r.exit_code == 0);
    }
}
