#include "claa/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "claa/checksum.hpp"
#include "claa/registry.hpp"
#include "claa/simulation.hpp"

namespace claa::cli {

namespace {

namespace fs = std::filesystem;

struct MissingFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MissingFile("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << body;
}

std::optional<std::uint64_t> seed_override() {
    const char* v = std::getenv("CLAA_SIM_SEED");
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    const auto seed = std::strtoull(v, &end, 0);
    if (*end != '\0') throw std::invalid_argument("CLAA_SIM_SEED is not an integer");
    return seed;
}

Scenario load(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ScenarioError(path + ": " + e.what());
    }
    auto s = parse_scenario(j, builtin_matrix());
    if (auto seed = seed_override()) s.seed = *seed;
    return s;
}

std::vector<std::uint8_t> parse_hex(const std::string& hex) {
    std::string digits;
    for (char c : hex)
        if (!std::isspace(static_cast<unsigned char>(c))) digits += c;
    if (digits.rfind("0x", 0) == 0) digits = digits.substr(2);
    if (digits.size() % 2) throw CLI::ValidationError("--hex", "odd number of hex digits");
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < digits.size(); i += 2) {
        const auto byte = digits.substr(i, 2);
        if (byte.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
            throw CLI::ValidationError("--hex", "not a hex string");
        out.push_back(static_cast<std::uint8_t>(std::stoul(byte, nullptr, 16)));
    }
    return out;
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-layer stack simulator: SCTP over OLSR over an abstract 802.11 link"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "claa-sim 1.0");

    // run
    auto* run = app.add_subcommand("run", "Run one scenario and write its metrics CSV");
    std::string scenario_path, out_path, trace_path, flags_path;
    run->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
    run->add_option("--out", out_path, "Metrics CSV output")->required();
    run->add_option("--trace-claa", trace_path, "Write every CLAA bus operation as JSON lines");

    // compare
    auto* cmp = app.add_subcommand("compare", "Run a scenario once per named CLAA flag set");
    cmp->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
    cmp->add_option("--flags", flags_path, "JSON object of named flag sets")->required();
    cmp->add_option("--out", out_path, "Comparison CSV output")->required();

    // validate-matrix
    auto* vm = app.add_subcommand("validate-matrix", "Check an interaction matrix JSON file");
    std::string matrix_path;
    vm->add_option("file", matrix_path, "Matrix JSON")->required();

    // dump-builtin-matrix
    auto* dump = app.add_subcommand("dump-builtin-matrix", "Write the built-in interaction matrix as JSON");
    std::string dump_path;
    dump->add_option("--out", dump_path, "Output file (stdout when omitted)");

    // checksum
    auto* ck = app.add_subcommand("checksum", "Checksum of a byte string");
    std::string algorithm = "crc32c", text, hex, file;
    ck->add_option("--algorithm", algorithm, "crc32c or adler32")
        ->check(CLI::IsMember({"crc32c", "adler32"}))
        ->capture_default_str();
    auto* g_text = ck->add_option("--text", text, "Literal ASCII input");
    auto* g_hex = ck->add_option("--hex", hex, "Hex-encoded input");
    auto* g_file = ck->add_option("--file", file, "Input file");
    g_text->excludes(g_hex)->excludes(g_file);
    g_hex->excludes(g_file);

    // checksum-dist
    auto* cd = app.add_subcommand("checksum-dist", "Chi-square uniformity of checksums over short random packets");
    std::size_t length = 16, count = 100000;
    std::uint64_t seed = 1;
    double alpha = 1e-3;
    cd->add_option("--algorithm", algorithm, "crc32c or adler32")
        ->check(CLI::IsMember({"crc32c", "adler32"}))
        ->capture_default_str();
    cd->add_option("--length", length, "Packet length in bytes")->check(CLI::PositiveNumber)->capture_default_str();
    cd->add_option("--count", count, "Number of packets")->check(CLI::PositiveNumber)->capture_default_str();
    cd->add_option("--seed", seed, "RNG seed")->capture_default_str();
    cd->add_option("--alpha", alpha, "Significance level")->check(CLI::Range(0.0, 1.0))->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (*run) {
            const auto scenario = load(scenario_path);
            std::ofstream trace;
            Simulation::ClaaTrace sink;
            if (!trace_path.empty()) {
                trace.open(trace_path);
                if (!trace) throw std::runtime_error("cannot write " + trace_path);
                sink = [&trace](NodeId node, const TraceRecord& r) {
                    nlohmann::json line{{"node", node},
                                        {"time", r.time},
                                        {"layer", to_string(r.layer)},
                                        {"claa", r.claa_id},
                                        {"operation", r.operation},
                                        {"verdict", r.verdict}};
                    trace << line.dump() << "\n";
                };
            }
            Simulation sim(scenario, nullptr, sink);
            const auto report = sim.run();
            write_file(out_path, to_csv(report));
            out << summary(report);
            return kExitOk;
        }
        if (*cmp) {
            const auto scenario = load(scenario_path);
            nlohmann::ordered_json flags;
            try {
                flags = nlohmann::ordered_json::parse(read_file(flags_path));
            } catch (const nlohmann::json::parse_error& e) {
                throw ScenarioError(flags_path + ": " + e.what());
            }
            const auto legs = parse_flag_sets(flags, builtin_matrix());
            const auto table = compare(scenario, legs);
            write_file(out_path, to_csv(table));
            out << summary(table);
            return kExitOk;
        }
        if (*vm) {
            InteractionMatrix m;
            try {
                m = matrix_from_json(nlohmann::json::parse(read_file(matrix_path)));
            } catch (const nlohmann::json::parse_error& e) {
                err << matrix_path << ": " << e.what() << "\n";
                return kExitBadInput;
            } catch (const MatrixFormatError& e) {
                err << matrix_path << ": " << e.what() << "\n";
                return kExitBadInput;
            }
            const auto violations = validate(m);
            for (const auto& v : violations) out << v.descriptor << ": " << v.rule << "\n";
            if (!violations.empty()) return kExitViolations;
            out << "ok: " << m.descriptors.size() << " descriptors\n";
            return kExitOk;
        }
        if (*dump) {
            const auto body = to_json(builtin_matrix()).dump(2) + "\n";
            if (dump_path.empty()) out << body;
            else write_file(dump_path, body);
            return kExitOk;
        }
        if (*ck) {
            std::vector<std::uint8_t> bytes;
            if (!hex.empty()) {
                bytes = parse_hex(hex);
            } else if (!file.empty()) {
                const auto s = read_file(file);
                bytes.assign(s.begin(), s.end());
            } else {
                bytes.assign(text.begin(), text.end());
            }
            const auto alg = checksum::algorithm_from_string(algorithm);
            out << hex32(checksum::compute(alg, bytes)) << "\n";
            return kExitOk;
        }
        if (*cd) {
            const auto alg = checksum::algorithm_from_string(algorithm);
            const auto d = checksum::short_packet_distribution(alg, length, count, seed);
            out << "algorithm   " << checksum::to_string(alg) << "\n"
                << "length      " << length << "\n"
                << "count       " << count << "\n"
                << "chi_square  " << format_number(d.chi_square) << "\n"
                << "p_value     " << d.p_value << "\n"
                << "uniform     " << (d.uniform_at(alpha) ? "yes" : "no") << " (alpha " << alpha << ")\n";
            return kExitOk;
        }
    } catch (const CLI::ValidationError& e) {
        err << e.what() << "\n";
        return kExitUsage;
    } catch (const MissingFile& e) {
        err << e.what() << "\n";
        return kExitNoInput;
    } catch (const ScenarioError& e) {
        err << "invalid scenario: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace claa::cli
