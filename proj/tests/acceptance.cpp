// Acceptance checks, one PASS/FAIL line each. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "claa/checksum.hpp"
#include "claa/olsr.hpp"
#include "claa/registry.hpp"
#include "claa/scenario.hpp"
#include "claa/simulation.hpp"
#include "golden_matrix.hpp"
#include "oracles.hpp"

using namespace claa;
using Verdict = std::optional<std::string>;  // empty = pass

namespace {

const std::string kDir = CLAA_SCENARIO_DIR;

Scenario scenario(const std::string& file) { return load_scenario(kDir + "/" + file, builtin_matrix()); }

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

Verdict matrix_fidelity() {
    const auto m = load_builtin_matrix();
    if (auto bad = golden::mismatch(m)) return *bad;
    if (auto v = validate(m); !v.empty()) return "validate: " + v.front().descriptor + ": " + v.front().rule;
    // The explicit-loss descriptor rides along, off unless asked for.
    if (m.descriptors.size() != golden::rows().size() + 1) return "expected the published rows plus one optional";
    if (m.descriptors.back().enabled_by_default) return "optional row enabled by default";
    return std::nullopt;
}

Verdict checksum_exactness() {
    const auto check = bytes("123456789");
    const auto want = oracle::crc32c(check);
    if (want != 0xE3069283u) return "oracle check value";
    if (checksum::crc32c(check) != want) return "table crc on check string";
    Rng rng(20240501);
    for (int i = 0; i < 10000; ++i) {
        std::vector<std::uint8_t> buf(rng.below(257));
        for (auto& b : buf) b = static_cast<std::uint8_t>(rng.next());
        if (checksum::crc32c(buf) != oracle::crc32c(buf)) return "mismatch at input " + std::to_string(i);
    }
    return std::nullopt;
}

Verdict short_packet_weakness() {
    const double critical = oracle::chi_square_critical(255.0, 3.090232);  // upper 1e-3
    for (std::size_t len : {4u, 8u, 16u}) {
        auto adler = checksum::short_packet_distribution(checksum::Algorithm::Adler32, len, 100000, 99 + len);
        auto crc = checksum::short_packet_distribution(checksum::Algorithm::Crc32cReflected, len, 100000, 99 + len);
        for (const auto* d : {&adler, &crc})
            if (std::abs(oracle::chi_square(d->buckets) - d->chi_square) > 1e-6 * d->chi_square)
                return "statistic disagrees with recomputation";
        const auto n = std::to_string(len);
        if (adler.uniform_at(1e-3) || adler.chi_square <= critical) return "adler32 looks uniform at length " + n;
        if (!crc.uniform_at(1e-3) || crc.chi_square > critical) return "crc32c rejected at length " + n;
    }
    return std::nullopt;
}

Verdict rule_of_four() {
    std::size_t retransmits = 0;
    for (std::uint64_t seed = 1; seed <= 10000; ++seed)
        if (auto bad = oracle::rule_of_four_trial(seed, &retransmits)) return bad;
    if (retransmits == 0) return "no fast retransmission exercised";
    return std::nullopt;
}

Verdict common_signalization() {
    const auto s = scenario("two_node.json");
    const auto c = compare(s, {{"off", false, {}}, {"on", false, {{std::string(ids::kCommonSignalization), true}}}});
    const auto& off = c.reports[0];
    const auto& on = c.reports[1];
    const double floor_hb = std::floor(s.duration / (s.sctp.rto_min + s.sctp.hb_delay));
    for (NodeId n : {1u, 2u}) {
        if (on.at(n, "heartbeats_sent") != 0) return "heartbeats sent with the CLAA on";
        if (!(on.at(n, "heartbeats_suppressed") > 0)) return "nothing suppressed";
        if (off.at(n, "heartbeats_sent") < floor_hb) return "baseline sent too few heartbeats";
    }
    if (off.at("application_goodput") != on.at("application_goodput")) return "goodput differs";
    if (!(off.at("application_goodput") > 0)) return "no traffic delivered";
    return std::nullopt;
}

Verdict unavailability_detection() {
    const auto s = scenario("line_kill.json");
    double rto_at_kill;
    {
        Simulation probe(s);
        probe.run_until(s.schedule.front().time - 1e-3);
        rto_at_kill = probe.node(1).sctp->find(3)->paths().front().rto;
    }
    const double expected = oracle::backoff_to_failure(rto_at_kill, s.sctp.rto_max, s.sctp.path_max_retrans);
    const auto c = compare(s, {{"off", false, {}}, {"on", false, {{std::string(ids::kUnavailableLink), true}}}});
    const double base = c.reports[0].at("unavailability_detection_latency");
    const double fast = c.reports[1].at("unavailability_detection_latency");
    char buf[160];
    std::snprintf(buf, sizeof buf, "baseline %.3f (schedule %.3f), with event %.3f", base, expected, fast);
    if (std::isnan(base) || std::abs(base - expected) > s.sctp.rto_min) return std::string(buf);
    if (std::isnan(fast) || !(fast < base)) return std::string(buf);
    return std::nullopt;
}

Verdict freeze_soundness() {
    const auto s = scenario("freeze_jitter.json");
    auto on = s;
    on.claa_flags[std::string(ids::kJitter)] = true;
    Simulation sim(on);
    const auto rep_on = sim.run();
    const auto rep_off = run_scenario(s);

    const auto* a = sim.node(1).sctp->find(2);
    if (!a) return "no association";
    const auto& windows = a->freeze_log();
    if (windows.size() < s.schedule.size()) return "windows missing";
    for (const auto& w : windows) {
        for (const auto& e : a->emissions()) {
            if (e.time < w.start || e.time > w.end) continue;
            if (e.kind == sctp::EmissionKind::Data || e.kind == sctp::EmissionKind::Retransmission ||
                e.kind == sctp::EmissionKind::Heartbeat)
                return "emission inside window at " + std::to_string(e.time);
        }
        int err = 0, hb = 0;
        for (const auto& smp : a->counter_log()) {
            if (smp.time < w.start) {
                err = smp.error_count;
                hb = smp.hb_unacked_count;
            } else if (smp.time <= w.end && (smp.error_count > err || smp.hb_unacked_count > hb)) {
                return "counter grew inside window at " + std::to_string(smp.time);
            }
        }
    }
    if (rep_on.at("spurious_retransmission_count") > rep_off.at("spurious_retransmission_count"))
        return "more spurious retransmissions with the CLAA on";
    return std::nullopt;
}

Verdict shared_checksum() {
    const auto s = scenario("shared_checksum.json");
    const auto c = compare(s, {{"off", false, {}}, {"on", false, {{std::string(ids::kCommonChecksum), true}}}});
    const auto& off = c.reports[0];
    const auto& on = c.reports[1];
    if (!(off.at("checksum_operations_at_transport") > 0)) return "baseline verified nothing";
    if (on.at("checksum_operations_at_transport") != 0) return "transport still verifying marked frames";
    if (!(off.at("crc_drops") > 0)) return "channel produced no corruption";
    if (off.at("application_goodput") != on.at("application_goodput")) return "goodput differs";
    if (on.at("corrupted_payloads_delivered") != 0 || off.at("corrupted_payloads_delivered") != 0)
        return "corrupted payload delivered";
    return std::nullopt;
}

Verdict olsr_suite() {
    Rng rng(4242);
    for (int g = 0; g < 500; ++g) {
        const std::size_t n = 2 + rng.below(7);
        std::vector<std::vector<bool>> adj(n + 1, std::vector<bool>(n + 1, false));
        for (NodeId a = 1; a <= n; ++a)
            for (NodeId b = a + 1; b <= n; ++b)
                if (rng.bernoulli(0.4)) adj[a][b] = adj[b][a] = true;
        const NodeId self = 1;
        std::set<NodeId> nbrs;
        for (NodeId b = 2; b <= n; ++b)
            if (adj[self][b]) nbrs.insert(b);
        std::vector<std::pair<NodeId, NodeId>> two_hop;
        for (NodeId nb : nbrs)
            for (NodeId t = 1; t <= n; ++t)
                if (adj[nb][t] && t != nb) two_hop.push_back({nb, t});
        const auto mprs = olsr::select_mprs(self, nbrs, two_hop);
        const auto chk = oracle::mpr_cover(self, nbrs, two_hop, mprs);
        if (!chk.valid) return "graph " + std::to_string(g) + ": not a cover";
        if (mprs.size() < chk.minimum) return "graph " + std::to_string(g) + ": below the minimum";
        if (chk.minimum == 0 && !mprs.empty()) return "graph " + std::to_string(g) + ": superfluous relays";
    }

    const olsr::HysteresisParams hp;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<bool> seq(1 + rng.below(30));
        for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = rng.bernoulli(0.6);
        const auto walk = oracle::hysteresis_walk(0.0, false, seq, hp.scaling, hp.high, hp.low);
        olsr::HysteresisState st;
        for (std::size_t i = 0; i < seq.size(); ++i) {
            st = olsr::hysteresis_update(st, seq[i] ? olsr::Outcome::Received : olsr::Outcome::Lost, hp);
            if (std::abs(st.quality - walk[i].quality) > 1e-12 || st.pending == walk[i].usable)
                return "hysteresis step " + std::to_string(i) + " of trial " + std::to_string(trial);
        }
    }

    // Link sensing: one HELLO not naming us, one naming us, then silence.
    Scheduler sched;
    olsr::OlsrConfig cfg;
    olsr::OlsrNode node(1, cfg, sched, nullptr, 1);
    olsr::HelloMessage h{2, 2.0, 6.0, {}};
    node.on_hello(h, 1.0);
    const auto& l1 = node.link_set().at(2);
    if (l1.asym_time != 1.0 + 6.0 || l1.state(1.0) != olsr::LinkState::Asymmetric) return "first HELLO";
    h.entries.push_back({1, olsr::LinkType::Asym, olsr::NeighborType::NotNeigh});
    node.on_hello(h, 3.0);
    const auto& l2 = node.link_set().at(2);
    if (l2.sym_time != 3.0 + 6.0 || l2.state(3.0) != olsr::LinkState::Symmetric) return "second HELLO";
    h.entries.clear();
    node.on_hello(h, 5.0);
    const auto& l3 = node.link_set().at(2);
    if (l3.state(8.5) != olsr::LinkState::Symmetric) return "symmetric before SYM expiry";
    if (l3.state(9.5) != olsr::LinkState::Asymmetric) return "asymmetric once SYM expired";
    if (l3.state(11.5) != olsr::LinkState::Lost) return "lost once both expired";
    if (l3.time < std::max(l3.sym_time, l3.asym_time)) return "L_time below the timers";
    return std::nullopt;
}

Verdict determinism_and_isolation() {
    for (const char* f : {"two_node.json", "freeze_jitter.json", "line_kill.json", "shared_checksum.json"}) {
        auto s = scenario(f);
        s.claa_default = true;
        if (to_csv(run_scenario(s)) != to_csv(run_scenario(s))) return std::string(f) + ": reruns differ";

        auto off = scenario(f);
        off.claa_default = false;
        off.claa_flags.clear();
        auto stripped = off;
        stripped.strip_bus = true;
        if (to_csv(run_scenario(off)) != to_csv(run_scenario(stripped)))
            return std::string(f) + ": all-off run depends on the environment bus";
    }
    return std::nullopt;
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Verdict()> run;
    };
    const std::vector<Criterion> all = {
        {"matrix fidelity", matrix_fidelity},
        {"checksum exactness", checksum_exactness},
        {"short-packet weakness", short_packet_weakness},
        {"rule of four", rule_of_four},
        {"common signalization gain", common_signalization},
        {"unavailability detection gain", unavailability_detection},
        {"freeze soundness", freeze_soundness},
        {"shared checksum accounting", shared_checksum},
        {"olsr correctness", olsr_suite},
        {"determinism and isolation", determinism_and_isolation},
    };
    int failures = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = all[i].run();
        } catch (const std::exception& e) {
            v = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %2zu %-32s %7.3fs%s%s\n", v ? "FAIL" : "PASS", i + 1, all[i].name, secs, v ? "  " : "",
                    v ? v->c_str() : "");
        if (v) ++failures;
    }
    std::fflush(stdout);
    return failures;
}
