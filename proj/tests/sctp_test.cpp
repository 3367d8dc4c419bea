#include <functional>
#include <memory>
#include <vector>

#include "claa/checksum.hpp"
#include "claa/sctp.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace claa;
using namespace claa::sctp;

namespace {

std::shared_ptr<const InteractionMatrix> builtin() {
    return std::shared_ptr<const InteractionMatrix>(&builtin_matrix(), [](const InteractionMatrix*) {});
}

std::vector<std::uint8_t> msg(std::size_t n, std::uint8_t fill = 0x11) { return std::vector<std::uint8_t>(n, fill); }

// Two associations joined by a fixed-delay pipe; `drop` can veto packets.
struct Pipe {
    Scheduler sched;
    double delay = 0.05;
    std::function<bool(NodeId from, const Packet&)> drop;
    std::vector<std::vector<std::uint8_t>> delivered_to_b;
    std::unique_ptr<Association> a, b;

    explicit Pipe(SctpConfig cfg = {}, EnvBus* bus_a = nullptr) {
        a = std::make_unique<Association>(1, 2, std::vector<Address>{}, cfg, env(1, bus_a));
        b = std::make_unique<Association>(2, 1, std::vector<Address>{}, cfg, env(2, nullptr));
    }

    Environment env(NodeId self, EnvBus* bus) {
        Environment e{sched, bus, nullptr, nullptr};
        e.output = [this, self](Address, std::vector<std::uint8_t> bytes, Payload) {
            const Packet p = decode(bytes);
            if (drop && drop(self, p)) return;
            sched.schedule_in(delay, [this, self, p] {
                auto& to = self == 1 ? *b : *a;
                to.on_packet(p, Address{self, 0}, sched.now());
            });
        };
        if (self == 2)
            e.deliver = [this](NodeId, std::uint16_t, std::vector<std::uint8_t> m) { delivered_to_b.push_back(std::move(m)); };
        return e;
    }
};

}  // namespace

TEST_CASE("packet encode, decode and checksum") {
    Packet p;
    p.vtag = 77;
    p.chunks.emplace_back(DataChunk{5, 1, 2, {1, 2, 3, 4, 5}});
    p.chunks.emplace_back(SackChunk{4, {{6, 7}, {9, 9}}, true});
    p.chunks.emplace_back(HeartbeatChunk{1, 123456789});
    p.chunks.emplace_back(HeartbeatAckChunk{0, 42});
    auto bytes = encode(p);
    CHECK(decode(bytes) == p);
    CHECK(checksum_valid(bytes));
    const auto stored = checksum::load_be32(std::span<const std::uint8_t>(bytes).subspan(kChecksumOffset, 4));
    CHECK(stored == checksum::transport_checksum(bytes, kChecksumOffset));

    bytes[20] ^= 0x04;
    CHECK_FALSE(checksum_valid(bytes));
    CHECK_FALSE(checksum_valid(std::vector<std::uint8_t>(5)));

    bytes = encode(p);
    CHECK_THROWS_AS(decode(std::span<const std::uint8_t>(bytes).first(bytes.size() - 2)), MalformedPacket);
    bytes[kCommonHeaderBytes] = 0xEE;  // first chunk type
    CHECK_THROWS_AS(decode(bytes), MalformedPacket);
}

TEST_CASE("SACK well-formedness") {
    CHECK(SackChunk{3, {}, false}.well_formed());
    CHECK(SackChunk{3, {{5, 6}, {8, 8}}, false}.well_formed());
    CHECK_FALSE(SackChunk{3, {{3, 4}}, false}.well_formed());
    CHECK_FALSE(SackChunk{3, {{5, 6}, {6, 7}}, false}.well_formed());
    CHECK_FALSE(SackChunk{3, {{8, 8}, {5, 6}}, false}.well_formed());
    CHECK_FALSE(SackChunk{3, {{6, 5}}, false}.well_formed());
}

TEST_CASE("messages are delivered in order") {
    Pipe net;
    net.a->start(0.0);
    net.b->start(0.0);
    for (int i = 0; i < 20; ++i) net.a->send_message(0, msg(100, static_cast<std::uint8_t>(i)), 0.0);
    net.sched.run_until(10.0);
    REQUIRE(net.delivered_to_b.size() == 20);
    for (int i = 0; i < 20; ++i) CHECK(net.delivered_to_b[i][0] == i);
    CHECK(net.a->outstanding() == 0);
    CHECK(net.a->counters().retransmissions == 0);
    CHECK(net.a->counters().data_sent == 20);
    CHECK(net.b->counters().messages_delivered == 20);
    CHECK_THROWS_AS(net.a->send_message(0, msg(2000), 10.0), std::invalid_argument);
    CHECK(net.a->counters().messages_rejected == 1);
    net.a->close();
    CHECK_THROWS_AS(net.a->send_message(0, msg(1), 10.0), std::logic_error);
}

TEST_CASE("retransmission timeout estimation") {
    Scheduler sched;
    Environment env{sched, nullptr, nullptr, nullptr};
    Association a(1, 2, {}, {}, env);
    CHECK(a.paths()[0].rto == 3.0);

    a.send_message(0, msg(10), 0.0);
    a.on_sack({1, {}, false}, 0.2);
    // First sample R: SRTT = R, RTTVAR = R/2, RTO = 3R, clamped up to RTO.Min.
    CHECK(*a.paths()[0].srtt == doctest::Approx(0.2));
    CHECK(*a.paths()[0].rttvar == doctest::Approx(0.1));
    CHECK(a.paths()[0].rto == doctest::Approx(1.0));

    a.send_message(0, msg(10), 1.0);
    a.on_sack({2, {}, false}, 5.0);
    const double rttvar = 0.75 * 0.1 + 0.25 * std::abs(0.2 - 4.0);
    const double srtt = 0.875 * 0.2 + 0.125 * 4.0;
    CHECK(*a.paths()[0].rttvar == doctest::Approx(rttvar));
    CHECK(*a.paths()[0].srtt == doctest::Approx(srtt));
    CHECK(a.paths()[0].rto == doctest::Approx(srtt + 4 * rttvar));

    Association b(1, 2, {}, {}, env);
    b.send_message(0, msg(10), 5.0);
    b.on_sack({1, {}, false}, 105.0);
    CHECK(b.paths()[0].rto == 60.0);
}

TEST_CASE("unanswered data backs off to path failure") {
    Scheduler sched;
    Environment env{sched, nullptr, nullptr, nullptr};
    SctpConfig cfg;
    Association a(1, 2, {}, cfg, env);
    a.start(0.0);
    a.send_message(0, msg(10), 0.0);
    const double fail = oracle::backoff_to_failure(cfg.rto_initial, cfg.rto_max, cfg.path_max_retrans);
    sched.run_until(fail - 0.001);
    CHECK(a.unavailable_log().empty());
    CHECK(a.counters().timeout_retransmissions == static_cast<std::uint64_t>(cfg.path_max_retrans));
    sched.run_until(400.0);
    REQUIRE(a.unavailable_log().size() == 1);
    CHECK(a.unavailable_log()[0] ==
          doctest::Approx(oracle::backoff_to_failure(cfg.rto_initial, cfg.rto_max, cfg.path_max_retrans)));
    CHECK(a.paths()[0].state == PathStatus::Inactive);
    CHECK(a.paths()[0].error_count == cfg.path_max_retrans + 1);
    CHECK(a.cwnd() == cfg.mtu);
    CHECK_THROWS_AS(a.send_message(0, msg(1), 400.0), NoActivePath);
}

TEST_CASE("a lost chunk is recovered by timeout") {
    Pipe net;
    bool dropped = false;
    net.drop = [&](NodeId from, const Packet& p) {
        if (from != 1 || dropped) return false;
        const auto* d = std::get_if<DataChunk>(&p.chunks[0]);
        if (!d || d->tsn != 1) return false;
        dropped = true;
        return true;
    };
    net.a->send_message(0, msg(10, 1), 0.0);
    net.sched.run_until(10.0);
    CHECK(net.delivered_to_b.size() == 1);
    CHECK(net.a->counters().timeout_retransmissions == 1);
    CHECK(net.a->counters().rto_expiries == 1);
    CHECK(net.a->paths()[0].error_count == 0);
    CHECK(net.a->paths()[0].state == PathStatus::Active);
}

TEST_CASE("fast retransmission follows the rule of four") {
    for (std::uint64_t seed = 1; seed <= 300; ++seed) {
        const auto err = oracle::rule_of_four_trial(seed);
        REQUIRE_MESSAGE(!err, *err);
    }
    std::size_t seen = 0;
    for (std::uint64_t seed = 1; seed <= 300; ++seed) {
        std::size_t n = 0;
        oracle::rule_of_four_trial(seed, &n);
        seen += n;
    }
    CHECK(seen > 0);
}

TEST_CASE("fast retransmission after four reports halves cwnd") {
    Scheduler sched;
    Environment env{sched, nullptr, nullptr, nullptr};
    SctpConfig cfg;
    cfg.initial_cwnd_mtus = 8;
    Association a(1, 2, {}, cfg, env);
    for (int i = 0; i < 8; ++i) a.send_message(0, msg(100), 0.0);
    for (std::uint32_t hi = 2; hi <= 4; ++hi) a.on_sack({0, {{2, hi}}, false}, 0.1 * hi);
    CHECK(a.miss_reports(1) == 3);
    CHECK(a.counters().fast_retransmissions == 0);
    const auto cwnd = a.cwnd();
    a.on_sack({0, {{2, 5}}, false}, 0.5);
    CHECK(a.counters().fast_retransmissions == 1);
    CHECK(a.cwnd() == std::max(cwnd / 2, cfg.mtu));
    CHECK(a.emissions().back().kind == EmissionKind::Retransmission);
    CHECK(a.emissions().back().tsn == 1);
}

TEST_CASE("bogus SACKs are ignored") {
    Scheduler sched;
    Environment env{sched, nullptr, nullptr, nullptr};
    Association a(1, 2, {}, {}, env);
    a.send_message(0, msg(10), 0.0);
    a.on_sack({5, {}, false}, 0.1);
    a.on_sack({0, {{2, 2}}, false}, 0.1);
    a.on_sack({0, {{1, 3}}, false}, 0.1);
    CHECK(a.counters().sacks_ignored == 3);
    CHECK(a.outstanding() == 1);
}

TEST_CASE("explicit congestion halves cwnd and echoes") {
    EnvBus bus(builtin());
    SctpConfig cfg;
    cfg.initial_cwnd_mtus = 8;
    Pipe net(cfg);
    CHECK(net.a->cwnd() == 8 * cfg.mtu);
    net.a->on_sack({0, {}, true}, 0.0);
    CHECK(net.a->cwnd() == 4 * cfg.mtu);
    CHECK(net.a->ssthresh() == 4 * cfg.mtu);

    // Receiver side: the event halves the local window and the next SACK echoes.
    EventRecord e;
    e.claa_id = std::string(ids::kExplicitCongestion);
    net.b->on_claa(e, 0.0);
    CHECK(net.b->cwnd() == 4 * cfg.mtu);
    net.a->send_message(0, msg(10), 0.0);
    net.sched.run_until(1.0);
    CHECK(net.a->cwnd() < 4 * cfg.mtu + cfg.mtu);
    CHECK(net.a->counters().congestion_reactions == 2);
}

TEST_CASE("heartbeats keep an idle path alive") {
    Pipe net;
    net.a->start(0.0);
    net.b->start(0.0);
    net.sched.run_until(32.9);
    CHECK(net.a->counters().heartbeats_sent == 0);
    net.sched.run_until(33.0);
    CHECK(net.a->counters().heartbeats_sent == 1);
    net.sched.run_until(300.0);
    CHECK(net.a->counters().heartbeat_acks == net.a->counters().heartbeats_sent);
    CHECK(net.a->paths()[0].hb_unacked_count == 0);
    CHECK(net.a->paths()[0].srtt);
    CHECK(*net.a->paths()[0].srtt == doctest::Approx(2 * net.delay));
    CHECK(net.a->counters().heartbeat_bytes > 0);
}

TEST_CASE("unanswered heartbeats take the path down") {
    Pipe net;
    net.drop = [](NodeId from, const Packet&) { return from == 2; };
    net.a->start(0.0);
    net.sched.run_until(1000.0);
    CHECK(net.a->paths()[0].state == PathStatus::Inactive);
    CHECK(net.a->paths()[0].hb_unacked_count == 5);
    CHECK(net.a->counters().node_unavailable_events == 1);
    // The failing heartbeat is the sixth; the inactive path keeps being probed.
    REQUIRE(net.a->unavailable_log().size() == 1);
    int probes_before = 0;
    for (const auto& e : net.a->emissions())
        if (e.kind == EmissionKind::Heartbeat && e.time <= net.a->unavailable_log()[0]) ++probes_before;
    CHECK(probes_before == 6);
}

TEST_CASE("freeze windows stop emissions and counters") {
    Pipe net;
    net.drop = [](NodeId from, const Packet&) { return from == 2; };
    net.a->send_message(0, msg(10), 0.0);
    net.a->freeze(2.0, "test", 1.0);
    CHECK(net.a->frozen(1.0));
    CHECK(net.a->frozen(3.0));
    CHECK_FALSE(net.a->frozen(3.000001));
    CHECK(net.a->send_message(0, msg(10), 1.5) == 0);
    // T3 (due at 3.0) slides past the window.
    net.sched.run_until(3.0);
    CHECK(net.a->counters().rto_expiries == 0);
    CHECK(net.a->emissions().size() == 1);
    net.sched.run_until(3.1);
    CHECK(net.a->emissions().size() == 2);
    CHECK(net.a->emissions().back().kind == EmissionKind::Data);
    REQUIRE(net.a->freeze_log().size() == 1);
    CHECK(net.a->freeze_log()[0].end == 3.0);
    net.sched.run_until(6.1);
    CHECK(net.a->counters().rto_expiries == 1);
    CHECK(net.a->counter_log().back().time == doctest::Approx(6.0));

    net.a->freeze(0.0, "ignored", 7.0);
    CHECK(net.a->freeze_log().size() == 1);
}

TEST_CASE("layer events open freeze windows") {
    Pipe net;
    EventRecord e;
    e.claa_id = std::string(ids::kJitter);
    e.payload = {{"destination", 2}, {"duration", 1.5}};
    net.a->on_claa(e, 4.0);
    CHECK(net.a->freeze_until() == doctest::Approx(5.5));

    e.claa_id = std::string(ids::kUnavailableLink);
    e.payload = {{"destination", 2}};
    net.a->on_claa(e, 10.0);
    CHECK(net.a->freeze_until() == doctest::Approx(13.0));
    CHECK(net.a->paths()[0].state == PathStatus::Inactive);
    CHECK(net.a->freeze_log().size() == 2);

    e.claa_id = std::string(ids::kSnr);
    net.a->on_claa(e, 11.0);
    CHECK(net.a->counters().claa_ignored == 1);
}

TEST_CASE("endpoint checksum handling") {
    EnvBus bus(builtin());
    Scheduler sched;
    std::vector<std::vector<std::uint8_t>> out;
    Endpoint ep(2, {}, sched, &bus, [&](NodeId, std::vector<std::uint8_t> b, Payload) { out.push_back(std::move(b)); });
    std::vector<std::vector<std::uint8_t>> got;
    ep.set_delivery([&](NodeId, std::uint16_t, std::vector<std::uint8_t> m) { got.push_back(std::move(m)); });

    Packet p;
    p.chunks.emplace_back(DataChunk{1, 0, 0, {9, 9}});
    auto bytes = encode(p);
    ep.on_ip_packet(bytes, 1, 1, 100, 0.0);
    REQUIRE(ep.find(1));
    CHECK(got.size() == 1);
    CHECK(ep.find(1)->counters().checksum_verifications == 1);
    CHECK(out.size() == 1);  // SACK

    auto bad = bytes;
    bad[bad.size() - 1] ^= 1;
    ep.on_ip_packet(bad, 1, 1, 101, 0.1);
    CHECK(ep.find(1)->counters().checksum_failures == 1);

    // A frame the link already vouched for skips the transport checksum.
    p.chunks[0] = DataChunk{2, 0, 1, {8}};
    bus.publish_event(LayerId::Link, ids::kCommonChecksum, {{"from", 1}, {"frame", 102}}, 0.2);
    ep.on_ip_packet(encode(p), 1, 1, 102, 0.2);
    CHECK(ep.find(1)->counters().checksum_verifications_skipped == 1);
    CHECK(got.size() == 2);

    ep.on_ip_packet(std::vector<std::uint8_t>(12, 0), 1, 1, 103, 0.3);
    CHECK(ep.find(1)->counters().checksum_failures == 2);

    ep.kill();
    ep.on_ip_packet(encode(p), 1, 1, 104, 0.4);
    CHECK(got.size() == 2);
}

TEST_CASE("endpoint routes events by peer") {
    EnvBus bus(builtin());
    Scheduler sched;
    Endpoint ep(1, {}, sched, &bus, nullptr);
    auto& a2 = ep.associate(2);
    auto& a3 = ep.associate(3);
    CHECK(&ep.associate(2) == &a2);
    bus.publish_event(LayerId::Link, ids::kJitter, {{"destination", 3}, {"excess", 0.2}, {"duration", 1.0}}, 0.0);
    CHECK(a3.freeze_log().size() == 1);
    CHECK(a2.freeze_log().empty());
    bus.publish_event(LayerId::Link, ids::kRetransmissionAvoidance, {{"duration", 0.5}}, 0.0);
    CHECK(a2.freeze_log().size() == 1);
    CHECK(a3.freeze_log().size() == 2);
    CHECK_FALSE(ep.has_pending(2));
}
