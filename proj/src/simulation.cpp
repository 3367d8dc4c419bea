#include "claa/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "claa/bytes.hpp"

namespace claa {

namespace {

std::uint32_t fold(std::uint32_t v) { return v ^ (v >> 8) ^ (v >> 16) ^ (v >> 24); }

// Every header byte feeds the low byte, so any single flipped header bit shows.
std::uint8_t filler(NodeId src, std::uint32_t seq, std::size_t i) {
    return static_cast<std::uint8_t>(fold(seq) * 131u + static_cast<std::uint32_t>(i) * 7u + fold(src));
}

}  // namespace

std::vector<std::uint8_t> make_message(NodeId src, std::uint32_t seq, std::size_t size) {
    ByteWriter w;
    w.u32(src);
    w.u32(seq);
    auto out = w.take();
    for (std::size_t i = out.size(); i < size; ++i) out.push_back(filler(src, seq, i));
    return out;
}

bool message_intact(std::span<const std::uint8_t> msg, NodeId* src, std::uint32_t* seq) {
    if (msg.size() < 8) return false;
    ByteReader r(msg);
    const NodeId s = r.u32();
    const std::uint32_t q = r.u32();
    for (std::size_t i = 8; i < msg.size(); ++i)
        if (msg[i] != filler(s, q, i)) return false;
    if (src) *src = s;
    if (seq) *seq = q;
    return true;
}

Simulation::Simulation(Scenario scenario, std::shared_ptr<const InteractionMatrix> matrix, ClaaTrace trace)
    : scenario_(std::move(scenario)), matrix_(std::move(matrix)), trace_(std::move(trace)) {
    if (!matrix_) matrix_ = std::make_shared<const InteractionMatrix>(builtin_matrix());
    if (auto v = validate(*matrix_); !v.empty())
        throw ScenarioError("interaction matrix invalid: " + v.front().descriptor + ": " + v.front().rule);
    validate_scenario(scenario_, *matrix_);
    build();
}

Simulation::Node& Simulation::node(NodeId id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw std::out_of_range("unknown node " + std::to_string(id));
    return *it->second;
}

void Simulation::build() {
    link::ChannelModel channel(scenario_.channel.curve, scenario_.channel.fec);
    for (const auto& l : scenario_.links) channel.add_link(l.a, l.b, l.params);
    medium_ = std::make_unique<link::Medium>(std::move(channel), sched_, scenario_.seed);

    const auto enabled = enabled_claas(scenario_, *matrix_);
    for (const auto& spec : scenario_.nodes) {
        auto n = std::make_unique<Node>();
        n->id = spec.id;
        Node* np = n.get();
        if (!scenario_.strip_bus) {
            n->bus = std::make_unique<EnvBus>(matrix_, enabled);
            if (trace_) n->bus->set_trace([this, id = spec.id](const TraceRecord& r) { trace_(id, r); });
        }
        EnvBus* bus = n->bus.get();

        auto link_cfg = scenario_.link;
        if (spec.energy_budget) link_cfg.energy_budget = *spec.energy_budget;
        n->link = std::make_unique<link::LinkLayer>(spec.id, link_cfg, *medium_, sched_, bus);
        medium_->attach(*n->link);
        n->ip = std::make_unique<ip::IpLayer>(spec.id, scenario_.ip, *n->link, sched_, bus);
        n->olsr = std::make_unique<olsr::OlsrNode>(spec.id, scenario_.olsr, sched_, bus, scenario_.seed);
        n->sctp = std::make_unique<sctp::Endpoint>(
            spec.id, scenario_.sctp, sched_, bus,
            [np](NodeId dest, std::vector<std::uint8_t> bytes, Payload meta) {
                np->ip->send_sctp(dest, std::move(bytes), std::move(meta));
            });

        n->link->set_upcall([np](std::span<const std::uint8_t> payload, const link::RxInfo& rx) {
            np->ip->on_frame(payload, rx);
        });
        n->ip->set_route_lookup([np](NodeId dest) { return np->olsr->next_hop(dest); });
        n->ip->set_olsr_upcall([this, np](std::span<const std::uint8_t> bytes, NodeId from) {
            np->olsr->on_packet(bytes, from, sched_.now());
        });
        n->ip->set_sctp_upcall([this, np](std::span<const std::uint8_t> bytes, NodeId src, const link::RxInfo& rx) {
            np->sctp->on_ip_packet(bytes, src, rx.from, rx.frame_seq, sched_.now());
        });
        n->olsr->set_broadcast([np](std::vector<std::uint8_t> bytes) { np->ip->send_olsr(std::move(bytes)); });
        n->olsr->set_pending_query([np](NodeId dest) { return np->sctp->has_pending(dest); });
        n->olsr->set_snr_query([this, id = spec.id](NodeId nb) -> std::optional<double> {
            const auto& ch = medium_->channel();
            if (!ch.has_link(id, nb)) return std::nullopt;
            return ch.params(id, nb).snr_db;
        });
        n->sctp->set_delivery([this, np](NodeId from, std::uint16_t stream, std::vector<std::uint8_t> msg) {
            on_delivery(*np, from, stream, std::move(msg));
        });
        if (bus) {
            bus->subscribe(LayerId::Application, ids::kNodeUnavailable,
                           [np](const EventRecord&) { ++np->app.node_unavailable_notices; });
            bus->subscribe(LayerId::Application, ids::kUnavailableLink,
                           [np](const EventRecord&) { ++np->app.unavailable_link_notices; });
        }
        nodes_.emplace(spec.id, std::move(n));
    }

    for (auto& [id, n] : nodes_) {
        n->olsr->start(0.0);
        n->link->start(scenario_.link.export_interval);
    }
    for (std::size_t i = 0; i < scenario_.traffic.size(); ++i) {
        const auto& t = scenario_.traffic[i];
        for (auto [a, b] : {std::pair{t.src, t.dst}, std::pair{t.dst, t.src}}) {
            auto& ep = *node(a).sctp;
            if (!ep.find(b)) ep.associate(b).start(0.0);
        }
        flow_seq_.push_back(0);
        schedule_traffic(t, i);
    }
    for (const auto& a : scenario_.schedule) {
        if (a.time >= scenario_.duration) continue;
        sched_.schedule_at(a.time, [this, a] { apply(a); });
    }
}

void Simulation::schedule_traffic(const TrafficSpec& t, std::size_t flow) {
    if (t.start < traffic_stop(t)) sched_.schedule_at(t.start, [this, flow] { traffic_tick(flow, 0); });
}

double Simulation::traffic_stop(const TrafficSpec& t) const {
    return t.stop > 0.0 ? std::min(t.stop, scenario_.duration) : scenario_.duration;
}

void Simulation::traffic_tick(std::size_t flow, std::uint64_t k) {
    const auto& t = scenario_.traffic[flow];
    Node& src = node(t.src);
    if (src.alive) {
        ++src.app.offered;
        auto msg = make_message(t.src, flow_seq_[flow], t.size);
        try {
            src.sctp->find(t.dst)->send_message(t.stream, std::move(msg), sched_.now());
            ++flow_seq_[flow];
        } catch (const sctp::NoActivePath&) {
            ++src.app.rejected;
        } catch (const std::logic_error&) {
            ++src.app.rejected;
        }
    }
    // Message k leaves at start + k/rate, computed from k to avoid drift.
    const double next = t.start + static_cast<double>(k + 1) / t.rate;
    if (next < traffic_stop(t)) sched_.schedule_at(next, [this, flow, k] { traffic_tick(flow, k + 1); });
}

void Simulation::on_delivery(Node& n, NodeId from, std::uint16_t stream, std::vector<std::uint8_t> msg) {
    NodeId src = 0;
    std::uint32_t seq = 0;
    if (!message_intact(msg, &src, &seq) || src != from) {
        ++n.app.corrupted;
        return;
    }
    auto& expected = n.next_seq_in[{from, stream}];
    if (seq < expected) {
        ++n.app.duplicates;
        return;
    }
    if (seq != expected) ++n.app.out_of_order;
    expected = seq + 1;
    ++n.app.delivered;
    n.app.delivered_bytes += msg.size();
}

void Simulation::apply(const ScheduledAction& a) {
    const SimTime now = sched_.now();
    auto& ch = medium_->channel();
    switch (a.kind) {
    case ActionKind::KillLink:
        ch.params(a.a, a.b).up = false;
        failures_.push_back({now, "kill_link " + std::to_string(a.a) + "-" + std::to_string(a.b), std::nullopt});
        break;
    case ActionKind::RestoreLink:
        ch.params(a.a, a.b).up = true;
        break;
    case ActionKind::KillNode: {
        Node& n = node(a.a);
        if (!n.alive) break;
        n.alive = false;
        n.link->kill();
        n.ip->kill();
        n.olsr->kill();
        n.sctp->kill();
        failures_.push_back({now, "kill_node " + std::to_string(a.a), std::nullopt});
        break;
    }
    case ActionKind::SetSnr:
        ch.params(a.a, a.b).snr_db = a.value;
        ch.params(a.a, a.b).ber.reset();
        break;
    case ActionKind::SetBer:
        ch.params(a.a, a.b).ber = a.value;
        break;
    case ActionKind::MediumBusy:
        node(a.a).link->set_medium_busy(now + a.value);
        break;
    case ActionKind::InjectEvent: {
        Node& n = node(a.a);
        if (n.alive && n.bus) n.bus->publish_event(a.layer, a.claa, a.payload, now);
        break;
    }
    }
}

void Simulation::run_until(SimTime t) { sched_.run_until(std::min(t, scenario_.duration)); }

MetricsReport Simulation::run() {
    if (!ran_) {
        sched_.run_until(scenario_.duration);
        ran_ = true;
    }
    return report();
}

MetricsReport Simulation::report() const {
    MetricsReport r;
    r.scenario = scenario_.name;
    r.seed = scenario_.seed;
    r.duration = scenario_.duration;

    std::vector<SimTime> detections;
    for (const auto& [id, n] : nodes_) {
        auto& m = r.per_node[id];
        const auto& app = n->app;
        m["messages_offered"] = static_cast<double>(app.offered);
        m["messages_rejected"] = static_cast<double>(app.rejected);
        m["messages_delivered"] = static_cast<double>(app.delivered);
        m["bytes_delivered"] = static_cast<double>(app.delivered_bytes);
        m["corrupted_payloads_delivered"] = static_cast<double>(app.corrupted);
        m["order_violations"] = static_cast<double>(app.out_of_order);
        m["duplicate_deliveries"] = static_cast<double>(app.duplicates);
        m["node_unavailable_notices"] = static_cast<double>(app.node_unavailable_notices);
        m["unavailable_link_notices"] = static_cast<double>(app.unavailable_link_notices);

        sctp::AssociationCounters sum;
        std::uint64_t hb_acks = 0, hb_ack_bytes_est = 0;
        for (const auto& [peer, a] : n->sctp->associations()) {
            const auto& c = a->counters();
            sum.data_sent += c.data_sent;
            sum.data_bytes_sent += c.data_bytes_sent;
            sum.retransmissions += c.retransmissions;
            sum.fast_retransmissions += c.fast_retransmissions;
            sum.timeout_retransmissions += c.timeout_retransmissions;
            sum.duplicates_received += c.duplicates_received;
            sum.heartbeat_ticks += c.heartbeat_ticks;
            sum.heartbeats_sent += c.heartbeats_sent;
            sum.heartbeat_bytes += c.heartbeat_bytes;
            sum.heartbeats_suppressed += c.heartbeats_suppressed;
            sum.heartbeat_acks += c.heartbeat_acks;
            sum.path_failovers += c.path_failovers;
            sum.node_unavailable_events += c.node_unavailable_events;
            sum.rto_expiries += c.rto_expiries;
            sum.rto_expiries_frozen += c.rto_expiries_frozen;
            sum.freeze_windows += c.freeze_windows;
            sum.deferred_sends += c.deferred_sends;
            sum.sacks_sent += c.sacks_sent;
            sum.sacks_received += c.sacks_received;
            sum.sacks_ignored += c.sacks_ignored;
            sum.checksum_verifications += c.checksum_verifications;
            sum.checksum_verifications_skipped += c.checksum_verifications_skipped;
            sum.checksum_failures += c.checksum_failures;
            sum.link_ack_releases += c.link_ack_releases;
            sum.congestion_reactions += c.congestion_reactions;
            sum.claa_ignored += c.claa_ignored;
            for (const auto& e : a->emissions())
                if (e.kind == sctp::EmissionKind::HeartbeatAck) ++hb_acks;
            detections.insert(detections.end(), a->unavailable_log().begin(), a->unavailable_log().end());
        }
        // A heartbeat acknowledgement has the same encoded size as the heartbeat.
        if (sum.heartbeats_sent > 0) hb_ack_bytes_est = hb_acks * (sum.heartbeat_bytes / sum.heartbeats_sent);
        else hb_ack_bytes_est = hb_acks * 25;

        m["data_sent"] = static_cast<double>(sum.data_sent);
        m["data_bytes_sent"] = static_cast<double>(sum.data_bytes_sent);
        m["retransmissions"] = static_cast<double>(sum.retransmissions);
        m["fast_retransmissions"] = static_cast<double>(sum.fast_retransmissions);
        m["timeout_retransmissions"] = static_cast<double>(sum.timeout_retransmissions);
        m["spurious_retransmissions"] = static_cast<double>(sum.duplicates_received);
        m["heartbeat_ticks"] = static_cast<double>(sum.heartbeat_ticks);
        m["heartbeats_sent"] = static_cast<double>(sum.heartbeats_sent);
        m["heartbeats_suppressed"] = static_cast<double>(sum.heartbeats_suppressed);
        m["heartbeat_acks_sent"] = static_cast<double>(hb_acks);
        m["heartbeat_overhead_packets"] = static_cast<double>(sum.heartbeats_sent + hb_acks);
        m["heartbeat_overhead_bytes"] = static_cast<double>(sum.heartbeat_bytes + hb_ack_bytes_est);
        m["path_failovers"] = static_cast<double>(sum.path_failovers);
        m["node_unavailable_events"] = static_cast<double>(sum.node_unavailable_events);
        m["rto_expiries"] = static_cast<double>(sum.rto_expiries);
        m["rto_expiries_frozen"] = static_cast<double>(sum.rto_expiries_frozen);
        m["freeze_windows"] = static_cast<double>(sum.freeze_windows);
        m["deferred_sends"] = static_cast<double>(sum.deferred_sends);
        m["sacks_sent"] = static_cast<double>(sum.sacks_sent);
        m["sacks_ignored"] = static_cast<double>(sum.sacks_ignored);
        m["checksum_operations_at_transport"] = static_cast<double>(sum.checksum_verifications);
        m["checksum_verifications_skipped"] = static_cast<double>(sum.checksum_verifications_skipped);
        m["checksum_failures"] = static_cast<double>(sum.checksum_failures);
        m["link_ack_releases"] = static_cast<double>(sum.link_ack_releases);
        m["congestion_reactions"] = static_cast<double>(sum.congestion_reactions);
        m["claa_ignored"] = static_cast<double>(sum.claa_ignored);

        const auto& lc = n->link->counters();
        m["frames_sent"] = static_cast<double>(lc.frames_sent);
        m["frames_lost"] = static_cast<double>(lc.frames_lost);
        m["frames_received"] = static_cast<double>(lc.frames_received);
        m["link_retransmissions"] = static_cast<double>(lc.link_retx);
        m["crc_drops"] = static_cast<double>(lc.crc_drops);
        m["queue_drops"] = static_cast<double>(lc.queue_drops);
        m["zero_energy_drops"] = static_cast<double>(lc.zero_energy_drops);
        m["jitter_events"] = static_cast<double>(lc.jitter_events);
        m["retransmission_avoidance_events"] = static_cast<double>(lc.retx_avoidance_events);
        m["energy_decrease_events"] = static_cast<double>(lc.energy_decrease_events);
        m["link_bytes_sent"] = static_cast<double>(lc.bytes_sent);
        m["checksum_marks"] = static_cast<double>(lc.checksum_marks);
        m["energy_consumed"] = n->link->energy().consumed();
        m["energy_remaining"] = n->link->energy().remaining();

        const auto& oc = n->olsr->counters();
        m["hellos_sent"] = static_cast<double>(oc.hellos_sent);
        m["hellos_received"] = static_cast<double>(oc.hellos_received);
        m["tcs_sent"] = static_cast<double>(oc.tcs_sent);
        m["tcs_forwarded"] = static_cast<double>(oc.tcs_forwarded);
        m["olsr_lost_outcomes"] = static_cast<double>(oc.lost_outcomes);
        m["unavailable_link_events"] = static_cast<double>(oc.unavailable_link_events);
        m["route_changes"] = static_cast<double>(oc.route_changes);

        const auto& ic = n->ip->counters();
        m["ip_forwarded"] = static_cast<double>(ic.forwarded);
        m["no_route_drops"] = static_cast<double>(ic.no_route_drops);
        m["ttl_drops"] = static_cast<double>(ic.ttl_drops);
        m["ecn_marks"] = static_cast<double>(ic.ecn_marks);
        m["congestion_events"] = static_cast<double>(ic.congestion_events);
    }

    for (const auto& [id, m] : r.per_node)
        for (const auto& [k, v] : m)
            if (k != "energy_remaining") r.global[k] += v;

    auto& g = r.global;
    g["application_goodput"] = g["messages_delivered"];
    g["application_goodput_bytes"] = g["bytes_delivered"];
    g["spurious_retransmission_count"] = g["spurious_retransmissions"];

    std::sort(detections.begin(), detections.end());
    r.failures = failures_;
    double latency_sum = 0.0;
    std::size_t detected = 0;
    for (std::size_t i = 0; i < r.failures.size(); ++i) {
        auto& f = r.failures[i];
        const SimTime horizon =
            i + 1 < r.failures.size() ? r.failures[i + 1].time : std::numeric_limits<double>::infinity();
        auto it = std::lower_bound(detections.begin(), detections.end(), f.time);
        if (it != detections.end() && *it < horizon) {
            f.detection_latency = *it - f.time;
            latency_sum += *f.detection_latency;
            ++detected;
        }
    }
    g["failures"] = static_cast<double>(r.failures.size());
    g["failures_detected"] = static_cast<double>(detected);
    g["unavailability_detection_latency"] =
        detected ? latency_sum / static_cast<double>(detected) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

MetricsReport run_scenario(const Scenario& s, std::shared_ptr<const InteractionMatrix> matrix) {
    Simulation sim(s, std::move(matrix));
    return sim.run();
}

Comparison compare(const Scenario& s, const std::vector<ComparisonLeg>& legs,
                   std::shared_ptr<const InteractionMatrix> matrix) {
    if (legs.size() < 2) throw ScenarioError("compare needs at least two flag sets");
    Comparison c;
    for (const auto& leg : legs) {
        Scenario copy = s;
        copy.claa_default = leg.claa_default;
        copy.claa_flags = leg.flags;
        c.legs.push_back(leg.name);
        c.reports.push_back(run_scenario(copy, matrix));
    }
    return c;
}

std::vector<ComparisonLeg> parse_flag_sets(const nlohmann::ordered_json& j, const InteractionMatrix& matrix) {
    if (!j.is_object()) throw ScenarioError("flag sets: expected an object of named flag maps");
    std::vector<ComparisonLeg> legs;
    for (const auto& [name, flags] : j.items()) {
        if (!flags.is_object()) throw ScenarioError("flag set '" + name + "': expected an object");
        ComparisonLeg leg;
        leg.name = name;
        for (const auto& [id, on] : flags.items()) {
            if (!on.is_boolean()) throw ScenarioError("flag set '" + name + "': '" + id + "' must be a boolean");
            if (id == "*") {
                leg.claa_default = on.get<bool>();
                continue;
            }
            if (!matrix.find(id)) throw ScenarioError("flag set '" + name + "': unknown CLAA '" + id + "'");
            leg.flags[id] = on.get<bool>();
        }
        legs.push_back(std::move(leg));
    }
    if (legs.size() < 2) throw ScenarioError("compare needs at least two flag sets");
    return legs;
}

}  // namespace claa
