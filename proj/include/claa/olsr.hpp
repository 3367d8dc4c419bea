#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "claa/env_bus.hpp"
#include "claa/rng.hpp"
#include "claa/scheduler.hpp"

namespace claa::olsr {

enum class LinkType : std::uint8_t { Sym = 1, Asym = 2, Lost = 3 };
enum class NeighborType : std::uint8_t { Sym = 1, Mpr = 2, NotNeigh = 3 };

struct HelloEntry {
    NodeId address;
    LinkType link;
    NeighborType neighbor;

    bool operator==(const HelloEntry&) const = default;
};

struct HelloMessage {
    NodeId originator = 0;
    double htime = 2.0;
    double vtime = 6.0;
    std::vector<HelloEntry> entries;

    bool operator==(const HelloMessage&) const = default;
};

struct TcMessage {
    NodeId originator = 0;
    std::uint16_t msg_seq = 0;
    std::uint16_t ansn = 0;
    double vtime = 15.0;
    std::uint8_t ttl = 255;
    std::vector<NodeId> advertised;

    bool operator==(const TcMessage&) const = default;
};

struct Packet {
    std::uint16_t packet_seq = 0;  // per interface, every OLSR packet
    std::variant<HelloMessage, TcMessage> message;

    bool operator==(const Packet&) const = default;
};

class MalformedPacket : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode(const Packet& packet);
Packet decode(std::span<const std::uint8_t> bytes);  // throws MalformedPacket

enum class LinkState { Symmetric, Asymmetric, Lost };

struct LinkTuple {
    NodeId local_iface = 0;
    NodeId neighbor_iface = 0;
    SimTime sym_time = 0.0;
    SimTime asym_time = 0.0;
    SimTime time = 0.0;
    double quality = 0.0;
    bool pending = false;

    // From the timers alone; hysteresis pending is separate.
    LinkState state(SimTime now) const {
        if (sym_time >= now) return LinkState::Symmetric;
        if (asym_time >= now) return LinkState::Asymmetric;
        return LinkState::Lost;
    }
};

struct TwoHopTuple {
    NodeId neighbor;
    NodeId two_hop;
    SimTime expiry;
};

struct MprSelectorTuple {
    NodeId selector;
    SimTime ms_time;
};

struct TopologyTuple {
    NodeId dest;
    NodeId last;
    std::uint16_t seq;
    SimTime t_time;
};

struct Route {
    NodeId dest;
    NodeId next_hop;
    int hops;

    bool operator==(const Route&) const = default;
};

using RoutingTable = std::map<NodeId, Route>;

// Greedy MPR cover: neighbors that are the only way to some 2-hop node first,
// then the neighbor covering most uncovered 2-hop nodes (lower address on ties).
// `two_hop` holds (neighbor, two-hop node) pairs.
std::set<NodeId> select_mprs(NodeId self, const std::set<NodeId>& sym_neighbors,
                             const std::vector<std::pair<NodeId, NodeId>>& two_hop);

// Breadth-first over symmetric neighbors, 2-hop pairs and topology pairs
// (last hop, destination). Next-hop ties go to the lower address.
RoutingTable compute_routes(NodeId self, const std::set<NodeId>& sym_neighbors,
                            const std::vector<std::pair<NodeId, NodeId>>& two_hop,
                            const std::vector<std::pair<NodeId, NodeId>>& topology);

enum class Outcome { Received, Lost };

struct HysteresisParams {
    double scaling = 0.5;
    double high = 0.8;
    double low = 0.3;
};

struct HysteresisState {
    double quality = 0.0;
    bool pending = true;
};

HysteresisState hysteresis_update(HysteresisState s, Outcome outcome, const HysteresisParams& params);

// Packets missing between two consecutive sequence numbers (16-bit wrap).
int sequence_gap(std::uint16_t previous, std::uint16_t current);

// Lost outcomes owed for a silence, one per whole Htime elapsed once the
// silence exceeds silence_factor * Htime, minus those already counted.
int silence_losses(SimTime last_rx, double htime, SimTime now, double silence_factor, int already_counted);

struct OlsrConfig {
    double hello_interval = 2.0;
    double refresh_interval = 2.0;
    double vtime = 6.0;
    double tc_interval = 5.0;
    double tc_vtime = 15.0;
    double jitter = 0.25;
    double neighb_hold_margin = 0.0;
    double silence_factor = 1.5;
    double housekeeping_interval = 0.5;
    double duplicate_hold = 30.0;
    bool use_hysteresis = true;
    bool snr_as_quality = false;
    double snr_quality_span_db = 30.0;  // SNR mapped linearly onto [0,1] over this span
    HysteresisParams hysteresis;
};

struct OlsrCounters {
    std::uint64_t hellos_sent = 0;
    std::uint64_t hellos_received = 0;
    std::uint64_t tcs_sent = 0;
    std::uint64_t tcs_received = 0;
    std::uint64_t tcs_forwarded = 0;
    std::uint64_t malformed = 0;
    std::uint64_t lost_outcomes = 0;
    std::uint64_t unavailable_link_events = 0;
    std::uint64_t route_changes = 0;
    std::uint64_t emissions_deferred = 0;
    std::uint64_t energy_events = 0;
};

class OlsrNode {
public:
    using Broadcast = std::function<void(std::vector<std::uint8_t>)>;
    using PendingQuery = std::function<bool(NodeId)>;
    using SnrQuery = std::function<std::optional<double>(NodeId)>;

    OlsrNode(NodeId self, OlsrConfig config, Scheduler& sched, EnvBus* bus, std::uint64_t seed);
    OlsrNode(const OlsrNode&) = delete;
    OlsrNode& operator=(const OlsrNode&) = delete;

    NodeId id() const { return self_; }
    const OlsrConfig& config() const { return config_; }

    void set_broadcast(Broadcast b) { broadcast_ = std::move(b); }
    void set_pending_query(PendingQuery q) { pending_ = std::move(q); }
    void set_snr_query(SnrQuery q) { snr_ = std::move(q); }

    // Schedules HELLO, TC and housekeeping from `first`.
    void start(SimTime first);
    void kill() { alive_ = false; }

    HelloMessage build_hello(SimTime now) const;
    HelloMessage emit_hello(SimTime now);

    void on_packet(std::span<const std::uint8_t> bytes, NodeId from, SimTime now);
    // A HELLO that arrived intact. Sequence-gap losses are charged by on_packet.
    void on_hello(const HelloMessage& msg, SimTime now);
    void on_tc(const TcMessage& msg, NodeId from, SimTime now);

    // Applies one outcome to the neighbor's link quality.
    void hysteresis_update(NodeId neighbor, Outcome outcome, SimTime now);
    // Silence-based losses for every neighbor; returns the neighbors charged, one entry per loss.
    std::vector<NodeId> detect_losses(SimTime now);

    struct ExpireResult {
        std::size_t removed = 0;
        std::vector<NodeId> unavailable;  // destinations announced
    };
    ExpireResult expire_and_notify(SimTime now);

    std::set<NodeId> symmetric_neighbors(SimTime now) const;
    bool is_symmetric_neighbor(NodeId n, SimTime now) const;
    const std::map<NodeId, LinkTuple>& link_set() const { return links_; }
    const std::vector<TwoHopTuple>& two_hop_set() const { return two_hop_; }
    const std::set<NodeId>& mpr_set() const { return mprs_; }
    const std::map<NodeId, MprSelectorTuple>& mpr_selectors() const { return selectors_; }
    const std::vector<TopologyTuple>& topology_set() const { return topology_; }
    const RoutingTable& routes() const { return routes_; }
    std::optional<NodeId> next_hop(NodeId dest) const;

    const OlsrCounters& counters() const { return counters_; }
    const std::vector<std::pair<SimTime, std::size_t>>& mpr_size_series() const { return mpr_series_; }

    nlohmann::json snapshot(SimTime now) const;

private:
    struct Tracker {
        std::optional<std::uint16_t> last_seq;
        SimTime last_rx = 0.0;
        double htime = 2.0;
        int silence_counted = 0;
    };

    void schedule_hello(SimTime t);
    void schedule_tc(SimTime t);
    void schedule_housekeeping(SimTime t);
    void emit_tc(SimTime now);
    void send(const Packet& p);
    void refresh(SimTime now, bool notify);
    void export_link(NodeId neighbor, SimTime now);
    void on_ack_stage2(const EventRecord& e);
    std::vector<std::pair<NodeId, NodeId>> two_hop_pairs(SimTime now) const;

    NodeId self_;
    OlsrConfig config_;
    Scheduler& sched_;
    EnvBus* bus_;
    Rng rng_;
    Broadcast broadcast_;
    PendingQuery pending_;
    SnrQuery snr_;
    bool alive_ = true;
    bool defer_next_emission_ = false;

    std::uint16_t packet_seq_ = 0;
    std::uint16_t msg_seq_ = 0;
    std::uint16_t ansn_ = 0;
    std::set<NodeId> last_advertised_;

    std::map<NodeId, LinkTuple> links_;
    std::map<NodeId, Tracker> trackers_;
    std::vector<TwoHopTuple> two_hop_;
    std::set<NodeId> mprs_;
    std::map<NodeId, MprSelectorTuple> selectors_;
    std::vector<TopologyTuple> topology_;
    std::map<std::pair<NodeId, std::uint16_t>, SimTime> duplicates_;
    RoutingTable routes_;

    OlsrCounters counters_;
    std::vector<std::pair<SimTime, std::size_t>> mpr_series_;
};

}  // namespace claa::olsr
