#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "claa/env_bus.hpp"
#include "claa/scheduler.hpp"

namespace claa::sctp {

struct Address {
    NodeId node = 0;
    std::uint8_t iface = 0;

    auto operator<=>(const Address&) const = default;
};

struct DataChunk {
    std::uint32_t tsn = 0;
    std::uint16_t stream = 0;
    std::uint16_t ssn = 0;
    std::vector<std::uint8_t> payload;

    bool operator==(const DataChunk&) const = default;
};

struct GapRange {
    std::uint32_t start;  // absolute TSNs, inclusive
    std::uint32_t end;

    bool operator==(const GapRange&) const = default;
};

struct SackChunk {
    std::uint32_t cumulative_tsn = 0;
    std::vector<GapRange> gaps;
    bool ecn_echo = false;

    // Gaps disjoint, ascending, all above the cumulative TSN.
    bool well_formed() const;

    bool operator==(const SackChunk&) const = default;
};

struct HeartbeatChunk {
    std::uint8_t path = 0;
    std::uint64_t sent_us = 0;

    bool operator==(const HeartbeatChunk&) const = default;
};

struct HeartbeatAckChunk {
    std::uint8_t path = 0;
    std::uint64_t sent_us = 0;

    bool operator==(const HeartbeatAckChunk&) const = default;
};

using Chunk = std::variant<DataChunk, SackChunk, HeartbeatChunk, HeartbeatAckChunk>;

struct Packet {
    std::uint16_t src_port = 5000;
    std::uint16_t dst_port = 5000;
    std::uint32_t vtag = 0;
    std::vector<Chunk> chunks;

    bool operator==(const Packet&) const = default;
};

inline constexpr std::size_t kChecksumOffset = 8;
inline constexpr std::size_t kCommonHeaderBytes = 12;

class MalformedPacket : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Serializes and stores the CRC-32c over the packet with the checksum field zeroed.
std::vector<std::uint8_t> encode(const Packet& packet);
Packet decode(std::span<const std::uint8_t> bytes);  // no checksum check
bool checksum_valid(std::span<const std::uint8_t> bytes);

class NoActivePath : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class PathStatus { Active, Inactive };

struct PathState {
    Address address;
    PathStatus state = PathStatus::Active;
    int error_count = 0;
    int hb_unacked_count = 0;
    double rto = 3.0;
    std::optional<double> srtt;
    std::optional<double> rttvar;
    SimTime next_hb_time = 0.0;
    SimTime hb_suppressed_until = 0.0;
    bool hb_outstanding = false;
};

struct SctpConfig {
    double rto_initial = 3.0;
    double rto_min = 1.0;
    double rto_max = 60.0;
    double rto_alpha = 0.125;
    double rto_beta = 0.25;
    int path_max_retrans = 5;
    int hb_max_unacked = 5;
    double hb_delay = 30.0;
    std::size_t mtu = 1200;
    std::size_t initial_cwnd_mtus = 4;
    std::size_t initial_ssthresh = 65536;
    std::uint32_t initial_tsn = 1;
    int fast_retransmit_reports = 4;
    double consult_retry = 0.5;
    double link_quality_send_threshold = 0.3;
    double rss_direct_threshold = 0.7;
    double loss_bad = 0.2;
    double loss_good = 0.05;
    double snr_bad_db = 10.0;
    double snr_good_db = 15.0;
    double ber_bad = 1e-4;
    double ber_good = 1e-6;
    double adaptation_factor = 2.0;
    double energy_low_fraction = 0.2;
};

struct AssociationCounters {
    std::uint64_t data_sent = 0;  // first transmissions of DATA chunks
    std::uint64_t data_bytes_sent = 0;
    std::uint64_t retransmissions = 0;
    std::uint64_t fast_retransmissions = 0;
    std::uint64_t timeout_retransmissions = 0;
    std::uint64_t duplicates_received = 0;  // DATA already held: a spurious retransmission by the peer
    std::uint64_t heartbeat_ticks = 0;
    std::uint64_t heartbeats_sent = 0;
    std::uint64_t heartbeat_bytes = 0;
    std::uint64_t heartbeats_suppressed = 0;
    std::uint64_t heartbeat_acks = 0;
    std::uint64_t path_failovers = 0;
    std::uint64_t node_unavailable_events = 0;
    std::uint64_t rto_expiries = 0;
    std::uint64_t rto_expiries_frozen = 0;
    std::uint64_t freeze_windows = 0;
    std::uint64_t deferred_sends = 0;
    std::uint64_t sacks_sent = 0;
    std::uint64_t sacks_received = 0;
    std::uint64_t sacks_ignored = 0;
    std::uint64_t messages_delivered = 0;
    std::uint64_t bytes_delivered = 0;
    std::uint64_t checksum_verifications = 0;
    std::uint64_t checksum_verifications_skipped = 0;
    std::uint64_t checksum_failures = 0;
    std::uint64_t link_ack_releases = 0;
    std::uint64_t congestion_reactions = 0;
    std::uint64_t claa_ignored = 0;
    std::uint64_t messages_rejected = 0;
};

enum class EmissionKind { Data, Retransmission, Sack, Heartbeat, HeartbeatAck };

struct Emission {
    SimTime time;
    EmissionKind kind;
    std::uint32_t tsn;  // DATA kinds only
    Address dest;
};

struct FreezeWindow {
    SimTime start;
    SimTime end;
    std::string cause;
};

struct CounterSample {
    SimTime time;
    std::size_t path;
    int error_count;
    int hb_unacked_count;
};

struct Environment {
    Scheduler& sched;
    EnvBus* bus = nullptr;
    std::function<void(Address dest, std::vector<std::uint8_t> bytes, Payload meta)> output;
    std::function<void(NodeId peer, std::uint16_t stream, std::vector<std::uint8_t> message)> deliver;
};

class Association {
public:
    Association(NodeId self, NodeId peer, std::vector<Address> peer_addresses, SctpConfig config, Environment env);
    Association(const Association&) = delete;
    Association& operator=(const Association&) = delete;

    NodeId peer() const { return peer_; }

    // Arms the heartbeat timers.
    void start(SimTime now);
    // Stops all timers; later sends throw.
    void close();
    bool closed() const { return closed_; }

    // Returns the number of packets emitted right away. Throws NoActivePath.
    std::size_t send_message(std::uint16_t stream, std::vector<std::uint8_t> payload, SimTime now);

    void on_packet(const Packet& packet, Address from, SimTime now);
    void on_data(const DataChunk& chunk, Address from, SimTime now);
    void on_sack(const SackChunk& sack, SimTime now);
    void on_rto_expiry(std::size_t path, SimTime now);
    int heartbeat_tick(std::size_t path, SimTime now);
    void on_heartbeat_ack(const HeartbeatAckChunk& ack, SimTime now);
    void mark_path_inactive(std::size_t path, SimTime now);

    // Exploitation of an event delivered by the environment bus.
    void on_claa(const EventRecord& event, SimTime now);

    // Opens (or extends) a window with no DATA/heartbeat emission and no counter growth.
    void freeze(double duration, const std::string& cause, SimTime now);
    bool frozen(SimTime now) const { return now <= freeze_until_; }
    SimTime freeze_until() const { return freeze_until_; }

    // Inbound packets from `neighbor` may skip transport checksum verification (FEC on that hop).
    bool fec_active() const { return fec_active_; }

    bool has_pending() const { return !queue_.empty(); }
    std::size_t outstanding() const { return queue_.size(); }
    std::size_t flight_size() const;
    std::size_t cwnd() const { return cwnd_; }
    std::size_t ssthresh() const { return ssthresh_; }
    void set_cwnd(std::size_t cwnd) { cwnd_ = cwnd; }
    std::uint32_t next_tsn() const { return tsn_next_; }
    const std::vector<PathState>& paths() const { return paths_; }
    std::size_t primary_path() const { return primary_; }
    int miss_reports(std::uint32_t tsn) const;

    const AssociationCounters& counters() const { return counters_; }
    AssociationCounters& counters() { return counters_; }
    const std::vector<Emission>& emissions() const { return emissions_; }
    const std::vector<FreezeWindow>& freeze_log() const { return freeze_log_; }
    const std::vector<CounterSample>& counter_log() const { return counter_log_; }
    const std::vector<SimTime>& unavailable_log() const { return unavailable_log_; }

private:
    struct Outstanding {
        DataChunk chunk;
        std::size_t path = 0;
        SimTime sent_time = 0.0;
        int tx_count = 0;
        int miss_reports = 0;
        bool in_flight = false;
        bool gap_acked = false;
        bool link_acked = false;
        bool rtx_pending = false;
        bool fast = false;
        bool deferred = false;
    };

    void try_send(SimTime now);
    void transmit(Outstanding& o, std::uint32_t tsn, SimTime now);
    void emit(Address dest, Packet packet, EmissionKind kind, std::uint32_t tsn, SimTime now);
    void send_sack(Address to, SimTime now);
    std::size_t pick_path() const;
    double effective_rto(std::size_t path) const;
    void arm_t3(std::size_t path, SimTime at);
    void schedule_heartbeat(std::size_t path, SimTime at);
    void update_rtt(std::size_t path, double sample);
    void congestion_halve();
    void sample_counters(std::size_t path, SimTime now);
    void refresh_environment(SimTime now);
    bool consult(SimTime now) const;
    bool directly_accessible(SimTime now, std::optional<bool> one_hop_hint = std::nullopt) const;
    void set_active(std::size_t path, SimTime now);

    NodeId self_;
    NodeId peer_;
    SctpConfig config_;
    Environment env_;
    bool closed_ = false;

    std::vector<PathState> paths_;
    std::size_t primary_ = 0;
    std::vector<std::unique_ptr<Timer>> t3_;
    std::vector<std::unique_ptr<Timer>> hb_timer_;
    Timer freeze_timer_;
    Timer retry_timer_;

    std::uint32_t tsn_next_;
    std::map<std::uint32_t, Outstanding> queue_;  // retransmit queue, keyed by TSN
    std::map<std::uint16_t, std::uint16_t> next_ssn_out_;
    std::size_t cwnd_;
    std::size_t ssthresh_;
    std::size_t partial_bytes_acked_ = 0;
    std::uint32_t last_cum_ack_;
    SimTime freeze_until_ = -std::numeric_limits<double>::infinity();

    // receiver side
    std::uint32_t cum_tsn_received_;
    std::set<std::uint32_t> received_above_;
    std::map<std::uint16_t, std::uint16_t> next_ssn_in_;
    std::map<std::uint16_t, std::map<std::uint16_t, std::vector<std::uint8_t>>> reorder_;
    bool ecn_echo_pending_ = false;

    // environment-driven state
    bool adapt_active_ = false;
    bool energy_saving_ = false;
    bool fec_active_ = false;
    bool arq_active_ = false;

    AssociationCounters counters_;
    std::vector<Emission> emissions_;
    std::vector<FreezeWindow> freeze_log_;
    std::vector<CounterSample> counter_log_;
    std::vector<SimTime> unavailable_log_;
};

// One node's SCTP instance: owns its associations, verifies inbound
// checksums and routes CLAA events to the right association.
class Endpoint {
public:
    using Output = std::function<void(NodeId dest, std::vector<std::uint8_t> bytes, Payload meta)>;
    using Delivery = std::function<void(NodeId peer, std::uint16_t stream, std::vector<std::uint8_t> message)>;

    Endpoint(NodeId self, SctpConfig config, Scheduler& sched, EnvBus* bus, Output output);
    Endpoint(const Endpoint&) = delete;
    Endpoint& operator=(const Endpoint&) = delete;

    void set_delivery(Delivery d) { delivery_ = std::move(d); }

    Association& associate(NodeId peer, std::vector<Address> addresses = {});
    Association* find(NodeId peer);
    const Association* find(NodeId peer) const;
    const std::map<NodeId, std::unique_ptr<Association>>& associations() const { return assocs_; }

    // `neighbor` and `frame_seq` identify the last-hop frame.
    void on_ip_packet(std::span<const std::uint8_t> bytes, NodeId src, NodeId neighbor, std::uint32_t frame_seq,
                      SimTime now);

    bool has_pending(NodeId peer) const;
    void kill();

    std::uint64_t malformed() const { return malformed_; }

private:
    void dispatch(const EventRecord& e);

    NodeId self_;
    SctpConfig config_;
    Scheduler& sched_;
    EnvBus* bus_;
    Output output_;
    Delivery delivery_;
    bool alive_ = true;
    std::map<NodeId, std::unique_ptr<Association>> assocs_;
    std::optional<std::pair<NodeId, std::uint32_t>> checksum_mark_;
    std::uint64_t malformed_ = 0;
};

}  // namespace claa::sctp
