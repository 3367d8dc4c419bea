#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "claa/env_bus.hpp"
#include "claa/rng.hpp"
#include "claa/scheduler.hpp"

namespace claa::link {

inline constexpr NodeId kBroadcast = 0xFFFFFFFFu;

// Wire layout: dst(4) src(4) seq(4) flags(1) payload crc(4). The CRC trailer
// covers every byte before it.
inline constexpr std::size_t kHeaderBytes = 13;
inline constexpr std::size_t kTrailerBytes = 4;

struct Frame {
    NodeId src = 0;
    NodeId dst = kBroadcast;
    std::uint32_t seq = 0;
    bool needs_ack = false;
    std::vector<std::uint8_t> payload;
    std::uint32_t link_crc = 0;
    SimTime enqueue_time = 0.0;
    SimTime tx_time = 0.0;

    std::size_t wire_size() const { return kHeaderBytes + payload.size() + kTrailerBytes; }
};

// Serializes the frame and stamps link_crc from the encoded bytes.
std::vector<std::uint8_t> encode(Frame& frame);

class FrameDecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Parses header and payload; does not check the CRC.
Frame decode(std::span<const std::uint8_t> wire);
bool crc_ok(std::span<const std::uint8_t> wire);

class NoSuchLink : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

struct BerCurve {
    double snr_mid_db = 10.0;
    double ber_max = 0.5;

    // Logistic in SNR, nonincreasing, within [0, ber_max].
    double operator()(double snr_db) const;
};

struct FecModel {
    double exponent = 2.0;
    double byte_overhead = 0.125;

    double apply(double ber) const;
};

struct LinkParams {
    double snr_db = 30.0;
    double rss = 0.9;                // normalized [0,1]
    std::optional<double> ber;       // overrides the SNR curve when set
    double delay = 0.001;            // propagation, seconds
    bool up = true;
};

// Undirected links between nodes with their radio conditions.
class ChannelModel {
public:
    explicit ChannelModel(BerCurve curve = {}, FecModel fec = {}) : curve_(curve), fec_(fec) {}

    void add_link(NodeId a, NodeId b, LinkParams params);
    bool has_link(NodeId a, NodeId b) const;
    const LinkParams& params(NodeId a, NodeId b) const;  // throws NoSuchLink
    LinkParams& params(NodeId a, NodeId b);

    double raw_ber(NodeId a, NodeId b) const;
    double effective_ber(NodeId a, NodeId b) const;
    void set_fec(NodeId a, NodeId b, bool on);
    bool fec(NodeId a, NodeId b) const;

    std::vector<NodeId> neighbors(NodeId a) const;  // ascending, links that exist (up or down)

    const BerCurve& curve() const { return curve_; }
    const FecModel& fec_model() const { return fec_; }

private:
    static std::pair<NodeId, NodeId> key(NodeId a, NodeId b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }

    BerCurve curve_;
    FecModel fec_;
    std::map<std::pair<NodeId, NodeId>, LinkParams> links_;
    std::set<std::pair<NodeId, NodeId>> fec_on_;
};

class EnergyModel {
public:
    EnergyModel(double budget, double tx_cost_per_byte, double rx_cost_per_byte);

    // Debits up to `amount`; returns what was actually taken.
    double debit(double amount);
    double tx_cost(std::size_t bytes) const { return tx_cost_ * static_cast<double>(bytes); }
    double rx_cost(std::size_t bytes) const { return rx_cost_ * static_cast<double>(bytes); }

    double initial() const { return initial_; }
    double remaining() const { return initial_ - consumed_; }
    double consumed() const { return consumed_; }
    double fraction() const { return initial_ > 0 ? remaining() / initial_ : 0.0; }
    bool depleted() const { return remaining() <= 1e-12 * initial_; }

private:
    double initial_;
    double consumed_ = 0.0;
    double tx_cost_;
    double rx_cost_;
};

struct LinkConfig {
    double bitrate = 2e6;               // bits per second
    double sifs = 10e-6;
    double ack_timeout_margin = 1e-4;   // beyond the expected ACK instant
    double jitter_threshold = 0.05;     // queueing delay that raises the jitter event
    std::size_t queue_limit = 32;       // waiting frames that raise retransmission avoidance
    std::size_t queue_capacity = 128;   // hard cap, beyond which frames are dropped
    int arq_max_retries = 3;
    std::size_t loss_window_frames = 10;
    double loss_window_time = 10.0;
    double export_interval = 1.0;
    std::vector<double> energy_thresholds{0.5, 0.25, 0.1};
    double energy_budget = 1000.0;      // joules
    double tx_cost_per_byte = 2e-6;
    double rx_cost_per_byte = 1e-6;
};

struct LinkCounters {
    std::uint64_t frames_sent = 0;      // transmission attempts, including link retransmissions
    std::uint64_t frames_lost = 0;      // unicast frames never acknowledged at link level
    std::uint64_t frames_received = 0;  // passed CRC
    std::uint64_t link_retx = 0;
    std::uint64_t crc_drops = 0;
    std::uint64_t queue_drops = 0;
    std::uint64_t zero_energy_drops = 0;
    std::uint64_t jitter_events = 0;
    std::uint64_t retx_avoidance_events = 0;
    std::uint64_t energy_decrease_events = 0;
    std::uint64_t bytes_sent = 0;
    std::uint64_t checksum_marks = 0;
};

class Medium;

struct RxInfo {
    NodeId from = 0;
    std::uint32_t frame_seq = 0;
};

// Link and physical layers of one node.
class LinkLayer {
public:
    using Upcall = std::function<void(std::span<const std::uint8_t> payload, const RxInfo&)>;

    LinkLayer(NodeId self, LinkConfig config, Medium& medium, Scheduler& sched, EnvBus* bus);
    LinkLayer(const LinkLayer&) = delete;
    LinkLayer& operator=(const LinkLayer&) = delete;

    NodeId id() const { return self_; }

    void set_upcall(Upcall up) { upcall_ = std::move(up); }

    // Queue a frame. `final_dst` is the network destination carried in the
    // jitter event; `meta` rides along in acknowledgement events.
    void transmit(NodeId next_hop, std::vector<std::uint8_t> payload, std::optional<NodeId> final_dst = std::nullopt,
                  Payload meta = nullptr);

    // Frames waiting behind the one on air.
    std::size_t queue_length() const;

    // Holds the transmitter until `until` (contention, interference).
    void set_medium_busy(SimTime until);

    // Starts the periodic phy/link state export.
    void start(SimTime first_export);
    void export_phy_states(SimTime now);

    Payload fec_service(NodeId peer, bool enable);
    Payload arq_service(NodeId peer, bool enable);
    bool arq_enabled(NodeId peer) const { return arq_peers_.contains(peer); }

    void kill() { alive_ = false; }
    bool alive() const { return alive_; }

    const LinkCounters& counters() const { return counters_; }
    const EnergyModel& energy() const { return energy_; }

    // Loss ratio over the current window, absent when the window is empty.
    std::optional<double> loss_ratio(NodeId neighbor, SimTime now) const;

    // Called by the medium.
    void on_arrival(std::vector<std::uint8_t> wire, NodeId from, SimTime tx_end);
    void on_link_ack(std::uint32_t seq, NodeId from);

private:
    struct Pending {
        Frame frame;
        std::vector<std::uint8_t> wire;
        Payload meta;
        int attempts = 0;
        bool acked = false;
    };

    void enqueue(std::shared_ptr<Pending> p);
    void launch(std::shared_ptr<Pending> p);
    void on_ack_deadline(std::shared_ptr<Pending> p);
    void record_outcome(NodeId neighbor, bool lost);
    void debit(double amount);
    void publish_ack_chain(const Pending& p, SimTime now);
    void on_ack_stage1(const EventRecord& e);

    NodeId self_;
    LinkConfig config_;
    Medium& medium_;
    Scheduler& sched_;
    EnvBus* bus_;
    Upcall upcall_;
    EnergyModel energy_;
    LinkCounters counters_;

    std::uint32_t next_seq_ = 1;
    SimTime busy_until_ = 0.0;
    SimTime medium_busy_until_ = 0.0;
    std::deque<SimTime> scheduled_starts_;
    std::map<std::uint32_t, std::shared_ptr<Pending>> awaiting_ack_;
    std::set<NodeId> arq_peers_;
    std::map<NodeId, std::deque<std::pair<SimTime, bool>>> outcomes_;
    std::map<NodeId, SimTime> jitter_announced_until_;
    SimTime avoidance_announced_until_ = -1.0;
    bool alive_ = true;
};

// Shared radio medium: realizes bit errors and propagation between link layers.
class Medium {
public:
    Medium(ChannelModel channel, Scheduler& sched, std::uint64_t seed);

    ChannelModel& channel() { return channel_; }
    const ChannelModel& channel() const { return channel_; }

    void attach(LinkLayer& link);
    LinkLayer* find(NodeId id) const;

    // Called by a link layer when a frame finishes serialization at tx_end.
    void propagate(const LinkLayer& sender, const Frame& frame, const std::vector<std::uint8_t>& wire, SimTime tx_end);

    // Applies channel errors to a copy of `wire` for the (a,b) link.
    // Returns true when at least one bit was flipped.
    bool corrupt(NodeId a, NodeId b, std::vector<std::uint8_t>& wire);

private:
    ChannelModel channel_;
    Scheduler& sched_;
    Rng rng_;
    std::map<NodeId, LinkLayer*> links_;
};

}  // namespace claa::link
