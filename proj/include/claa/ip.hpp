#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "claa/env_bus.hpp"
#include "claa/link_phy.hpp"

namespace claa::ip {

enum class Protocol : std::uint8_t { Olsr = 1, Sctp = 2 };

// ECN codepoints, two bits as in the IP header.
inline constexpr std::uint8_t kNotEct = 0;
inline constexpr std::uint8_t kEct = 2;
inline constexpr std::uint8_t kCe = 3;

// protocol(1) ecn(1) ttl(1) src(4) dst(4)
inline constexpr std::size_t kHeaderBytes = 11;

struct Datagram {
    Protocol protocol = Protocol::Sctp;
    std::uint8_t ecn = kNotEct;
    std::uint8_t ttl = 16;
    NodeId src = 0;
    NodeId dst = 0;
    std::vector<std::uint8_t> payload;

    bool operator==(const Datagram&) const = default;
};

class MalformedDatagram : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode(const Datagram& d);
Datagram decode(std::span<const std::uint8_t> bytes);

struct IpConfig {
    std::uint8_t ttl = 16;
    std::size_t ecn_queue_threshold = 8;  // link queue occupancy that marks CE
};

struct IpCounters {
    std::uint64_t originated = 0;
    std::uint64_t forwarded = 0;
    std::uint64_t delivered = 0;
    std::uint64_t no_route_drops = 0;
    std::uint64_t ttl_drops = 0;
    std::uint64_t malformed = 0;
    std::uint64_t ecn_marks = 0;
    std::uint64_t congestion_events = 0;
};

// Forwards SCTP datagrams over the routes OLSR computed, carries OLSR
// broadcasts one hop, and marks CE when the outgoing link queue builds up.
class IpLayer {
public:
    using RouteLookup = std::function<std::optional<NodeId>(NodeId dest)>;
    using SctpUpcall = std::function<void(std::span<const std::uint8_t> bytes, NodeId src, const link::RxInfo& rx)>;
    using OlsrUpcall = std::function<void(std::span<const std::uint8_t> bytes, NodeId from)>;

    IpLayer(NodeId self, IpConfig config, link::LinkLayer& link, Scheduler& sched, EnvBus* bus);

    void set_route_lookup(RouteLookup r) { route_ = std::move(r); }
    void set_sctp_upcall(SctpUpcall u) { sctp_up_ = std::move(u); }
    void set_olsr_upcall(OlsrUpcall u) { olsr_up_ = std::move(u); }

    void send_sctp(NodeId dest, std::vector<std::uint8_t> bytes, Payload meta = nullptr);
    void send_olsr(std::vector<std::uint8_t> bytes);
    void on_frame(std::span<const std::uint8_t> payload, const link::RxInfo& rx);

    void kill() { alive_ = false; }
    const IpCounters& counters() const { return counters_; }

private:
    void route_out(Datagram d, Payload meta);

    NodeId self_;
    IpConfig config_;
    link::LinkLayer& link_;
    Scheduler& sched_;
    EnvBus* bus_;
    RouteLookup route_;
    SctpUpcall sctp_up_;
    OlsrUpcall olsr_up_;
    IpCounters counters_;
    bool alive_ = true;
};

}  // namespace claa::ip
