#include "claa/ip.hpp"

#include "claa/bytes.hpp"

namespace claa::ip {

std::vector<std::uint8_t> encode(const Datagram& d) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(d.protocol));
    w.u8(d.ecn);
    w.u8(d.ttl);
    w.u32(d.src);
    w.u32(d.dst);
    w.bytes(d.payload);
    return w.take();
}

Datagram decode(std::span<const std::uint8_t> bytes) {
    try {
        ByteReader r(bytes);
        Datagram d;
        const auto proto = r.u8();
        if (proto != 1 && proto != 2) throw MalformedDatagram("unknown protocol " + std::to_string(proto));
        d.protocol = static_cast<Protocol>(proto);
        d.ecn = r.u8();
        if (d.ecn > kCe) throw MalformedDatagram("bad ECN codepoint");
        d.ttl = r.u8();
        d.src = r.u32();
        d.dst = r.u32();
        auto rest = r.bytes(r.remaining());
        d.payload.assign(rest.begin(), rest.end());
        return d;
    } catch (const ShortRead&) {
        throw MalformedDatagram("truncated datagram");
    }
}

IpLayer::IpLayer(NodeId self, IpConfig config, link::LinkLayer& link, Scheduler& sched, EnvBus* bus)
    : self_(self), config_(config), link_(link), sched_(sched), bus_(bus) {}

void IpLayer::send_sctp(NodeId dest, std::vector<std::uint8_t> bytes, Payload meta) {
    if (!alive_) return;
    ++counters_.originated;
    Datagram d;
    d.protocol = Protocol::Sctp;
    d.ecn = kEct;
    d.ttl = config_.ttl;
    d.src = self_;
    d.dst = dest;
    d.payload = std::move(bytes);
    route_out(std::move(d), std::move(meta));
}

void IpLayer::send_olsr(std::vector<std::uint8_t> bytes) {
    if (!alive_) return;
    Datagram d;
    d.protocol = Protocol::Olsr;
    d.ttl = 1;
    d.src = self_;
    d.dst = link::kBroadcast;
    d.payload = std::move(bytes);
    link_.transmit(link::kBroadcast, encode(d));
}

void IpLayer::route_out(Datagram d, Payload meta) {
    const auto hop = route_ ? route_(d.dst) : std::nullopt;
    if (!hop) {
        ++counters_.no_route_drops;
        return;
    }
    if (d.ecn == kEct && link_.queue_length() >= config_.ecn_queue_threshold) {
        d.ecn = kCe;
        ++counters_.ecn_marks;
    }
    const NodeId dst = d.dst;
    link_.transmit(*hop, encode(d), dst, std::move(meta));
}

void IpLayer::on_frame(std::span<const std::uint8_t> payload, const link::RxInfo& rx) {
    if (!alive_) return;
    Datagram d;
    try {
        d = decode(payload);
    } catch (const MalformedDatagram&) {
        ++counters_.malformed;
        return;
    }
    if (d.protocol == Protocol::Olsr) {
        if (olsr_up_) olsr_up_(d.payload, rx.from);
        return;
    }
    if (d.dst != self_) {
        if (d.ttl <= 1) {
            ++counters_.ttl_drops;
            return;
        }
        --d.ttl;
        ++counters_.forwarded;
        route_out(std::move(d), nullptr);
        return;
    }
    ++counters_.delivered;
    if (d.ecn == kCe) {
        ++counters_.congestion_events;
        // The congestion was experienced on a remote hop; signal it upward here.
        if (bus_)
            bus_->publish_event(LayerId::Ip, ids::kExplicitCongestion, {{"source", d.src}}, sched_.now());
    }
    if (sctp_up_) sctp_up_(d.payload, d.src, rx);
}

}  // namespace claa::ip
