#include "claa/sctp.hpp"

#include <algorithm>
#include <cmath>

#include "claa/bytes.hpp"
#include "claa/checksum.hpp"

namespace claa::sctp {

namespace {

enum ChunkType : std::uint8_t { kData = 0, kSack = 3, kHeartbeat = 4, kHeartbeatAck = 5 };

constexpr std::size_t kChunkHeader = 4;
constexpr std::size_t kDataHeader = 8;

void write_chunk(ByteWriter& w, std::uint8_t type, std::uint8_t flags, const std::vector<std::uint8_t>& value) {
    w.u8(type);
    w.u8(flags);
    w.u16(static_cast<std::uint16_t>(kChunkHeader + value.size()));
    w.bytes(value);
}

}  // namespace

bool SackChunk::well_formed() const {
    std::uint32_t floor = cumulative_tsn;
    for (const auto& g : gaps) {
        if (g.start <= floor || g.end < g.start) return false;
        floor = g.end;
    }
    return true;
}

std::vector<std::uint8_t> encode(const Packet& packet) {
    ByteWriter w;
    w.u16(packet.src_port);
    w.u16(packet.dst_port);
    w.u32(packet.vtag);
    w.u32(0);
    for (const auto& chunk : packet.chunks) {
        ByteWriter v;
        if (const auto* d = std::get_if<DataChunk>(&chunk)) {
            v.u32(d->tsn);
            v.u16(d->stream);
            v.u16(d->ssn);
            v.bytes(d->payload);
            write_chunk(w, kData, 0, v.take());
        } else if (const auto* s = std::get_if<SackChunk>(&chunk)) {
            v.u32(s->cumulative_tsn);
            v.u16(static_cast<std::uint16_t>(s->gaps.size()));
            for (const auto& g : s->gaps) {
                v.u32(g.start);
                v.u32(g.end);
            }
            write_chunk(w, kSack, s->ecn_echo ? 1 : 0, v.take());
        } else if (const auto* h = std::get_if<HeartbeatChunk>(&chunk)) {
            v.u8(h->path);
            v.u64(h->sent_us);
            write_chunk(w, kHeartbeat, 0, v.take());
        } else {
            const auto& a = std::get<HeartbeatAckChunk>(chunk);
            v.u8(a.path);
            v.u64(a.sent_us);
            write_chunk(w, kHeartbeatAck, 0, v.take());
        }
    }
    auto bytes = w.take();
    const auto crc = checksum::transport_checksum(bytes, kChecksumOffset);
    checksum::store_be32(std::span(bytes).subspan(kChecksumOffset, 4), crc);
    return bytes;
}

Packet decode(std::span<const std::uint8_t> bytes) {
    try {
        ByteReader r(bytes);
        Packet p;
        p.src_port = r.u16();
        p.dst_port = r.u16();
        p.vtag = r.u32();
        r.u32();
        while (r.remaining() > 0) {
            const auto type = r.u8();
            const auto flags = r.u8();
            const auto length = r.u16();
            if (length < kChunkHeader) throw MalformedPacket("chunk length below header size");
            ByteReader v(r.bytes(length - kChunkHeader));
            switch (type) {
            case kData: {
                DataChunk d;
                d.tsn = v.u32();
                d.stream = v.u16();
                d.ssn = v.u16();
                auto rest = v.bytes(v.remaining());
                d.payload.assign(rest.begin(), rest.end());
                p.chunks.emplace_back(std::move(d));
                break;
            }
            case kSack: {
                SackChunk s;
                s.cumulative_tsn = v.u32();
                const auto n = v.u16();
                for (std::uint16_t i = 0; i < n; ++i) {
                    GapRange g;
                    g.start = v.u32();
                    g.end = v.u32();
                    s.gaps.push_back(g);
                }
                s.ecn_echo = (flags & 1) != 0;
                p.chunks.emplace_back(std::move(s));
                break;
            }
            case kHeartbeat:
            case kHeartbeatAck: {
                const auto path = v.u8();
                const auto sent = v.u64();
                if (type == kHeartbeat) p.chunks.emplace_back(HeartbeatChunk{path, sent});
                else p.chunks.emplace_back(HeartbeatAckChunk{path, sent});
                break;
            }
            default:
                throw MalformedPacket("unknown chunk type " + std::to_string(type));
            }
            if (v.remaining() != 0) throw MalformedPacket("trailing bytes in chunk");
        }
        return p;
    } catch (const ShortRead&) {
        throw MalformedPacket("truncated packet");
    }
}

bool checksum_valid(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kCommonHeaderBytes) return false;
    return checksum::load_be32(bytes.subspan(kChecksumOffset, 4)) ==
           checksum::transport_checksum(bytes, kChecksumOffset);
}

// ---------------------------------------------------------------------------

Association::Association(NodeId self, NodeId peer, std::vector<Address> peer_addresses, SctpConfig config,
                         Environment env)
    : self_(self),
      peer_(peer),
      config_(config),
      env_(std::move(env)),
      freeze_timer_(env_.sched),
      retry_timer_(env_.sched),
      tsn_next_(config.initial_tsn),
      cwnd_(config.initial_cwnd_mtus * config.mtu),
      ssthresh_(config.initial_ssthresh),
      last_cum_ack_(config.initial_tsn - 1),
      cum_tsn_received_(config.initial_tsn - 1) {
    if (peer_addresses.empty()) peer_addresses.push_back({peer, 0});
    for (const auto& a : peer_addresses) {
        PathState p;
        p.address = a;
        p.rto = std::clamp(config_.rto_initial, config_.rto_min, config_.rto_max);
        paths_.push_back(p);
        t3_.push_back(std::make_unique<Timer>(env_.sched));
        hb_timer_.push_back(std::make_unique<Timer>(env_.sched));
    }
}

void Association::start(SimTime now) {
    for (std::size_t i = 0; i < paths_.size(); ++i) schedule_heartbeat(i, now + paths_[i].rto + config_.hb_delay);
}

void Association::close() {
    closed_ = true;
    for (auto& t : t3_) t->cancel();
    for (auto& t : hb_timer_) t->cancel();
    freeze_timer_.cancel();
    retry_timer_.cancel();
}

std::size_t Association::send_message(std::uint16_t stream, std::vector<std::uint8_t> payload, SimTime now) {
    if (closed_) throw std::logic_error("association closed");
    if (std::none_of(paths_.begin(), paths_.end(), [](const PathState& p) { return p.state == PathStatus::Active; }))
        throw NoActivePath("no active path to node " + std::to_string(peer_));
    if (payload.size() + kCommonHeaderBytes + kChunkHeader + kDataHeader > config_.mtu) {
        ++counters_.messages_rejected;
        throw std::invalid_argument("message does not fit one MTU");
    }
    Outstanding o;
    o.chunk.tsn = tsn_next_++;
    o.chunk.stream = stream;
    o.chunk.ssn = next_ssn_out_[stream]++;
    o.chunk.payload = std::move(payload);
    queue_.emplace(o.chunk.tsn, std::move(o));

    const auto before = emissions_.size();
    try_send(now);
    return emissions_.size() - before;
}

std::size_t Association::flight_size() const {
    std::size_t bytes = 0;
    for (const auto& [tsn, o] : queue_)
        if (o.in_flight) bytes += o.chunk.payload.size();
    return bytes;
}

int Association::miss_reports(std::uint32_t tsn) const {
    auto it = queue_.find(tsn);
    return it == queue_.end() ? 0 : it->second.miss_reports;
}

std::size_t Association::pick_path() const {
    if (paths_[primary_].state == PathStatus::Active) return primary_;
    for (std::size_t i = 0; i < paths_.size(); ++i)
        if (paths_[i].state == PathStatus::Active) return i;
    return primary_;
}

double Association::effective_rto(std::size_t path) const {
    const double scale = adapt_active_ ? config_.adaptation_factor : 1.0;
    return std::min(paths_[path].rto * scale, config_.rto_max);
}

void Association::arm_t3(std::size_t path, SimTime at) {
    t3_[path]->arm_at(at, [this, path] { on_rto_expiry(path, env_.sched.now()); });
}

void Association::schedule_heartbeat(std::size_t path, SimTime at) {
    paths_[path].next_hb_time = at;
    hb_timer_[path]->arm_at(at, [this, path] { heartbeat_tick(path, env_.sched.now()); });
}

void Association::update_rtt(std::size_t path, double r) {
    auto& p = paths_[path];
    if (!p.srtt) {
        p.srtt = r;
        p.rttvar = r / 2.0;
    } else {
        p.rttvar = (1.0 - config_.rto_beta) * *p.rttvar + config_.rto_beta * std::abs(*p.srtt - r);
        p.srtt = (1.0 - config_.rto_alpha) * *p.srtt + config_.rto_alpha * r;
    }
    p.rto = std::clamp(*p.srtt + 4.0 * *p.rttvar, config_.rto_min, config_.rto_max);
}

void Association::congestion_halve() {
    ssthresh_ = std::max(cwnd_ / 2, config_.mtu);
    cwnd_ = ssthresh_;
    partial_bytes_acked_ = 0;
    ++counters_.congestion_reactions;
}

void Association::sample_counters(std::size_t path, SimTime now) {
    counter_log_.push_back({now, path, paths_[path].error_count, paths_[path].hb_unacked_count});
}

void Association::emit(Address dest, Packet packet, EmissionKind kind, std::uint32_t tsn, SimTime now) {
    packet.vtag = peer_;
    auto bytes = encode(packet);
    emissions_.push_back({now, kind, tsn, dest});
    Payload meta;
    if (kind == EmissionKind::Data || kind == EmissionKind::Retransmission) meta = {{"tsn", tsn}};
    if (kind == EmissionKind::Heartbeat) counters_.heartbeat_bytes += bytes.size();
    if (env_.output) env_.output(dest, std::move(bytes), std::move(meta));
}

void Association::transmit(Outstanding& o, std::uint32_t tsn, SimTime now) {
    const std::size_t path = pick_path();
    const bool retransmission = o.tx_count > 0;
    o.path = path;
    ++o.tx_count;
    o.sent_time = now;
    o.in_flight = true;
    o.link_acked = false;
    o.miss_reports = 0;
    if (retransmission) {
        ++counters_.retransmissions;
        if (o.fast) ++counters_.fast_retransmissions;
        else ++counters_.timeout_retransmissions;
    } else {
        ++counters_.data_sent;
        counters_.data_bytes_sent += o.chunk.payload.size();
    }
    o.rtx_pending = false;
    o.fast = false;
    Packet p;
    p.chunks.emplace_back(o.chunk);
    emit(paths_[path].address, std::move(p), retransmission ? EmissionKind::Retransmission : EmissionKind::Data, tsn,
         now);
    if (!t3_[path]->armed()) arm_t3(path, now + effective_rto(path));
}

void Association::try_send(SimTime now) {
    if (closed_ || frozen(now) || queue_.empty()) return;
    refresh_environment(now);

    auto defer = [&](Outstanding& o) {
        if (!o.deferred) {
            o.deferred = true;
            ++counters_.deferred_sends;
        }
        if (!retry_timer_.armed())
            retry_timer_.arm_in(config_.consult_retry, [this] { try_send(env_.sched.now()); });
    };

    std::size_t flight = flight_size();
    bool first = true;
    for (auto& [tsn, o] : queue_) {
        if (!o.rtx_pending) continue;
        const std::size_t size = o.chunk.payload.size();
        if (!o.fast && !first && flight + size > cwnd_) break;
        if (!consult(now)) return defer(o);
        transmit(o, tsn, now);
        flight += size;
        first = false;
    }
    for (auto& [tsn, o] : queue_) {
        if (o.tx_count > 0) continue;
        const std::size_t size = o.chunk.payload.size();
        if (flight > 0 && flight + size > cwnd_) break;
        if (!consult(now)) return defer(o);
        transmit(o, tsn, now);
        flight += size;
    }
}

void Association::on_packet(const Packet& packet, Address from, SimTime now) {
    for (const auto& chunk : packet.chunks) {
        if (const auto* d = std::get_if<DataChunk>(&chunk)) {
            on_data(*d, from, now);
        } else if (const auto* s = std::get_if<SackChunk>(&chunk)) {
            on_sack(*s, now);
        } else if (const auto* h = std::get_if<HeartbeatChunk>(&chunk)) {
            Packet reply;
            reply.chunks.emplace_back(HeartbeatAckChunk{h->path, h->sent_us});
            emit(from, std::move(reply), EmissionKind::HeartbeatAck, 0, now);
        } else {
            on_heartbeat_ack(std::get<HeartbeatAckChunk>(chunk), now);
        }
    }
}

void Association::on_data(const DataChunk& chunk, Address from, SimTime now) {
    if (chunk.tsn <= cum_tsn_received_ || received_above_.contains(chunk.tsn)) {
        ++counters_.duplicates_received;
    } else {
        received_above_.insert(chunk.tsn);
        while (!received_above_.empty() && *received_above_.begin() == cum_tsn_received_ + 1) {
            ++cum_tsn_received_;
            received_above_.erase(received_above_.begin());
        }
        auto& expected = next_ssn_in_[chunk.stream];
        auto& buffer = reorder_[chunk.stream];
        buffer.emplace(chunk.ssn, chunk.payload);
        for (auto it = buffer.find(expected); it != buffer.end(); it = buffer.find(expected)) {
            ++counters_.messages_delivered;
            counters_.bytes_delivered += it->second.size();
            if (env_.deliver) env_.deliver(peer_, chunk.stream, std::move(it->second));
            buffer.erase(it);
            ++expected;
        }
    }
    send_sack(from, now);
}

void Association::send_sack(Address to, SimTime now) {
    SackChunk s;
    s.cumulative_tsn = cum_tsn_received_;
    for (std::uint32_t tsn : received_above_) {
        if (!s.gaps.empty() && s.gaps.back().end + 1 == tsn) s.gaps.back().end = tsn;
        else s.gaps.push_back({tsn, tsn});
    }
    s.ecn_echo = ecn_echo_pending_;
    ecn_echo_pending_ = false;
    ++counters_.sacks_sent;
    Packet p;
    p.chunks.emplace_back(std::move(s));
    emit(to, std::move(p), EmissionKind::Sack, 0, now);
}

void Association::on_sack(const SackChunk& sack, SimTime now) {
    ++counters_.sacks_received;
    const std::uint32_t highest_sent = tsn_next_ - 1;
    const bool beyond = sack.cumulative_tsn > highest_sent || (!sack.gaps.empty() && sack.gaps.back().end > highest_sent);
    if (!sack.well_formed() || beyond || sack.cumulative_tsn < last_cum_ack_) {
        ++counters_.sacks_ignored;
        return;
    }
    if (sack.ecn_echo) congestion_halve();

    std::size_t bytes_acked = 0;
    std::set<std::size_t> acked_paths;
    std::optional<std::pair<std::size_t, SimTime>> timed;  // path, send time of a once-sent TSN
    for (auto it = queue_.begin(); it != queue_.end() && it->first <= sack.cumulative_tsn;) {
        auto& o = it->second;
        if (o.tx_count > 0) {
            if (!o.gap_acked) bytes_acked += o.chunk.payload.size();
            if (o.tx_count == 1) timed = {o.path, o.sent_time};
            acked_paths.insert(o.path);
        }
        it = queue_.erase(it);
    }
    for (const auto& g : sack.gaps) {
        for (auto it = queue_.lower_bound(g.start); it != queue_.end() && it->first <= g.end; ++it) {
            auto& o = it->second;
            if (o.tx_count == 0 || o.gap_acked) continue;
            o.gap_acked = true;
            o.in_flight = false;
            o.rtx_pending = false;
            o.fast = false;
            bytes_acked += o.chunk.payload.size();
            acked_paths.insert(o.path);
        }
    }
    const bool cum_advanced = sack.cumulative_tsn > last_cum_ack_;
    last_cum_ack_ = sack.cumulative_tsn;

    if (timed) update_rtt(timed->first, now - timed->second);
    for (std::size_t path : acked_paths) {
        if (paths_[path].error_count != 0) {
            paths_[path].error_count = 0;
            sample_counters(path, now);
        }
        set_active(path, now);
    }

    // Rule of four: a TSN below the highest gap-acked TSN and not itself
    // acknowledged collects one miss report per SACK.
    bool fast_any = false;
    if (!sack.gaps.empty()) {
        const std::uint32_t highest = sack.gaps.back().end;
        for (auto it = queue_.begin(); it != queue_.end() && it->first < highest; ++it) {
            auto& o = it->second;
            if (o.tx_count == 0 || o.gap_acked || o.rtx_pending) continue;
            if (++o.miss_reports < config_.fast_retransmit_reports) continue;
            o.miss_reports = 0;
            if (arq_active_) continue;  // link ARQ owns error correction toward this peer
            o.rtx_pending = true;
            o.fast = true;
            o.in_flight = false;
            fast_any = true;
        }
    }
    if (fast_any) {
        congestion_halve();
    } else if (bytes_acked > 0) {
        if (cwnd_ <= ssthresh_) {
            cwnd_ += std::min(bytes_acked, config_.mtu);
        } else {
            partial_bytes_acked_ += bytes_acked;
            if (partial_bytes_acked_ >= cwnd_) {
                partial_bytes_acked_ -= cwnd_;
                cwnd_ += config_.mtu;
            }
        }
    }

    for (std::size_t i = 0; i < paths_.size(); ++i) {
        const bool outstanding = std::any_of(queue_.begin(), queue_.end(), [i](const auto& kv) {
            return kv.second.path == i && kv.second.tx_count > 0 && !kv.second.gap_acked;
        });
        if (!outstanding) t3_[i]->cancel();
        else if (cum_advanced && !frozen(now)) arm_t3(i, now + effective_rto(i));
    }
    try_send(now);
}

void Association::on_rto_expiry(std::size_t path, SimTime now) {
    if (closed_) return;
    ++counters_.rto_expiries;
    if (frozen(now)) {
        // Reset the SACK timer for the new period; no backoff, no counters.
        ++counters_.rto_expiries_frozen;
        arm_t3(path, freeze_until_ + effective_rto(path));
        return;
    }
    bool any = false;
    for (auto& [tsn, o] : queue_) {
        if (o.path != path || o.tx_count == 0 || o.gap_acked) continue;
        any = true;
        o.in_flight = false;
        o.rtx_pending = true;
        o.fast = false;
    }
    if (!any) return;

    auto& p = paths_[path];
    p.error_count = std::min(p.error_count + 1, config_.path_max_retrans + 1);
    sample_counters(path, now);
    p.rto = std::min(p.rto * 2.0, config_.rto_max);
    ssthresh_ = std::max(cwnd_ / 2, 4 * config_.mtu);
    cwnd_ = config_.mtu;
    partial_bytes_acked_ = 0;
    if (p.error_count > config_.path_max_retrans) mark_path_inactive(path, now);
    try_send(now);
    if (!t3_[path]->armed()) {
        const bool left = std::any_of(queue_.begin(), queue_.end(), [path](const auto& kv) {
            return kv.second.path == path && kv.second.tx_count > 0 && !kv.second.gap_acked;
        });
        if (left) arm_t3(path, now + effective_rto(path));
    }
}

int Association::heartbeat_tick(std::size_t path, SimTime now) {
    if (closed_) return 0;
    ++counters_.heartbeat_ticks;
    auto& p = paths_[path];
    const double scale = adapt_active_ ? config_.adaptation_factor : 1.0;
    schedule_heartbeat(path, now + effective_rto(path) + config_.hb_delay * scale);
    refresh_environment(now);

    bool suppress = frozen(now) || energy_saving_;
    if (!suppress && env_.bus && env_.bus->enabled(ids::kCommonSignalization))
        suppress = env_.bus->read_state(LayerId::Sctp, ids::kCommonSignalization, now, p.address.node).present();
    if (!suppress) suppress = !consult(now);
    if (suppress) {
        ++counters_.heartbeats_suppressed;
        p.hb_suppressed_until = p.next_hb_time;
        return 0;
    }

    if (p.hb_outstanding) {
        p.hb_unacked_count = std::min(p.hb_unacked_count + 1, config_.hb_max_unacked);
        sample_counters(path, now);
        if (p.hb_unacked_count >= config_.hb_max_unacked) mark_path_inactive(path, now);
    }
    p.hb_outstanding = true;
    ++counters_.heartbeats_sent;
    Packet hb;
    hb.chunks.emplace_back(HeartbeatChunk{static_cast<std::uint8_t>(path),
                                          static_cast<std::uint64_t>(Scheduler::to_ticks(now))});
    emit(p.address, std::move(hb), EmissionKind::Heartbeat, 0, now);
    return 1;
}

void Association::on_heartbeat_ack(const HeartbeatAckChunk& ack, SimTime now) {
    if (ack.path >= paths_.size()) {
        ++counters_.sacks_ignored;
        return;
    }
    ++counters_.heartbeat_acks;
    auto& p = paths_[ack.path];
    p.hb_outstanding = false;
    if (p.hb_unacked_count != 0 || p.error_count != 0) {
        p.hb_unacked_count = 0;
        p.error_count = 0;
        sample_counters(ack.path, now);
    }
    update_rtt(ack.path, now - Scheduler::from_ticks(static_cast<std::int64_t>(ack.sent_us)));
    set_active(ack.path, now);
}

void Association::set_active(std::size_t path, SimTime now) {
    if (paths_[path].state == PathStatus::Active) return;
    paths_[path].state = PathStatus::Active;
    if (env_.bus) env_.bus->record_reachability(LayerId::Sctp, peer_, true, now);
    try_send(now);
}

void Association::mark_path_inactive(std::size_t path, SimTime now) {
    if (paths_[path].state == PathStatus::Inactive) return;
    paths_[path].state = PathStatus::Inactive;

    std::optional<std::size_t> alternate;
    for (std::size_t i = 0; i < paths_.size(); ++i)
        if (paths_[i].state == PathStatus::Active) {
            alternate = i;
            break;
        }
    if (alternate) {
        if (primary_ == path) primary_ = *alternate;
        ++counters_.path_failovers;
        for (auto& [tsn, o] : queue_) {
            if (o.path != path || o.tx_count == 0 || o.gap_acked) continue;
            o.in_flight = false;
            o.rtx_pending = true;
        }
        t3_[path]->cancel();
        try_send(now);
        return;
    }
    ++counters_.node_unavailable_events;
    unavailable_log_.push_back(now);
    if (env_.bus) {
        env_.bus->publish_event(LayerId::Sctp, ids::kNodeUnavailable, {{"node", peer_}, {"time", now}}, now);
        env_.bus->record_reachability(LayerId::Sctp, peer_, false, now);
    }
}

void Association::freeze(double duration, const std::string& cause, SimTime now) {
    if (closed_ || !(duration > 0.0)) return;
    const SimTime until = Scheduler::quantize(now + duration);
    freeze_log_.push_back({now, until, cause});
    ++counters_.freeze_windows;
    if (until <= freeze_until_) return;
    freeze_until_ = until;
    for (std::size_t i = 0; i < paths_.size(); ++i)
        if (t3_[i]->armed() && t3_[i]->expiry() <= until) arm_t3(i, until + effective_rto(i));
    freeze_timer_.arm_at(until + 1e-6, [this] { try_send(env_.sched.now()); });
}

void Association::on_claa(const EventRecord& e, SimTime now) {
    const auto& id = e.claa_id;
    const auto& pl = e.payload;
    if (id == ids::kJitter || id == ids::kRetransmissionAvoidance || id == ids::kUnavailableLink) {
        const double duration =
            pl.contains("duration") ? pl.at("duration").get<double>() : effective_rto(pick_path());
        freeze(duration, id, now);
        if (id == ids::kUnavailableLink)
            for (std::size_t i = 0; i < paths_.size(); ++i) mark_path_inactive(i, now);
    } else if (id == ids::kExplicitCongestion) {
        congestion_halve();
        ecn_echo_pending_ = true;
    } else if (id == ids::kAcknowledgement) {
        if (e.stage != 3) return;
        std::optional<bool> hint;
        if (pl.contains("one_hop_sym")) hint = pl.at("one_hop_sym").get<bool>();
        if (!directly_accessible(now, hint)) return;
        auto target = queue_.end();
        if (pl.contains("meta") && pl.at("meta").contains("tsn")) {
            target = queue_.find(pl.at("meta").at("tsn").get<std::uint32_t>());
        } else {
            for (auto it = queue_.begin(); it != queue_.end(); ++it)
                if (it->second.in_flight) target = it;
        }
        if (target == queue_.end() || !target->second.in_flight) return;
        target->second.in_flight = false;
        target->second.link_acked = true;
        ++counters_.link_ack_releases;
        try_send(now);
    } else if (id == ids::kEnergyDecrease) {
        energy_saving_ = true;
        congestion_halve();
    } else if (id == ids::kExplicitLoss) {
        for (auto it = queue_.rbegin(); it != queue_.rend(); ++it) {
            if (!it->second.in_flight) continue;
            it->second.in_flight = false;
            it->second.rtx_pending = true;
            break;
        }
        try_send(now);
    } else {
        ++counters_.claa_ignored;
    }
}

void Association::refresh_environment(SimTime now) {
    auto* bus = env_.bus;
    if (!bus) return;
    auto read = [&](std::string_view id, std::optional<NodeId> subject) -> std::optional<Payload> {
        if (!bus->enabled(id)) return std::nullopt;
        auto r = bus->read_state(LayerId::Sctp, id, now, subject);
        if (!r.present()) return std::nullopt;
        return r.entry->value;
    };

    bool any = false, bad = false, good = true;
    if (auto v = read(ids::kPacketLossRatio, peer_)) {
        const double x = v->value("ratio", 0.0);
        any = true;
        bad |= x >= config_.loss_bad;
        good &= x <= config_.loss_good;
    }
    if (auto v = read(ids::kSnr, peer_)) {
        const double x = v->value("snr_db", 0.0);
        any = true;
        bad |= x <= config_.snr_bad_db;
        good &= x >= config_.snr_good_db;
    }
    if (auto v = read(ids::kBer, peer_)) {
        const double x = v->value("ber", 0.0);
        any = true;
        bad |= x >= config_.ber_bad;
        good &= x <= config_.ber_good;
    }
    if (bad) adapt_active_ = true;
    else if (any && good) adapt_active_ = false;

    if (auto v = read(ids::kEnergyLevel, std::nullopt)) {
        if (v->value("fraction", 1.0) < config_.energy_low_fraction && !energy_saving_) {
            energy_saving_ = true;
            congestion_halve();
        }
    }
    if (!fec_active_ && bus->enabled(ids::kFec) && directly_accessible(now)) {
        bus->invoke_service(LayerId::Sctp, ids::kFec, {{"peer", peer_}, {"enable", true}}, now);
        fec_active_ = true;
    }
    if (!arq_active_ && bus->enabled(ids::kArq) && directly_accessible(now)) {
        bus->invoke_service(LayerId::Sctp, ids::kArq, {{"peer", peer_}, {"enable", true}}, now);
        arq_active_ = true;
    }
}

bool Association::consult(SimTime now) const {
    auto* bus = env_.bus;
    if (!bus) return true;
    if (bus->enabled(ids::kSuperstructures)) {
        auto r = bus->read_state(LayerId::Sctp, ids::kSuperstructures, now);
        if (r.status == ReadStatus::Expired) return false;
        if (r.present()) {
            const auto& snap = r.entry->value;
            bool known = false;
            for (const auto& route : snap.value("routes", Payload::array()))
                known |= route.value("dest", NodeId{0}) == peer_;
            if (!known) return false;
        }
    }
    if (bus->enabled(ids::kWirelessLinkStatus)) {
        auto r = bus->read_state(LayerId::Sctp, ids::kWirelessLinkStatus, now, peer_);
        if (r.present()) {
            const auto& v = r.entry->value;
            if (v.value("pending", false) || v.value("quality", 1.0) < config_.link_quality_send_threshold)
                return false;
        }
    }
    if (bus->enabled(ids::kCommonSignalization)) {
        auto r = bus->read_state(LayerId::Sctp, ids::kCommonSignalization, now, peer_);
        if (r.status == ReadStatus::Expired) return false;
    }
    return true;
}

bool Association::directly_accessible(SimTime now, std::optional<bool> one_hop_hint) const {
    auto* bus = env_.bus;
    if (!bus) return false;
    bool one_hop = false;
    if (one_hop_hint) {
        one_hop = *one_hop_hint;
    } else if (bus->enabled(ids::kSuperstructures)) {
        auto r = bus->read_state(LayerId::Sctp, ids::kSuperstructures, now);
        if (r.present())
            for (const auto& n : r.entry->value.value("symmetric_neighbors", Payload::array()))
                one_hop |= n.get<NodeId>() == peer_;
    }
    if (!one_hop || !bus->enabled(ids::kRss)) return false;
    auto r = bus->read_state(LayerId::Sctp, ids::kRss, now, peer_);
    return r.present() && r.entry->value.value("rss", 0.0) >= config_.rss_direct_threshold;
}

// ---------------------------------------------------------------------------

Endpoint::Endpoint(NodeId self, SctpConfig config, Scheduler& sched, EnvBus* bus, Output output)
    : self_(self), config_(config), sched_(sched), bus_(bus), output_(std::move(output)) {
    if (!bus_) return;
    for (auto id : {ids::kJitter, ids::kRetransmissionAvoidance, ids::kAcknowledgement, ids::kExplicitCongestion,
                    ids::kEnergyDecrease, ids::kUnavailableLink, ids::kCommonChecksum, ids::kExplicitLoss}) {
        if (!bus_->matrix().find(id) || !may_consume(bus_->matrix(), id, LayerId::Sctp)) continue;
        bus_->subscribe(LayerId::Sctp, id, [this](const EventRecord& e) { dispatch(e); });
    }
}

Association& Endpoint::associate(NodeId peer, std::vector<Address> addresses) {
    auto it = assocs_.find(peer);
    if (it != assocs_.end()) return *it->second;
    Environment env{sched_, bus_,
                    [this](Address dest, std::vector<std::uint8_t> bytes, Payload meta) {
                        if (alive_ && output_) output_(dest.node, std::move(bytes), std::move(meta));
                    },
                    [this](NodeId from, std::uint16_t stream, std::vector<std::uint8_t> msg) {
                        if (delivery_) delivery_(from, stream, std::move(msg));
                    }};
    auto a = std::make_unique<Association>(self_, peer, std::move(addresses), config_, std::move(env));
    auto& ref = *a;
    assocs_.emplace(peer, std::move(a));
    return ref;
}

Association* Endpoint::find(NodeId peer) {
    auto it = assocs_.find(peer);
    return it == assocs_.end() ? nullptr : it->second.get();
}

const Association* Endpoint::find(NodeId peer) const {
    auto it = assocs_.find(peer);
    return it == assocs_.end() ? nullptr : it->second.get();
}

bool Endpoint::has_pending(NodeId peer) const {
    const auto* a = find(peer);
    return a && a->has_pending();
}

void Endpoint::kill() {
    alive_ = false;
    for (auto& [peer, a] : assocs_) a->close();
}

void Endpoint::on_ip_packet(std::span<const std::uint8_t> bytes, NodeId src, NodeId neighbor,
                            std::uint32_t frame_seq, SimTime now) {
    if (!alive_) return;
    Association* a = find(src);
    if (!a) {
        a = &associate(src);
        a->start(now);
    }
    const bool marked = checksum_mark_ && checksum_mark_->first == neighbor && checksum_mark_->second == frame_seq;
    if (marked) checksum_mark_.reset();
    auto& c = a->counters();
    if (marked || a->fec_active()) {
        ++c.checksum_verifications_skipped;
    } else {
        ++c.checksum_verifications;
        if (!checksum_valid(bytes)) {
            ++c.checksum_failures;
            return;
        }
    }
    Packet p;
    try {
        p = decode(bytes);
    } catch (const MalformedPacket&) {
        ++malformed_;
        return;
    }
    if (a->closed()) return;
    a->on_packet(p, Address{src, 0}, now);
}

void Endpoint::dispatch(const EventRecord& e) {
    if (!alive_) return;
    const SimTime now = sched_.now();
    if (e.claa_id == ids::kCommonChecksum) {
        checksum_mark_ = {e.payload.value("from", NodeId{0}), e.payload.value("frame", std::uint32_t{0})};
        return;
    }
    const char* key = nullptr;
    if (e.claa_id == ids::kExplicitCongestion) key = "source";
    else if (e.claa_id == ids::kAcknowledgement) key = "neighbor";
    else if (e.payload.contains("destination")) key = "destination";

    if (key && e.payload.contains(key)) {
        if (auto* a = find(e.payload.at(key).get<NodeId>())) a->on_claa(e, now);
        return;
    }
    for (auto& [peer, a] : assocs_) a->on_claa(e, now);
}

}  // namespace claa::sctp
