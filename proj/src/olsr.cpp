#include "claa/olsr.hpp"

#include <algorithm>
#include <cmath>

#include "claa/bytes.hpp"

namespace claa::olsr {

namespace {

constexpr std::uint8_t kHelloType = 1;
constexpr std::uint8_t kTcType = 2;

std::uint32_t to_micros(double seconds) { return static_cast<std::uint32_t>(std::llround(seconds * 1e6)); }
double from_micros(std::uint32_t us) { return static_cast<double>(us) * 1e-6; }

// True when a is newer than b in 16-bit serial arithmetic.
bool seq_newer(std::uint16_t a, std::uint16_t b) { return static_cast<std::int16_t>(a - b) > 0; }

std::string_view state_name(LinkState s) {
    switch (s) {
        case LinkState::Symmetric: return "symmetric";
        case LinkState::Asymmetric: return "asymmetric";
        case LinkState::Lost: return "lost";
    }
    return "?";
}

}  // namespace

std::vector<std::uint8_t> encode(const Packet& packet) {
    ByteWriter w;
    if (const auto* hello = std::get_if<HelloMessage>(&packet.message)) {
        w.u8(kHelloType);
        w.u16(packet.packet_seq);
        w.u32(hello->originator);
        w.u32(to_micros(hello->htime));
        w.u32(to_micros(hello->vtime));
        w.u16(static_cast<std::uint16_t>(hello->entries.size()));
        for (const auto& e : hello->entries) {
            w.u32(e.address);
            w.u8(static_cast<std::uint8_t>(e.link));
            w.u8(static_cast<std::uint8_t>(e.neighbor));
        }
    } else {
        const auto& tc = std::get<TcMessage>(packet.message);
        w.u8(kTcType);
        w.u16(packet.packet_seq);
        w.u32(tc.originator);
        w.u16(tc.msg_seq);
        w.u16(tc.ansn);
        w.u32(to_micros(tc.vtime));
        w.u8(tc.ttl);
        w.u16(static_cast<std::uint16_t>(tc.advertised.size()));
        for (NodeId a : tc.advertised) w.u32(a);
    }
    return w.take();
}

Packet decode(std::span<const std::uint8_t> bytes) {
    try {
        ByteReader r(bytes);
        Packet p;
        const std::uint8_t type = r.u8();
        p.packet_seq = r.u16();
        if (type == kHelloType) {
            HelloMessage h;
            h.originator = r.u32();
            h.htime = from_micros(r.u32());
            h.vtime = from_micros(r.u32());
            const std::uint16_t n = r.u16();
            std::set<NodeId> seen;
            for (std::uint16_t i = 0; i < n; ++i) {
                HelloEntry e;
                e.address = r.u32();
                const std::uint8_t lt = r.u8();
                const std::uint8_t nt = r.u8();
                if (lt < 1 || lt > 3 || nt < 1 || nt > 3) throw MalformedPacket("bad link code");
                if (!seen.insert(e.address).second) throw MalformedPacket("address listed twice");
                e.link = static_cast<LinkType>(lt);
                e.neighbor = static_cast<NeighborType>(nt);
                h.entries.push_back(e);
            }
            if (!(h.vtime > 0.0)) throw MalformedPacket("zero validity");
            p.message = std::move(h);
        } else if (type == kTcType) {
            TcMessage tc;
            tc.originator = r.u32();
            tc.msg_seq = r.u16();
            tc.ansn = r.u16();
            tc.vtime = from_micros(r.u32());
            tc.ttl = r.u8();
            const std::uint16_t n = r.u16();
            for (std::uint16_t i = 0; i < n; ++i) tc.advertised.push_back(r.u32());
            p.message = std::move(tc);
        } else {
            throw MalformedPacket("unknown message type");
        }
        if (r.remaining() != 0) throw MalformedPacket("trailing bytes");
        return p;
    } catch (const ShortRead&) {
        throw MalformedPacket("truncated packet");
    }
}

std::set<NodeId> select_mprs(NodeId self, const std::set<NodeId>& sym_neighbors,
                             const std::vector<std::pair<NodeId, NodeId>>& two_hop) {
    std::map<NodeId, std::set<NodeId>> cover;  // neighbor -> strict 2-hop nodes it reaches
    std::set<NodeId> strict;
    for (const auto& [nb, th] : two_hop) {
        if (!sym_neighbors.contains(nb) || th == self || sym_neighbors.contains(th)) continue;
        cover[nb].insert(th);
        strict.insert(th);
    }

    std::set<NodeId> mprs;
    for (NodeId th : strict) {
        std::optional<NodeId> only;
        int providers = 0;
        for (const auto& [nb, reach] : cover)
            if (reach.contains(th)) {
                ++providers;
                only = nb;
            }
        if (providers == 1) mprs.insert(*only);
    }

    std::set<NodeId> covered;
    for (NodeId m : mprs) covered.insert(cover[m].begin(), cover[m].end());
    while (covered.size() < strict.size()) {
        NodeId best = 0;
        std::size_t best_gain = 0;
        for (const auto& [nb, reach] : cover) {  // ascending, so ties keep the lower address
            if (mprs.contains(nb)) continue;
            std::size_t gain = 0;
            for (NodeId th : reach) gain += covered.contains(th) ? 0 : 1;
            if (gain > best_gain) {
                best_gain = gain;
                best = nb;
            }
        }
        if (best_gain == 0) break;
        mprs.insert(best);
        covered.insert(cover[best].begin(), cover[best].end());
    }
    return mprs;
}

RoutingTable compute_routes(NodeId self, const std::set<NodeId>& sym_neighbors,
                            const std::vector<std::pair<NodeId, NodeId>>& two_hop,
                            const std::vector<std::pair<NodeId, NodeId>>& topology) {
    RoutingTable table;
    for (NodeId n : sym_neighbors)
        if (n != self) table[n] = Route{n, n, 1};

    std::map<NodeId, std::set<NodeId>> edges;
    for (const auto& [nb, th] : two_hop)
        if (sym_neighbors.contains(nb)) edges[nb].insert(th);
    for (const auto& [last, dest] : topology) edges[last].insert(dest);

    for (int hops = 1;; ++hops) {
        std::map<NodeId, NodeId> next;  // dest -> best next hop at hops+1
        for (const auto& [dest, route] : table) {
            if (route.hops != hops) continue;
            auto it = edges.find(dest);
            if (it == edges.end()) continue;
            for (NodeId v : it->second) {
                if (v == self || table.contains(v)) continue;
                auto [slot, inserted] = next.emplace(v, route.next_hop);
                if (!inserted) slot->second = std::min(slot->second, route.next_hop);
            }
        }
        if (next.empty()) break;
        for (const auto& [v, nh] : next) table[v] = Route{v, nh, hops + 1};
    }
    return table;
}

HysteresisState hysteresis_update(HysteresisState s, Outcome outcome, const HysteresisParams& params) {
    const double a = params.scaling;
    s.quality = outcome == Outcome::Received ? (1.0 - a) * s.quality + a : (1.0 - a) * s.quality;
    s.quality = std::clamp(s.quality, 0.0, 1.0);
    if (s.quality >= params.high) s.pending = false;
    else if (s.quality <= params.low) s.pending = true;
    return s;
}

int sequence_gap(std::uint16_t previous, std::uint16_t current) {
    const auto diff = static_cast<std::uint16_t>(current - previous);
    if (diff == 0 || diff >= 0x8000) return 0;  // duplicate or reordered
    return diff - 1;
}

int silence_losses(SimTime last_rx, double htime, SimTime now, double silence_factor, int already_counted) {
    if (htime <= 0.0) return 0;
    const double silence = now - last_rx;
    if (silence <= silence_factor * htime) return 0;
    const int owed = static_cast<int>(std::floor(silence / htime + 1e-9));
    return std::max(0, owed - already_counted);
}

OlsrNode::OlsrNode(NodeId self, OlsrConfig config, Scheduler& sched, EnvBus* bus, std::uint64_t seed)
    : self_(self), config_(config), sched_(sched), bus_(bus), rng_(Rng::stream(seed, 0x6f6c7372ULL + self)) {
    if (config_.hello_interval > config_.refresh_interval)
        throw std::invalid_argument("HELLO_INTERVAL must not exceed REFRESH_INTERVAL");
    if (config_.hysteresis.high < config_.hysteresis.low)
        throw std::invalid_argument("hysteresis high threshold below low threshold");
    if (config_.vtime < config_.hello_interval) throw std::invalid_argument("Vtime shorter than Htime");
    if (bus_) {
        bus_->subscribe(LayerId::Olsr, ids::kAcknowledgement, [this](const EventRecord& e) { on_ack_stage2(e); });
        bus_->subscribe(LayerId::Olsr, ids::kRetransmissionAvoidance,
                        [this](const EventRecord&) { defer_next_emission_ = true; });
        bus_->subscribe(LayerId::Olsr, ids::kEnergyDecrease, [this](const EventRecord&) { ++counters_.energy_events; });
    }
}

void OlsrNode::start(SimTime first) {
    schedule_hello(first + rng_.uniform(0.0, config_.jitter));
    schedule_tc(first + config_.tc_interval + rng_.uniform(-config_.jitter, config_.jitter));
    schedule_housekeeping(first + config_.housekeeping_interval);
}

void OlsrNode::schedule_hello(SimTime t) {
    sched_.schedule_at(t, [this] {
        if (!alive_) return;
        const SimTime now = sched_.now();
        if (defer_next_emission_) {
            defer_next_emission_ = false;
            ++counters_.emissions_deferred;
        } else {
            emit_hello(now);
        }
        schedule_hello(now + config_.hello_interval + rng_.uniform(-config_.jitter, config_.jitter));
    });
}

void OlsrNode::schedule_tc(SimTime t) {
    sched_.schedule_at(t, [this] {
        if (!alive_) return;
        const SimTime now = sched_.now();
        emit_tc(now);
        schedule_tc(now + config_.tc_interval + rng_.uniform(-config_.jitter, config_.jitter));
    });
}

void OlsrNode::schedule_housekeeping(SimTime t) {
    sched_.schedule_at(t, [this] {
        if (!alive_) return;
        const SimTime now = sched_.now();
        detect_losses(now);
        expire_and_notify(now);
        schedule_housekeeping(now + config_.housekeeping_interval);
    });
}

void OlsrNode::send(const Packet& p) {
    Packet out = p;
    out.packet_seq = ++packet_seq_;
    if (broadcast_) broadcast_(encode(out));
}

HelloMessage OlsrNode::build_hello(SimTime now) const {
    HelloMessage h;
    h.originator = self_;
    h.htime = config_.hello_interval;
    h.vtime = config_.vtime;
    for (const auto& [nb, t] : links_) {
        if (t.time < now) continue;
        LinkType lt = LinkType::Lost;
        if (!t.pending) {
            switch (t.state(now)) {
                case LinkState::Symmetric: lt = LinkType::Sym; break;
                case LinkState::Asymmetric: lt = LinkType::Asym; break;
                case LinkState::Lost: lt = LinkType::Lost; break;
            }
        }
        NeighborType nt = NeighborType::NotNeigh;
        if (mprs_.contains(nb)) nt = NeighborType::Mpr;
        else if (is_symmetric_neighbor(nb, now)) nt = NeighborType::Sym;
        h.entries.push_back({nb, lt, nt});
    }
    return h;
}

HelloMessage OlsrNode::emit_hello(SimTime now) {
    expire_and_notify(now);
    HelloMessage h = build_hello(now);
    send(Packet{0, h});
    ++counters_.hellos_sent;
    return h;
}

void OlsrNode::emit_tc(SimTime now) {
    expire_and_notify(now);
    std::set<NodeId> advertised;
    for (const auto& [sel, t] : selectors_) advertised.insert(sel);
    if (advertised.empty() && last_advertised_.empty()) return;
    if (advertised != last_advertised_) ++ansn_;
    last_advertised_ = advertised;
    TcMessage tc;
    tc.originator = self_;
    tc.msg_seq = ++msg_seq_;
    tc.ansn = ansn_;
    tc.vtime = config_.tc_vtime;
    tc.advertised.assign(advertised.begin(), advertised.end());
    duplicates_[{self_, tc.msg_seq}] = now + config_.duplicate_hold;
    send(Packet{0, tc});
    ++counters_.tcs_sent;
}

void OlsrNode::on_packet(std::span<const std::uint8_t> bytes, NodeId from, SimTime now) {
    if (!alive_) return;
    Packet p;
    try {
        p = decode(bytes);
    } catch (const MalformedPacket&) {
        ++counters_.malformed;
        return;
    }
    if (const auto* h = std::get_if<HelloMessage>(&p.message); h && h->originator != from) {
        ++counters_.malformed;
        return;
    }

    auto& tr = trackers_[from];
    if (tr.last_seq) {
        const int gap = sequence_gap(*tr.last_seq, p.packet_seq);
        for (int i = 0; i < gap; ++i) hysteresis_update(from, Outcome::Lost, now);
    }
    tr.last_seq = p.packet_seq;
    tr.last_rx = now;
    tr.silence_counted = 0;

    if (const auto* h = std::get_if<HelloMessage>(&p.message)) {
        tr.htime = h->htime;
        on_hello(*h, now);
    } else {
        on_tc(std::get<TcMessage>(p.message), from, now);
    }
}

void OlsrNode::on_hello(const HelloMessage& msg, SimTime now) {
    if (!alive_) return;
    ++counters_.hellos_received;
    const NodeId b = msg.originator;
    auto [it, created] = links_.try_emplace(b);
    LinkTuple& t = it->second;
    if (created) {
        t.local_iface = self_;
        t.neighbor_iface = b;
        t.sym_time = now - 1.0;
        t.asym_time = now - 1.0;
        t.time = now + msg.vtime;
        t.quality = 0.0;
        t.pending = config_.use_hysteresis;
    }
    t.asym_time = now + msg.vtime;
    const auto self_entry = std::find_if(msg.entries.begin(), msg.entries.end(),
                                         [this](const HelloEntry& e) { return e.address == self_; });
    if (self_entry != msg.entries.end()) {
        if (self_entry->link == LinkType::Lost) t.sym_time = now - 1.0;
        else t.sym_time = now + msg.vtime;
    }
    t.time = std::max({t.time, t.asym_time + config_.neighb_hold_margin, t.sym_time + config_.neighb_hold_margin});
    trackers_[b].htime = msg.htime;
    hysteresis_update(b, Outcome::Received, now);

    if (bus_ && bus_->enabled(ids::kCommonSignalization))
        bus_->export_state(LayerId::Olsr, ids::kCommonSignalization,
                           {{"last_rx", now}, {"htime", msg.htime}, {"vtime", msg.vtime}}, now, msg.vtime, b);

    if (is_symmetric_neighbor(b, now)) {
        for (const auto& e : msg.entries) {
            if (e.address == self_) continue;
            auto match = [&](const TwoHopTuple& th) { return th.neighbor == b && th.two_hop == e.address; };
            if (e.neighbor == NeighborType::Sym || e.neighbor == NeighborType::Mpr) {
                auto found = std::find_if(two_hop_.begin(), two_hop_.end(), match);
                if (found != two_hop_.end()) found->expiry = now + msg.vtime;
                else two_hop_.push_back({b, e.address, now + msg.vtime});
            } else {
                std::erase_if(two_hop_, match);
            }
        }
        if (self_entry != msg.entries.end() && self_entry->neighbor == NeighborType::Mpr)
            selectors_[b] = MprSelectorTuple{b, now + msg.vtime};
    }
    expire_and_notify(now);
}

void OlsrNode::on_tc(const TcMessage& msg, NodeId from, SimTime now) {
    if (!alive_) return;
    ++counters_.tcs_received;
    if (msg.originator == self_ || !is_symmetric_neighbor(from, now)) return;
    const auto key = std::make_pair(msg.originator, msg.msg_seq);
    if (auto d = duplicates_.find(key); d != duplicates_.end() && d->second >= now) return;
    duplicates_[key] = now + config_.duplicate_hold;

    const bool stale = std::any_of(topology_.begin(), topology_.end(), [&](const TopologyTuple& t) {
        return t.last == msg.originator && seq_newer(t.seq, msg.ansn);
    });
    if (!stale) {
        std::erase_if(topology_, [&](const TopologyTuple& t) {
            return t.last == msg.originator && seq_newer(msg.ansn, t.seq);
        });
        for (NodeId dest : msg.advertised) {
            if (dest == self_) continue;
            auto found = std::find_if(topology_.begin(), topology_.end(), [&](const TopologyTuple& t) {
                return t.last == msg.originator && t.dest == dest;
            });
            if (found != topology_.end()) {
                found->t_time = now + msg.vtime;
                found->seq = msg.ansn;
            } else {
                topology_.push_back({dest, msg.originator, msg.ansn, now + msg.vtime});
            }
        }
    }

    if (auto sel = selectors_.find(from); sel != selectors_.end() && sel->second.ms_time >= now && msg.ttl > 1) {
        TcMessage fwd = msg;
        fwd.ttl = static_cast<std::uint8_t>(msg.ttl - 1);
        send(Packet{0, fwd});
        ++counters_.tcs_forwarded;
    }
    expire_and_notify(now);
}

void OlsrNode::hysteresis_update(NodeId neighbor, Outcome outcome, SimTime now) {
    auto it = links_.find(neighbor);
    if (it == links_.end()) return;
    LinkTuple& t = it->second;
    if (outcome == Outcome::Lost) ++counters_.lost_outcomes;
    HysteresisState s{t.quality, t.pending};
    if (config_.snr_as_quality && snr_) {
        if (auto snr = snr_(neighbor)) s.quality = std::clamp(*snr / config_.snr_quality_span_db, 0.0, 1.0);
    }
    s = olsr::hysteresis_update(s, outcome, config_.hysteresis);
    t.quality = s.quality;
    t.pending = config_.use_hysteresis ? s.pending : false;
    export_link(neighbor, now);
}

std::vector<NodeId> OlsrNode::detect_losses(SimTime now) {
    std::vector<NodeId> charged;
    for (auto& [nb, tr] : trackers_) {
        if (!links_.contains(nb)) continue;
        const int n = silence_losses(tr.last_rx, tr.htime, now, config_.silence_factor, tr.silence_counted);
        for (int i = 0; i < n; ++i) {
            hysteresis_update(nb, Outcome::Lost, now);
            charged.push_back(nb);
        }
        tr.silence_counted += n;
    }
    return charged;
}

void OlsrNode::export_link(NodeId neighbor, SimTime now) {
    if (!bus_ || !bus_->enabled(ids::kWirelessLinkStatus)) return;
    auto it = links_.find(neighbor);
    if (it == links_.end()) return;
    bus_->export_state(LayerId::Olsr, ids::kWirelessLinkStatus,
                       {{"quality", it->second.quality}, {"pending", it->second.pending}}, now, config_.vtime,
                       neighbor);
}

bool OlsrNode::is_symmetric_neighbor(NodeId n, SimTime now) const {
    auto it = links_.find(n);
    return it != links_.end() && it->second.time >= now && it->second.state(now) == LinkState::Symmetric &&
           !it->second.pending;
}

std::set<NodeId> OlsrNode::symmetric_neighbors(SimTime now) const {
    std::set<NodeId> out;
    for (const auto& [nb, t] : links_)
        if (is_symmetric_neighbor(nb, now)) out.insert(nb);
    return out;
}

std::vector<std::pair<NodeId, NodeId>> OlsrNode::two_hop_pairs(SimTime now) const {
    std::vector<std::pair<NodeId, NodeId>> out;
    for (const auto& t : two_hop_)
        if (t.expiry >= now) out.emplace_back(t.neighbor, t.two_hop);
    return out;
}

OlsrNode::ExpireResult OlsrNode::expire_and_notify(SimTime now) {
    ExpireResult result;
    result.removed += std::erase_if(links_, [now](const auto& kv) { return kv.second.time < now; });
    std::erase_if(trackers_, [this](const auto& kv) { return !links_.contains(kv.first); });
    const auto sym = symmetric_neighbors(now);
    result.removed += std::erase_if(two_hop_, [&](const TwoHopTuple& t) {
        return t.expiry < now || !sym.contains(t.neighbor);
    });
    result.removed += std::erase_if(selectors_, [now](const auto& kv) { return kv.second.ms_time < now; });
    result.removed += std::erase_if(topology_, [now](const TopologyTuple& t) { return t.t_time < now; });
    std::erase_if(duplicates_, [now](const auto& kv) { return kv.second < now; });

    const auto pairs = two_hop_pairs(now);
    auto mprs = select_mprs(self_, sym, pairs);
    if (mprs != mprs_ || mpr_series_.empty()) {
        mprs_ = std::move(mprs);
        mpr_series_.emplace_back(now, mprs_.size());
    }

    std::vector<std::pair<NodeId, NodeId>> topo;
    for (const auto& t : topology_) topo.emplace_back(t.last, t.dest);
    RoutingTable routes = compute_routes(self_, sym, pairs, topo);

    for (const auto& [dest, r] : routes_) {
        auto it = routes.find(dest);
        if (it == routes.end() || it->second.next_hop != r.next_hop) ++counters_.route_changes;
        if (it != routes.end()) continue;
        if (bus_ && bus_->enabled(ids::kUnavailableLink) && pending_ && pending_(dest)) {
            ++counters_.unavailable_link_events;
            result.unavailable.push_back(dest);
            bus_->publish_event(LayerId::Olsr, ids::kUnavailableLink, {{"destination", dest}}, now);
        }
    }
    for (const auto& [dest, r] : routes)
        if (!routes_.contains(dest)) ++counters_.route_changes;
    routes_ = std::move(routes);

    if (bus_ && bus_->enabled(ids::kSuperstructures))
        bus_->export_state(LayerId::Olsr, ids::kSuperstructures, snapshot(now), now);
    return result;
}

std::optional<NodeId> OlsrNode::next_hop(NodeId dest) const {
    auto it = routes_.find(dest);
    if (it == routes_.end()) return std::nullopt;
    return it->second.next_hop;
}

void OlsrNode::on_ack_stage2(const EventRecord& e) {
    if (!alive_) return;
    const SimTime now = sched_.now();
    Payload payload = e.payload;
    const NodeId nb = payload.value("neighbor", NodeId{0});
    payload["one_hop_sym"] = is_symmetric_neighbor(nb, now);
    payload["t3"] = now;
    bus_->publish_event(LayerId::Olsr, ids::kAcknowledgement, std::move(payload), now);
}

nlohmann::json OlsrNode::snapshot(SimTime now) const {
    using nlohmann::json;
    json links = json::array();
    for (const auto& [nb, t] : links_)
        links.push_back({{"neighbor", nb},
                         {"state", state_name(t.state(now))},
                         {"L_SYM_time", t.sym_time},
                         {"L_ASYM_time", t.asym_time},
                         {"L_time", t.time},
                         {"L_link_quality", t.quality},
                         {"L_pending", t.pending}});
    json two_hop = json::array();
    for (const auto& t : two_hop_) two_hop.push_back({{"neighbor", t.neighbor}, {"two_hop", t.two_hop}, {"expiry", t.expiry}});
    json selectors = json::array();
    for (const auto& [s, t] : selectors_) selectors.push_back({{"selector", s}, {"MS_time", t.ms_time}});
    json topology = json::array();
    for (const auto& t : topology_)
        topology.push_back({{"dest", t.dest}, {"last", t.last}, {"seq", t.seq}, {"T_time", t.t_time}});
    json routes = json::array();
    for (const auto& [d, r] : routes_) routes.push_back({{"dest", d}, {"next_hop", r.next_hop}, {"hops", r.hops}});
    return {{"node", self_},
            {"time", now},
            {"links", std::move(links)},
            {"symmetric_neighbors", symmetric_neighbors(now)},
            {"two_hop", std::move(two_hop)},
            {"mprs", mprs_},
            {"mpr_selectors", std::move(selectors)},
            {"topology", std::move(topology)},
            {"routes", std::move(routes)}};
}

}  // namespace claa::olsr
