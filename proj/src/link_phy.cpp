#include "claa/link_phy.hpp"

#include <algorithm>
#include <cmath>

#include "claa/checksum.hpp"

namespace claa::link {

namespace {

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

}  // namespace

std::vector<std::uint8_t> encode(Frame& frame) {
    std::vector<std::uint8_t> wire;
    wire.reserve(frame.wire_size());
    put32(wire, frame.dst);
    put32(wire, frame.src);
    put32(wire, frame.seq);
    wire.push_back(frame.needs_ack ? 1 : 0);
    wire.insert(wire.end(), frame.payload.begin(), frame.payload.end());
    frame.link_crc = checksum::crc32c(wire);
    put32(wire, frame.link_crc);
    return wire;
}

Frame decode(std::span<const std::uint8_t> wire) {
    if (wire.size() < kHeaderBytes + kTrailerBytes) throw FrameDecodeError("frame too short");
    Frame f;
    f.dst = checksum::load_be32(wire.subspan(0, 4));
    f.src = checksum::load_be32(wire.subspan(4, 4));
    f.seq = checksum::load_be32(wire.subspan(8, 4));
    f.needs_ack = (wire[12] & 1u) != 0;
    f.payload.assign(wire.begin() + kHeaderBytes, wire.end() - kTrailerBytes);
    f.link_crc = checksum::load_be32(wire.subspan(wire.size() - kTrailerBytes));
    return f;
}

bool crc_ok(std::span<const std::uint8_t> wire) {
    if (wire.size() < kTrailerBytes) return false;
    const auto body = wire.first(wire.size() - kTrailerBytes);
    return checksum::crc32c(body) == checksum::load_be32(wire.subspan(body.size()));
}

double BerCurve::operator()(double snr_db) const { return ber_max / (1.0 + std::exp(snr_db - snr_mid_db)); }

double FecModel::apply(double ber) const { return std::pow(ber, exponent); }

void ChannelModel::add_link(NodeId a, NodeId b, LinkParams params) {
    if (a == b) throw std::invalid_argument("self link");
    links_[key(a, b)] = params;
}

bool ChannelModel::has_link(NodeId a, NodeId b) const { return links_.contains(key(a, b)); }

const LinkParams& ChannelModel::params(NodeId a, NodeId b) const {
    auto it = links_.find(key(a, b));
    if (it == links_.end()) throw NoSuchLink("no link " + std::to_string(a) + "-" + std::to_string(b));
    return it->second;
}

LinkParams& ChannelModel::params(NodeId a, NodeId b) {
    return const_cast<LinkParams&>(std::as_const(*this).params(a, b));
}

double ChannelModel::raw_ber(NodeId a, NodeId b) const {
    const auto& p = params(a, b);
    return p.ber ? *p.ber : curve_(p.snr_db);
}

double ChannelModel::effective_ber(NodeId a, NodeId b) const {
    const double ber = raw_ber(a, b);
    return fec(a, b) ? fec_.apply(ber) : ber;
}

void ChannelModel::set_fec(NodeId a, NodeId b, bool on) {
    params(a, b);
    if (on) fec_on_.insert(key(a, b));
    else fec_on_.erase(key(a, b));
}

bool ChannelModel::fec(NodeId a, NodeId b) const { return fec_on_.contains(key(a, b)); }

std::vector<NodeId> ChannelModel::neighbors(NodeId a) const {
    std::vector<NodeId> out;
    for (const auto& [k, p] : links_) {
        if (k.first == a) out.push_back(k.second);
        else if (k.second == a) out.push_back(k.first);
    }
    std::sort(out.begin(), out.end());
    return out;
}

EnergyModel::EnergyModel(double budget, double tx_cost_per_byte, double rx_cost_per_byte)
    : initial_(budget), tx_cost_(tx_cost_per_byte), rx_cost_(rx_cost_per_byte) {
    if (budget < 0 || tx_cost_per_byte < 0 || rx_cost_per_byte < 0)
        throw std::invalid_argument("energy parameters must be non-negative");
}

double EnergyModel::debit(double amount) {
    const double taken = std::min(amount, remaining());
    if (taken <= 0.0) return 0.0;
    consumed_ += taken;
    return taken;
}

LinkLayer::LinkLayer(NodeId self, LinkConfig config, Medium& medium, Scheduler& sched, EnvBus* bus)
    : self_(self),
      config_(std::move(config)),
      medium_(medium),
      sched_(sched),
      bus_(bus),
      energy_(config_.energy_budget, config_.tx_cost_per_byte, config_.rx_cost_per_byte) {
    medium_.attach(*this);
    if (bus_) {
        bus_->subscribe(LayerId::Link, ids::kAcknowledgement, [this](const EventRecord& e) { on_ack_stage1(e); });
        bus_->register_provider(LayerId::Link, ids::kFec, [this](const Payload& p) {
            return fec_service(p.at("peer").get<NodeId>(), p.value("enable", true));
        });
        bus_->register_provider(LayerId::Link, ids::kArq, [this](const Payload& p) {
            return arq_service(p.at("peer").get<NodeId>(), p.value("enable", true));
        });
    }
}

void LinkLayer::transmit(NodeId next_hop, std::vector<std::uint8_t> payload, std::optional<NodeId> final_dst,
                         Payload meta) {
    if (!alive_) return;
    if (energy_.depleted()) {
        ++counters_.zero_energy_drops;
        return;
    }
    if (next_hop != kBroadcast && !medium_.channel().has_link(self_, next_hop)) {
        ++counters_.frames_lost;
        return;
    }
    if (queue_length() >= config_.queue_capacity) {
        ++counters_.queue_drops;
        return;
    }
    auto p = std::make_shared<Pending>();
    p->frame.src = self_;
    p->frame.dst = next_hop;
    p->frame.seq = next_seq_++;
    p->frame.needs_ack = next_hop != kBroadcast;
    p->frame.payload = std::move(payload);
    p->frame.enqueue_time = sched_.now();
    p->wire = encode(p->frame);
    p->meta = std::move(meta);
    if (final_dst) p->meta["destination"] = *final_dst;
    enqueue(std::move(p));
}

std::size_t LinkLayer::queue_length() const {
    const SimTime now = sched_.now();
    return static_cast<std::size_t>(
        std::count_if(scheduled_starts_.begin(), scheduled_starts_.end(), [now](SimTime s) { return s > now; }));
}

void LinkLayer::set_medium_busy(SimTime until) {
    medium_busy_until_ = std::max(medium_busy_until_, Scheduler::quantize(until));
}

void LinkLayer::enqueue(std::shared_ptr<Pending> p) {
    const SimTime now = sched_.now();
    const bool fec = p->frame.dst != kBroadcast && medium_.channel().fec(self_, p->frame.dst);
    const double bytes = static_cast<double>(p->wire.size()) * (fec ? 1.0 + medium_.channel().fec_model().byte_overhead : 1.0);
    const SimTime start = Scheduler::quantize(std::max({now, busy_until_, medium_busy_until_}));
    busy_until_ = start + bytes * 8.0 / config_.bitrate;
    scheduled_starts_.push_back(start);

    const double delay = start - now;
    if (p->frame.dst != kBroadcast && delay > config_.jitter_threshold) {
        const NodeId dest = p->meta.contains("destination") ? p->meta["destination"].get<NodeId>() : p->frame.dst;
        auto& until = jitter_announced_until_[dest];
        if (now >= until) {
            until = now + delay;
            ++counters_.jitter_events;
            if (bus_)
                bus_->publish_event(LayerId::Link, ids::kJitter,
                                    {{"destination", dest}, {"neighbor", p->frame.dst}, {"excess", delay}}, now);
        }
    }
    if (queue_length() >= config_.queue_limit && now >= avoidance_announced_until_) {
        avoidance_announced_until_ = busy_until_;
        ++counters_.retx_avoidance_events;
        if (bus_)
            bus_->publish_event(LayerId::Link, ids::kRetransmissionAvoidance, {{"duration", busy_until_ - now}},
                                now);
    }
    sched_.schedule_at(start, [this, p] { launch(p); });
}

void LinkLayer::launch(std::shared_ptr<Pending> p) {
    if (!scheduled_starts_.empty()) scheduled_starts_.pop_front();
    if (!alive_) return;
    if (energy_.depleted()) {
        ++counters_.zero_energy_drops;
        return;
    }
    const SimTime now = sched_.now();
    const bool fec = p->frame.dst != kBroadcast && medium_.channel().fec(self_, p->frame.dst);
    const double overhead = fec ? 1.0 + medium_.channel().fec_model().byte_overhead : 1.0;
    const auto bytes = static_cast<std::size_t>(std::ceil(static_cast<double>(p->wire.size()) * overhead));
    debit(energy_.tx_cost(bytes));
    ++counters_.frames_sent;
    counters_.bytes_sent += bytes;
    if (++p->attempts > 1) ++counters_.link_retx;
    p->frame.tx_time = now;

    const SimTime tx_end = now + static_cast<double>(bytes) * 8.0 / config_.bitrate;
    medium_.propagate(*this, p->frame, p->wire, tx_end);
    if (p->frame.needs_ack) {
        awaiting_ack_[p->frame.seq] = p;
        double prop = 0.0;
        if (medium_.channel().has_link(self_, p->frame.dst)) prop = medium_.channel().params(self_, p->frame.dst).delay;
        sched_.schedule_at(tx_end + prop + config_.sifs + config_.ack_timeout_margin,
                           [this, p] { on_ack_deadline(p); });
    }
}

void LinkLayer::on_ack_deadline(std::shared_ptr<Pending> p) {
    if (p->acked) return;
    awaiting_ack_.erase(p->frame.seq);
    if (!alive_) return;
    record_outcome(p->frame.dst, true);
    if (arq_peers_.contains(p->frame.dst) && p->attempts <= config_.arq_max_retries) {
        enqueue(std::move(p));
        return;
    }
    ++counters_.frames_lost;
}

void LinkLayer::on_link_ack(std::uint32_t seq, NodeId from) {
    auto it = awaiting_ack_.find(seq);
    if (it == awaiting_ack_.end() || it->second->frame.dst != from) return;
    auto p = it->second;
    awaiting_ack_.erase(it);
    p->acked = true;
    if (!alive_) return;
    record_outcome(from, false);
    publish_ack_chain(*p, sched_.now());
}

void LinkLayer::publish_ack_chain(const Pending& p, SimTime now) {
    if (!bus_ || !bus_->enabled(ids::kAcknowledgement)) return;
    Payload payload{{"neighbor", p.frame.dst}, {"frame", p.frame.seq}, {"t1", now}};
    if (!p.meta.is_null()) payload["meta"] = p.meta;
    bus_->publish_event(LayerId::Physical, ids::kAcknowledgement, std::move(payload), now);
}

void LinkLayer::on_ack_stage1(const EventRecord& e) {
    Payload payload = e.payload;
    payload["t2"] = sched_.now();
    bus_->publish_event(LayerId::Link, ids::kAcknowledgement, std::move(payload), sched_.now());
}

void LinkLayer::on_arrival(std::vector<std::uint8_t> wire, NodeId from, SimTime) {
    if (!alive_) return;
    if (energy_.depleted()) {
        ++counters_.zero_energy_drops;
        return;
    }
    debit(energy_.rx_cost(wire.size()));
    // verify_and_notify
    if (!crc_ok(wire)) {
        ++counters_.crc_drops;
        return;
    }
    Frame f = decode(wire);
    if (f.dst != self_ && f.dst != kBroadcast) return;
    ++counters_.frames_received;
    const SimTime now = sched_.now();
    if (f.needs_ack && f.dst == self_) {
        const std::uint32_t seq = f.seq;
        const NodeId me = self_;
        sched_.schedule_at(now + config_.sifs, [this, from, seq, me] {
            if (auto* sender = medium_.find(from); sender && alive_) sender->on_link_ack(seq, me);
        });
    }
    if (bus_ && bus_->enabled(ids::kCommonChecksum)) {
        ++counters_.checksum_marks;
        bus_->publish_event(LayerId::Link, ids::kCommonChecksum, {{"from", from}, {"frame", f.seq}}, now);
    }
    if (upcall_) upcall_(f.payload, RxInfo{from, f.seq});
}

void LinkLayer::record_outcome(NodeId neighbor, bool lost) {
    auto& window = outcomes_[neighbor];
    window.emplace_back(sched_.now(), lost);
    while (window.size() > config_.loss_window_frames) window.pop_front();
}

std::optional<double> LinkLayer::loss_ratio(NodeId neighbor, SimTime now) const {
    auto it = outcomes_.find(neighbor);
    if (it == outcomes_.end()) return std::nullopt;
    std::size_t total = 0, lost = 0;
    for (const auto& [t, l] : it->second) {
        if (now - t > config_.loss_window_time) continue;
        ++total;
        lost += l ? 1 : 0;
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(lost) / static_cast<double>(total);
}

void LinkLayer::debit(double amount) {
    const double before = energy_.fraction();
    energy_.debit(amount);
    const double after = energy_.fraction();
    for (double threshold : config_.energy_thresholds) {
        if (before >= threshold && after < threshold) {
            ++counters_.energy_decrease_events;
            if (bus_)
                bus_->publish_event(LayerId::Physical, ids::kEnergyDecrease,
                                    {{"level", after}, {"threshold", threshold}}, sched_.now());
        }
    }
}

void LinkLayer::start(SimTime first_export) {
    if (!bus_) return;
    sched_.schedule_at(first_export, [this] {
        export_phy_states(sched_.now());
        start(sched_.now() + config_.export_interval);
    });
}

void LinkLayer::export_phy_states(SimTime now) {
    if (!alive_ || !bus_) return;
    const double validity = 2.0 * config_.export_interval;
    const auto& ch = medium_.channel();
    for (NodeId n : ch.neighbors(self_)) {
        const auto& p = ch.params(self_, n);
        if (!p.up) continue;
        bus_->export_state(LayerId::Physical, ids::kSnr, {{"snr_db", p.snr_db}}, now, validity, n);
        bus_->export_state(LayerId::Physical, ids::kRss, {{"rss", p.rss}}, now, validity, n);
        bus_->export_state(LayerId::Physical, ids::kBer, {{"ber", ch.effective_ber(self_, n)}}, now, validity, n);
        if (auto ratio = loss_ratio(n, now))
            bus_->export_state(LayerId::Link, ids::kPacketLossRatio, {{"ratio", *ratio}}, now, validity, n);
    }
    bus_->export_state(LayerId::Physical, ids::kEnergyLevel,
                       {{"fraction", energy_.fraction()}, {"remaining", energy_.remaining()}}, now, validity);
}

Payload LinkLayer::fec_service(NodeId peer, bool enable) {
    medium_.channel().set_fec(self_, peer, enable);
    return {{"peer", peer}, {"fec", enable}};
}

Payload LinkLayer::arq_service(NodeId peer, bool enable) {
    if (!medium_.channel().has_link(self_, peer))
        throw NoSuchLink("no link " + std::to_string(self_) + "-" + std::to_string(peer));
    if (enable) arq_peers_.insert(peer);
    else arq_peers_.erase(peer);
    return {{"peer", peer}, {"arq", enable}};
}

Medium::Medium(ChannelModel channel, Scheduler& sched, std::uint64_t seed)
    : channel_(std::move(channel)), sched_(sched), rng_(Rng::stream(seed, 0x6d656469756dULL)) {}

void Medium::attach(LinkLayer& link) { links_[link.id()] = &link; }

LinkLayer* Medium::find(NodeId id) const {
    auto it = links_.find(id);
    return it == links_.end() ? nullptr : it->second;
}

bool Medium::corrupt(NodeId a, NodeId b, std::vector<std::uint8_t>& wire) {
    const double ber = channel_.effective_ber(a, b);
    if (ber <= 0.0 || wire.empty()) return false;
    const double nbits = static_cast<double>(wire.size()) * 8.0;
    const double p_frame = ber >= 1.0 ? 1.0 : -std::expm1(nbits * std::log1p(-ber));
    if (!rng_.bernoulli(p_frame)) return false;
    const auto total_bits = static_cast<std::uint64_t>(wire.size()) * 8;
    // At least one flipped bit; further flips become likelier as ber*nbits grows.
    const double extra = std::min(0.5, ber * nbits / 2.0);
    // Distinct bits, so a second flip never undoes the first.
    std::vector<std::uint64_t> flipped;
    do {
        const auto bit = rng_.below(total_bits);
        if (std::find(flipped.begin(), flipped.end(), bit) != flipped.end()) continue;
        flipped.push_back(bit);
        wire[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    } while (flipped.size() < std::min<std::uint64_t>(4, total_bits) && (flipped.empty() || rng_.bernoulli(extra)));
    return true;
}

void Medium::propagate(const LinkLayer& sender, const Frame& frame, const std::vector<std::uint8_t>& wire,
                       SimTime tx_end) {
    std::vector<NodeId> receivers;
    if (frame.dst == kBroadcast) receivers = channel_.neighbors(sender.id());
    else receivers.push_back(frame.dst);

    for (NodeId r : receivers) {
        if (!channel_.has_link(sender.id(), r)) continue;
        const auto& params = channel_.params(sender.id(), r);
        if (!params.up) continue;
        LinkLayer* receiver = find(r);
        if (!receiver) continue;
        auto copy = wire;
        corrupt(sender.id(), r, copy);
        const NodeId from = sender.id();
        sched_.schedule_at(tx_end + params.delay, [this, receiver, from, tx_end, copy = std::move(copy)]() mutable {
            if (!channel_.params(from, receiver->id()).up) return;
            receiver->on_arrival(std::move(copy), from, tx_end);
        });
    }
}

}  // namespace claa::link
