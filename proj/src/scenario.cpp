#include "claa/scenario.hpp"

#include <fstream>
#include <limits>
#include <sstream>
#include <tuple>

namespace claa {

namespace {

using nlohmann::json;

// Reads the known keys of one JSON object and rejects the rest, so a typo
// in a parameter name never silently falls back to a default.
class Fields {
public:
    Fields(const json& j, std::string context) : j_(j), ctx_(std::move(context)) {
        if (!j_.is_object()) fail("expected an object");
    }

    template <typename T>
    bool opt(const char* key, T& out) {
        used_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return false;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            fail(std::string("bad value for '") + key + "'");
        }
        return true;
    }

    template <typename T>
    void req(const char* key, T& out) {
        if (!opt(key, out)) fail(std::string("missing '") + key + "'");
    }

    const json* raw(const char* key) {
        used_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.contains(k)) fail("unknown key '" + k + "'");
    }

    [[noreturn]] void fail(const std::string& what) const { throw ScenarioError(ctx_ + ": " + what); }

private:
    const json& j_;
    std::string ctx_;
    std::set<std::string> used_;
};

link::LinkParams parse_link_params(Fields& f, link::LinkParams p) {
    f.opt("snr_db", p.snr_db);
    f.opt("rss", p.rss);
    double ber = 0.0;
    if (f.opt("ber", ber)) p.ber = ber;
    f.opt("delay", p.delay);
    f.opt("up", p.up);
    return p;
}

void parse_sctp(const json& j, sctp::SctpConfig& c) {
    Fields f(j, "sctp");
    f.opt("rto_initial", c.rto_initial);
    f.opt("rto_min", c.rto_min);
    f.opt("rto_max", c.rto_max);
    f.opt("rto_alpha", c.rto_alpha);
    f.opt("rto_beta", c.rto_beta);
    f.opt("path_max_retrans", c.path_max_retrans);
    f.opt("hb_max_unacked", c.hb_max_unacked);
    f.opt("hb_delay", c.hb_delay);
    f.opt("mtu", c.mtu);
    f.opt("initial_cwnd_mtus", c.initial_cwnd_mtus);
    f.opt("initial_ssthresh", c.initial_ssthresh);
    f.opt("initial_tsn", c.initial_tsn);
    f.opt("fast_retransmit_reports", c.fast_retransmit_reports);
    f.opt("consult_retry", c.consult_retry);
    f.opt("link_quality_send_threshold", c.link_quality_send_threshold);
    f.opt("rss_direct_threshold", c.rss_direct_threshold);
    f.opt("loss_bad", c.loss_bad);
    f.opt("loss_good", c.loss_good);
    f.opt("snr_bad_db", c.snr_bad_db);
    f.opt("snr_good_db", c.snr_good_db);
    f.opt("ber_bad", c.ber_bad);
    f.opt("ber_good", c.ber_good);
    f.opt("adaptation_factor", c.adaptation_factor);
    f.opt("energy_low_fraction", c.energy_low_fraction);
    f.finish();
}

void parse_olsr(const json& j, olsr::OlsrConfig& c) {
    Fields f(j, "olsr");
    f.opt("hello_interval", c.hello_interval);
    f.opt("refresh_interval", c.refresh_interval);
    f.opt("vtime", c.vtime);
    f.opt("tc_interval", c.tc_interval);
    f.opt("tc_vtime", c.tc_vtime);
    f.opt("jitter", c.jitter);
    f.opt("neighb_hold_margin", c.neighb_hold_margin);
    f.opt("silence_factor", c.silence_factor);
    f.opt("housekeeping_interval", c.housekeeping_interval);
    f.opt("duplicate_hold", c.duplicate_hold);
    f.opt("use_hysteresis", c.use_hysteresis);
    f.opt("snr_as_quality", c.snr_as_quality);
    f.opt("snr_quality_span_db", c.snr_quality_span_db);
    f.opt("hyst_scaling", c.hysteresis.scaling);
    f.opt("hyst_threshold_high", c.hysteresis.high);
    f.opt("hyst_threshold_low", c.hysteresis.low);
    f.finish();
}

void parse_link(const json& j, link::LinkConfig& c) {
    Fields f(j, "link");
    f.opt("bitrate", c.bitrate);
    f.opt("sifs", c.sifs);
    f.opt("ack_timeout_margin", c.ack_timeout_margin);
    f.opt("jitter_threshold", c.jitter_threshold);
    f.opt("queue_limit", c.queue_limit);
    f.opt("queue_capacity", c.queue_capacity);
    f.opt("arq_max_retries", c.arq_max_retries);
    f.opt("loss_window_frames", c.loss_window_frames);
    f.opt("loss_window_time", c.loss_window_time);
    f.opt("export_interval", c.export_interval);
    f.opt("energy_thresholds", c.energy_thresholds);
    f.opt("energy_budget", c.energy_budget);
    f.opt("tx_cost_per_byte", c.tx_cost_per_byte);
    f.opt("rx_cost_per_byte", c.rx_cost_per_byte);
    f.finish();
}

void parse_ip(const json& j, ip::IpConfig& c) {
    Fields f(j, "ip");
    int ttl = c.ttl;
    f.opt("ttl", ttl);
    if (ttl < 1 || ttl > 255) f.fail("ttl out of range");
    c.ttl = static_cast<std::uint8_t>(ttl);
    f.opt("ecn_queue_threshold", c.ecn_queue_threshold);
    f.finish();
}

void parse_channel(const json& j, ChannelSpec& c) {
    Fields f(j, "channel");
    f.opt("snr_mid_db", c.curve.snr_mid_db);
    f.opt("ber_max", c.curve.ber_max);
    f.opt("fec_exponent", c.fec.exponent);
    f.opt("fec_overhead", c.fec.byte_overhead);
    f.finish();
}

ActionKind action_from_string(const std::string& s, const Fields& f) {
    if (s == "kill_link") return ActionKind::KillLink;
    if (s == "restore_link") return ActionKind::RestoreLink;
    if (s == "kill_node") return ActionKind::KillNode;
    if (s == "set_snr") return ActionKind::SetSnr;
    if (s == "set_ber") return ActionKind::SetBer;
    if (s == "medium_busy") return ActionKind::MediumBusy;
    if (s == "inject_event") return ActionKind::InjectEvent;
    f.fail("unknown action '" + s + "'");
}

}  // namespace

std::string to_string(ActionKind k) {
    switch (k) {
    case ActionKind::KillLink: return "kill_link";
    case ActionKind::RestoreLink: return "restore_link";
    case ActionKind::KillNode: return "kill_node";
    case ActionKind::SetSnr: return "set_snr";
    case ActionKind::SetBer: return "set_ber";
    case ActionKind::MediumBusy: return "medium_busy";
    case ActionKind::InjectEvent: return "inject_event";
    }
    return "?";
}

Scenario parse_scenario(const nlohmann::json& j, const InteractionMatrix& matrix) {
    Scenario s;
    Fields top(j, "scenario");
    top.opt("name", s.name);
    top.opt("seed", s.seed);
    top.req("duration", s.duration);
    top.opt("claa_default", s.claa_default);
    top.opt("claa_flags", s.claa_flags);
    top.opt("strip_bus", s.strip_bus);

    if (const auto* v = top.raw("channel")) parse_channel(*v, s.channel);
    if (const auto* v = top.raw("link")) parse_link(*v, s.link);
    if (const auto* v = top.raw("ip")) parse_ip(*v, s.ip);
    if (const auto* v = top.raw("olsr")) parse_olsr(*v, s.olsr);
    if (const auto* v = top.raw("sctp")) parse_sctp(*v, s.sctp);

    const auto* nodes = top.raw("nodes");
    if (!nodes || !nodes->is_array()) top.fail("'nodes' must be an array");
    for (const auto& n : *nodes) {
        NodeSpec spec;
        if (n.is_number_integer()) {
            if (n.get<std::int64_t>() < 0 || n.get<std::int64_t>() > std::numeric_limits<NodeId>::max())
                top.fail("node id out of range");
            spec.id = n.get<NodeId>();
        } else {
            Fields f(n, "node");
            f.req("id", spec.id);
            double budget = 0.0;
            if (f.opt("energy_budget", budget)) spec.energy_budget = budget;
            f.finish();
        }
        s.nodes.push_back(spec);
    }

    if (const auto* links = top.raw("links")) {
        if (!links->is_array()) top.fail("'links' must be an array");
        for (const auto& l : *links) {
            Fields f(l, "link entry");
            LinkSpec spec;
            f.req("a", spec.a);
            f.req("b", spec.b);
            spec.params = parse_link_params(f, {});
            f.finish();
            s.links.push_back(spec);
        }
    }

    if (const auto* traffic = top.raw("traffic")) {
        if (!traffic->is_array()) top.fail("'traffic' must be an array");
        for (const auto& t : *traffic) {
            Fields f(t, "traffic entry");
            TrafficSpec spec;
            f.req("src", spec.src);
            f.req("dst", spec.dst);
            f.opt("stream", spec.stream);
            f.opt("size", spec.size);
            f.opt("rate", spec.rate);
            f.opt("start", spec.start);
            f.opt("stop", spec.stop);
            f.finish();
            s.traffic.push_back(spec);
        }
    }

    if (const auto* schedule = top.raw("schedule")) {
        if (!schedule->is_array()) top.fail("'schedule' must be an array");
        for (const auto& a : *schedule) {
            Fields f(a, "schedule entry");
            ScheduledAction act;
            std::string kind;
            f.req("time", act.time);
            f.req("action", kind);
            act.kind = action_from_string(kind, f);
            switch (act.kind) {
            case ActionKind::KillLink:
            case ActionKind::RestoreLink:
                f.req("a", act.a);
                f.req("b", act.b);
                break;
            case ActionKind::SetSnr:
            case ActionKind::SetBer:
                f.req("a", act.a);
                f.req("b", act.b);
                f.req("value", act.value);
                break;
            case ActionKind::KillNode:
                f.req("node", act.a);
                break;
            case ActionKind::MediumBusy:
                f.req("node", act.a);
                f.req("duration", act.value);
                break;
            case ActionKind::InjectEvent: {
                std::string layer;
                f.req("node", act.a);
                f.req("layer", layer);
                f.req("claa", act.claa);
                try {
                    act.layer = layer_from_string(layer);
                } catch (const std::invalid_argument&) {
                    f.fail("unknown layer '" + layer + "'");
                }
                if (const auto* p = f.raw("payload")) act.payload = *p;
                else act.payload = json::object();
                break;
            }
            }
            f.finish();
            s.schedule.push_back(std::move(act));
        }
    }
    top.finish();
    validate_scenario(s, matrix);
    return s;
}

Scenario load_scenario(const std::filesystem::path& path, const InteractionMatrix& matrix) {
    std::ifstream in(path);
    if (!in) throw std::filesystem::filesystem_error("cannot open scenario", path,
                                                     std::make_error_code(std::errc::no_such_file_or_directory));
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ScenarioError(path.string() + ": " + e.what());
    }
    return parse_scenario(j, matrix);
}

void validate_scenario(const Scenario& s, const InteractionMatrix& matrix) {
    auto fail = [](const std::string& what) { throw ScenarioError(what); };
    if (!(s.duration > 0.0)) fail("duration must be positive");
    if (s.nodes.empty()) fail("scenario has no nodes");

    std::set<NodeId> ids;
    for (const auto& n : s.nodes) {
        if (n.id == link::kBroadcast) fail("node id reserved for broadcast");
        if (!ids.insert(n.id).second) fail("duplicate node " + std::to_string(n.id));
        if (n.energy_budget && !(*n.energy_budget > 0.0)) fail("energy budget must be positive");
    }
    auto known = [&](NodeId n, const char* what) {
        if (!ids.contains(n)) fail(std::string(what) + " references unknown node " + std::to_string(n));
    };

    std::set<std::pair<NodeId, NodeId>> links;
    for (const auto& l : s.links) {
        known(l.a, "link");
        known(l.b, "link");
        if (l.a == l.b) fail("self link at node " + std::to_string(l.a));
        if (!links.insert(std::minmax(l.a, l.b)).second)
            fail("duplicate link " + std::to_string(l.a) + "-" + std::to_string(l.b));
        if (l.params.rss < 0.0 || l.params.rss > 1.0) fail("rss outside [0,1]");
        if (l.params.ber && (*l.params.ber < 0.0 || *l.params.ber > 0.5)) fail("ber outside [0,0.5]");
        if (l.params.delay < 0.0) fail("negative link delay");
    }
    auto has_link = [&](NodeId a, NodeId b) {
        if (!links.contains(std::minmax(a, b)))
            fail("schedule references unknown link " + std::to_string(a) + "-" + std::to_string(b));
    };

    const std::size_t max_message = s.sctp.mtu > 28 ? s.sctp.mtu - 28 : 0;
    std::set<std::tuple<NodeId, NodeId, std::uint16_t>> flows;
    for (const auto& t : s.traffic) {
        if (!flows.insert({t.src, t.dst, t.stream}).second)
            fail("duplicate traffic flow " + std::to_string(t.src) + "->" + std::to_string(t.dst) + " stream " +
                 std::to_string(t.stream));
        known(t.src, "traffic");
        known(t.dst, "traffic");
        if (t.src == t.dst) fail("traffic source equals destination");
        if (!(t.rate > 0.0)) fail("traffic rate must be positive");
        if (t.size == 0 || t.size > max_message) fail("traffic message size must be within 1.." + std::to_string(max_message));
        if (t.size < 8) fail("traffic message size must be at least 8 bytes");
        if (t.start < 0.0) fail("traffic start must be non-negative");
        if (t.stop != 0.0 && t.stop <= t.start) fail("traffic stop must follow start");
    }

    for (const auto& a : s.schedule) {
        if (a.time < 0.0) fail("schedule time must be non-negative");
        switch (a.kind) {
        case ActionKind::KillLink:
        case ActionKind::RestoreLink:
            has_link(a.a, a.b);
            break;
        case ActionKind::SetSnr:
            has_link(a.a, a.b);
            break;
        case ActionKind::SetBer:
            has_link(a.a, a.b);
            if (a.value < 0.0 || a.value > 0.5) fail("ber outside [0,0.5]");
            break;
        case ActionKind::KillNode:
            known(a.a, "kill_node");
            break;
        case ActionKind::MediumBusy:
            known(a.a, "medium_busy");
            if (!(a.value > 0.0)) fail("medium_busy duration must be positive");
            break;
        case ActionKind::InjectEvent: {
            known(a.a, "inject_event");
            const auto* d = matrix.find(a.claa);
            if (!d) fail("inject_event references unknown CLAA '" + a.claa + "'");
            if (d->kind != ClaaKind::NotifiedEvent) fail("inject_event needs a notified event, got '" + a.claa + "'");
            if (!may_emit(matrix, a.claa, a.layer))
                fail("layer " + std::string(to_string(a.layer)) + " may not emit '" + a.claa + "'");
            if (d->chained()) fail("chained events cannot be injected");
            if (!a.payload.is_object()) fail("inject_event payload must be an object");
            break;
        }
        }
    }

    for (const auto& [id, on] : s.claa_flags)
        if (!matrix.find(id)) fail("claa_flags references unknown CLAA '" + id + "'");

    const auto& c = s.sctp;
    if (!(c.rto_min > 0.0) || c.rto_min > c.rto_max) fail("sctp rto bounds invalid");
    if (c.rto_initial < c.rto_min || c.rto_initial > c.rto_max) fail("sctp rto_initial outside bounds");
    if (c.path_max_retrans < 0 || c.hb_max_unacked < 1) fail("sctp retransmission limits invalid");
    if (c.hb_delay < 0.0) fail("sctp hb_delay negative");
    if (c.fast_retransmit_reports < 1) fail("sctp fast_retransmit_reports must be positive");
    if (c.initial_tsn == 0) fail("sctp initial_tsn must be positive");
    if (!(c.consult_retry > 0.0)) fail("sctp consult_retry must be positive");

    const auto& o = s.olsr;
    if (!(o.hello_interval > 0.0) || !(o.tc_interval > 0.0) || !(o.housekeeping_interval > 0.0))
        fail("olsr intervals must be positive");
    if (o.vtime < o.hello_interval) fail("olsr vtime shorter than hello interval");
    if (o.jitter < 0.0 || o.jitter >= o.hello_interval) fail("olsr jitter out of range");
    if (o.hysteresis.low > o.hysteresis.high) fail("olsr hysteresis thresholds inverted");

    const auto& l = s.link;
    if (!(l.bitrate > 0.0) || l.sifs < 0.0) fail("link timing invalid");
    if (!(l.export_interval > 0.0)) fail("link export_interval must be positive");
    if (!(l.energy_budget > 0.0)) fail("link energy_budget must be positive");
    if (l.queue_capacity == 0) fail("link queue_capacity must be positive");
}

std::set<std::string, std::less<>> enabled_claas(const Scenario& s, const InteractionMatrix& matrix) {
    std::set<std::string, std::less<>> out;
    for (const auto& d : matrix.descriptors) {
        auto it = s.claa_flags.find(d.id);
        const bool on = it != s.claa_flags.end() ? it->second : s.claa_default;
        if (on) out.insert(d.id);
    }
    return out;
}

}  // namespace claa
