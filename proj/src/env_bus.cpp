#include "claa/env_bus.hpp"

#include <algorithm>

namespace claa {

namespace {

std::string describe(LayerId layer, std::string_view id, const char* op) {
    return std::string(to_string(layer)) + " may not " + op + " '" + std::string(id) + "'";
}

}  // namespace

EnvBus::EnvBus(std::shared_ptr<const InteractionMatrix> matrix, std::set<std::string, std::less<>> enabled)
    : matrix_(std::move(matrix)), enabled_(std::move(enabled)) {
    for (const auto& id : enabled_) matrix_->at(id);
}

EnvBus::EnvBus(std::shared_ptr<const InteractionMatrix> matrix) : matrix_(std::move(matrix)) {
    for (const auto& d : matrix_->descriptors)
        if (d.enabled_by_default) enabled_.insert(d.id);
}

bool EnvBus::enabled(std::string_view claa_id) const { return enabled_.contains(claa_id); }

void EnvBus::set_enabled(std::string_view claa_id, bool on) {
    matrix_->at(claa_id);
    if (on) enabled_.emplace(claa_id);
    else if (auto it = enabled_.find(claa_id); it != enabled_.end()) enabled_.erase(it);
}

const ClaaDescriptor& EnvBus::require(std::string_view claa_id, ClaaKind kind) const {
    const auto& d = matrix_->at(claa_id);
    if (d.kind != kind)
        throw KindMismatch("'" + d.id + "' is " + std::string(to_string(d.kind)) + ", not " +
                           std::string(to_string(kind)));
    return d;
}

void EnvBus::trace(SimTime t, LayerId layer, std::string_view id, const char* op, std::string_view verdict) const {
    if (trace_) trace_(TraceRecord{t, layer, std::string(id), op, std::string(verdict)});
}

void EnvBus::check_emit(LayerId layer, const ClaaDescriptor& d, const char* op, SimTime now) const {
    if (!may_emit(*matrix_, d.id, layer)) {
        trace(now, layer, d.id, op, "rejected");
        throw RoutingViolation(describe(layer, d.id, op));
    }
}

void EnvBus::check_consume(LayerId layer, const ClaaDescriptor& d, const char* op, SimTime now) const {
    if (!may_consume(*matrix_, d.id, layer)) {
        trace(now, layer, d.id, op, "rejected");
        throw RoutingViolation(describe(layer, d.id, op));
    }
}

void EnvBus::export_state(LayerId layer, std::string_view claa_id, Payload value, SimTime now,
                          std::optional<double> validity, std::optional<NodeId> subject) {
    const auto& d = matrix_->at(claa_id);
    check_emit(layer, d, "export", now);
    if (d.kind != ClaaKind::ExportedState) {
        trace(now, layer, claa_id, "export", "rejected");
        throw KindMismatch("'" + d.id + "' is not an exported state");
    }
    if (validity && !(*validity > 0.0)) throw std::invalid_argument("state validity must be > 0");
    if (!enabled(claa_id)) {
        trace(now, layer, claa_id, "export", "disabled");
        return;
    }
    StateKey key{d.id, layer, subject};
    auto it = store_.find(key);
    if (it != store_.end() && now < it->second.export_time)
        throw std::invalid_argument("export time went backwards for '" + d.id + "'");
    store_[key] = StateEntry{d.id, std::move(value), layer, now, validity, subject};
    seen_expired_.erase(key);
    trace(now, layer, claa_id, "export", "ok");
}

StateRead EnvBus::read_state(LayerId layer, std::string_view claa_id, SimTime now,
                             std::optional<NodeId> subject) const {
    const auto& d = matrix_->at(claa_id);
    check_consume(layer, d, "read", now);
    if (d.kind != ClaaKind::ExportedState) throw KindMismatch("'" + d.id + "' is not an exported state");
    if (!enabled(claa_id)) {
        trace(now, layer, claa_id, "read", "disabled");
        return {};
    }

    // Latest export for this (claa, subject) across exporters.
    const std::pair<const StateKey, StateEntry>* best = nullptr;
    for (const auto& src : d.roles) {
        if (src.role != Role::Source) continue;
        auto it = store_.find(StateKey{d.id, src.layer, subject});
        if (it != store_.end() && (!best || it->second.export_time > best->second.export_time)) best = &*it;
    }
    if (!best) {
        trace(now, layer, claa_id, "read", "absent");
        return {};
    }
    if (seen_expired_.contains(best->first) || !best->second.fresh_at(now)) {
        seen_expired_.insert(best->first);
        trace(now, layer, claa_id, "read", "expired");
        return {ReadStatus::Expired, std::nullopt};
    }
    trace(now, layer, claa_id, "read", "ok");
    return {ReadStatus::Present, best->second};
}

std::size_t EnvBus::publish_event(LayerId layer, std::string_view claa_id, Payload payload, SimTime now) {
    const auto& d = matrix_->at(claa_id);
    check_emit(layer, d, "publish", now);
    if (d.kind != ClaaKind::NotifiedEvent) {
        trace(now, layer, claa_id, "publish", "rejected");
        throw KindMismatch("'" + d.id + "' is not a notified event");
    }

    std::optional<int> stage;
    if (d.chained()) {
        stage = d.source_stage(layer);
        auto it = chain_stage_.find(claa_id);
        const int current = it == chain_stage_.end() ? 0 : it->second;
        if (*stage != 1 && *stage != current + 1) {
            trace(now, layer, claa_id, "publish", "rejected");
            throw ChainOrderViolation("'" + d.id + "' stage " + std::to_string(*stage) + " published while stage " +
                                      std::to_string(current) + " is in delivery");
        }
    }
    if (!enabled(claa_id)) {
        trace(now, layer, claa_id, "publish", "disabled");
        return 0;
    }
    trace(now, layer, claa_id, "publish", "ok");

    auto consumes_stage = [&](LayerId l) {
        return std::any_of(d.roles.begin(), d.roles.end(), [&](const RoleEntry& r) {
            return r.layer == l && r.role == Role::Destination && r.stage == stage;
        });
    };

    std::vector<SubscriptionId> targets;
    for (const auto& s : subscriptions_)
        if (s.claa_id == d.id && consumes_stage(s.layer)) targets.push_back(s.id);

    const EventRecord record{d.id, std::move(payload), layer, now, stage};
    std::optional<int> outer;  // a fresh chain may start inside another one's delivery
    if (stage) {
        if (auto it = chain_stage_.find(d.id); it != chain_stage_.end()) outer = it->second;
        chain_stage_[d.id] = *stage;
    }
    auto restore = [&] {
        if (!stage) return;
        if (*stage == 1) {
            if (outer) chain_stage_[d.id] = *outer;
            else chain_stage_.erase(d.id);
        } else {
            chain_stage_[d.id] = *stage - 1;
        }
    };
    std::size_t delivered = 0;
    try {
        for (auto id : targets) {
            auto it = std::find_if(subscriptions_.begin(), subscriptions_.end(),
                                   [id](const Subscription& s) { return s.id == id; });
            if (it == subscriptions_.end()) continue;  // removed by an earlier handler
            const auto handler = it->handler;
            trace(now, it->layer, d.id, "deliver", "ok");
            handler(record);
            ++delivered;
        }
    } catch (...) {
        restore();
        throw;
    }
    restore();
    return delivered;
}

SubscriptionId EnvBus::subscribe(LayerId layer, std::string_view claa_id, EventHandler handler) {
    const auto& d = matrix_->at(claa_id);
    check_consume(layer, d, "subscribe", 0.0);
    if (d.kind != ClaaKind::NotifiedEvent) throw KindMismatch("'" + d.id + "' is not a notified event");
    const SubscriptionId id = next_subscription_++;
    subscriptions_.push_back({id, layer, d.id, std::move(handler)});
    return id;
}

void EnvBus::unsubscribe(SubscriptionId id) {
    std::erase_if(subscriptions_, [id](const Subscription& s) { return s.id == id; });
}

void EnvBus::register_provider(LayerId layer, std::string_view claa_id, ServiceHandler handler) {
    const auto& d = matrix_->at(claa_id);
    check_emit(layer, d, "provide", 0.0);
    if (d.kind != ClaaKind::ActivableService) throw KindMismatch("'" + d.id + "' is not an activable service");
    if (providers_.contains(claa_id)) throw BusError("'" + d.id + "' already has a provider");
    providers_.emplace(d.id, std::make_pair(layer, std::move(handler)));
}

Payload EnvBus::invoke_service(LayerId layer, std::string_view claa_id, const Payload& params, SimTime now) {
    const auto& d = matrix_->at(claa_id);
    check_consume(layer, d, "invoke", now);
    if (d.kind != ClaaKind::ActivableService) throw KindMismatch("'" + d.id + "' is not an activable service");
    auto it = providers_.find(claa_id);
    if (it == providers_.end()) {
        trace(now, layer, claa_id, "invoke", "no-provider");
        throw NoProvider("no provider registered for '" + d.id + "'");
    }
    if (!enabled(claa_id)) {
        trace(now, layer, claa_id, "invoke", "disabled");
        return nullptr;
    }
    trace(now, layer, claa_id, "invoke", "ok");
    return it->second.second(params);
}

void EnvBus::record_reachability(LayerId layer, NodeId node, bool reachable, SimTime now) {
    const auto& d = matrix_->at(ids::kNodeUnavailable);
    check_emit(layer, d, "record reachability", now);
    if (!enabled(ids::kNodeUnavailable)) return;
    reachability_[node] = reachable;
}

std::optional<bool> EnvBus::reachability(NodeId node) const {
    auto it = reachability_.find(node);
    if (it == reachability_.end()) return std::nullopt;
    return it->second;
}

std::vector<StateEntry> EnvBus::states() const {
    std::vector<StateEntry> out;
    out.reserve(store_.size());
    for (const auto& [k, v] : store_) out.push_back(v);
    return out;
}

}  // namespace claa
