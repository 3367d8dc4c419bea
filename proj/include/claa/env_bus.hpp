#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "claa/registry.hpp"
#include "json.hpp"

namespace claa {

using SimTime = double;
using NodeId = std::uint32_t;
using Payload = nlohmann::json;

class BusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class RoutingViolation : public BusError {
public:
    using BusError::BusError;
};
class KindMismatch : public BusError {
public:
    using BusError::BusError;
};
class ChainOrderViolation : public BusError {
public:
    using BusError::BusError;
};
class NoProvider : public BusError {
public:
    using BusError::BusError;
};

struct StateEntry {
    std::string claa_id;
    Payload value;
    LayerId exporter;
    SimTime export_time = 0.0;
    std::optional<double> validity;  // seconds; absent = never expires
    std::optional<NodeId> subject;   // per-neighbor states carry the neighbor here

    bool fresh_at(SimTime now) const { return !validity || export_time + *validity >= now; }
};

enum class ReadStatus { Present, Absent, Expired };

struct StateRead {
    ReadStatus status = ReadStatus::Absent;
    std::optional<StateEntry> entry;  // set only when Present

    bool present() const { return status == ReadStatus::Present; }
};

struct EventRecord {
    std::string claa_id;
    Payload payload;
    LayerId emitter;
    SimTime emit_time = 0.0;
    std::optional<int> stage;
};

using EventHandler = std::function<void(const EventRecord&)>;
using ServiceHandler = std::function<Payload(const Payload&)>;
using SubscriptionId = std::uint64_t;

struct TraceRecord {
    SimTime time;
    LayerId layer;
    std::string claa_id;
    std::string operation;  // export, read, publish, deliver, invoke
    std::string verdict;
};

// Per-node environment subsystem. Every cross-layer exchange goes through one
// of the three channels here and is checked against the interaction matrix.
// CLAAs that are switched off pass the routing checks but carry nothing.
class EnvBus {
public:
    EnvBus(std::shared_ptr<const InteractionMatrix> matrix, std::set<std::string, std::less<>> enabled);

    // All matrix descriptors with their default enablement.
    explicit EnvBus(std::shared_ptr<const InteractionMatrix> matrix);

    const InteractionMatrix& matrix() const { return *matrix_; }

    bool enabled(std::string_view claa_id) const;
    void set_enabled(std::string_view claa_id, bool on);

    void export_state(LayerId layer, std::string_view claa_id, Payload value, SimTime now,
                      std::optional<double> validity = std::nullopt, std::optional<NodeId> subject = std::nullopt);

    StateRead read_state(LayerId layer, std::string_view claa_id, SimTime now,
                         std::optional<NodeId> subject = std::nullopt) const;

    // Synchronous delivery; returns the number of handlers invoked for this stage.
    std::size_t publish_event(LayerId layer, std::string_view claa_id, Payload payload, SimTime now);

    SubscriptionId subscribe(LayerId layer, std::string_view claa_id, EventHandler handler);
    void unsubscribe(SubscriptionId id);

    void register_provider(LayerId layer, std::string_view claa_id, ServiceHandler handler);
    Payload invoke_service(LayerId layer, std::string_view claa_id, const Payload& params, SimTime now);

    // Reachability record kept on behalf of the node-unavailable path.
    void record_reachability(LayerId layer, NodeId node, bool reachable, SimTime now);
    std::optional<bool> reachability(NodeId node) const;

    void set_trace(std::function<void(const TraceRecord&)> sink) { trace_ = std::move(sink); }

    // Snapshot of the store ordered by (claa_id, exporter, subject).
    std::vector<StateEntry> states() const;

private:
    struct Subscription {
        SubscriptionId id;
        LayerId layer;
        std::string claa_id;
        EventHandler handler;
    };
    using StateKey = std::tuple<std::string, LayerId, std::optional<NodeId>>;

    const ClaaDescriptor& require(std::string_view claa_id, ClaaKind kind) const;
    void check_emit(LayerId layer, const ClaaDescriptor& d, const char* op, SimTime now) const;
    void check_consume(LayerId layer, const ClaaDescriptor& d, const char* op, SimTime now) const;
    void trace(SimTime t, LayerId layer, std::string_view id, const char* op, std::string_view verdict) const;

    std::shared_ptr<const InteractionMatrix> matrix_;
    std::set<std::string, std::less<>> enabled_;
    std::map<StateKey, StateEntry> store_;
    mutable std::set<StateKey> seen_expired_;
    std::vector<Subscription> subscriptions_;
    SubscriptionId next_subscription_ = 1;
    std::map<std::string, std::pair<LayerId, ServiceHandler>, std::less<>> providers_;
    std::map<std::string, int, std::less<>> chain_stage_;  // stage currently being delivered
    std::map<NodeId, bool> reachability_;
    std::function<void(const TraceRecord&)> trace_;
};

}  // namespace claa
