#pragma once

#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "claa/env_bus.hpp"
#include "claa/ip.hpp"
#include "claa/link_phy.hpp"
#include "claa/metrics.hpp"
#include "claa/olsr.hpp"
#include "claa/scenario.hpp"
#include "claa/scheduler.hpp"
#include "claa/sctp.hpp"

namespace claa {

struct AppStats {
    std::uint64_t offered = 0;
    std::uint64_t rejected = 0;
    std::uint64_t delivered = 0;
    std::uint64_t delivered_bytes = 0;
    std::uint64_t corrupted = 0;
    std::uint64_t out_of_order = 0;
    std::uint64_t duplicates = 0;
    std::uint64_t node_unavailable_notices = 0;
    std::uint64_t unavailable_link_notices = 0;
};

// Application message: flow sequence number and origin, then a filler the
// receiver can recompute to detect corruption.
std::vector<std::uint8_t> make_message(NodeId src, std::uint32_t seq, std::size_t size);
bool message_intact(std::span<const std::uint8_t> msg, NodeId* src = nullptr, std::uint32_t* seq = nullptr);

class Simulation {
public:
    struct Node {
        NodeId id = 0;
        bool alive = true;
        std::unique_ptr<EnvBus> bus;
        std::unique_ptr<link::LinkLayer> link;
        std::unique_ptr<ip::IpLayer> ip;
        std::unique_ptr<olsr::OlsrNode> olsr;
        std::unique_ptr<sctp::Endpoint> sctp;
        AppStats app;
        std::map<std::pair<NodeId, std::uint16_t>, std::uint32_t> next_seq_in;
    };

    using ClaaTrace = std::function<void(NodeId node, const TraceRecord&)>;

    // Throws ScenarioError before any event executes when the scenario or the
    // matrix is inconsistent.
    explicit Simulation(Scenario scenario, std::shared_ptr<const InteractionMatrix> matrix = nullptr,
                        ClaaTrace trace = nullptr);
    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    // Runs to the scenario duration (once) and returns the report.
    MetricsReport run();
    void run_until(SimTime t);
    MetricsReport report() const;

    Scheduler& scheduler() { return sched_; }
    const Scenario& scenario() const { return scenario_; }
    Node& node(NodeId id);
    const std::map<NodeId, std::unique_ptr<Node>>& nodes() const { return nodes_; }
    link::Medium& medium() { return *medium_; }
    const std::vector<FailureRecord>& failures() const { return failures_; }

private:
    void build();
    void schedule_traffic(const TrafficSpec& t, std::size_t flow);
    void traffic_tick(std::size_t flow, std::uint64_t k);
    double traffic_stop(const TrafficSpec& t) const;
    void apply(const ScheduledAction& a);
    void on_delivery(Node& n, NodeId from, std::uint16_t stream, std::vector<std::uint8_t> msg);

    Scenario scenario_;
    std::shared_ptr<const InteractionMatrix> matrix_;
    ClaaTrace trace_;
    Scheduler sched_;
    std::unique_ptr<link::Medium> medium_;
    std::map<NodeId, std::unique_ptr<Node>> nodes_;
    std::vector<FailureRecord> failures_;
    std::vector<std::uint32_t> flow_seq_;
    bool ran_ = false;
};

MetricsReport run_scenario(const Scenario& s, std::shared_ptr<const InteractionMatrix> matrix = nullptr);

Comparison compare(const Scenario& s, const std::vector<ComparisonLeg>& legs,
                   std::shared_ptr<const InteractionMatrix> matrix = nullptr);

// Flag-set file, legs kept in file order: {"leg name": {"<claa id>": bool, ..., "*": default}, ...}
// Throws ScenarioError on unknown ids or fewer than two legs.
std::vector<ComparisonLeg> parse_flag_sets(const nlohmann::ordered_json& j, const InteractionMatrix& matrix);

}  // namespace claa
