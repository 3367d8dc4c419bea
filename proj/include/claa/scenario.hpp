#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "claa/env_bus.hpp"
#include "claa/ip.hpp"
#include "claa/link_phy.hpp"
#include "claa/olsr.hpp"
#include "claa/sctp.hpp"

namespace claa {

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NodeSpec {
    NodeId id = 0;
    std::optional<double> energy_budget;
};

struct LinkSpec {
    NodeId a = 0;
    NodeId b = 0;
    link::LinkParams params;
};

struct TrafficSpec {
    NodeId src = 0;
    NodeId dst = 0;
    std::uint16_t stream = 0;
    std::size_t size = 200;  // bytes per message
    double rate = 5.0;       // messages per second
    double start = 1.0;
    double stop = 0.0;       // exclusive; 0 = until the end
};

enum class ActionKind { KillLink, RestoreLink, KillNode, SetSnr, SetBer, MediumBusy, InjectEvent };

std::string to_string(ActionKind k);

struct ScheduledAction {
    double time = 0.0;
    ActionKind kind = ActionKind::KillLink;
    NodeId a = 0;  // link end, or the node for node-scoped actions
    NodeId b = 0;
    double value = 0.0;  // SNR dB, BER, or busy duration
    LayerId layer = LayerId::Link;
    std::string claa;
    Payload payload;
};

struct ChannelSpec {
    link::BerCurve curve;
    link::FecModel fec;
};

struct Scenario {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    double duration = 60.0;
    std::vector<NodeSpec> nodes;
    std::vector<LinkSpec> links;
    std::vector<TrafficSpec> traffic;
    std::vector<ScheduledAction> schedule;

    bool claa_default = false;
    std::map<std::string, bool> claa_flags;
    // Build the stack with no environment bus at all (strict layering).
    bool strip_bus = false;

    ChannelSpec channel;
    link::LinkConfig link;
    ip::IpConfig ip;
    olsr::OlsrConfig olsr;
    sctp::SctpConfig sctp;
};

// Parses and validates; throws ScenarioError with a readable reason.
Scenario parse_scenario(const nlohmann::json& j, const InteractionMatrix& matrix);
Scenario load_scenario(const std::filesystem::path& path, const InteractionMatrix& matrix);

// Throws ScenarioError on the first inconsistency.
void validate_scenario(const Scenario& s, const InteractionMatrix& matrix);

// CLAAs switched on for a run: explicit flags over the scenario default.
std::set<std::string, std::less<>> enabled_claas(const Scenario& s, const InteractionMatrix& matrix);

}  // namespace claa
