#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace claa {

enum class LayerId { Application, Sctp, Olsr, Ip, Link, Physical };

inline constexpr LayerId kAllLayers[] = {LayerId::Application, LayerId::Sctp, LayerId::Olsr,
                                         LayerId::Ip,          LayerId::Link, LayerId::Physical};

enum class ClaaKind { ActivableService, ExportedState, NotifiedEvent };

enum class Role { Source, Destination, User };

enum class SctpFunction { TransferredDataControl, ErrorCorrection, CongestionControl, PathManagement };

// How SCTP exploits a CLAA it consumes.
enum class Directive {
    FreezeTimers,
    ResetSackTimerNoBackoff,
    UpdateReachability,
    AnticipateSend,
    InvokeCongestionControl,
    ConsultBeforeSend,
    AdaptRates,
    DisableHeartbeats,
    SkipChecksum,
    SkipErrorCorrection,
    UseLinkAck,
};

std::string_view to_string(LayerId v);
std::string_view to_string(ClaaKind v);
std::string_view to_string(Role v);
std::string_view to_string(SctpFunction v);
std::string_view to_string(Directive v);

// Throw std::invalid_argument on unknown names.
LayerId layer_from_string(std::string_view s);
ClaaKind kind_from_string(std::string_view s);
Role role_from_string(std::string_view s);
SctpFunction function_from_string(std::string_view s);
Directive directive_from_string(std::string_view s);

struct RoleEntry {
    LayerId layer;
    Role role;
    std::optional<int> stage;  // chain position, acknowledgement chain only
    bool remote = false;

    bool operator==(const RoleEntry&) const = default;
};

struct ClaaDescriptor {
    std::string id;
    ClaaKind kind;
    std::vector<RoleEntry> roles;
    bool enabled_by_default = true;

    bool chained() const;
    // Stage at which `layer` emits (chained descriptors), if any.
    std::optional<int> source_stage(LayerId layer) const;

    bool operator==(const ClaaDescriptor&) const = default;
};

struct InteractionMatrix {
    std::vector<ClaaDescriptor> descriptors;
    std::map<std::string, std::set<SctpFunction>> function_bindings;
    std::map<std::string, Directive> exploitation_directives;

    const ClaaDescriptor* find(std::string_view id) const;
    const ClaaDescriptor& at(std::string_view id) const;  // throws UnknownClaa

    bool operator==(const InteractionMatrix&) const = default;
};

class UnknownClaa : public std::out_of_range {
public:
    explicit UnknownClaa(std::string_view id) : std::out_of_range("unknown CLAA: " + std::string(id)) {}
};

class MatrixFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace ids {
inline constexpr std::string_view kNodeUnavailable = "Node unavailable NE";
inline constexpr std::string_view kJitter = "Jitter of sent packets NE";
inline constexpr std::string_view kRetransmissionAvoidance = "Retransmission avoidance NE";
inline constexpr std::string_view kAcknowledgement = "Acknowledgement NE";
inline constexpr std::string_view kExplicitCongestion = "Explicit Congestion NE";
inline constexpr std::string_view kEnergyDecrease = "Significant energy decrease NE";
inline constexpr std::string_view kUnavailableLink = "Unavailable link NE";
inline constexpr std::string_view kSuperstructures = "Superstructures ES";
inline constexpr std::string_view kWirelessLinkStatus = "Wireless link status ES";
inline constexpr std::string_view kCommonSignalization = "Common Signalization ES";
inline constexpr std::string_view kPacketLossRatio = "Packet loss ratio ES";
inline constexpr std::string_view kSnr = "SNR ES";
inline constexpr std::string_view kRss = "RSS ES";
inline constexpr std::string_view kBer = "BER ES";
inline constexpr std::string_view kEnergyLevel = "Energy level ES";
inline constexpr std::string_view kFec = "FEC AS";
inline constexpr std::string_view kCommonChecksum = "Common Checksum Calculus NE";
inline constexpr std::string_view kArq = "ARQ AS";
inline constexpr std::string_view kExplicitLoss = "Explicit Lost Notification NE";
}  // namespace ids

// The SCTP/OLSR/802.11 stack arrays: 17 canonical rows plus the optional
// explicit-loss descriptor (disabled by default).
const InteractionMatrix& builtin_matrix();
InteractionMatrix load_builtin_matrix();

struct Violation {
    std::string descriptor;
    std::string rule;

    bool operator==(const Violation&) const = default;
};

std::vector<Violation> validate(const InteractionMatrix& matrix);

// Throw UnknownClaa when `claa_id` is not in the matrix.
bool may_emit(const InteractionMatrix& matrix, std::string_view claa_id, LayerId layer);
bool may_consume(const InteractionMatrix& matrix, std::string_view claa_id, LayerId layer);

nlohmann::json to_json(const InteractionMatrix& matrix);
// Throws MatrixFormatError on schema errors. Does not validate invariants.
InteractionMatrix matrix_from_json(const nlohmann::json& doc);

}  // namespace claa
