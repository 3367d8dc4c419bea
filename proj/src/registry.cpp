#include "claa/registry.hpp"

#include <algorithm>
#include <array>
#include <utility>

namespace claa {

namespace {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, std::string_view>, N>;

constexpr NameTable<LayerId, 6> kLayerNames{{{LayerId::Application, "Application"},
                                             {LayerId::Sctp, "Sctp"},
                                             {LayerId::Olsr, "Olsr"},
                                             {LayerId::Ip, "Ip"},
                                             {LayerId::Link, "Link"},
                                             {LayerId::Physical, "Physical"}}};
constexpr NameTable<ClaaKind, 3> kKindNames{{{ClaaKind::ActivableService, "ActivableService"},
                                             {ClaaKind::ExportedState, "ExportedState"},
                                             {ClaaKind::NotifiedEvent, "NotifiedEvent"}}};
constexpr NameTable<Role, 3> kRoleNames{
    {{Role::Source, "Source"}, {Role::Destination, "Destination"}, {Role::User, "User"}}};
constexpr NameTable<SctpFunction, 4> kFunctionNames{
    {{SctpFunction::TransferredDataControl, "TransferredDataControl"},
     {SctpFunction::ErrorCorrection, "ErrorCorrection"},
     {SctpFunction::CongestionControl, "CongestionControl"},
     {SctpFunction::PathManagement, "PathManagement"}}};
constexpr NameTable<Directive, 11> kDirectiveNames{{
    {Directive::FreezeTimers, "FreezeTimers"},
    {Directive::ResetSackTimerNoBackoff, "ResetSackTimerNoBackoff"},
    {Directive::UpdateReachability, "UpdateReachability"},
    {Directive::AnticipateSend, "AnticipateSend"},
    {Directive::InvokeCongestionControl, "InvokeCongestionControl"},
    {Directive::ConsultBeforeSend, "ConsultBeforeSend"},
    {Directive::AdaptRates, "AdaptRates"},
    {Directive::DisableHeartbeats, "DisableHeartbeats"},
    {Directive::SkipChecksum, "SkipChecksum"},
    {Directive::SkipErrorCorrection, "SkipErrorCorrection"},
    {Directive::UseLinkAck, "UseLinkAck"},
}};

template <typename E, std::size_t N>
std::string_view name_of(const NameTable<E, N>& table, E v) {
    for (const auto& [e, name] : table)
        if (e == v) return name;
    return "?";
}

template <typename E, std::size_t N>
E parse(const NameTable<E, N>& table, std::string_view s, const char* what) {
    for (const auto& [e, name] : table)
        if (name == s) return e;
    throw std::invalid_argument(std::string("unknown ") + what + ": " + std::string(s));
}

RoleEntry src(LayerId l, std::optional<int> stage = std::nullopt, bool remote = false) {
    return {l, Role::Source, stage, remote};
}
RoleEntry dst(LayerId l, std::optional<int> stage = std::nullopt) { return {l, Role::Destination, stage, false}; }
RoleEntry usr(LayerId l) { return {l, Role::User, std::nullopt, false}; }

bool is_consumer(Role r) { return r == Role::Destination || r == Role::User; }

InteractionMatrix make_builtin() {
    using L = LayerId;
    using K = ClaaKind;
    using F = SctpFunction;
    using D = Directive;
    constexpr auto TDC = F::TransferredDataControl;
    constexpr auto EC = F::ErrorCorrection;
    constexpr auto CC = F::CongestionControl;
    constexpr auto PM = F::PathManagement;

    struct Row {
        std::string_view id;
        K kind;
        std::vector<RoleEntry> roles;
        std::set<F> functions;
        std::optional<D> directive;
        bool enabled = true;
    };

    const std::vector<Row> rows = {
        {ids::kNodeUnavailable, K::NotifiedEvent, {dst(L::Application), src(L::Sctp)}, {PM}, D::UpdateReachability},
        {ids::kJitter, K::NotifiedEvent, {dst(L::Sctp), src(L::Link)}, {TDC}, D::ResetSackTimerNoBackoff},
        {ids::kRetransmissionAvoidance,
         K::NotifiedEvent,
         {dst(L::Sctp), dst(L::Olsr), src(L::Link)},
         {TDC, PM},
         D::FreezeTimers},
        {ids::kAcknowledgement,
         K::NotifiedEvent,
         {dst(L::Sctp, 3), dst(L::Olsr, 2), src(L::Olsr, 3), dst(L::Link, 1), src(L::Link, 2), src(L::Physical, 1)},
         {TDC},
         D::AnticipateSend},
        {ids::kExplicitCongestion, K::NotifiedEvent, {dst(L::Sctp), src(L::Ip, std::nullopt, true)}, {CC},
         D::InvokeCongestionControl},
        {ids::kEnergyDecrease,
         K::NotifiedEvent,
         {dst(L::Application), dst(L::Sctp), dst(L::Olsr), dst(L::Ip), dst(L::Link), src(L::Physical)},
         {TDC},
         D::DisableHeartbeats},
        {ids::kUnavailableLink,
         K::NotifiedEvent,
         {dst(L::Application), dst(L::Sctp), src(L::Olsr)},
         {TDC, PM},
         D::ResetSackTimerNoBackoff},
        {ids::kSuperstructures, K::ExportedState, {usr(L::Application), usr(L::Sctp), src(L::Olsr)}, {TDC, PM},
         D::ConsultBeforeSend},
        {ids::kWirelessLinkStatus, K::ExportedState, {usr(L::Application), usr(L::Sctp), src(L::Olsr)}, {TDC, PM},
         D::ConsultBeforeSend},
        {ids::kCommonSignalization, K::ExportedState, {usr(L::Application), usr(L::Sctp), src(L::Olsr)}, {PM},
         D::ConsultBeforeSend},
        {ids::kPacketLossRatio, K::ExportedState, {usr(L::Application), usr(L::Sctp), src(L::Link)}, {TDC},
         D::AdaptRates},
        {ids::kSnr, K::ExportedState, {usr(L::Application), usr(L::Sctp), usr(L::Link), src(L::Physical)}, {TDC},
         D::AdaptRates},
        {ids::kRss, K::ExportedState, {usr(L::Application), usr(L::Sctp), usr(L::Link), src(L::Physical)}, {TDC},
         D::UseLinkAck},
        {ids::kBer, K::ExportedState, {usr(L::Application), usr(L::Sctp), usr(L::Link), src(L::Physical)}, {TDC},
         D::AdaptRates},
        {ids::kEnergyLevel,
         K::ExportedState,
         {usr(L::Application), usr(L::Sctp), usr(L::Olsr), usr(L::Ip), usr(L::Link), usr(L::Physical),
          src(L::Physical)},
         {TDC, PM},
         D::DisableHeartbeats},
        {ids::kFec, K::ActivableService, {usr(L::Sctp), src(L::Link)}, {EC}, D::SkipChecksum},
        {ids::kCommonChecksum, K::NotifiedEvent, {dst(L::Sctp), src(L::Link)}, {EC}, D::SkipChecksum},
        {ids::kArq, K::ActivableService, {usr(L::Sctp), src(L::Link)}, {EC}, D::SkipErrorCorrection},
        {ids::kExplicitLoss, K::NotifiedEvent, {dst(L::Sctp), src(L::Link)}, {TDC}, D::ResetSackTimerNoBackoff,
         false},
    };

    InteractionMatrix m;
    for (const auto& row : rows) {
        m.descriptors.push_back({std::string(row.id), row.kind, row.roles, row.enabled});
        if (!row.functions.empty()) m.function_bindings[std::string(row.id)] = row.functions;
        if (row.directive) m.exploitation_directives[std::string(row.id)] = *row.directive;
    }
    return m;
}

}  // namespace

std::string_view to_string(LayerId v) { return name_of(kLayerNames, v); }
std::string_view to_string(ClaaKind v) { return name_of(kKindNames, v); }
std::string_view to_string(Role v) { return name_of(kRoleNames, v); }
std::string_view to_string(SctpFunction v) { return name_of(kFunctionNames, v); }
std::string_view to_string(Directive v) { return name_of(kDirectiveNames, v); }

LayerId layer_from_string(std::string_view s) { return parse(kLayerNames, s, "layer"); }
ClaaKind kind_from_string(std::string_view s) { return parse(kKindNames, s, "CLAA kind"); }
Role role_from_string(std::string_view s) { return parse(kRoleNames, s, "role"); }
SctpFunction function_from_string(std::string_view s) { return parse(kFunctionNames, s, "SCTP function"); }
Directive directive_from_string(std::string_view s) { return parse(kDirectiveNames, s, "directive"); }

bool ClaaDescriptor::chained() const {
    return std::any_of(roles.begin(), roles.end(), [](const RoleEntry& r) { return r.stage.has_value(); });
}

std::optional<int> ClaaDescriptor::source_stage(LayerId layer) const {
    for (const auto& r : roles)
        if (r.layer == layer && r.role == Role::Source) return r.stage;
    return std::nullopt;
}

const ClaaDescriptor* InteractionMatrix::find(std::string_view id) const {
    for (const auto& d : descriptors)
        if (d.id == id) return &d;
    return nullptr;
}

const ClaaDescriptor& InteractionMatrix::at(std::string_view id) const {
    if (const auto* d = find(id)) return *d;
    throw UnknownClaa(id);
}

const InteractionMatrix& builtin_matrix() {
    static const InteractionMatrix m = make_builtin();
    return m;
}

InteractionMatrix load_builtin_matrix() { return builtin_matrix(); }

std::vector<Violation> validate(const InteractionMatrix& matrix) {
    std::vector<Violation> out;
    auto flag = [&](const std::string& id, std::string rule) { out.push_back({id, std::move(rule)}); };

    std::set<std::string> seen;
    for (const auto& d : matrix.descriptors) {
        if (!seen.insert(d.id).second) flag(d.id, "duplicate id");

        const bool has_source =
            std::any_of(d.roles.begin(), d.roles.end(), [](const RoleEntry& r) { return r.role == Role::Source; });
        const bool has_consumer =
            std::any_of(d.roles.begin(), d.roles.end(), [](const RoleEntry& r) { return is_consumer(r.role); });
        if (!has_source) flag(d.id, "missing source");
        if (!has_consumer) flag(d.id, "missing consumer");

        const Role expected = d.kind == ClaaKind::NotifiedEvent ? Role::Destination : Role::User;
        for (const auto& r : d.roles) {
            if (is_consumer(r.role) && r.role != expected) {
                flag(d.id, "consumer role mismatch");
                break;
            }
        }
        for (std::size_t i = 0; i < d.roles.size(); ++i)
            for (std::size_t j = i + 1; j < d.roles.size(); ++j)
                if (d.roles[i].layer == d.roles[j].layer && d.roles[i].role == d.roles[j].role &&
                    d.roles[i].stage == d.roles[j].stage)
                    flag(d.id, "duplicate role");
        for (const auto& r : d.roles)
            if (r.remote && r.role != Role::Source) flag(d.id, "remote consumer");

        if (d.chained()) {
            const bool all_staged =
                std::all_of(d.roles.begin(), d.roles.end(), [](const RoleEntry& r) { return r.stage.has_value(); });
            if (!all_staged || d.kind != ClaaKind::NotifiedEvent) {
                flag(d.id, "stage on unchained role");
            } else {
                // Stages 1..n: one source and at least one destination per stage.
                int max_stage = 0;
                for (const auto& r : d.roles) max_stage = std::max(max_stage, *r.stage);
                for (int s = 1; s <= max_stage; ++s) {
                    const auto n_src = std::count_if(d.roles.begin(), d.roles.end(), [s](const RoleEntry& r) {
                        return r.role == Role::Source && *r.stage == s;
                    });
                    const auto n_dst = std::count_if(d.roles.begin(), d.roles.end(), [s](const RoleEntry& r) {
                        return r.role == Role::Destination && *r.stage == s;
                    });
                    if (n_src != 1 || n_dst < 1) {
                        flag(d.id, "broken chain");
                        break;
                    }
                }
            }
        }

        bool sctp_consumes = false, sctp_present = false;
        for (const auto& r : d.roles) {
            if (r.layer != LayerId::Sctp) continue;
            sctp_present = true;
            sctp_consumes = sctp_consumes || is_consumer(r.role);
        }
        if (sctp_present) {
            auto it = matrix.function_bindings.find(d.id);
            if (it == matrix.function_bindings.end() || it->second.empty())
                flag(d.id, sctp_consumes ? "unbound SCTP consumer" : "unbound SCTP source");
        }
        if (sctp_consumes && !matrix.exploitation_directives.contains(d.id)) flag(d.id, "missing directive");
    }

    for (const auto& [id, fns] : matrix.function_bindings) {
        if (!matrix.find(id)) flag(id, "dangling function binding");
        else if (fns.empty()) flag(id, "empty function binding");
    }
    for (const auto& [id, dir] : matrix.exploitation_directives)
        if (!matrix.find(id)) flag(id, "dangling directive");
    return out;
}

bool may_emit(const InteractionMatrix& matrix, std::string_view claa_id, LayerId layer) {
    const auto& d = matrix.at(claa_id);
    return std::any_of(d.roles.begin(), d.roles.end(),
                       [layer](const RoleEntry& r) { return r.layer == layer && r.role == Role::Source; });
}

bool may_consume(const InteractionMatrix& matrix, std::string_view claa_id, LayerId layer) {
    const auto& d = matrix.at(claa_id);
    return std::any_of(d.roles.begin(), d.roles.end(),
                       [layer](const RoleEntry& r) { return r.layer == layer && is_consumer(r.role); });
}

nlohmann::json to_json(const InteractionMatrix& matrix) {
    auto doc = nlohmann::json::array();
    for (const auto& d : matrix.descriptors) {
        nlohmann::json roles = nlohmann::json::array();
        for (const auto& r : d.roles) {
            nlohmann::json jr{{"layer", to_string(r.layer)}, {"role", to_string(r.role)}};
            if (r.stage) jr["stage"] = *r.stage;
            if (r.remote) jr["remote"] = true;
            roles.push_back(std::move(jr));
        }
        nlohmann::json fns = nlohmann::json::array();
        if (auto it = matrix.function_bindings.find(d.id); it != matrix.function_bindings.end())
            for (auto f : it->second) fns.push_back(to_string(f));
        nlohmann::json directive = nullptr;
        if (auto it = matrix.exploitation_directives.find(d.id); it != matrix.exploitation_directives.end())
            directive = to_string(it->second);
        doc.push_back({{"id", d.id},
                       {"kind", to_string(d.kind)},
                       {"enabled_by_default", d.enabled_by_default},
                       {"roles", std::move(roles)},
                       {"sctp_functions", std::move(fns)},
                       {"directive", std::move(directive)}});
    }
    return doc;
}

namespace {

void only_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed, const char* what) {
    if (!obj.is_object()) throw MatrixFormatError(std::string(what) + " must be an object");
    for (const auto& [k, v] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw MatrixFormatError("unknown " + std::string(what) + " key '" + k + "'");
}

}  // namespace

InteractionMatrix matrix_from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) throw MatrixFormatError("matrix document must be a JSON array of descriptors");
    InteractionMatrix m;
    try {
        for (const auto& jd : doc) {
            only_keys(jd, {"id", "kind", "roles", "sctp_functions", "directive", "enabled_by_default"}, "descriptor");
            ClaaDescriptor d;
            d.id = jd.at("id").get<std::string>();
            d.kind = kind_from_string(jd.at("kind").get<std::string>());
            d.enabled_by_default = jd.value("enabled_by_default", true);
            for (const auto& jr : jd.at("roles")) {
                only_keys(jr, {"layer", "role", "stage", "remote"}, "role");
                RoleEntry r{layer_from_string(jr.at("layer").get<std::string>()),
                            role_from_string(jr.at("role").get<std::string>()), std::nullopt,
                            jr.value("remote", false)};
                if (jr.contains("stage") && !jr["stage"].is_null()) r.stage = jr["stage"].get<int>();
                d.roles.push_back(r);
            }
            if (jd.contains("sctp_functions")) {
                std::set<SctpFunction> fns;
                for (const auto& f : jd["sctp_functions"]) fns.insert(function_from_string(f.get<std::string>()));
                if (!fns.empty()) m.function_bindings[d.id] = std::move(fns);
            }
            if (jd.contains("directive") && !jd["directive"].is_null())
                m.exploitation_directives[d.id] = directive_from_string(jd["directive"].get<std::string>());
            m.descriptors.push_back(std::move(d));
        }
    } catch (const nlohmann::json::exception& e) {
        throw MatrixFormatError(e.what());
    } catch (const std::invalid_argument& e) {
        throw MatrixFormatError(e.what());
    }
    return m;
}

}  // namespace claa
