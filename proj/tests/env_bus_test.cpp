#include <memory>
#include <string>
#include <vector>

#include "claa/env_bus.hpp"
#include "claa/rng.hpp"
#include "doctest.h"

using namespace claa;

namespace {

std::shared_ptr<const InteractionMatrix> builtin() {
    return std::shared_ptr<const InteractionMatrix>(&builtin_matrix(), [](const InteractionMatrix*) {});
}

}  // namespace

TEST_CASE("exported state validity") {
    EnvBus bus(builtin());
    bus.export_state(LayerId::Olsr, ids::kWirelessLinkStatus, {{"neighbor", 2}, {"quality", 0.7}}, 10.0, 6.0);
    auto r = bus.read_state(LayerId::Sctp, ids::kWirelessLinkStatus, 15.0);
    REQUIRE(r.present());
    CHECK(r.entry->value["quality"] == 0.7);
    CHECK(bus.read_state(LayerId::Sctp, ids::kWirelessLinkStatus, 16.0).present());
    CHECK(bus.read_state(LayerId::Sctp, ids::kWirelessLinkStatus, 16.5).status == ReadStatus::Expired);
    CHECK(bus.read_state(LayerId::Sctp, ids::kSuperstructures, 1.0).status == ReadStatus::Absent);

    bus.export_state(LayerId::Olsr, ids::kWirelessLinkStatus, {{"quality", 0.9}}, 17.0, 6.0);
    CHECK(bus.read_state(LayerId::Sctp, ids::kWirelessLinkStatus, 17.0).entry->value["quality"] == 0.9);
    CHECK_THROWS_AS(bus.export_state(LayerId::Olsr, ids::kWirelessLinkStatus, 1, 16.0), std::invalid_argument);
    CHECK_THROWS_AS(bus.export_state(LayerId::Olsr, ids::kWirelessLinkStatus, 1, 18.0, 0.0), std::invalid_argument);
}

TEST_CASE("states without validity never expire; subjects are separate") {
    EnvBus bus(builtin());
    bus.export_state(LayerId::Physical, ids::kSnr, 20.0, 1.0, std::nullopt, 2);
    bus.export_state(LayerId::Physical, ids::kSnr, 5.0, 1.0, std::nullopt, 3);
    CHECK(bus.read_state(LayerId::Sctp, ids::kSnr, 1e6, 2).entry->value == 20.0);
    CHECK(bus.read_state(LayerId::Sctp, ids::kSnr, 1e6, 3).entry->value == 5.0);
    CHECK(bus.states().size() == 2);
}

TEST_CASE("routing checks") {
    EnvBus bus(builtin());
    CHECK_THROWS_AS(bus.export_state(LayerId::Link, ids::kSuperstructures, 1, 0.0), RoutingViolation);
    CHECK_THROWS_AS(bus.read_state(LayerId::Ip, ids::kCommonSignalization, 0.0), RoutingViolation);
    CHECK_THROWS_AS(bus.export_state(LayerId::Sctp, ids::kNodeUnavailable, 1, 0.0), KindMismatch);
    CHECK_THROWS_AS(bus.publish_event(LayerId::Olsr, ids::kSuperstructures, {}, 0.0), KindMismatch);
    CHECK_THROWS_AS(bus.publish_event(LayerId::Application, ids::kNodeUnavailable, {}, 0.0), RoutingViolation);
    CHECK_THROWS_AS(bus.subscribe(LayerId::Olsr, ids::kNodeUnavailable, [](const EventRecord&) {}), RoutingViolation);
    CHECK_THROWS_AS(bus.invoke_service(LayerId::Olsr, ids::kFec, {}, 0.0), RoutingViolation);
    CHECK_THROWS_AS(bus.read_state(LayerId::Sctp, "Bogus ES", 0.0), UnknownClaa);
}

TEST_CASE("publish and subscribe") {
    EnvBus bus(builtin());
    std::vector<int> order;
    bus.subscribe(LayerId::Application, ids::kNodeUnavailable, [&](const EventRecord& e) {
        CHECK(e.payload["peer"] == 3);
        CHECK(e.emitter == LayerId::Sctp);
        order.push_back(1);
    });
    const auto second = bus.subscribe(LayerId::Application, ids::kNodeUnavailable, [&](const EventRecord&) { order.push_back(2); });
    CHECK(bus.publish_event(LayerId::Sctp, ids::kNodeUnavailable, {{"peer", 3}}, 1.0) == 2);
    CHECK(order == std::vector<int>{1, 2});
    bus.unsubscribe(second);
    bus.unsubscribe(second);
    CHECK(bus.publish_event(LayerId::Sctp, ids::kNodeUnavailable, {{"peer", 3}}, 2.0) == 1);
}

TEST_CASE("acknowledgement chain is re-published stage by stage") {
    EnvBus bus(builtin());
    std::vector<std::string> seen;
    bus.subscribe(LayerId::Link, ids::kAcknowledgement, [&](const EventRecord& e) {
        seen.push_back("link" + std::to_string(*e.stage));
        bus.publish_event(LayerId::Link, ids::kAcknowledgement, e.payload, e.emit_time);
    });
    bus.subscribe(LayerId::Olsr, ids::kAcknowledgement, [&](const EventRecord& e) {
        seen.push_back("olsr" + std::to_string(*e.stage));
        auto p = e.payload;
        p["one_hop_sym"] = true;
        bus.publish_event(LayerId::Olsr, ids::kAcknowledgement, p, e.emit_time);
    });
    bus.subscribe(LayerId::Sctp, ids::kAcknowledgement, [&](const EventRecord& e) {
        seen.push_back("sctp" + std::to_string(*e.stage));
        CHECK(e.payload["one_hop_sym"] == true);
    });
    bus.publish_event(LayerId::Physical, ids::kAcknowledgement, {{"seq", 9}}, 1.0);
    CHECK(seen == std::vector<std::string>{"link1", "olsr2", "sctp3"});

    CHECK_THROWS_AS(bus.publish_event(LayerId::Olsr, ids::kAcknowledgement, {}, 2.0), ChainOrderViolation);
    // A fresh chain still works after the rejected one.
    seen.clear();
    bus.publish_event(LayerId::Physical, ids::kAcknowledgement, {}, 3.0);
    CHECK(seen.size() == 3);
}

TEST_CASE("activable services") {
    EnvBus bus(builtin());
    CHECK_THROWS_AS(bus.invoke_service(LayerId::Sctp, ids::kArq, {}, 0.0), NoProvider);
    bool arq = false;
    bus.register_provider(LayerId::Link, ids::kArq, [&](const Payload& p) {
        arq = p.at("enable").get<bool>();
        return Payload{{"active", arq}};
    });
    CHECK_THROWS_AS(bus.register_provider(LayerId::Link, ids::kArq, [](const Payload&) { return Payload(); }), BusError);
    const auto r = bus.invoke_service(LayerId::Sctp, ids::kArq, {{"peer", 2}, {"enable", true}}, 0.0);
    CHECK(arq);
    CHECK(r["active"] == true);
}

TEST_CASE("switched-off CLAAs pass routing checks but carry nothing") {
    EnvBus bus(builtin(), {});
    int hits = 0;
    bus.subscribe(LayerId::Application, ids::kUnavailableLink, [&](const EventRecord&) { ++hits; });
    CHECK(bus.publish_event(LayerId::Olsr, ids::kUnavailableLink, {{"destination", 4}}, 1.0) == 0);
    CHECK(hits == 0);
    bus.export_state(LayerId::Olsr, ids::kSuperstructures, {{"x", 1}}, 1.0);
    CHECK(bus.read_state(LayerId::Sctp, ids::kSuperstructures, 1.0).status == ReadStatus::Absent);
    CHECK_THROWS_AS(bus.export_state(LayerId::Link, ids::kSuperstructures, 1, 0.0), RoutingViolation);

    bus.set_enabled(ids::kUnavailableLink, true);
    CHECK(bus.publish_event(LayerId::Olsr, ids::kUnavailableLink, {{"destination", 4}}, 2.0) == 1);
    CHECK_FALSE(bus.enabled(ids::kExplicitLoss));
    CHECK_FALSE(EnvBus(builtin()).enabled(ids::kExplicitLoss));
}

TEST_CASE("trace records every exchange") {
    EnvBus bus(builtin());
    std::vector<TraceRecord> trace;
    bus.set_trace([&](const TraceRecord& r) { trace.push_back(r); });
    bus.export_state(LayerId::Olsr, ids::kSuperstructures, 1, 0.0);
    bus.read_state(LayerId::Sctp, ids::kSuperstructures, 0.0);
    CHECK_THROWS(bus.read_state(LayerId::Ip, ids::kSuperstructures, 0.0));
    REQUIRE(trace.size() >= 3);
    CHECK(trace[0].operation == "export");
    CHECK(trace[1].operation == "read");
    CHECK(trace.back().verdict != "ok");
}

TEST_CASE("random call sequences never cross an undeclared edge") {
    const auto& m = builtin_matrix();
    Rng rng(77);
    for (int round = 0; round < 20; ++round) {
        EnvBus bus(builtin());
        std::vector<std::pair<LayerId, std::string>> deliveries;
        for (const auto& d : m.descriptors)
            for (auto l : kAllLayers)
                if (d.kind == ClaaKind::NotifiedEvent && may_consume(m, d.id, l))
                    bus.subscribe(l, d.id, [&deliveries, l](const EventRecord& e) { deliveries.push_back({l, e.claa_id}); });
        double now = 0.0;
        for (int i = 0; i < 300; ++i) {
            now += 0.01;
            const auto& d = m.descriptors[rng.below(m.descriptors.size())];
            const auto layer = kAllLayers[rng.below(6)];
            try {
                switch (d.kind) {
                case ClaaKind::ExportedState: bus.export_state(layer, d.id, i, now); break;
                case ClaaKind::NotifiedEvent: bus.publish_event(layer, d.id, Payload::object(), now); break;
                case ClaaKind::ActivableService: bus.invoke_service(layer, d.id, {}, now); break;
                }
                if (d.kind != ClaaKind::ActivableService) REQUIRE(may_emit(m, d.id, layer));
            } catch (const RoutingViolation&) {
                if (d.kind == ClaaKind::ActivableService) REQUIRE_FALSE(may_consume(m, d.id, layer));
                else REQUIRE_FALSE(may_emit(m, d.id, layer));
            } catch (const ChainOrderViolation&) {
                REQUIRE(d.chained());
            } catch (const NoProvider&) {
                REQUIRE(d.kind == ClaaKind::ActivableService);
            }
        }
        for (const auto& [l, cid] : deliveries) REQUIRE(may_consume(m, cid, l));
    }
}
