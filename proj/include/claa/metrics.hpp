#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "claa/env_bus.hpp"

namespace claa {

struct FailureRecord {
    SimTime time = 0.0;
    std::string description;
    std::optional<double> detection_latency;  // failure -> first Node-unavailable NE
};

struct MetricsReport {
    std::string scenario;
    std::uint64_t seed = 0;
    double duration = 0.0;
    std::map<std::string, double> global;
    std::map<NodeId, std::map<std::string, double>> per_node;
    std::vector<FailureRecord> failures;

    // Throws std::out_of_range for an unknown metric.
    double at(std::string_view metric) const;
    double at(NodeId node, std::string_view metric) const;
};

inline constexpr std::string_view kCsvHeader = "#claa-sim,v1";

// One row per metric: globals, then per node, then one row per failure.
std::string to_csv(const MetricsReport& r);
std::string summary(const MetricsReport& r);
std::uint64_t report_hash(const MetricsReport& r);

// NaN-aware: reports are equal when their CSV encodings are.
bool operator==(const MetricsReport& a, const MetricsReport& b);

std::string format_number(double v);

struct ComparisonLeg {
    std::string name;
    bool claa_default = false;
    std::map<std::string, bool> flags;
};

struct Comparison {
    std::vector<std::string> legs;
    std::vector<MetricsReport> reports;
};

// Table of global metrics, one column per leg plus absolute and relative
// deltas of every leg against the first.
std::string to_csv(const Comparison& c);
std::string summary(const Comparison& c);

}  // namespace claa
