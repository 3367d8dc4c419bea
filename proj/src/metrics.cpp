#include "claa/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

namespace claa {

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.0f", v);
        return buf;
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

double MetricsReport::at(std::string_view metric) const {
    auto it = global.find(std::string(metric));
    if (it == global.end()) throw std::out_of_range("unknown metric " + std::string(metric));
    return it->second;
}

double MetricsReport::at(NodeId node, std::string_view metric) const {
    auto n = per_node.find(node);
    if (n == per_node.end()) throw std::out_of_range("unknown node " + std::to_string(node));
    auto it = n->second.find(std::string(metric));
    if (it == n->second.end()) throw std::out_of_range("unknown metric " + std::string(metric));
    return it->second;
}

std::string to_csv(const MetricsReport& r) {
    std::ostringstream out;
    out << kCsvHeader << "\n";
    out << "# scenario=" << r.scenario << " seed=" << r.seed << " duration=" << format_number(r.duration) << "\n";
    out << "scope,metric,value\n";
    for (const auto& [k, v] : r.global) out << "global," << k << "," << format_number(v) << "\n";
    for (const auto& [node, m] : r.per_node)
        for (const auto& [k, v] : m) out << "node:" << node << "," << k << "," << format_number(v) << "\n";
    for (std::size_t i = 0; i < r.failures.size(); ++i) {
        const auto& f = r.failures[i];
        out << "failure:" << i << ",time," << format_number(f.time) << "\n";
        out << "failure:" << i << ",unavailability_detection_latency,"
            << (f.detection_latency ? format_number(*f.detection_latency) : "nan") << "\n";
    }
    return out.str();
}

std::string summary(const MetricsReport& r) {
    static const char* const keys[] = {"application_goodput",
                                       "data_sent",
                                       "retransmissions",
                                       "spurious_retransmission_count",
                                       "heartbeats_sent",
                                       "heartbeats_suppressed",
                                       "heartbeat_overhead_bytes",
                                       "checksum_operations_at_transport",
                                       "energy_consumed",
                                       "unavailability_detection_latency"};
    std::ostringstream out;
    out << "scenario " << r.scenario << " (seed " << r.seed << ", " << format_number(r.duration) << " s)\n";
    for (const char* k : keys) {
        auto it = r.global.find(k);
        if (it == r.global.end()) continue;
        char line[96];
        std::snprintf(line, sizeof line, "  %-34s %s\n", k, format_number(it->second).c_str());
        out << line;
    }
    for (const auto& f : r.failures)
        out << "  failure at " << format_number(f.time) << " (" << f.description << "): detected "
            << (f.detection_latency ? "after " + format_number(*f.detection_latency) + " s" : std::string("never"))
            << "\n";
    return out.str();
}

std::uint64_t report_hash(const MetricsReport& r) {
    // FNV-1a over the CSV encoding.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : to_csv(r)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool operator==(const MetricsReport& a, const MetricsReport& b) { return to_csv(a) == to_csv(b); }

namespace {

std::string relative(double base, double v) {
    if (std::isnan(base) || std::isnan(v)) return "nan";
    if (base == v) return "0";
    if (base == 0.0) return v > 0 ? "inf" : "-inf";
    return format_number((v - base) / std::abs(base));
}

}  // namespace

std::string to_csv(const Comparison& c) {
    std::ostringstream out;
    out << kCsvHeader << "\n";
    out << "metric";
    for (const auto& l : c.legs) out << "," << l;
    for (std::size_t i = 1; i < c.legs.size(); ++i) out << ",delta_" << c.legs[i] << ",rel_" << c.legs[i];
    out << "\n";
    if (c.reports.empty()) return out.str();

    std::set<std::string> metrics;
    for (const auto& r : c.reports)
        for (const auto& [k, v] : r.global) metrics.insert(k);
    auto value = [](const MetricsReport& r, const std::string& k) {
        auto it = r.global.find(k);
        return it == r.global.end() ? std::nan("") : it->second;
    };
    for (const auto& k : metrics) {
        out << k;
        for (const auto& r : c.reports) out << "," << format_number(value(r, k));
        const double base = value(c.reports.front(), k);
        for (std::size_t i = 1; i < c.reports.size(); ++i) {
            const double v = value(c.reports[i], k);
            const double delta = (std::isnan(base) && std::isnan(v)) ? 0.0 : v - base;
            out << "," << format_number(delta) << "," << relative(base, v);
        }
        out << "\n";
    }
    return out.str();
}

std::string summary(const Comparison& c) {
    static const char* const keys[] = {"application_goodput",
                                       "retransmissions",
                                       "spurious_retransmission_count",
                                       "heartbeats_sent",
                                       "heartbeats_suppressed",
                                       "checksum_operations_at_transport",
                                       "energy_consumed",
                                       "unavailability_detection_latency"};
    std::ostringstream out;
    char cell[64];
    std::snprintf(cell, sizeof cell, "%-34s", "metric");
    out << cell;
    for (const auto& l : c.legs) {
        std::snprintf(cell, sizeof cell, " %16s", l.c_str());
        out << cell;
    }
    out << "\n";
    for (const char* k : keys) {
        std::snprintf(cell, sizeof cell, "%-34s", k);
        out << cell;
        for (const auto& r : c.reports) {
            auto it = r.global.find(k);
            std::snprintf(cell, sizeof cell, " %16s", it == r.global.end() ? "-" : format_number(it->second).c_str());
            out << cell;
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace claa
