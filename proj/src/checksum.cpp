#include "claa/checksum.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <vector>

#include "claa/rng.hpp"

namespace claa::checksum {

namespace {

// Castagnoli generator, normal form without the x^32 term.
constexpr std::uint32_t kPolyNormal = 0x1EDC6F41u;
// Same generator with its coefficient order mirrored.
constexpr std::uint32_t kPolyReflected = 0x82F63B78u;
constexpr std::uint32_t kAdlerMod = 65521u;

constexpr std::array<std::uint32_t, 256> make_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t r = i;
        for (int k = 0; k < 8; ++k) r = (r & 1u) ? (r >> 1) ^ kPolyReflected : r >> 1;
        table[i] = r;
    }
    return table;
}

constexpr auto kTable = make_table();

std::uint8_t mirror8(std::uint8_t b) {
    std::uint8_t r = 0;
    for (int i = 0; i < 8; ++i)
        if (b & (1u << i)) r |= static_cast<std::uint8_t>(1u << (7 - i));
    return r;
}

std::uint32_t mirror32(std::uint32_t v) {
    std::uint32_t r = 0;
    for (int i = 0; i < 32; ++i)
        if (v & (1u << i)) r |= 1u << (31 - i);
    return r;
}

}  // namespace

std::string to_string(Algorithm alg) {
    return alg == Algorithm::Crc32cReflected ? "crc32c" : "adler32";
}

Algorithm algorithm_from_string(const std::string& name) {
    if (name == "crc32c") return Algorithm::Crc32cReflected;
    if (name == "adler32") return Algorithm::Adler32;
    throw std::invalid_argument("unknown checksum algorithm: " + name);
}

std::uint32_t crc32c_extend(std::uint32_t crc, std::span<const std::uint8_t> bytes) {
    std::uint32_t r = ~crc;
    for (std::uint8_t b : bytes) r = kTable[(r ^ b) & 0xFFu] ^ (r >> 8);
    return ~r;
}

std::uint32_t crc32c(std::span<const std::uint8_t> bytes) { return crc32c_extend(0, bytes); }

std::uint32_t crc32c_bitwise(std::span<const std::uint8_t> bytes) {
    // Long division with the highest coefficient on the left: each byte is
    // mirrored so that its least-significant bit enters first, and the
    // remainder is mirrored back at the end.
    std::uint32_t rem = 0xFFFFFFFFu;
    for (std::uint8_t raw : bytes) {
        const std::uint8_t b = mirror8(raw);
        for (int bit = 7; bit >= 0; --bit) {
            const bool in = (b >> bit) & 1u;
            const bool top = (rem >> 31) & 1u;
            rem <<= 1;
            if (in != top) rem ^= kPolyNormal;
        }
    }
    return ~mirror32(rem);
}

void Adler32::update(std::span<const std::uint8_t> bytes) {
    for (std::uint8_t b : bytes) {
        a_ = (a_ + b) % kAdlerMod;
        b_ = (b_ + a_) % kAdlerMod;
    }
}

std::uint32_t adler32(std::span<const std::uint8_t> bytes) {
    Adler32 a;
    a.update(bytes);
    return a.value();
}

std::uint32_t compute(Algorithm alg, std::span<const std::uint8_t> bytes) {
    return alg == Algorithm::Crc32cReflected ? crc32c(bytes) : adler32(bytes);
}

Distribution short_packet_distribution(Algorithm alg, std::size_t packet_len,
                                       std::size_t sample_count, std::uint64_t seed) {
    Distribution d;
    d.algorithm = alg;
    d.packet_len = packet_len;
    d.sample_count = sample_count;
    if (packet_len == 0 || sample_count == 0)
        throw std::invalid_argument("packet_len and sample_count must be >= 1");

    Rng rng(seed);
    std::vector<std::uint8_t> packet(packet_len);
    for (std::size_t n = 0; n < sample_count; ++n) {
        for (auto& b : packet) b = static_cast<std::uint8_t>(rng.next() >> 56);
        ++d.buckets[compute(alg, packet) >> 24];
    }

    const double expected = static_cast<double>(sample_count) / 256.0;
    double chi = 0.0;
    for (auto c : d.buckets) {
        const double diff = static_cast<double>(c) - expected;
        chi += diff * diff / expected;
    }
    d.chi_square = chi;
    const boost::math::chi_squared dist(255.0);
    d.p_value = boost::math::cdf(boost::math::complement(dist, chi));
    return d;
}

std::string to_string(SharedVerdict v) {
    switch (v) {
        case SharedVerdict::BothValid: return "BothValid";
        case SharedVerdict::LinkValidOnly: return "LinkValidOnly";
        case SharedVerdict::Invalid: return "Invalid";
    }
    return "?";
}

void store_be32(std::span<std::uint8_t> out, std::uint32_t v) {
    out[0] = static_cast<std::uint8_t>(v >> 24);
    out[1] = static_cast<std::uint8_t>(v >> 16);
    out[2] = static_cast<std::uint8_t>(v >> 8);
    out[3] = static_cast<std::uint8_t>(v);
}

std::uint32_t load_be32(std::span<const std::uint8_t> in) {
    return (std::uint32_t{in[0]} << 24) | (std::uint32_t{in[1]} << 16) | (std::uint32_t{in[2]} << 8) |
           std::uint32_t{in[3]};
}

std::uint32_t transport_checksum(std::span<const std::uint8_t> packet, std::size_t field_offset) {
    if (field_offset + 4 > packet.size()) throw FrameFormatError("checksum field outside packet");
    static constexpr std::uint8_t zeros[4] = {0, 0, 0, 0};
    std::uint32_t crc = crc32c(packet.first(field_offset));
    crc = crc32c_extend(crc, zeros);
    return crc32c_extend(crc, packet.subspan(field_offset + 4));
}

SharedCheck shared_verify(const SharedChecksumConfig& config, std::span<const std::uint8_t> frame,
                          bool cross_check) {
    if (frame.size() < 4) throw FrameFormatError("frame shorter than the link CRC trailer");
    const std::size_t link_len = frame.size() - 4;
    const std::size_t t_end = config.transport_offset + config.transport_length;
    if (t_end > link_len || config.checksum_field_offset + 4 > config.transport_length)
        throw FrameFormatError("transport coverage out of frame bounds");
    if (config.transport_offset == 0 && t_end == link_len)
        throw FrameFormatError("link coverage must strictly contain transport coverage");

    SharedCheck out;
    const std::uint32_t stored = load_be32(frame.subspan(link_len, 4));
    if (crc32c(frame.first(link_len)) != stored) {
        out.verdict = SharedVerdict::Invalid;
        return out;
    }
    out.verdict = SharedVerdict::BothValid;
    if (cross_check) {
        const auto transport = frame.subspan(config.transport_offset, config.transport_length);
        const std::uint32_t carried = load_be32(transport.subspan(config.checksum_field_offset, 4));
        out.transport_recomputed = true;
        out.transport_valid = transport_checksum(transport, config.checksum_field_offset) == carried;
        if (!out.transport_valid) out.verdict = SharedVerdict::LinkValidOnly;
    }
    return out;
}

}  // namespace claa::checksum
