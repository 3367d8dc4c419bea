#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace claa::checksum {

enum class Algorithm { Crc32cReflected, Adler32 };

std::string to_string(Algorithm alg);
Algorithm algorithm_from_string(const std::string& name);

// CRC-32c (Castagnoli, 0x1EDC6F41 normal form) with the reflected byte mapping:
// the first byte supplies the highest coefficients and, inside each byte, the
// least-significant bit is the highest coefficient. Register starts all-ones,
// result is complemented.
std::uint32_t crc32c(std::span<const std::uint8_t> bytes);

// Continue a CRC over more data. `crc` is a previously returned value.
std::uint32_t crc32c_extend(std::uint32_t crc, std::span<const std::uint8_t> bytes);

// Bit-at-a-time polynomial division over the mirrored input. Slow; kept as the
// reference the table variant is checked against.
std::uint32_t crc32c_bitwise(std::span<const std::uint8_t> bytes);

class Adler32 {
public:
    void update(std::span<const std::uint8_t> bytes);
    std::uint32_t value() const { return (b_ << 16) | a_; }

private:
    std::uint32_t a_ = 1;
    std::uint32_t b_ = 0;
};

std::uint32_t adler32(std::span<const std::uint8_t> bytes);

std::uint32_t compute(Algorithm alg, std::span<const std::uint8_t> bytes);

struct Distribution {
    Algorithm algorithm;
    std::size_t packet_len = 0;
    std::size_t sample_count = 0;
    std::array<std::uint64_t, 256> buckets{};  // bucket i holds values with top byte i
    double chi_square = 0.0;
    double p_value = 1.0;  // upper tail, 255 degrees of freedom

    bool uniform_at(double significance) const { return p_value >= significance; }
};

// Checksums of `sample_count` uniformly random packets of `packet_len` bytes,
// bucketed over 256 equal ranges of the 32-bit value space.
Distribution short_packet_distribution(Algorithm alg, std::size_t packet_len,
                                       std::size_t sample_count, std::uint64_t seed);

class FrameFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Where the transport packet sits inside a link frame. The link CRC trailer is
// the last four bytes of the frame and covers everything before it (P_LL);
// the transport checksum covers [transport_offset, transport_offset +
// transport_length) with its own 4-byte field zeroed (P_SCTP).
struct SharedChecksumConfig {
    std::size_t transport_offset = 0;
    std::size_t transport_length = 0;
    std::size_t checksum_field_offset = 8;  // relative to transport_offset
};

enum class SharedVerdict { BothValid, LinkValidOnly, Invalid };

std::string to_string(SharedVerdict v);

struct SharedCheck {
    SharedVerdict verdict = SharedVerdict::Invalid;
    bool transport_recomputed = false;
    bool transport_valid = false;  // meaningful only when transport_recomputed
};

// Checks the link CRC only; a passing frame is reported BothValid without
// touching the transport checksum. With `cross_check` the transport checksum is
// recomputed as well and LinkValidOnly is reported on disagreement.
SharedCheck shared_verify(const SharedChecksumConfig& config, std::span<const std::uint8_t> frame,
                          bool cross_check = false);

// Transport checksum over `packet` with the 4-byte field at `field_offset` treated as zero.
std::uint32_t transport_checksum(std::span<const std::uint8_t> packet, std::size_t field_offset);

void store_be32(std::span<std::uint8_t> out, std::uint32_t v);
std::uint32_t load_be32(std::span<const std::uint8_t> in);

}  // namespace claa::checksum
