#include <string>
#include <vector>

#include "claa/checksum.hpp"
#include "claa/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace claa;
using namespace claa::checksum;

namespace {

std::vector<std::uint8_t> ascii(const std::string& s) { return {s.begin(), s.end()}; }

std::vector<std::uint8_t> random_bytes(Rng& rng, std::size_t n) {
    std::vector<std::uint8_t> v(n);
    for (auto& b : v) b = static_cast<std::uint8_t>(rng.next());
    return v;
}

// link header | transport packet (checksum at +8) | link CRC
std::vector<std::uint8_t> build_frame(Rng& rng, std::size_t header, std::size_t transport, SharedChecksumConfig& cfg) {
    auto frame = random_bytes(rng, header + transport);
    cfg = {header, transport, 8};
    std::span<std::uint8_t> t(frame.data() + header, transport);
    store_be32(t.subspan(8, 4), transport_checksum(t, 8));
    frame.resize(frame.size() + 4);
    const auto body = std::span<const std::uint8_t>(frame).first(frame.size() - 4);
    store_be32(std::span<std::uint8_t>(frame).last(4), crc32c(body));
    return frame;
}

}  // namespace

TEST_CASE("crc32c check values") {
    CHECK(crc32c({}) == 0x00000000u);
    CHECK(oracle::crc32c(ascii("123456789")) == 0xE3069283u);
    CHECK(crc32c(ascii("123456789")) == 0xE3069283u);
    const std::vector<std::uint8_t> zero{0x00};
    CHECK(crc32c(zero) == oracle::crc32c(zero));
    CHECK(crc32c_bitwise(ascii("123456789")) == 0xE3069283u);
}

TEST_CASE("table crc agrees with the bit-serial reference") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        auto v = random_bytes(rng, rng.below(257));
        REQUIRE(crc32c(v) == oracle::crc32c(v));
        REQUIRE(crc32c_bitwise(v) == oracle::crc32c(v));
    }
}

TEST_CASE("crc32c extends across split input") {
    Rng rng(4);
    auto v = random_bytes(rng, 200);
    for (std::size_t cut : {0u, 1u, 77u, 200u}) {
        const std::span<const std::uint8_t> s(v);
        CHECK(crc32c_extend(crc32c(s.first(cut)), s.subspan(cut)) == crc32c(v));
    }
}

TEST_CASE("crc32c catches single and adjacent double bit errors") {
    Rng rng(5);
    const auto base = random_bytes(rng, 128);
    const auto good = crc32c(base);
    for (std::size_t bit = 0; bit < base.size() * 8; ++bit) {
        auto v = base;
        v[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        REQUIRE(crc32c(v) != good);
        if (bit + 1 < base.size() * 8) {
            v[(bit + 1) / 8] ^= static_cast<std::uint8_t>(1u << ((bit + 1) % 8));
            REQUIRE(crc32c(v) != good);
        }
    }
}

TEST_CASE("adler32 values") {
    CHECK(adler32({}) == 0x00000001u);
    CHECK(adler32(ascii("a")) == 0x00620062u);
    CHECK(adler32(ascii("Wikipedia")) == 0x11E60398u);
    Rng rng(6);
    for (int i = 0; i < 1000; ++i) {
        auto v = random_bytes(rng, rng.below(300));
        REQUIRE(adler32(v) == oracle::adler32(v));
    }
    for (int x = 0; x < 256; ++x) {
        const std::vector<std::uint8_t> one{static_cast<std::uint8_t>(x)};
        const auto s = adler32(one);
        CHECK((s >> 16) == (s & 0xFFFF));
        CHECK((s & 0xFFFF) <= 256u);
    }
}

TEST_CASE("adler32 incremental equals whole") {
    Rng rng(7);
    auto v = random_bytes(rng, 500);
    Adler32 a;
    const std::span<const std::uint8_t> s(v);
    a.update(s.first(123));
    a.update(s.subspan(123, 1));
    a.update(s.subspan(124));
    CHECK(a.value() == adler32(v));
}

TEST_CASE("algorithm names round-trip") {
    for (auto alg : {Algorithm::Crc32cReflected, Algorithm::Adler32}) CHECK(algorithm_from_string(to_string(alg)) == alg);
    CHECK_THROWS(algorithm_from_string("md5"));
}

TEST_CASE("short packet distribution") {
    const auto one = short_packet_distribution(Algorithm::Crc32cReflected, 1, 1, 1);
    std::uint64_t total = 0, nonzero = 0;
    for (auto c : one.buckets) {
        total += c;
        nonzero += c ? 1 : 0;
    }
    CHECK(total == 1);
    CHECK(nonzero == 1);

    const auto adler = short_packet_distribution(Algorithm::Adler32, 8, 100000, 11);
    const auto crc = short_packet_distribution(Algorithm::Crc32cReflected, 8, 100000, 11);
    CHECK(adler.chi_square == doctest::Approx(oracle::chi_square(adler.buckets)));
    CHECK(crc.chi_square == doctest::Approx(oracle::chi_square(crc.buckets)));
    CHECK_FALSE(adler.uniform_at(1e-3));
    CHECK(crc.uniform_at(1e-3));
    // Eight bytes keep B <= 8 + 36 * 255 = 9188, so the top byte is at most 35.
    std::uint64_t low = 0;
    for (int i = 0; i <= 35; ++i) low += adler.buckets[i];
    CHECK(low == adler.sample_count);

    CHECK_THROWS_AS(short_packet_distribution(Algorithm::Adler32, 0, 10, 1), std::invalid_argument);
}

TEST_CASE("shared verification") {
    Rng rng(8);
    SharedChecksumConfig cfg;
    auto frame = build_frame(rng, 13, 60, cfg);

    auto ok = shared_verify(cfg, frame, true);
    CHECK(ok.verdict == SharedVerdict::BothValid);
    CHECK(ok.transport_recomputed);
    CHECK(ok.transport_valid);
    CHECK_FALSE(shared_verify(cfg, frame).transport_recomputed);

    auto bad = frame;
    bad[20] ^= 0x10;
    CHECK(shared_verify(cfg, bad, true).verdict == SharedVerdict::Invalid);

    // Link CRC recomputed over a damaged transport: only the cross-check notices.
    auto relinked = bad;
    const auto body = std::span<const std::uint8_t>(relinked).first(relinked.size() - 4);
    store_be32(std::span<std::uint8_t>(relinked).last(4), crc32c(body));
    CHECK(shared_verify(cfg, relinked).verdict == SharedVerdict::BothValid);
    CHECK(shared_verify(cfg, relinked, true).verdict == SharedVerdict::LinkValidOnly);

    CHECK_THROWS_AS(shared_verify(cfg, std::vector<std::uint8_t>(3)), FrameFormatError);
    SharedChecksumConfig whole{0, frame.size() - 4, 8};
    CHECK_THROWS_AS(shared_verify(whole, frame), FrameFormatError);
}

TEST_CASE("two-bit corruptions never pass the link CRC while failing transport") {
    Rng rng(9);
    SharedChecksumConfig cfg;
    std::vector<std::uint8_t> frame;
    std::size_t link_passed = 0, disagreements = 0;
    for (int i = 0; i < 1000000; ++i) {
        if (i % 100 == 0) frame = build_frame(rng, 13, 16 + rng.below(96), cfg);
        auto f = frame;
        const std::size_t bits = f.size() * 8;
        const std::size_t a = rng.below(bits);
        const std::size_t b = (a + 1 + rng.below(bits - 1)) % bits;
        f[a / 8] ^= static_cast<std::uint8_t>(1u << (a % 8));
        f[b / 8] ^= static_cast<std::uint8_t>(1u << (b % 8));
        const auto v = shared_verify(cfg, f, true);
        if (v.verdict != SharedVerdict::Invalid) ++link_passed;
        if (v.verdict == SharedVerdict::LinkValidOnly) ++disagreements;
    }
    CHECK(link_passed == 0);
    CHECK(disagreements == 0);
}

TEST_CASE("big-endian helpers") {
    std::uint8_t buf[4];
    store_be32(buf, 0x01020304u);
    CHECK(buf[0] == 1);
    CHECK(buf[3] == 4);
    CHECK(load_be32(buf) == 0x01020304u);
}
