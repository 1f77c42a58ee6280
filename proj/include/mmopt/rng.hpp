#pragma once

#include <array>
#include <cstdint>

namespace mmopt {

// Philox4x64-10 block cipher (counter-based generator). A stream is keyed by
// (seed, stream id); successive blocks come from incrementing the counter, so
// draws are reproducible and independent of scheduling.
struct Philox4x64 {
    std::array<std::uint64_t, 2> key{0, 0};
    std::array<std::uint64_t, 4> counter{0, 0, 0, 0};

    static std::array<std::uint64_t, 4> block(std::array<std::uint64_t, 4> ctr,
                                              std::array<std::uint64_t, 2> key);
};

// One logical random stream. Streams with distinct (seed, stream, substream)
// never overlap: those ids occupy counter words 1..3 and the block index
// occupies word 0.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0);

    std::uint64_t next_u64();
    // Uniform on the open interval (0,1); safe for log() transforms.
    double next_uniform();
    // Standard normal via inverse transform (Wichura AS 241).
    double next_normal();

  private:
    void refill();
    Philox4x64 gen_;
    std::array<std::uint64_t, 4> buf_{};
    int pos_ = 4;
};

// Double-precision inverse of the standard normal CDF (AS 241, PPND16).
double inverse_normal_cdf(double p);

// 64-bit FNV-1a, used for config hashes and event-log fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace mmopt
