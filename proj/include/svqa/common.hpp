#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace svqa {

// Error taxonomy. Exit codes: contract=2, numeric=3, io=4.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Execution-time conditions the pipeline downgrades to "invalid" answers.
struct ExecError : std::runtime_error {
    explicit ExecError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AmbiguousReferentError : ExecError {
    explicit AmbiguousReferentError(const std::string& msg) : ExecError(msg) {}
};

struct RelationUndefinedError : ExecError {
    explicit RelationUndefinedError(const std::string& msg) : ExecError(msg) {}
};

// SplitMix64: counter-based 64-bit generator. The whole pipeline draws
// randomness through this one generator so every language binding can
// reproduce streams from (seed, draw index) alone.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1). 53-bit mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) via 128-bit multiply rejection.
    uint64_t next_below(uint64_t n) {
        if (n == 0) throw ContractError("Rng::next_below: n must be positive");
        while (true) {
            uint64_t x = next_u64();
            __uint128_t m = static_cast<__uint128_t>(x) * n;
            uint64_t lo = static_cast<uint64_t>(m);
            if (lo >= n || lo >= (-n) % n) return static_cast<uint64_t>(m >> 64);
        }
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        if (hi < lo) throw ContractError("Rng::uniform_int: empty range");
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo) + 1));
    }

    bool chance(double p) { return uniform() < p; }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        if (v.empty()) throw ContractError("Rng::pick: empty vector");
        return v[next_below(v.size())];
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream, for decoupling draw orders between stages.
    Rng fork(uint64_t stream_id) {
        Rng child(state_ ^ (0xA0761D6478BD642Full * (stream_id + 1)));
        child.next_u64();
        return child;
    }

private:
    uint64_t state_;
};

// Little-endian scalar packing for the binary file formats.
void put_u16(std::vector<uint8_t>& out, uint16_t v);
void put_u32(std::vector<uint8_t>& out, uint32_t v);
void put_f32(std::vector<uint8_t>& out, float v);
uint16_t get_u16(const uint8_t* p);
uint32_t get_u32(const uint8_t* p);
float get_f32(const uint8_t* p);

// CRC-32 (IEEE, reflected, poly 0xEDB88320) over a byte range.
uint32_t crc32(const uint8_t* data, size_t n);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace svqa
