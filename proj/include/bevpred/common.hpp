#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bevpred {

#ifdef BEVPRED_SCALAR64
using scalar = double;
#else
using scalar = float;
#endif

// Thrown on operand shape disagreements (inner extents, rank, axis bounds).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an operation receives or would produce non-finite values,
// or when a gradient tape is misused (non-scalar loss, double backward).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. Distributions are hand-rolled on top of a fixed
// engine so sequences are identical across standard-library versions.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    // splitmix64 step
    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t lo, int64_t hi_inclusive) {
        return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi_inclusive - lo + 1));
    }

    // Box-Muller; one fresh draw per call (no cached spare, keeps replay trivial)
    double normal();

    // child generator with decorrelated stream, for per-sample determinism
    Rng fork(uint64_t salt) {
        Rng child(state_ ^ (0xd1342543de82ef95ull * (salt + 1)));
        child.next_u64();
        return child;
    }

  private:
    uint64_t state_;
};

}  // namespace bevpred
