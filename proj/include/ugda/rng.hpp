#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>

namespace ugda {

// ============================================================================
// RngStream: deterministic, serializable random stream.
//
// All randomness in the project flows through this class so that checkpoints
// can capture the exact generator state (bit-for-bit resume).  std::normal_
// distribution caches a second deviate across calls, which would leak hidden
// state past serialization — so the normal draw is a cache-free Box-Muller
// transform instead (one value per call, state lives entirely in the engine).
// ============================================================================
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0) : gen_(seed) {}

    // Uniform on [0,1).
    double uniform();
    // Uniform on (0,1) — both endpoints excluded (safe for logs and quantiles).
    double uniform_open();
    // Standard normal via cache-free Box-Muller.
    double normal();
    // Beta(a,b) by inverse-CDF; a pure function of (a, b, next engine draw).
    double beta(double a, double b);
    bool bernoulli(double p) { return uniform() < p; }
    // Uniform integer in [0, n).
    std::uint64_t integer(std::uint64_t n);
    // Derive an independent child seed (consumes one draw).
    std::uint64_t fork_seed() { return gen_(); }

    void save(std::ostream& os) const;
    void load(std::istream& is);

    bool operator==(const RngStream& o) const { return gen_ == o.gen_; }

private:
    std::mt19937_64 gen_;
};

// Stateless helpers reused by tests and sampling code ------------------------

// Beta(a,b) quantile (inverse regularized incomplete beta).
double beta_quantile(double a, double b, double u);
// Beta(a,b) CDF.
double beta_cdf(double a, double b, double x);
// Beta(a,b) density.
double beta_pdf(double a, double b, double x);

} // namespace ugda
