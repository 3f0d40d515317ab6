#include "ugda/rng.hpp"

#include <boost/math/distributions/beta.hpp>

#include <cmath>
#include <istream>
#include <ostream>

namespace ugda {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
} // namespace

double RngStream::uniform() {
    // 53-bit mantissa resolution, [0,1).
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
}

double RngStream::uniform_open() {
    // Shift into (0,1): never returns exactly 0 or 1.
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double RngStream::normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double RngStream::beta(double a, double b) {
    return beta_quantile(a, b, uniform_open());
}

std::uint64_t RngStream::integer(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
    std::uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return x % n;
}

void RngStream::save(std::ostream& os) const { os << gen_; }
void RngStream::load(std::istream& is) { is >> gen_; }

double beta_quantile(double a, double b, double u) {
    boost::math::beta_distribution<double> dist(a, b);
    return boost::math::quantile(dist, u);
}

double beta_cdf(double a, double b, double x) {
    boost::math::beta_distribution<double> dist(a, b);
    return boost::math::cdf(dist, x);
}

double beta_pdf(double a, double b, double x) {
    boost::math::beta_distribution<double> dist(a, b);
    return boost::math::pdf(dist, x);
}

} // namespace ugda
