#include "ugda/perturbation.hpp"

#include <cmath>

#include "ugda/errors.hpp"

namespace ugda {

PerturbMode perturb_mode_from(const std::string& name) {
    if (name == "full") return PerturbMode::Full;
    if (name == "deterministic") return PerturbMode::Deterministic;
    if (name == "random_mu") return PerturbMode::RandomMu;
    if (name == "random_sigma") return PerturbMode::RandomSigma;
    if (name == "random_gaussian") return PerturbMode::RandomGaussian;
    throw ConfigError("unknown perturb.mode '" + name +
                      "' (full | deterministic | random_mu | random_sigma | random_gaussian)");
}

std::string to_string(PerturbMode mode) {
    switch (mode) {
    case PerturbMode::Full: return "full";
    case PerturbMode::Deterministic: return "deterministic";
    case PerturbMode::RandomMu: return "random_mu";
    case PerturbMode::RandomSigma: return "random_sigma";
    case PerturbMode::RandomGaussian: return "random_gaussian";
    }
    return "?";
}

Tensor GaussianPerturbation::sigma() const {
    Tensor s(log_sigma.shape);
    for (std::int64_t i = 0; i < s.numel(); ++i) s[i] = std::exp(log_sigma[i]);
    return s;
}

PerturbationHead PerturbationHead::init(const std::string& layer, int channels,
                                        Scalar init_log_sigma) {
    PerturbationHead h;
    h.layer = layer;
    h.dist.mu = Tensor({channels});
    h.dist.log_sigma = Tensor::full({channels}, init_log_sigma);
    return h;
}

EffectiveGaussian infer_gaussian(const PerturbationHead& head, PerturbMode mode) {
    const int c = head.dist.channels();
    EffectiveGaussian eg;
    switch (mode) {
    case PerturbMode::Full:
        eg.mu = head.dist.mu;
        eg.sigma = head.dist.sigma();
        eg.dmu_flows = eg.dsigma_flows = true;
        break;
    case PerturbMode::Deterministic:
        eg.mu = head.dist.mu;
        eg.sigma = Tensor({c}); // zeros: the draw is exactly mu
        eg.dmu_flows = true;
        break;
    case PerturbMode::RandomMu:
        eg.mu = Tensor({c});
        eg.sigma = head.dist.sigma();
        eg.dsigma_flows = true;
        break;
    case PerturbMode::RandomSigma:
        eg.mu = head.dist.mu;
        eg.sigma = Tensor::full({c}, 1.0);
        eg.dmu_flows = true;
        break;
    case PerturbMode::RandomGaussian:
        eg.mu = Tensor({c});
        eg.sigma = Tensor::full({c}, 1.0);
        break;
    }
    return eg;
}

PerturbSample sample(const EffectiveGaussian& dist, RngStream& rng) {
    PerturbSample s;
    s.eps = Tensor(dist.mu.shape);
    s.e = Tensor(dist.mu.shape);
    for (std::int64_t i = 0; i < s.e.numel(); ++i) {
        s.eps[i] = rng.normal();
        s.e[i] = dist.mu[i] + dist.sigma[i] * s.eps[i];
    }
    return s;
}

Scalar softplus(Scalar x) {
    // Stable: softplus(x) = max(x,0) + log1p(exp(-|x|)).
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Scalar sigmoid(Scalar x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

Tensor apply(const Tensor& h, const Tensor& e) {
    if (!h.same_shape(e))
        throw ConfigError("perturbation apply: feature " + h.shape_str() + " vs noise " +
                          e.shape_str());
    Tensor out(h.shape);
    for (std::int64_t i = 0; i < h.numel(); ++i) out[i] = h[i] + softplus(e[i]);
    return out;
}

void accumulate_head_grads(const EffectiveGaussian& dist, const Scalar* e, const Scalar* eps,
                           std::int64_t channels, Scalar scale, const Scalar* doffset, Scalar* dmu,
                           Scalar* dlog_sigma) {
    for (std::int64_t i = 0; i < channels; ++i) {
        // offset = scale * softplus(e),  e = mu + sigma*eps.
        const Scalar de = doffset[i] * scale * sigmoid(e[i]);
        if (dist.dmu_flows) dmu[i] += de;
        if (dist.dsigma_flows) dlog_sigma[i] += de * dist.sigma[i] * eps[i];
    }
}

Scalar mean_sigma(const std::vector<PerturbationHead>& heads) {
    Scalar total = 0.0;
    std::int64_t count = 0;
    for (const auto& h : heads) {
        for (std::int64_t i = 0; i < h.dist.log_sigma.numel(); ++i)
            total += std::exp(h.dist.log_sigma[i]);
        count += h.dist.log_sigma.numel();
    }
    return count > 0 ? total / static_cast<Scalar>(count) : 0.0;
}

Scalar kl_standard_normal(const GaussianPerturbation& g, Scalar weight, Scalar* dmu,
                          Scalar* dlog_sigma) {
    Scalar kl = 0.0;
    for (std::int64_t i = 0; i < g.mu.numel(); ++i) {
        const Scalar s2 = std::exp(2.0 * g.log_sigma[i]);
        kl += 0.5 * (s2 + g.mu[i] * g.mu[i] - 1.0) - g.log_sigma[i];
        if (dmu != nullptr) dmu[i] += weight * g.mu[i];
        if (dlog_sigma != nullptr) dlog_sigma[i] += weight * (s2 - 1.0);
    }
    return weight * kl;
}

} // namespace ugda
