#include "ugda/mixup.hpp"

#include <algorithm>
#include <cmath>

#include "ugda/errors.hpp"
#include "ugda/perturbation.hpp" // softplus / sigmoid

namespace ugda {

MixupMode mixup_mode_from(const std::string& name) {
    if (name == "learnable") return MixupMode::Learnable;
    if (name == "random") return MixupMode::Random;
    if (name == "off") return MixupMode::Off;
    throw ConfigError("unknown mixup.mode '" + name + "' (learnable | random | off)");
}

std::string to_string(MixupMode mode) {
    switch (mode) {
    case MixupMode::Learnable: return "learnable";
    case MixupMode::Random: return "random";
    case MixupMode::Off: return "off";
    }
    return "?";
}

MixupHead MixupHead::init() {
    MixupHead h;
    h.W = Tensor({3, 2});
    h.bias = Tensor({3});
    return h;
}

MixupInference infer_mixup_params(const MixupHead& head, Scalar mu_mean, Scalar sigma_mean,
                                  MixupMode mode) {
    MixupInference inf;
    inf.mu_mean = mu_mean;
    inf.sigma_mean = sigma_mean;
    if (mode == MixupMode::Random) {
        inf.p = {1.0, 1.0, 1.0};
        return inf;
    }
    if (mode == MixupMode::Off)
        throw ConfigError("infer_mixup_params called with mixup.mode=off");
    inf.learnable = true;
    inf.o0 = head.W[0] * mu_mean + head.W[1] * sigma_mean + head.bias[0];
    inf.o1 = head.W[2] * mu_mean + head.W[3] * sigma_mean + head.bias[1];
    inf.o2 = head.W[4] * mu_mean + head.W[5] * sigma_mean + head.bias[2];
    inf.p.a = softplus(inf.o0) + 0.01;
    inf.p.b = softplus(inf.o1) + 0.01;
    inf.p.tau = sigmoid(inf.o2);
    return inf;
}

void mixup_head_grads(const MixupHead& head, const MixupInference& inf, Scalar da, Scalar db,
                      Scalar dtau, Scalar* dW, Scalar* dbias, Scalar* dmu_mean,
                      Scalar* dsigma_mean) {
    if (!inf.learnable) return;
    const Scalar d0 = da * sigmoid(inf.o0);
    const Scalar d1 = db * sigmoid(inf.o1);
    const Scalar d2 = dtau * inf.p.tau * (1.0 - inf.p.tau);
    const Scalar in[2] = {inf.mu_mean, inf.sigma_mean};
    const Scalar dout[3] = {d0, d1, d2};
    for (int r = 0; r < 3; ++r) {
        dW[2 * r] += dout[r] * in[0];
        dW[2 * r + 1] += dout[r] * in[1];
        dbias[r] += dout[r];
        if (dmu_mean != nullptr) *dmu_mean += dout[r] * head.W[2 * r];
        if (dsigma_mean != nullptr) *dsigma_mean += dout[r] * head.W[2 * r + 1];
    }
}

Tensor smoothed_labels(const Tensor& y, Scalar rho) {
    if (y.shape.size() != 2) throw ConfigError("smoothed_labels: expected {N,C}, got " + y.shape_str());
    const int c = y.shape[1];
    if (c < 2) throw ConfigError("smoothed_labels: need at least 2 classes");
    if (!(rho > 1.0 / static_cast<Scalar>(c)) || !(rho < 1.0))
        throw ConfigError("mixup.rho=" + std::to_string(rho) + " outside (1/" + std::to_string(c) +
                          ", 1)");
    const Scalar off = (1.0 - rho) / static_cast<Scalar>(c - 1);
    Tensor out(y.shape);
    // Works for soft labels too: redistribute each unit of mass the same way.
    for (int i = 0; i < y.shape[0]; ++i)
        for (int j = 0; j < c; ++j) {
            Scalar acc = 0.0;
            for (int k = 0; k < c; ++k) {
                const Scalar yv = y[static_cast<std::int64_t>(i) * c + k];
                acc += yv * (k == j ? rho : off);
            }
            out[static_cast<std::int64_t>(i) * c + j] = acc;
        }
    return out;
}

Tensor smooth_label(const Tensor& y, Scalar rho, Scalar tau, RngStream& rng) {
    Tensor sm = smoothed_labels(y, rho); // validates rho
    const int n = y.shape[0], c = y.shape[1];
    Tensor out = y;
    for (int i = 0; i < n; ++i)
        if (rng.bernoulli(tau))
            for (int j = 0; j < c; ++j)
                out[static_cast<std::int64_t>(i) * c + j] = sm[static_cast<std::int64_t>(i) * c + j];
    return out;
}

MixedPair mix(const Tensor& h, const Tensor& h_plus, const Tensor& y, const Tensor& y_tilde,
              Scalar lambda) {
    if (!h.same_shape(h_plus))
        throw ConfigError("mix: feature shapes differ: " + h.shape_str() + " vs " + h_plus.shape_str());
    if (!y.same_shape(y_tilde))
        throw ConfigError("mix: label shapes differ: " + y.shape_str() + " vs " + y_tilde.shape_str());
    MixedPair out;
    out.h = Tensor(h.shape);
    out.y = Tensor(y.shape);
    for (std::int64_t i = 0; i < h.numel(); ++i)
        out.h[i] = lambda * h[i] + (1.0 - lambda) * h_plus[i];
    for (std::int64_t i = 0; i < y.numel(); ++i)
        out.y[i] = lambda * y[i] + (1.0 - lambda) * y_tilde[i];
    return out;
}

Scalar sample_lambda(Scalar a, Scalar b, RngStream& rng) {
    if (!(a > 0.0) || !(b > 0.0))
        throw ConfigError("sample_lambda: Beta parameters must be positive (a=" + std::to_string(a) +
                          ", b=" + std::to_string(b) + ")");
    return beta_quantile(a, b, rng.uniform_open());
}

LambdaDraw sample_lambda_grad(Scalar a, Scalar b, RngStream& rng) {
    if (!(a > 0.0) || !(b > 0.0))
        throw ConfigError("sample_lambda: Beta parameters must be positive (a=" + std::to_string(a) +
                          ", b=" + std::to_string(b) + ")");
    const double u = rng.uniform_open();
    LambdaDraw d;
    d.lambda = beta_quantile(a, b, u);
    const double x = std::clamp(d.lambda, 1e-12, 1.0 - 1e-12);
    const double pdf = std::max(beta_pdf(a, b, x), 1e-12);
    const double ha = 1e-5 * std::max(1.0, std::abs(a));
    const double hb = 1e-5 * std::max(1.0, std::abs(b));
    d.dda = -(beta_cdf(a + ha, b, x) - beta_cdf(a - ha, b, x)) / (2.0 * ha) / pdf;
    d.ddb = -(beta_cdf(a, b + hb, x) - beta_cdf(a, b - hb, x)) / (2.0 * hb) / pdf;
    return d;
}

} // namespace ugda
