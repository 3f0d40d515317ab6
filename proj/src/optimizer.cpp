#include "ugda/optimizer.hpp"

#include <cmath>
#include <utility>

#include "ugda/errors.hpp"

namespace ugda {

Optimizer Optimizer::make(const std::string& kind, Eigen::Index n, Scalar lr) {
    Optimizer opt;
    opt.lr_ = lr;
    if (kind == "adam") {
        opt.kind_ = Kind::Adam;
        opt.m_ = VecX::Zero(n);
        opt.v_ = VecX::Zero(n);
    } else if (kind == "sgd") {
        opt.kind_ = Kind::Sgd;
    } else {
        throw ConfigError("unknown optimizer '" + kind + "' (adam | sgd)");
    }
    return opt;
}

void Optimizer::step(VecX& params, const VecX& grad) {
    if (params.size() != grad.size())
        throw ConfigError("optimizer: parameter/gradient size mismatch");
    if (kind_ == Kind::Sgd) {
        params.noalias() -= lr_ * grad;
        return;
    }
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad).eval();
    const Scalar c1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
    const Scalar c2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

void Optimizer::restore(Kind kind, std::int64_t t, VecX m, VecX v) {
    kind_ = kind;
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

} // namespace ugda
