#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ugda/tensor.hpp"

namespace ugda {

// ============================================================================
// Optimizer: Adam (default) or plain SGD over a flat parameter vector.
// State serializes with checkpoints so resumed runs continue bit-for-bit.
// ============================================================================
class Optimizer {
public:
    enum class Kind { Adam, Sgd };

    Optimizer() = default;
    static Optimizer make(const std::string& kind, Eigen::Index n, Scalar lr);

    // One descent step: params -= update(grad).
    void step(VecX& params, const VecX& grad);

    Scalar lr() const { return lr_; }
    void set_lr(Scalar lr) { lr_ = lr; }

    // Checkpoint access.
    Kind kind() const { return kind_; }
    std::int64_t steps() const { return t_; }
    const VecX& m() const { return m_; }
    const VecX& v() const { return v_; }
    void restore(Kind kind, std::int64_t t, VecX m, VecX v);

private:
    Kind kind_ = Kind::Adam;
    Scalar lr_ = 1e-3;
    Scalar beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
    VecX m_, v_;
};

} // namespace ugda
