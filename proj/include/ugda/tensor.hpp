#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ugda/errors.hpp"

namespace ugda {

using Scalar = double;
using MatX   = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecX   = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MatMap      = Eigen::Map<MatX>;
using ConstMatMap = Eigen::Map<const MatX>;
using VecMap      = Eigen::Map<VecX>;
using ConstVecMap = Eigen::Map<const VecX>;

// ============================================================================
// Tensor: a dense row-major nd-array of doubles.  Deliberately minimal — the
// heavy lifting happens through Eigen maps onto the flat buffer.
// ============================================================================
struct Tensor {
    std::vector<int> shape;
    std::vector<Scalar> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel_of(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<Scalar> data) : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<std::int64_t>(v.size()) != numel_of(shape))
            throw ConfigError("tensor: data size does not match shape " + shape_str());
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, Scalar value) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    bool empty() const { return v.empty(); }

    Scalar* data() { return v.data(); }
    const Scalar* data() const { return v.data(); }

    Scalar& operator[](std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
    Scalar operator[](std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

    // Flat views.  rows*cols must equal numel().
    MatMap mat(int rows, int cols) {
        check_view(rows, cols);
        return MatMap(v.data(), rows, cols);
    }
    ConstMatMap mat(int rows, int cols) const {
        check_view(rows, cols);
        return ConstMatMap(v.data(), rows, cols);
    }
    VecMap vec() { return VecMap(v.data(), static_cast<Eigen::Index>(v.size())); }
    ConstVecMap vec() const { return ConstVecMap(v.data(), static_cast<Eigen::Index>(v.size())); }

    void fill(Scalar value) { std::fill(v.begin(), v.end(), value); }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

private:
    void check_view(int rows, int cols) const {
        if (static_cast<std::int64_t>(rows) * cols != numel())
            throw ConfigError("tensor: cannot view " + shape_str() + " as " +
                              std::to_string(rows) + "x" + std::to_string(cols));
    }
};

inline bool all_finite(const Tensor& t) {
    for (Scalar x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const std::vector<Scalar>& v) {
    for (Scalar x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace ugda
