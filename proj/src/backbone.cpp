#include "ugda/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace ugda {

namespace {

constexpr Scalar kLogClamp = 1e-12;

void check_spatial(const Backbone::Layer& l, const std::vector<int>& d) {
    if (l.kind == Backbone::Layer::Kind::Conv) {
        if (d[0] != l.in_c)
            throw ConfigError("layer '" + l.name + "': expected " + std::to_string(l.in_c) +
                              " input channels, got " + std::to_string(d[0]));
        if (d[1] < l.k || d[2] < l.k)
            throw ConfigError("layer '" + l.name + "': input " + std::to_string(d[1]) + "x" +
                              std::to_string(d[2]) + " smaller than kernel " + std::to_string(l.k));
    }
}

} // namespace

// ---------------------------------------------------------------------------
// construction & registry
// ---------------------------------------------------------------------------

Backbone Backbone::make(const RunConfig& cfg) {
    const std::string name = cfg.get("backbone.name");
    if (name == "digits-convnet") {
        return digits_convnet(static_cast<int>(cfg.get_int("backbone.input_channels")),
                              static_cast<int>(cfg.get_int("backbone.image_size")),
                              static_cast<int>(cfg.get_int("backbone.conv1_channels")),
                              static_cast<int>(cfg.get_int("backbone.conv2_channels")),
                              static_cast<int>(cfg.get_int("backbone.kernel")),
                              static_cast<int>(cfg.get_int("backbone.fc_width")),
                              static_cast<int>(cfg.get_int("backbone.classes")));
    }
    if (name == "mlp-small") {
        return mlp_small(static_cast<int>(cfg.get_int("backbone.mlp_input_dim")),
                         static_cast<int>(cfg.get_int("backbone.mlp_hidden")),
                         static_cast<int>(cfg.get_int("backbone.classes")));
    }
    throw ConfigError("unknown backbone '" + name + "' (expected digits-convnet or mlp-small)");
}

Backbone Backbone::digits_convnet(int in_channels, int image_size, int c1, int c2, int kernel,
                                  int fc_width, int classes) {
    auto conv = [&](const std::string& name, int ic, int oc) {
        Layer l;
        l.kind = Layer::Kind::Conv;
        l.name = name;
        l.in_c = ic;
        l.out_c = oc;
        l.k = kernel;
        l.relu = true;
        l.intercept = true;
        l.W = Tensor({oc, ic * kernel * kernel});
        l.b = Tensor({oc});
        return l;
    };
    auto pool = [&](const std::string& name) {
        Layer l;
        l.kind = Layer::Kind::Pool;
        l.name = name;
        return l;
    };
    auto dense = [&](const std::string& name, int in, int out, bool relu) {
        Layer l;
        l.kind = Layer::Kind::Dense;
        l.name = name;
        l.in_dim = in;
        l.out_dim = out;
        l.relu = relu;
        l.W = Tensor({out, in});
        l.b = Tensor({out});
        return l;
    };

    const int s1 = image_size - kernel + 1;  // conv1 (valid)
    const int p1 = s1 / 2;                   // pool1
    const int s2 = p1 - kernel + 1;          // conv2
    const int p2 = s2 / 2;                   // pool2
    if (s1 < 1 || s2 < 1 || p1 < 1 || p2 < 1)
        throw ConfigError("digits-convnet: image_size " + std::to_string(image_size) +
                          " too small for two " + std::to_string(kernel) + "x" +
                          std::to_string(kernel) + " valid conv/pool stages");
    const int flat = c2 * p2 * p2;

    std::vector<Layer> layers;
    layers.push_back(conv("conv1", in_channels, c1));
    layers.push_back(pool("pool1"));
    layers.push_back(conv("conv2", c1, c2));
    layers.push_back(pool("pool2"));
    layers.push_back(dense("fc1", flat, fc_width, true));
    layers.push_back(dense("fc2", fc_width, fc_width, true));
    layers.push_back(dense("logits", fc_width, classes, false));
    return custom(std::move(layers), {in_channels, image_size, image_size}, classes);
}

Backbone Backbone::mlp_small(int input_dim, int hidden, int classes) {
    auto dense = [&](const std::string& name, int in, int out, bool relu, bool intercept) {
        Layer l;
        l.kind = Layer::Kind::Dense;
        l.name = name;
        l.in_dim = in;
        l.out_dim = out;
        l.relu = relu;
        l.intercept = intercept;
        l.W = Tensor({out, in});
        l.b = Tensor({out});
        return l;
    };
    std::vector<Layer> layers;
    layers.push_back(dense("fc1", input_dim, hidden, true, true));
    layers.push_back(dense("fc2", hidden, hidden, true, false));
    layers.push_back(dense("logits", hidden, classes, false, false));
    return custom(std::move(layers), {input_dim}, classes);
}

Backbone Backbone::custom(std::vector<Layer> layers, std::vector<int> input_shape, int classes) {
    Backbone bb;
    bb.layers_ = std::move(layers);
    bb.input_shape_ = std::move(input_shape);
    bb.classes_ = classes;
    for (const auto& l : bb.layers_)
        if (l.intercept) bb.intercepts_.push_back(l.name);
    bb.validate();
    return bb;
}

void Backbone::validate() const {
    if (layers_.empty()) throw ConfigError("backbone: empty layer stack");
    // Walk shapes once to catch wiring mistakes at construction time.
    std::vector<int> d;
    if (input_shape_.size() == 3)
        d = input_shape_;
    else if (input_shape_.size() == 1)
        d = {input_shape_[0], 1, 1};
    else
        throw ConfigError("backbone: input shape must be {C,H,W} or {D}");
    for (const auto& l : layers_) {
        switch (l.kind) {
        case Layer::Kind::Conv:
            check_spatial(l, d);
            d = {l.out_c, d[1] - l.k + 1, d[2] - l.k + 1};
            break;
        case Layer::Kind::Pool:
            d = {d[0], d[1] / 2, d[2] / 2};
            if (d[1] < 1 || d[2] < 1)
                throw ConfigError("layer '" + l.name + "': pooling below 1x1");
            break;
        case Layer::Kind::Dense: {
            const int flat = d[0] * d[1] * d[2];
            if (flat != l.in_dim)
                throw ConfigError("layer '" + l.name + "': expected input dim " +
                                  std::to_string(l.in_dim) + ", got " + std::to_string(flat));
            d = {l.out_dim, 1, 1};
            break;
        }
        }
    }
    const auto& last = layers_.back();
    if (last.kind != Layer::Kind::Dense || last.relu)
        throw ConfigError("backbone: last layer must be a linear output layer");
    if (last.out_dim != classes_)
        throw ConfigError("backbone: output layer width " + std::to_string(last.out_dim) +
                          " != classes " + std::to_string(classes_));
}

int Backbone::intercept_channels(const std::string& name) const {
    for (const auto& l : layers_) {
        if (l.name != name) continue;
        if (!l.intercept) break;
        return l.kind == Layer::Kind::Conv ? l.out_c : l.out_dim;
    }
    throw ConfigError("no intercept point named '" + name + "'");
}

// ---------------------------------------------------------------------------
// parameter flattening
// ---------------------------------------------------------------------------

std::int64_t Backbone::param_count() const {
    std::int64_t n = 0;
    for (const auto& l : layers_) n += l.W.numel() + l.b.numel();
    return n;
}

VecX Backbone::params() const {
    VecX out(param_count());
    Eigen::Index at = 0;
    for (const auto& l : layers_) {
        for (Scalar x : l.W.v) out[at++] = x;
        for (Scalar x : l.b.v) out[at++] = x;
    }
    return out;
}

void Backbone::set_params(const VecX& flat) {
    if (flat.size() != param_count())
        throw ConfigError("backbone: parameter vector has " + std::to_string(flat.size()) +
                          " entries, expected " + std::to_string(param_count()));
    Eigen::Index at = 0;
    for (auto& l : layers_) {
        for (Scalar& x : l.W.v) x = flat[at++];
        for (Scalar& x : l.b.v) x = flat[at++];
    }
}

void Backbone::init_params(RngStream& rng) {
    for (auto& l : layers_) {
        if (l.W.empty()) continue;
        const int fan_in = l.kind == Layer::Kind::Conv ? l.in_c * l.k * l.k : l.in_dim;
        const Scalar sd = std::sqrt(2.0 / static_cast<Scalar>(fan_in));
        for (Scalar& x : l.W.v) x = sd * rng.normal();
        l.b.fill(0.0);
    }
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

ForwardTrace Backbone::forward(const Tensor& x, const PerturbMap* offsets) const {
    Cache cache;
    return forward(x, offsets, cache);
}

ForwardTrace Backbone::forward(const Tensor& x, const PerturbMap* offsets, Cache& cache) const {
    // Normalize the batch shape to {N, C, H, W}.
    std::vector<int> d;
    int n = 0;
    if (input_shape_.size() == 3) {
        if (x.shape.size() != 4 || x.shape[1] != input_shape_[0] || x.shape[2] != input_shape_[1] ||
            x.shape[3] != input_shape_[2])
            throw ConfigError("backbone: input batch " + x.shape_str() + " does not match {N," +
                              std::to_string(input_shape_[0]) + "," + std::to_string(input_shape_[1]) +
                              "," + std::to_string(input_shape_[2]) + "}");
        n = x.shape[0];
        d = input_shape_;
    } else {
        if (x.shape.size() != 2 || x.shape[1] != input_shape_[0])
            throw ConfigError("backbone: input batch " + x.shape_str() + " does not match {N," +
                              std::to_string(input_shape_[0]) + "}");
        n = x.shape[0];
        d = {input_shape_[0], 1, 1};
    }

    if (offsets != nullptr) {
        for (const auto& [name, delta] : *offsets) {
            const int ch = intercept_channels(name); // throws for unknown names
            if (delta.shape != std::vector<int>{n, ch})
                throw ConfigError("offset for layer '" + name + "' has shape " + delta.shape_str() +
                                  ", expected {" + std::to_string(n) + "," + std::to_string(ch) + "}");
        }
    }

    const int L = static_cast<int>(layers_.size());
    cache = Cache{};
    cache.x = x;
    cache.n = n;
    cache.inputs.resize(L);
    cache.pre_act.resize(L);
    cache.patches.resize(L);
    cache.pool_argmax.resize(L);
    cache.in_dims.resize(L);
    cache.out_dims.resize(L);

    ForwardTrace trace;
    Tensor cur = x; // flat {N, C*H*W}

    for (int li = 0; li < L; ++li) {
        const Layer& l = layers_[li];
        cache.in_dims[li] = d;
        cache.inputs[li] = cur;

        if (l.kind == Layer::Kind::Conv) {
            const int C = d[0], H = d[1], W = d[2];
            const int Ho = H - l.k + 1, Wo = W - l.k + 1;
            const int rows = C * l.k * l.k, cols = Ho * Wo;
            Tensor patches({n, rows, cols});
            Tensor out({n, l.out_c, Ho, Wo});
            ConstMatMap Wm = l.W.mat(l.out_c, rows);
            for (int ni = 0; ni < n; ++ni) {
                // im2col: patch row (c*k + ki)*k + kj, column ho*Wo + wo.
                const Scalar* in = cur.data() + static_cast<std::int64_t>(ni) * C * H * W;
                Scalar* p = patches.data() + static_cast<std::int64_t>(ni) * rows * cols;
                for (int c = 0; c < C; ++c)
                    for (int ki = 0; ki < l.k; ++ki)
                        for (int kj = 0; kj < l.k; ++kj) {
                            Scalar* prow = p + (static_cast<std::int64_t>(c) * l.k * l.k + ki * l.k + kj) * cols;
                            for (int ho = 0; ho < Ho; ++ho) {
                                const Scalar* src = in + (static_cast<std::int64_t>(c) * H + ho + ki) * W + kj;
                                for (int wo = 0; wo < Wo; ++wo) prow[ho * Wo + wo] = src[wo];
                            }
                        }
                MatMap Om(out.data() + static_cast<std::int64_t>(ni) * l.out_c * cols, l.out_c, cols);
                Om.noalias() = Wm * ConstMatMap(p, rows, cols);
                for (int oc = 0; oc < l.out_c; ++oc) Om.row(oc).array() += l.b[oc];
            }
            d = {l.out_c, Ho, Wo};
            cache.patches[li] = std::move(patches);
            cur = std::move(out);
        } else if (l.kind == Layer::Kind::Dense) {
            const int flat = d[0] * d[1] * d[2];
            ConstMatMap X = std::as_const(cur).mat(n, flat);
            Tensor out({n, l.out_dim});
            MatMap O = out.mat(n, l.out_dim);
            O.noalias() = X * l.W.mat(l.out_dim, flat).transpose();
            O.rowwise() += l.b.vec().transpose();
            d = {l.out_dim, 1, 1};
            cur = std::move(out);
        } else { // Pool
            const int C = d[0], H = d[1], W = d[2];
            const int Ho = H / 2, Wo = W / 2;
            Tensor out({n, C, Ho, Wo});
            std::vector<int> arg(static_cast<std::size_t>(n) * C * Ho * Wo);
            for (int ni = 0; ni < n; ++ni)
                for (int c = 0; c < C; ++c) {
                    const Scalar* in = cur.data() + (static_cast<std::int64_t>(ni) * C + c) * H * W;
                    Scalar* o = out.data() + (static_cast<std::int64_t>(ni) * C + c) * Ho * Wo;
                    int* a = arg.data() + (static_cast<std::int64_t>(ni) * C + c) * Ho * Wo;
                    for (int ho = 0; ho < Ho; ++ho)
                        for (int wo = 0; wo < Wo; ++wo) {
                            int best = (2 * ho) * W + 2 * wo;
                            for (int di = 0; di < 2; ++di)
                                for (int dj = 0; dj < 2; ++dj) {
                                    const int idx = (2 * ho + di) * W + 2 * wo + dj;
                                    if (in[idx] > in[best]) best = idx;
                                }
                            o[ho * Wo + wo] = in[best];
                            a[ho * Wo + wo] = best;
                        }
                }
            d = {C, Ho, Wo};
            cache.pool_argmax[li] = std::move(arg);
            cur = std::move(out);
        }

        // Inject offsets at the pre-activation output, then record + activate.
        if (l.intercept && offsets != nullptr) {
            auto it = offsets->find(l.name);
            if (it != offsets->end()) {
                const Tensor& delta = it->second;
                const int C = d[0], spatial = d[1] * d[2];
                for (int ni = 0; ni < n; ++ni)
                    for (int c = 0; c < C; ++c) {
                        const Scalar dv = delta[static_cast<std::int64_t>(ni) * C + c];
                        Scalar* h = cur.data() + (static_cast<std::int64_t>(ni) * C + c) * spatial;
                        for (int s = 0; s < spatial; ++s) h[s] += dv;
                    }
            }
        }
        cache.pre_act[li] = cur;
        cache.out_dims[li] = d;
        if (l.intercept) trace.h_by_layer[l.name] = cur;

        if (l.relu)
            for (Scalar& v : cur.v) v = v > 0.0 ? v : 0.0;
    }

    trace.z = cur;
    trace.y_hat = softmax_rows(cur);
    cache.z = trace.z;
    cache.y_hat = trace.y_hat;
    return trace;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

BackboneGrads Backbone::backward(const Cache& cache, const Tensor& dlogits,
                                 const BackwardRequest& req) const {
    const int n = cache.n;
    if (dlogits.shape != std::vector<int>{n, classes_})
        throw ConfigError("backward: dlogits shape " + dlogits.shape_str() + " does not match {N," +
                          std::to_string(classes_) + "}");

    BackboneGrads grads;
    if (req.params) grads.dparams = VecX::Zero(param_count());

    // Parameter offsets into the flat gradient vector.
    std::vector<Eigen::Index> w_at(layers_.size()), b_at(layers_.size());
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        w_at[i] = at;
        at += layers_[i].W.numel();
        b_at[i] = at;
        at += layers_[i].b.numel();
    }

    Tensor g = dlogits; // gradient w.r.t. current layer's (post-activation) output
    for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
        const Layer& l = layers_[li];
        const auto& din = cache.in_dims[li];
        const auto& dout = cache.out_dims[li];

        if (l.relu) {
            const Tensor& h = cache.pre_act[li];
            for (std::int64_t i = 0; i < g.numel(); ++i)
                if (h[i] <= 0.0) g[i] = 0.0;
        }

        // g is now the gradient at the pre-activation output (offsets included).
        if (l.intercept && req.intercepts) {
            const int C = dout[0], spatial = dout[1] * dout[2];
            Tensor dd({n, C});
            for (int ni = 0; ni < n; ++ni)
                for (int c = 0; c < C; ++c) {
                    const Scalar* gp = g.data() + (static_cast<std::int64_t>(ni) * C + c) * spatial;
                    Scalar acc = 0.0;
                    for (int s = 0; s < spatial; ++s) acc += gp[s];
                    dd[static_cast<std::int64_t>(ni) * C + c] = acc;
                }
            grads.dintercepts[l.name] = std::move(dd);
        }

        const bool need_in = li > 0 || req.input;
        if (l.kind == Layer::Kind::Conv) {
            const int C = din[0], H = din[1], W = din[2];
            const int Ho = dout[1], Wo = dout[2];
            const int rows = C * l.k * l.k, cols = Ho * Wo;
            Tensor gin;
            if (need_in) gin = Tensor({n, C, H, W});
            MatX dW = MatX::Zero(l.out_c, rows);
            VecX db = VecX::Zero(l.out_c);
            ConstMatMap Wm = l.W.mat(l.out_c, rows);
            for (int ni = 0; ni < n; ++ni) {
                ConstMatMap Gm(g.data() + static_cast<std::int64_t>(ni) * l.out_c * cols, l.out_c, cols);
                ConstMatMap Pm(cache.patches[li].data() + static_cast<std::int64_t>(ni) * rows * cols,
                               rows, cols);
                if (req.params) {
                    dW.noalias() += Gm * Pm.transpose();
                    db.noalias() += Gm.rowwise().sum();
                }
                if (need_in) {
                    MatX dP = Wm.transpose() * Gm; // rows x cols
                    // col2im scatter-add.
                    Scalar* gi = gin.data() + static_cast<std::int64_t>(ni) * C * H * W;
                    for (int c = 0; c < C; ++c)
                        for (int ki = 0; ki < l.k; ++ki)
                            for (int kj = 0; kj < l.k; ++kj) {
                                const int r = (c * l.k + ki) * l.k + kj;
                                for (int ho = 0; ho < Ho; ++ho) {
                                    Scalar* dst = gi + (static_cast<std::int64_t>(c) * H + ho + ki) * W + kj;
                                    for (int wo = 0; wo < Wo; ++wo) dst[wo] += dP(r, ho * Wo + wo);
                                }
                            }
                }
            }
            if (req.params) {
                MatMap(grads.dparams.data() + w_at[li], l.out_c, rows) = dW;
                VecMap(grads.dparams.data() + b_at[li], l.out_c) = db;
            }
            if (need_in) g = std::move(gin);
        } else if (l.kind == Layer::Kind::Dense) {
            const int flat = din[0] * din[1] * din[2];
            ConstMatMap X = cache.inputs[li].mat(n, flat);
            ConstMatMap G = std::as_const(g).mat(n, l.out_dim);
            if (req.params) {
                MatMap(grads.dparams.data() + w_at[li], l.out_dim, flat).noalias() = G.transpose() * X;
                VecMap(grads.dparams.data() + b_at[li], l.out_dim).noalias() = G.colwise().sum().transpose();
            }
            if (need_in) {
                Tensor gin(cache.inputs[li].shape);
                gin.mat(n, flat).noalias() = G * l.W.mat(l.out_dim, flat);
                g = std::move(gin);
            }
        } else { // Pool
            const int C = din[0], H = din[1], W = din[2];
            const int Ho = dout[1], Wo = dout[2];
            Tensor gin({n, C, H, W});
            const auto& arg = cache.pool_argmax[li];
            for (int ni = 0; ni < n; ++ni)
                for (int c = 0; c < C; ++c) {
                    const Scalar* gp = g.data() + (static_cast<std::int64_t>(ni) * C + c) * Ho * Wo;
                    Scalar* gi = gin.data() + (static_cast<std::int64_t>(ni) * C + c) * H * W;
                    const int* a = arg.data() + (static_cast<std::int64_t>(ni) * C + c) * Ho * Wo;
                    for (int s = 0; s < Ho * Wo; ++s) gi[a[s]] += gp[s];
                }
            g = std::move(gin);
        }
    }

    if (req.input) {
        g.shape = cache.x.shape;
        grads.dinput = std::move(g);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// losses & helpers
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& z) {
    if (z.shape.size() != 2) throw ConfigError("softmax: expected {N,C}, got " + z.shape_str());
    const int n = z.shape[0], c = z.shape[1];
    Tensor p(z.shape);
    for (int i = 0; i < n; ++i) {
        const Scalar* zi = z.data() + static_cast<std::int64_t>(i) * c;
        Scalar* pi = p.data() + static_cast<std::int64_t>(i) * c;
        const Scalar m = *std::max_element(zi, zi + c);
        Scalar sum = 0.0;
        for (int j = 0; j < c; ++j) {
            pi[j] = std::exp(zi[j] - m);
            sum += pi[j];
        }
        for (int j = 0; j < c; ++j) pi[j] /= sum;
    }
    return p;
}

Scalar cross_entropy(const Tensor& y_hat, const Tensor& y) {
    if (!y_hat.same_shape(y))
        throw ConfigError("cross_entropy: prediction " + y_hat.shape_str() + " vs label " +
                          y.shape_str());
    const int n = y_hat.shape[0], c = y_hat.shape[1];
    Scalar total = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            const Scalar yv = y[static_cast<std::int64_t>(i) * c + j];
            if (yv != 0.0)
                total -= yv * std::log(std::max(y_hat[static_cast<std::int64_t>(i) * c + j], kLogClamp));
        }
    return total / static_cast<Scalar>(n);
}

Tensor cross_entropy_dlogits(const Tensor& y_hat, const Tensor& y) {
    if (!y_hat.same_shape(y))
        throw ConfigError("cross_entropy: prediction " + y_hat.shape_str() + " vs label " +
                          y.shape_str());
    Tensor d(y_hat.shape);
    const Scalar inv_n = 1.0 / static_cast<Scalar>(y_hat.shape[0]);
    for (std::int64_t i = 0; i < d.numel(); ++i) d[i] = (y_hat[i] - y[i]) * inv_n;
    return d;
}

Scalar prediction_entropy(const Tensor& y_hat) {
    const int n = y_hat.shape[0], c = y_hat.shape[1];
    Scalar total = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            const Scalar p = y_hat[static_cast<std::int64_t>(i) * c + j];
            if (p > 0.0) total -= p * std::log(std::max(p, kLogClamp));
        }
    return total / static_cast<Scalar>(n);
}

Tensor prediction_entropy_dlogits(const Tensor& y_hat) {
    // For one row: dH/dz_j = -p_j (log p_j + H_row); mean over the batch.
    const int n = y_hat.shape[0], c = y_hat.shape[1];
    Tensor d(y_hat.shape);
    const Scalar inv_n = 1.0 / static_cast<Scalar>(n);
    for (int i = 0; i < n; ++i) {
        const Scalar* p = y_hat.data() + static_cast<std::int64_t>(i) * c;
        Scalar h = 0.0;
        for (int j = 0; j < c; ++j)
            if (p[j] > 0.0) h -= p[j] * std::log(std::max(p[j], kLogClamp));
        Scalar* di = d.data() + static_cast<std::int64_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            const Scalar lp = std::log(std::max(p[j], kLogClamp));
            di[j] = -p[j] * (lp + h) * inv_n;
        }
    }
    return d;
}

Tensor one_hot(const std::vector<int>& labels, int classes) {
    Tensor y({static_cast<int>(labels.size()), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw ConfigError("label " + std::to_string(labels[i]) + " outside [0," +
                              std::to_string(classes) + ")");
        y[static_cast<std::int64_t>(i) * classes + labels[i]] = 1.0;
    }
    return y;
}

std::vector<int> argmax_rows(const Tensor& probs) {
    const int n = probs.shape[0], c = probs.shape[1];
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Scalar* p = probs.data() + static_cast<std::int64_t>(i) * c;
        out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(p, p + c) - p);
    }
    return out;
}

Scalar accuracy(const Tensor& y_hat, const std::vector<int>& labels) {
    const auto pred = argmax_rows(y_hat);
    if (pred.size() != labels.size())
        throw ConfigError("accuracy: prediction/label count mismatch");
    if (pred.empty()) return 0.0;
    int hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++hit;
    return static_cast<Scalar>(hit) / static_cast<Scalar>(pred.size());
}

} // namespace ugda
