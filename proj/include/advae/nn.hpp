#pragma once

// Small dense networks: forward/backward for fixed MLPs, Adam, finite-difference
// gradient checking. Batches are row-major (B x input_dim).

#include <algorithm>
#include <atomic>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advae/common.hpp"

namespace advae::nn {

enum class Activation : std::uint8_t { identity = 0, sigmoid = 1, exp = 2, relu = 3, tanh = 4 };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::sigmoid: return "sigmoid";
        case Activation::exp: return "exp";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

/// Pre-activations of exp heads are clamped to this range; the clamp has zero
/// gradient outside it.
inline constexpr double kExpClamp = 30.0;

struct Layer {
    int width = 0;
    Activation activation = Activation::tanh;
    bool operator==(const Layer&) const = default;
};

struct MlpSpec {
    int input_dim = 1;
    std::vector<Layer> hidden;
    int output_dim = 1;
    Activation output_activation = Activation::identity;

    bool operator==(const MlpSpec&) const = default;

    std::size_t num_layers() const { return hidden.size() + 1; }
    int layer_in(std::size_t l) const { return l == 0 ? input_dim : hidden[l - 1].width; }
    int layer_out(std::size_t l) const { return l < hidden.size() ? hidden[l].width : output_dim; }
    Activation layer_activation(std::size_t l) const {
        return l < hidden.size() ? hidden[l].activation : output_activation;
    }

    void validate() const {
        if (input_dim < 1 || output_dim < 1) fail("mlp: dimensions must be >= 1");
        for (const auto& h : hidden)
            if (h.width < 1) fail("mlp: hidden widths must be >= 1");
    }

    /// Two hidden layers of 128 units, the configuration used for every subnetwork.
    static MlpSpec standard(int in, int out, Activation hidden_act, Activation out_act, int width = 128) {
        return MlpSpec{in, {{width, hidden_act}, {width, hidden_act}}, out, out_act};
    }
};

inline std::uint64_t next_revision() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

/// Weights are (out x in), biases length out. `revision` changes whenever the
/// values are updated through this API, so caches can detect staleness.
struct MlpParams {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    std::uint64_t revision = 0;

    std::size_t size() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
        return n;
    }
    void touch() { revision = next_revision(); }
};

inline MlpParams zero_params(const MlpSpec& spec) {
    spec.validate();
    MlpParams p;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        p.weights.push_back(Matrix::Zero(spec.layer_out(l), spec.layer_in(l)));
        p.biases.push_back(Vector::Zero(spec.layer_out(l)));
    }
    p.touch();
    return p;
}

/// Glorot-uniform weights, zero biases.
inline MlpParams init_params(const MlpSpec& spec, Rng& rng) {
    MlpParams p = zero_params(spec);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const double a = std::sqrt(6.0 / (spec.layer_in(l) + spec.layer_out(l)));
        Matrix& w = p.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = uniform(rng, -a, a);
    }
    p.touch();
    return p;
}

inline void check_shapes(const MlpSpec& spec, const MlpParams& p, std::string_view name = "mlp") {
    if (p.weights.size() != spec.num_layers() || p.biases.size() != spec.num_layers())
        fail(name, ": parameter layer count ", p.weights.size(), " does not match spec (", spec.num_layers(), ")");
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        if (p.weights[l].rows() != spec.layer_out(l) || p.weights[l].cols() != spec.layer_in(l) ||
            p.biases[l].size() != spec.layer_out(l))
            fail(name, ": layer ", l, " has shape ", p.weights[l].rows(), "x", p.weights[l].cols(), ", spec requires ",
                 spec.layer_out(l), "x", spec.layer_in(l));
    }
}

namespace detail {

inline void activate(Activation act, const Matrix& pre, Matrix& out) {
    switch (act) {
        case Activation::identity: out = pre; break;
        case Activation::sigmoid: out = (1.0 + (-pre.array()).exp()).inverse().matrix(); break;
        case Activation::exp: out = pre.array().max(-kExpClamp).min(kExpClamp).exp().matrix(); break;
        case Activation::relu: out = pre.array().max(0.0).matrix(); break;
        case Activation::tanh: out = pre.array().tanh().matrix(); break;
    }
}

/// grad (in place) *= d act / d pre, using the cached pre-activation and output.
inline void activation_backward(Activation act, const Matrix& pre, const Matrix& out, Matrix& grad) {
    switch (act) {
        case Activation::identity: break;
        case Activation::sigmoid: grad.array() *= out.array() * (1.0 - out.array()); break;
        case Activation::exp:
            grad.array() *= (pre.array().abs() <= kExpClamp).select(out.array(), 0.0);
            break;
        case Activation::relu: grad.array() *= (pre.array() > 0.0).cast<double>(); break;
        case Activation::tanh: grad.array() *= 1.0 - out.array().square(); break;
    }
}

}  // namespace detail

/// Per-layer inputs and pre-activations recorded by forward.
struct ForwardCache {
    std::vector<Matrix> inputs;  // inputs[l] feeds layer l
    std::vector<Matrix> pre;
    Matrix output;
    std::uint64_t revision = 0;
    bool valid = false;
};

inline Matrix forward(const MlpSpec& spec, const MlpParams& params, const Eigen::Ref<const Matrix>& batch,
                      ForwardCache* cache = nullptr) {
    check_shapes(spec, params);
    if (batch.cols() != spec.input_dim) fail("mlp forward: batch has ", batch.cols(), " columns, expected ", spec.input_dim);
    if (!batch.allFinite()) fail("mlp forward: non-finite input");
    Matrix x = batch;
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        Matrix pre(x.rows(), spec.layer_out(l));
        pre.noalias() = x * params.weights[l].transpose();
        pre.rowwise() += params.biases[l].transpose();
        Matrix out;
        detail::activate(spec.layer_activation(l), pre, out);
        if (cache) {
            cache->inputs.push_back(std::move(x));
            cache->pre.push_back(std::move(pre));
        }
        x = std::move(out);
    }
    if (cache) {
        cache->output = x;
        cache->revision = params.revision;
        cache->valid = true;
    }
    return x;
}

struct Gradients {
    MlpParams params;  // same layout as the network parameters
    Matrix input;      // d loss / d batch
};

inline Gradients backward(const MlpSpec& spec, const MlpParams& params, const ForwardCache& cache,
                          const Eigen::Ref<const Matrix>& output_grad) {
    check_shapes(spec, params);
    if (!cache.valid || cache.revision != params.revision || cache.pre.size() != spec.num_layers())
        fail("mlp backward: stale cache (parameters changed since forward)");
    if (output_grad.rows() != cache.output.rows() || output_grad.cols() != cache.output.cols())
        fail("mlp backward: output gradient shape mismatch");

    Gradients g;
    g.params.weights.resize(spec.num_layers());
    g.params.biases.resize(spec.num_layers());
    Matrix grad = output_grad;
    for (std::size_t l = spec.num_layers(); l-- > 0;) {
        const Matrix& out = (l + 1 < spec.num_layers()) ? cache.inputs[l + 1] : cache.output;
        detail::activation_backward(spec.layer_activation(l), cache.pre[l], out, grad);
        g.params.weights[l].noalias() = grad.transpose() * cache.inputs[l];
        g.params.biases[l] = grad.colwise().sum().transpose();
        Matrix next(grad.rows(), spec.layer_in(l));
        next.noalias() = grad * params.weights[l];
        grad = std::move(next);
    }
    g.input = std::move(grad);
    return g;
}

inline void accumulate(MlpParams& into, const MlpParams& g) {
    if (into.weights.empty()) {
        into = g;
        return;
    }
    for (std::size_t l = 0; l < into.weights.size(); ++l) {
        into.weights[l] += g.weights[l];
        into.biases[l] += g.biases[l];
    }
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::int64_t step = 0;
    std::vector<Matrix> m_w, v_w;
    std::vector<Vector> m_b, v_b;

    static AdamState for_params(const MlpParams& p, AdamConfig cfg = {}) {
        AdamState s;
        s.config = cfg;
        for (std::size_t l = 0; l < p.weights.size(); ++l) {
            s.m_w.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
            s.v_w.push_back(s.m_w.back());
            s.m_b.push_back(Vector::Zero(p.biases[l].size()));
            s.v_b.push_back(s.m_b.back());
        }
        return s;
    }
};

/// Bias-corrected Adam update. Fails before touching anything if a gradient
/// tensor is non-finite.
inline void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state, std::string_view name = "params") {
    if (grads.weights.size() != params.weights.size() || state.m_w.size() != params.weights.size())
        fail("adam_step(", name, "): layer count mismatch");
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        if (grads.weights[l].rows() != params.weights[l].rows() || grads.weights[l].cols() != params.weights[l].cols() ||
            grads.biases[l].size() != params.biases[l].size())
            fail("adam_step(", name, "): gradient shape mismatch at layer ", l);
        if (!grads.weights[l].allFinite()) fail("adam_step: non-finite gradient in ", name, ".layer", l, ".weight");
        if (!grads.biases[l].allFinite()) fail("adam_step: non-finite gradient in ", name, ".layer", l, ".bias");
    }
    const AdamConfig& c = state.config;
    ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseAbs2();
        p.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
    };
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        update(params.weights[l], grads.weights[l], state.m_w[l], state.v_w[l]);
        update(params.biases[l], grads.biases[l], state.m_b[l], state.v_b[l]);
    }
    params.touch();
}

// ---------------------------------------------------------------------------
// Gradient checking

/// A mutable flat view of one parameter tensor with its analytic gradient.
struct ParamRef {
    std::string name;
    std::span<double> values;
    std::span<const double> grad;
};

inline void append_refs(std::vector<ParamRef>& refs, MlpParams& p, const MlpParams& g, const std::string& prefix) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        refs.push_back({prefix + ".layer" + std::to_string(l) + ".weight",
                        {p.weights[l].data(), static_cast<std::size_t>(p.weights[l].size())},
                        {g.weights[l].data(), static_cast<std::size_t>(g.weights[l].size())}});
        refs.push_back({prefix + ".layer" + std::to_string(l) + ".bias",
                        {p.biases[l].data(), static_cast<std::size_t>(p.biases[l].size())},
                        {g.biases[l].data(), static_cast<std::size_t>(g.biases[l].size())}});
    }
}

struct GradCheckOptions {
    double step = 1e-5;
    std::size_t min_coords = 200;
    /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
    /// Coordinates whose gradient is below the floor are judged on absolute error.
    double denom_floor = 1e-8;
    /// Extrapolate central differences at h, h/2, h/4 (error O(h^4) instead of O(h^2)),
    /// which allows a larger step and so less cancellation roundoff.
    bool richardson = false;
    /// With richardson: extrapolated estimates from (h, h/2) and (h/2, h/4) that
    /// disagree by more than this fraction mean a ReLU kink lies within the
    /// step; such coordinates are skipped. The check fails if more than
    /// max_skipped_fraction of the sample is skipped.
    double kink_ratio = 1e-5;
    double max_skipped_fraction = 0.05;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
    std::size_t coords_skipped = 0;
    bool passed = true;
};

/// Central differences on a random subset of at least min_coords coordinates
/// (all of them if there are fewer). loss() must read the parameters through
/// the spans in `refs`; every touched value is restored exactly.
template <class LossFn>
GradCheckReport grad_check(LossFn&& loss, std::span<const ParamRef> refs, double tolerance, Rng& rng,
                           const GradCheckOptions& opt = {}) {
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t t = 0; t < refs.size(); ++t)
        for (std::size_t i = 0; i < refs[t].values.size(); ++i) coords.emplace_back(t, i);
    if (coords.size() > opt.min_coords) {
        // Partial Fisher-Yates: the first min_coords entries are a uniform sample.
        for (std::size_t i = 0; i < opt.min_coords; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng() % (coords.size() - i));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(opt.min_coords);
    }
    GradCheckReport rep;
    for (auto [t, i] : coords) {
        double& v = refs[t].values[i];
        const double orig = v;
        auto central = [&](double h) {
            v = orig + h;
            const double up = loss();
            v = orig - h;
            const double down = loss();
            v = orig;
            return (up - down) / (2.0 * h);
        };
        double numeric = 0.0;
        if (opt.richardson) {
            const double d1 = central(opt.step), d2 = central(0.5 * opt.step), d4 = central(0.25 * opt.step);
            const double r1 = (4.0 * d2 - d1) / 3.0, r2 = (4.0 * d4 - d2) / 3.0;
            if (std::abs(r1 - r2) > opt.kink_ratio * std::max({std::abs(r1), std::abs(r2), opt.denom_floor})) {
                ++rep.coords_skipped;
                continue;
            }
            numeric = r2;
        } else {
            numeric = central(opt.step);
        }
        const double analytic = refs[t].grad[i];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.denom_floor});
        const double rel = std::abs(analytic - numeric) / denom;
        ++rep.coords_checked;
        if (!(rel <= rep.max_rel_err)) {
            rep.max_rel_err = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
            rep.worst_tensor = refs[t].name;
            rep.worst_index = i;
            rep.worst_analytic = analytic;
            rep.worst_numeric = numeric;
        }
    }
    rep.passed = rep.max_rel_err < tolerance &&
                 static_cast<double>(rep.coords_skipped) <= opt.max_skipped_fraction * static_cast<double>(coords.size());
    return rep;
}

}  // namespace advae::nn
