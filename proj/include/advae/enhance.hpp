#pragma once

// Test-time speech estimation: NMF noise model, Monte Carlo EM with
// random-walk Metropolis-Hastings over the latents, and Wiener filtering.

#include <iostream>

#include "advae/dsp.hpp"
#include "advae/vae.hpp"

namespace advae::enhance {

inline constexpr double kFloor = 1e-12;

struct NmfModel {
    Matrix H;  // N x K activations
    Matrix W;  // K x F spectral patterns

    int rank() const { return static_cast<int>(W.rows()); }
    Matrix variance() const { return H * W; }
};

struct McemConfig {
    int n_em_iters = 100;
    int mh_steps_per_iter = 10;
    int burn_in = 30;
    int samples_kept = 10;
    double proposal_std = 0.01;
    int final_wiener_samples = 25;
    int nmf_rank = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_em_iters < 1 || mh_steps_per_iter < 1 || samples_kept < 1 || final_wiener_samples < 1 || nmf_rank < 1)
            fail("mcem: iteration, step, sample and rank counts must be >= 1");
        if (burn_in < 0) fail("mcem: burn_in must be >= 0");
        if (!(proposal_std > 0.0)) fail("mcem: proposal_std must be > 0");
    }
};

// ---------------------------------------------------------------------------
// Test-time labels

struct LabelResult {
    dsp::LabelSeq labels;
    bool degenerate = false;  // single cluster: all frames set active
};

/// Energy VAD on the mixture: frame log-RMS split by 1-D 2-means; frames in
/// the louder cluster are active.
inline LabelResult test_time_labels(const dsp::Utterance& x, const dsp::StftConfig& cfg = {}) {
    // Tail frames are averaged over the samples they actually hold.
    Vector rms = dsp::frame_rms(x, cfg);
    for (Eigen::Index n = 0; n < rms.size(); ++n) {
        const std::size_t start = static_cast<std::size_t>(n * cfg.hop);
        const std::size_t held = std::min<std::size_t>(cfg.window_len, x.size() - std::min(x.size(), start));
        if (held > 0) rms[n] *= std::sqrt(static_cast<double>(cfg.window_len) / static_cast<double>(held));
    }
    const Vector e = (rms.array() + 1e-12).log();
    LabelResult out;
    out.labels.kind = dsp::LabelKind::hard;
    double lo = e.minCoeff(), hi = e.maxCoeff();
    // Clusters closer than ~1.5 dB in amplitude are treated as one.
    if (hi - lo < 0.17) {
        out.degenerate = true;
        out.labels.values.assign(static_cast<std::size_t>(e.size()), 1.0);
        return out;
    }
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        double s0 = 0.0, s1 = 0.0;
        int n0 = 0, n1 = 0;
        for (Eigen::Index i = 0; i < e.size(); ++i) {
            if (e[i] > mid) {
                s1 += e[i];
                ++n1;
            } else {
                s0 += e[i];
                ++n0;
            }
        }
        const double nlo = n0 ? s0 / n0 : lo, nhi = n1 ? s1 / n1 : hi;
        if (nlo == lo && nhi == hi) break;
        lo = nlo;
        hi = nhi;
    }
    const double mid = 0.5 * (lo + hi);
    for (Eigen::Index i = 0; i < e.size(); ++i) out.labels.values.push_back(e[i] > mid ? 1.0 : 0.0);
    const auto active = std::count(out.labels.values.begin(), out.labels.values.end(), 1.0);
    if (active == 0 || active == e.size() || hi - lo < 0.17) {
        out.degenerate = true;
        out.labels.values.assign(static_cast<std::size_t>(e.size()), 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Likelihood

/// Mixture variance g_n v_s + (HW) for one sample of speech variances.
inline Matrix mixture_variance(const Matrix& v_s, const Vector& g, const Matrix& v_b) {
    return (v_s.array().colwise() * g.array() + v_b.array()).matrix();
}

/// Mean over samples of sum_{n,f} [log v_x + p / v_x].
inline double neg_log_likelihood(const Matrix& p, const std::vector<Matrix>& v_s_samples, const Vector& g, const NmfModel& nmf) {
    if (v_s_samples.empty()) fail("neg_log_likelihood: no samples");
    const Matrix v_b = nmf.variance();
    double total = 0.0;
    for (const auto& v_s : v_s_samples) {
        const Matrix v_x = mixture_variance(v_s, g, v_b);
        if (!(v_x.minCoeff() > 0.0)) fail("neg_log_likelihood: non-positive mixture variance");
        total += (v_x.array().log() + p.array() / v_x.array()).sum();
    }
    return total / static_cast<double>(v_s_samples.size());
}

/// Per-frame log p(x_n | z_n) up to a constant, from the speech variances.
inline Vector frame_log_likelihood(const Matrix& p, const Matrix& v_s, const Vector& g, const Matrix& v_b) {
    const Matrix v_x = mixture_variance(v_s, g, v_b);
    return -(v_x.array().log() + p.array() / v_x.array()).rowwise().sum().matrix();
}

// ---------------------------------------------------------------------------
// Metropolis-Hastings

struct ChainState {
    Matrix z;    // N x L
    Matrix v_s;  // N x F, decoder output at z
};

struct MhSamples {
    std::vector<Matrix> z;
    std::vector<Matrix> v_s;
    std::size_t proposals = 0;
    std::size_t accepted = 0;

    double acceptance_rate() const { return proposals ? static_cast<double>(accepted) / static_cast<double>(proposals) : 0.0; }
};

struct MhOptions {
    int steps = 10;       // steps whose states may be kept
    int warmup = 0;       // extra leading steps never kept
    int keep = 10;        // the last `keep` of `steps` states are returned
    double proposal_std = 0.01;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;  // e.g. the EM iteration
};

/// Random-walk Metropolis on every frame's latent in parallel. `decode` maps
/// an N x L latent matrix to N x F speech variances. Frame n draws from its
/// own stream (seed, n, stream), so results do not depend on batching.
template <class DecodeFn>
MhSamples mh_sample(DecodeFn&& decode, const Matrix& p, const Vector& g, const Matrix& v_b, ChainState& chain,
                    const MhOptions& opt) {
    const Eigen::Index N = chain.z.rows(), L = chain.z.cols();
    if (p.rows() != N || v_b.rows() != N || g.size() != N || chain.v_s.rows() != N)
        fail("mh_sample: frame count mismatch");
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(N));
    for (Eigen::Index n = 0; n < N; ++n) rngs.push_back(make_rng(opt.seed, 0x6d68, static_cast<std::uint64_t>(n), opt.stream));

    MhSamples out;
    Vector ll = frame_log_likelihood(p, chain.v_s, g, v_b);
    Vector lp = -0.5 * chain.z.rowwise().squaredNorm();
    Matrix z_prop(N, L);
    const int total = opt.warmup + opt.steps;
    for (int step = 0; step < total; ++step) {
        for (Eigen::Index n = 0; n < N; ++n)
            for (Eigen::Index l = 0; l < L; ++l) z_prop(n, l) = chain.z(n, l) + opt.proposal_std * standard_normal(rngs[n]);
        const Matrix v_prop = decode(z_prop);
        const Vector ll_prop = frame_log_likelihood(p, v_prop, g, v_b);
        const Vector lp_prop = -0.5 * z_prop.rowwise().squaredNorm();
        for (Eigen::Index n = 0; n < N; ++n) {
            const double log_ratio = ll_prop[n] + lp_prop[n] - ll[n] - lp[n];
            const double u = uniform(rngs[n], 0.0, 1.0);
            ++out.proposals;
            if (log_ratio >= 0.0 || u < std::exp(log_ratio)) {
                ++out.accepted;
                chain.z.row(n) = z_prop.row(n);
                chain.v_s.row(n) = v_prop.row(n);
                ll[n] = ll_prop[n];
                lp[n] = lp_prop[n];
            }
        }
        if (step >= total - opt.keep && step >= opt.warmup) {
            out.z.push_back(chain.z);
            out.v_s.push_back(chain.v_s);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// M-step

namespace detail {

/// Xi2 = mean_r p / v_x^2 and Xi1 = mean_r 1 / v_x.
inline void xi(const Matrix& p, const std::vector<Matrix>& v_s, const Vector& g, const Matrix& v_b, Matrix& xi2, Matrix& xi1) {
    xi2 = Matrix::Zero(p.rows(), p.cols());
    xi1 = Matrix::Zero(p.rows(), p.cols());
    for (const auto& s : v_s) {
        const Matrix inv = mixture_variance(s, g, v_b).cwiseInverse();
        xi1 += inv;
        xi2.array() += p.array() * inv.array().square();
    }
    xi2 /= static_cast<double>(v_s.size());
    xi1 /= static_cast<double>(v_s.size());
}

}  // namespace detail

/// Multiplicative updates of W then H, each a majorization step on the
/// expected negative log-likelihood over the kept samples.
inline NmfModel update_nmf(const Matrix& p, const std::vector<Matrix>& v_s, const Vector& g, const NmfModel& nmf) {
    NmfModel out = nmf;
    Matrix xi2, xi1;
    detail::xi(p, v_s, g, out.variance(), xi2, xi1);
    const Matrix wn = out.H.transpose() * xi2, wd = out.H.transpose() * xi1;
    out.W = (out.W.array() * (wn.array() / wd.array().max(kFloor)).sqrt()).max(kFloor).matrix();
    detail::xi(p, v_s, g, out.variance(), xi2, xi1);
    const Matrix hn = xi2 * out.W.transpose(), hd = xi1 * out.W.transpose();
    out.H = (out.H.array() * (hn.array() / hd.array().max(kFloor)).sqrt()).max(kFloor).matrix();
    return out;
}

inline Vector update_gain(const Matrix& p, const std::vector<Matrix>& v_s, const Vector& g, const NmfModel& nmf) {
    const Matrix v_b = nmf.variance();
    Vector num = Vector::Zero(p.rows()), den = Vector::Zero(p.rows());
    for (const auto& s : v_s) {
        const Matrix inv = mixture_variance(s, g, v_b).cwiseInverse();
        num += (p.array() * s.array() * inv.array().square()).rowwise().sum().matrix();
        den += (s.array() * inv.array()).rowwise().sum().matrix();
    }
    return (g.array() * (num.array() / den.array().max(kFloor)).sqrt()).max(kFloor).matrix();
}

inline NmfModel init_nmf(Eigen::Index frames, Eigen::Index bins, int rank, Rng& rng) {
    NmfModel m;
    m.H.resize(frames, rank);
    m.W.resize(rank, bins);
    for (Eigen::Index i = 0; i < m.H.size(); ++i) m.H.data()[i] = std::abs(standard_normal(rng)) + 0.1;
    for (Eigen::Index i = 0; i < m.W.size(); ++i) m.W.data()[i] = std::abs(standard_normal(rng)) + 0.1;
    return m;
}

// ---------------------------------------------------------------------------
// Full MCEM

struct EnhanceResult {
    dsp::ComplexSpectrogram s_hat;
    Vector g;
    NmfModel nmf;
    std::vector<double> nll_before;  // per iteration, before the M-step
    std::vector<double> trace;       // per iteration, after the M-step, same samples
    double acceptance_rate = 0.0;
};

/// Decoder closure and encoder initialization for a bundle and test-time labels.
struct LatentModel {
    const vae::ModelBundle& bundle;
    std::optional<Vector> cond;

    Matrix decode(const Matrix& z) const { return vae::decode(bundle, z, cond); }
    Matrix initial_latents(const Matrix& p) const {
        if (bundle.variant == vae::Variant::cvae) return vae::encode(bundle, p, cond).mu;
        return vae::encode(bundle, p).mu;
    }
};

inline LatentModel latent_model(const vae::ModelBundle& b, const dsp::LabelSeq& labels, Eigen::Index frames) {
    LatentModel m{b, std::nullopt};
    if (b.decoder_conditioned()) {
        if (static_cast<Eigen::Index>(labels.size()) != frames)
            fail("mcem: ", labels.size(), " labels for ", frames, " frames");
        m.cond = labels.as_vector();
    }
    return m;
}

inline EnhanceResult mcem_enhance(const dsp::ComplexSpectrogram& x, const vae::ModelBundle& b, const dsp::LabelSeq& labels,
                                  const McemConfig& cfg = {}) {
    cfg.validate();
    const Matrix p = dsp::power(x);
    const Eigen::Index N = p.rows(), F = p.cols();
    if (F != b.bins()) fail("mcem: spectrogram has ", F, " bins, model expects ", b.bins());
    const LatentModel model = latent_model(b, labels, N);
    auto decode = [&](const Matrix& z) { return model.decode(z); };

    EnhanceResult res;
    Rng rng = make_rng(cfg.seed, 0x6e6d66);
    res.nmf = init_nmf(N, F, cfg.nmf_rank, rng);
    res.g = Vector::Ones(N);

    ChainState chain;
    chain.z = model.initial_latents(p);
    chain.v_s = decode(chain.z);
    std::size_t proposals = 0, accepted = 0;
    for (int it = 0; it < cfg.n_em_iters; ++it) {
        MhOptions mh;
        mh.steps = cfg.mh_steps_per_iter;
        mh.warmup = it == 0 ? cfg.burn_in : 0;
        mh.keep = std::min(cfg.samples_kept, cfg.mh_steps_per_iter);
        mh.proposal_std = cfg.proposal_std;
        mh.seed = cfg.seed;
        mh.stream = static_cast<std::uint64_t>(it);
        const MhSamples s = mh_sample(decode, p, res.g, res.nmf.variance(), chain, mh);
        proposals += s.proposals;
        accepted += s.accepted;
        res.nll_before.push_back(neg_log_likelihood(p, s.v_s, res.g, res.nmf));
        res.nmf = update_nmf(p, s.v_s, res.g, res.nmf);
        res.g = update_gain(p, s.v_s, res.g, res.nmf);
        const double nll = neg_log_likelihood(p, s.v_s, res.g, res.nmf);
        if (!std::isfinite(nll)) fail("mcem: non-finite likelihood at iteration ", it);
        res.trace.push_back(nll);
    }

    // Wiener filter averaged over fresh posterior samples.
    MhOptions mh;
    mh.steps = cfg.final_wiener_samples;
    mh.keep = cfg.final_wiener_samples;
    mh.proposal_std = cfg.proposal_std;
    mh.seed = cfg.seed;
    mh.stream = static_cast<std::uint64_t>(cfg.n_em_iters);
    const Matrix v_b = res.nmf.variance();
    const MhSamples s = mh_sample(decode, p, res.g, v_b, chain, mh);
    proposals += s.proposals;
    accepted += s.accepted;
    Matrix gain = Matrix::Zero(N, F);
    for (const auto& v : s.v_s) {
        const Matrix vs = (v.array().colwise() * res.g.array()).matrix();
        gain.array() += vs.array() / (vs.array() + v_b.array());
    }
    gain /= static_cast<double>(s.v_s.size());
    res.s_hat.config = x.config;
    res.s_hat.frames = (x.frames.array() * gain.array().cast<std::complex<double>>()).matrix();
    res.acceptance_rate = proposals ? static_cast<double>(accepted) / static_cast<double>(proposals) : 0.0;
    return res;
}

inline dsp::Utterance enhance_utterance(const dsp::Utterance& x, const vae::ModelBundle& b, const dsp::LabelSeq& labels,
                                        const McemConfig& cfg = {}, EnhanceResult* detail = nullptr) {
    const auto spec = dsp::stft(x, b.stft);
    EnhanceResult r = mcem_enhance(spec, b, labels, cfg);
    dsp::Utterance out = dsp::istft(r.s_hat, x.size());
    out.id = x.id;
    if (detail) *detail = std::move(r);
    return out;
}

}  // namespace advae::enhance
