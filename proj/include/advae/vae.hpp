#pragma once

// Speech priors: standard VAE, label-conditional VAE, and the adversarially
// disentangled conditional VAE (discriminator on the latent, classifier-encoder
// providing a soft label to the decoder).
//
// Every objective here is a minimization. BCE is the usual non-negative cross
// entropy; the adversarial-encoder term is the negative binary entropy of the
// discriminator output (minimum -ln 2 when the discriminator is maximally unsure).

#include <numbers>
#include <optional>

#include "advae/archive.hpp"
#include "advae/dsp.hpp"
#include "advae/nn.hpp"

namespace advae::vae {

enum class Variant { vae, cvae, acvae };

/// Training-scheme variants of the adversarial model.
///   hard_label_beta0:        decoder gets the hard label y, classifier unused (beta = 0).
///   hard_label_beta0_negdis: as above, and the encoder minimizes -BCE(discriminator, y)
///                            instead of the negative entropy.
enum class Ablation { none, hard_label_beta0, hard_label_beta0_negdis };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::vae: return "vae";
        case Variant::cvae: return "cvae";
        case Variant::acvae: return "acvae";
    }
    return "?";
}
inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::hard_label_beta0: return "hard_label_beta0";
        case Ablation::hard_label_beta0_negdis: return "hard_label_beta0_negdis";
    }
    return "?";
}
inline Variant variant_from_string(const std::string& s) {
    if (s == "vae") return Variant::vae;
    if (s == "cvae") return Variant::cvae;
    if (s == "acvae") return Variant::acvae;
    fail("unknown variant '", s, "' (expected vae, cvae or acvae)");
}
inline Ablation ablation_from_string(const std::string& s) {
    if (s == "none") return Ablation::none;
    if (s == "hard_label_beta0") return Ablation::hard_label_beta0;
    if (s == "hard_label_beta0_negdis") return Ablation::hard_label_beta0_negdis;
    fail("unknown ablation '", s, "' (expected none, hard_label_beta0 or hard_label_beta0_negdis)");
}

inline constexpr double kProbClamp = 1e-7;

struct GaussianPosterior {
    Matrix mu;       // B x L
    Matrix log_var;  // B x L
};

struct ModelBundle {
    Variant variant = Variant::vae;
    Ablation ablation = Ablation::none;
    int latent_dim = 16;
    double alpha = 10.0;
    double beta = 10.0;
    dsp::StftConfig stft;

    nn::MlpSpec encoder_spec, classifier_spec, decoder_spec, discriminator_spec;
    nn::MlpParams encoder, classifier, decoder, discriminator;

    // Affine map applied to the raw power bins; empty means identity.
    Vector feature_mean, feature_scale;

    // Number of classifier-encoder evaluations, for instrumentation.
    mutable std::size_t classifier_evaluations = 0;

    int bins() const { return encoder_spec.input_dim - (variant == Variant::cvae ? 1 : 0); }
    bool has_adversary() const { return variant == Variant::acvae; }
    bool decoder_conditioned() const { return variant != Variant::vae; }
    bool uses_classifier() const { return variant == Variant::acvae && ablation == Ablation::none; }
    double effective_beta() const { return uses_classifier() ? beta : 0.0; }
};

struct BundleOptions {
    int bins = 513;
    int latent_dim = 16;
    int hidden_width = 128;
    double alpha = 10.0;
    double beta = 10.0;
};

/// Network layout for a variant, with zero parameters.
inline ModelBundle make_zero_bundle(Variant variant, Ablation ablation = Ablation::none, const BundleOptions& opt = {}) {
    using nn::Activation;
    if (variant != Variant::acvae && ablation != Ablation::none) fail("ablations apply only to the acvae variant");
    if (opt.alpha < 0.0 || opt.beta < 0.0) fail("alpha and beta must be >= 0");
    ModelBundle b;
    b.variant = variant;
    b.ablation = ablation;
    b.latent_dim = opt.latent_dim;
    b.alpha = opt.alpha;
    b.beta = opt.beta;
    b.stft.window_len = 2 * (opt.bins - 1);
    b.stft.hop = std::max(1, b.stft.window_len / 4);
    const int L = opt.latent_dim, F = opt.bins, W = opt.hidden_width;
    const int enc_in = F + (variant == Variant::cvae ? 1 : 0);
    const int dec_in = L + (variant == Variant::vae ? 0 : 1);
    b.encoder_spec = nn::MlpSpec::standard(enc_in, 2 * L, Activation::tanh, Activation::identity, W);
    b.decoder_spec = nn::MlpSpec::standard(dec_in, F, Activation::tanh, Activation::exp, W);
    b.encoder = nn::zero_params(b.encoder_spec);
    b.decoder = nn::zero_params(b.decoder_spec);
    if (variant == Variant::acvae) {
        b.classifier_spec = nn::MlpSpec::standard(F, 1, Activation::relu, Activation::sigmoid, W);
        b.discriminator_spec = nn::MlpSpec::standard(L, 1, Activation::relu, Activation::sigmoid, W);
        b.classifier = nn::zero_params(b.classifier_spec);
        b.discriminator = nn::zero_params(b.discriminator_spec);
    }
    return b;
}

inline ModelBundle make_bundle(Variant variant, Ablation ablation, Rng& rng, const BundleOptions& opt = {}) {
    ModelBundle b = make_zero_bundle(variant, ablation, opt);
    b.encoder = nn::init_params(b.encoder_spec, rng);
    b.decoder = nn::init_params(b.decoder_spec, rng);
    if (variant == Variant::acvae) {
        b.classifier = nn::init_params(b.classifier_spec, rng);
        b.discriminator = nn::init_params(b.discriminator_spec, rng);
    }
    return b;
}

/// Fits a single offset and scale over all training power values, so the
/// encoder sees standardized raw power. The map is stored per bin.
inline void fit_feature_normalization(ModelBundle& b, const Eigen::Ref<const Matrix>& power_frames) {
    const double mean = power_frames.mean();
    const double sd = std::sqrt((power_frames.array() - mean).square().mean());
    b.feature_mean = Vector::Constant(power_frames.cols(), mean);
    b.feature_scale = Vector::Constant(power_frames.cols(), 1.0 / std::max(sd, 1e-12));
}

/// Encoder and classifier input: power frames under the fitted affine map.
inline Matrix features(const ModelBundle& b, const Eigen::Ref<const Matrix>& power_frames) {
    if (power_frames.cols() != b.bins()) fail("features: expected ", b.bins(), " bins, got ", power_frames.cols());
    Matrix f = power_frames;
    if (b.feature_mean.size() == f.cols()) {
        f.rowwise() -= b.feature_mean.transpose();
        f.array().rowwise() *= b.feature_scale.transpose().array();
    }
    return f;
}

inline Matrix append_column(const Eigen::Ref<const Matrix>& m, const Eigen::Ref<const Vector>& col) {
    Matrix out(m.rows(), m.cols() + 1);
    out.leftCols(m.cols()) = m;
    out.col(m.cols()) = col;
    return out;
}

namespace detail {
inline void check_labels(const Eigen::Ref<const Vector>& y, Eigen::Index rows, std::string_view what) {
    if (y.size() != rows) fail(what, ": label count ", y.size(), " does not match batch size ", rows);
    if (!((y.array() >= 0.0).all() && (y.array() <= 1.0).all())) fail(what, ": labels must lie in [0, 1]");
}
inline Vector clamp_prob(const Eigen::Ref<const Vector>& p) { return p.array().max(kProbClamp).min(1.0 - kProbClamp).matrix(); }
/// Mask of entries the clamp left untouched (gradient passes).
inline Vector clamp_mask(const Eigen::Ref<const Vector>& p) {
    return ((p.array() >= kProbClamp) && (p.array() <= 1.0 - kProbClamp)).cast<double>().matrix();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Network evaluation

inline GaussianPosterior encode(const ModelBundle& b, const Eigen::Ref<const Matrix>& power_frames,
                                const std::optional<Vector>& y = std::nullopt, nn::ForwardCache* cache = nullptr) {
    Matrix in = features(b, power_frames);
    if (b.variant == Variant::cvae) {
        if (!y) fail("encode: the cvae encoder requires a label per frame");
        detail::check_labels(*y, in.rows(), "encode");
        in = append_column(in, *y);
    } else if (y) {
        fail("encode: the ", to_string(b.variant), " encoder takes no label");
    }
    const Matrix out = nn::forward(b.encoder_spec, b.encoder, in, cache);
    const int L = b.latent_dim;
    return {out.leftCols(L), out.rightCols(L)};
}

inline Matrix reparameterize(const GaussianPosterior& post, const Eigen::Ref<const Matrix>& noise) {
    if (noise.rows() != post.mu.rows() || noise.cols() != post.mu.cols()) fail("reparameterize: noise shape mismatch");
    return post.mu + ((0.5 * post.log_var.array()).exp() * noise.array()).matrix();
}

/// Speech variances, B x F, strictly positive.
inline Matrix decode(const ModelBundle& b, const Eigen::Ref<const Matrix>& z, const std::optional<Vector>& cond = std::nullopt,
                     nn::ForwardCache* cache = nullptr) {
    if (z.cols() != b.latent_dim) fail("decode: latent has ", z.cols(), " columns, expected ", b.latent_dim);
    if (b.decoder_conditioned()) {
        if (!cond) fail("decode: the ", to_string(b.variant), " decoder requires a conditioning value per frame");
        detail::check_labels(*cond, z.rows(), "decode");
        return nn::forward(b.decoder_spec, b.decoder, append_column(z, *cond), cache);
    }
    if (cond) fail("decode: the vae decoder takes no conditioning value");
    return nn::forward(b.decoder_spec, b.decoder, z, cache);
}

/// Classifier-encoder output P(y = 1 | frame), clamped to [1e-7, 1 - 1e-7].
inline Vector classify(const ModelBundle& b, const Eigen::Ref<const Matrix>& power_frames, nn::ForwardCache* cache = nullptr) {
    if (!b.has_adversary()) fail("classify: only the acvae variant has a classifier-encoder");
    ++b.classifier_evaluations;
    return detail::clamp_prob(nn::forward(b.classifier_spec, b.classifier, features(b, power_frames), cache).col(0));
}

/// Discriminator output P(y = 1 | z), clamped like classify.
inline Vector discriminate(const ModelBundle& b, const Eigen::Ref<const Matrix>& z, nn::ForwardCache* cache = nullptr) {
    if (!b.has_adversary()) fail("discriminate: only the acvae variant has a discriminator");
    return detail::clamp_prob(nn::forward(b.discriminator_spec, b.discriminator, z, cache).col(0));
}

// ---------------------------------------------------------------------------
// Losses (batch means) and their gradients with respect to their inputs

/// Negative complex-Gaussian log-likelihood without the F log(pi) constant:
/// mean_b sum_f [log v + p / v].
inline double loss_recon(const Eigen::Ref<const Matrix>& p, const Eigen::Ref<const Matrix>& v) {
    if (p.rows() != v.rows() || p.cols() != v.cols()) fail("loss_recon: shape mismatch");
    if (!(v.array() > 0.0).all()) fail("loss_recon: variances must be positive");
    return (v.array().log() + p.array() / v.array()).sum() / static_cast<double>(p.rows());
}
inline Matrix loss_recon_grad(const Eigen::Ref<const Matrix>& p, const Eigen::Ref<const Matrix>& v) {
    return ((v.array().inverse() - p.array() / v.array().square()) / static_cast<double>(p.rows())).matrix();
}

/// KL(N(mu, v) || N(0, I)), batch mean.
inline double loss_kl(const GaussianPosterior& post) {
    const auto& lv = post.log_var.array();
    return 0.5 * (post.mu.array().square() + lv.exp() - 1.0 - lv).sum() / static_cast<double>(post.mu.rows());
}

/// -[y log q + (1 - y) log(1 - q)], batch mean; q is clamped.
inline double loss_bce(const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& y) {
    if (q.size() != y.size()) fail("loss_bce: size mismatch");
    const Vector qc = detail::clamp_prob(q);
    return -(y.array() * qc.array().log() + (1.0 - y.array()) * (1.0 - qc.array()).log()).sum() / static_cast<double>(q.size());
}
inline Vector loss_bce_grad(const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& y) {
    const Vector qc = detail::clamp_prob(q);
    return (-(y.array() / qc.array() - (1.0 - y.array()) / (1.0 - qc.array())) / static_cast<double>(q.size())).matrix();
}

/// q log q + (1 - q) log(1 - q), batch mean; in [-ln 2, 0].
inline double loss_neg_entropy(const Eigen::Ref<const Vector>& q) {
    const Vector qc = detail::clamp_prob(q);
    return (qc.array() * qc.array().log() + (1.0 - qc.array()) * (1.0 - qc.array()).log()).sum() / static_cast<double>(q.size());
}
inline Vector loss_neg_entropy_grad(const Eigen::Ref<const Vector>& q) {
    const Vector qc = detail::clamp_prob(q);
    return ((qc.array() / (1.0 - qc.array())).log() / static_cast<double>(q.size())).matrix();
}

/// Per-frame ELBO including the -F log(pi) constant, batch mean. For the same
/// (p, v, posterior): loss_recon + loss_kl + elbo == F log(pi).
inline double elbo(const Eigen::Ref<const Matrix>& p, const Eigen::Ref<const Matrix>& v, const GaussianPosterior& post) {
    const double log_pi = std::log(std::numbers::pi);
    const double ll = -(log_pi + v.array().log() + p.array() / v.array()).sum() / static_cast<double>(p.rows());
    return ll - loss_kl(post);
}

// ---------------------------------------------------------------------------
// Composite objectives

struct Batch {
    Matrix power;  // B x F
    Vector labels; // B, in [0, 1]
};

struct LossBreakdown {
    double recon = 0.0;
    double kl = 0.0;
    double adv_ent = 0.0;  // adversarial-encoder term actually minimized (neg. entropy, or -BCE for negdis)
    double clf_bce = 0.0;
    double dis_bce = 0.0;  // BCE of the discriminator on the batch (monitoring)
    double total = 0.0;
};

struct BundleGrads {
    nn::MlpParams encoder, classifier, decoder, discriminator;
};

inline nn::MlpParams zeros_like(const nn::MlpParams& p) {
    nn::MlpParams z;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        z.weights.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
        z.biases.push_back(Vector::Zero(p.biases[l].size()));
    }
    return z;
}

inline BundleGrads zero_grads(const ModelBundle& b) {
    return {zeros_like(b.encoder), zeros_like(b.classifier), zeros_like(b.decoder), zeros_like(b.discriminator)};
}

struct ModelLossResult {
    LossBreakdown loss;
    BundleGrads grads;  // discriminator gradient is always zero here
};

/// Loss for the encoder(s) and decoder. The discriminator participates as a
/// fixed function; it receives no gradient from this pass.
inline ModelLossResult model_loss(const ModelBundle& b, const Batch& batch, const Eigen::Ref<const Matrix>& noise,
                                  bool want_grads = true) {
    const Eigen::Index B = batch.power.rows();
    const int L = b.latent_dim;
    if (B == 0) fail("model_loss: empty batch");
    if (noise.rows() != B || noise.cols() != L) fail("model_loss: noise must be ", B, "x", L);
    const bool needs_labels = b.variant != Variant::vae;
    if (needs_labels) detail::check_labels(batch.labels, B, "model_loss");

    ModelLossResult res;
    LossBreakdown& out = res.loss;

    const Matrix feat = features(b, batch.power);
    nn::ForwardCache enc_cache, clf_cache, dec_cache, dis_cache;
    const Matrix enc_in = b.variant == Variant::cvae ? append_column(feat, batch.labels) : feat;
    const Matrix enc_out = nn::forward(b.encoder_spec, b.encoder, enc_in, &enc_cache);
    GaussianPosterior post{enc_out.leftCols(L), enc_out.rightCols(L)};
    const Matrix std_dev = (0.5 * post.log_var.array()).exp().matrix();
    const Matrix z = post.mu + (std_dev.array() * noise.array()).matrix();

    // Decoder conditioning.
    Vector q_raw, cond;
    if (b.uses_classifier()) {
        ++b.classifier_evaluations;
        q_raw = nn::forward(b.classifier_spec, b.classifier, feat, &clf_cache).col(0);
        cond = detail::clamp_prob(q_raw);
    } else if (b.decoder_conditioned()) {
        cond = batch.labels;
    }
    const Matrix dec_in = b.decoder_conditioned() ? append_column(z, cond) : z;
    const Matrix v = nn::forward(b.decoder_spec, b.decoder, dec_in, &dec_cache);

    out.recon = loss_recon(batch.power, v);
    out.kl = loss_kl(post);
    out.total = out.recon + out.kl;

    Vector d_disc;  // gradient wrt discriminator output
    Vector d;
    if (b.has_adversary()) {
        const Vector d_raw = nn::forward(b.discriminator_spec, b.discriminator, z, &dis_cache).col(0);
        d = detail::clamp_prob(d_raw);
        out.dis_bce = loss_bce(d, batch.labels);
        if (b.ablation == Ablation::hard_label_beta0_negdis) {
            out.adv_ent = -out.dis_bce;
            if (want_grads) d_disc = -b.alpha * loss_bce_grad(d, batch.labels);
        } else {
            out.adv_ent = loss_neg_entropy(d);
            if (want_grads) d_disc = b.alpha * loss_neg_entropy_grad(d);
        }
        if (want_grads) d_disc.array() *= detail::clamp_mask(d_raw).array();
        out.total += b.alpha * out.adv_ent;
        if (b.uses_classifier()) {
            out.clf_bce = loss_bce(cond, batch.labels);
            out.total += b.beta * out.clf_bce;
        }
    }
    if (!std::isfinite(out.total)) fail("model_loss: non-finite loss");
    if (!want_grads) return res;

    res.grads = zero_grads(b);
    // Decoder.
    const Matrix dv = loss_recon_grad(batch.power, v);
    nn::Gradients dec_g = nn::backward(b.decoder_spec, b.decoder, dec_cache, dv);
    res.grads.decoder = std::move(dec_g.params);
    Matrix dz = dec_g.input.leftCols(L);

    // Discriminator path into z (psi gradient discarded).
    if (b.has_adversary()) {
        nn::Gradients dis_g = nn::backward(b.discriminator_spec, b.discriminator, dis_cache, d_disc);
        dz += dis_g.input;
    }

    // Classifier-encoder: through the decoder's conditioning input and the BCE term.
    if (b.uses_classifier()) {
        Vector dq = dec_g.input.col(L) + b.beta * loss_bce_grad(cond, batch.labels);
        dq.array() *= detail::clamp_mask(q_raw).array();
        nn::Gradients clf_g = nn::backward(b.classifier_spec, b.classifier, clf_cache, dq);
        res.grads.classifier = std::move(clf_g.params);
    }

    // Encoder: reparameterization and KL.
    const double inv_b = 1.0 / static_cast<double>(B);
    Matrix d_enc(B, 2 * L);
    d_enc.leftCols(L) = dz + post.mu * inv_b;
    d_enc.rightCols(L) = (dz.array() * noise.array() * std_dev.array() * 0.5 +
                          0.5 * (post.log_var.array().exp() - 1.0) * inv_b).matrix();
    res.grads.encoder = nn::backward(b.encoder_spec, b.encoder, enc_cache, d_enc).params;
    return res;
}

struct DiscriminatorLossResult {
    double value = 0.0;  // alpha * BCE(discriminator(z), y)
    double bce = 0.0;
    BundleGrads grads;   // only the discriminator entry is non-zero
};

/// Discriminator objective on latents drawn from the current encoder; z is a
/// constant input here.
inline DiscriminatorLossResult discriminator_loss(const ModelBundle& b, const Batch& batch,
                                                  const Eigen::Ref<const Matrix>& noise, bool want_grads = true) {
    if (!b.has_adversary()) fail("discriminator_loss: only the acvae variant has a discriminator");
    const Eigen::Index B = batch.power.rows();
    if (noise.rows() != B || noise.cols() != b.latent_dim) fail("discriminator_loss: noise shape mismatch");
    detail::check_labels(batch.labels, B, "discriminator_loss");
    const GaussianPosterior post = encode(b, batch.power);
    const Matrix z = reparameterize(post, noise);
    nn::ForwardCache cache;
    const Vector d_raw = nn::forward(b.discriminator_spec, b.discriminator, z, &cache).col(0);
    const Vector d = detail::clamp_prob(d_raw);
    DiscriminatorLossResult res;
    res.bce = loss_bce(d, batch.labels);
    res.value = b.alpha * res.bce;
    if (!want_grads) return res;
    res.grads = zero_grads(b);
    Vector dd = b.alpha * loss_bce_grad(d, batch.labels);
    dd.array() *= detail::clamp_mask(d_raw).array();
    res.grads.discriminator = nn::backward(b.discriminator_spec, b.discriminator, cache, dd).params;
    return res;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {
inline std::string join_vector(const Vector& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += nn::format_double(v[i]);
    }
    return s;
}
inline Vector split_vector(const std::string& s) {
    std::vector<double> vals;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        vals.push_back(std::stod(s.substr(pos, next - pos)));
        pos = next + 1;
    }
    return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}
}  // namespace detail

inline nn::Archive to_archive(const ModelBundle& b) {
    nn::Archive a;
    a.meta["format"] = "advae-model";
    a.meta["variant"] = to_string(b.variant);
    a.meta["ablation"] = to_string(b.ablation);
    a.meta["latent_dim"] = std::to_string(b.latent_dim);
    a.meta["alpha"] = nn::format_double(b.alpha);
    a.meta["beta"] = nn::format_double(b.beta);
    a.meta["stft.sample_rate"] = std::to_string(b.stft.sample_rate);
    a.meta["stft.window_len"] = std::to_string(b.stft.window_len);
    a.meta["stft.hop"] = std::to_string(b.stft.hop);
    a.meta["feature_mean"] = detail::join_vector(b.feature_mean);
    a.meta["feature_scale"] = detail::join_vector(b.feature_scale);
    a.networks.push_back({"encoder_z", b.encoder_spec, b.encoder});
    a.networks.push_back({"decoder", b.decoder_spec, b.decoder});
    if (b.has_adversary()) {
        a.networks.push_back({"classifier_y", b.classifier_spec, b.classifier});
        a.networks.push_back({"discriminator", b.discriminator_spec, b.discriminator});
    }
    return a;
}

inline ModelBundle from_archive(const nn::Archive& a, std::string_view prefix = "") {
    auto it = a.meta.find("format");
    if (it == a.meta.end() || it->second != "advae-model") fail("model file: not an advae model archive");
    ModelBundle b;
    b.variant = variant_from_string(a.meta_at("variant"));
    b.ablation = ablation_from_string(a.meta_at("ablation"));
    b.latent_dim = std::stoi(a.meta_at("latent_dim"));
    b.alpha = std::stod(a.meta_at("alpha"));
    b.beta = std::stod(a.meta_at("beta"));
    b.stft.sample_rate = std::stoi(a.meta_at("stft.sample_rate"));
    b.stft.window_len = std::stoi(a.meta_at("stft.window_len"));
    b.stft.hop = std::stoi(a.meta_at("stft.hop"));
    b.feature_mean = detail::split_vector(a.meta_at("feature_mean"));
    b.feature_scale = detail::split_vector(a.meta_at("feature_scale"));
    const std::string p(prefix);
    auto take = [&](const std::string& name, nn::MlpSpec& spec, nn::MlpParams& params) {
        const auto& net = a.at(p + name);
        spec = net.spec;
        params = net.params;
    };
    take("encoder_z", b.encoder_spec, b.encoder);
    take("decoder", b.decoder_spec, b.decoder);
    if (b.has_adversary()) {
        take("classifier_y", b.classifier_spec, b.classifier);
        take("discriminator", b.discriminator_spec, b.discriminator);
    }
    // Cross-check the layout against the variant.
    const ModelBundle ref = make_zero_bundle(b.variant, b.ablation,
                                             {b.decoder_spec.output_dim, b.latent_dim, b.decoder_spec.hidden.empty() ? 128 : b.decoder_spec.hidden[0].width, b.alpha, b.beta});
    if (ref.encoder_spec.input_dim != b.encoder_spec.input_dim || ref.encoder_spec.output_dim != b.encoder_spec.output_dim ||
        ref.decoder_spec.input_dim != b.decoder_spec.input_dim)
        fail("model file: network shapes inconsistent with variant '", to_string(b.variant), "'");
    if (b.feature_mean.size() != 0 && b.feature_mean.size() != b.bins()) fail("model file: feature normalization size mismatch");
    return b;
}

inline void save_bundle(const ModelBundle& b, const std::filesystem::path& path) { nn::save_archive(to_archive(b), path); }
inline ModelBundle load_bundle(const std::filesystem::path& path) { return from_archive(nn::load_archive(path)); }

}  // namespace advae::vae
