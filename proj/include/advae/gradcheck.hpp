#pragma once

// Finite-difference verification of every network/loss pairing used in training.

#include <chrono>

#include "advae/vae.hpp"

namespace advae::gradcheck {

struct Case {
    std::string name;
    nn::GradCheckReport report;
    double seconds = 0.0;
};

struct SuiteOptions {
    vae::BundleOptions dims;  // defaults: F = 513, L = 16, 2 x 128 hidden
    int batch = 4;
    double tolerance = 1e-5;
    std::uint64_t seed = 0;
    // Losses over 513 bins are O(1e3), so plain central differences at small h
    // lose ~eps*|L|/h to cancellation. Extrapolating from h = 1e-3 keeps both
    // truncation and roundoff below 1e-6 on typical coordinates.
    nn::GradCheckOptions fd{.step = 1e-3, .richardson = true};
};

namespace detail {

inline vae::Batch random_batch(Rng& rng, int batch, int bins) {
    vae::Batch b;
    // Log-normal powers spanning a few decades, like real spectra.
    b.power.resize(batch, bins);
    for (Eigen::Index i = 0; i < b.power.size(); ++i) b.power.data()[i] = std::exp(1.5 * standard_normal(rng));
    b.labels.resize(batch);
    for (int i = 0; i < batch; ++i) b.labels[i] = (i % 2 == 0) ? 1.0 : 0.0;
    return b;
}

/// Random weights plus non-zero biases and a fitted feature normalization.
inline vae::ModelBundle random_bundle(vae::Variant v, vae::Ablation a, Rng& rng, const vae::BundleOptions& dims) {
    vae::ModelBundle b = vae::make_bundle(v, a, rng, dims);
    for (auto* p : {&b.encoder, &b.decoder, &b.classifier, &b.discriminator}) {
        for (auto& bias : p->biases)
            for (Eigen::Index i = 0; i < bias.size(); ++i) bias[i] = 0.1 * standard_normal(rng);
        p->touch();
    }
    const vae::Batch fit = random_batch(rng, 32, dims.bins);
    vae::fit_feature_normalization(b, fit.power);
    return b;
}

template <class LossFn>
Case run_case(std::string name, LossFn&& loss, std::vector<nn::ParamRef> refs, double tol, Rng& rng,
              const nn::GradCheckOptions& fd) {
    const auto t0 = std::chrono::steady_clock::now();
    Case c;
    c.name = std::move(name);
    c.report = nn::grad_check(loss, refs, tol, rng, fd);
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return c;
}

}  // namespace detail

/// Elementary losses through the network that produces their input, the
/// composite objective for every variant/ablation, and the discriminator loss.
inline std::vector<Case> run_suite(const SuiteOptions& opt = {}) {
    using vae::Ablation;
    using vae::Variant;
    Rng rng = make_rng(opt.seed, 0x6772616463686b);
    std::vector<Case> cases;
    const int F = opt.dims.bins, L = opt.dims.latent_dim;
    const vae::Batch batch = detail::random_batch(rng, opt.batch, F);
    const Matrix noise = standard_normal_matrix(rng, opt.batch, L);

    vae::ModelBundle acvae = detail::random_bundle(Variant::acvae, Ablation::none, rng, opt.dims);

    // Reconstruction loss through the decoder.
    {
        const Matrix z = standard_normal_matrix(rng, opt.batch, L);
        const Vector cond = Vector::Constant(opt.batch, 0.3);
        nn::ForwardCache cache;
        const Matrix v = vae::decode(acvae, z, cond, &cache);
        const auto g = nn::backward(acvae.decoder_spec, acvae.decoder, cache, vae::loss_recon_grad(batch.power, v));
        std::vector<nn::ParamRef> refs;
        nn::append_refs(refs, acvae.decoder, g.params, "decoder");
        cases.push_back(detail::run_case(
            "recon/decoder", [&] { return vae::loss_recon(batch.power, vae::decode(acvae, z, cond)); }, refs,
            opt.tolerance, rng, opt.fd));
    }
    // KL through the encoder.
    {
        nn::ForwardCache cache;
        const auto post = vae::encode(acvae, batch.power, std::nullopt, &cache);
        Matrix d(opt.batch, 2 * L);
        d.leftCols(L) = post.mu / opt.batch;
        d.rightCols(L) = (0.5 * (post.log_var.array().exp() - 1.0) / opt.batch).matrix();
        const auto g = nn::backward(acvae.encoder_spec, acvae.encoder, cache, d);
        std::vector<nn::ParamRef> refs;
        nn::append_refs(refs, acvae.encoder, g.params, "encoder_z");
        cases.push_back(detail::run_case(
            "kl/encoder_z", [&] { return vae::loss_kl(vae::encode(acvae, batch.power)); }, refs, opt.tolerance, rng, opt.fd));
    }
    // BCE through the classifier-encoder.
    {
        nn::ForwardCache cache;
        const Vector q = vae::classify(acvae, batch.power, &cache);
        const auto g = nn::backward(acvae.classifier_spec, acvae.classifier, cache, vae::loss_bce_grad(q, batch.labels));
        std::vector<nn::ParamRef> refs;
        nn::append_refs(refs, acvae.classifier, g.params, "classifier_y");
        cases.push_back(detail::run_case(
            "bce/classifier_y", [&] { return vae::loss_bce(vae::classify(acvae, batch.power), batch.labels); }, refs,
            opt.tolerance, rng, opt.fd));
    }
    // Negative entropy through the discriminator.
    {
        const Matrix z = standard_normal_matrix(rng, opt.batch, L);
        nn::ForwardCache cache;
        const Vector d = vae::discriminate(acvae, z, &cache);
        const auto g = nn::backward(acvae.discriminator_spec, acvae.discriminator, cache, vae::loss_neg_entropy_grad(d));
        std::vector<nn::ParamRef> refs;
        nn::append_refs(refs, acvae.discriminator, g.params, "discriminator");
        cases.push_back(detail::run_case(
            "neg_entropy/discriminator", [&] { return vae::loss_neg_entropy(vae::discriminate(acvae, z)); }, refs,
            opt.tolerance, rng, opt.fd));
    }
    // Composite objective for every variant and ablation.
    const std::pair<Variant, Ablation> variants[] = {{Variant::vae, Ablation::none},
                                                     {Variant::cvae, Ablation::none},
                                                     {Variant::acvae, Ablation::none},
                                                     {Variant::acvae, Ablation::hard_label_beta0},
                                                     {Variant::acvae, Ablation::hard_label_beta0_negdis}};
    for (auto [v, a] : variants) {
        vae::ModelBundle b = v == Variant::acvae && a == Ablation::none ? acvae : detail::random_bundle(v, a, rng, opt.dims);
        const auto res = vae::model_loss(b, batch, noise);
        std::vector<nn::ParamRef> refs;
        nn::append_refs(refs, b.encoder, res.grads.encoder, "encoder_z");
        nn::append_refs(refs, b.decoder, res.grads.decoder, "decoder");
        if (b.uses_classifier()) nn::append_refs(refs, b.classifier, res.grads.classifier, "classifier_y");
        std::string name = "model_loss/" + vae::to_string(v);
        if (a != Ablation::none) name += "/" + vae::to_string(a);
        cases.push_back(detail::run_case(
            name, [&] { return vae::model_loss(b, batch, noise, false).loss.total; }, refs, opt.tolerance, rng, opt.fd));
    }
    // Discriminator objective.
    {
        const auto res = vae::discriminator_loss(acvae, batch, noise);
        std::vector<nn::ParamRef> refs;
        nn::append_refs(refs, acvae.discriminator, res.grads.discriminator, "discriminator");
        cases.push_back(detail::run_case(
            "discriminator_loss", [&] { return vae::discriminator_loss(acvae, batch, noise, false).value; }, refs,
            opt.tolerance, rng, opt.fd));
    }
    return cases;
}

}  // namespace advae::gradcheck
