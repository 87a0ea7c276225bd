#include <gtest/gtest.h>

#include "advae/eval.hpp"
#include "advae/gradcheck.hpp"

using namespace advae;
using namespace advae::eval;

namespace {

const vae::BundleOptions kSmall{33, 4, 16, 10.0, 10.0};
const dsp::StftConfig kStft{16000, 64, 16};

std::vector<double> randn(Rng& rng, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = standard_normal(rng);
    return v;
}

const corpus::Corpus& small_corpus() {
    static const corpus::Corpus c = [] {
        corpus::CorpusSpec spec;
        spec.n_train = 3;
        spec.n_val = 1;
        spec.n_test = 4;
        spec.utterance_seconds = 1.0;
        spec.seed = 3;
        return corpus::synth_corpus(spec, kStft);
    }();
    return c;
}

vae::ModelBundle random_bundle(vae::Variant v, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return gradcheck::detail::random_bundle(v, vae::Ablation::none, rng, kSmall);
}

enhance::McemConfig quick_mcem() {
    enhance::McemConfig c;
    c.n_em_iters = 3;
    c.mh_steps_per_iter = 3;
    c.burn_in = 2;
    c.samples_kept = 3;
    c.final_wiener_samples = 3;
    c.nmf_rank = 2;
    c.seed = 8;
    return c;
}

}  // namespace

TEST(SiSdr, ExactAndScaledMatchesClampToCeiling) {
    Rng rng = make_rng(1);
    const auto ref = randn(rng, 500);
    EXPECT_EQ(si_sdr(ref, ref), kSiSdrClamp);
    std::vector<double> twice = ref;
    for (auto& x : twice) x *= 2.0;
    EXPECT_EQ(si_sdr(ref, twice), kSiSdrClamp);
    EXPECT_EQ(si_sdr(ref, std::vector<double>(500, 0.0)), -kSiSdrClamp);
}

TEST(SiSdr, OrthogonalEqualNormPerturbationIsZeroDb) {
    Rng rng = make_rng(2);
    const auto ref = randn(rng, 800);
    auto w = randn(rng, 800);
    double rw = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        rw += ref[i] * w[i];
        rr += ref[i] * ref[i];
    }
    double ww = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= rw / rr * ref[i];
        ww += w[i] * w[i];
    }
    std::vector<double> est(ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) est[i] = ref[i] + w[i] * std::sqrt(rr / ww);
    EXPECT_NEAR(si_sdr(ref, est), 0.0, 1e-9);
}

TEST(SiSdr, InvariantToSignedScaling) {
    Rng rng = make_rng(3);
    const auto ref = randn(rng, 300);
    auto est = randn(rng, 300);
    for (std::size_t i = 0; i < est.size(); ++i) est[i] += 1.5 * ref[i];
    const double base = si_sdr(ref, est);
    for (double c : {-3.0, -0.01, 0.5, 7.0}) {
        auto scaled = est;
        for (auto& x : scaled) x *= c;
        EXPECT_NEAR(si_sdr(ref, scaled), base, 1e-9) << c;
    }
}

TEST(SiSdr, Errors) {
    EXPECT_THROW(si_sdr(std::vector<double>(10, 0.0), std::vector<double>(10, 1.0)), Error);
    EXPECT_THROW(si_sdr(std::vector<double>(10, 1.0), std::vector<double>(9, 1.0)), Error);
}

TEST(F1, ConstructedConfusion) {
    // TP = 8, FP = 2, FN = 2: P = R = 0.8.
    std::vector<double> labels, preds;
    for (int i = 0; i < 8; ++i) labels.push_back(1), preds.push_back(1);
    for (int i = 0; i < 2; ++i) labels.push_back(0), preds.push_back(1);
    for (int i = 0; i < 2; ++i) labels.push_back(1), preds.push_back(0);
    for (int i = 0; i < 5; ++i) labels.push_back(0), preds.push_back(0);
    const auto c = confusion(labels, preds);
    EXPECT_EQ(c.tp, 8u);
    EXPECT_EQ(c.fp, 2u);
    EXPECT_EQ(c.fn, 2u);
    EXPECT_EQ(c.tn, 5u);
    EXPECT_NEAR(f1(c), 0.8, 1e-15);
}

TEST(F1, PerfectAndAllNegative) {
    dsp::LabelSeq y{{1, 0, 1, 1, 0}}, none{{0, 0, 0, 0, 0}};
    EXPECT_EQ(f1(y, y), 1.0);
    EXPECT_EQ(f1(y, none), 0.0);
    EXPECT_THROW(f1(y, dsp::LabelSeq{{1, 0}}), Error);
}

TEST(F1, RelabelingSymmetricConfusion) {
    // tp == tn and fp == fn: swapping classes leaves F1 unchanged.
    const std::vector<double> labels{1, 1, 1, 0, 0, 0, 1, 0}, preds{1, 1, 0, 0, 0, 1, 1, 0};
    auto flip = [](std::vector<double> v) {
        for (auto& x : v) x = 1.0 - x;
        return v;
    };
    const auto c = confusion(labels, preds);
    ASSERT_EQ(c.tp, c.tn);
    ASSERT_EQ(c.fp, c.fn);
    EXPECT_DOUBLE_EQ(f1(c), f1(confusion(flip(labels), flip(preds))));
    // An asymmetric confusion does not have this property.
    const std::vector<double> l2{1, 1, 1, 1, 0, 0}, p2{1, 1, 1, 0, 1, 0};
    EXPECT_NE(f1(confusion(l2, p2)), f1(confusion(flip(l2), flip(p2))));
}

TEST(MeanCi, NormalApproximation) {
    const auto [m, h] = mean_ci95({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(m, 2.5);
    EXPECT_NEAR(h, 1.96 * std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
    EXPECT_EQ(mean_ci95({4.0}).second, 0.0);
    EXPECT_THROW(mean_ci95({}), Error);
}

TEST(Probe, ShuffledLabelsGiveChance) {
    const auto& c = small_corpus();
    auto train = train::make_frame_dataset(c.train, kStft);
    auto test = train::make_frame_dataset(c.test, kStft);
    Rng rng = make_rng(4);
    for (auto* ds : {&train, &test}) std::shuffle(ds->labels.data(), ds->labels.data() + ds->labels.size(), rng);
    const auto r = probe_disentanglement(random_bundle(vae::Variant::vae, 5), train, test);
    EXPECT_NEAR(r.balanced_accuracy, 0.5, 0.05);
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
}

TEST(Probe, NeverMutatesBundle) {
    const auto& c = small_corpus();
    const auto train = train::make_frame_dataset(c.train, kStft);
    const auto test = train::make_frame_dataset(c.test, kStft);
    for (auto v : {vae::Variant::vae, vae::Variant::cvae, vae::Variant::acvae}) {
        const auto b = random_bundle(v, 7);
        const std::string before = nn::serialize(vae::to_archive(b));
        probe_disentanglement(b, train, test);
        EXPECT_EQ(nn::serialize(vae::to_archive(b)), before);
    }
}

TEST(Probe, SingleClassRejected) {
    const auto& c = small_corpus();
    auto train = train::make_frame_dataset(c.train, kStft);
    train.labels.setOnes();
    EXPECT_THROW(probe_disentanglement(random_bundle(vae::Variant::vae, 5), train, train), Error);
}

TEST(EvaluateGrid, ReportShapeAndSanityAnchor) {
    const auto& c = small_corpus();
    const std::vector<NamedModel> models{{"vae", random_bundle(vae::Variant::vae, 1)}, {"cvae", random_bundle(vae::Variant::cvae, 2)}};
    const auto rep = evaluate_grid(models, c.test, quick_mcem());
    ASSERT_EQ(rep.scores.size(), 3 * c.test.size());
    for (std::size_t i = 0; i < c.test.size(); ++i) {
        EXPECT_EQ(rep.scores[i].model, "mixture");
        EXPECT_NEAR(rep.scores[i].snr_measured_db, c.test[i].snr_db, 1e-9);
        EXPECT_NEAR(rep.scores[i].si_sdr, si_sdr(c.test[i].clean, c.test[i].mixture), 0.0);
    }
    const std::string csv = rep.condition_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,noise,stationarity,snr_db,n,si_sdr_mean,si_sdr_ci95,snr_measured_mean");
    std::size_t overall = 0;
    for (const auto& r : rep.rows()) {
        EXPECT_GE(r.si_sdr_ci95, 0.0);
        EXPECT_FALSE(r.model.empty() || r.noise.empty() || r.stationarity.empty() || r.snr.empty());
        if (r.noise == "all" && r.stationarity == "all" && r.snr == "all") {
            EXPECT_EQ(r.n, c.test.size());
            ++overall;
        }
    }
    EXPECT_EQ(overall, 3u);
    const std::string utt = rep.utterance_csv();
    EXPECT_EQ(utt.substr(0, utt.find('\n')), "model,id,noise,stationarity,snr_db,snr_measured_db,si_sdr,label_f1");
    EXPECT_EQ(std::count(utt.begin(), utt.end(), '\n'), static_cast<long>(1 + rep.scores.size()));
}

TEST(EvaluateGrid, DeterministicGivenSeeds) {
    const auto& c = small_corpus();
    const std::vector<NamedModel> models{{"acvae", random_bundle(vae::Variant::acvae, 3)}};
    const auto a = evaluate_grid(models, c.test, quick_mcem(), LabelSource::energy);
    const auto b = evaluate_grid(models, c.test, quick_mcem(), LabelSource::energy);
    EXPECT_EQ(a.utterance_csv(), b.utterance_csv());
    EXPECT_EQ(a.condition_csv(), b.condition_csv());
    auto other = quick_mcem();
    other.seed = 9;
    EXPECT_NE(evaluate_grid(models, c.test, other, LabelSource::energy).utterance_csv(), a.utterance_csv());
}

TEST(EvaluateGrid, ReservedName) {
    const std::vector<NamedModel> models{{"mixture", random_bundle(vae::Variant::vae, 1)}};
    EXPECT_THROW(evaluate_grid(models, small_corpus().test, quick_mcem()), Error);
}
