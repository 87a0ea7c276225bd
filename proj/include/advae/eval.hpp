#pragma once

// Metrics: SI-SDR, F1, a linear probe for label information in the latents,
// and the enhancement report over the test grid.

#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "advae/enhance.hpp"
#include "advae/train.hpp"

namespace advae::eval {

inline constexpr double kSiSdrClamp = 60.0;

/// Scale-invariant SDR in dB, clamped to [-60, 60]; an exact match maps to 60.
inline double si_sdr(const std::vector<double>& ref, const std::vector<double>& est) {
    if (ref.size() != est.size()) fail("si_sdr: length mismatch (", ref.size(), " vs ", est.size(), ")");
    double rr = 0.0, re = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        rr += ref[i] * ref[i];
        re += ref[i] * est[i];
    }
    if (rr == 0.0) fail("si_sdr: zero reference");
    const double a = re / rr;
    double target = 0.0, noise = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double t = a * ref[i];
        target += t * t;
        noise += (t - est[i]) * (t - est[i]);
    }
    if (target == 0.0) return -kSiSdrClamp;
    if (noise == 0.0) return kSiSdrClamp;
    return std::clamp(10.0 * std::log10(target / noise), -kSiSdrClamp, kSiSdrClamp);
}

inline double si_sdr(const dsp::Utterance& ref, const dsp::Utterance& est) { return si_sdr(ref.samples, est.samples); }

struct Confusion {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const std::vector<double>& labels, const std::vector<double>& preds) {
    if (labels.size() != preds.size()) fail("confusion: length mismatch (", labels.size(), " vs ", preds.size(), ")");
    Confusion c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool y = labels[i] >= 0.5, p = preds[i] >= 0.5;
        if (y && p) ++c.tp;
        else if (!y && p) ++c.fp;
        else if (y && !p) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline double f1(const Confusion& c) {
    if (c.tp == 0) return c.fp == 0 && c.fn == 0 ? 1.0 : 0.0;
    const double p = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double r = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    return 2.0 * p * r / (p + r);
}

inline double f1(const dsp::LabelSeq& labels, const dsp::LabelSeq& preds) { return f1(confusion(labels.values, preds.values)); }

inline double balanced_accuracy(const Confusion& c) {
    const double tpr = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    const double tnr = c.tn + c.fp ? static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp) : 0.0;
    return 0.5 * (tpr + tnr);
}

// ---------------------------------------------------------------------------
// Disentanglement probe

struct ProbeOptions {
    int epochs = 200;
    double lr = 0.5;
    std::uint64_t seed = 0;
};

struct ProbeReport {
    double balanced_accuracy = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
    double chance = 0.5;
};

/// Latents sampled from the frozen encoder for each frame.
inline Matrix sample_latents(const vae::ModelBundle& b, const train::FrameDataset& ds, std::uint64_t seed) {
    const auto post = b.variant == vae::Variant::cvae ? vae::encode(b, ds.power, ds.labels) : vae::encode(b, ds.power);
    Rng rng = make_rng(seed, 0x70726f6265);
    return vae::reparameterize(post, standard_normal_matrix(rng, ds.size(), b.latent_dim));
}

/// Class-balanced logistic regression by full-batch gradient descent on
/// standardized features. Returns weights with the bias last.
inline Vector fit_logistic(const Matrix& x, const Vector& y, const ProbeOptions& opt, Vector& mean, Vector& scale) {
    const Eigen::Index n = x.rows(), d = x.cols();
    const double pos = (y.array() >= 0.5).cast<double>().sum();
    if (pos == 0.0 || pos == static_cast<double>(n)) fail("probe: training labels contain a single class");
    mean = x.colwise().mean().transpose();
    scale = ((x.rowwise() - mean.transpose()).array().square().colwise().mean().sqrt()).transpose().cwiseMax(1e-12);
    const Matrix xs = (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    const Vector yb = (y.array() >= 0.5).cast<double>();
    const Vector sw = (yb.array() > 0.5).select(Vector::Constant(n, 0.5 / pos), Vector::Constant(n, 0.5 / (n - pos)));
    Vector w = Vector::Zero(d + 1);
    for (int e = 0; e < opt.epochs; ++e) {
        const Vector logits = (xs * w.head(d)).array() + w[d];
        const Vector p = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
        const Vector r = (sw.array() * (p - yb).array()).matrix();
        w.head(d) -= opt.lr * (xs.transpose() * r);
        w[d] -= opt.lr * r.sum();
    }
    return w;
}

inline ProbeReport probe_disentanglement(const vae::ModelBundle& b, const train::FrameDataset& train_set,
                                         const train::FrameDataset& test_set, const ProbeOptions& opt = {}) {
    const Matrix z_train = sample_latents(b, train_set, opt.seed);
    const Matrix z_test = sample_latents(b, test_set, opt.seed + 1);
    Vector mean, scale;
    const Vector w = fit_logistic(z_train, train_set.labels, opt, mean, scale);
    const Eigen::Index d = z_test.cols();
    const Matrix xs = (z_test.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    const Vector logits = (xs * w.head(d)).array() + w[d];
    std::vector<double> preds(static_cast<std::size_t>(logits.size())), labels(preds.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        preds[i] = logits[i] > 0.0 ? 1.0 : 0.0;
        labels[i] = test_set.labels[i];
    }
    const Confusion c = confusion(labels, preds);
    ProbeReport r;
    r.balanced_accuracy = balanced_accuracy(c);
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(labels.size());
    r.f1 = f1(c);
    return r;
}

// ---------------------------------------------------------------------------
// Enhancement report

enum class LabelSource { oracle, energy };

inline std::string to_string(LabelSource s) { return s == LabelSource::oracle ? "oracle" : "energy"; }

inline LabelSource label_source_from_string(const std::string& s) {
    if (s == "oracle") return LabelSource::oracle;
    if (s == "energy") return LabelSource::energy;
    fail("unknown label source '", s, "' (expected oracle or energy)");
}

struct NamedModel {
    std::string name;
    vae::ModelBundle bundle;
};

struct UtteranceScore {
    std::string model;
    std::string id;
    corpus::NoiseKind noise = corpus::NoiseKind::white;
    double snr_db = 0.0;
    double snr_measured_db = 0.0;  // active-segment SNR recomputed from clean and noise
    double si_sdr = 0.0;
    double label_f1 = 1.0;  // test-time labels against ground truth
};

struct ConditionRow {
    std::string model, noise, stationarity, snr;
    std::size_t n = 0;
    double si_sdr_mean = 0.0;
    double si_sdr_ci95 = 0.0;  // 1.96 * sample std / sqrt(n); 0 when n < 2
    double snr_measured_mean = 0.0;
};

/// Mean and normal-approximation 95% half-width.
inline std::pair<double, double> mean_ci95(const std::vector<double>& x) {
    if (x.empty()) fail("mean_ci95: no values");
    const double n = static_cast<double>(x.size());
    double m = 0.0;
    for (double v : x) m += v;
    m /= n;
    if (x.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return {m, 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

inline std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed << v;
    return os.str();
}

struct MetricReport {
    static constexpr const char* kConditionHeader = "model,noise,stationarity,snr_db,n,si_sdr_mean,si_sdr_ci95,snr_measured_mean";
    static constexpr const char* kUtteranceHeader = "model,id,noise,stationarity,snr_db,snr_measured_db,si_sdr,label_f1";

    LabelSource labels = LabelSource::oracle;
    std::vector<UtteranceScore> scores;

    /// Groups per model: each (noise, SNR), each (stationarity, SNR), all
    /// noises per SNR, and everything. Aggregated keys read "all".
    std::vector<ConditionRow> rows() const {
        std::vector<std::string> models;
        for (const auto& s : scores)
            if (std::find(models.begin(), models.end(), s.model) == models.end()) models.push_back(s.model);
        std::vector<ConditionRow> out;
        for (const auto& m : models) {
            std::map<std::tuple<int, std::string, std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
            for (const auto& s : scores) {
                if (s.model != m) continue;
                const std::string kind = corpus::to_string(s.noise);
                const std::string stat = corpus::is_stationary(s.noise) ? "stationary" : "nonstationary";
                const std::string snr = format_number(s.snr_db);
                for (const auto& key : {std::tuple{0, kind, stat, snr}, std::tuple{1, std::string("all"), stat, snr},
                                        std::tuple{2, std::string("all"), std::string("all"), snr},
                                        std::tuple{3, std::string("all"), std::string("all"), std::string("all")}}) {
                    groups[key].first.push_back(s.si_sdr);
                    groups[key].second.push_back(s.snr_measured_db);
                }
            }
            for (const auto& [key, vals] : groups) {
                ConditionRow r;
                r.model = m;
                r.noise = std::get<1>(key);
                r.stationarity = std::get<2>(key);
                r.snr = std::get<3>(key);
                r.n = vals.first.size();
                std::tie(r.si_sdr_mean, r.si_sdr_ci95) = mean_ci95(vals.first);
                r.snr_measured_mean = mean_ci95(vals.second).first;
                out.push_back(r);
            }
        }
        return out;
    }

    std::string condition_csv() const {
        std::string out = std::string(kConditionHeader) + "\n";
        for (const auto& r : rows())
            out += r.model + "," + r.noise + "," + r.stationarity + "," + r.snr + "," + std::to_string(r.n) + "," +
                   format_number(r.si_sdr_mean) + "," + format_number(r.si_sdr_ci95) + "," + format_number(r.snr_measured_mean) + "\n";
        return out;
    }

    std::string utterance_csv() const {
        std::string out = std::string(kUtteranceHeader) + "\n";
        for (const auto& s : scores)
            out += s.model + "," + s.id + "," + corpus::to_string(s.noise) + "," +
                   (corpus::is_stationary(s.noise) ? "stationary" : "nonstationary") + "," + format_number(s.snr_db) + "," +
                   format_number(s.snr_measured_db) + "," + format_number(s.si_sdr) + "," + format_number(s.label_f1) + "\n";
        return out;
    }

    /// Mean SI-SDR of one model, optionally restricted by a predicate on scores.
    template <class Pred>
    double mean_si_sdr(const std::string& model, Pred&& keep) const {
        std::vector<double> v;
        for (const auto& s : scores)
            if (s.model == model && keep(s)) v.push_back(s.si_sdr);
        if (v.empty()) fail("no scores for model '", model, "'");
        return mean_ci95(v).first;
    }
    double mean_si_sdr(const std::string& model) const {
        return mean_si_sdr(model, [](const UtteranceScore&) { return true; });
    }
};

/// Per-utterance MCEM seed derived from the run seed and the item position.
inline std::uint64_t utterance_seed(std::uint64_t seed, std::size_t index) {
    Rng rng = make_rng(seed, 0x7574, index);
    return rng();
}

/// Enhances every test item with every model. The "mixture" model scores the
/// unprocessed mixture.
inline MetricReport evaluate_grid(const std::vector<NamedModel>& models, const std::vector<corpus::CorpusItem>& test,
                                  const enhance::McemConfig& mcem, LabelSource source = LabelSource::oracle,
                                  const std::function<void(const UtteranceScore&)>& on_score = {}) {
    MetricReport rep;
    rep.labels = source;
    auto push = [&](UtteranceScore s) {
        if (on_score) on_score(s);
        rep.scores.push_back(std::move(s));
    };
    std::vector<dsp::LabelSeq> labels;
    std::vector<double> f1s;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& it = test[i];
        const auto& stft = models.empty() ? dsp::StftConfig{} : models.front().bundle.stft;
        if (source == LabelSource::oracle) {
            labels.push_back(it.labels);
            f1s.push_back(1.0);
        } else {
            const auto r = enhance::test_time_labels(it.mixture, stft);
            if (r.degenerate) std::cerr << "warning: " << it.mixture.id << ": single energy cluster, all frames labeled active\n";
            f1s.push_back(f1(it.labels, r.labels));
            labels.push_back(r.labels);
        }
        UtteranceScore s;
        s.model = "mixture";
        s.id = it.mixture.id;
        s.noise = it.noise_kind;
        s.snr_db = it.snr_db;
        s.snr_measured_db = dsp::active_snr_db(it.clean.samples, it.noise.samples, it.labels, stft);
        s.si_sdr = si_sdr(it.clean, it.mixture);
        s.label_f1 = f1s.back();
        push(s);
    }
    for (const auto& m : models) {
        if (m.name == "mixture") fail("evaluate_grid: model name 'mixture' is reserved");
        for (std::size_t i = 0; i < test.size(); ++i) {
            const auto& it = test[i];
            auto cfg = mcem;
            cfg.seed = utterance_seed(mcem.seed, i);
            const auto est = enhance::enhance_utterance(it.mixture, m.bundle, labels[i], cfg);
            UtteranceScore s = rep.scores[i];
            s.model = m.name;
            s.si_sdr = si_sdr(it.clean, est);
            push(s);
        }
    }
    return rep;
}

}  // namespace advae::eval
