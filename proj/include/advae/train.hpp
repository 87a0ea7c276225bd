#pragma once

// Frame-level training of the three model variants, with the per-batch
// alternation between the model networks and the latent discriminator.

#include <chrono>
#include <fstream>
#include <functional>
#include <limits>

#include "advae/archive.hpp"
#include "advae/corpus.hpp"
#include "advae/vae.hpp"

namespace advae::train {

/// Validation metric for early stopping. elbo: recon + kl. adv_enc: negative
/// entropy of the discriminator for acvae, recon + kl for the others.
enum class Monitor { adv_enc, elbo };

inline std::string to_string(Monitor m) { return m == Monitor::adv_enc ? "adv_enc" : "elbo"; }

inline Monitor monitor_from_string(const std::string& s) {
    if (s == "adv_enc") return Monitor::adv_enc;
    if (s == "elbo") return Monitor::elbo;
    fail("unknown early-stopping monitor '", s, "' (expected adv_enc or elbo)");
}

struct TrainConfig {
    int batch_size = 128;
    int patience_epochs = 10;
    int max_epochs = 500;
    double lr = 1e-3;
    double alpha = 10.0;
    double beta = 10.0;
    std::uint64_t seed = 0;
    vae::Variant variant = vae::Variant::acvae;
    vae::Ablation ablation = vae::Ablation::none;
    int latent_dim = 16;
    int hidden_width = 128;
    Monitor monitor = Monitor::elbo;

    void validate() const {
        if (batch_size < 1) fail("train: batch_size must be >= 1");
        if (patience_epochs < 1) fail("train: patience_epochs must be >= 1");
        if (max_epochs < 1) fail("train: max_epochs must be >= 1");
        if (!(lr > 0.0)) fail("train: lr must be > 0");
        if (alpha < 0.0 || beta < 0.0) fail("train: alpha and beta must be >= 0");
        if (latent_dim < 1 || hidden_width < 1) fail("train: latent_dim and hidden_width must be >= 1");
        if (variant != vae::Variant::acvae && ablation != vae::Ablation::none)
            fail("train: ablation '", vae::to_string(ablation), "' requires variant acvae");
    }
};

// ---------------------------------------------------------------------------
// Data

/// Power frames pooled over utterances, with one label per frame.
struct FrameDataset {
    Matrix power;  // N x F
    Vector labels; // N
    std::vector<Eigen::Index> offsets;  // first frame of each utterance, plus N at the end

    Eigen::Index size() const { return power.rows(); }
};

inline FrameDataset make_frame_dataset(const std::vector<dsp::Utterance>& utterances,
                                       const std::vector<dsp::LabelSeq>& labels, const dsp::StftConfig& cfg = {}) {
    if (utterances.size() != labels.size()) fail("make_frame_dataset: ", utterances.size(), " utterances but ", labels.size(), " label sequences");
    std::vector<Matrix> parts;
    Eigen::Index total = 0;
    FrameDataset ds;
    for (std::size_t u = 0; u < utterances.size(); ++u) {
        parts.push_back(dsp::power(dsp::stft(utterances[u], cfg)));
        if (static_cast<Eigen::Index>(labels[u].size()) != parts.back().rows())
            fail("make_frame_dataset: utterance '", utterances[u].id, "' has ", parts.back().rows(), " frames but ",
                 labels[u].size(), " labels");
        ds.offsets.push_back(total);
        total += parts.back().rows();
    }
    ds.offsets.push_back(total);
    ds.power.resize(total, cfg.bins());
    ds.labels.resize(total);
    for (std::size_t u = 0; u < parts.size(); ++u) {
        ds.power.middleRows(ds.offsets[u], parts[u].rows()) = parts[u];
        for (Eigen::Index n = 0; n < parts[u].rows(); ++n) ds.labels[ds.offsets[u] + n] = labels[u].values[n];
    }
    return ds;
}

/// Clean-speech frames of a corpus split with their ground-truth labels.
inline FrameDataset make_frame_dataset(const std::vector<corpus::CorpusItem>& items, const dsp::StftConfig& cfg = {}) {
    std::vector<dsp::Utterance> utts;
    std::vector<dsp::LabelSeq> labels;
    for (const auto& it : items) {
        utts.push_back(it.clean);
        labels.push_back(it.labels);
    }
    return make_frame_dataset(utts, labels, cfg);
}

/// Frame visiting order for one epoch (Fisher-Yates on a per-epoch stream).
inline std::vector<Eigen::Index> epoch_order(Eigen::Index n, std::uint64_t seed, int epoch) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
    Rng rng = make_rng(seed, 0x73687566, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    return order;
}

inline vae::Batch gather(const FrameDataset& ds, std::span<const Eigen::Index> rows) {
    vae::Batch b;
    b.power.resize(static_cast<Eigen::Index>(rows.size()), ds.power.cols());
    b.labels.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        b.power.row(static_cast<Eigen::Index>(i)) = ds.power.row(rows[i]);
        b.labels[static_cast<Eigen::Index>(i)] = ds.labels[rows[i]];
    }
    return b;
}

// ---------------------------------------------------------------------------
// Logging and early stopping

struct EpochRecord {
    int epoch = 0;
    std::string split;  // "train" or "val"
    vae::LossBreakdown loss;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> records;
    int best_epoch = -1;
    int stopped_epoch = -1;  // last epoch run
    bool early_stopped = false;

    static constexpr const char* kCsvHeader = "epoch,split,recon,kl,adv_ent,clf_bce,dis_bce,total";

    /// Wall time is left out so that identical runs give identical files.
    std::string csv() const {
        std::string s = std::string(kCsvHeader) + "\n";
        for (const auto& r : records) {
            s += std::to_string(r.epoch) + "," + r.split;
            for (double v : {r.loss.recon, r.loss.kl, r.loss.adv_ent, r.loss.clf_bce, r.loss.dis_bce, r.loss.total})
                s += "," + nn::format_double(v);
            s += "\n";
        }
        return s;
    }
    void write_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) fail("cannot write '", path.string(), "'");
        os << csv();
    }
};

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience = 10) : patience_(patience) {
        if (patience < 1) fail("early stopping: patience must be >= 1");
    }
    /// Returns true if the metric is a new best.
    bool update(int epoch, double metric) {
        if (!std::isfinite(metric)) fail("early stopping: non-finite validation metric at epoch ", epoch);
        if (metric < best_) {
            best_ = metric;
            best_epoch_ = epoch;
            bad_epochs_ = 0;
            return true;
        }
        ++bad_epochs_;
        return false;
    }
    bool should_stop() const { return bad_epochs_ >= patience_; }
    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }
    int bad_epochs() const { return bad_epochs_; }
    int patience() const { return patience_; }
    void restore(double best, int best_epoch, int bad_epochs) {
        best_ = best;
        best_epoch_ = best_epoch;
        bad_epochs_ = bad_epochs;
    }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = -1;
    int bad_epochs_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct SplitEval {
    vae::LossBreakdown loss;
    double neg_entropy = 0.0;  // discriminator uncertainty on this split (acvae only)
};

/// Frame-weighted loss over a whole dataset with a fixed noise stream, so that
/// successive epochs are compared on the same draws.
inline SplitEval evaluate_split(const vae::ModelBundle& b, const FrameDataset& ds, std::uint64_t seed, Eigen::Index chunk = 1024) {
    SplitEval out;
    const Eigen::Index n = ds.size();
    if (n == 0) fail("evaluate_split: empty dataset");
    std::vector<Eigen::Index> rows;
    for (Eigen::Index start = 0, c = 0; start < n; start += chunk, ++c) {
        const Eigen::Index len = std::min(chunk, n - start);
        rows.resize(static_cast<std::size_t>(len));
        for (Eigen::Index i = 0; i < len; ++i) rows[i] = start + i;
        const vae::Batch batch = gather(ds, rows);
        Rng rng = make_rng(seed, 0x76616c, static_cast<std::uint64_t>(c));
        const Matrix noise = standard_normal_matrix(rng, len, b.latent_dim);
        const auto r = vae::model_loss(b, batch, noise, false).loss;
        const double w = static_cast<double>(len) / static_cast<double>(n);
        out.loss.recon += w * r.recon;
        out.loss.kl += w * r.kl;
        out.loss.adv_ent += w * r.adv_ent;
        out.loss.clf_bce += w * r.clf_bce;
        out.loss.dis_bce += w * r.dis_bce;
        out.loss.total += w * r.total;
        if (b.has_adversary()) {
            const Matrix z = vae::reparameterize(vae::encode(b, batch.power), noise);
            out.neg_entropy += w * vae::loss_neg_entropy(vae::detail::clamp_prob(vae::discriminate(b, z)));
        }
    }
    return out;
}

inline double monitor_value(const vae::ModelBundle& b, const SplitEval& e, Monitor m) {
    return m == Monitor::adv_enc && b.has_adversary() ? e.neg_entropy : e.loss.recon + e.loss.kl;
}

// ---------------------------------------------------------------------------
// Training state

struct LossSums {
    vae::LossBreakdown sum;
    double frames = 0.0;

    void add(const vae::LossBreakdown& l, double n) {
        sum.recon += n * l.recon;
        sum.kl += n * l.kl;
        sum.adv_ent += n * l.adv_ent;
        sum.clf_bce += n * l.clf_bce;
        sum.dis_bce += n * l.dis_bce;
        sum.total += n * l.total;
        frames += n;
    }
    vae::LossBreakdown mean() const {
        vae::LossBreakdown m = sum;
        for (double* v : {&m.recon, &m.kl, &m.adv_ent, &m.clf_bce, &m.dis_bce, &m.total}) *v /= frames;
        return m;
    }
};

struct TrainState {
    vae::ModelBundle bundle;
    vae::ModelBundle best;
    nn::AdamState adam_encoder, adam_decoder, adam_classifier;  // step 1
    nn::AdamState adam_discriminator;                          // step 2
    int epoch = 0;           // epoch in progress
    Eigen::Index cursor = 0; // next batch index within the epoch
    LossSums epoch_sums;
    EarlyStopping stopper;
    TrainLog log;
    bool finished = false;
};

inline vae::BundleOptions bundle_options(const TrainConfig& cfg, int bins) {
    return {bins, cfg.latent_dim, cfg.hidden_width, cfg.alpha, cfg.beta};
}

inline TrainState init_state(const TrainConfig& cfg, const FrameDataset& train) {
    cfg.validate();
    if (train.size() == 0) fail("train: empty training set");
    TrainState s;
    Rng rng = make_rng(cfg.seed, 0x696e6974);
    s.bundle = vae::make_bundle(cfg.variant, cfg.ablation, rng, bundle_options(cfg, static_cast<int>(train.power.cols())));
    vae::fit_feature_normalization(s.bundle, train.power);
    const nn::AdamConfig adam{cfg.lr};
    s.adam_encoder = nn::AdamState::for_params(s.bundle.encoder, adam);
    s.adam_decoder = nn::AdamState::for_params(s.bundle.decoder, adam);
    s.adam_classifier = nn::AdamState::for_params(s.bundle.classifier, adam);
    s.adam_discriminator = nn::AdamState::for_params(s.bundle.discriminator, adam);
    s.stopper = EarlyStopping(cfg.patience_epochs);
    s.best = s.bundle;
    return s;
}

inline Eigen::Index batches_per_epoch(const TrainConfig& cfg, const FrameDataset& train) {
    return (train.size() + cfg.batch_size - 1) / cfg.batch_size;
}

/// Runs batch `s.cursor` of epoch `s.epoch`: one Adam step on the encoder(s)
/// and decoder, then (adversarial model) one on the discriminator.
inline void train_batch(TrainState& s, const TrainConfig& cfg, const FrameDataset& train) {
    const auto order = epoch_order(train.size(), cfg.seed, s.epoch);
    const Eigen::Index start = s.cursor * cfg.batch_size;
    const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, train.size() - start);
    if (len <= 0) fail("train_batch: cursor past the end of the epoch");
    const vae::Batch batch = gather(train, std::span<const Eigen::Index>(order).subspan(start, len));
    Rng rng = make_rng(cfg.seed, 0x6e6f6973, static_cast<std::uint64_t>(s.epoch), static_cast<std::uint64_t>(s.cursor));
    const Matrix noise = standard_normal_matrix(rng, len, s.bundle.latent_dim);
    vae::ModelBundle& b = s.bundle;
    try {
        const auto step1 = vae::model_loss(b, batch, noise);
        nn::adam_step(b.encoder, step1.grads.encoder, s.adam_encoder, "encoder_z");
        nn::adam_step(b.decoder, step1.grads.decoder, s.adam_decoder, "decoder");
        if (b.uses_classifier()) nn::adam_step(b.classifier, step1.grads.classifier, s.adam_classifier, "classifier_y");
        if (b.has_adversary()) {
            const auto step2 = vae::discriminator_loss(b, batch, noise);
            nn::adam_step(b.discriminator, step2.grads.discriminator, s.adam_discriminator, "discriminator");
        }
        s.epoch_sums.add(step1.loss, static_cast<double>(len));
    } catch (const Error& e) {
        fail("training aborted at epoch ", s.epoch, " batch ", s.cursor, ": ", e.what());
    }
    ++s.cursor;
}

/// Closes the epoch: logs train/validation losses, updates early stopping and
/// the best checkpoint.
inline void finish_epoch(TrainState& s, const TrainConfig& cfg, const FrameDataset& val, double seconds = 0.0) {
    s.log.records.push_back({s.epoch, "train", s.epoch_sums.mean(), seconds});
    const SplitEval ev = evaluate_split(s.bundle, val, cfg.seed);
    s.log.records.push_back({s.epoch, "val", ev.loss, 0.0});
    if (s.stopper.update(s.epoch, monitor_value(s.bundle, ev, cfg.monitor))) {
        s.best = s.bundle;
        s.log.best_epoch = s.epoch;
    }
    s.log.stopped_epoch = s.epoch;
    ++s.epoch;
    s.cursor = 0;
    s.epoch_sums = {};
    if (s.stopper.should_stop()) {
        s.log.early_stopped = true;
        s.finished = true;
    } else if (s.epoch >= cfg.max_epochs) {
        s.finished = true;
    }
}

using EpochCallback = std::function<void(const TrainState&)>;

/// Trains until early stopping or max_epochs, or until `max_batches` batches
/// have run (for checkpointing mid-epoch). Restores the best parameters on
/// completion.
inline void run(TrainState& s, const TrainConfig& cfg, const FrameDataset& train, const FrameDataset& val,
                const EpochCallback& on_epoch = {}, std::int64_t max_batches = -1) {
    const Eigen::Index per_epoch = batches_per_epoch(cfg, train);
    std::int64_t done = 0;
    auto t0 = std::chrono::steady_clock::now();
    while (!s.finished) {
        if (max_batches >= 0 && done >= max_batches) return;
        train_batch(s, cfg, train);
        ++done;
        if (s.cursor == per_epoch) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            finish_epoch(s, cfg, val, secs);
            if (on_epoch) on_epoch(s);
            t0 = std::chrono::steady_clock::now();
        }
    }
    s.bundle = s.best;
}

struct TrainResult {
    vae::ModelBundle bundle;
    TrainLog log;
};

inline TrainResult train(const TrainConfig& cfg, const FrameDataset& train_set, const FrameDataset& val,
                         const EpochCallback& on_epoch = {}) {
    TrainState s = init_state(cfg, train_set);
    run(s, cfg, train_set, val, on_epoch);
    return {std::move(s.bundle), std::move(s.log)};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline void embed(nn::Archive& into, const nn::Archive& part, const std::string& prefix) {
    for (const auto& [k, v] : part.meta) into.meta[prefix + k] = v;
    for (const auto& n : part.networks) into.networks.push_back({prefix + n.name, n.spec, n.params});
}

inline nn::Archive extract(const nn::Archive& from, const std::string& prefix) {
    nn::Archive a;
    for (const auto& [k, v] : from.meta)
        if (k.starts_with(prefix)) a.meta[k.substr(prefix.size())] = v;
    for (const auto& n : from.networks)
        if (n.name.starts_with(prefix)) a.networks.push_back({n.name.substr(prefix.size()), n.spec, n.params});
    return a;
}

inline void put_adam(nn::Archive& a, const std::string& name, const nn::MlpSpec& spec, const nn::AdamState& st) {
    a.meta["adam." + name + ".step"] = std::to_string(st.step);
    if (st.m_w.empty()) return;
    nn::MlpParams m{st.m_w, st.m_b}, v{st.v_w, st.v_b};
    a.networks.push_back({"adam." + name + ".m", spec, m});
    a.networks.push_back({"adam." + name + ".v", spec, v});
}

inline void get_adam(const nn::Archive& a, const std::string& name, nn::AdamState& st) {
    st.step = std::stoll(a.meta_at("adam." + name + ".step"));
    if (st.m_w.empty()) return;
    const auto& m = a.at("adam." + name + ".m").params;
    const auto& v = a.at("adam." + name + ".v").params;
    if (m.weights.size() != st.m_w.size()) fail("checkpoint: optimizer state layout mismatch for ", name);
    st.m_w = m.weights;
    st.m_b = m.biases;
    st.v_w = v.weights;
    st.v_b = v.biases;
}

inline std::string breakdown_string(const vae::LossBreakdown& l) {
    std::string s;
    for (double v : {l.recon, l.kl, l.adv_ent, l.clf_bce, l.dis_bce, l.total}) s += nn::format_double(v) + " ";
    return s;
}

inline vae::LossBreakdown parse_breakdown(std::istream& is) {
    vae::LossBreakdown l;
    is >> l.recon >> l.kl >> l.adv_ent >> l.clf_bce >> l.dis_bce >> l.total;
    if (!is) fail("checkpoint: malformed loss record");
    return l;
}

inline double parse_double(const std::string& s) {
    // Round trip of %.17g, including inf.
    if (s == "inf") return std::numeric_limits<double>::infinity();
    return std::stod(s);
}

}  // namespace detail

/// Everything needed to continue a run bit-exactly: parameters, optimizer
/// moments, best-so-far parameters, stopping state, the log, and the
/// position in the epoch. Noise and shuffles are derived from
/// (seed, epoch, batch), so the position is the whole RNG state.
inline nn::Archive checkpoint_archive(const TrainState& s, const TrainConfig& cfg) {
    nn::Archive a;
    a.meta["format"] = "advae-checkpoint";
    a.meta["config.variant"] = vae::to_string(cfg.variant);
    a.meta["config.ablation"] = vae::to_string(cfg.ablation);
    a.meta["config.seed"] = std::to_string(cfg.seed);
    a.meta["config.batch_size"] = std::to_string(cfg.batch_size);
    a.meta["config.lr"] = nn::format_double(cfg.lr);
    a.meta["state.epoch"] = std::to_string(s.epoch);
    a.meta["state.cursor"] = std::to_string(s.cursor);
    a.meta["state.finished"] = s.finished ? "1" : "0";
    a.meta["state.epoch_sums"] = detail::breakdown_string(s.epoch_sums.sum) + nn::format_double(s.epoch_sums.frames);
    a.meta["state.stopper"] = nn::format_double(s.stopper.best()) + " " + std::to_string(s.stopper.best_epoch()) + " " +
                              std::to_string(s.stopper.bad_epochs());
    std::string log;
    for (const auto& r : s.log.records)
        log += std::to_string(r.epoch) + " " + r.split + " " + detail::breakdown_string(r.loss) + nn::format_double(r.seconds) + "\n";
    a.meta["state.log"] = log;
    a.meta["state.log_flags"] = std::to_string(s.log.best_epoch) + " " + std::to_string(s.log.stopped_epoch) + " " +
                                (s.log.early_stopped ? "1" : "0");
    detail::embed(a, vae::to_archive(s.bundle), "model.");
    detail::embed(a, vae::to_archive(s.best), "best.");
    const auto& b = s.bundle;
    detail::put_adam(a, "encoder_z", b.encoder_spec, s.adam_encoder);
    detail::put_adam(a, "decoder", b.decoder_spec, s.adam_decoder);
    detail::put_adam(a, "classifier_y", b.classifier_spec, s.adam_classifier);
    detail::put_adam(a, "discriminator", b.discriminator_spec, s.adam_discriminator);
    return a;
}

inline void save_checkpoint(const TrainState& s, const TrainConfig& cfg, const std::filesystem::path& path) {
    nn::save_archive(checkpoint_archive(s, cfg), path);
}

inline TrainState restore_checkpoint(const nn::Archive& a, const TrainConfig& cfg) {
    auto it = a.meta.find("format");
    if (it == a.meta.end() || it->second != "advae-checkpoint") fail("checkpoint: not a training checkpoint");
    if (a.meta_at("config.variant") != vae::to_string(cfg.variant) || a.meta_at("config.ablation") != vae::to_string(cfg.ablation))
        fail("checkpoint: saved for variant ", a.meta_at("config.variant"), "/", a.meta_at("config.ablation"), ", requested ",
             vae::to_string(cfg.variant), "/", vae::to_string(cfg.ablation));
    if (a.meta_at("config.seed") != std::to_string(cfg.seed) || a.meta_at("config.batch_size") != std::to_string(cfg.batch_size))
        fail("checkpoint: seed or batch size differs from the configuration");
    TrainState s;
    s.bundle = vae::from_archive(detail::extract(a, "model."));
    s.best = vae::from_archive(detail::extract(a, "best."));
    const nn::AdamConfig adam{cfg.lr};
    s.adam_encoder = nn::AdamState::for_params(s.bundle.encoder, adam);
    s.adam_decoder = nn::AdamState::for_params(s.bundle.decoder, adam);
    s.adam_classifier = nn::AdamState::for_params(s.bundle.classifier, adam);
    s.adam_discriminator = nn::AdamState::for_params(s.bundle.discriminator, adam);
    detail::get_adam(a, "encoder_z", s.adam_encoder);
    detail::get_adam(a, "decoder", s.adam_decoder);
    detail::get_adam(a, "classifier_y", s.adam_classifier);
    detail::get_adam(a, "discriminator", s.adam_discriminator);
    s.epoch = std::stoi(a.meta_at("state.epoch"));
    s.cursor = std::stoll(a.meta_at("state.cursor"));
    s.finished = a.meta_at("state.finished") == "1";
    {
        std::istringstream is(a.meta_at("state.epoch_sums"));
        s.epoch_sums.sum = detail::parse_breakdown(is);
        is >> s.epoch_sums.frames;
    }
    {
        std::istringstream is(a.meta_at("state.stopper"));
        std::string best;
        int best_epoch = -1, bad = 0;
        is >> best >> best_epoch >> bad;
        s.stopper = EarlyStopping(cfg.patience_epochs);
        s.stopper.restore(detail::parse_double(best), best_epoch, bad);
    }
    {
        std::istringstream is(a.meta_at("state.log"));
        EpochRecord r;
        while (is >> r.epoch >> r.split) {
            r.loss = detail::parse_breakdown(is);
            is >> r.seconds;
            s.log.records.push_back(r);
        }
        std::istringstream fl(a.meta_at("state.log_flags"));
        int early = 0;
        fl >> s.log.best_epoch >> s.log.stopped_epoch >> early;
        s.log.early_stopped = early != 0;
    }
    return s;
}

inline TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg) {
    return restore_checkpoint(nn::load_archive(path), cfg);
}

}  // namespace advae::train
