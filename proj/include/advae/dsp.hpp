#pragma once

// Short-time Fourier analysis/synthesis, frame-level VAD ground truth and
// SNR-controlled mixing.

#include <algorithm>
#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "advae/common.hpp"

namespace advae::dsp {

struct StftConfig {
    int sample_rate = 16000;
    int window_len = 1024;  // 64 ms at 16 kHz
    int hop = 256;          // 75 % overlap

    int bins() const { return window_len / 2 + 1; }
    double frame_rate() const { return static_cast<double>(sample_rate) / hop; }

    void validate() const {
        if (sample_rate <= 0) fail("stft: sample_rate must be positive");
        if (window_len < 2 || window_len % 2 != 0) fail("stft: window_len must be even and >= 2");
        if (hop < 1 || window_len % hop != 0) fail("stft: hop must divide window_len");
    }

    bool operator==(const StftConfig&) const = default;
};

struct Utterance {
    std::vector<double> samples;
    int sample_rate = 16000;
    std::string id;

    std::size_t size() const { return samples.size(); }
};

/// N x F one-sided spectrum; rows are frames.
struct ComplexSpectrogram {
    ComplexMatrix frames;
    StftConfig config;

    Eigen::Index num_frames() const { return frames.rows(); }
    Eigen::Index num_bins() const { return frames.cols(); }
};

/// N x F entrywise |.|^2 of a ComplexSpectrogram.
using PowerSpectrogram = Matrix;

enum class LabelKind { hard, soft };

struct LabelSeq {
    std::vector<double> values;
    LabelKind kind = LabelKind::hard;

    std::size_t size() const { return values.size(); }

    Vector as_vector() const {
        return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    }
};

/// Periodic Hann window of length n.
inline Vector hann(int n) {
    Vector w(n);
    for (int t = 0; t < n; ++t)
        w[t] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * t / static_cast<double>(n));
    return w;
}

/// Number of analysis frames. The last frame is zero-padded so every sample
/// belongs to at least one frame.
inline Eigen::Index frame_count(std::size_t num_samples, const StftConfig& cfg) {
    const auto len = static_cast<Eigen::Index>(num_samples);
    if (len < cfg.window_len) fail("signal shorter than one window (", len, " < ", cfg.window_len, " samples)");
    return 1 + (len - cfg.window_len + cfg.hop - 1) / cfg.hop;
}

inline std::size_t padded_length(Eigen::Index frames, const StftConfig& cfg) {
    return static_cast<std::size_t>((frames - 1) * cfg.hop + cfg.window_len);
}

namespace detail {
inline Eigen::FFT<double>& fft_engine() {
    thread_local Eigen::FFT<double> fft = [] {
        Eigen::FFT<double> f;
        f.SetFlag(Eigen::FFT<double>::HalfSpectrum);
        return f;
    }();
    return fft;
}

inline void check_utterance(const Utterance& u, const StftConfig& cfg) {
    if (u.sample_rate != cfg.sample_rate)
        fail("sample rate mismatch: utterance has ", u.sample_rate, " Hz, config expects ", cfg.sample_rate, " Hz");
    for (double s : u.samples)
        if (!std::isfinite(s)) fail("utterance '", u.id, "' contains non-finite samples");
}
}  // namespace detail

inline ComplexSpectrogram stft(const Utterance& u, const StftConfig& cfg = {}) {
    cfg.validate();
    detail::check_utterance(u, cfg);
    const Eigen::Index n_frames = frame_count(u.size(), cfg);
    const int W = cfg.window_len;
    const Vector win = hann(W);

    ComplexSpectrogram out{ComplexMatrix(n_frames, cfg.bins()), cfg};
    std::vector<double> frame(W);
    std::vector<std::complex<double>> spec;
    auto& fft = detail::fft_engine();
    for (Eigen::Index n = 0; n < n_frames; ++n) {
        const std::size_t start = static_cast<std::size_t>(n * cfg.hop);
        for (int t = 0; t < W; ++t) {
            const std::size_t idx = start + static_cast<std::size_t>(t);
            frame[t] = idx < u.size() ? win[t] * u.samples[idx] : 0.0;
        }
        fft.fwd(spec, frame);
        for (int k = 0; k < cfg.bins(); ++k) out.frames(n, k) = spec[k];
    }
    return out;
}

/// Weighted overlap-add with the analysis window as synthesis window,
/// normalized by the summed squared window. Returns padded_length samples,
/// or `length` samples when given (truncating or zero-extending).
inline Utterance istft(const ComplexSpectrogram& spec, std::optional<std::size_t> length = std::nullopt) {
    const StftConfig& cfg = spec.config;
    cfg.validate();
    if (spec.num_bins() != cfg.bins()) fail("istft: expected ", cfg.bins(), " bins, got ", spec.num_bins());
    if (!spec.frames.allFinite()) fail("istft: spectrogram contains non-finite entries");
    const int W = cfg.window_len;
    const Vector win = hann(W);
    const Eigen::Index n_frames = spec.num_frames();
    const std::size_t total = n_frames > 0 ? padded_length(n_frames, cfg) : 0;

    std::vector<double> acc(total, 0.0), norm(total, 0.0);
    std::vector<std::complex<double>> half(cfg.bins());
    std::vector<double> frame;
    auto& fft = detail::fft_engine();
    for (Eigen::Index n = 0; n < n_frames; ++n) {
        for (int k = 0; k < cfg.bins(); ++k) half[k] = spec.frames(n, k);
        fft.inv(frame, half, W);
        const std::size_t start = static_cast<std::size_t>(n * cfg.hop);
        for (int t = 0; t < W; ++t) {
            acc[start + t] += win[t] * frame[t];
            norm[start + t] += win[t] * win[t];
        }
    }
    // Interior normalization is the constant sum of squared windows; the
    // floor only matters in the first/last window where frames thin out.
    const double floor = 1e-3 * (win.squaredNorm() / (W / cfg.hop));
    Utterance out;
    out.sample_rate = cfg.sample_rate;
    out.samples.resize(length.value_or(total), 0.0);
    const std::size_t m = std::min(out.samples.size(), total);
    for (std::size_t t = 0; t < m; ++t) out.samples[t] = acc[t] / std::max(norm[t], floor);
    return out;
}

inline PowerSpectrogram power(const ComplexSpectrogram& spec) { return spec.frames.cwiseAbs2(); }

/// Energy of one frame from its one-sided spectrum: bins 0 and W/2 count once,
/// interior bins twice, scaled by 1/W. Equals the energy of the windowed frame.
inline double one_sided_energy(const Eigen::Ref<const Eigen::RowVectorXcd>& row, int window_len) {
    const Eigen::Index F = row.size();
    double e = std::norm(row[0]) + std::norm(row[F - 1]);
    for (Eigen::Index k = 1; k + 1 < F; ++k) e += 2.0 * std::norm(row[k]);
    return e / window_len;
}

/// Per-frame RMS of the raw (unwindowed) samples with the same framing as stft.
inline Vector frame_rms(const Utterance& u, const StftConfig& cfg) {
    const Eigen::Index n_frames = frame_count(u.size(), cfg);
    Vector rms(n_frames);
    for (Eigen::Index n = 0; n < n_frames; ++n) {
        const std::size_t start = static_cast<std::size_t>(n * cfg.hop);
        const std::size_t stop = std::min(u.size(), start + static_cast<std::size_t>(cfg.window_len));
        double e = 0.0;
        for (std::size_t t = start; t < stop; ++t) e += u.samples[t] * u.samples[t];
        rms[n] = std::sqrt(e / cfg.window_len);
    }
    return rms;
}

/// Hard VAD labels from a clean signal: a frame is active iff its RMS exceeds
/// the loudest frame's RMS by no more than |threshold_db|.
inline LabelSeq vad_ground_truth(const Utterance& u, const StftConfig& cfg = {}, double threshold_db = -30.0) {
    detail::check_utterance(u, cfg);
    const Vector rms = frame_rms(u, cfg);
    const double peak = rms.maxCoeff();
    LabelSeq labels;
    labels.kind = LabelKind::hard;
    labels.values.assign(static_cast<std::size_t>(rms.size()), 0.0);
    if (peak <= 0.0) return labels;
    const double thr = peak * std::pow(10.0, threshold_db / 20.0);
    for (Eigen::Index n = 0; n < rms.size(); ++n) labels.values[n] = rms[n] > thr ? 1.0 : 0.0;
    return labels;
}

/// Sample-level mask: a sample is active when it belongs to any active frame.
inline std::vector<bool> active_sample_mask(std::size_t num_samples, const LabelSeq& labels, const StftConfig& cfg) {
    const Eigen::Index n_frames = frame_count(num_samples, cfg);
    if (static_cast<Eigen::Index>(labels.size()) != n_frames)
        fail("label count ", labels.size(), " does not match frame count ", n_frames);
    std::vector<bool> mask(num_samples, false);
    for (Eigen::Index n = 0; n < n_frames; ++n) {
        if (labels.values[n] < 0.5) continue;
        const std::size_t start = static_cast<std::size_t>(n * cfg.hop);
        const std::size_t stop = std::min(num_samples, start + static_cast<std::size_t>(cfg.window_len));
        for (std::size_t t = start; t < stop; ++t) mask[t] = true;
    }
    return mask;
}

/// 10 log10 of the active-segment energy ratio of two signals.
inline double active_snr_db(const std::vector<double>& s, const std::vector<double>& b, const LabelSeq& labels,
                            const StftConfig& cfg = {}) {
    const auto mask = active_sample_mask(s.size(), labels, cfg);
    double es = 0.0, eb = 0.0;
    for (std::size_t t = 0; t < s.size(); ++t)
        if (mask[t]) {
            es += s[t] * s[t];
            eb += b[t] * b[t];
        }
    return 10.0 * std::log10(es / eb);
}

struct MixResult {
    Utterance mixture;
    double scale = 1.0;  // applied to the noise
};

/// x = s + scale * b with scale chosen so the SNR over speech-active samples
/// equals snr_db.
inline MixResult mix_at_snr(const Utterance& s, const Utterance& b, double snr_db, const LabelSeq& labels,
                            const StftConfig& cfg = {}) {
    if (s.size() != b.size()) fail("mix_at_snr: length mismatch (", s.size(), " vs ", b.size(), ")");
    if (s.sample_rate != b.sample_rate) fail("mix_at_snr: sample rate mismatch");
    const auto mask = active_sample_mask(s.size(), labels, cfg);
    double es = 0.0, eb = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < s.size(); ++t)
        if (mask[t]) {
            es += s.samples[t] * s.samples[t];
            eb += b.samples[t] * b.samples[t];
            ++count;
        }
    if (count == 0) fail("mix_at_snr: no active frames in the speech labels");
    if (eb <= 0.0) fail("mix_at_snr: noise has zero energy on the active segments");
    if (es <= 0.0) fail("mix_at_snr: speech has zero energy on the active segments");

    MixResult out;
    out.scale = std::sqrt(es / (eb * std::pow(10.0, snr_db / 10.0)));
    out.mixture.sample_rate = s.sample_rate;
    out.mixture.id = s.id;
    out.mixture.samples.resize(s.size());
    for (std::size_t t = 0; t < s.size(); ++t) out.mixture.samples[t] = s.samples[t] + out.scale * b.samples[t];
    return out;
}

}  // namespace advae::dsp
