#pragma once

// Synthetic speech/noise corpus. "Speech" is a sequence of amplitude-modulated
// harmonic stacks separated by genuine silences, so it has both spectral
// structure during activity and frames of speech absence.

#include <filesystem>
#include <fstream>
#include <map>

#include "advae/dsp.hpp"
#include "advae/io.hpp"
#include "json.hpp"

namespace advae::corpus {

enum class NoiseKind { white, pink, burst, modulated };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::white: return "white";
        case NoiseKind::pink: return "pink";
        case NoiseKind::burst: return "burst";
        case NoiseKind::modulated: return "modulated";
    }
    return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "white") return NoiseKind::white;
    if (s == "pink") return NoiseKind::pink;
    if (s == "burst") return NoiseKind::burst;
    if (s == "modulated") return NoiseKind::modulated;
    fail("unknown noise kind '", s, "' (expected white, pink, burst or modulated)");
}

inline bool is_stationary(NoiseKind k) { return k == NoiseKind::white || k == NoiseKind::pink; }

struct CorpusSpec {
    int n_train = 200;
    int n_val = 20;
    int n_test = 20;
    double utterance_seconds = 2.0;
    std::vector<NoiseKind> noise_kinds{NoiseKind::white, NoiseKind::pink, NoiseKind::burst, NoiseKind::modulated};
    std::vector<double> snr_db_list{0.0, 5.0, 10.0};
    std::uint64_t seed = 0;
    double vad_threshold_db = -30.0;

    void validate(const dsp::StftConfig& cfg) const {
        if (n_train < 1 || n_val < 1 || n_test < 1) fail("corpus: counts must be >= 1");
        if (!(utterance_seconds > 0.0)) fail("corpus: utterance_seconds must be > 0");
        if (utterance_seconds * cfg.sample_rate < 2.0 * cfg.window_len + 0.4 * cfg.sample_rate)
            fail("corpus: utterance_seconds too short to hold a silence and a speech segment");
        if (noise_kinds.empty()) fail("corpus: noise_kinds must not be empty");
        if (snr_db_list.empty()) fail("corpus: snr_db_list must not be empty");
    }
};

struct CorpusItem {
    dsp::Utterance clean;
    dsp::Utterance noise;  // already scaled: mixture = clean + noise
    dsp::Utterance mixture;
    dsp::LabelSeq labels;  // ground-truth VAD of the clean signal
    NoiseKind noise_kind = NoiseKind::white;
    double snr_db = 0.0;
    double noise_scale = 1.0;
};

struct Corpus {
    std::vector<CorpusItem> train, val, test;
};

namespace detail {

inline double peak(const std::vector<double>& x) {
    double p = 0.0;
    for (double v : x) p = std::max(p, std::abs(v));
    return p;
}

/// One voiced segment: gliding f0 with vibrato, 4-10 harmonics shaped by a
/// spectral tilt and two formant-like resonances, syllabic amplitude modulation.
inline void add_voiced_segment(std::vector<double>& out, std::size_t start, std::size_t len, int sr, Rng& rng) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double f0_start = uniform(rng, 90.0, 250.0);
    const double f0_end = std::clamp(f0_start * uniform(rng, 0.8, 1.25), 90.0, 250.0);
    const int harmonics = 4 + static_cast<int>(rng() % 7);
    const double tilt = uniform(rng, 0.5, 1.5);
    const double formant1 = uniform(rng, 300.0, 900.0);
    const double formant2 = uniform(rng, 900.0, 2500.0);
    const double bw = 150.0;
    const double am_rate = uniform(rng, 3.0, 6.0);
    const double am_phase = uniform(rng, 0.0, two_pi);
    const double vib_rate = uniform(rng, 4.0, 7.0);
    const double vib_depth = uniform(rng, 0.0, 0.02);
    std::vector<double> amp(harmonics), phase(harmonics);
    for (int h = 0; h < harmonics; ++h) {
        const double fh = (h + 1) * 0.5 * (f0_start + f0_end);
        const double g1 = std::exp(-0.5 * std::pow((fh - formant1) / bw, 2));
        const double g2 = std::exp(-0.5 * std::pow((fh - formant2) / bw, 2));
        amp[h] = std::pow(h + 1.0, -tilt) * (1.0 + 2.0 * (g1 + g2));
        phase[h] = uniform(rng, 0.0, two_pi);
    }
    const double ramp = 0.02 * sr;
    double cycle = 0.0;  // integrated f0 phase in cycles
    for (std::size_t t = 0; t < len; ++t) {
        const double tau = static_cast<double>(t) / sr;
        const double frac = static_cast<double>(t) / static_cast<double>(len);
        const double f0 = (f0_start + (f0_end - f0_start) * frac) * (1.0 + vib_depth * std::sin(two_pi * vib_rate * tau));
        cycle += f0 / sr;
        double v = 0.0;
        for (int h = 0; h < harmonics; ++h)
            if ((h + 1) * f0 < 0.45 * sr) v += amp[h] * std::sin(two_pi * (h + 1) * cycle + phase[h]);
        double env = 0.6 + 0.4 * std::sin(two_pi * am_rate * tau + am_phase);
        const double edge = std::min(static_cast<double>(t), static_cast<double>(len - 1 - t));
        if (edge < ramp) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * edge / ramp);
        out[start + t] += env * v;
    }
}

inline dsp::Utterance synth_speech(std::size_t length, int sr, Rng& rng) {
    dsp::Utterance u;
    u.sample_rate = sr;
    u.samples.assign(length, 0.0);
    bool silence = (rng() & 1u) != 0;
    std::size_t pos = 0;
    int n_speech = 0, n_silence = 0;
    const auto min_speech = static_cast<std::size_t>(0.15 * sr);
    while (pos < length) {
        const std::size_t remaining = length - pos;
        if (silence) {
            // Keep room for at least one voiced segment if none has been placed.
            auto len = static_cast<std::size_t>(uniform(rng, 0.2, 0.8) * sr);
            if (n_speech == 0) len = std::min(len, remaining > min_speech ? remaining - min_speech : 0);
            pos += std::min(len, remaining);
            ++n_silence;
        } else {
            auto len = static_cast<std::size_t>(uniform(rng, 0.3, 0.9) * sr);
            if (n_silence == 0) len = std::min(len, remaining > static_cast<std::size_t>(0.2 * sr) ? remaining - static_cast<std::size_t>(0.2 * sr) : 0);
            len = std::min(len, remaining);
            if (len >= min_speech) {
                add_voiced_segment(u.samples, pos, len, sr, rng);
                ++n_speech;
            }
            pos += len;
        }
        silence = !silence;
    }
    const double p = peak(u.samples);
    if (p > 0.0)
        for (double& v : u.samples) v *= 0.25 / p;
    // Low-level sensor floor about 70 dB below the peak.
    for (double& v : u.samples) v += 2.5e-5 * standard_normal(rng);
    return u;
}

inline void normalize_rms(std::vector<double>& x) {
    double e = 0.0;
    for (double v : x) e += v * v;
    const double rms = std::sqrt(e / static_cast<double>(x.size()));
    if (rms > 0.0)
        for (double& v : x) v /= rms;
}

/// One-pole coloring with random coefficient; sign picks low- or high-pass tilt.
inline void color(std::vector<double>& x, std::size_t start, std::size_t stop, double a) {
    double prev = 0.0;
    for (std::size_t t = start; t < stop; ++t) {
        prev = x[t] + a * prev;
        x[t] = prev;
    }
}

inline dsp::Utterance synth_noise(NoiseKind kind, std::size_t length, int sr, Rng& rng) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    dsp::Utterance u;
    u.sample_rate = sr;
    u.samples.resize(length);
    auto white = [&] {
        for (double& v : u.samples) v = standard_normal(rng);
    };
    auto pink = [&] {
        // Paul Kellet's refined pink filter.
        double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
        for (double& v : u.samples) {
            const double w = standard_normal(rng);
            b0 = 0.99886 * b0 + w * 0.0555179;
            b1 = 0.99332 * b1 + w * 0.0750759;
            b2 = 0.96900 * b2 + w * 0.1538520;
            b3 = 0.86650 * b3 + w * 0.3104856;
            b4 = 0.55000 * b4 + w * 0.5329522;
            b5 = -0.7616 * b5 - w * 0.0168980;
            v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
            b6 = w * 0.115926;
        }
    };
    switch (kind) {
        case NoiseKind::white: white(); break;
        case NoiseKind::pink: pink(); break;
        case NoiseKind::burst: {
            // Quiet bed plus randomly timed, randomly colored bursts.
            white();
            std::vector<double> bed(length);
            for (std::size_t t = 0; t < length; ++t) bed[t] = 0.03 * u.samples[t];
            std::size_t pos = static_cast<std::size_t>(uniform(rng, 0.0, 0.3) * sr);
            while (pos < length) {
                const auto len = std::min(length - pos, static_cast<std::size_t>(uniform(rng, 0.05, 0.4) * sr));
                const double gain = uniform(rng, 0.5, 1.5);
                const double a = uniform(rng, -0.6, 0.95);
                color(u.samples, pos, pos + len, a);
                const double norm = std::sqrt(1.0 - a * a);
                for (std::size_t t = pos; t < pos + len; ++t) bed[t] += gain * norm * u.samples[t];
                pos += len + static_cast<std::size_t>(uniform(rng, 0.1, 0.6) * sr);
            }
            u.samples = std::move(bed);
            break;
        }
        case NoiseKind::modulated: {
            if (rng() & 1u) white(); else pink();
            const double rate = uniform(rng, 0.5, 4.0);
            const double ph = uniform(rng, 0.0, two_pi);
            for (std::size_t t = 0; t < length; ++t)
                u.samples[t] *= 0.55 + 0.45 * std::sin(two_pi * rate * static_cast<double>(t) / sr + ph);
            break;
        }
    }
    normalize_rms(u.samples);
    return u;
}

}  // namespace detail

/// Builds the item-th utterance of a split. Streams depend only on
/// (seed, split, index), so items can be generated in any order.
inline CorpusItem make_item(const CorpusSpec& spec, const dsp::StftConfig& cfg, int split, int index) {
    const auto length = static_cast<std::size_t>(std::llround(spec.utterance_seconds * cfg.sample_rate));
    Rng speech_rng = make_rng(spec.seed, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(index), 0);
    Rng noise_rng = make_rng(spec.seed, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(index), 1);

    CorpusItem item;
    item.noise_kind = spec.noise_kinds[static_cast<std::size_t>(index) % spec.noise_kinds.size()];
    item.snr_db = spec.snr_db_list[(static_cast<std::size_t>(index) / spec.noise_kinds.size()) % spec.snr_db_list.size()];
    item.clean = detail::synth_speech(length, cfg.sample_rate, speech_rng);
    const dsp::Utterance raw_noise = detail::synth_noise(item.noise_kind, length, cfg.sample_rate, noise_rng);
    item.labels = dsp::vad_ground_truth(item.clean, cfg, spec.vad_threshold_db);
    auto mix = dsp::mix_at_snr(item.clean, raw_noise, item.snr_db, item.labels, cfg);
    item.noise_scale = mix.scale;
    item.noise = raw_noise;
    for (double& v : item.noise.samples) v *= mix.scale;
    item.mixture = std::move(mix.mixture);

    // Keep the mixture inside [-1, 1]; a common factor leaves the SNR unchanged.
    const double p = detail::peak(item.mixture.samples);
    if (p > 0.99) {
        const double k = 0.99 / p;
        for (auto* sig : {&item.clean, &item.noise, &item.mixture})
            for (double& v : sig->samples) v *= k;
        item.noise_scale *= k;
    }
    static constexpr const char* split_names[] = {"train", "val", "test"};
    const std::string id = std::string(split_names[split]) + "_" + std::to_string(index);
    item.clean.id = id + "_clean";
    item.noise.id = id + "_noise";
    item.mixture.id = id;
    return item;
}

inline Corpus synth_corpus(const CorpusSpec& spec, const dsp::StftConfig& cfg = {}) {
    spec.validate(cfg);
    Corpus c;
    for (int i = 0; i < spec.n_train; ++i) c.train.push_back(make_item(spec, cfg, 0, i));
    for (int i = 0; i < spec.n_val; ++i) c.val.push_back(make_item(spec, cfg, 1, i));
    for (int i = 0; i < spec.n_test; ++i) c.test.push_back(make_item(spec, cfg, 2, i));
    return c;
}

/// Writes WAV/label files and manifest.json under dir.
inline void write_corpus(const Corpus& c, const CorpusSpec& spec, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    nlohmann::ordered_json manifest;
    manifest["format"] = "advae-corpus";
    manifest["version"] = 1;
    manifest["seed"] = spec.seed;
    manifest["sample_rate"] = io::kWavSampleRate;
    auto dump_split = [&](const std::string& name, const std::vector<CorpusItem>& items) {
        const fs::path sub = dir / name;
        fs::create_directories(sub);
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& it : items) {
            const std::string id = it.mixture.id;
            io::wav_write(it.clean, sub / (id + "_clean.wav"));
            io::wav_write(it.noise, sub / (id + "_noise.wav"));
            io::wav_write(it.mixture, sub / (id + "_mix.wav"));
            io::write_labels(it.labels, sub / (id + "_labels.txt"));
            arr.push_back({{"id", id},
                           {"clean", name + "/" + id + "_clean.wav"},
                           {"noise", name + "/" + id + "_noise.wav"},
                           {"mixture", name + "/" + id + "_mix.wav"},
                           {"labels", name + "/" + id + "_labels.txt"},
                           {"snr_db", it.snr_db},
                           {"noise_kind", to_string(it.noise_kind)},
                           {"stationary", is_stationary(it.noise_kind)},
                           {"noise_scale", it.noise_scale}});
        }
        manifest["splits"][name] = arr;
    };
    fs::create_directories(dir);
    dump_split("train", c.train);
    dump_split("val", c.val);
    dump_split("test", c.test);
    std::ofstream os(dir / "manifest.json");
    if (!os) fail("write_corpus: cannot write manifest in '", dir.string(), "'");
    os << manifest.dump(2) << '\n';
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) fail("read_corpus: missing manifest.json in '", dir.string(), "'");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        fail("read_corpus: invalid manifest JSON: ", e.what());
    }
    Corpus c;
    auto load_split = [&](const std::string& name, std::vector<CorpusItem>& items) {
        if (!manifest.contains("splits") || !manifest["splits"].contains(name)) return;
        for (const auto& e : manifest["splits"][name]) {
            CorpusItem it;
            it.clean = io::wav_read(dir / e.at("clean").get<std::string>());
            it.noise = io::wav_read(dir / e.at("noise").get<std::string>());
            it.mixture = io::wav_read(dir / e.at("mixture").get<std::string>());
            it.labels = io::read_labels(dir / e.at("labels").get<std::string>());
            it.snr_db = e.at("snr_db").get<double>();
            it.noise_kind = noise_kind_from_string(e.at("noise_kind").get<std::string>());
            it.noise_scale = e.value("noise_scale", 1.0);
            const auto id = e.at("id").get<std::string>();
            it.mixture.id = id;
            it.clean.id = id + "_clean";
            it.noise.id = id + "_noise";
            items.push_back(std::move(it));
        }
    };
    load_split("train", c.train);
    load_split("val", c.val);
    load_split("test", c.test);
    return c;
}

}  // namespace advae::corpus
