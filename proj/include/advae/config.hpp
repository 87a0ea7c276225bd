#pragma once

// Run configuration: JSON file with per-section defaults, strict key checking,
// and ADVAE_<SECTION>__<KEY> environment overrides.

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "advae/corpus.hpp"
#include "advae/enhance.hpp"
#include "advae/eval.hpp"
#include "advae/train.hpp"
#include "json.hpp"

extern char** environ;

namespace advae::config {

using Json = nlohmann::ordered_json;

inline constexpr const char* kEnvPrefix = "ADVAE_";

struct EvalConfig {
    eval::LabelSource labels = eval::LabelSource::oracle;
    int probe_epochs = 200;
    double probe_lr = 0.5;
};

struct PathConfig {
    std::string corpus_dir = "corpus";
    std::string model_dir = "models";
    std::string report_dir = "reports";
};

struct RunConfig {
    dsp::StftConfig stft;
    corpus::CorpusSpec corpus;
    train::TrainConfig train;
    enhance::McemConfig mcem;
    EvalConfig eval;
    PathConfig paths;

    void validate() const {
        stft.validate();
        corpus.validate(stft);
        train.validate();
        mcem.validate();
        if (eval.probe_epochs < 1 || !(eval.probe_lr > 0.0)) fail("eval: probe_epochs must be >= 1 and probe_lr > 0");
    }
};

namespace detail {

template <class T>
void read(const Json& j, T& out) {
    out = j.get<T>();
}
inline void read(const Json& j, vae::Variant& out) { out = vae::variant_from_string(j.get<std::string>()); }
inline void read(const Json& j, vae::Ablation& out) { out = vae::ablation_from_string(j.get<std::string>()); }
inline void read(const Json& j, train::Monitor& out) { out = train::monitor_from_string(j.get<std::string>()); }
inline void read(const Json& j, eval::LabelSource& out) { out = eval::label_source_from_string(j.get<std::string>()); }
inline void read(const Json& j, std::vector<corpus::NoiseKind>& out) {
    out.clear();
    for (const auto& e : j) out.push_back(corpus::noise_kind_from_string(e.get<std::string>()));
}

template <class T>
Json write(const T& v) {
    return Json(v);
}
inline Json write(const vae::Variant& v) { return vae::to_string(v); }
inline Json write(const vae::Ablation& v) { return vae::to_string(v); }
inline Json write(const train::Monitor& v) { return train::to_string(v); }
inline Json write(const eval::LabelSource& v) { return eval::to_string(v); }
inline Json write(const std::vector<corpus::NoiseKind>& v) {
    Json a = Json::array();
    for (auto k : v) a.push_back(corpus::to_string(k));
    return a;
}

/// Calls f(section, key, member) for every configurable field, in echo order.
template <class C, class F>
void visit(C& c, F&& f) {
    f("stft", "sample_rate", c.stft.sample_rate);
    f("stft", "window_len", c.stft.window_len);
    f("stft", "hop", c.stft.hop);
    f("corpus", "n_train", c.corpus.n_train);
    f("corpus", "n_val", c.corpus.n_val);
    f("corpus", "n_test", c.corpus.n_test);
    f("corpus", "utterance_seconds", c.corpus.utterance_seconds);
    f("corpus", "noise_kinds", c.corpus.noise_kinds);
    f("corpus", "snr_db_list", c.corpus.snr_db_list);
    f("corpus", "seed", c.corpus.seed);
    f("corpus", "vad_threshold_db", c.corpus.vad_threshold_db);
    f("train", "variant", c.train.variant);
    f("train", "ablation", c.train.ablation);
    f("train", "batch_size", c.train.batch_size);
    f("train", "patience_epochs", c.train.patience_epochs);
    f("train", "max_epochs", c.train.max_epochs);
    f("train", "lr", c.train.lr);
    f("train", "alpha", c.train.alpha);
    f("train", "beta", c.train.beta);
    f("train", "latent_dim", c.train.latent_dim);
    f("train", "hidden_width", c.train.hidden_width);
    f("train", "monitor", c.train.monitor);
    f("train", "seed", c.train.seed);
    f("mcem", "n_em_iters", c.mcem.n_em_iters);
    f("mcem", "mh_steps_per_iter", c.mcem.mh_steps_per_iter);
    f("mcem", "burn_in", c.mcem.burn_in);
    f("mcem", "samples_kept", c.mcem.samples_kept);
    f("mcem", "proposal_std", c.mcem.proposal_std);
    f("mcem", "final_wiener_samples", c.mcem.final_wiener_samples);
    f("mcem", "nmf_rank", c.mcem.nmf_rank);
    f("mcem", "seed", c.mcem.seed);
    f("eval", "labels", c.eval.labels);
    f("eval", "probe_epochs", c.eval.probe_epochs);
    f("eval", "probe_lr", c.eval.probe_lr);
    f("paths", "corpus_dir", c.paths.corpus_dir);
    f("paths", "model_dir", c.paths.model_dir);
    f("paths", "report_dir", c.paths.report_dir);
}

/// Assigns one field; false when (section, key) is not a known field.
inline bool assign(RunConfig& c, const std::string& section, const std::string& key, const Json& value) {
    bool found = false;
    visit(c, [&](const char* s, const char* k, auto& member) {
        if (found || section != s || key != k) return;
        found = true;
        try {
            read(value, member);
        } catch (const nlohmann::json::exception&) {
            fail("config: bad value for '", section, ".", key, "': ", value.dump());
        }
    });
    return found;
}

inline std::string lower(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

}  // namespace detail

inline Json to_json(const RunConfig& c) {
    Json j = Json::object();
    detail::visit(c, [&](const char* s, const char* k, const auto& member) { j[s][k] = detail::write(member); });
    return j;
}

/// Applies a JSON object on top of `base`. Unknown sections or keys are errors
/// naming the offending key.
inline RunConfig merge(RunConfig base, const Json& j) {
    if (!j.is_object()) fail("config: top level must be a JSON object");
    for (const auto& [section, body] : j.items()) {
        if (!body.is_object()) fail("config: unknown key '", section, "'");
        for (const auto& [key, value] : body.items())
            if (!detail::assign(base, section, key, value)) fail("config: unknown key '", section, ".", key, "'");
    }
    return base;
}

/// ADVAE_TRAIN__MAX_EPOCHS=20 sets train.max_epochs. Values are parsed as
/// JSON when possible, otherwise taken as strings.
inline RunConfig apply_env(RunConfig c, char** env = environ) {
    const std::string prefix = kEnvPrefix;
    for (char** e = env; e && *e; ++e) {
        const std::string entry = *e;
        if (entry.rfind(prefix, 0) != 0) continue;
        const auto eq = entry.find('=');
        const std::string name = entry.substr(prefix.size(), eq - prefix.size());
        const std::string raw = eq == std::string::npos ? "" : entry.substr(eq + 1);
        const auto sep = name.find("__");
        if (sep == std::string::npos) fail("config: environment variable '", prefix, name, "' must look like ", prefix, "SECTION__KEY");
        const std::string section = detail::lower(name.substr(0, sep)), key = detail::lower(name.substr(sep + 2));
        Json value = Json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        if (!detail::assign(c, section, key, value))
            fail("config: unknown key '", section, ".", key, "' from environment variable ", prefix, name);
    }
    return c;
}

inline RunConfig parse(const std::string& text) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return {};
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail("config: invalid JSON: ", e.what());
    }
    return merge(RunConfig{}, j);
}

/// File (optional) then environment, validated.
inline RunConfig load(const std::optional<std::filesystem::path>& path, char** env = environ) {
    RunConfig c;
    if (path) {
        std::ifstream is(*path);
        if (!is) fail("config: cannot open '", path->string(), "'");
        std::ostringstream ss;
        ss << is.rdbuf();
        c = parse(ss.str());
    }
    c = apply_env(std::move(c), env);
    c.validate();
    return c;
}

}  // namespace advae::config
