// advae: corpus synthesis, training, enhancement, evaluation and gradient
// checks from one binary. See README.md for the command reference.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "advae/config.hpp"
#include "advae/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace advae;

namespace {

struct Flags {
    std::string config_path;
    std::string variant, ablation, out;
    std::optional<std::uint64_t> seed;
    // enhance
    std::string model, in, labels, wav_out;
    // evaluate
    std::vector<std::string> models;
    // train
    bool resume = false;
};

config::RunConfig resolve(const Flags& f) {
    std::optional<fs::path> path;
    if (!f.config_path.empty()) path = f.config_path;
    config::RunConfig c = config::load(path);
    if (!f.variant.empty()) c.train.variant = vae::variant_from_string(f.variant);
    if (!f.ablation.empty()) c.train.ablation = vae::ablation_from_string(f.ablation);
    if (f.seed) c.corpus.seed = c.train.seed = c.mcem.seed = *f.seed;
    if (!f.out.empty()) c.paths.report_dir = f.out;
    c.validate();
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot write '", path.string(), "'");
    os << text;
}

void echo_config(const config::RunConfig& c, const std::string& command) {
    write_text(fs::path(c.paths.report_dir) / ("config_" + command + ".json"), config::to_json(c).dump(2) + "\n");
}

std::string model_name(const train::TrainConfig& t) {
    std::string name = vae::to_string(t.variant);
    if (t.ablation != vae::Ablation::none) name += "_" + vae::to_string(t.ablation);
    return name + "_s" + std::to_string(t.seed);
}

corpus::Corpus load_corpus(const config::RunConfig& c) {
    if (!fs::exists(fs::path(c.paths.corpus_dir) / "manifest.json"))
        fail("no corpus in '", c.paths.corpus_dir, "' (run `advae synth` first)");
    return corpus::read_corpus(c.paths.corpus_dir);
}

int cmd_synth(const config::RunConfig& c) {
    const auto corpus = corpus::synth_corpus(c.corpus, c.stft);
    corpus::write_corpus(corpus, c.corpus, c.paths.corpus_dir);
    std::printf("wrote %zu/%zu/%zu train/val/test items to %s\n", corpus.train.size(), corpus.val.size(), corpus.test.size(),
                c.paths.corpus_dir.c_str());
    return 0;
}

int cmd_train(const config::RunConfig& c, bool resume) {
    const auto corpus = load_corpus(c);
    const auto train_set = train::make_frame_dataset(corpus.train, c.stft);
    const auto val_set = train::make_frame_dataset(corpus.val, c.stft);
    const std::string name = model_name(c.train);
    const fs::path model_dir = c.paths.model_dir;
    fs::create_directories(model_dir);
    const fs::path ckpt = model_dir / (name + ".ckpt");

    train::TrainState s = resume && fs::exists(ckpt) ? train::load_checkpoint(ckpt, c.train) : train::init_state(c.train, train_set);
    if (resume && fs::exists(ckpt)) std::fprintf(stderr, "resuming %s at epoch %d\n", name.c_str(), s.epoch);
    train::run(s, c.train, train_set, val_set, [&](const train::TrainState& st) {
        const auto& tr = st.log.records[st.log.records.size() - 2];
        const auto& va = st.log.records.back();
        std::fprintf(stderr, "epoch %3d  train %.3f  val %.3f  best %d  %.1fs\n", tr.epoch, tr.loss.total, va.loss.total,
                     st.stopper.best_epoch(), tr.seconds);
        train::save_checkpoint(st, c.train, ckpt);
    });
    vae::save_bundle(s.bundle, model_dir / (name + ".model"));
    s.log.write_csv(fs::path(c.paths.report_dir) / ("train_" + name + ".csv"));
    std::printf("model %s  best_epoch %d  stopped_epoch %d  early_stopped %d\n", (model_dir / (name + ".model")).c_str(),
                s.log.best_epoch, s.log.stopped_epoch, s.log.early_stopped ? 1 : 0);
    return 0;
}

int cmd_enhance(const config::RunConfig& c, const Flags& f) {
    if (f.model.empty() || f.in.empty()) fail("enhance needs --model and --in");
    const auto bundle = vae::load_bundle(f.model);
    const auto x = io::wav_read(f.in);
    dsp::LabelSeq labels;
    if (!f.labels.empty()) {
        labels = io::read_labels(f.labels);
    } else {
        const auto r = enhance::test_time_labels(x, bundle.stft);
        if (r.degenerate) std::fprintf(stderr, "warning: single energy cluster, all frames labeled active\n");
        labels = r.labels;
    }
    enhance::EnhanceResult detail;
    const auto s = enhance::enhance_utterance(x, bundle, labels, c.mcem, &detail);
    const std::string stem = fs::path(f.in).stem().string();
    const fs::path out = f.wav_out.empty() ? fs::path(c.paths.report_dir) / (stem + "_enhanced.wav") : fs::path(f.wav_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    io::wav_write(s, out);
    std::string trace = "iteration,nll_before_mstep,nll_after_mstep\n";
    for (std::size_t i = 0; i < detail.trace.size(); ++i)
        trace += std::to_string(i) + "," + nn::format_double(detail.nll_before[i]) + "," + nn::format_double(detail.trace[i]) + "\n";
    write_text(fs::path(c.paths.report_dir) / (stem + "_trace.csv"), trace);
    std::printf("wrote %s  acceptance %.3f\n", out.c_str(), detail.acceptance_rate);
    return 0;
}

int cmd_evaluate(const config::RunConfig& c, const Flags& f) {
    std::vector<fs::path> paths;
    for (const auto& m : f.models) paths.emplace_back(m);
    if (paths.empty() && fs::is_directory(c.paths.model_dir))
        for (const auto& e : fs::directory_iterator(c.paths.model_dir))
            if (e.path().extension() == ".model") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) fail("no model files given and none found in '", c.paths.model_dir, "'");
    std::vector<eval::NamedModel> models;
    for (const auto& p : paths) {
        if (!fs::exists(p)) fail("missing model file '", p.string(), "'");
        models.push_back({p.stem().string(), vae::load_bundle(p)});
    }
    const auto corpus = load_corpus(c);
    const auto rep = eval::evaluate_grid(models, corpus.test, c.mcem, c.eval.labels, [](const eval::UtteranceScore& s) {
        std::fprintf(stderr, "%-28s %-14s %6.2f dB\n", s.model.c_str(), s.id.c_str(), s.si_sdr);
    });
    const fs::path dir = c.paths.report_dir;
    write_text(dir / "metrics.csv", rep.condition_csv());
    write_text(dir / "utterances.csv", rep.utterance_csv());

    const auto train_set = train::make_frame_dataset(corpus.train, c.stft);
    const auto test_set = train::make_frame_dataset(corpus.test, c.stft);
    eval::ProbeOptions po;
    po.epochs = c.eval.probe_epochs;
    po.lr = c.eval.probe_lr;
    po.seed = c.mcem.seed;
    std::string probe = "model,balanced_accuracy,accuracy,f1,chance\n";
    for (const auto& m : models) {
        const auto r = eval::probe_disentanglement(m.bundle, train_set, test_set, po);
        probe += m.name + "," + eval::format_number(r.balanced_accuracy) + "," + eval::format_number(r.accuracy) + "," +
                 eval::format_number(r.f1) + "," + eval::format_number(r.chance) + "\n";
    }
    write_text(dir / "probe.csv", probe);
    std::printf("%s", rep.condition_csv().c_str());
    std::printf("%s", probe.c_str());
    return 0;
}

int cmd_gradcheck(const config::RunConfig& c) {
    gradcheck::SuiteOptions opt;
    opt.dims.bins = c.stft.bins();
    opt.dims.latent_dim = c.train.latent_dim;
    opt.dims.hidden_width = c.train.hidden_width;
    opt.seed = c.train.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const auto cases = gradcheck::run_suite(opt);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string csv = "case,max_rel_err,coords_checked,coords_skipped,passed\n";
    bool ok = true;
    for (const auto& k : cases) {
        ok = ok && k.report.passed;
        csv += k.name + "," + nn::format_double(k.report.max_rel_err) + "," + std::to_string(k.report.coords_checked) + "," +
               std::to_string(k.report.coords_skipped) + "," + (k.report.passed ? "1" : "0") + "\n";
        std::printf("%-4s %-40s max_rel_err %.3e  (%zu coords, %zu skipped)\n", k.report.passed ? "PASS" : "FAIL", k.name.c_str(),
                    k.report.max_rel_err, k.report.coords_checked, k.report.coords_skipped);
    }
    write_text(fs::path(c.paths.report_dir) / "gradcheck.csv", csv);
    std::printf("%s  %zu cases  %.1fs\n", ok ? "PASS" : "FAIL", cases.size(), secs);
    return ok ? 0 : 1;
}

void error_line(const std::string& command, const std::string& message) {
    const nlohmann::json j{{"error", {{"command", command}, {"message", message}}}};
    std::fprintf(stderr, "%s\n", j.dump().c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Speech enhancement with (conditional, adversarial) VAEs and an NMF noise model"};
    app.require_subcommand(1);
    Flags f;
    std::uint64_t seed = 0;
    app.add_option("--config", f.config_path, "JSON run configuration (missing keys take defaults)");
    app.add_option("--variant", f.variant, "vae, cvae or acvae");
    app.add_option("--ablation", f.ablation, "none, hard_label_beta0 or hard_label_beta0_negdis");
    auto* seed_opt = app.add_option("--seed", seed, "overrides corpus.seed, train.seed and mcem.seed");
    app.add_option("--out", f.out, "report directory (overrides paths.report_dir)");

    auto* synth = app.add_subcommand("synth", "synthesize the corpus into paths.corpus_dir");
    auto* trn = app.add_subcommand("train", "train one model on the corpus");
    trn->add_flag("--resume", f.resume, "continue from the model's checkpoint if present");
    auto* enh = app.add_subcommand("enhance", "enhance one WAV file");
    enh->add_option("--model", f.model, "model file")->required();
    enh->add_option("--in", f.in, "noisy input WAV")->required();
    enh->add_option("--labels", f.labels, "per-frame label file (default: energy VAD on the input)");
    enh->add_option("--wav-out", f.wav_out, "output WAV (default: <report_dir>/<stem>_enhanced.wav)");
    auto* ev = app.add_subcommand("evaluate", "enhance the test split with every model and write reports");
    ev->add_option("--models", f.models, "model files (default: every *.model in paths.model_dir)");
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every network and loss");
    for (auto* s : {synth, trn, enh, ev, gc}) s->fallthrough();

    std::string command = "cli";
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        error_line(command, e.what());
        return 2;
    }
    if (*seed_opt) f.seed = seed;
    command = app.get_subcommands().front()->get_name();
    try {
        const auto c = resolve(f);
        echo_config(c, command);
        if (command == "synth") return cmd_synth(c);
        if (command == "train") return cmd_train(c, f.resume);
        if (command == "enhance") return cmd_enhance(c, f);
        if (command == "evaluate") return cmd_evaluate(c, f);
        return cmd_gradcheck(c);
    } catch (const std::exception& e) {
        error_line(command, e.what());
        return 1;
    }
}
