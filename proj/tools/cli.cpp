#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "suesr/datapipe.hpp"
#include "suesr/errors.hpp"
#include "suesr/features.hpp"
#include "suesr/image_io.hpp"
#include "suesr/metrics.hpp"
#include "suesr/panel.hpp"
#include "suesr/run_config.hpp"
#include "suesr/semantics.hpp"
#include "suesr/tensor_store.hpp"
#include "suesr/trainer.hpp"
#include "suesr/uncertainty.hpp"

namespace suesr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    std::string manifest;
    std::string root;
    std::string out_dir;
    std::string out;
    std::string checkpoint;
    std::string input;
    std::string split = "test";
    std::string mode;
    std::string csv;
    std::string feature_backend;
    std::string segmenter;
    std::optional<std::uint64_t> seed;
    std::optional<int> mc_passes;
    std::optional<int> workers;
    std::optional<int> hr_size;
    std::optional<int> max_epochs;
    std::optional<long> max_steps;
    std::optional<int> batch_size;
    std::optional<double> lr;
    std::vector<double> fractions;
    int n = 256;
    int count = 4;
    bool deterministic = false;
    bool no_heatmap = false;
    bool quiet = false;
};

RunConfig resolve_config(const Options& o, bool allow_zero_epochs = false) {
    RunConfig c = o.config.empty() ? parse_run_config("{}", env_seed()) : load_run_config(o.config);
    if (o.seed) {
        c.data.seed = *o.seed;
        c.train.seed = *o.seed;
        c.infer.seed = *o.seed;
    }
    if (!o.manifest.empty()) c.data.manifest = o.manifest;
    if (!o.root.empty()) c.data.root = o.root;
    if (o.hr_size) {
        c.data.hr_size = *o.hr_size;
        c.discriminator.patch_size = *o.hr_size;
    }
    if (o.fractions.size() == 3) c.data.fractions = {o.fractions[0], o.fractions[1], o.fractions[2]};
    if (o.max_epochs) c.train.max_epochs = *o.max_epochs;
    if (o.max_steps) c.train.max_steps = *o.max_steps;
    if (o.batch_size) c.train.batch_size = *o.batch_size;
    if (o.mc_passes) {
        c.infer.mc_passes = *o.mc_passes;
        c.metrics.mc_passes = *o.mc_passes;
    }
    if (o.workers) c.infer.workers = *o.workers;
    if (!o.mode.empty()) c.metrics.mode = o.mode;
    if (!o.feature_backend.empty()) c.feature_backend = c.metrics.feature_backend = o.feature_backend;
    if (!o.segmenter.empty()) c.segmenter = o.segmenter;
    c.validate(allow_zero_epochs);
    return c;
}

Manifest require_manifest(const RunConfig& c) {
    if (c.data.manifest.empty()) throw UsageError("a manifest is required (--manifest or data.manifest)");
    return load_manifest(c.data.manifest);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, text);
}

void write_training_outputs(const fs::path& out_dir, const RunConfig& c, const TrainingResult& r) {
    fs::create_directories(out_dir);
    save_checkpoint(r.best, out_dir / "checkpoint");
    write_text(out_dir / "history.json", history_to_json(r.history));
    write_text(out_dir / "config.json", c.to_json().dump(2) + "\n");
}

EpochCallback progress(std::ostream& err, bool quiet) {
    if (quiet) return {};
    return [&err](const EpochRecord& r) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %d: steps %ld  g_total %.5f  d_loss %.5f  val_psnr %.3f%s\n", r.epoch,
                      r.steps, r.generator.total, r.discriminator, r.monitor_value, r.improved ? "  *" : "");
        err << buf << std::flush;
    };
}

int cmd_synth(const Options& o, std::ostream& err) {
    const std::uint64_t seed = o.seed.value_or(env_seed());
    const auto files = synthesize_toy_dataset(o.out_dir, o.n, o.hr_size.value_or(96), seed);
    err << "wrote " << files.size() << " images to " << o.out_dir << "\n";
    return kExitOk;
}

int cmd_prepare(const Options& o, std::ostream& err) {
    const RunConfig c = resolve_config(o);
    if (c.data.root.empty()) throw UsageError("a source root is required (--root or data.root)");
    const Manifest source = build_manifest(c.data.root, c.data.fractions, c.data.seed);
    for (const auto& e : source.excluded) err << "warning: skipped " << e.path << ": " << e.reason << "\n";
    const PrepareResult r = prepare_dataset(source, o.out_dir, c.data.hr_size);
    err << "prepared " << r.manifest.train.size() << "/" << r.manifest.val.size() << "/" << r.manifest.test.size()
        << " train/val/test pairs; " << r.written << " files written, " << r.skipped << " unchanged, " << r.failed
        << " failed\n";
    return kExitOk;
}

int cmd_train(const Options& o, std::ostream& err) {
    const RunConfig c = resolve_config(o);
    const Manifest manifest = require_manifest(c);
    const auto seg = make_segmenter(c.segmenter);
    const auto fx = make_feature_extractor(c.feature_backend);
    const TrainingBackends backends{*seg, *fx};
    const TrainingResult r =
        train(c.generator, c.discriminator, c.train, manifest, backends, c.hash(), progress(err, o.quiet));
    write_training_outputs(o.out_dir, c, r);
    err << "best epoch " << r.best_epoch << " of " << r.epochs_run << (r.stopped_early ? " (early stop)" : "")
        << "\n";
    return kExitOk;
}

int cmd_finetune(const Options& o, std::ostream& err) {
    RunConfig c = resolve_config(o, true);
    if (o.lr) c.train.finetune_lr = *o.lr;
    const Checkpoint source = load_checkpoint(o.checkpoint);
    if (o.config.empty()) {
        c.generator = source.generator_config;
        c.discriminator = source.discriminator_config;
    }
    const Manifest manifest = require_manifest(c);
    const auto seg = make_segmenter(c.segmenter);
    const auto fx = make_feature_extractor(c.feature_backend);
    const TrainingBackends backends{*seg, *fx};
    const TrainingResult r = finetune(source, c.generator, c.discriminator, c.train, manifest, backends, c.hash(),
                                      progress(err, o.quiet));
    write_training_outputs(o.out_dir, c, r);
    err << "best epoch " << r.best_epoch << " of " << r.epochs_run << "\n";
    return kExitOk;
}

Generator load_generator(const std::string& checkpoint) {
    const Checkpoint c = load_checkpoint(checkpoint);
    return Generator(c.generator_config, c.generator);
}

int cmd_infer(const Options& o, std::ostream& err) {
    const RunConfig c = resolve_config(o);
    const Generator gen = load_generator(o.checkpoint);
    const Tensor lr = read_image(o.input);
    const fs::path out_dir(o.out_dir);
    fs::create_directories(out_dir);
    const std::string stem = fs::path(o.input).stem().string();
    Tensor mean, sigma;
    int passes = c.infer.mc_passes;
    if (o.deterministic) {
        mean = generator_forward(gen, lr, DropoutMode::disabled());
        sigma = Tensor(mean.shape());
        passes = 0;
    } else {
        UncertaintyOutput u = mc_inference(gen, lr, c.infer.mc_passes, c.infer.seed, false, c.infer.workers);
        mean = std::move(u.mean);
        sigma = std::move(u.stddev);
    }
    write_png(out_dir / (stem + ".mean.png"), mean);
    std::string raw(sigma.size() * sizeof(float), '\0');
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        const float v = static_cast<float>(sigma[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 4; ++b) raw[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
    write_file_atomic(out_dir / (stem + ".sigma.f32"), raw);
    const json sidecar{{"dtype", "float32"},         {"byte_order", "little"},   {"shape", sigma.shape()},
                       {"layout", "channel-major"},  {"passes", passes},         {"base_seed", c.infer.seed}};
    write_file_atomic(out_dir / (stem + ".sigma.json"), sidecar.dump(2) + "\n");
    write_png(out_dir / (stem + ".heatmap.png"), render_heatmap(sigma));
    err << "wrote " << stem << ".{mean.png,sigma.f32,sigma.json,heatmap.png} to " << out_dir.string() << "\n";
    return kExitOk;
}

Tensor super_resolve(const Generator& gen, const Tensor& lr, const RunConfig& c) {
    if (c.metrics.mode == "mc") return clamp01(mc_inference(gen, lr, c.metrics.mc_passes, c.infer.seed).mean);
    return clamp01(generator_forward(gen, lr, DropoutMode::disabled()));
}

int cmd_evaluate(const Options& o, std::ostream& err) {
    const RunConfig c = resolve_config(o);
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    const Generator gen(ck.generator_config, ck.generator);
    const Manifest manifest = require_manifest(c);
    const auto pairs = load_split(manifest, o.split);
    if (pairs.empty()) throw InputError("split '" + o.split + "' is empty");
    std::vector<Tensor> outputs, references;
    std::vector<std::string> names;
    for (const auto& p : pairs) {
        outputs.push_back(super_resolve(gen, p.lr, c));
        references.push_back(p.hr);
        names.push_back(p.source_path);
    }
    const auto fx = make_feature_extractor(c.metrics.feature_backend);
    EvaluationResult r = evaluate_split(outputs, references, *fx, o.split, names);
    r.report.backends["inference"] =
        c.metrics.mode == "mc" ? "mc:" + std::to_string(c.metrics.mc_passes) : std::string("deterministic");
    r.report.config_hash = o.config.empty() ? ck.config_hash : c.hash();
    const fs::path out = o.out.empty() ? fs::path("report.json") : fs::path(o.out);
    write_text(out, report_to_json(r.report));
    if (!o.csv.empty()) {
        write_text(o.csv, per_image_csv(r.per_image));
    } else if (c.metrics.write_csv) {
        write_text(fs::path(out).replace_extension(".csv"), per_image_csv(r.per_image));
    }
    err << "psnr " << r.report.psnr_db << " dB, ssim " << r.report.ssim << ", lpips " << r.report.lpips << "\n";
    return kExitOk;
}

int cmd_report(const Options& o, std::ostream& err) {
    const RunConfig c = resolve_config(o);
    const Generator gen = load_generator(o.checkpoint);
    const Manifest manifest = require_manifest(c);
    const auto& entries = manifest.split(o.split);
    const fs::path out_dir(o.out_dir);
    fs::create_directories(out_dir);
    const std::size_t count = std::min(entries.size(), static_cast<std::size_t>(std::max(o.count, 0)));
    for (std::size_t i = 0; i < count; ++i) {
        const ImagePair p = load_pair(manifest, entries[i]);
        const UncertaintyOutput u = mc_inference(gen, p.lr, c.infer.mc_passes, c.infer.seed, false, c.infer.workers);
        const Tensor sr = clamp01(u.mean);
        std::optional<RgbImage> heat;
        if (!o.no_heatmap) heat = render_heatmap(u.stddev);
        const RgbImage panel = emit_panel(p.lr, sr, p.hr, heat);
        char name[64];
        std::snprintf(name, sizeof name, "panel_%03zu.png", i);
        write_png(out_dir / name, panel);
    }
    err << "wrote " << count << " panels to " << out_dir.string() << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Super-resolution with Monte-Carlo dropout uncertainty and semantic-consistency training", "suesr"};
    app.require_subcommand(1);
    Options o;

    auto add_config = [&](CLI::App* s) { s->add_option("--config", o.config, "JSON run config")->check(CLI::ExistingFile); };
    auto add_seed = [&](CLI::App* s) { s->add_option("--seed", o.seed, "seed (default: config, then SUESR_SEED)"); };

    auto* synth = app.add_subcommand("synth-data", "write a procedural class-labelled toy dataset");
    synth->add_option("--out-dir", o.out_dir, "output directory")->required();
    synth->add_option("--n", o.n, "number of images")->capture_default_str();
    synth->add_option("--hr-size", o.hr_size, "image side length (default 96)");
    add_seed(synth);

    auto* prepare = app.add_subcommand("prepare-data", "split a class-labelled image tree and materialize LR/HR pairs");
    add_config(prepare);
    prepare->add_option("--root", o.root, "source root with one directory per class");
    prepare->add_option("--out-dir", o.out_dir, "output directory")->required();
    prepare->add_option("--hr-size", o.hr_size, "HR side length");
    prepare->add_option("--fractions", o.fractions, "train val test fractions")->expected(3);
    add_seed(prepare);

    auto* train_cmd = app.add_subcommand("train", "adversarial training with early stopping");
    add_config(train_cmd);
    train_cmd->add_option("--manifest", o.manifest, "prepared manifest.json");
    train_cmd->add_option("--out-dir", o.out_dir, "output directory")->required();
    train_cmd->add_option("--max-epochs", o.max_epochs, "override train.max_epochs");
    train_cmd->add_option("--max-steps", o.max_steps, "override train.max_steps");
    train_cmd->add_option("--batch-size", o.batch_size, "override train.batch_size");
    train_cmd->add_option("--feature-backend", o.feature_backend, "override the feature extractor backend");
    train_cmd->add_option("--segmenter", o.segmenter, "override the segmentation backend");
    train_cmd->add_flag("--quiet", o.quiet, "no per-epoch progress");
    add_seed(train_cmd);

    auto* ft = app.add_subcommand("finetune", "continue training a checkpoint on a new dataset");
    add_config(ft);
    ft->add_option("--checkpoint", o.checkpoint, "source checkpoint directory")->required();
    ft->add_option("--manifest", o.manifest, "prepared manifest.json of the new domain");
    ft->add_option("--out-dir", o.out_dir, "output directory")->required();
    ft->add_option("--max-epochs", o.max_epochs, "override train.max_epochs (0 allowed)");
    ft->add_option("--max-steps", o.max_steps, "override train.max_steps");
    ft->add_option("--batch-size", o.batch_size, "override train.batch_size");
    ft->add_option("--lr", o.lr, "override train.finetune_lr");
    ft->add_option("--feature-backend", o.feature_backend, "override the feature extractor backend");
    ft->add_option("--segmenter", o.segmenter, "override the segmentation backend");
    ft->add_flag("--quiet", o.quiet, "no per-epoch progress");
    add_seed(ft);

    auto* infer = app.add_subcommand("infer", "MC-dropout super-resolution of one image");
    add_config(infer);
    infer->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
    infer->add_option("--input", o.input, "LR input image")->required()->check(CLI::ExistingFile);
    infer->add_option("--mc-passes", o.mc_passes, "stochastic passes (default 20)");
    infer->add_option("--workers", o.workers, "threads for the passes");
    infer->add_option("--out-dir", o.out_dir, "output directory")->required();
    infer->add_flag("--deterministic", o.deterministic, "single pass with dropout disabled");
    add_seed(infer);

    auto* eval = app.add_subcommand("evaluate", "PSNR/SSIM/LPIPS/FID over a manifest split");
    add_config(eval);
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
    eval->add_option("--manifest", o.manifest, "prepared manifest.json");
    eval->add_option("--split", o.split, "train, val or test")->capture_default_str()->check(
        CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--out", o.out, "report path (default report.json)");
    eval->add_option("--csv", o.csv, "per-image CSV path");
    eval->add_option("--mode", o.mode, "deterministic or mc")->check(CLI::IsMember({"deterministic", "mc"}));
    eval->add_option("--mc-passes", o.mc_passes, "passes in mc mode");
    eval->add_option("--feature-backend", o.feature_backend, "override the metric feature backend");
    add_seed(eval);

    auto* report = app.add_subcommand("report", "LR | SR | HR | uncertainty panels for a split");
    add_config(report);
    report->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
    report->add_option("--manifest", o.manifest, "prepared manifest.json");
    report->add_option("--split", o.split, "train, val or test")->capture_default_str()->check(
        CLI::IsMember({"train", "val", "test"}));
    report->add_option("--out-dir", o.out_dir, "output directory")->required();
    report->add_option("--count", o.count, "number of panels")->capture_default_str();
    report->add_option("--mc-passes", o.mc_passes, "stochastic passes (default 20)");
    report->add_flag("--no-heatmap", o.no_heatmap, "omit the uncertainty pane");
    add_seed(report);

    if (args.empty()) {
        err << app.help();
        return kExitUsage;
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const auto parsed = app.get_subcommands();
        out << (parsed.empty() ? app.help() : parsed.back()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(o, err);
        if (prepare->parsed()) return cmd_prepare(o, err);
        if (train_cmd->parsed()) return cmd_train(o, err);
        if (ft->parsed()) return cmd_finetune(o, err);
        if (infer->parsed()) return cmd_infer(o, err);
        if (eval->parsed()) return cmd_evaluate(o, err);
        if (report->parsed()) return cmd_report(o, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace suesr::cli
