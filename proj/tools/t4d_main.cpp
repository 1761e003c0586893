// t4d command-line front end: dataset synthesis, training, evaluation,
// gradient checking, kernel benchmarking and artifact inspection.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "t4d/checkpoint.hpp"
#include "t4d/config.hpp"
#include "t4d/model_gradcheck.hpp"
#include "t4d/synth.hpp"
#include "t4d/training.hpp"

using namespace t4d;
namespace fs = std::filesystem;

namespace {

// Exit codes: 0 success, 1 usage/config, 2 data, 3 numerical failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Merged view of every configurable knob. Defaults < config file < flags.
struct RunSettings {
    ModelSpec model;
    TrainConfig train;
    SynthConfig synth;
    std::string manifest;
    std::string out_dir = "out";
    std::string dtype = "f32";
    std::string split = "test";
    std::string which = "best";
    std::string resume;
    bool model_extent_given = false;
};

RunSettings settings_from(KvConfig& kv) {
    RunSettings s;
    s.model.variant = parse_variant(kv.get_string("model.variant", "cnn3d-ms"));
    s.model.initial_filters = static_cast<int>(kv.get_int("model.initial_filters", s.model.initial_filters));
    s.model.growth = static_cast<int>(kv.get_int("model.growth", s.model.growth));
    s.model.layers_per_block =
        static_cast<int>(kv.get_int("model.layers_per_block", s.model.layers_per_block));
    s.model.blocks = static_cast<int>(kv.get_int("model.blocks", s.model.blocks));
    s.model.compression = kv.get_double("model.compression", s.model.compression);
    s.model.batch_norm = kv.get_bool("model.batch_norm", s.model.batch_norm);
    s.model.gru_hidden = static_cast<int>(kv.get_int("model.gru_hidden", s.model.gru_hidden));
    s.model.kernel = static_cast<int>(kv.get_int("model.kernel", s.model.kernel));
    s.model.initial_stride = static_cast<int>(kv.get_int("model.initial_stride", s.model.initial_stride));
    s.model_extent_given = kv.has("model.input_extent");
    s.model.input_extent = static_cast<int>(kv.get_int("model.input_extent", s.model.input_extent));
    s.model.crop_length = static_cast<int>(kv.get_int("model.crop_length", s.model.crop_length));
    s.model.seed = kv.get_u64("model.seed", s.model.seed);

    s.train.epochs = static_cast<int>(kv.get_int("train.epochs", s.train.epochs));
    s.train.batch_size = static_cast<int>(kv.get_int("train.batch_size", s.train.batch_size));
    s.train.lr = kv.get_double("train.lr", s.train.lr);
    s.train.beta1 = kv.get_double("train.beta1", s.train.beta1);
    s.train.beta2 = kv.get_double("train.beta2", s.train.beta2);
    s.train.epsilon = kv.get_double("train.epsilon", s.train.epsilon);
    s.train.val_interval = static_cast<int>(kv.get_int("train.val_interval", s.train.val_interval));
    s.train.seed = kv.get_u64("train.seed", s.train.seed);
    const std::string metric = kv.get_string("train.metric", "f1");
    if (metric == "f1") s.train.metric = TrainConfig::Metric::F1;
    else if (metric == "accuracy") s.train.metric = TrainConfig::Metric::Accuracy;
    else throw ConfigError("train.metric must be f1 or accuracy");
    s.dtype = kv.get_string("train.dtype", s.dtype);
    if (s.dtype != "f32" && s.dtype != "f64")
        throw ConfigError("train.dtype must be f32 or f64");

    s.synth.train_per_class = static_cast<int>(kv.get_int("synth.train_per_class", s.synth.train_per_class));
    s.synth.val_per_class = static_cast<int>(kv.get_int("synth.val_per_class", s.synth.val_per_class));
    s.synth.test_per_class = static_cast<int>(kv.get_int("synth.test_per_class", s.synth.test_per_class));
    s.synth.extent = static_cast<int>(kv.get_int("synth.extent", s.synth.extent));
    s.synth.frames = static_cast<int>(kv.get_int("synth.frames", s.synth.frames));
    s.synth.period = kv.get_double("synth.period", s.synth.period);
    s.synth.amplitude = kv.get_double("synth.amplitude", s.synth.amplitude);
    s.synth.noise_sigma = kv.get_double("synth.noise_sigma", s.synth.noise_sigma);
    s.synth.f_lo = kv.get_double("synth.f_lo", s.synth.f_lo);
    s.synth.f_hi = kv.get_double("synth.f_hi", s.synth.f_hi);
    s.synth.mode = parse_signal_mode(kv.get_string("synth.mode", "amplitude"));
    s.synth.seed = kv.get_u64("synth.seed", s.synth.seed);

    s.manifest = kv.get_string("data.manifest", s.manifest);
    s.out_dir = kv.get_string("data.out_dir", s.out_dir);
    s.split = kv.get_string("data.split", s.split);
    s.which = kv.get_string("data.which", s.which);
    s.resume = kv.get_string("data.resume", s.resume);
    s.train.eval_stride = static_cast<int>(kv.get_int("data.stride", s.train.eval_stride));
    s.train.crop_length = s.model.crop_length;
    kv.ensure_consumed();
    return s;
}

// One flag observed on the command line overrides its config key.
struct FlagMap {
    CLI::App* cmd;
    KvConfig* kv;
    std::vector<std::pair<CLI::Option*, std::string>> bindings;

    CLI::Option* add(const std::string& flag, const std::string& key, const std::string& help) {
        CLI::Option* opt = cmd->add_option(flag, help);
        bindings.push_back({opt, key});
        return opt;
    }
    void apply() {
        for (auto& [opt, key] : bindings)
            if (opt->count() > 0) kv->set(key, opt->results().back());
    }
};

void add_model_flags(FlagMap& flags) {
    flags.add("--variant", "model.variant", "cnn3d-tc | cnn3d-ms | convgru-cnn3d | cnn4d [default: cnn3d-ms]");
    flags.add("--initial-filters", "model.initial_filters", "channels of the initial convolution [default: 16]");
    flags.add("--growth", "model.growth", "dense-block growth rate [default: 8]");
    flags.add("--layers-per-block", "model.layers_per_block", "composite layers per dense block [default: 5]");
    flags.add("--blocks", "model.blocks", "dense block count [default: 3]");
    flags.add("--compression", "model.compression", "transition compression factor (0,1] [default: 0.5]");
    flags.add("--batch-norm", "model.batch_norm", "enable batch norm (0/1) [default: 1]");
    flags.add("--gru-hidden", "model.gru_hidden", "convGRU hidden channels [default: 16]");
    flags.add("--kernel", "model.kernel", "convolution kernel extent (odd) [default: 3]");
    flags.add("--initial-stride", "model.initial_stride", "stride of the initial convolution [default: 1]");
    flags.add("--input-extent", "model.input_extent", "cubic spatial extent of crops [default: from manifest]");
    flags.add("--crop-length", "model.crop_length", "temporal crop length [default: 15]");
    flags.add("--model-seed", "model.seed", "weight initialization seed [default: 1234]");
}

int infer_extent_from_manifest(RunSettings& s) {
    const Manifest manifest = load_manifest(s.manifest);
    const Shape& shape = manifest.image_shape;
    if (!s.model_extent_given) {
        if (shape[0] != shape[1] || shape[1] != shape[2])
            throw ConfigError("dataset is not cubic; pass --input-extent explicitly");
        s.model.input_extent = static_cast<int>(shape[0]);
    }
    return static_cast<int>(shape[3]);
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw IoError(IoError::Kind::Open, path + ": cannot open for writing");
    os << text;
}

int cmd_synth(RunSettings& s) {
    const SynthSummary summary = generate_synthetic(s.synth, s.out_dir);
    const Manifest manifest = load_manifest(join_path(s.out_dir, "manifest.tsv"));
    std::cout << "dataset written to " << s.out_dir << "\n";
    for (Split split : {Split::Train, Split::Val, Split::Test}) {
        const auto counts = manifest.counts(split);
        std::cout << "split." << split_name(split) << ".total=" << counts.total
                  << " class0=" << counts.class0 << " class1=" << counts.class1 << "\n";
    }
    std::cout << "signal.mode=" << signal_mode_name(s.synth.mode) << "\n"
              << "region_variance.class0=" << summary.class0_region_variance << "\n"
              << "region_variance.class1=" << summary.class1_region_variance << "\n";
    if (s.synth.mode == SignalMode::Amplitude)
        std::cout << "region_variance.margin_met=" << (summary.margin_met ? 1 : 0) << "\n";
    return kExitOk;
}

template <typename T>
int run_train(RunSettings& s) {
    const int frames = infer_extent_from_manifest(s);
    if (frames < s.model.crop_length)
        throw ConfigError("dataset has fewer frames than the crop length");

    Model<T> model = Model<T>::build(s.model);
    TrainState<T> resume_state;
    bool resuming = false;
    if (!s.resume.empty()) {
        const ModelSpec saved = checkpoint_spec(s.resume);
        if (saved.digest() != s.model.digest()) {
            model = Model<T>::build(saved);
            std::cout << "resume: using the checkpoint's model spec\n";
        }
        resume_state = load_checkpoint(s.resume, model);
        resuming = true;
    }

    const Dataset<T> data = load_dataset<T>(s.manifest);
    fs::create_directories(s.out_dir);
    std::ofstream log(join_path(s.out_dir, "train.log"));

    std::cout << "training " << variant_name(model.spec.variant) << " (" << s.dtype << ", "
              << model.parameter_count() << " parameters) for " << s.train.epochs << " epochs\n";
    const auto result = train(model, data, s.train, resuming ? &resume_state : nullptr, &log);

    save_checkpoint(join_path(s.out_dir, "last.ckpt"), model, result.state);
    Model<T> best = Model<T>::build(model.spec);
    for (std::size_t i = 0; i < model.params.size(); ++i) best.params[i].value = model.params[i].value;
    for (std::size_t i = 0; i < model.bn_stats.size(); ++i)
        best.bn_stats[i].second = model.bn_stats[i].second;
    apply_best(best, result.state);
    save_checkpoint(join_path(s.out_dir, "best.ckpt"), best, result.state);

    std::cout << "best validation metric " << result.state.best_metric << " at epoch "
              << result.state.best_epoch << "\n";

    const auto test_records = data.split(Split::Test);
    if (!test_records.empty()) {
        const MetricsReport report =
            evaluate_subjects(best, test_records, s.model.crop_length, s.train.eval_stride);
        std::cout << "test metrics (best checkpoint):\n" << report.to_text();
        write_file(join_path(s.out_dir, "test_metrics.txt"), report.to_text());
        write_file(join_path(s.out_dir, "test_metrics.kv"), report.to_kv_lines("test."));
        std::cout << report.to_kv_lines("test.");
    } else {
        std::cout << "no test split in manifest; skipping final evaluation\n";
    }
    return kExitOk;
}

int cmd_train(RunSettings& s) {
    if (s.manifest.empty()) throw ConfigError("train: --manifest is required");
    return s.dtype == "f64" ? run_train<double>(s) : run_train<float>(s);
}

template <typename T>
int run_eval(RunSettings& s, const std::string& checkpoint) {
    const ModelSpec spec = checkpoint_spec(checkpoint);
    Model<T> model = Model<T>::build(spec);
    const TrainState<T> state = load_checkpoint(checkpoint, model);
    if (s.which == "best") {
        apply_best(model, state);
    } else if (s.which != "last") {
        throw ConfigError("--which must be best or last");
    }

    const Dataset<T> data = load_dataset<T>(s.manifest);
    std::vector<const FmriRecord<T>*> records;
    if (s.split == "all") {
        for (const auto& r : data.records) records.push_back(&r);
    } else {
        records = data.split(parse_split(s.split));
    }
    if (records.empty()) throw ConfigError("eval: split '" + s.split + "' is empty");

    const MetricsReport report =
        evaluate_subjects(model, records, spec.crop_length, s.train.eval_stride);
    std::cout << "variant=" << variant_name(spec.variant) << " split=" << s.split
              << " stride=" << s.train.eval_stride << " window=" << spec.crop_length << "\n"
              << report.to_text() << report.to_kv_lines("eval.");
    return kExitOk;
}

int cmd_eval(RunSettings& s, const std::string& checkpoint) {
    if (s.manifest.empty()) throw ConfigError("eval: --manifest is required");
    return checkpoint_dtype(checkpoint) == DType::F64 ? run_eval<double>(s, checkpoint)
                                                      : run_eval<float>(s, checkpoint);
}

int cmd_gradcheck(const std::string& variant, int extent, int frames, double tolerance,
                  int max_coords, bool inject_fault, std::uint64_t seed) {
    std::vector<Variant> variants;
    if (variant == "all") {
        variants = {Variant::Cnn3dTc, Variant::Cnn3dMs, Variant::ConvGruCnn3d, Variant::Cnn4d};
    } else {
        variants = {parse_variant(variant)};
    }
    bool all_pass = true;
    for (Variant v : variants) {
        std::cout << "gradcheck " << variant_name(v) << " (" << extent << "^3 volumes, T=" << frames
                  << ")\n";
        GradCheckOptions opt;
        opt.tolerance = tolerance;
        opt.max_coords_per_param = max_coords;
        opt.coord_seed = seed + 17;
        if (inject_fault) opt.fault_param = 0;
        const ModelGradCheck check =
            gradcheck_model(micro_gradcheck_spec(v, extent, frames, seed), opt);
        if (check.data_salt > 0)
            std::cout << "probe data re-salted " << check.data_salt
                      << " time(s) to clear the kink guard (margin " << check.kink_margin << ")\n";
        std::cout << check.report.to_string() << "\n";
        all_pass = all_pass && check.report.pass;
    }
    if (!all_pass) {
        std::cerr << "gradcheck failed\n";
        return kExitNumeric;
    }
    return kExitOk;
}

struct BenchCase {
    std::string name;
    ConvSpec spec;
    Shape x_shape;
};

std::vector<BenchCase> bench_sweep(const std::string& preset) {
    std::vector<BenchCase> sweep;
    if (preset == "none") return sweep;
    sweep.push_back({"rank3_k3", ConvSpec::isotropic(3, 2, 4, 3, 1, 1, true), {2, 2, 12, 12, 12}});
    sweep.push_back({"rank3_k1", ConvSpec::isotropic(3, 4, 8, 1, 1, 0, false), {2, 4, 12, 12, 12}});
    sweep.push_back(
        {"rank4_k3", ConvSpec::isotropic(4, 1, 4, 3, 1, 1, true), {1, 1, 10, 10, 10, 6}});
    sweep.push_back(
        {"rank4_k2_s2", ConvSpec::isotropic(4, 2, 4, 2, 2, 0, false), {1, 2, 10, 10, 10, 8}});
    if (preset == "full")
        sweep.push_back(
            {"cnn4d_first_layer", ConvSpec::isotropic(4, 1, 16, 3, 1, 1, true), {1, 1, 32, 32, 32, 15}});
    return sweep;
}

int cmd_bench(const std::string& preset, double tol) {
    const auto sweep = bench_sweep(preset);
    std::cout << "name rank in_shape t_direct_ms t_im2col_ms max_rel_err ok\n";
    bool all_ok = true;
    Rng rng(1234);
    for (const auto& bench : sweep) {
        const auto x = rand_normal<float>(rng, bench.x_shape);
        const auto w = rand_normal<float>(rng, bench.spec.weight_shape());
        const auto b = rand_normal<float>(rng, {bench.spec.out_channels});
        const Tensor<float>* bias = bench.spec.bias ? &b : nullptr;

        const auto t0 = std::chrono::steady_clock::now();
        const auto direct = conv_forward(x, w, bias, bench.spec, ConvPath::Direct);
        const auto t1 = std::chrono::steady_clock::now();
        const auto lowered = conv_forward(x, w, bias, bench.spec, ConvPath::Im2col);
        const auto t2 = std::chrono::steady_clock::now();

        double err = 0.0;
        for (std::int64_t i = 0; i < direct.numel(); ++i) {
            const double a = direct[i], c = lowered[i];
            err = std::max(err, std::abs(a - c) / std::max({std::abs(a), std::abs(c), 1e-12}));
        }
        const bool ok = err <= tol;
        all_ok = all_ok && ok;
        const double ms_direct = std::chrono::duration<double, std::milli>(t1 - t0).count();
        const double ms_lowered = std::chrono::duration<double, std::milli>(t2 - t1).count();
        std::cout << bench.name << " " << bench.spec.rank << " " << shape_str(bench.x_shape) << " "
                  << ms_direct << " " << ms_lowered << " " << err << " " << (ok ? 1 : 0) << "\n";
    }
    if (!all_ok) {
        std::cerr << "bench: path equivalence failed\n";
        return kExitNumeric;
    }
    return kExitOk;
}

int cmd_inspect(const std::vector<std::string>& paths) {
    for (const std::string& path : paths) {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw IoError(IoError::Kind::Open, path + ": cannot open");
        char magic[4] = {0, 0, 0, 0};
        probe.read(magic, 4);
        probe.close();

        std::cout << path << ":\n";
        if (std::memcmp(magic, "T4DF", 4) == 0) {
            const T4dfHeader header = read_tensor_header(path);
            std::cout << "  tensor dtype=" << (header.dtype == DType::F32 ? "f32" : "f64")
                      << " shape=" << shape_str(header.extents) << "\n";
        } else if (std::memcmp(magic, "T4CP", 4) == 0) {
            const CheckpointSummary summary = checkpoint_contents(path);
            std::cout << "  checkpoint dtype=" << (summary.dtype == DType::F32 ? "f32" : "f64")
                      << " step=" << summary.step << " epoch=" << summary.epoch
                      << " best_metric=" << summary.best_metric << "\n";
            std::istringstream spec_lines(summary.spec_text);
            std::string line;
            while (std::getline(spec_lines, line)) std::cout << "  spec." << line << "\n";
            for (const auto& t : summary.tensors)
                std::cout << "  " << t.role << " " << t.name << " " << shape_str(t.shape) << "\n";
        } else {
            const Manifest manifest = load_manifest(path);
            std::cout << "  manifest shape=" << shape_str(manifest.image_shape)
                      << " period=" << manifest.sampling_period << "\n";
            for (Split split : {Split::Train, Split::Val, Split::Test}) {
                const auto counts = manifest.counts(split);
                std::cout << "  " << split_name(split) << ": total=" << counts.total
                          << " class0=" << counts.class0 << " class1=" << counts.class1 << "\n";
            }
        }
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"t4d: 4D spatio-temporal CNNs for volumetric time-series classification"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags like --config may follow the subcommand

    std::string config_path;
    app.add_option("--config", config_path, "flat key=value configuration file")
        ->configurable(false);

    KvConfig kv;

    // synth
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    FlagMap synth_flags{synth, &kv, {}};
    synth_flags.add("--out", "data.out_dir", "output directory")->required(false);
    synth_flags.add("--seed", "synth.seed", "generator seed [default: 42]");
    synth_flags.add("--train-per-class", "synth.train_per_class", "train subjects per class [default: 8]");
    synth_flags.add("--val-per-class", "synth.val_per_class", "val subjects per class [default: 4]");
    synth_flags.add("--test-per-class", "synth.test_per_class", "test subjects per class [default: 4]");
    synth_flags.add("--extent", "synth.extent", "cubic spatial extent [default: 16]");
    synth_flags.add("--frames", "synth.frames", "temporal length [default: 64]");
    synth_flags.add("--period", "synth.period", "sampling period in seconds [default: 2]");
    synth_flags.add("--amplitude", "synth.amplitude", "class signal amplitude [default: 3]");
    synth_flags.add("--noise", "synth.noise_sigma", "noise standard deviation [default: 1]");
    synth_flags.add("--mode", "synth.mode", "amplitude | temporal-shape [default: amplitude]");

    // train
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    FlagMap train_flags{train_cmd, &kv, {}};
    train_flags.add("--manifest", "data.manifest", "dataset manifest path");
    train_flags.add("--out", "data.out_dir", "output directory");
    train_flags.add("--epochs", "train.epochs", "training epochs [default: 500]");
    train_flags.add("--batch-size", "train.batch_size", "batch size [default: 10]");
    train_flags.add("--lr", "train.lr", "Adam learning rate [default: 1e-4]");
    train_flags.add("--beta1", "train.beta1", "Adam beta1 [default: 0.9]");
    train_flags.add("--beta2", "train.beta2", "Adam beta2 [default: 0.999]");
    train_flags.add("--epsilon", "train.epsilon", "Adam epsilon [default: 1e-8]");
    train_flags.add("--val-interval", "train.val_interval", "epochs between validations [default: 5]");
    train_flags.add("--seed", "train.seed", "training seed (crops, shuffling) [default: 99]");
    train_flags.add("--metric", "train.metric", "best-model criterion: f1 | accuracy [default: f1]");
    train_flags.add("--dtype", "train.dtype", "f32 | f64 [default: f32]");
    train_flags.add("--stride", "data.stride", "sliding-window stride for validation/test [default: 8]");
    train_flags.add("--resume", "data.resume", "checkpoint to resume from");
    add_model_flags(train_flags);

    // eval
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_checkpoint;
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
    FlagMap eval_flags{eval_cmd, &kv, {}};
    eval_flags.add("--manifest", "data.manifest", "dataset manifest path");
    eval_flags.add("--split", "data.split", "train | val | test | all [default: test]");
    eval_flags.add("--stride", "data.stride", "sliding-window stride [default: 8]");
    eval_flags.add("--which", "data.which", "best | last parameters [default: best]");

    // gradcheck
    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference check of a micro-scale model (64-bit)");
    std::string gc_variant = "all";
    int gc_extent = 6, gc_frames = 3, gc_max_coords = 12;
    double gc_tolerance = 1e-6;
    std::uint64_t gc_seed = 2024;
    bool gc_fault = false;
    gradcheck_cmd->add_option("--variant", gc_variant, "variant name or 'all'");
    gradcheck_cmd->add_option("--extent", gc_extent, "cubic volume extent");
    gradcheck_cmd->add_option("--frames", gc_frames, "temporal length");
    gradcheck_cmd->add_option("--tolerance", gc_tolerance, "max relative error");
    gradcheck_cmd->add_option("--max-coords", gc_max_coords, "probed coordinates per parameter");
    gradcheck_cmd->add_option("--seed", gc_seed, "instance seed");
    gradcheck_cmd->add_flag("--inject-fault", gc_fault,
                            "corrupt one analytic gradient by 10% (must fail)");

    // bench
    CLI::App* bench_cmd = app.add_subcommand("bench", "direct vs im2col kernel timing");
    std::string bench_preset = "default";
    double bench_tol = 1e-5;
    bench_cmd->add_option("--preset", bench_preset, "default | full | none");
    bench_cmd->add_option("--check-tol", bench_tol, "path equivalence tolerance");

    // inspect
    CLI::App* inspect_cmd = app.add_subcommand("inspect", "print tensor/checkpoint/manifest headers");
    std::vector<std::string> inspect_paths;
    inspect_cmd->add_option("paths", inspect_paths, "files to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return kExitUsage;
    }

    try {
        if (!config_path.empty()) kv = KvConfig::from_file(config_path);
        for (FlagMap* flags : {&synth_flags, &train_flags, &eval_flags}) flags->apply();

        if (app.got_subcommand(synth)) {
            RunSettings s = settings_from(kv);
            return cmd_synth(s);
        }
        if (app.got_subcommand(train_cmd)) {
            RunSettings s = settings_from(kv);
            return cmd_train(s);
        }
        if (app.got_subcommand(eval_cmd)) {
            RunSettings s = settings_from(kv);
            return cmd_eval(s, eval_checkpoint);
        }
        if (app.got_subcommand(gradcheck_cmd))
            return cmd_gradcheck(gc_variant, gc_extent, gc_frames, gc_tolerance, gc_max_coords,
                                 gc_fault, gc_seed);
        if (app.got_subcommand(bench_cmd)) return cmd_bench(bench_preset, bench_tol);
        if (app.got_subcommand(inspect_cmd)) return cmd_inspect(inspect_paths);
        throw ConfigError("no command given");
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
