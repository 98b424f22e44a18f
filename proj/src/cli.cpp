#include "advdiff/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advdiff/attacks.hpp"
#include "advdiff/binary_io.hpp"
#include "advdiff/checkpoint.hpp"
#include "advdiff/data.hpp"
#include "advdiff/defenses.hpp"
#include "advdiff/diffusion.hpp"
#include "advdiff/error.hpp"
#include "advdiff/harness.hpp"
#include "advdiff/rng.hpp"
#include "advdiff/train.hpp"

namespace advdiff::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kOutputDirEnv = "ADVDIFF_OUTPUT_DIR";
constexpr const char* kVersion = "0.1.0";

// Thrown for semantically invalid settings that parsed fine.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Global {
    std::uint64_t seed = 0;
    std::string out = "out";
    bool verbose = false;
};

struct SplitOptions {
    std::string data;
    std::vector<double> fractions{10.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0};
};

struct ScheduleOptions {
    int num_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    NoiseSchedule build() const { return NoiseSchedule::linear(num_steps, beta_start, beta_end); }
};

struct AttackOptions {
    double epsilon = AttackConfig::kDefaultEpsilon;
    int steps = 20;
    /// 0 means epsilon / 4.
    double step_size = 0.0;
    bool no_random_start = false;

    AttackConfig build(std::uint64_t seed) const {
        AttackConfig a;
        a.epsilon = epsilon;
        a.num_steps = steps;
        a.step_size = step_size > 0.0 ? step_size : epsilon / 4.0;
        a.random_start = !no_random_start;
        a.seed = seed;
        return a;
    }
};

struct ClassifierTrainOptions {
    int epochs = 20;
    int batch_size = 32;
    double lr = 2e-3;
    bool global_pool_head = false;
    bool no_coord_channels = false;
    std::string output = "classifier.ckpt";
    int epsilon_ramp_epochs = 8;
};

struct Options {
    Global global;
    SyntheticSpec synth;
    std::string dataset_output = "dataset.bin";
    SplitOptions split;
    ScheduleOptions schedule;
    AttackOptions attack;
    ClassifierTrainOptions clf;
    DiffusionTrainConfig diff;
    std::string robust_output = "robust.ckpt";
    std::string predictor_output = "predictor.ckpt";
    std::string classifier_path;
    std::string predictor_path;
    std::string robust_path;
    std::string adversarial_path;
    std::string adversarial_output = "adversarial.bin";
    int n = 200;
    std::vector<std::string> defenses{"none", "noise", "purify", "adv_trained"};
    double t = 0.04;
    double t_min = 0.001;
    double t_max = 0.300;
    int points = 0;
    std::vector<double> grid;
    bool skip_clean = false;
    int index = 0;
    std::string stem;
};

// Everything a subcommand reports back for the manifest.
struct RunRecord {
    std::map<std::string, std::uint64_t> seeds;
    std::map<std::string, std::string> inputs;
    std::vector<std::string> outputs;
    json results = json::object();
};

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void log(const std::string& msg) {
    std::cerr << "[advdiff] " << msg << '\n';
}

fs::path require_file(const std::string& path, const char* what, RunRecord& rec) {
    if (path.empty()) throw ConfigError(std::string("missing --") + what);
    if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " file not found: " + path);
    rec.inputs[path] = hex64(file_hash(path));
    return path;
}

fs::path output_path(const fs::path& dir, const std::string& name) {
    const fs::path p(name);
    return p.is_absolute() ? p : dir / p;
}

struct Splits {
    Dataset full;
    LabeledImages train, val, test;
};

// The split seed comes from the dataset's own seed so every subcommand reading
// the same file sees the same partition.
Splits load_splits(const SplitOptions& opt, RunRecord& rec) {
    const fs::path path = require_file(opt.data, "data", rec);
    if (opt.fractions.size() != 3) throw ConfigError("--split needs three fractions");
    Splits s;
    s.full = load_dataset(path);
    const std::uint64_t split_seed = derive_seed(s.full.spec.seed, "split");
    rec.seeds["split"] = split_seed;
    const auto split =
        split_dataset(s.full.size(), {opt.fractions[0], opt.fractions[1], opt.fractions[2]}, split_seed);
    s.train = subset(s.full, split.train);
    s.val = subset(s.full, split.val);
    s.test = subset(s.full, split.test);
    return s;
}

LabeledImages limit(const LabeledImages& data, int n) {
    if (n <= 0 || n >= data.size()) return data;
    return head(data, n);
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

void validate_attack(const AttackConfig& a) {
    try {
        a.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
}

json curve(const std::vector<double>& v) { return json(v); }

// Subcommands ---------------------------------------------------------------

void cmd_gen_data(const Options& o, const fs::path& out, RunRecord& rec) {
    SyntheticSpec spec = o.synth;
    spec.seed = derive_seed(o.global.seed, "data");
    rec.seeds["data"] = spec.seed;
    try {
        spec.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    const Dataset d = generate_synthetic(spec);
    const fs::path path = output_path(out, o.dataset_output);
    save_dataset(d, path);
    rec.outputs.push_back(path.string());
    rec.results["num_samples"] = d.size();
    rec.results["dataset_hash"] = hex64(file_hash(path));
    log("wrote " + path.string() + " (" + std::to_string(d.size()) + " samples)");
}

TrainConfig classifier_config(const Options& o, std::uint64_t seed, int image_size) {
    TrainConfig cfg;
    cfg.epochs = o.clf.epochs;
    cfg.batch_size = o.clf.batch_size;
    cfg.learning_rate = o.clf.lr;
    cfg.seed = seed;
    cfg.model.spatial_head = !o.clf.global_pool_head;
    cfg.model.coord_channels = !o.clf.no_coord_channels;
    cfg.model.image_size = image_size;
    return cfg;
}

void write_train_curves(const TrainResult& r, const fs::path& path) {
    std::string csv = "epoch,loss,val_standard_acc,val_robust_acc\n";
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
        csv += std::to_string(e + 1) + ',' + format_real(r.loss_curve[e]) + ',';
        csv += (e < r.val_standard_acc.size() ? format_real(r.val_standard_acc[e]) : "-") + ',';
        csv += (e < r.val_robust_acc.size() ? format_real(r.val_robust_acc[e]) : "-") + '\n';
    }
    write_text_file(path, csv);
}

void run_classifier_training(const Options& o, const fs::path& out, RunRecord& rec, bool adversarial) {
    const auto data = load_splits(o.split, rec);
    // adv-train shares the classifier seed so that epsilon = 0 reproduces
    // train-classifier exactly.
    const std::uint64_t seed = derive_seed(o.global.seed, "classifier");
    rec.seeds["classifier"] = seed;
    TrainConfig cfg = classifier_config(o, seed, data.full.images.h());
    try {
        cfg.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    TrainResult result = [&] {
        if (!adversarial) return train_classifier(data.train, cfg, &data.val, o.global.verbose);
        const std::uint64_t attack_seed = derive_seed(o.global.seed, "adv-train-attack");
        rec.seeds["adv-train-attack"] = attack_seed;
        const AttackConfig attack = o.attack.build(attack_seed);
        validate_attack(attack);
        cfg.epsilon_ramp_epochs = o.clf.epsilon_ramp_epochs;
        if (cfg.epsilon_ramp_epochs < 0) throw ConfigError("--epsilon-ramp-epochs must be >= 0");
        rec.results["epsilon_ramp_epochs"] = cfg.epsilon_ramp_epochs;
        rec.results["attack"] = {{"epsilon", attack.epsilon},
                                 {"steps", attack.num_steps},
                                 {"step_size", attack.step_size},
                                 {"random_start", attack.random_start}};
        return adversarial_train(data.train, attack, cfg, &data.val, o.global.verbose);
    }();
    const fs::path path = output_path(out, adversarial ? o.robust_output : o.clf.output);
    ExtraMeta extra{{"epochs", std::to_string(cfg.epochs)}, {"lr", format_real(cfg.learning_rate)}};
    if (adversarial) extra["adv.epsilon"] = format_real(o.attack.epsilon);
    save_classifier(result.classifier, seed, path, extra);
    rec.outputs.push_back(path.string());
    const fs::path curves = out / (path.stem().string() + "_curves.csv");
    write_train_curves(result, curves);
    rec.outputs.push_back(curves.string());
    const double val_acc = accuracy(predict(result.classifier, data.val.images), data.val.labels);
    rec.results["loss_curve"] = curve(result.loss_curve);
    rec.results["val_standard_acc"] = curve(result.val_standard_acc);
    rec.results["val_robust_acc"] = curve(result.val_robust_acc);
    rec.results["final_val_accuracy"] = val_acc;
    rec.results["collapsed"] = result.collapsed;
    if (result.collapsed) log("warning: training collapsed to chance-level validation accuracy");
    log("wrote " + path.string() + " (val accuracy " + format_real(val_acc) + ")");
}

void cmd_train_diffusion(const Options& o, const fs::path& out, RunRecord& rec) {
    const auto data = load_splits(o.split, rec);
    const NoiseSchedule schedule = o.schedule.build();
    DiffusionTrainConfig cfg = o.diff;
    cfg.seed = derive_seed(o.global.seed, "diffusion");
    cfg.unet.channels = data.full.images.c();
    rec.seeds["diffusion"] = cfg.seed;
    check(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.learning_rate > 0.0, "invalid diffusion training settings");
    const auto result = train_diffusion(data.train.images, schedule, cfg, o.global.verbose);
    const fs::path path = output_path(out, o.predictor_output);
    save_predictor(result.predictor, schedule, cfg.seed, path,
                   {{"epochs", std::to_string(cfg.epochs)}, {"lr", format_real(cfg.learning_rate)}});
    rec.outputs.push_back(path.string());
    rec.results["epoch_loss"] = curve(result.epoch_loss);

    // Held-out denoising check at t = 0.10 on the validation split.
    const Images x = limit(data.val, 100).images;
    const std::uint64_t check_seed = derive_seed(o.global.seed, "diffusion-check");
    const int k = fraction_to_step(0.10, schedule);
    const double noisy = mean_squared_error(forward_diffuse(x, k, schedule, check_seed).noisy, x);
    const double purified = mean_squared_error(purify(x, 0.10, result.predictor, schedule, check_seed).images, x);
    rec.results["val_mse_noisy_t0.10"] = noisy;
    rec.results["val_mse_purified_t0.10"] = purified;
    log("wrote " + path.string() + " (val MSE at t=0.10: noisy " + format_real(noisy) + ", purified " +
                      format_real(purified) + ")");
}

ConvClassifier load_classifier_arg(const std::string& path, const char* what, RunRecord& rec) {
    return load_classifier(require_file(path, what, rec)).model;
}

void cmd_attack(const Options& o, const fs::path& out, RunRecord& rec) {
    const auto data = load_splits(o.split, rec);
    const ConvClassifier clf = load_classifier_arg(o.classifier_path, "classifier", rec);
    const std::uint64_t seed = derive_seed(o.global.seed, "attack");
    rec.seeds["attack"] = seed;
    const AttackConfig attack = o.attack.build(seed);
    validate_attack(attack);
    const LabeledImages test = limit(data.test, o.n);
    const AttackedSet set = craft_attacks(clf, test, attack);

    Dataset adv;
    adv.spec = data.full.spec;
    adv.images = set.adversarial;
    adv.labels = test.labels;
    adv.lesions.assign(static_cast<std::size_t>(test.size()), {});
    const fs::path path = output_path(out, o.adversarial_output);
    save_dataset(adv, path);
    rec.outputs.push_back(path.string());
    const double clean = accuracy(predict(clf, test.images), test.labels);
    const double robust = accuracy(predict(clf, set.adversarial), test.labels);
    rec.results = {{"epsilon", attack.epsilon},
                   {"steps", attack.num_steps},
                   {"step_size", attack.step_size},
                   {"random_start", attack.random_start},
                   {"n", test.size()},
                   {"boundary_fraction", set.boundary_fraction},
                   {"linf", set.linf},
                   {"adversarial_hash", hex64(set.hash)},
                   {"standard_accuracy", clean},
                   {"robust_accuracy", robust}};
    log("wrote " + path.string() + " (robust accuracy " + format_real(robust) + ", boundary fraction " +
                      format_real(set.boundary_fraction) + ")");
}

// Adversarial inputs either crafted now or loaded from a previous `attack`.
AttackedSet attacked_set(const Options& o, const ConvClassifier& clf, const LabeledImages& test, RunRecord& rec) {
    const std::uint64_t seed = derive_seed(o.global.seed, "attack");
    rec.seeds["attack"] = seed;
    const AttackConfig attack = o.attack.build(seed);
    validate_attack(attack);
    if (o.adversarial_path.empty()) return craft_attacks(clf, test, attack);
    const Dataset adv = load_dataset(require_file(o.adversarial_path, "adversarial", rec));
    if (!adv.images.same_shape(test.images) || adv.labels != test.labels)
        throw ShapeMismatch("adversarial file does not match the selected test set (check --n and --data)");
    AttackedSet set;
    set.adversarial = adv.images;
    set.config = attack;
    set.linf = linf_distance(adv.images, test.images);
    if (set.linf > attack.epsilon + 1e-9)
        throw ConfigError("adversarial file exceeds --epsilon (linf " + format_real(set.linf) + ")");
    set.boundary_fraction = boundary_fraction(adv.images, test.images, attack.epsilon);
    set.hash = images_hash(adv.images);
    return set;
}

void cmd_eval(const Options& o, const fs::path& out, RunRecord& rec) {
    std::vector<DefenseSpec> specs;
    const std::uint64_t defense_seed = derive_seed(o.global.seed, "defense");
    for (const auto& name : o.defenses) {
        DefenseKind kind;
        try {
            kind = parse_defense_kind(name);
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
        DefenseSpec spec{kind, kind == DefenseKind::noise || kind == DefenseKind::purify ? o.t : 0.0,
                         kind == DefenseKind::noise || kind == DefenseKind::purify ? defense_seed : 0};
        try {
            spec.validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
        specs.push_back(spec);
    }
    check(!specs.empty(), "no defenses selected");
    rec.seeds["defense"] = defense_seed;

    const auto data = load_splits(o.split, rec);
    const LabeledImages test = limit(data.test, o.n);
    const ConvClassifier clf = load_classifier_arg(o.classifier_path, "classifier", rec);
    const NoiseSchedule schedule = o.schedule.build();
    std::optional<ConvClassifier> robust;
    std::optional<EpsilonPredictor> predictor;
    auto wants = [&](DefenseKind k) {
        return std::any_of(specs.begin(), specs.end(), [k](const DefenseSpec& s) { return s.kind == k; });
    };
    if (wants(DefenseKind::adv_trained)) robust = load_classifier_arg(o.robust_path, "robust-classifier", rec);
    if (wants(DefenseKind::purify))
        predictor = load_predictor(require_file(o.predictor_path, "predictor", rec), &schedule).model;

    const AttackedSet set = attacked_set(o, clf, test, rec);
    DefenseModels models{&clf, robust ? &*robust : nullptr, predictor ? &*predictor : nullptr, &schedule};
    std::vector<EvalReport> reports;
    const std::string run_id = o.stem.empty() ? "eval" : o.stem;
    for (const auto& spec : specs) {
        reports.push_back(evaluate(models, spec, test, set, run_id));
        const auto& r = reports.back();
        log(std::string(to_string(spec.kind)) + ": standard " + format_real(r.standard_accuracy) +
                          ", robust " + format_real(r.robust_accuracy));
    }
    emit_report(reports, out, run_id);
    rec.outputs.push_back((out / (run_id + ".csv")).string());
    rec.outputs.push_back((out / (run_id + ".txt")).string());
    json rows = json::array();
    for (const auto& r : reports)
        rows.push_back({{"defense", to_string(r.defense.kind)},
                        {"t", r.defense.t},
                        {"standard_accuracy", r.standard_accuracy},
                        {"robust_accuracy", r.robust_accuracy}});
    rec.results["reports"] = rows;
    rec.results["adversarial_hash"] = hex64(set.hash);
    std::cout << reports_summary(reports);
}

void cmd_sweep(const Options& o, const fs::path& out, RunRecord& rec) {
    std::vector<double> grid = o.grid;
    if (grid.empty()) {
        check(o.t_min <= o.t_max, "--t-min must not exceed --t-max");
        grid = o.points > 0 ? geometric_grid(o.t_min, o.t_max, o.points) : default_sweep_grid();
        if (o.points <= 0) {
            std::erase_if(grid, [&](double t) { return t < o.t_min || t > o.t_max; });
        }
    }
    check(!grid.empty(), "empty sweep grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        check(grid[i] >= 0.0 && grid[i] <= 1.0, "sweep grid values must lie in [0,1]");
        check(i == 0 || grid[i] > grid[i - 1], "sweep grid must be strictly increasing");
    }
    const auto data = load_splits(o.split, rec);
    const LabeledImages test = limit(data.test, o.n);
    const ConvClassifier clf = load_classifier_arg(o.classifier_path, "classifier", rec);
    const NoiseSchedule schedule = o.schedule.build();
    const EpsilonPredictor predictor =
        load_predictor(require_file(o.predictor_path, "predictor", rec), &schedule).model;
    const AttackedSet set = attacked_set(o, clf, test, rec);
    const std::uint64_t seed = derive_seed(o.global.seed, "defense");
    rec.seeds["defense"] = seed;
    const std::string run_id = o.stem.empty() ? "sweep" : o.stem;
    const SweepResult sweep = noise_sweep(clf, predictor, schedule, test, grid, set, seed, run_id, !o.skip_clean);
    emit_report(sweep, out, run_id);
    rec.outputs.push_back((out / (run_id + ".csv")).string());
    rec.outputs.push_back((out / (run_id + ".txt")).string());
    rec.results["t_star"] = select_t_star(sweep);
    rec.results["adversarial_hash"] = hex64(set.hash);
    std::cout << sweep_summary(sweep);
}

void cmd_dump_images(const Options& o, const fs::path& out, RunRecord& rec) {
    const auto data = load_splits(o.split, rec);
    check(o.index >= 0 && o.index < data.test.size(),
          "--index must be in [0, " + std::to_string(data.test.size()) + ")");
    const ConvClassifier clf = load_classifier_arg(o.classifier_path, "classifier", rec);
    const NoiseSchedule schedule = o.schedule.build();
    const EpsilonPredictor predictor =
        load_predictor(require_file(o.predictor_path, "predictor", rec), &schedule).model;
    check(o.t >= 0.0 && o.t <= 1.0, "--t must lie in [0,1]");
    const std::uint64_t attack_seed = derive_seed(o.global.seed, "attack");
    const std::uint64_t seed = derive_seed(o.global.seed, "defense");
    rec.seeds["attack"] = attack_seed;
    rec.seeds["defense"] = seed;
    const AttackConfig attack = o.attack.build(attack_seed);
    validate_attack(attack);
    const std::vector<std::size_t> one{static_cast<std::size_t>(o.index)};
    const LabeledImages sample = subset(data.test, one);
    const auto stages =
        compute_pipeline_stages(clf, predictor, schedule, sample.images, sample.labels[0], attack, o.t, seed);
    for (const auto& p : dump_pipeline_images(stages, attack.epsilon, out)) rec.outputs.push_back(p.string());
    const auto label = [&](const Images& x) { return predicted_labels(clf, x)[0]; };
    rec.results = {{"index", o.index},
                   {"label", sample.labels[0]},
                   {"t", o.t},
                   {"steps", stages.steps},
                   {"predicted_clean", label(stages.clean)},
                   {"predicted_adversarial", label(stages.adversarial)},
                   {"predicted_purified", label(stages.purified)},
                   {"linf", linf_distance(stages.adversarial, stages.clean)}};
    log("wrote pipeline images to " + out.string());
}

// Option wiring ---------------------------------------------------------------

void add_split(CLI::App* app, Options& o) {
    app->add_option("--data", o.split.data, "Dataset file written by gen-data");
    app->add_option("--split", o.split.fractions, "Train/val/test fractions")->expected(3)->delimiter(',')->capture_default_str();
}

void add_schedule(CLI::App* app, Options& o) {
    app->add_option("--num-steps", o.schedule.num_steps, "Diffusion steps T")->capture_default_str();
    app->add_option("--beta-start", o.schedule.beta_start, "First beta of the linear schedule")->capture_default_str();
    app->add_option("--beta-end", o.schedule.beta_end, "Last beta of the linear schedule")->capture_default_str();
}

void add_attack(CLI::App* app, Options& o) {
    app->add_option("--epsilon", o.attack.epsilon, "L-inf budget")->capture_default_str();
    app->add_option("--attack-steps", o.attack.steps, "PGD iterations")->capture_default_str();
    app->add_option("--step-size", o.attack.step_size, "PGD step size (0 = epsilon/4)")->capture_default_str();
    app->add_flag("--no-random-start", o.attack.no_random_start, "Start PGD at the clean input");
}

void add_classifier_training(CLI::App* app, Options& o) {
    app->add_option("--epochs", o.clf.epochs)->capture_default_str();
    app->add_option("--batch-size", o.clf.batch_size)->capture_default_str();
    app->add_option("--lr", o.clf.lr, "Adam learning rate")->capture_default_str();
    app->add_flag("--global-pool-head", o.clf.global_pool_head, "Average-pool features before the head");
    app->add_flag("--no-coord-channels", o.clf.no_coord_channels, "Do not append coordinate planes");
}

bool flag_on_command_line(int argc, char** argv, const std::string& name) {
    for (int i = 1; i < argc; ++i) {
        const std::string_view a(argv[i]);
        if (a == name || a.starts_with(name + "=")) return true;
    }
    return false;
}

// A conversion or validation failure whose option was not typed on the
// command line must have come from the --config file.
bool bad_value_from_config(const CLI::ParseError& e, int argc, char** argv) {
    if (!dynamic_cast<const CLI::ConversionError*>(&e) && !dynamic_cast<const CLI::ValidationError*>(&e)) return false;
    if (!flag_on_command_line(argc, argv, "--config")) return false;
    const std::string msg = e.what();
    for (auto pos = msg.find("--"); pos != std::string::npos; pos = msg.find("--", pos + 2)) {
        auto end = msg.find_first_not_of("abcdefghijklmnopqrstuvwxyz0123456789-_", pos + 2);
        const std::string name = msg.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        if (name.size() > 2) return !flag_on_command_line(argc, argv, name);
    }
    return true;
}

// Global options plus the section of the subcommand that ran; readable back
// through --config.
std::string resolved_config(const Global& g, const CLI::App& sub) {
    std::string text = "seed = " + std::to_string(g.seed) + "\n";
    text += "out = \"" + g.out + "\"\n";
    text += std::string("verbose = ") + (g.verbose ? "true" : "false") + "\n";
    text += "\n[" + sub.get_name() + "]\n";
    text += sub.config_to_str(true, false);
    return text;
}

}  // namespace

int run(int argc, char** argv) {
    Options o;
    CLI::App app{"Diffusion-based adversarial purification experiments", "advdiff"};
    app.set_version_flag("--version", kVersion);
    app.set_config("--config", "", "TOML config file; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--seed", o.global.seed, "Master seed")->capture_default_str();
    app.add_option("-o,--out", o.global.out, "Output directory (env " + std::string(kOutputDirEnv) + ")")
        ->capture_default_str();
    app.add_flag("-v,--verbose", o.global.verbose, "Per-epoch progress on stderr");

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic lesion dataset");
    gen->add_option("--num-samples", o.synth.num_samples)->capture_default_str();
    gen->add_option("--image-size", o.synth.image_size)->capture_default_str();
    gen->add_option("--channels", o.synth.channels)->capture_default_str();
    gen->add_option("--center-size", o.synth.center_size)->capture_default_str();
    gen->add_option("--radius-min", o.synth.radius_min)->capture_default_str();
    gen->add_option("--radius-max", o.synth.radius_max)->capture_default_str();
    gen->add_option("--amplitude-min", o.synth.amplitude_min)->capture_default_str();
    gen->add_option("--amplitude-max", o.synth.amplitude_max)->capture_default_str();
    gen->add_option("--profile-width", o.synth.profile_width, "Lesion profile std-dev / radius")->capture_default_str();
    gen->add_option("--background-mean", o.synth.background_mean)->capture_default_str();
    gen->add_option("--background-std", o.synth.background_std)->capture_default_str();
    gen->add_option("--background-smoothing", o.synth.background_smoothing)->capture_default_str();
    gen->add_option("--pixel-noise-std", o.synth.pixel_noise_std)->capture_default_str();
    gen->add_option("--max-distractors", o.synth.max_distractors)->capture_default_str();
    gen->add_option("--output", o.dataset_output, "Dataset file name")->capture_default_str();

    auto* tc = app.add_subcommand("train-classifier", "Train the undefended classifier");
    add_split(tc, o);
    add_classifier_training(tc, o);
    tc->add_option("--output", o.clf.output, "Checkpoint file name")->capture_default_str();

    auto* td = app.add_subcommand("train-diffusion", "Train the noise predictor");
    add_split(td, o);
    add_schedule(td, o);
    td->add_option("--epochs", o.diff.epochs)->capture_default_str();
    td->add_option("--batch-size", o.diff.batch_size)->capture_default_str();
    td->add_option("--lr", o.diff.learning_rate)->capture_default_str();
    td->add_option("--clip-norm", o.diff.clip_norm, "Gradient norm clip (0 disables)")->capture_default_str();
    td->add_option("--base-width", o.diff.unet.base_width)->capture_default_str();
    td->add_option("--output", o.predictor_output, "Checkpoint file name")->capture_default_str();

    auto* at = app.add_subcommand("adv-train", "Adversarially train a classifier");
    add_split(at, o);
    add_classifier_training(at, o);
    add_attack(at, o);
    at->add_option("--epsilon-ramp-epochs", o.clf.epsilon_ramp_epochs,
                   "Grow the training attack from 0 to epsilon over this many epochs")
        ->capture_default_str();
    at->add_option("--output", o.robust_output, "Checkpoint file name")->capture_default_str();

    auto* ak = app.add_subcommand("attack", "Craft PGD examples against a classifier");
    add_split(ak, o);
    add_attack(ak, o);
    ak->add_option("--classifier", o.classifier_path)->required();
    ak->add_option("-n,--n", o.n, "Test samples (0 = all)")->capture_default_str();
    ak->add_option("--output", o.adversarial_output)->capture_default_str();

    auto* ev = app.add_subcommand("eval", "Standard and robust accuracy per defense");
    add_split(ev, o);
    add_attack(ev, o);
    add_schedule(ev, o);
    ev->add_option("--classifier", o.classifier_path)->required();
    ev->add_option("--predictor", o.predictor_path, "Needed by purify");
    ev->add_option("--robust-classifier", o.robust_path, "Needed by adv_trained");
    ev->add_option("--adversarial", o.adversarial_path, "Reuse the output of `attack`");
    ev->add_option("--defenses", o.defenses, "Subset of none,noise,purify,adv_trained")
        ->delimiter(',')
        ->capture_default_str();
    ev->add_option("--t", o.t, "Noise fraction for noise and purify")->capture_default_str();
    ev->add_option("-n,--n", o.n, "Test samples (0 = all)")->capture_default_str();
    ev->add_option("--run-id", o.stem, "Run id and report file stem");

    auto* sw = app.add_subcommand("sweep", "Robust accuracy of purification over noise levels");
    add_split(sw, o);
    add_attack(sw, o);
    add_schedule(sw, o);
    sw->add_option("--classifier", o.classifier_path)->required();
    sw->add_option("--predictor", o.predictor_path)->required();
    sw->add_option("--adversarial", o.adversarial_path, "Reuse the output of `attack`");
    sw->add_option("--t-min", o.t_min)->capture_default_str();
    sw->add_option("--t-max", o.t_max)->capture_default_str();
    sw->add_option("--points", o.points, "Geometric grid size (0 = built-in grid)")->capture_default_str();
    sw->add_option("--grid", o.grid, "Explicit comma-separated grid")->delimiter(',');
    sw->add_flag("--skip-clean", o.skip_clean, "Only measure robust accuracy");
    sw->add_option("-n,--n", o.n, "Test samples (0 = all)")->default_val(100);
    sw->add_option("--run-id", o.stem, "Run id and report file stem");

    auto* di = app.add_subcommand("dump-images", "Write clean/adversarial/noised/purified images");
    add_split(di, o);
    add_attack(di, o);
    add_schedule(di, o);
    di->add_option("--classifier", o.classifier_path)->required();
    di->add_option("--predictor", o.predictor_path)->required();
    di->add_option("--index", o.index, "Test-set index")->capture_default_str();
    di->add_option("--t", o.t)->capture_default_str();

    if (argc <= 1) {
        std::cerr << app.help();
        return kUsage;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const CLI::FileError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const CLI::ParseError& e) {
        if (bad_value_from_config(e, argc, argv)) {
            std::cerr << "config error: " << e.what() << '\n';
            return kConfig;
        }
        std::cerr << "usage error: " << e.what() << '\n' << "run `advdiff --help` for usage\n";
        return kUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    // Output directory: explicit flag, then environment, then config file.
    if (!flag_on_command_line(argc, argv, "--out") && !flag_on_command_line(argc, argv, "-o")) {
        if (const char* env = std::getenv(kOutputDirEnv); env && *env) {
            o.global.out = env;
            auto* opt = app.get_option("--out");
            opt->clear();
            opt->add_result(o.global.out);
        }
    }
    const fs::path out(o.global.out);

    RunRecord rec;
    try {
        fs::create_directories(out);
        write_text_file(out / (name + ".config.toml"), resolved_config(o.global, *sub));
        if (name == "gen-data") cmd_gen_data(o, out, rec);
        else if (name == "train-classifier") run_classifier_training(o, out, rec, false);
        else if (name == "adv-train") run_classifier_training(o, out, rec, true);
        else if (name == "train-diffusion") cmd_train_diffusion(o, out, rec);
        else if (name == "attack") cmd_attack(o, out, rec);
        else if (name == "eval") cmd_eval(o, out, rec);
        else if (name == "sweep") cmd_sweep(o, out, rec);
        else if (name == "dump-images") cmd_dump_images(o, out, rec);

        json manifest{{"tool", "advdiff"},
                      {"version", kVersion},
                      {"subcommand", name},
                      {"master_seed", o.global.seed},
                      {"config", name + ".config.toml"},
                      {"seeds", rec.seeds},
                      {"inputs", rec.inputs},
                      {"outputs", rec.outputs},
                      {"results", rec.results}};
        write_text_file(out / (name + ".manifest.json"), manifest.dump(2) + "\n");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kOk;
}

}  // namespace advdiff::cli
