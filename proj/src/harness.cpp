#include "advdiff/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "advdiff/binary_io.hpp"
#include "advdiff/checkpoint.hpp"
#include "advdiff/diffusion.hpp"
#include "advdiff/error.hpp"
#include "advdiff/rng.hpp"

namespace advdiff {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct Tally {
    std::array<int, 2> counts{}, correct{};
    double accuracy() const {
        const int n = counts[0] + counts[1];
        return n == 0 ? 0.0 : static_cast<double>(correct[0] + correct[1]) / n;
    }
};

Tally tally(std::span<const ClassProbs> probs, std::span<const int> labels) {
    Tally t;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        ++t.counts[labels[i]];
        t.correct[labels[i]] += argmax(probs[i]) == labels[i];
    }
    return t;
}

constexpr PublishedReference kPublished[] = {
    {"none", 0.87, 0.06},
    {"noise", 0.66, 0.58},
    {"adv_trained", 0.70, 0.57},
    {"purify", -1.0, 0.75},
};

std::string published_block() {
    std::ostringstream os;
    os << "\nReference: PCam/ResNet101 study, not this run\n";
    os << "  defense       standard  robust\n";
    for (const auto& r : kPublished) {
        char line[128];
        std::snprintf(line, sizeof line, "  %-12s  %-8s  %.2f\n", r.defense,
                      r.standard < 0 ? "~vanilla" : fixed(r.standard, 2).c_str(), r.robust);
        os << line;
    }
    os << "  (adv_trained reference used GoogLeNet; vanilla/noise/purify used ResNet101)\n";
    return os.str();
}

}  // namespace

std::span<const PublishedReference> published_reference() { return kPublished; }

std::uint64_t images_hash(const Images& x) {
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(x.data()), x.size() * sizeof(double)));
}

AttackedSet craft_attacks(const BinaryClassifier& undefended, const LabeledImages& test, const AttackConfig& config) {
    if (test.size() == 0) throw InvalidArgument("craft_attacks: empty test set");
    const auto start = Clock::now();
    AttackedSet out;
    out.config = config;
    out.adversarial = pgd_attack(undefended, test.images, test.labels, config);
    out.boundary_fraction = boundary_fraction(out.adversarial, test.images, config.epsilon);
    out.linf = linf_distance(out.adversarial, test.images);
    out.hash = images_hash(out.adversarial);
    out.seconds = seconds_since(start);
    return out;
}

EvalReport evaluate(const DefenseModels& models, const DefenseSpec& defense, const LabeledImages& test,
                    const AttackedSet& attacked, const std::string& run_id) {
    if (test.size() == 0) throw InvalidArgument("evaluate: empty test set");
    if (!attacked.adversarial.same_shape(test.images))
        throw ShapeMismatch("evaluate: adversarial set does not match the test set");
    const auto start = Clock::now();
    const auto clean = tally(defended_classify(models, defense, test.images), test.labels);
    const auto adv = tally(defended_classify(models, defense, attacked.adversarial), test.labels);
    EvalReport r;
    r.run_id = run_id;
    r.defense = defense;
    r.epsilon = attacked.config.epsilon;
    r.attack_steps = attacked.config.num_steps;
    r.attack_seed = attacked.config.seed;
    r.n = test.size();
    r.standard_accuracy = clean.accuracy();
    r.robust_accuracy = adv.accuracy();
    r.class_counts = clean.counts;
    r.standard_correct = clean.correct;
    r.robust_correct = adv.correct;
    r.boundary_fraction = attacked.boundary_fraction;
    r.adversarial_hash = attacked.hash;
    r.seconds = seconds_since(start);
    return r;
}

EvalReport evaluate(const DefenseModels& models, const DefenseSpec& defense, const LabeledImages& test,
                    const AttackConfig& attack, const std::string& run_id) {
    if (!models.classifier) throw InvalidArgument("evaluate: classifier required");
    if (test.size() == 0) throw InvalidArgument("evaluate: empty test set");
    return evaluate(models, defense, test, craft_attacks(*models.classifier, test, attack), run_id);
}

std::vector<double> default_sweep_grid() { return {0.001, 0.005, 0.01, 0.02, 0.04, 0.06, 0.10, 0.15, 0.20, 0.30}; }

std::vector<double> geometric_grid(double t_min, double t_max, int count) {
    if (!(t_min > 0.0) || !(t_max <= 1.0) || !(t_min < t_max) || count < 2)
        throw InvalidArgument("geometric_grid: need 0 < t_min < t_max <= 1 and count >= 2");
    std::vector<double> grid(count);
    for (int i = 0; i < count; ++i)
        grid[i] = t_min * std::pow(t_max / t_min, static_cast<double>(i) / (count - 1));
    grid.front() = t_min;
    grid.back() = t_max;
    return grid;
}

SweepResult noise_sweep(const BinaryClassifier& classifier, const EpsilonPredictor& predictor,
                        const NoiseSchedule& schedule, const LabeledImages& test, std::span<const double> grid,
                        const AttackedSet& attacked, std::uint64_t seed, const std::string& run_id,
                        bool include_clean) {
    if (grid.empty()) throw InvalidArgument("noise_sweep: empty grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) throw InvalidArgument("noise_sweep: grid outside [0,1]");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw InvalidArgument("noise_sweep: grid must be strictly increasing");
    }
    if (test.size() == 0) throw InvalidArgument("noise_sweep: empty test set");
    if (!attacked.adversarial.same_shape(test.images))
        throw ShapeMismatch("noise_sweep: adversarial set does not match the test set");
    SweepResult out;
    out.run_id = run_id;
    out.attack = attacked.config;
    out.n = test.size();
    out.boundary_fraction = attacked.boundary_fraction;
    out.adversarial_hash = attacked.hash;
    for (double t : grid) {
        const auto start = Clock::now();
        SweepRow row;
        row.t = t;
        row.seed = seed;
        const auto adv = purify(attacked.adversarial, t, predictor, schedule, seed);
        row.steps = adv.reverse_steps;
        row.robust_accuracy = accuracy(predict(classifier, adv.images), test.labels);
        if (include_clean)
            row.standard_accuracy =
                accuracy(predict(classifier, purify(test.images, t, predictor, schedule, seed).images), test.labels);
        row.seconds = seconds_since(start);
        out.rows.push_back(row);
    }
    return out;
}

double select_t_star(const SweepResult& sweep) {
    if (sweep.rows.empty()) throw InvalidArgument("select_t_star: empty sweep");
    const SweepRow* best = &sweep.rows.front();
    for (const auto& r : sweep.rows)
        if (r.robust_accuracy > best->robust_accuracy) best = &r;
    return best->t;
}

std::string reports_csv(std::span<const EvalReport> reports, Timing timing) {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (const auto& r : reports) {
        os << r.run_id << ',' << to_string(r.defense.kind) << ',' << format_real(r.defense.t) << ','
           << format_real(r.epsilon) << ',' << r.attack_steps << ',' << r.n << ','
           << format_real(r.standard_accuracy) << ',' << format_real(r.robust_accuracy) << ','
           << format_real(r.boundary_fraction) << ',' << (timing == Timing::record ? fixed(r.seconds, 3) : "-")
           << ',' << r.defense.seed << '\n';
    }
    return os.str();
}

std::string sweep_csv(const SweepResult& s, Timing timing) {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (const auto& r : s.rows) {
        os << s.run_id << ",purify," << format_real(r.t) << ',' << format_real(s.attack.epsilon) << ','
           << s.attack.num_steps << ',' << s.n << ','
           << (r.standard_accuracy ? format_real(*r.standard_accuracy) : "-") << ','
           << format_real(r.robust_accuracy) << ',' << format_real(s.boundary_fraction) << ','
           << (timing == Timing::record ? fixed(r.seconds, 3) : "-") << ',' << r.seed << '\n';
    }
    return os.str();
}

std::string reports_summary(std::span<const EvalReport> reports) {
    std::ostringstream os;
    os << "Standard vs robust accuracy (this run)\n";
    os << "  defense       t       n     standard  robust   class0 std/adv  class1 std/adv\n";
    for (const auto& r : reports) {
        char line[256];
        std::snprintf(line, sizeof line, "  %-12s  %-6s  %-5d %-8.3f  %-7.3f  %d/%d of %d      %d/%d of %d\n",
                      std::string(to_string(r.defense.kind)).c_str(),
                      r.defense.uses_noise_level() ? fixed(r.defense.t, 3).c_str() : "-", r.n, r.standard_accuracy,
                      r.robust_accuracy, r.standard_correct[0], r.robust_correct[0], r.class_counts[0],
                      r.standard_correct[1], r.robust_correct[1], r.class_counts[1]);
        os << line;
    }
    if (!reports.empty()) {
        const auto& r = reports.front();
        char line[256];
        std::snprintf(line, sizeof line,
                      "Attack: L-inf PGD eps=%.5f steps=%d seed=%llu boundary_fraction=%.4f adversarial_hash=%016llx\n",
                      r.epsilon, r.attack_steps, static_cast<unsigned long long>(r.attack_seed), r.boundary_fraction,
                      static_cast<unsigned long long>(r.adversarial_hash));
        os << line;
    }
    os << published_block();
    return os.str();
}

std::string sweep_summary(const SweepResult& s) {
    std::ostringstream os;
    os << "Purification noise-level sweep (this run), n=" << s.n << ", eps=" << fixed(s.attack.epsilon, 5) << "\n";
    os << "  t        steps  robust   standard  seconds\n";
    for (const auto& r : s.rows) {
        char line[160];
        const std::string standard = r.standard_accuracy ? fixed(*r.standard_accuracy, 3) : "-";
        std::snprintf(line, sizeof line, "  %-7.3f  %-5d  %-7.3f  %-8s  %.2f\n", r.t, r.steps, r.robust_accuracy,
                      standard.c_str(), r.seconds);
        os << line;
    }
    if (!s.rows.empty()) os << "Selected t* (best robust accuracy, smallest t on ties): " << select_t_star(s) << "\n";
    os << "\nReference: PCam/ResNet101 study, not this run: optimum reported at t*=0.04 (40 steps),\n"
          "  with performance dropping beyond t=0.20.\n";
    return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

void emit_report(std::span<const EvalReport> reports, const std::filesystem::path& dir, const std::string& stem,
                 Timing timing) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / (stem + ".csv"), reports_csv(reports, timing));
    write_text_file(dir / (stem + ".txt"), reports_summary(reports));
}

void emit_report(const SweepResult& sweep, const std::filesystem::path& dir, const std::string& stem, Timing timing) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / (stem + ".csv"), sweep_csv(sweep, timing));
    write_text_file(dir / (stem + ".txt"), sweep_summary(sweep));
}

PipelineStages compute_pipeline_stages(const BinaryClassifier& classifier, const EpsilonPredictor& predictor,
                                       const NoiseSchedule& schedule, const Images& x, int label,
                                       const AttackConfig& attack, double t, std::uint64_t seed) {
    if (x.n() != 1) throw InvalidArgument("compute_pipeline_stages: exactly one example expected");
    PipelineStages s;
    s.clean = x;
    const int labels[] = {label};
    s.adversarial = pgd_attack(classifier, x, labels, attack);
    // purify() draws the forward noise first from the same per-example stream,
    // so `noised` is exactly the state the reverse chain starts from.
    s.noised = forward_diffuse(s.adversarial, fraction_to_step(t, schedule), schedule, seed).noisy;
    auto p = purify(s.adversarial, t, predictor, schedule, seed);
    s.purified = std::move(p.images);
    s.steps = p.reverse_steps;
    return s;
}

void write_netpbm(const Images& image, const std::filesystem::path& path) {
    if (image.n() != 1 || (image.c() != 1 && image.c() != 3))
        throw InvalidArgument("write_netpbm: need a single 1- or 3-channel image");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << (image.c() == 1 ? "P5" : "P6") << '\n' << image.w() << ' ' << image.h() << "\n65535\n";
    for (int i = 0; i < image.h(); ++i)
        for (int j = 0; j < image.w(); ++j)
            for (int c = 0; c < image.c(); ++c) {
                const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(image(0, c, i, j), 0.0, 1.0) * 65535));
                const unsigned char be[2] = {static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v & 0xff)};
                out.write(reinterpret_cast<const char*>(be), 2);
            }
    if (!out) throw IoError("failed writing " + path.string());
}

Images read_netpbm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    if ((magic != "P5" && magic != "P6") || maxval != 65535 || w < 1 || h < 1)
        throw CorruptFile(path.string() + ": unsupported netpbm file");
    const int c = magic == "P5" ? 1 : 3;
    Images img(1, c, h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int ch = 0; ch < c; ++ch) {
                unsigned char be[2];
                if (!in.read(reinterpret_cast<char*>(be), 2)) throw CorruptFile(path.string() + ": truncated");
                img(0, ch, i, j) = ((be[0] << 8) | be[1]) / 65535.0;
            }
    return img;
}

std::vector<std::filesystem::path> dump_pipeline_images(const PipelineStages& s, double epsilon,
                                                        const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    Images noised_view = s.noised;
    for (double& v : noised_view.values()) v = std::clamp(v, 0.0, 1.0);
    Images delta(s.clean.shape());
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const double d = s.adversarial.values()[i] - s.clean.values()[i];
        delta.values()[i] = epsilon > 0 ? 0.5 + 0.5 * d / epsilon : 0.5;
    }
    const std::pair<const char*, const Images*> panels[] = {{"clean", &s.clean},
                                                            {"adversarial", &s.adversarial},
                                                            {"noised", &noised_view},
                                                            {"purified", &s.purified},
                                                            {"delta", &delta}};
    std::vector<std::filesystem::path> written;
    for (const auto& [name, img] : panels) {
        written.push_back(dir / (std::string(name) + ".pgm"));
        if (img->c() == 3) written.back().replace_extension(".ppm");
        write_netpbm(*img, written.back());
    }
    // Side-by-side strip with a 2-pixel white gutter.
    const int gap = 2, w = s.clean.w(), h = s.clean.h(), c = s.clean.c();
    const int n_panels = static_cast<int>(std::size(panels));
    Images strip(1, c, h, n_panels * w + (n_panels - 1) * gap, 1.0);
    for (int p = 0; p < n_panels; ++p)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) strip(0, ch, i, p * (w + gap) + j) = (*panels[p].second)(0, ch, i, j);
    written.push_back(dir / (c == 3 ? "pipeline.ppm" : "pipeline.pgm"));
    write_netpbm(strip, written.back());
    return written;
}

}  // namespace advdiff
