#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "advdiff/attacks.hpp"
#include "advdiff/checkpoint.hpp"
#include "advdiff/cli.hpp"
#include "advdiff/data.hpp"
#include "advdiff/defenses.hpp"
#include "advdiff/diffusion.hpp"
#include "advdiff/error.hpp"
#include "advdiff/harness.hpp"
#include "advdiff/train.hpp"

namespace py = pybind11;
using namespace advdiff;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Images to_images(const Array& a) {
    if (a.ndim() != 4) throw InvalidArgument("expected an (N, C, H, W) array");
    Images x(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
             static_cast<int>(a.shape(3)));
    std::copy_n(a.data(), x.size(), x.data());
    return x;
}

Array to_array(const Images& x) {
    Array a({x.n(), x.c(), x.h(), x.w()});
    std::copy_n(x.data(), x.size(), a.mutable_data());
    return a;
}

std::vector<int> to_labels(const LabelArray& a) {
    if (a.ndim() != 1) throw InvalidArgument("labels must be one-dimensional");
    return {a.data(), a.data() + a.size()};
}

py::array_t<double> probs_array(const std::vector<ClassProbs>& p) {
    py::array_t<double> a({static_cast<py::ssize_t>(p.size()), py::ssize_t{2}});
    auto m = a.mutable_unchecked<2>();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m(i, 0) = p[i][0];
        m(i, 1) = p[i][1];
    }
    return a;
}

LabeledImages labeled(const Array& x, const LabelArray& y) {
    LabeledImages d{to_images(x), to_labels(y)};
    if (static_cast<int>(d.labels.size()) != d.images.n()) throw ShapeMismatch("one label per image expected");
    return d;
}

AttackConfig attack_config(double epsilon, int steps, std::optional<double> step_size, bool random_start,
                           std::uint64_t seed) {
    AttackConfig c = AttackConfig::with_epsilon(epsilon, seed);
    c.num_steps = steps;
    if (step_size) c.step_size = *step_size;
    c.random_start = random_start;
    return c;
}

py::dict train_result(TrainResult r) {
    py::dict d;
    d["classifier"] = std::move(r.classifier);
    d["loss"] = r.loss_curve;
    d["val_standard_acc"] = r.val_standard_acc;
    d["val_robust_acc"] = r.val_robust_acc;
    d["collapsed"] = r.collapsed;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Diffusion purification against PGD attacks on synthetic lesion images";

    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<ShapeMismatch>(m, "ShapeMismatch", PyExc_ValueError);
    py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_static("linear", &NoiseSchedule::linear, py::arg("num_steps") = NoiseSchedule::kDefaultSteps,
                    py::arg("beta_start") = NoiseSchedule::kDefaultBetaStart,
                    py::arg("beta_end") = NoiseSchedule::kDefaultBetaEnd)
        .def_property_readonly("num_steps", &NoiseSchedule::num_steps)
        .def_property_readonly("betas", &NoiseSchedule::betas)
        .def_property_readonly("alphas", &NoiseSchedule::alphas)
        .def_property_readonly("alpha_bars", &NoiseSchedule::alpha_bars)
        .def("step", [](const NoiseSchedule& s, double t) { return fraction_to_step(t, s); }, py::arg("t"));

    m.def(
        "generate_synthetic",
        [](int num_samples, std::uint64_t seed, int image_size, int center_size, double pixel_noise_std) {
            SyntheticSpec spec;
            spec.center_size = center_size;
            spec.num_samples = num_samples;
            spec.seed = seed;
            spec.image_size = image_size;
            spec.pixel_noise_std = pixel_noise_std;
            auto d = generate_synthetic(spec);
            return py::make_tuple(to_array(d.images), py::array(py::cast(d.labels)));
        },
        py::arg("num_samples") = 2400, py::arg("seed") = 0, py::arg("image_size") = 32,
        py::arg("center_size") = SyntheticSpec{}.center_size, py::arg("pixel_noise_std") = SyntheticSpec{}.pixel_noise_std,
        "Images (N,1,H,W) in [0,1] and 0/1 labels.");

    m.def(
        "forward_diffuse",
        [](const Array& x, int k, const NoiseSchedule& s, std::uint64_t seed) {
            auto d = forward_diffuse(to_images(x), k, s, seed);
            return py::make_tuple(to_array(d.noisy), to_array(d.noise));
        },
        py::arg("x"), py::arg("k"), py::arg("schedule"), py::arg("seed") = 0);

    py::class_<ConvClassifier>(m, "Classifier")
        .def(py::init([](int image_size, bool spatial_head, std::uint64_t seed) {
                 ClassifierConfig c;
                 c.image_size = image_size;
                 c.spatial_head = spatial_head;
                 return ConvClassifier(c, seed);
             }),
             py::arg("image_size") = 32, py::arg("spatial_head") = true, py::arg("seed") = 0)
        .def("logits",
             [](const ConvClassifier& c, const Array& x) {
                 std::vector<ClassProbs> z;
                 for (const auto& l : c.logits(to_images(x))) z.push_back(l);
                 return probs_array(z);
             })
        .def("predict_proba", [](const ConvClassifier& c, const Array& x) { return probs_array(predict(c, to_images(x))); })
        .def("predict", [](const ConvClassifier& c, const Array& x) { return predicted_labels(c, to_images(x)); })
        .def("loss_and_input_grad",
             [](const ConvClassifier& c, const Array& x, const LabelArray& y) {
                 Images g;
                 const auto labels = to_labels(y);
                 const double loss = c.loss_and_input_grad(to_images(x), labels, g);
                 return py::make_tuple(loss, to_array(g));
             })
        .def_property_readonly("num_parameters", [](const ConvClassifier& c) { return c.net().params().total(); })
        .def("save", [](const ConvClassifier& c, const std::filesystem::path& p, std::uint64_t seed) {
            save_classifier(c, seed, p);
        }, py::arg("path"), py::arg("train_seed") = 0)
        .def_static("load", [](const std::filesystem::path& p) { return load_classifier(p).model; });

    m.def(
        "train_classifier",
        [](const Array& x, const LabelArray& y, int epochs, int batch_size, double lr, std::uint64_t seed,
           std::optional<Array> val_x, std::optional<LabelArray> val_y, std::optional<double> adversarial_epsilon,
           int attack_steps, int epsilon_ramp_epochs, std::uint64_t attack_seed, bool verbose) {
            TrainConfig cfg;
            cfg.epsilon_ramp_epochs = epsilon_ramp_epochs;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.learning_rate = lr;
            cfg.seed = seed;
            const auto train = labeled(x, y);
            cfg.model.image_size = train.images.h();
            std::optional<LabeledImages> val;
            if (val_x && val_y) val = labeled(*val_x, *val_y);
            std::optional<TrainResult> r;
            {
                py::gil_scoped_release release;
                const LabeledImages* v = val ? &*val : nullptr;
                if (adversarial_epsilon)
                    r.emplace(adversarial_train(
                        train, attack_config(*adversarial_epsilon, attack_steps, std::nullopt, true, attack_seed), cfg,
                        v, verbose));
                else
                    r.emplace(train_classifier(train, cfg, v, verbose));
            }
            return train_result(std::move(*r));
        },
        py::arg("images"), py::arg("labels"), py::arg("epochs") = 20, py::arg("batch_size") = 32,
        py::arg("learning_rate") = TrainConfig{}.learning_rate, py::arg("seed") = 0, py::arg("val_images") = py::none(),
        py::arg("val_labels") = py::none(), py::arg("adversarial_epsilon") = py::none(), py::arg("attack_steps") = 20,
        py::arg("epsilon_ramp_epochs") = 0, py::arg("attack_seed") = 0, py::arg("verbose") = false,
        "Plain training, or min-max training against PGD when adversarial_epsilon is given.");

    py::class_<EpsilonPredictor>(m, "Predictor")
        .def(py::init([](int base_width, std::uint64_t seed) {
                 UNetConfig c;
                 c.base_width = base_width;
                 return EpsilonPredictor(c, seed);
             }),
             py::arg("base_width") = 32, py::arg("seed") = 0)
        .def_property_readonly("num_parameters", [](const EpsilonPredictor& p) { return p.params().total(); })
        .def("save", [](const EpsilonPredictor& p, const std::filesystem::path& path, const NoiseSchedule& s,
                        std::uint64_t seed) { save_predictor(p, s, seed, path); },
             py::arg("path"), py::arg("schedule"), py::arg("train_seed") = 0)
        .def_static("load", [](const std::filesystem::path& p) {
            auto l = load_predictor(p);
            return py::make_tuple(std::move(l.model), std::move(l.schedule));
        });

    m.def(
        "train_diffusion",
        [](const Array& x, const NoiseSchedule& s, int epochs, int batch_size, double lr, int base_width,
           std::uint64_t seed, bool verbose) {
            DiffusionTrainConfig cfg;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.learning_rate = lr;
            cfg.unet.base_width = base_width;
            cfg.seed = seed;
            const auto images = to_images(x);
            std::optional<DiffusionTrainResult> r;
            {
                py::gil_scoped_release release;
                r.emplace(train_diffusion(images, s, cfg, verbose));
            }
            return py::make_tuple(std::move(r->predictor), r->epoch_loss);
        },
        py::arg("images"), py::arg("schedule"), py::arg("epochs") = DiffusionTrainConfig{}.epochs, py::arg("batch_size") = 32,
        py::arg("learning_rate") = 1e-3, py::arg("base_width") = 32, py::arg("seed") = 0, py::arg("verbose") = false);

    m.def(
        "pgd_attack",
        [](const ConvClassifier& c, const Array& x, const LabelArray& y, double epsilon, int steps,
           std::optional<double> step_size, bool random_start, std::uint64_t seed) {
            const auto images = to_images(x);
            const auto labels = to_labels(y);
            const auto cfg = attack_config(epsilon, steps, step_size, random_start, seed);
            Images adv;
            {
                py::gil_scoped_release release;
                adv = pgd_attack(c, images, labels, cfg);
            }
            return to_array(adv);
        },
        py::arg("classifier"), py::arg("images"), py::arg("labels"), py::arg("epsilon") = AttackConfig::kDefaultEpsilon,
        py::arg("steps") = 20, py::arg("step_size") = py::none(), py::arg("random_start") = true,
        py::arg("seed") = 0, "L-inf PGD; step_size defaults to epsilon/4.");

    m.def(
        "purify",
        [](const Array& x, double t, const EpsilonPredictor& p, const NoiseSchedule& s, std::uint64_t seed) {
            const auto images = to_images(x);
            Images out;
            {
                py::gil_scoped_release release;
                out = purify(images, t, p, s, seed).images;
            }
            return to_array(out);
        },
        py::arg("images"), py::arg("t"), py::arg("predictor"), py::arg("schedule"), py::arg("seed") = 0);

    m.def(
        "noise_defense",
        [](const ConvClassifier& c, const Array& x, double t, const NoiseSchedule& s, std::uint64_t seed) {
            return probs_array(noise_defense_classify(c, to_images(x), t, s, seed));
        },
        py::arg("classifier"), py::arg("images"), py::arg("t"), py::arg("schedule"), py::arg("seed") = 0,
        "Class probabilities of the forward-diffused, clamped input.");

    m.def(
        "accuracy",
        [](const py::array_t<double>& probs, const LabelArray& y) {
            auto p = probs.unchecked<2>();
            std::vector<ClassProbs> v(p.shape(0));
            for (py::ssize_t i = 0; i < p.shape(0); ++i) v[i] = {p(i, 0), p(i, 1)};
            return accuracy(v, to_labels(y));
        },
        py::arg("probs"), py::arg("labels"));

    m.def("boundary_fraction", [](const Array& adv, const Array& x, double eps) {
        return boundary_fraction(to_images(adv), to_images(x), eps);
    });
    m.def("linf_distance", [](const Array& adv, const Array& x) { return linf_distance(to_images(adv), to_images(x)); });
    m.def("default_sweep_grid", &default_sweep_grid);

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "advdiff");
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            argv.push_back(nullptr);
            py::gil_scoped_release release;
            return cli::run(static_cast<int>(args.size()), argv.data());
        },
        py::arg("args"), "Run the command-line tool in-process; returns its exit code.");
}
