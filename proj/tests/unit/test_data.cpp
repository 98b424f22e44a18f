#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "advdiff/data.hpp"
#include "advdiff/error.hpp"
#include "helpers.hpp"

using namespace advdiff;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 4) {
    SyntheticSpec s;
    s.num_samples = 64;
    s.seed = seed;
    return s;
}

// Independent recount of the window rule: any integer pixel inside the disc
// and inside the central window.
bool touches_by_scan(const Lesion& l, const SyntheticSpec& s) {
    for (int i = s.window_begin(); i <= s.window_end(); ++i)
        for (int j = s.window_begin(); j <= s.window_end(); ++j)
            if ((i - l.cy) * (i - l.cy) + (j - l.cx) * (j - l.cx) <= l.radius * l.radius) return true;
    return false;
}

}  // namespace

TEST_CASE("window geometry") {
    SyntheticSpec s;
    CHECK(s.window_begin() == 11);
    CHECK(s.window_end() == 20);
    Lesion inside{15.0, 15.0, 1.0, 0.4};
    Lesion just_out{8.9, 15.0, 2.0, 0.4};
    Lesion edge{9.0, 15.0, 2.0, 0.4};
    CHECK(lesion_touches_window(inside, s));
    CHECK_FALSE(lesion_touches_window(just_out, s));
    CHECK(lesion_touches_window(edge, s));
}

TEST_CASE("labels follow the lesion geometry and classes are balanced") {
    auto d = generate_synthetic(small_spec());
    REQUIRE(d.size() == 64);
    CHECK(std::count(d.labels.begin(), d.labels.end(), 1) == 32);
    for (int i = 0; i < d.size(); ++i) {
        CHECK(d.labels[i] == i % 2);
        CHECK(label_from_geometry(d.lesions[i], d.spec) == d.labels[i]);
        bool any = false;
        for (const auto& l : d.lesions[i]) any = any || touches_by_scan(l, d.spec);
        CHECK(any == (d.labels[i] == 1));
    }
}

TEST_CASE("pixels lie in [0,1] and the shape matches SyntheticSpec") {
    auto spec = small_spec();
    spec.pixel_noise_std = 0.05;
    auto d = generate_synthetic(spec);
    CHECK(d.images.shape() == Shape{64, 1, 32, 32});
    for (double v : d.images.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("generation is seed deterministic") {
    auto a = generate_synthetic(small_spec(4));
    auto b = generate_synthetic(small_spec(4));
    auto c = generate_synthetic(small_spec(5));
    CHECK(a.images.values() == b.images.values());
    CHECK(a.images.values() != c.images.values());
}

TEST_CASE("lesions raise the centre of positive images") {
    auto spec = small_spec();
    spec.num_samples = 400;
    spec.max_distractors = 0;
    auto d = generate_synthetic(spec);
    double pos = 0, neg = 0;
    for (int i = 0; i < d.size(); ++i) {
        auto s = d.images.sample(i);
        double acc = 0;
        for (int r = spec.window_begin(); r <= spec.window_end(); ++r)
            for (int c = spec.window_begin(); c <= spec.window_end(); ++c) acc += s[r * 32 + c];
        (d.labels[i] ? pos : neg) += acc;
    }
    CHECK(pos > neg);
}

TEST_CASE("spec validation") {
    auto s = small_spec();
    CHECK_NOTHROW(s.validate());
    s.num_samples = 63;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = small_spec();
    s.center_size = 32;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = small_spec();
    s.radius_max = 12;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = small_spec();
    s.pixel_noise_std = -1;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = small_spec();
    s.amplitude_max = 0.1;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
}

TEST_CASE("split is a seeded partition") {
    auto sp = split_dataset(240, {10.0 / 12, 1.0 / 12, 1.0 / 12}, 9);
    CHECK(sp.train.size() == 200);
    CHECK(sp.val.size() == 20);
    CHECK(sp.test.size() == 20);
    std::set<std::size_t> all(sp.train.begin(), sp.train.end());
    all.insert(sp.val.begin(), sp.val.end());
    all.insert(sp.test.begin(), sp.test.end());
    CHECK(all.size() == 240);
    CHECK(*all.rbegin() == 239);
    auto again = split_dataset(240, {10.0 / 12, 1.0 / 12, 1.0 / 12}, 9);
    CHECK(again.test == sp.test);
    auto other = split_dataset(240, {10.0 / 12, 1.0 / 12, 1.0 / 12}, 10);
    CHECK(other.test != sp.test);
}

TEST_CASE("split rejects bad fractions") {
    CHECK_THROWS_AS(split_dataset(100, {0.5, 0.5, 0.5}, 1), InvalidArgument);
    CHECK_THROWS_AS(split_dataset(100, {-0.1, 0.6, 0.5}, 1), InvalidArgument);
    CHECK_THROWS_AS(split_dataset(10, {0.96, 0.04, 0.0}, 1), InvalidArgument);
}

TEST_CASE("subset and head") {
    auto d = generate_synthetic(small_spec());
    std::vector<std::size_t> idx{5, 2, 9};
    auto s = subset(d, idx);
    REQUIRE(s.size() == 3);
    CHECK(s.labels == std::vector<int>{1, 0, 1});
    auto src = d.images.sample(2), dst = s.images.sample(1);
    CHECK(std::equal(src.begin(), src.end(), dst.begin()));
    CHECK(head(d, 10).size() == 10);
    CHECK(head(d, 1000).size() == 64);
}

TEST_CASE("dataset container round trip") {
    testutil::TempDir dir("data");
    auto spec = small_spec();
    spec.pixel_noise_std = 0.03;
    auto d = generate_synthetic(spec);
    save_dataset(d, dir / "d.bin");
    auto back = load_dataset(dir / "d.bin");
    CHECK(back.spec == d.spec);
    CHECK(back.images.values() == d.images.values());
    CHECK(back.labels == d.labels);
    REQUIRE(back.lesions.size() == d.lesions.size());
    for (std::size_t i = 0; i < d.lesions.size(); ++i) {
        REQUIRE(back.lesions[i].size() == d.lesions[i].size());
        for (std::size_t j = 0; j < d.lesions[i].size(); ++j) CHECK(back.lesions[i][j].cy == d.lesions[i][j].cy);
    }
}

TEST_CASE("dataset container detects damage") {
    testutil::TempDir dir("datadmg");
    auto d = generate_synthetic(small_spec());
    const auto path = dir / "d.bin";
    save_dataset(d, path);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char c = 0x5a;
    f.write(&c, 1);
    f.close();
    CHECK_THROWS_AS(load_dataset(path), CorruptFile);

    std::ofstream(dir / "junk.bin", std::ios::binary) << "not a dataset at all, definitely not";
    CHECK_THROWS_AS(load_dataset(dir / "junk.bin"), IoError);
    CHECK_THROWS_AS(load_dataset(dir / "missing.bin"), IoError);
}
