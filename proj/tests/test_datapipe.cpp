#include <doctest.h>

#include <filesystem>
#include <set>

#include <json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "suesr/datapipe.hpp"
#include "suesr/errors.hpp"
#include "suesr/image_io.hpp"
#include "suesr/tensor_store.hpp"

using namespace suesr;
namespace fs = std::filesystem;

namespace {

using fixture::fresh_dir;

Tensor pattern_16() {
    Tensor t({1, 16, 16});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) t.at(0, y, x) = static_cast<float>(((y * 7 + x * 3) % 11) / 10.0);
    return t;
}

std::map<std::string, std::vector<std::string>> synthetic_items(const std::map<std::string, int>& sizes) {
    std::map<std::string, std::vector<std::string>> items;
    for (const auto& [cls, n] : sizes)
        for (int i = 0; i < n; ++i) items[cls].push_back(cls + "/img" + std::to_string(i) + ".png");
    return items;
}

}  // namespace

TEST_CASE("bicubic matches values frozen from an external resampler") {
    const Tensor down = bicubic_resize(pattern_16(), 4, 4);
    const double want[4][4] = {{0.5154914, 0.506117, 0.4895587, 0.5025342},
                               {0.4815139, 0.506497, 0.505837, 0.4785791},
                               {0.4999301, 0.4910361, 0.5024893, 0.5199305},
                               {0.5278047, 0.5064502, 0.4848534, 0.5020062}};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(std::abs(down.at(0, y, x) - want[y][x]) < 1e-5);

    Tensor corner({1, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) corner.at(0, y, x) = pattern_16().at(0, y, x);
    const Tensor up = bicubic_resize(corner, 8, 8);
    const double row0[8] = {-0.0882353, -0.0135251, 0.1445442, 0.3329504, 0.5405791, 0.7289852, 0.8870545, 0.9617647};
    const double row3[8] = {0.6228171, 0.7277088, 0.9501491, 0.8662354, 0.4603271, 0.2897543, 0.3502623, 0.3786995};
    for (int x = 0; x < 8; ++x) {
        CHECK(std::abs(up.at(0, 0, x) - row0[x]) < 1e-5);
        CHECK(std::abs(up.at(0, 3, x) - row3[x]) < 1e-5);
    }
}

TEST_CASE("bicubic downsample agrees with the 2-D resampler oracle") {
    const Tensor img = oracle::random_tensor({3, 32, 32}, 17);
    const Tensor got = bicubic_downsample(img, 4);
    const Tensor want = clamp01(oracle::bicubic_2d(img, 8, 8));
    REQUIRE(got.shape() == std::vector<int>{3, 8, 8});
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-5);

    CHECK(bicubic_downsample(Tensor({3, 256, 256}, 0.3), 4).shape() == std::vector<int>{3, 64, 64});
    const Tensor flat = bicubic_downsample(Tensor({3, 24, 24}, 0.37), 4);
    for (double v : flat.values()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
    CHECK_THROWS_AS(bicubic_downsample(Tensor({3, 30, 30}), 4), SizeError);
}

TEST_CASE("largest remainder apportionment") {
    CHECK(largest_remainder(12100, {0.64, 0.16, 0.20}) == std::array<std::size_t, 3>{7744, 1936, 2420});
    CHECK(largest_remainder(10, {0.6, 0.2, 0.2}) == std::array<std::size_t, 3>{6, 2, 2});
    const auto lr = largest_remainder(101, {0.64, 0.16, 0.20});
    const auto want = oracle::largest_remainder_ppm(101, {640000, 160000, 200000});
    for (std::size_t s = 0; s < 3; ++s) CHECK(static_cast<long>(lr[s]) == want[s]);
    for (long n = 1; n < 300; n += 7) {
        const auto got = largest_remainder(static_cast<std::size_t>(n), {0.6, 0.2, 0.2});
        const auto ref = oracle::largest_remainder_ppm(n, {600000, 200000, 200000});
        for (std::size_t s = 0; s < 3; ++s) CHECK(static_cast<long>(got[s]) == ref[s]);
    }
}

TEST_CASE("stratified manifest exactness, disjointness and determinism") {
    const SplitFractions f{0.64, 0.16, 0.20};
    std::map<std::string, int> sizes;
    for (int c = 0; c < 20; ++c) sizes["class" + std::to_string(c)] = 605;
    const auto items = synthetic_items(sizes);
    const Manifest m = allocate_manifest(items, f, 5);
    CHECK(m.train.size() == 7744);
    CHECK(m.val.size() == 1936);
    CHECK(m.test.size() == 2420);

    std::set<std::string> seen;
    std::map<std::string, std::array<int, 3>> per;
    for (std::size_t s = 0; s < 3; ++s)
        for (const auto& e : m.split(kSplitNames[s])) {
            CHECK(seen.insert(e.hr).second);
            per[e.class_label][s] += 1;
        }
    for (const auto& [cls, counts] : per)
        for (std::size_t s = 0; s < 3; ++s)
            CHECK(std::abs(counts[s] - f.as_array()[s] * sizes[cls]) <= 1.0);
    CHECK(allocate_manifest(items, f, 5) == m);
    CHECK_FALSE(allocate_manifest(items, f, 6) == m);

    const auto single = allocate_manifest(synthetic_items({{"a", 10}}), {0.6, 0.2, 0.2}, 1);
    CHECK(single.train.size() == 6);
    CHECK(single.val.size() == 2);
    CHECK(single.test.size() == 2);

    const auto odd = allocate_manifest(synthetic_items({{"a", 101}}), f, 1);
    const auto want = oracle::largest_remainder_ppm(101, {640000, 160000, 200000});
    CHECK(static_cast<long>(odd.train.size()) == want[0]);
    CHECK(static_cast<long>(odd.val.size()) == want[1]);
    CHECK(static_cast<long>(odd.test.size()) == want[2]);

    std::map<std::string, int> uneven = {{"a", 7}, {"b", 13}, {"c", 29}, {"d", 3}, {"e", 55}};
    const auto u = allocate_manifest(synthetic_items(uneven), f, 9);
    std::map<std::string, std::array<int, 3>> ucount;
    for (std::size_t s = 0; s < 3; ++s)
        for (const auto& e : u.split(kSplitNames[s])) ucount[e.class_label][s] += 1;
    for (const auto& [cls, counts] : ucount)
        for (std::size_t s = 0; s < 3; ++s) CHECK(std::abs(counts[s] - f.as_array()[s] * uneven[cls]) <= 1.0);
}

TEST_CASE("split fractions must be positive and sum to one") {
    CHECK_THROWS_AS(SplitFractions({0.5, 0.3, 0.3}).validate(), ConfigError);
    CHECK_THROWS_AS(SplitFractions({1.0, 0.0, 0.0}).validate(), ConfigError);
}

TEST_CASE("manifest JSON round trip and schema") {
    const Manifest m = allocate_manifest(synthetic_items({{"x", 5}, {"y", 4}}), {0.6, 0.2, 0.2}, 3);
    const std::string text = manifest_to_json(m);
    CHECK(manifest_from_json(text) == m);
    const auto doc = nlohmann::json::parse(text);
    std::set<std::string> keys;
    for (const auto& item : doc.items()) keys.insert(item.key());
    CHECK(keys == std::set<std::string>{"seed", "fractions", "splits", "excluded"});
    auto extra = doc;
    extra["created_by"] = "x";
    CHECK_THROWS(manifest_from_json(extra.dump()));
}

TEST_CASE("synthetic dataset is deterministic, balanced and textured") {
    const fs::path a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
    const auto fa = synthesize_toy_dataset(a, 8, 96, 7);
    const auto fb = synthesize_toy_dataset(b, 8, 96, 7);
    REQUIRE(fa.size() == 8);
    std::map<std::string, int> per_class;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        CHECK(read_file(fa[i]) == read_file(fb[i]));
        per_class[fa[i].parent_path().filename().string()] += 1;
        const Tensor img = read_image(fa[i]);
        CHECK(img.shape() == std::vector<int>{3, 96, 96});
        const std::size_t plane = 96 * 96;
        for (int c = 0; c < 3; ++c) {
            double s = 0, s2 = 0;
            for (std::size_t j = 0; j < plane; ++j) {
                const double v = img[c * plane + j];
                s += v;
                s2 += v * v;
                CHECK((v >= 0.0 && v <= 1.0));
            }
            CHECK(s2 / plane - (s / plane) * (s / plane) > 0.0);
        }
    }
    CHECK(per_class.size() == 2);
    for (const auto& [cls, n] : per_class) CHECK(n == 4);
    CHECK_THROWS_AS(synthesize_toy_dataset(a, 0, 96, 1), InputError);
    CHECK_THROWS_AS(synthesize_toy_dataset(a, 2, 90, 1), InputError);
}

TEST_CASE("build and prepare a dataset") {
    const fs::path raw = fresh_dir("prep_raw"), out = fresh_dir("prep_out");
    synthesize_toy_dataset(raw, 10, 64, 3);
    write_file_atomic(raw / "circles" / "broken.png", "not an image");
    const Manifest m = build_manifest(raw, {0.6, 0.2, 0.2}, 4);
    CHECK(m.train.size() + m.val.size() + m.test.size() == 10);
    REQUIRE(m.excluded.size() == 1);
    CHECK(m.excluded[0].path.find("broken.png") != std::string::npos);
    CHECK(build_manifest(raw, {0.6, 0.2, 0.2}, 4) == m);

    const auto r = prepare_dataset(m, out, 32);
    CHECK(r.written == 20);
    CHECK(r.failed == 0);
    CHECK(fs::exists(out / "manifest.json"));
    const Manifest prepared = load_manifest(out / "manifest.json");
    for (const auto& split : kSplitNames)
        for (const auto& e : prepared.split(split)) {
            CHECK(e.hr.rfind(split + "/hr/" + e.class_label + "__", 0) == 0);
            const ImagePair p = load_pair(prepared, e);
            CHECK(p.hr.shape() == std::vector<int>{3, 32, 32});
            CHECK(p.lr.shape() == std::vector<int>{3, 8, 8});
            // the stored LR is reproduced bit-exactly from the stored HR
            CHECK(encode_png(bicubic_downsample(p.hr, 4)) == read_file(prepared.resolve(e.lr)));
        }

    const auto again = prepare_dataset(m, out, 32);
    CHECK(again.written == 0);
    CHECK(again.skipped == 20);

    const auto too_small = prepare_dataset(m, fresh_dir("prep_small"), 128);
    CHECK(too_small.failed == 10);
    CHECK(too_small.manifest.train.empty());

    const fs::path empty_dir = fresh_dir("prep_empty");
    const auto empty = prepare_dataset(Manifest{}, empty_dir, 32);
    CHECK(empty.written == 0);
    CHECK(load_manifest(empty_dir / "manifest.json").train.empty());
}

TEST_CASE("empty class directories are reported") {
    const fs::path raw = fresh_dir("empty_class");
    synthesize_toy_dataset(raw, 4, 32, 1);
    fs::create_directories(raw / "forest");
    try {
        build_manifest(raw, {0.6, 0.2, 0.2}, 1);
        FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
        CHECK(std::string(e.what()).find("forest") != std::string::npos);
    }
}
