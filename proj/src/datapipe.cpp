#include "suesr/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "suesr/errors.hpp"
#include "suesr/image_io.hpp"
#include "suesr/rng.hpp"
#include "suesr/tensor_store.hpp"

namespace suesr {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Resampling

namespace {

constexpr double kCubicA = -0.5;
constexpr double kCubicSupport = 2.0;

double cubic_kernel(double x) {
    x = std::abs(x);
    if (x < 1.0) return ((kCubicA + 2.0) * x - (kCubicA + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * kCubicA;
    return 0.0;
}

struct Taps {
    int first = 0;
    std::vector<double> weights;
};

std::vector<Taps> resample_taps(int in_size, int out_size) {
    const double scale = static_cast<double>(in_size) / out_size;
    const double filter_scale = std::max(scale, 1.0);
    const double support = kCubicSupport * filter_scale;
    std::vector<Taps> taps(static_cast<std::size_t>(out_size));
    for (int o = 0; o < out_size; ++o) {
        const double center = (o + 0.5) * scale;
        const int lo = std::max(static_cast<int>(center - support + 0.5), 0);
        const int hi = std::min(static_cast<int>(center + support + 0.5), in_size);
        Taps& t = taps[static_cast<std::size_t>(o)];
        t.first = lo;
        double total = 0.0;
        for (int i = lo; i < hi; ++i) {
            const double w = cubic_kernel((i - center + 0.5) / filter_scale);
            t.weights.push_back(w);
            total += w;
        }
        if (total != 0.0) {
            for (double& w : t.weights) w /= total;
        }
    }
    return taps;
}

}  // namespace

Tensor bicubic_resize(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 3) throw ShapeError("bicubic_resize expects C x H x W, got " + shape_string(image.shape()));
    if (out_h < 1 || out_w < 1) throw SizeError("bicubic_resize target must be positive");
    const int channels = image.dim(0), in_h = image.dim(1), in_w = image.dim(2);
    const auto tx = resample_taps(in_w, out_w);
    const auto ty = resample_taps(in_h, out_h);
    Tensor horizontal({channels, in_h, out_w});
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < in_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                const Taps& t = tx[static_cast<std::size_t>(x)];
                double acc = 0.0;
                for (std::size_t k = 0; k < t.weights.size(); ++k) acc += t.weights[k] * image.at(c, y, t.first + static_cast<int>(k));
                horizontal.at(c, y, x) = acc;
            }
    Tensor out({channels, out_h, out_w});
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < out_h; ++y) {
            const Taps& t = ty[static_cast<std::size_t>(y)];
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < t.weights.size(); ++k) acc += t.weights[k] * horizontal.at(c, t.first + static_cast<int>(k), x);
                out.at(c, y, x) = acc;
            }
        }
    return out;
}

Tensor bicubic_downsample(const Tensor& hr, int factor) {
    if (hr.rank() != 3) throw ShapeError("bicubic_downsample expects C x H x W, got " + shape_string(hr.shape()));
    if (factor < 1 || hr.dim(1) % factor != 0 || hr.dim(2) % factor != 0) {
        throw SizeError("image " + shape_string(hr.shape()) + " is not divisible by factor " + std::to_string(factor));
    }
    return clamp01(bicubic_resize(hr, hr.dim(1) / factor, hr.dim(2) / factor));
}

Tensor bicubic_upsample(const Tensor& lr, int factor) {
    if (lr.rank() != 3) throw ShapeError("bicubic_upsample expects C x H x W");
    if (factor < 1) throw SizeError("upsampling factor must be positive");
    return clamp01(bicubic_resize(lr, lr.dim(1) * factor, lr.dim(2) * factor));
}

// ---------------------------------------------------------------------------
// Splits

void SplitFractions::validate() const {
    for (double f : as_array()) {
        if (!(f > 0.0) || !std::isfinite(f)) throw ConfigError("data.fractions", "every fraction must be positive");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("data.fractions", "fractions must sum to 1");
}

const std::vector<ManifestEntry>& Manifest::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw InputError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<ManifestEntry>& Manifest::split(const std::string& name) {
    return const_cast<std::vector<ManifestEntry>&>(static_cast<const Manifest&>(*this).split(name));
}

fs::path Manifest::resolve(const std::string& path) const {
    const fs::path p(path);
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

std::array<std::size_t, 3> largest_remainder(std::size_t n, const SplitFractions& fractions) {
    const auto f = fractions.as_array();
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double quota = static_cast<double>(n) * f[s];
        // Guard against quotas like 7743.999999 that are integral in exact arithmetic.
        double floor_q = std::floor(quota + 1e-9);
        counts[s] = static_cast<std::size_t>(floor_q);
        remainders[s] = std::max(quota - floor_q, 0.0);
        assigned += counts[s];
    }
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) counts[order[k % 3]] += 1;
    return counts;
}

std::map<std::string, std::array<std::size_t, 3>> stratified_counts(const std::map<std::string, std::size_t>& class_sizes,
                                                                      const SplitFractions& fractions) {
    const auto f = fractions.as_array();
    std::size_t total = 0;
    for (const auto& [name, size] : class_sizes) total += size;
    const auto targets = largest_remainder(total, fractions);

    struct ClassState {
        std::string name;
        std::array<std::size_t, 3> counts{};
        std::array<double, 3> remainders{};
        std::size_t leftover = 0;
    };
    std::vector<ClassState> classes;
    std::array<long long, 3> demand = {static_cast<long long>(targets[0]), static_cast<long long>(targets[1]),
                                       static_cast<long long>(targets[2])};
    for (const auto& [name, size] : class_sizes) {
        ClassState c;
        c.name = name;
        std::size_t assigned = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            const double quota = static_cast<double>(size) * f[s];
            const double floor_q = std::floor(quota + 1e-9);
            c.counts[s] = static_cast<std::size_t>(floor_q);
            c.remainders[s] = std::max(quota - floor_q, 0.0);
            assigned += c.counts[s];
            demand[s] -= static_cast<long long>(c.counts[s]);
        }
        c.leftover = size - assigned;
        classes.push_back(std::move(c));
    }
    // Hand out each class's leftover items (at most one per split) to the
    // splits that are furthest below their global target.
    std::vector<std::size_t> order(classes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return classes[a].leftover > classes[b].leftover; });
    for (std::size_t idx : order) {
        ClassState& c = classes[idx];
        std::array<std::size_t, 3> splits = {0, 1, 2};
        std::stable_sort(splits.begin(), splits.end(), [&](std::size_t a, std::size_t b) {
            if (demand[a] != demand[b]) return demand[a] > demand[b];
            return c.remainders[a] > c.remainders[b];
        });
        for (std::size_t k = 0; k < c.leftover; ++k) {
            c.counts[splits[k]] += 1;
            demand[splits[k]] -= 1;
        }
    }
    std::map<std::string, std::array<std::size_t, 3>> out;
    for (auto& c : classes) out.emplace(c.name, c.counts);
    return out;
}

Manifest allocate_manifest(const std::map<std::string, std::vector<std::string>>& items_by_class,
                           const SplitFractions& fractions, std::uint64_t seed) {
    fractions.validate();
    std::map<std::string, std::size_t> sizes;
    for (const auto& [name, items] : items_by_class) sizes[name] = items.size();
    const auto counts = stratified_counts(sizes, fractions);

    Manifest manifest;
    manifest.seed = seed;
    manifest.fractions = fractions;
    for (const auto& [name, items] : items_by_class) {
        std::vector<std::string> shuffled = items;
        std::sort(shuffled.begin(), shuffled.end());
        Rng rng(derive_seed(seed, fnv1a(name)));
        rng.shuffle(shuffled.begin(), shuffled.end());
        const auto& c = counts.at(name);
        std::size_t cursor = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            auto& target = manifest.split(kSplitNames[s]);
            for (std::size_t k = 0; k < c[s]; ++k, ++cursor) {
                const std::string& hr = shuffled[cursor];
                const std::string lr = kSplitNames[s] + "/lr/" + name + "__" + fs::path(hr).stem().string() + ".png";
                target.push_back({hr, lr, name});
            }
        }
    }
    return manifest;
}

namespace {

bool is_image_file(const fs::path& p) {
    static const std::set<std::string> extensions = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"};
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return extensions.count(ext) != 0;
}

}  // namespace

Manifest build_manifest(const fs::path& root, const SplitFractions& fractions, std::uint64_t seed) {
    fractions.validate();
    if (!fs::is_directory(root)) throw IngestionError("dataset root '" + root.string() + "' is not a directory");
    std::map<std::string, std::vector<std::string>> items;
    std::vector<ExcludedEntry> excluded;
    std::vector<std::string> empty_classes;
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw IngestionError("dataset root '" + root.string() + "' has no class directories");
    for (const auto& dir : class_dirs) {
        const std::string name = dir.filename().string();
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        std::vector<std::string> readable;
        for (const auto& file : files) {
            try {
                read_image(file);
                readable.push_back(file.string());
            } catch (const Error& e) {
                std::cerr << "warning: skipping unreadable image " << file << ": " << e.what() << "\n";
                excluded.push_back({file.string(), "unreadable"});
            }
        }
        if (files.empty()) {
            empty_classes.push_back(name);
            continue;
        }
        if (!readable.empty()) items[name] = std::move(readable);
    }
    if (!empty_classes.empty()) {
        std::string list;
        for (const auto& c : empty_classes) list += (list.empty() ? "" : ", ") + c;
        throw IngestionError("empty class directories: " + list);
    }
    Manifest m = allocate_manifest(items, fractions, seed);
    m.excluded = std::move(excluded);
    return m;
}

std::string manifest_to_json(const Manifest& manifest) {
    json doc;
    doc["seed"] = manifest.seed;
    doc["fractions"] = {{"train", manifest.fractions.train}, {"val", manifest.fractions.val}, {"test", manifest.fractions.test}};
    json splits = json::object();
    for (const auto& name : kSplitNames) {
        json list = json::array();
        for (const auto& e : manifest.split(name)) list.push_back({{"hr", e.hr}, {"lr", e.lr}, {"class", e.class_label}});
        splits[name] = std::move(list);
    }
    doc["splits"] = std::move(splits);
    json excluded = json::array();
    for (const auto& e : manifest.excluded) excluded.push_back({{"path", e.path}, {"reason", e.reason}});
    doc["excluded"] = std::move(excluded);
    return doc.dump(1) + "\n";
}

Manifest manifest_from_json(const std::string& text, const fs::path& base_dir) {
    Manifest m;
    try {
        const json doc = json::parse(text);
        for (const auto& [key, value] : doc.items()) {
            if (key != "seed" && key != "fractions" && key != "splits" && key != "excluded") {
                throw InputError("manifest has unknown field '" + key + "'");
            }
        }
        m.seed = doc.at("seed").get<std::uint64_t>();
        const auto& f = doc.at("fractions");
        m.fractions = {f.at("train").get<double>(), f.at("val").get<double>(), f.at("test").get<double>()};
        const auto& splits = doc.at("splits");
        for (const auto& name : kSplitNames) {
            if (!splits.contains(name)) continue;
            for (const auto& e : splits.at(name)) {
                m.split(name).push_back(
                    {e.at("hr").get<std::string>(), e.at("lr").get<std::string>(), e.at("class").get<std::string>()});
            }
        }
        if (doc.contains("excluded")) {
            for (const auto& e : doc.at("excluded")) {
                m.excluded.push_back({e.at("path").get<std::string>(), e.value("reason", std::string())});
            }
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed manifest: ") + e.what());
    }
    m.base_dir = base_dir;
    return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) { write_file_atomic(path, manifest_to_json(manifest)); }

Manifest load_manifest(const fs::path& path) {
    return manifest_from_json(read_file(path), fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Materialization

namespace {

Tensor center_crop_square(const Tensor& image) {
    const int h = image.dim(1), w = image.dim(2);
    const int side = std::min(h, w);
    const int y0 = (h - side) / 2, x0 = (w - side) / 2;
    Tensor out({image.dim(0), side, side});
    for (int c = 0; c < image.dim(0); ++c)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) out.at(c, y, x) = image.at(c, y0 + y, x0 + x);
    return out;
}

/// Returns true when the file was (re)written.
bool write_if_changed(const fs::path& path, const std::string& bytes) {
    if (fs::exists(path) && fs::file_size(path) == bytes.size() && fnv1a(read_file(path)) == fnv1a(bytes)) {
        return false;
    }
    write_file_atomic(path, bytes);
    return true;
}

}  // namespace

PrepareResult prepare_dataset(const Manifest& manifest, const fs::path& out_dir, int hr_size, int factor) {
    if (factor < 1 || hr_size < factor || hr_size % factor != 0) {
        throw ConfigError("data.hr_size", "hr_size must be a positive multiple of the scale factor");
    }
    PrepareResult result;
    Manifest& out = result.manifest;
    out.seed = manifest.seed;
    out.fractions = manifest.fractions;
    out.excluded = manifest.excluded;
    out.base_dir = fs::absolute(out_dir);
    fs::create_directories(out_dir);

    for (const auto& split : kSplitNames) {
        for (const auto& entry : manifest.split(split)) {
            const fs::path source = manifest.resolve(entry.hr);
            const std::string stem = entry.class_label + "__" + fs::path(entry.hr).stem().string();
            const std::string hr_rel = split + "/hr/" + stem + ".png";
            const std::string lr_rel = split + "/lr/" + stem + ".png";
            Tensor hr;
            try {
                const Tensor raw = read_image(source);
                const Tensor square = center_crop_square(raw);
                if (square.dim(1) < hr_size) {
                    throw SizeError("image is " + std::to_string(raw.dim(1)) + "x" + std::to_string(raw.dim(2)) +
                                    ", smaller than hr_size " + std::to_string(hr_size));
                }
                hr = square.dim(1) == hr_size ? square : clamp01(bicubic_resize(square, hr_size, hr_size));
            } catch (const Error& e) {
                std::cerr << "warning: excluding " << source << ": " << e.what() << "\n";
                out.excluded.push_back({entry.hr, e.what()});
                ++result.failed;
                continue;
            }
            // LR is derived from the quantized HR exactly as stored on disk.
            const RgbImage hr8 = to_rgb8(hr);
            const Tensor lr = bicubic_downsample(from_rgb8(hr8), factor);
            for (const auto& [rel, bytes] : {std::pair{hr_rel, encode_png(hr8)}, std::pair{lr_rel, encode_png(lr)}}) {
                if (write_if_changed(out_dir / rel, bytes)) {
                    ++result.written;
                } else {
                    ++result.skipped;
                }
            }
            out.split(split).push_back({hr_rel, lr_rel, entry.class_label});
        }
    }
    write_if_changed(out_dir / "manifest.json", manifest_to_json(out));
    return result;
}

// ---------------------------------------------------------------------------
// Toy data

namespace {

Tensor render_toy_image(int class_index, int size, Rng& rng) {
    Tensor img({3, size, size});
    // Background: tinted gradient plus a low-frequency sinusoidal texture.
    double base[3], slope_x[3], slope_y[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.25, 0.75);
        slope_x[c] = rng.uniform(-0.15, 0.15);
        slope_y[c] = rng.uniform(-0.15, 0.15);
    }
    const double freq = rng.uniform(1.5, 4.0) * 2.0 * M_PI / size;
    const double angle = rng.uniform(0.0, M_PI);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double amplitude = rng.uniform(0.04, 0.10);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = static_cast<double>(x) / size - 0.5, v = static_cast<double>(y) / size - 0.5;
            const double wave = amplitude * std::sin(freq * (x * std::cos(angle) + y * std::sin(angle)) + phase);
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = base[c] + slope_x[c] * u + slope_y[c] * v + wave;
        }

    const int shapes = 3 + static_cast<int>(rng.below(4));
    for (int s = 0; s < shapes; ++s) {
        double color[3];
        for (double& c : color) c = rng.uniform() < 0.5 ? rng.uniform(0.0, 0.3) : rng.uniform(0.7, 1.0);
        const double cx = rng.uniform(0.15, 0.85) * size, cy = rng.uniform(0.15, 0.85) * size;
        if (class_index == 0) {
            const double r = rng.uniform(0.06, 0.2) * size;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                    if (dx * dx + dy * dy <= r * r) {
                        for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
                    }
                }
        } else {
            const double hw = rng.uniform(0.05, 0.2) * size, hh = rng.uniform(0.05, 0.2) * size;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    if (std::abs(x + 0.5 - cx) <= hw && std::abs(y + 0.5 - cy) <= hh) {
                        for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
                    }
                }
        }
    }
    return clamp01(img);
}

}  // namespace

std::vector<fs::path> synthesize_toy_dataset(const fs::path& out_dir, int n, int hr_size, std::uint64_t seed) {
    if (n < 1) throw InputError("synthesize_toy_dataset needs n >= 1");
    if (hr_size < kScaleFactor || hr_size % kScaleFactor != 0) {
        throw InputError("hr_size must be a positive multiple of " + std::to_string(kScaleFactor));
    }
    std::vector<fs::path> written;
    for (int i = 0; i < n; ++i) {
        const int cls = i % static_cast<int>(kToyClasses.size());
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const Tensor img = render_toy_image(cls, hr_size, rng);
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%05d.png", kToyClasses[static_cast<std::size_t>(cls)].c_str(), i);
        const fs::path path = out_dir / kToyClasses[static_cast<std::size_t>(cls)] / name;
        write_png(path, img);
        written.push_back(path);
    }
    return written;
}

ImagePair load_pair(const Manifest& manifest, const ManifestEntry& entry) {
    ImagePair p;
    p.hr = read_image(manifest.resolve(entry.hr));
    p.lr = read_image(manifest.resolve(entry.lr));
    p.source_path = entry.hr;
    p.class_label = entry.class_label;
    if (p.hr.dim(1) != kScaleFactor * p.lr.dim(1) || p.hr.dim(2) != kScaleFactor * p.lr.dim(2)) {
        throw ShapeError("pair '" + entry.hr + "': HR " + shape_string(p.hr.shape()) + " is not x4 of LR " +
                         shape_string(p.lr.shape()));
    }
    return p;
}

std::vector<ImagePair> load_split(const Manifest& manifest, const std::string& split) {
    std::vector<ImagePair> pairs;
    for (const auto& e : manifest.split(split)) pairs.push_back(load_pair(manifest, e));
    return pairs;
}

}  // namespace suesr
