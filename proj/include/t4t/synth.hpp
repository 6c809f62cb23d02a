#pragma once

// Deterministic toy RGB-D scenes with paired ground truth for both heads.
// A scene is a flat wall backdrop, a floor band with a depth ramp, and a few
// colored rectangles; glass objects are alpha-blended over the backdrop and
// get a 2-pixel opaque frame border.

#include "t4t/decision.hpp"
#include "t4t/netpbm.hpp"
#include "t4t/rng.hpp"

#include <array>
#include <cstdio>
#include <string>
#include <vector>

namespace t4t {

struct ObjectSpec {
    int general_class = -1; // painted into gt_general when >= 0
    int trans_class = 0;    // painted into gt_trans when > 0
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0; // half-open rect
    std::uint16_t depth_mm = 1000;
    std::array<std::uint8_t, 3> color{128, 128, 128};
    double glass_alpha = -1.0; // in (0,1]: blend over the current canvas
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int size = 32; // square, multiple of 32
    double floor_fraction = 0.35;
    int background_general_class = 11; // wall in the full table
    int floor_class = kFloorClass;
    std::uint16_t floor_near_mm = 500;
    std::uint16_t floor_far_mm = 4000;
    std::vector<ObjectSpec> objects;

    void validate() const {
        if (size <= 0 || size % 32 != 0)
            throw ConfigError("scene: size " + std::to_string(size) + " must be a multiple of 32");
        if (floor_fraction < 0.0 || floor_fraction > 1.0)
            throw ConfigError("scene: floor_fraction outside [0,1]");
        for (const auto& o : objects)
            if (o.x0 < 0 || o.y0 < 0 || o.x1 > size || o.y1 > size || o.x0 >= o.x1 ||
                o.y0 >= o.y1)
                throw ValueError("scene: object rect outside image bounds");
    }
};

struct Scene {
    FrameInput frame;
    std::vector<std::uint8_t> gt_general;
    std::vector<std::uint8_t> gt_trans;
    ImageU8 rgb8; // the rendered byte canvas, kept for file output and hashing
};

inline Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    const int s = spec.size;
    const std::size_t n = static_cast<std::size_t>(s) * s;
    SplitMix64 rng(spec.seed);

    Scene scene;
    scene.rgb8.w = scene.rgb8.h = s;
    scene.rgb8.channels = 3;
    scene.rgb8.data.assign(n * 3, 0);
    scene.gt_general.assign(n, static_cast<std::uint8_t>(spec.background_general_class));
    scene.gt_trans.assign(n, static_cast<std::uint8_t>(kTransBackground));
    scene.frame.h = scene.frame.w = s;
    scene.frame.depth_mm.assign(n, 0);

    // backdrop wall with a seed-dependent tint
    std::array<std::uint8_t, 3> wall;
    for (auto& c : wall) c = static_cast<std::uint8_t>(150 + rng.uniform_int(0, 40));
    for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < 3; ++c) scene.rgb8.data[p * 3 + static_cast<std::size_t>(c)] = wall[static_cast<std::size_t>(c)];

    // floor band at the bottom; depth ramps from near (bottom row) to far
    const int band_h = static_cast<int>(std::lround(spec.floor_fraction * s));
    const int band_top = s - band_h;
    if (band_h > 0) {
        std::array<std::uint8_t, 3> floor_color{
            static_cast<std::uint8_t>(90 + rng.uniform_int(0, 20)),
            static_cast<std::uint8_t>(70 + rng.uniform_int(0, 20)),
            static_cast<std::uint8_t>(55 + rng.uniform_int(0, 20))};
        for (int y = band_top; y < s; ++y) {
            const double t = band_h > 1
                                 ? static_cast<double>(s - 1 - y) / (band_h - 1)
                                 : 0.0;
            const auto depth = static_cast<std::uint16_t>(std::lround(
                spec.floor_near_mm + t * (spec.floor_far_mm - spec.floor_near_mm)));
            for (int x = 0; x < s; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * s + x;
                scene.gt_general[p] = static_cast<std::uint8_t>(spec.floor_class);
                scene.frame.depth_mm[p] = depth;
                for (int c = 0; c < 3; ++c)
                    scene.rgb8.data[p * 3 + static_cast<std::size_t>(c)] =
                        floor_color[static_cast<std::size_t>(c)];
            }
        }
    }

    // objects in draw order; later objects win overlaps
    for (const auto& o : spec.objects) {
        const bool glass = o.glass_alpha > 0.0;
        for (int y = o.y0; y < o.y1; ++y)
            for (int x = o.x0; x < o.x1; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * s + x;
                const bool border = glass && (y - o.y0 < 2 || o.y1 - 1 - y < 2 ||
                                              x - o.x0 < 2 || o.x1 - 1 - x < 2);
                for (int c = 0; c < 3; ++c) {
                    const std::size_t pc = p * 3 + static_cast<std::size_t>(c);
                    const double fill = o.color[static_cast<std::size_t>(c)];
                    if (!glass) {
                        scene.rgb8.data[pc] = o.color[static_cast<std::size_t>(c)];
                    } else if (border) {
                        scene.rgb8.data[pc] = static_cast<std::uint8_t>(std::lround(fill * 0.6));
                    } else {
                        const double bg = scene.rgb8.data[pc];
                        scene.rgb8.data[pc] = static_cast<std::uint8_t>(std::lround(
                            o.glass_alpha * fill + (1.0 - o.glass_alpha) * bg));
                    }
                }
                if (o.general_class >= 0)
                    scene.gt_general[p] = static_cast<std::uint8_t>(o.general_class);
                if (o.trans_class > 0)
                    scene.gt_trans[p] = static_cast<std::uint8_t>(o.trans_class);
                scene.frame.depth_mm[p] = o.depth_mm;
            }
    }

    // float tensor in [0,1], CHW
    scene.frame.rgb = Tensor<float>({3, s, s});
    for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < n; ++p)
            scene.frame.rgb.data()[static_cast<std::size_t>(c) * n + p] =
                static_cast<float>(scene.rgb8.data[p * 3 + static_cast<std::size_t>(c)]) / 255.0f;
    return scene;
}

// ---- toy class tables (training-scale stand-ins for the full tables) ----

constexpr int kToyGeneralClasses = 4; // wall, floor, door, table
constexpr int kToyTransClasses = 4;   // background, window, glass door, cup
constexpr int kToyFloorClass = 1;

inline const std::array<int, 4>& toy_general_to_full() {
    static const std::array<int, 4> map = {11, 8, 7, 10};
    return map;
}
inline const std::array<int, 4>& toy_trans_to_full() {
    static const std::array<int, 4> map = {0, 4, 5, 7};
    return map;
}

// fixed per-class fill colors so the toy task is learnable from color+context
inline std::array<std::uint8_t, 3> toy_object_color(bool trans_head, int cls) {
    switch (trans_head ? cls + 10 : cls) {
        case 2: return {120, 60, 20};   // door
        case 3: return {220, 140, 40};  // table
        case 11: return {80, 160, 230}; // window (blended)
        case 12: return {40, 220, 200}; // glass door (blended)
        case 13: return {230, 60, 80};  // cup (blended)
        default: return {128, 128, 128};
    }
}

struct DatasetOptions {
    bool toy = true;
    int size = 32;
    double glass_alpha = 0.25;
};

// scene i places one general object and one glass object, round-robin over
// the class tables so every class appears given enough scenes
inline SceneSpec dataset_scene_spec(std::uint64_t seed, std::uint64_t index,
                                    const DatasetOptions& opt) {
    SplitMix64 rng(SplitMix64::derive(seed, index));
    SceneSpec spec;
    spec.seed = SplitMix64::derive(seed, index);
    spec.size = opt.size;
    spec.floor_fraction = rng.uniform(0.25, 0.5);
    if (opt.toy) {
        spec.background_general_class = 0;
        spec.floor_class = kToyFloorClass;
    }
    const int s = opt.size;
    auto rect = [&](int min_side, int max_side, ObjectSpec& o) {
        const int w = static_cast<int>(rng.uniform_int(min_side, max_side));
        const int h = static_cast<int>(rng.uniform_int(min_side, max_side));
        o.x0 = static_cast<int>(rng.uniform_int(0, s - w));
        o.y0 = static_cast<int>(rng.uniform_int(0, s - h));
        o.x1 = o.x0 + w;
        o.y1 = o.y0 + h;
    };
    auto jitter = [&](std::array<std::uint8_t, 3> c) {
        for (auto& v : c)
            v = static_cast<std::uint8_t>(
                std::clamp<int>(v + static_cast<int>(rng.uniform_int(-12, 12)), 0, 255));
        return c;
    };

    // one opaque general object
    {
        ObjectSpec o;
        if (opt.toy) {
            o.general_class = 2 + static_cast<int>(index % 2); // door or table
            o.color = jitter(toy_object_color(false, o.general_class));
        } else {
            // cycle over the 12 non-floor general classes
            static const int cycle[12] = {0, 1, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12};
            o.general_class = cycle[index % 12];
            o.color = jitter({static_cast<std::uint8_t>(40 + 17 * (o.general_class % 12)),
                              static_cast<std::uint8_t>(200 - 13 * (o.general_class % 12)),
                              static_cast<std::uint8_t>(60 + 11 * (o.general_class % 12))});
        }
        o.depth_mm = static_cast<std::uint16_t>(rng.uniform_int(1200, 4500));
        rect(std::max(4, s / 8), std::max(6, s / 3), o);
        spec.objects.push_back(o);
    }
    // one glass object
    {
        ObjectSpec o;
        o.glass_alpha = opt.glass_alpha;
        if (opt.toy) {
            o.trans_class = 1 + static_cast<int>(index % 3); // window / glass door / cup
            o.color = jitter(toy_object_color(true, o.trans_class));
        } else {
            o.trans_class = 1 + static_cast<int>(index % 11);
            o.color = jitter({static_cast<std::uint8_t>(90 + 13 * o.trans_class),
                              static_cast<std::uint8_t>(120 + 9 * o.trans_class),
                              static_cast<std::uint8_t>(210 - 11 * o.trans_class)});
        }
        o.depth_mm = static_cast<std::uint16_t>(rng.uniform_int(900, 4000));
        rect(std::max(6, s / 6), std::max(8, s / 2), o);
        spec.objects.push_back(o);
    }
    return spec;
}

struct DatasetReport {
    std::vector<std::int64_t> general_pixels; // per class
    std::vector<std::int64_t> trans_pixels;

    std::string render() const {
        std::ostringstream os;
        os << "{\"general_pixels\":[";
        for (std::size_t i = 0; i < general_pixels.size(); ++i)
            os << (i ? "," : "") << general_pixels[i];
        os << "],\"trans_pixels\":[";
        for (std::size_t i = 0; i < trans_pixels.size(); ++i)
            os << (i ? "," : "") << trans_pixels[i];
        os << "]}";
        return os.str();
    }
};

inline std::vector<Scene> generate_dataset(int n, std::uint64_t seed, const DatasetOptions& opt,
                                           DatasetReport* report = nullptr) {
    if (n < 1) throw ValueError("generate_dataset: n must be >= 1");
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(n));
    const int gk = opt.toy ? kToyGeneralClasses : kGeneralClasses;
    const int tk = opt.toy ? kToyTransClasses : kTransClasses;
    if (report) {
        report->general_pixels.assign(static_cast<std::size_t>(gk), 0);
        report->trans_pixels.assign(static_cast<std::size_t>(tk), 0);
    }
    for (int i = 0; i < n; ++i) {
        scenes.push_back(generate_scene(dataset_scene_spec(seed, static_cast<std::uint64_t>(i), opt)));
        if (report) {
            for (auto c : scenes.back().gt_general)
                ++report->general_pixels[static_cast<std::size_t>(c)];
            for (auto c : scenes.back().gt_trans)
                ++report->trans_pixels[static_cast<std::size_t>(c)];
        }
    }
    return scenes;
}

// FNV-1a over the rendered bytes; used to compare scene sets
inline std::uint64_t scene_hash(const Scene& scene) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::uint8_t b : scene.rgb8.data) {
        h ^= b;
        h *= 1099511628211ull;
    }
    for (std::uint16_t d : scene.frame.depth_mm) {
        h ^= static_cast<std::uint8_t>(d & 0xff);
        h *= 1099511628211ull;
        h ^= static_cast<std::uint8_t>(d >> 8);
        h *= 1099511628211ull;
    }
    return h;
}

// ---- on-disk layout: %06d.ppm / %06d.pgm / %06d_gt_general.pgm / _gt_trans ----

inline std::string frame_stem(const std::string& dir, int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", index);
    return dir + "/" + buf;
}

inline void write_scene(const std::string& dir, int index, const Scene& scene) {
    const auto stem = frame_stem(dir, index);
    write_ppm(stem + ".ppm", scene.rgb8);
    ImageU16 depth;
    depth.w = scene.frame.w;
    depth.h = scene.frame.h;
    depth.data = scene.frame.depth_mm;
    write_pgm16(stem + ".pgm", depth);
    ImageU8 g{scene.frame.w, scene.frame.h, 1, scene.gt_general};
    write_pgm8(stem + "_gt_general.pgm", g);
    ImageU8 t{scene.frame.w, scene.frame.h, 1, scene.gt_trans};
    write_pgm8(stem + "_gt_trans.pgm", t);
}

inline Scene load_scene(const std::string& dir, int index) {
    const auto stem = frame_stem(dir, index);
    Scene scene;
    scene.rgb8 = read_ppm(stem + ".ppm");
    const auto depth = read_pgm16(stem + ".pgm");
    const auto g = read_pgm8(stem + "_gt_general.pgm");
    const auto t = read_pgm8(stem + "_gt_trans.pgm");
    if (depth.w != scene.rgb8.w || depth.h != scene.rgb8.h || g.w != scene.rgb8.w ||
        t.w != scene.rgb8.w)
        throw IoError("scene " + stem + ": mismatched component dimensions");
    scene.gt_general = g.data;
    scene.gt_trans = t.data;
    scene.frame.h = scene.rgb8.h;
    scene.frame.w = scene.rgb8.w;
    scene.frame.depth_mm = depth.data;
    const std::size_t n = static_cast<std::size_t>(scene.rgb8.w) * scene.rgb8.h;
    scene.frame.rgb = Tensor<float>({3, scene.rgb8.h, scene.rgb8.w});
    for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < n; ++p)
            scene.frame.rgb.data()[static_cast<std::size_t>(c) * n + p] =
                static_cast<float>(scene.rgb8.data[p * 3 + static_cast<std::size_t>(c)]) / 255.0f;
    return scene;
}

inline FrameInput load_frame(const std::string& ppm_path, const std::string& pgm_path) {
    const auto rgb = read_ppm(ppm_path);
    const auto depth = read_pgm16(pgm_path);
    if (rgb.w != depth.w || rgb.h != depth.h)
        throw IoError("frame pair dimensions differ: " + ppm_path + " vs " + pgm_path);
    FrameInput f;
    f.h = rgb.h;
    f.w = rgb.w;
    f.depth_mm = depth.data;
    f.rgb = Tensor<float>({3, rgb.h, rgb.w});
    const std::size_t n = static_cast<std::size_t>(rgb.w) * rgb.h;
    for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < n; ++p)
            f.rgb.data()[static_cast<std::size_t>(c) * n + p] =
                static_cast<float>(rgb.data[p * 3 + static_cast<std::size_t>(c)]) / 255.0f;
    return f;
}

} // namespace t4t
