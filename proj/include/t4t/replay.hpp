#pragma once

// Frame-stream replay: numbered PPM/PGM pairs -> segmentation -> cycle
// aggregation -> one feedback event per cycle. Also the fixed mask palette
// used by inference output.

#include "t4t/synth.hpp"
#include "t4t/train.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>

namespace t4t {

// fixed, documented palettes: 13 general + 12 transparency RGB triples
inline const std::array<std::array<std::uint8_t, 3>, 13>& general_palette() {
    static const std::array<std::array<std::uint8_t, 3>, 13> pal = {{
        {128, 64, 64},   // beam
        {255, 128, 0},   // board
        {139, 69, 19},   // bookcase
        {200, 200, 230}, // ceiling
        {255, 0, 0},     // chair
        {128, 128, 128}, // clutter
        {96, 96, 160},   // column
        {120, 60, 20},   // door
        {0, 160, 0},     // floor
        {255, 0, 255},   // sofa
        {220, 140, 40},  // table
        {180, 180, 180}, // wall
        {0, 128, 255},   // window
    }};
    return pal;
}

inline const std::array<std::array<std::uint8_t, 3>, 12>& trans_palette() {
    static const std::array<std::array<std::uint8_t, 3>, 12> pal = {{
        {0, 0, 0},       // background
        {150, 100, 50},  // shelf
        {170, 220, 120}, // jar/tank
        {80, 80, 220},   // freezer
        {80, 160, 230},  // window
        {40, 220, 200},  // glass door
        {250, 250, 100}, // eyeglass
        {230, 60, 80},   // cup
        {160, 30, 160},  // glass wall
        {90, 200, 60},   // bowl
        {60, 130, 250},  // bottle
        {240, 150, 200}, // box
    }};
    return pal;
}

inline ImageU8 render_mask(const std::vector<std::uint8_t>& classes, int h, int w,
                           bool trans_head) {
    ImageU8 img;
    img.w = w;
    img.h = h;
    img.channels = 3;
    img.data.resize(static_cast<std::size_t>(h) * w * 3);
    for (std::size_t p = 0; p < classes.size(); ++p) {
        const auto& rgb = trans_head ? trans_palette()[classes[p]] : general_palette()[classes[p]];
        for (int c = 0; c < 3; ++c) img.data[p * 3 + static_cast<std::size_t>(c)] = rgb[static_cast<std::size_t>(c)];
    }
    return img;
}

// argmax maps in FULL-table indices for one frame
using SegmentFn = std::function<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>(
    const FrameInput&)>;

// Wraps a model as a SegmentFn; toy heads (4 classes) are mapped onto the
// full tables so the decision engine sees canonical indices.
template <typename T>
SegmentFn model_segmenter(const DualSegModel<T>& model, int general_classes, int trans_classes) {
    return [&model, general_classes, trans_classes](const FrameInput& frame) {
        NoGradGuard<T> ng;
        Tensor<T> img = Tensor<T>::from_data(
            frame.rgb.shape(),
            std::vector<T>(frame.rgb.data().begin(), frame.rgb.data().end()));
        auto out = model.forward(img);
        auto g = argmax_classes(out.general_logits);
        auto t = argmax_classes(out.trans_logits);
        if (general_classes == kToyGeneralClasses)
            for (auto& cls : g) cls = static_cast<std::uint8_t>(toy_general_to_full()[cls]);
        if (trans_classes == kToyTransClasses)
            for (auto& cls : t) cls = static_cast<std::uint8_t>(toy_trans_to_full()[cls]);
        return std::make_pair(std::move(g), std::move(t));
    };
}

struct ReplayResult {
    std::vector<FeedbackEvent> events;
    int frames_used = 0;
    int frames_skipped = 0;
};

inline std::vector<int> list_frame_indices(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<int> indices;
    if (!fs::exists(dir)) throw IoError("replay: no such directory " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.size() == 10 && name.ends_with(".ppm")) {
            bool digits = true;
            for (int i = 0; i < 6; ++i) digits = digits && std::isdigit(name[static_cast<std::size_t>(i)]);
            if (digits) indices.push_back(std::stoi(name.substr(0, 6)));
        }
    }
    std::sort(indices.begin(), indices.end());
    return indices;
}

inline ReplayResult replay_frames(const std::string& frames_dir, const SegmentFn& segment,
                                  const DecisionConfig& cfg,
                                  const std::function<void(const FeedbackEvent&)>& on_event = {}) {
    ReplayResult result;
    CycleEngine engine(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    auto stamp = [&]() {
        return std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(
                   std::chrono::steady_clock::now() - t0)
            .count();
    };
    for (int index : list_frame_indices(frames_dir)) {
        const auto stem = frame_stem(frames_dir, index);
        if (!std::filesystem::exists(stem + ".pgm")) {
            warn_sink()("replay: missing depth pair for " + stem + ".ppm, frame skipped");
            ++result.frames_skipped;
            continue;
        }
        auto frame = load_frame(stem + ".ppm", stem + ".pgm");
        auto [g, t] = segment(frame);
        SegFrame seg;
        seg.h = frame.h;
        seg.w = frame.w;
        seg.general = std::move(g);
        seg.trans = std::move(t);
        seg.depth_mm = frame.depth_mm;
        ++result.frames_used;
        if (auto ev = engine.push(std::move(seg))) {
            ev->wall_time_ms = stamp();
            result.events.push_back(*ev);
            if (on_event) on_event(*ev);
        }
    }
    if (auto ev = engine.flush()) {
        ev->wall_time_ms = stamp();
        result.events.push_back(*ev);
        if (on_event) on_event(*ev);
    }
    return result;
}

// same pipeline, but segmentation comes from the *_gt_*.pgm files next to
// each frame (known per-cycle consensus for scripted scenarios)
inline ReplayResult replay_frames_with_labels(const std::string& frames_dir,
                                              const DecisionConfig& cfg, bool toy_tables) {
    ReplayResult result;
    CycleEngine engine(cfg);
    for (int index : list_frame_indices(frames_dir)) {
        const auto stem = frame_stem(frames_dir, index);
        if (!std::filesystem::exists(stem + ".pgm") ||
            !std::filesystem::exists(stem + "_gt_general.pgm") ||
            !std::filesystem::exists(stem + "_gt_trans.pgm")) {
            warn_sink()("replay: missing pair/labels for " + stem + ".ppm, frame skipped");
            ++result.frames_skipped;
            continue;
        }
        auto depth = read_pgm16(stem + ".pgm");
        auto g = read_pgm8(stem + "_gt_general.pgm");
        auto t = read_pgm8(stem + "_gt_trans.pgm");
        SegFrame seg;
        seg.h = depth.h;
        seg.w = depth.w;
        seg.general = g.data;
        seg.trans = t.data;
        if (toy_tables) {
            for (auto& cls : seg.general)
                cls = static_cast<std::uint8_t>(toy_general_to_full()[cls]);
            for (auto& cls : seg.trans) cls = static_cast<std::uint8_t>(toy_trans_to_full()[cls]);
        }
        seg.depth_mm = depth.data;
        ++result.frames_used;
        if (auto ev = engine.push(std::move(seg))) result.events.push_back(*ev);
    }
    if (auto ev = engine.flush()) result.events.push_back(*ev);
    return result;
}

} // namespace t4t
