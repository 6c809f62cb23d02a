#pragma once

// Per-cycle feedback decision: aggregate a window of dual segmentations plus
// depth into one event through the fixed priority chain
// obstacle -> transparent stuff -> walkable direction -> nearest object.

#include "t4t/tensor.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace t4t {

// general head: 13 indoor classes; the walkable path is the floor class
inline const std::array<const char*, 13>& general_class_names() {
    static const std::array<const char*, 13> names = {
        "beam", "board", "bookcase", "ceiling", "chair", "clutter", "column",
        "door", "floor", "sofa",     "table",   "wall",  "window"};
    return names;
}
constexpr int kFloorClass = 8;
constexpr int kGeneralClasses = 13;

// transparency head: background + 11 categories
inline const std::array<const char*, 12>& trans_class_names() {
    static const std::array<const char*, 12> names = {
        "background", "shelf", "jar/tank", "freezer",    "window", "glass door",
        "eyeglass",   "cup",   "glass wall", "bowl",     "bottle", "box"};
    return names;
}
constexpr int kTransClasses = 12;
constexpr int kTransBackground = 0;

// large structures announced as stuff vs graspable things
inline bool is_trans_stuff(int cls) { return cls == 4 || cls == 5 || cls == 8; }
inline bool is_trans_thing(int cls) {
    return cls > 0 && cls < kTransClasses && !is_trans_stuff(cls);
}

struct DecisionConfig {
    double theta_obstacle_m = 1.0;
    double theta_trans = 0.5;
    double theta_walkable = 0.4;
    int cycle_frames = 20;
    double min_valid_depth_fraction = 0.10;
    double min_object_area_fraction = 0.01;

    void validate() const {
        auto fraction = [](double v) { return v > 0.0 && v <= 1.0; };
        if (!fraction(theta_trans) || !fraction(theta_walkable) ||
            !fraction(min_valid_depth_fraction) || !fraction(min_object_area_fraction))
            throw ConfigError("decision config: fraction thresholds must lie in (0,1]");
        if (theta_obstacle_m < 0.5)
            throw ConfigError("decision config: theta_obstacle_m below the 0.5 m sensor minimum");
        if (cycle_frames < 1) throw ConfigError("decision config: cycle_frames must be >= 1");
    }
};

// one RGB-D frame; depth 0 marks invalid readings
struct FrameInput {
    Tensor<float> rgb; // [3,H,W], values in [0,1]
    std::vector<std::uint16_t> depth_mm;
    int h = 0, w = 0;
};

// argmax maps plus depth for one frame or one aggregated cycle
struct SegFrame {
    int h = 0, w = 0;
    std::vector<std::uint8_t> general;
    std::vector<std::uint8_t> trans;
    std::vector<std::uint16_t> depth_mm;
};

struct ClassMasks {
    std::vector<std::uint8_t> g_path, g_object, t_stuff, t_thing;
};

inline ClassMasks split_predictions(const std::vector<std::uint8_t>& g_argmax,
                                    const std::vector<std::uint8_t>& t_argmax) {
    if (g_argmax.size() != t_argmax.size())
        throw ValueError("split_predictions: map sizes differ");
    ClassMasks m;
    const std::size_t n = g_argmax.size();
    m.g_path.assign(n, 0);
    m.g_object.assign(n, 0);
    m.t_stuff.assign(n, 0);
    m.t_thing.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int g = g_argmax[i];
        if (g < 0 || g >= kGeneralClasses)
            throw ValueError("split_predictions: unknown general class " + std::to_string(g));
        if (g == kFloorClass) m.g_path[i] = 1;
        else m.g_object[i] = 1;
        const int t = t_argmax[i];
        if (t < 0 || t >= kTransClasses)
            throw ValueError("split_predictions: unknown transparency class " + std::to_string(t));
        if (is_trans_stuff(t)) m.t_stuff[i] = 1;
        else if (is_trans_thing(t)) m.t_thing[i] = 1;
        // transparency background belongs to neither set
    }
    return m;
}

struct DepthSummary {
    double mean_m = 0.0;
    double valid_fraction = 0.0;
};

inline DepthSummary mean_depth(const std::vector<std::uint16_t>& depth_mm) {
    DepthSummary s;
    if (depth_mm.empty()) return s;
    std::int64_t count = 0;
    double sum = 0.0;
    for (auto d : depth_mm)
        if (d != 0) {
            ++count;
            sum += d;
        }
    s.valid_fraction = static_cast<double>(count) / static_cast<double>(depth_mm.size());
    s.mean_m = count > 0 ? sum / (1000.0 * static_cast<double>(count)) : 0.0;
    return s;
}

struct WalkableRatios {
    double left = 0.0, forward = 0.0, right = 0.0;
};

// three vertical bands of width W/3; remainder columns widen the center band
inline WalkableRatios walkable_ratios(const std::vector<std::uint8_t>& g_path, int h, int w) {
    if (static_cast<std::size_t>(h) * static_cast<std::size_t>(w) != g_path.size())
        throw ValueError("walkable_ratios: mask does not match frame dims");
    const int band = w / 3;
    const int left_end = band;
    const int right_begin = w - band;
    std::int64_t counts[3] = {0, 0, 0};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!g_path[static_cast<std::size_t>(y) * w + x]) continue;
            if (x < left_end) ++counts[0];
            else if (x < right_begin) ++counts[1];
            else ++counts[2];
        }
    WalkableRatios r;
    const double hd = static_cast<double>(h);
    if (band > 0) {
        r.left = static_cast<double>(counts[0]) / (hd * band);
        r.right = static_cast<double>(counts[2]) / (hd * band);
    }
    const int center_w = right_begin - left_end;
    if (center_w > 0) r.forward = static_cast<double>(counts[1]) / (hd * center_w);
    return r;
}

// Per-pixel modal class across the cycle (ties to the lowest class index);
// depth is the per-pixel lower median of the valid readings, 0 when none.
inline SegFrame aggregate_cycle(const std::vector<SegFrame>& frames) {
    if (frames.empty()) throw ValueError("aggregate_cycle: empty cycle");
    const int h = frames[0].h, w = frames[0].w;
    const std::size_t n = static_cast<std::size_t>(h) * w;
    for (const auto& f : frames)
        if (f.h != h || f.w != w || f.general.size() != n || f.trans.size() != n ||
            f.depth_mm.size() != n)
            throw ValueError("aggregate_cycle: inconsistent frame dims");
    SegFrame out;
    out.h = h;
    out.w = w;
    out.general.resize(n);
    out.trans.resize(n);
    out.depth_mm.resize(n);
    std::array<int, 256> hist{};
    std::vector<std::uint16_t> valid;
    valid.reserve(frames.size());
    for (std::size_t p = 0; p < n; ++p) {
        for (int pass = 0; pass < 2; ++pass) {
            hist.fill(0);
            for (const auto& f : frames) ++hist[pass == 0 ? f.general[p] : f.trans[p]];
            int best = 0;
            for (int cls = 1; cls < 256; ++cls)
                if (hist[static_cast<std::size_t>(cls)] > hist[static_cast<std::size_t>(best)])
                    best = cls; // strict: ties keep the lowest index
            if (pass == 0) out.general[p] = static_cast<std::uint8_t>(best);
            else out.trans[p] = static_cast<std::uint8_t>(best);
        }
        valid.clear();
        for (const auto& f : frames)
            if (f.depth_mm[p] != 0) valid.push_back(f.depth_mm[p]);
        if (valid.empty()) {
            out.depth_mm[p] = 0;
        } else {
            std::sort(valid.begin(), valid.end());
            out.depth_mm[p] = valid[(valid.size() - 1) / 2]; // lower median
        }
    }
    return out;
}

enum class EventKind { vibration, stuff_speech, direction_speech, object_speech };
enum class Direction { left, forward, right };

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::vibration: return "vibration";
        case EventKind::stuff_speech: return "stuff_speech";
        case EventKind::direction_speech: return "direction_speech";
        case EventKind::object_speech: return "object_speech";
    }
    return "?";
}

inline const char* to_string(Direction d) {
    switch (d) {
        case Direction::left: return "left";
        case Direction::forward: return "forward";
        case Direction::right: return "right";
    }
    return "?";
}

struct FeedbackEvent {
    EventKind kind = EventKind::vibration;
    int class_index = -1;             // stuff/object events
    bool class_from_trans_head = true; // which table names class_index
    Direction direction = Direction::forward;
    double mean_depth_m = 0.0;
    double valid_fraction = 0.0;
    double winning_fraction = 0.0; // fraction/ratio that fired the branch
    std::int64_t cycle_index = 0;
    double wall_time_ms = 0.0;

    std::string label() const {
        switch (kind) {
            case EventKind::vibration: return "obstacle";
            case EventKind::direction_speech: return to_string(direction);
            default:
                return class_from_trans_head
                           ? trans_class_names()[static_cast<std::size_t>(class_index)]
                           : general_class_names()[static_cast<std::size_t>(class_index)];
        }
    }

    std::string to_json() const {
        std::ostringstream os;
        os << "{\"cycle_index\":" << cycle_index << ",\"kind\":\"" << to_string(kind)
           << "\",\"class_or_direction\":\"" << label() << "\",\"mean_depth_m\":" << mean_depth_m
           << ",\"winning_fraction\":" << winning_fraction << ",\"wall_time_ms\":" << wall_time_ms
           << "}";
        return os.str();
    }
};

// First matching branch wins; branch 4 is total.
inline FeedbackEvent decide(const SegFrame& consensus, const DecisionConfig& cfg) {
    cfg.validate();
    const std::size_t n = consensus.general.size();
    if (n == 0 || consensus.trans.size() != n || consensus.depth_mm.size() != n)
        throw ValueError("decide: malformed consensus");
    const double total = static_cast<double>(n);

    FeedbackEvent ev;
    const auto depth = mean_depth(consensus.depth_mm);
    ev.mean_depth_m = depth.mean_m;
    ev.valid_fraction = depth.valid_fraction;

    // 1: open-set obstacle on close or unreliable depth
    if (depth.mean_m < cfg.theta_obstacle_m || depth.valid_fraction < cfg.min_valid_depth_fraction) {
        ev.kind = EventKind::vibration;
        ev.winning_fraction = depth.valid_fraction;
        return ev;
    }

    // 2: dominant transparent structure over the whole image
    std::array<std::int64_t, kTransClasses> t_area{};
    for (std::size_t i = 0; i < n; ++i) ++t_area[consensus.trans[i]];
    int best_stuff = -1;
    double best_stuff_frac = 0.0;
    for (int cls = 0; cls < kTransClasses; ++cls) {
        if (!is_trans_stuff(cls)) continue;
        const double frac = static_cast<double>(t_area[static_cast<std::size_t>(cls)]) / total;
        if (frac > best_stuff_frac) { // strict: ties keep the lower index
            best_stuff_frac = frac;
            best_stuff = cls;
        }
    }
    if (best_stuff >= 0 && best_stuff_frac > cfg.theta_trans) {
        ev.kind = EventKind::stuff_speech;
        ev.class_index = best_stuff;
        ev.class_from_trans_head = true;
        ev.winning_fraction = best_stuff_frac;
        return ev;
    }

    // 3: widest walkable direction; ties prefer forward, then left
    std::vector<std::uint8_t> g_path(n, 0);
    for (std::size_t i = 0; i < n; ++i) g_path[i] = consensus.general[i] == kFloorClass ? 1 : 0;
    const auto ratios = walkable_ratios(g_path, consensus.h, consensus.w);
    const double best_ratio = std::max({ratios.forward, ratios.left, ratios.right});
    if (best_ratio > cfg.theta_walkable) {
        ev.kind = EventKind::direction_speech;
        if (ratios.forward >= best_ratio) ev.direction = Direction::forward;
        else if (ratios.left >= best_ratio) ev.direction = Direction::left;
        else ev.direction = Direction::right;
        ev.winning_fraction = best_ratio;
        return ev;
    }

    // 4: nearest object by mean valid depth among sufficiently large classes,
    //    falling back to the largest area, then to the modal general class
    struct Candidate {
        bool trans_head;
        int cls;
        std::int64_t area = 0;
        std::int64_t depth_sum = 0;
        std::int64_t depth_count = 0;
    };
    std::array<std::int64_t, kGeneralClasses> g_area{};
    std::array<std::int64_t, kGeneralClasses> g_depth_sum{};
    std::array<std::int64_t, kGeneralClasses> g_depth_cnt{};
    std::array<std::int64_t, kTransClasses> t_depth_sum{};
    std::array<std::int64_t, kTransClasses> t_depth_cnt{};
    for (std::size_t i = 0; i < n; ++i) {
        const int g = consensus.general[i];
        ++g_area[static_cast<std::size_t>(g)];
        const int t = consensus.trans[i];
        const std::uint16_t d = consensus.depth_mm[i];
        if (d != 0) {
            g_depth_sum[static_cast<std::size_t>(g)] += d;
            ++g_depth_cnt[static_cast<std::size_t>(g)];
            t_depth_sum[static_cast<std::size_t>(t)] += d;
            ++t_depth_cnt[static_cast<std::size_t>(t)];
        }
    }
    std::vector<Candidate> candidates;
    for (int cls = 0; cls < kTransClasses; ++cls)
        if (is_trans_thing(cls) && t_area[static_cast<std::size_t>(cls)] > 0)
            candidates.push_back({true, cls, t_area[static_cast<std::size_t>(cls)],
                                  t_depth_sum[static_cast<std::size_t>(cls)],
                                  t_depth_cnt[static_cast<std::size_t>(cls)]});
    for (int cls = 0; cls < kGeneralClasses; ++cls)
        if (cls != kFloorClass && g_area[static_cast<std::size_t>(cls)] > 0)
            candidates.push_back({false, cls, g_area[static_cast<std::size_t>(cls)],
                                  g_depth_sum[static_cast<std::size_t>(cls)],
                                  g_depth_cnt[static_cast<std::size_t>(cls)]});

    ev.kind = EventKind::object_speech;
    const Candidate* nearest = nullptr;
    double nearest_depth = 0.0;
    for (const auto& c : candidates) {
        if (static_cast<double>(c.area) / total < cfg.min_object_area_fraction) continue;
        if (c.depth_count == 0) continue;
        const double d = static_cast<double>(c.depth_sum) /
                         (1000.0 * static_cast<double>(c.depth_count));
        if (!nearest || d < nearest_depth) {
            nearest = &c;
            nearest_depth = d;
        }
    }
    if (nearest) {
        ev.class_index = nearest->cls;
        ev.class_from_trans_head = nearest->trans_head;
        ev.mean_depth_m = nearest_depth;
        ev.winning_fraction = static_cast<double>(nearest->area) / total;
        return ev;
    }
    const Candidate* largest = nullptr;
    for (const auto& c : candidates)
        if (!largest || c.area > largest->area) largest = &c;
    if (largest) {
        ev.class_index = largest->cls;
        ev.class_from_trans_head = largest->trans_head;
        ev.winning_fraction = static_cast<double>(largest->area) / total;
        return ev;
    }
    // no object pixels anywhere: announce the modal general class
    int modal = 0;
    for (int cls = 1; cls < kGeneralClasses; ++cls)
        if (g_area[static_cast<std::size_t>(cls)] > g_area[static_cast<std::size_t>(modal)])
            modal = cls;
    ev.class_index = modal;
    ev.class_from_trans_head = false;
    ev.winning_fraction = static_cast<double>(g_area[static_cast<std::size_t>(modal)]) / total;
    return ev;
}

// Owns the current cycle buffer; push() yields one event per completed cycle.
class CycleEngine {
public:
    explicit CycleEngine(const DecisionConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

    std::optional<FeedbackEvent> push(SegFrame frame) {
        buffer_.push_back(std::move(frame));
        if (static_cast<int>(buffer_.size()) < cfg_.cycle_frames) return std::nullopt;
        return emit();
    }

    // end-of-stream: decide on a partial cycle if at least one frame arrived
    std::optional<FeedbackEvent> flush() {
        if (buffer_.empty()) return std::nullopt;
        return emit();
    }

    std::int64_t cycles_emitted() const { return next_cycle_; }

private:
    std::optional<FeedbackEvent> emit() {
        auto ev = decide(aggregate_cycle(buffer_), cfg_);
        ev.cycle_index = next_cycle_++;
        buffer_.clear();
        return ev;
    }

    DecisionConfig cfg_;
    std::vector<SegFrame> buffer_;
    std::int64_t next_cycle_ = 0;
};

} // namespace t4t
