// t4t — dual-head segmentation transformer with an assistive decision engine.
// Subcommands: synth, train, infer, replay, metrics, gradcheck, export-features.

#include "t4t/gradcheck.hpp"
#include "t4t/metrics.hpp"
#include "t4t/replay.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace t4t;

namespace {

struct ConfigCli {
    std::string config_path;
    std::string model_tag;
    std::vector<std::string> sets;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "key=value config file");
        app->add_option("--model", model_tag, "model preset: tiny|small|medium|toy");
        app->add_option("--set", sets, "override a config key, e.g. --set train.lr=0.001")
            ->take_all();
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config_file(config_path);
        if (!model_tag.empty()) apply_model_preset(cfg, model_tag);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects key=value, got '" + kv + "'");
            set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        return cfg;
    }
};

void attach_threshold_flags(CLI::App* app, ConfigCli& cc) {
    // flags named exactly after the decision-config fields
    static const char* keys[] = {"theta_obstacle_m", "theta_trans", "theta_walkable",
                                 "cycle_frames"};
    for (const char* key : keys) {
        app->add_option_function<std::string>(
            std::string("--") + key,
            [&cc, key](const std::string& v) { cc.sets.push_back(std::string(key) + "=" + v); },
            std::string("override ") + key);
    }
}

std::vector<Scene> load_scene_dir(const std::string& dir) {
    std::vector<Scene> scenes;
    for (int index : list_frame_indices(dir)) {
        const auto stem = frame_stem(dir, index);
        if (!fs::exists(stem + "_gt_general.pgm")) continue;
        scenes.push_back(load_scene(dir, index));
    }
    if (scenes.empty()) throw IoError("no training scenes found in " + dir);
    return scenes;
}

Tensor<float> load_image_tensor(const std::string& path) {
    auto img = read_ppm(path);
    if (img.h % 32 != 0 || img.w % 32 != 0)
        throw ConfigError("image " + path + " is " + std::to_string(img.w) + "x" +
                          std::to_string(img.h) +
                          "; pad or crop to multiples of 32 before inference");
    const std::size_t n = static_cast<std::size_t>(img.w) * img.h;
    Tensor<float> t({3, img.h, img.w});
    for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < n; ++p)
            t.data()[static_cast<std::size_t>(c) * n + p] =
                static_cast<float>(img.data[p * 3 + static_cast<std::size_t>(c)]) / 255.0f;
    return t;
}

int cmd_synth(const RunConfig& cfg, const std::string& out_dir, int count, bool full_tables,
              int size) {
    fs::create_directories(out_dir);
    DatasetOptions opt;
    opt.toy = !full_tables;
    opt.size = size;
    DatasetReport report;
    auto scenes = generate_dataset(count, cfg.seed, opt, &report);
    for (int i = 0; i < count; ++i) write_scene(out_dir, i, scenes[static_cast<std::size_t>(i)]);
    std::cout << report.render() << "\n";
    std::cerr << "wrote " << count << " scenes to " << out_dir << "\n";
    return 0;
}

int cmd_train(RunConfig cfg) {
    if (cfg.dataset_dir.empty()) throw ConfigError("train: set paths.dataset_dir");
    auto scenes = load_scene_dir(cfg.dataset_dir);
    std::cerr << "training on " << scenes.size() << " scenes, " << cfg.epochs << " epochs\n";
    auto model = build_model<float>(cfg);
    train(model, scenes, cfg, [](const EpochLog& log) { std::cout << log.to_json() << "\n"; });
    const auto out =
        cfg.checkpoint_path.empty() ? cfg.out_dir + "/model.t4t" : cfg.checkpoint_path;
    const auto parent = fs::path(out).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    save_checkpoint(out, model, cfg);
    std::cerr << "checkpoint written to " << out << "\n";
    return 0;
}

int cmd_infer(RunConfig cfg, const std::string& image_path, const std::string& gt_general,
              const std::string& gt_trans) {
    if (cfg.checkpoint_path.empty()) throw ConfigError("infer: set paths.checkpoint");
    auto model = build_model<float>(cfg);
    load_checkpoint(cfg.checkpoint_path, model, cfg);
    auto img = load_image_tensor(image_path);
    NoGradGuard<float> ng;
    auto out = model.forward(img);
    auto g = argmax_classes(out.general_logits);
    auto t = argmax_classes(out.trans_logits);
    const int h = img.dim(1), w = img.dim(2);

    fs::create_directories(cfg.out_dir);
    const bool toy = cfg.general_classes == kToyGeneralClasses;
    auto g_full = g;
    auto t_full = t;
    if (toy) {
        for (auto& c : g_full) c = static_cast<std::uint8_t>(toy_general_to_full()[c]);
        for (auto& c : t_full) c = static_cast<std::uint8_t>(toy_trans_to_full()[c]);
    }
    write_ppm(cfg.out_dir + "/general_mask.ppm", render_mask(g_full, h, w, false));
    write_ppm(cfg.out_dir + "/trans_mask.ppm", render_mask(t_full, h, w, true));

    std::array<std::int64_t, kGeneralClasses> g_count{};
    std::array<std::int64_t, kTransClasses> t_count{};
    for (auto c : g_full) ++g_count[c];
    for (auto c : t_full) ++t_count[c];
    for (int c = 0; c < kGeneralClasses; ++c)
        if (g_count[static_cast<std::size_t>(c)])
            std::cout << "{\"head\":\"general\",\"class\":\""
                      << general_class_names()[static_cast<std::size_t>(c)]
                      << "\",\"pixels\":" << g_count[static_cast<std::size_t>(c)] << "}\n";
    for (int c = 0; c < kTransClasses; ++c)
        if (t_count[static_cast<std::size_t>(c)])
            std::cout << "{\"head\":\"trans\",\"class\":\""
                      << trans_class_names()[static_cast<std::size_t>(c)]
                      << "\",\"pixels\":" << t_count[static_cast<std::size_t>(c)] << "}\n";

    if (!gt_general.empty()) {
        ConfusionMatrix cm(cfg.general_classes);
        cm.add(g, read_pgm8(gt_general).data);
        std::cout << "{\"head\":\"general\",\"pixel_accuracy\":" << cm.pixel_accuracy()
                  << ",\"miou\":" << cm.miou() << "}\n";
    }
    if (!gt_trans.empty()) {
        ConfusionMatrix cm(cfg.trans_classes);
        cm.add(t, read_pgm8(gt_trans).data);
        std::cout << "{\"head\":\"trans\",\"pixel_accuracy\":" << cm.pixel_accuracy()
                  << ",\"miou\":" << cm.miou() << "}\n";
    }
    return 0;
}

int cmd_replay(RunConfig cfg, const std::string& frames_dir, const std::string& log_path,
               bool use_labels) {
    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) throw IoError("replay: cannot open log " + log_path);
        log = &log_file;
    }
    ReplayResult result;
    if (use_labels) {
        const bool toy = cfg.general_classes == kToyGeneralClasses;
        result = replay_frames_with_labels(frames_dir, cfg.decision, toy);
        for (const auto& ev : result.events) (*log) << ev.to_json() << "\n";
    } else {
        if (cfg.checkpoint_path.empty()) throw ConfigError("replay: set paths.checkpoint");
        auto model = build_model<float>(cfg);
        load_checkpoint(cfg.checkpoint_path, model, cfg);
        auto seg = model_segmenter(model, cfg.general_classes, cfg.trans_classes);
        result = replay_frames(frames_dir, seg, cfg.decision,
                               [&](const FeedbackEvent& ev) { (*log) << ev.to_json() << "\n"; });
    }
    std::cerr << "frames used " << result.frames_used << ", skipped " << result.frames_skipped
              << ", events " << result.events.size() << "\n";
    return 0;
}

int cmd_metrics(const RunConfig& cfg, int size, bool as_json, int latency_runs,
                int latency_size) {
    auto single = analytic_cost(cfg.encoder, cfg.tpm, {cfg.general_classes}, size, size);
    auto dual = analytic_cost(cfg.encoder, cfg.tpm, {cfg.general_classes, cfg.trans_classes},
                              size, size);
    if (latency_runs > 0) {
        auto model = build_model<float>(cfg);
        dual.latency = measure_model_latency(model, latency_size, latency_size, latency_runs, 2);
    }
    if (as_json) {
        std::cout << single.render_jsonl() << dual.render_jsonl();
    } else {
        std::cout << "== single-head @" << size << "x" << size << " ==\n"
                  << single.render_text() << "\n== dual-head @" << size << "x" << size
                  << " ==\n"
                  << dual.render_text();
    }
    return 0;
}

int cmd_gradcheck() {
    auto results = run_gradcheck();
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  max_rel_err "
                  << r.max_rel_err << "\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

int cmd_export_features(RunConfig cfg, const std::string& image_path) {
    if (cfg.checkpoint_path.empty()) throw ConfigError("export-features: set paths.checkpoint");
    auto model = build_model<float>(cfg);
    load_checkpoint(cfg.checkpoint_path, model, cfg);
    auto img = load_image_tensor(image_path);
    fs::create_directories(cfg.out_dir);
    for (const auto& f : export_feature_maps(model, img, cfg.out_dir)) std::cout << f << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-head segmentation transformer and assistive decision engine"};
    app.require_subcommand(1);

    ConfigCli cc_synth, cc_train, cc_infer, cc_replay, cc_metrics, cc_export;

    auto* synth = app.add_subcommand("synth", "generate a synthetic RGB-D scene dataset");
    std::string synth_out = "scenes";
    int synth_count = 64, synth_size = 32;
    std::uint64_t synth_seed = 1;
    bool synth_full = false;
    cc_synth.attach(synth);
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--count", synth_count, "number of scenes");
    synth->add_option("--size", synth_size, "image side (multiple of 32)");
    synth->add_option("--seed", synth_seed, "dataset seed");
    synth->add_flag("--full-tables", synth_full, "use the full 13/12 class tables");

    auto* train_cmd = app.add_subcommand("train", "train on a scene directory");
    std::string train_data, train_out;
    cc_train.attach(train_cmd);
    train_cmd->add_option("--dataset", train_data, "scene directory");
    train_cmd->add_option("--out", train_out, "checkpoint output path");

    auto* infer = app.add_subcommand("infer", "segment one image and write mask files");
    std::string infer_image, infer_gt_g, infer_gt_t, infer_ckpt, infer_out;
    cc_infer.attach(infer);
    infer->add_option("--checkpoint", infer_ckpt, "checkpoint path");
    infer->add_option("--image", infer_image, "input PPM image")->required();
    infer->add_option("--out-dir", infer_out, "mask output directory");
    infer->add_option("--gt-general", infer_gt_g, "general ground-truth PGM for scoring");
    infer->add_option("--gt-trans", infer_gt_t, "transparency ground-truth PGM for scoring");

    auto* replay = app.add_subcommand("replay", "stream frames and log feedback events");
    std::string replay_frames_dir, replay_log, replay_ckpt;
    bool replay_labels = false;
    cc_replay.attach(replay);
    attach_threshold_flags(replay, cc_replay);
    replay->add_option("--checkpoint", replay_ckpt, "checkpoint path");
    replay->add_option("--frames", replay_frames_dir, "directory of numbered .ppm/.pgm pairs")
        ->required();
    replay->add_option("--log", replay_log, "event log path (default stdout)");
    replay->add_flag("--use-labels", replay_labels,
                     "segment from *_gt_*.pgm files instead of a checkpoint");

    auto* metrics = app.add_subcommand("metrics", "parameter/FLOP report and latency");
    int metrics_size = 512, metrics_lat_runs = 0, metrics_lat_size = 512;
    bool metrics_json = false;
    cc_metrics.attach(metrics);
    metrics->add_option("--size", metrics_size, "input side for the cost model");
    metrics->add_flag("--json", metrics_json, "emit line-delimited JSON");
    metrics->add_option("--latency-runs", metrics_lat_runs,
                        "measure forward latency over this many runs (>= 10)");
    metrics->add_option("--latency-size", metrics_lat_size, "input side for latency runs");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");

    auto* exportf = app.add_subcommand("export-features", "write decoder feature-map images");
    std::string export_image, export_ckpt, export_out;
    cc_export.attach(exportf);
    exportf->add_option("--checkpoint", export_ckpt, "checkpoint path");
    exportf->add_option("--image", export_image, "input PPM image")->required();
    exportf->add_option("--out-dir", export_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            auto cfg = cc_synth.resolve();
            cfg.seed = synth_seed;
            return cmd_synth(cfg, synth_out, synth_count, synth_full, synth_size);
        }
        if (train_cmd->parsed()) {
            auto cfg = cc_train.resolve();
            if (!train_data.empty()) cfg.dataset_dir = train_data;
            if (!train_out.empty()) cfg.checkpoint_path = train_out;
            return cmd_train(cfg);
        }
        if (infer->parsed()) {
            auto cfg = cc_infer.resolve();
            if (!infer_ckpt.empty()) cfg.checkpoint_path = infer_ckpt;
            if (!infer_out.empty()) cfg.out_dir = infer_out;
            return cmd_infer(cfg, infer_image, infer_gt_g, infer_gt_t);
        }
        if (replay->parsed()) {
            auto cfg = cc_replay.resolve();
            if (!replay_ckpt.empty()) cfg.checkpoint_path = replay_ckpt;
            return cmd_replay(cfg, replay_frames_dir, replay_log, replay_labels);
        }
        if (metrics->parsed())
            return cmd_metrics(cc_metrics.resolve(), metrics_size, metrics_json,
                               metrics_lat_runs, metrics_lat_size);
        if (gradcheck->parsed()) return cmd_gradcheck();
        if (exportf->parsed()) {
            auto cfg = cc_export.resolve();
            if (!export_ckpt.empty()) cfg.checkpoint_path = export_ckpt;
            if (!export_out.empty()) cfg.out_dir = export_out;
            return cmd_export_features(cfg, export_image);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
