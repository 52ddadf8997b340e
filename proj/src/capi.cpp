#include "uqcloud.h"

#include <dlfcn.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "uqcloud/checkpoint.hpp"
#include "uqcloud/error.hpp"
#include "uqcloud/inference.hpp"
#include "uqcloud/kvconfig.hpp"
#include "uqcloud/pointcloud.hpp"
#include "uqcloud/pointnet.hpp"
#include "uqcloud/synthgen.hpp"
#include "uqcloud/trainer.hpp"
#include "uqcloud/uncertainty.hpp"

struct uqc_cloud {
    uqcloud::PointCloud cloud;
};

struct uqc_model {
    uqcloud::SegNet<float> net;
    std::string regime;
};

namespace {

thread_local std::string t_last_error = "no error";

uqc_status fail_status(const std::string& msg) {
    t_last_error = msg;
    return UQC_ERROR;
}

uqc_status bad_argument(const std::string& msg) {
    t_last_error = msg;
    return UQC_BAD_ARGUMENT;
}

template <typename Fn>
uqc_status guarded(Fn&& fn) {
    try {
        fn();
        return UQC_OK;
    } catch (const uqcloud::Error& e) {
        return fail_status(e.what());
    } catch (const std::exception& e) {
        return fail_status(e.what());
    }
}

uqcloud::KvConfig parse_opts(const char* opts) {
    return uqcloud::KvConfig::parse(opts ? opts : "");
}

uqcloud::LogFn wrap_log(uqc_log_fn log, void* user) {
    if (!log) return {};
    return [log, user](const std::string& line) { log(line.c_str(), user); };
}

// Cloud files in the directory, sorted by name for a stable ordering.
std::vector<std::filesystem::path> cloud_files(const std::string& dir) {
    namespace fs = std::filesystem;
    uqcloud::require(fs::is_directory(dir), "not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".ply" || ext == ".xyz") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    uqcloud::require(!files.empty(), "no .ply or .xyz files in " + dir);
    return files;
}

uqcloud::PointCloud load_room(const std::filesystem::path& path) {
    uqcloud::PointCloud cloud = uqcloud::load_cloud(path.string());
    cloud.source_id = path.stem().string();
    return cloud;
}

uqcloud::SegNet<float> load_net(const char* checkpoint) {
    return uqcloud::net_from_checkpoint<float>(uqcloud::load_checkpoint(checkpoint));
}

std::vector<uqcloud::Measure> parse_measures(const std::string& text) {
    using uqcloud::Measure;
    if (text == "all")
        return {Measure::predictive, Measure::aleatoric, Measure::epistemic, Measure::variance,
                Measure::credible};
    std::vector<Measure> out;
    for (const std::string& part : uqcloud::split_string(text, ','))
        out.push_back(uqcloud::measure_from_name(uqcloud::trim(part)));
    return out;
}

}  // namespace

extern "C" {

const char* uqc_last_error(void) { return t_last_error.c_str(); }

const char* uqc_version(void) { return "0.1.0"; }

uqc_status uqc_set_threads(int n) {
    if (n < 1) return bad_argument("thread count must be at least 1");
    using SetThreads = void (*)(int);
    if (auto fn = reinterpret_cast<SetThreads>(dlsym(RTLD_DEFAULT, "openblas_set_num_threads")))
        fn(n);
    return UQC_OK;
}

uqc_status uqc_cloud_load(const char* path, uqc_cloud** out) {
    if (!path || !out) return bad_argument("uqc_cloud_load: NULL argument");
    return guarded([&] { *out = new uqc_cloud{load_room(path)}; });
}

uqc_status uqc_cloud_write(const uqc_cloud* cloud, const char* path) {
    if (!cloud || !path) return bad_argument("uqc_cloud_write: NULL argument");
    return guarded([&] { uqcloud::write_cloud(cloud->cloud, path); });
}

int64_t uqc_cloud_size(const uqc_cloud* cloud) { return cloud ? cloud->cloud.size() : -1; }

void uqc_cloud_free(uqc_cloud* cloud) { delete cloud; }

uqc_status uqc_model_load(const char* path, uqc_model** out) {
    if (!path || !out) return bad_argument("uqc_model_load: NULL argument");
    return guarded([&] {
        auto* model = new uqc_model{load_net(path), ""};
        model->regime = uqcloud::regime_name(model->net.cfg.regime);
        *out = model;
    });
}

const char* uqc_model_regime(const uqc_model* model) {
    return model ? model->regime.c_str() : nullptr;
}

int uqc_model_classes(const uqc_model* model) { return model ? model->net.cfg.classes : -1; }

void uqc_model_free(uqc_model* model) { delete model; }

uqc_status uqc_synth(const char* spec_path, const char* out_dir, uint64_t seed, int scenes,
                     uqc_log_fn log, void* user) {
    if (!out_dir) return bad_argument("uqc_synth: NULL output directory");
    return guarded([&] {
        namespace fs = std::filesystem;
        uqcloud::KvConfig cfg =
            spec_path ? uqcloud::KvConfig::parse_file(spec_path) : uqcloud::KvConfig();
        uqcloud::SceneSpec spec = uqcloud::scene_spec_from_config(cfg);
        const int count = scenes > 0 ? scenes : static_cast<int>(cfg.get_long("scenes", 1));
        uqcloud::require(count >= 1, "scene count must be at least 1");
        fs::create_directories(out_dir);
        const uqcloud::LogFn say = wrap_log(log, user);
        for (int i = 0; i < count; ++i) {
            spec.seed = seed + static_cast<uint64_t>(i);
            uqcloud::PointCloud cloud = uqcloud::generate_scene(spec);
            cloud.source_id = "scene_" + std::to_string(i);
            const fs::path path = fs::path(out_dir) / (cloud.source_id + ".ply");
            uqcloud::write_cloud_ply(cloud, path.string());
            if (say)
                say(cloud.source_id + ": " + std::to_string(cloud.size()) + " points -> " +
                    path.string());
        }
    });
}

uqc_status uqc_train(const char* kind, const char* data_dir, const char* opts,
                     const char* checkpoint_out, uqc_log_fn log, void* user) {
    if (!kind || !data_dir || !checkpoint_out) return bad_argument("uqc_train: NULL argument");
    return guarded([&] {
        const std::string name = std::string(kind) == "bayesian" ? "bayes" : kind;
        const uqcloud::Regime regime = uqcloud::regime_from_name(name);
        const uqcloud::KvConfig cfg = parse_opts(opts);

        uqcloud::TrainConfig tc = uqcloud::TrainConfig::defaults_for(regime);
        tc.classes = static_cast<int>(cfg.get_long("classes", tc.classes));
        tc.epochs = static_cast<int>(cfg.get_long("epochs", tc.epochs));
        tc.batch_size = static_cast<int>(cfg.get_long("batch_size", tc.batch_size));
        tc.lr0 = cfg.get_double("lr", tc.lr0);
        tc.decay_factor = cfg.get_double("decay_factor", tc.decay_factor);
        tc.decay_period = static_cast<int>(cfg.get_long("decay_period", tc.decay_period));
        tc.momentum = cfg.get_double("momentum", tc.momentum);
        tc.weight_decay = cfg.get_double("weight_decay", tc.weight_decay);
        tc.prior_sigma_w = cfg.get_double("prior_sigma_w", tc.prior_sigma_w);
        tc.prior_sigma_b = cfg.get_double("prior_sigma_b", tc.prior_sigma_b);
        tc.drop_prob = cfg.get_double("drop_prob", tc.drop_prob);
        tc.drop_sites = cfg.get("drop_sites", tc.drop_sites);
        tc.checkpoint_period =
            static_cast<int>(cfg.get_long("checkpoint_period", tc.checkpoint_period));
        tc.seed = static_cast<uint64_t>(cfg.get_long("seed", 0));
        const double block_size = cfg.get_double("block_size", 1.0);

        // Blocks are resampled with a stream split off the same root the
        // trainer uses (lanes 0-2), so a seed pins the whole run.
        uqcloud::RngStream sample_rng = uqcloud::RngStream(tc.seed).split(3);
        std::vector<uqcloud::Block> blocks;
        for (const auto& path : cloud_files(data_dir)) {
            const uqcloud::PointCloud cloud = load_room(path);
            uqcloud::require(cloud.has_labels(), "training cloud has no labels: " + path.string());
            for (const auto& cell : uqcloud::split_blocks(cloud, block_size, block_size))
                blocks.push_back(
                    uqcloud::featurize(cloud, uqcloud::resample_to_4096(cell, sample_rng)));
        }
        uqcloud::train_model(blocks, tc, wrap_log(log, user), checkpoint_out);
    });
}

uqc_status uqc_evaluate(const char* checkpoint, const char* data_dir, const char* opts,
                        const char* csv_out, uqc_log_fn log, void* user) {
    if (!checkpoint || !data_dir || !csv_out) return bad_argument("uqc_evaluate: NULL argument");
    return guarded([&] {
        uqcloud::SegNet<float> net = load_net(checkpoint);
        const uqcloud::KvConfig cfg = parse_opts(opts);

        uqcloud::EvalConfig ec;
        ec.samples = static_cast<int>(cfg.get_long("k", ec.samples));
        ec.measures = parse_measures(cfg.get("measures", "all"));
        ec.sigmas = cfg.get_double("sigmas", ec.sigmas);
        ec.block_size = cfg.get_double("block_size", ec.block_size);
        ec.seed = static_cast<uint64_t>(cfg.get_long("seed", 0));

        const uqcloud::LogFn say = wrap_log(log, user);
        std::vector<uqcloud::RoomEval> rooms;
        for (const auto& path : cloud_files(data_dir)) {
            rooms.push_back(uqcloud::evaluate_room(net, load_room(path), ec));
            if (say) {
                const uqcloud::RoomEval& r = rooms.back();
                char line[160];
                std::snprintf(line, sizeof(line), "%s: accuracy %.4f, mean iou %.4f",
                              r.room.c_str(), r.accuracy, r.miou);
                say(line);
            }
        }

        const std::string csv = uqcloud::evaluate_csv(rooms, uqcloud::regime_name(net.cfg.regime));
        std::FILE* f = std::fopen(csv_out, "wb");
        uqcloud::require(f != nullptr, "cannot open " + std::string(csv_out));
        std::fwrite(csv.data(), 1, csv.size(), f);
        std::fclose(f);
    });
}

uqc_status uqc_predict(const char* checkpoint, const char* cloud_path, const char* opts,
                       const char* ply_out) {
    if (!checkpoint || !cloud_path || !ply_out) return bad_argument("uqc_predict: NULL argument");
    return guarded([&] {
        uqcloud::SegNet<float> net = load_net(checkpoint);
        const uqcloud::PointCloud cloud = load_room(cloud_path);
        const uqcloud::KvConfig cfg = parse_opts(opts);
        const double block_size = cfg.get_double("block_size", 1.0);
        const uint64_t seed = static_cast<uint64_t>(cfg.get_long("seed", 0));

        const uqcloud::SampleStack stack =
            uqcloud::room_stack(net, cloud, 1, block_size, seed, /*mean_pass=*/true);
        const std::vector<int32_t> pred = uqcloud::predict(stack);

        uqcloud::PointCloud out;
        out.xyz = cloud.xyz;
        out.rgb = cloud.rgb;
        out.labels = pred;
        out.source_id = cloud.source_id;
        if (net.cfg.classes == uqcloud::kSynthClasses) {
            const auto& palette = uqcloud::synth_class_colors();
            for (size_t i = 0; i < pred.size(); ++i) {
                const auto& c = palette[static_cast<size_t>(pred[i])];
                out.rgb[3 * i + 0] = c[0];
                out.rgb[3 * i + 1] = c[1];
                out.rgb[3 * i + 2] = c[2];
            }
        }
        uqcloud::write_cloud(out, ply_out);
    });
}

uqc_status uqc_uncertainty(const char* checkpoint, const char* cloud_path, const char* opts,
                           const char* ply_out) {
    if (!checkpoint || !cloud_path || !ply_out)
        return bad_argument("uqc_uncertainty: NULL argument");
    return guarded([&] {
        uqcloud::SegNet<float> net = load_net(checkpoint);
        const uqcloud::PointCloud cloud = load_room(cloud_path);
        const uqcloud::KvConfig cfg = parse_opts(opts);
        const int samples = static_cast<int>(cfg.get_long("k", 50));
        const uqcloud::Measure measure =
            uqcloud::measure_from_name(cfg.get("measure", "predictive"));
        const double sigmas = cfg.get_double("sigmas", 2.0);
        const double block_size = cfg.get_double("block_size", 1.0);
        const uint64_t seed = static_cast<uint64_t>(cfg.get_long("seed", 0));

        const uqcloud::SampleStack stack =
            uqcloud::room_stack(net, cloud, samples, block_size, seed);
        const uqcloud::UncertaintyReport report =
            uqcloud::measure_report(stack, measure, sigmas);
        const std::vector<int32_t> pred = uqcloud::predict(stack);

        uqcloud::write_uncertainty_ply(cloud, pred, report.certain, ply_out);
        const std::string csv_path = cfg.get("csv", "");
        if (!csv_path.empty()) uqcloud::write_uncertainty_csv(cloud, pred, report, csv_path);
        const std::string stack_path = cfg.get("stack", "");
        if (!stack_path.empty()) uqcloud::save_stack(stack, stack_path);
    });
}

uqc_status uqc_export_quantiles(const char* stack_path, int64_t point, const char* out_path) {
    if (!stack_path || !out_path) return bad_argument("uqc_export_quantiles: NULL argument");
    return guarded([&] {
        const uqcloud::SampleStack stack = uqcloud::load_stack(stack_path);
        const std::string table = uqcloud::quantile_table(stack, point);
        std::FILE* f = std::fopen(out_path, "wb");
        uqcloud::require(f != nullptr, "cannot open " + std::string(out_path));
        std::fwrite(table.data(), 1, table.size(), f);
        std::fclose(f);
    });
}

}  // extern "C"
