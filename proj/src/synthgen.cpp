#include "uqcloud/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include "uqcloud/error.hpp"

namespace uqcloud {

static void check_spec(const SceneSpec& spec) {
    require(spec.room_x > 0 && spec.room_y > 0 && spec.room_z > 0,
            "scene: room extents must be positive");
    require(spec.points_per_class > 0, "scene: points_per_class must be positive");
    require(spec.hole_prob >= 0 && spec.hole_prob <= 1, "scene: hole_prob must lie in [0,1]");
    require(spec.color_noise >= 0, "scene: color_noise must be non-negative");
    require(static_cast<int>(spec.ratios.size()) == kSynthClasses,
            "scene: expected one ratio per class");
    for (double r : spec.ratios)
        require(r >= 0, "scene: class ratios must be non-negative");
}

const std::array<std::string, kSynthClasses>& synth_class_names() {
    static const std::array<std::string, kSynthClasses> names = {
        "floor", "ceiling", "wall", "column", "box", "clutter"};
    return names;
}

const std::array<std::array<std::uint8_t, 3>, kSynthClasses>& synth_class_colors() {
    static const std::array<std::array<std::uint8_t, 3>, kSynthClasses> colors = {{
        {110, 110, 115},  // floor
        {225, 225, 220},  // ceiling
        {190, 170, 150},  // wall
        {90, 95, 105},    // column
        {165, 120, 70},   // box
        {40, 160, 60},    // clutter (replaced per patch below)
    }};
    return colors;
}

SceneSpec scene_spec_from_config(const KvConfig& cfg) {
    SceneSpec spec;
    spec.room_x = cfg.get_double("room_x", spec.room_x);
    spec.room_y = cfg.get_double("room_y", spec.room_y);
    spec.room_z = cfg.get_double("room_z", spec.room_z);
    spec.points_per_class = cfg.get_long("points_per_class", spec.points_per_class);
    spec.hole_prob = cfg.get_double("hole_prob", spec.hole_prob);
    spec.color_noise = cfg.get_double("color_noise", spec.color_noise);
    spec.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 0));
    for (int c = 0; c < kSynthClasses; ++c)
        spec.ratios[static_cast<size_t>(c)] =
            cfg.get_double("ratio_" + synth_class_names()[static_cast<size_t>(c)],
                           spec.ratios[static_cast<size_t>(c)]);
    check_spec(spec);
    return spec;
}

namespace {

// One planar face, parameterized over (u,v) in [0,1]^2, with an optional
// rectangular occlusion hole in parameter space.
struct Face {
    // position = origin + u*edge_u + v*edge_v
    std::array<double, 3> origin, edge_u, edge_v;
    bool has_hole = false;
    double hu0 = 0, hu1 = 0, hv0 = 0, hv1 = 0;
};

Face make_face(std::array<double, 3> origin, std::array<double, 3> edge_u,
               std::array<double, 3> edge_v, double hole_prob, RngStream& rng) {
    Face f{origin, edge_u, edge_v};
    if (rng.bernoulli(hole_prob)) {
        const double cu = rng.uniform(0.2, 0.8);
        const double cv = rng.uniform(0.2, 0.8);
        const double au = rng.uniform(0.08, 0.22);
        const double av = rng.uniform(0.08, 0.22);
        f.has_hole = true;
        f.hu0 = cu - au;
        f.hu1 = cu + au;
        f.hv0 = cv - av;
        f.hv1 = cv + av;
    }
    return f;
}

struct Emitter {
    PointCloud* cloud;
    double color_noise;
    RngStream* rng;

    // returns false when the sample fell into an occlusion hole
    bool emit(const Face& f, int label, const std::array<int, 3>& base) {
        const double u = rng->uniform();
        const double v = rng->uniform();
        if (f.has_hole && u > f.hu0 && u < f.hu1 && v > f.hv0 && v < f.hv1) return false;
        for (int d = 0; d < 3; ++d)
            cloud->xyz.push_back(static_cast<float>(f.origin[static_cast<size_t>(d)] +
                                                    u * f.edge_u[static_cast<size_t>(d)] +
                                                    v * f.edge_v[static_cast<size_t>(d)]));
        for (int d = 0; d < 3; ++d) {
            const double c = base[static_cast<size_t>(d)] + rng->normal(0.0, color_noise);
            cloud->rgb.push_back(static_cast<std::uint8_t>(
                std::lround(std::clamp(c, 0.0, 255.0))));
        }
        cloud->labels.push_back(label);
        return true;
    }
};

}  // namespace

PointCloud generate_scene(const SceneSpec& spec) {
    check_spec(spec);

    RngStream rng(spec.seed, /*stream=*/0x5CE17Eu);
    const double lx = spec.room_x, ly = spec.room_y, h = spec.room_z;

    // ---- fixed scene structure first, points afterwards, so that the
    // draw order (and thus the cloud) is reproducible per seed
    Face floor = make_face({0, 0, 0}, {lx, 0, 0}, {0, ly, 0}, spec.hole_prob, rng);
    Face ceiling = make_face({0, 0, h}, {lx, 0, 0}, {0, ly, 0}, spec.hole_prob, rng);
    std::vector<Face> walls;
    walls.push_back(make_face({0, 0, 0}, {0, ly, 0}, {0, 0, h}, spec.hole_prob, rng));
    walls.push_back(make_face({lx, 0, 0}, {0, ly, 0}, {0, 0, h}, spec.hole_prob, rng));
    walls.push_back(make_face({0, 0, 0}, {lx, 0, 0}, {0, 0, h}, spec.hole_prob, rng));
    walls.push_back(make_face({0, ly, 0}, {lx, 0, 0}, {0, 0, h}, spec.hole_prob, rng));

    std::vector<Face> column_faces;
    const int n_columns = 2 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < n_columns; ++i) {
        const double s = (0.04 + 0.04 * rng.uniform()) * std::min(lx, ly);  // half side
        const double cx = rng.uniform(0.15 * lx, 0.85 * lx);
        const double cy = rng.uniform(0.15 * ly, 0.85 * ly);
        column_faces.push_back(make_face({cx + s, cy - s, 0}, {0, 2 * s, 0}, {0, 0, h},
                                         spec.hole_prob, rng));
        column_faces.push_back(make_face({cx - s, cy - s, 0}, {0, 2 * s, 0}, {0, 0, h},
                                         spec.hole_prob, rng));
        column_faces.push_back(make_face({cx - s, cy + s, 0}, {2 * s, 0, 0}, {0, 0, h},
                                         spec.hole_prob, rng));
        column_faces.push_back(make_face({cx - s, cy - s, 0}, {2 * s, 0, 0}, {0, 0, h},
                                         spec.hole_prob, rng));
    }

    std::vector<Face> box_faces;
    const int n_boxes = 2 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < n_boxes; ++i) {
        const double ex = rng.uniform(0.10, 0.25) * lx;
        const double ey = rng.uniform(0.10, 0.25) * ly;
        const double bh = rng.uniform(0.15, 0.45) * h;
        const double cx = rng.uniform(0.15 * lx, 0.85 * lx - ex);
        const double cy = rng.uniform(0.15 * ly, 0.85 * ly - ey);
        // four sides plus the top
        box_faces.push_back(make_face({cx, cy, 0}, {ex, 0, 0}, {0, 0, bh}, spec.hole_prob, rng));
        box_faces.push_back(make_face({cx, cy + ey, 0}, {ex, 0, 0}, {0, 0, bh}, spec.hole_prob, rng));
        box_faces.push_back(make_face({cx, cy, 0}, {0, ey, 0}, {0, 0, bh}, spec.hole_prob, rng));
        box_faces.push_back(make_face({cx + ex, cy, 0}, {0, ey, 0}, {0, 0, bh}, spec.hole_prob, rng));
        box_faces.push_back(make_face({cx, cy, bh}, {ex, 0, 0}, {0, ey, 0}, spec.hole_prob, rng));
    }

    std::vector<Face> patches;
    std::vector<std::array<int, 3>> patch_colors;
    const int n_patches = 8 + static_cast<int>(rng.uniform_int(5));
    const double patch_scale = std::min({lx, ly, h});
    for (int i = 0; i < n_patches; ++i) {
        const double eu = rng.uniform(0.05, 0.15) * patch_scale;
        const double ev = rng.uniform(0.05, 0.15) * patch_scale;
        const int orient = static_cast<int>(rng.uniform_int(3));
        std::array<double, 3> du{}, dv{};
        if (orient == 0) { du = {eu, 0, 0}; dv = {0, ev, 0}; }
        else if (orient == 1) { du = {eu, 0, 0}; dv = {0, 0, ev}; }
        else { du = {0, eu, 0}; dv = {0, 0, ev}; }
        // place the origin so the whole patch stays inside the room
        const double px = rng.uniform(0, lx - du[0] - dv[0]);
        const double py = rng.uniform(0, ly - du[1] - dv[1]);
        const double pz = rng.uniform(0, h - du[2] - dv[2]);
        patches.push_back(make_face({px, py, pz}, du, dv, spec.hole_prob, rng));
        // clutter colors are randomized per patch, which makes the class
        // visually ambiguous on purpose
        patch_colors.push_back({static_cast<int>(rng.uniform_int(256)),
                                static_cast<int>(rng.uniform_int(256)),
                                static_cast<int>(rng.uniform_int(256))});
    }

    PointCloud cloud;
    Emitter emit{&cloud, spec.color_noise, &rng};
    const auto& palette = synth_class_colors();
    auto base_of = [&](int cls) {
        return std::array<int, 3>{palette[static_cast<size_t>(cls)][0],
                                  palette[static_cast<size_t>(cls)][1],
                                  palette[static_cast<size_t>(cls)][2]};
    };
    auto count_of = [&](int cls) {
        return std::lround(spec.points_per_class * spec.ratios[static_cast<size_t>(cls)]);
    };

    for (long i = 0, n = count_of(0); i < n; ++i) emit.emit(floor, 0, base_of(0));
    for (long i = 0, n = count_of(1); i < n; ++i) emit.emit(ceiling, 1, base_of(1));
    for (long i = 0, n = count_of(2); i < n; ++i)
        emit.emit(walls[rng.uniform_int(walls.size())], 2, base_of(2));
    for (long i = 0, n = count_of(3); i < n; ++i)
        emit.emit(column_faces[rng.uniform_int(column_faces.size())], 3, base_of(3));
    for (long i = 0, n = count_of(4); i < n; ++i)
        emit.emit(box_faces[rng.uniform_int(box_faces.size())], 4, base_of(4));
    for (long i = 0, n = count_of(5); i < n; ++i) {
        const auto p = rng.uniform_int(patches.size());
        emit.emit(patches[p], 5, patch_colors[p]);
    }
    return cloud;
}

void train_test_split(int n_scenes, double test_fraction, RngStream& rng,
                      std::vector<int>* train, std::vector<int>* test) {
    require(n_scenes >= 2, "split: need at least 2 scenes");
    const long n_test = std::lround(n_scenes * test_fraction);
    require(n_test >= 1 && n_test <= n_scenes - 1,
            "split: fraction " + std::to_string(test_fraction) +
                " leaves an empty side for " + std::to_string(n_scenes) + " scenes");
    std::vector<int> ids(static_cast<size_t>(n_scenes));
    for (int i = 0; i < n_scenes; ++i) ids[static_cast<size_t>(i)] = i;
    for (int i = n_scenes - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
        std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
    }
    train->assign(ids.begin(), ids.end() - n_test);
    test->assign(ids.end() - n_test, ids.end());
    std::sort(train->begin(), train->end());
    std::sort(test->begin(), test->end());
}

}  // namespace uqcloud
