#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uqcloud/kvconfig.hpp"
#include "uqcloud/pointcloud.hpp"
#include "uqcloud/rng.hpp"

namespace uqcloud {

// Fixed class roster for generated indoor scenes.
constexpr int kSynthClasses = 6;
const std::array<std::string, kSynthClasses>& synth_class_names();
// display palette, also used for predicted-label exports
const std::array<std::array<std::uint8_t, 3>, kSynthClasses>& synth_class_colors();

struct SceneSpec {
    double room_x = 4.0, room_y = 4.0, room_z = 3.0;  // meters
    long points_per_class = 2000;
    double hole_prob = 0.0;    // chance that a surface gets an occlusion hole
    double color_noise = 10.0; // gaussian color jitter std, 0-255 scale
    std::vector<double> ratios = std::vector<double>(kSynthClasses, 1.0);
    std::uint64_t seed = 0;
};

// keys: room_x/room_y/room_z, points_per_class, hole_prob, color_noise,
// ratio_<class>, seed
SceneSpec scene_spec_from_config(const KvConfig& cfg);

// Deterministic in spec.seed; class c receives round(points_per_class *
// ratios[c]) candidate points, minus any that fall into occlusion holes.
PointCloud generate_scene(const SceneSpec& spec);

/// Scene-granularity split: round(n * test_fraction) scenes are held out.
// Deterministic in the rng state; errors when either side would be empty.
void train_test_split(int n_scenes, double test_fraction, RngStream& rng,
                      std::vector<int>* train, std::vector<int>* test);

}  // namespace uqcloud
