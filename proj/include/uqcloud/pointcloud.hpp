#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uqcloud/rng.hpp"

namespace uqcloud {

constexpr std::int64_t kBlockPoints = 4096;
constexpr int kFeatureDim = 9;   // centered xyz, rgb in [0,1], original xyz
constexpr int kNetInputDim = 6;  // the network consumes the first 6 columns

// Labeled point set. Stored column-major-ish as parallel arrays; labels are
// optional (empty vector when the cloud is unlabeled).
struct PointCloud {
    std::vector<float> xyz;            // 3 per point
    std::vector<std::uint8_t> rgb;     // 3 per point
    std::vector<std::int32_t> labels;  // 1 per point, or empty
    std::string source_id;

    std::int64_t size() const { return static_cast<std::int64_t>(xyz.size() / 3); }
    bool has_labels() const { return !labels.empty(); }
};

// Fixed-size network input unit cut from a cloud. `indices` may contain
// duplicates (up-sampling by repeated drawing).
struct Block {
    std::vector<std::int64_t> indices;  // kBlockPoints rows into the source cloud
    std::vector<float> features;        // kBlockPoints x kFeatureDim
    std::vector<std::int32_t> labels;   // kBlockPoints, -1 where unlabeled
};

// I/O. The format is chosen by extension: ".ply" is binary little-endian
// PLY (x,y,z float32; red,green,blue uchar; optional label int32), anything
// else is ASCII lines `x y z r g b [label]`.
PointCloud load_cloud(const std::string& path);
void write_cloud(const PointCloud& cloud, const std::string& path);
PointCloud load_cloud_ascii(const std::string& path);
PointCloud load_cloud_ply(const std::string& path);
void write_cloud_ascii(const PointCloud& cloud, const std::string& path);
void write_cloud_ply(const PointCloud& cloud, const std::string& path);

// Axis-aligned xy-grid windows of footprint block_size, advanced by stride.
// Empty windows are skipped; with stride == block_size the result is a
// partition of the point indices.
std::vector<std::vector<std::int64_t>> split_blocks(const PointCloud& cloud,
                                                    double block_size = 1.0,
                                                    double stride = 1.0);

// Down-sample without replacement / up-sample by repeated drawing to exactly
// kBlockPoints indices.
std::vector<std::int64_t> resample_to_4096(const std::vector<std::int64_t>& indices,
                                           RngStream& rng);

// Shuffle the cell's indices and split them into ceil(n/4096) chunks; the
// last chunk is padded by cycling through the chunk from its start. Every
// index appears in at least one chunk, so evaluation covers every point.
std::vector<std::vector<std::int64_t>> eval_chunks(const std::vector<std::int64_t>& indices,
                                                   RngStream& rng);

// 9-column featurization: xyz centered on the block centroid, rgb scaled to
// [0,1], then the original xyz.
Block featurize(const PointCloud& cloud, const std::vector<std::int64_t>& indices);

}  // namespace uqcloud
