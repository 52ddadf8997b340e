#include "uqcloud/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "uqcloud/error.hpp"
#include "uqcloud/kvconfig.hpp"

namespace uqcloud {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void check_finite(const PointCloud& cloud, const std::string& path) {
    for (float v : cloud.xyz)
        require(std::isfinite(v), path + ": non-finite coordinate");
}

}  // namespace

PointCloud load_cloud(const std::string& path) {
    return ends_with(path, ".ply") ? load_cloud_ply(path) : load_cloud_ascii(path);
}

void write_cloud(const PointCloud& cloud, const std::string& path) {
    if (ends_with(path, ".ply"))
        write_cloud_ply(cloud, path);
    else
        write_cloud_ascii(cloud, path);
}

PointCloud load_cloud_ascii(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open point cloud: " + path);
    PointCloud cloud;
    cloud.source_id = path;
    std::string line;
    int lineno = 0;
    int columns = 0;  // 6 or 7, fixed by the first point line
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty()) continue;
        std::istringstream ls(t);
        double x, y, z;
        long r, g, b, label;
        if (!(ls >> x >> y >> z >> r >> g >> b))
            fail(path + ":" + std::to_string(lineno) + ": expected `x y z r g b [label]`, got '" +
                 t + "'");
        const bool has_label = static_cast<bool>(ls >> label);
        std::string rest;
        if (ls >> rest)
            fail(path + ":" + std::to_string(lineno) + ": trailing content '" + rest + "'");
        const int cols = has_label ? 7 : 6;
        if (columns == 0) columns = cols;
        if (cols != columns)
            fail(path + ":" + std::to_string(lineno) + ": inconsistent column count");
        require(r >= 0 && r <= 255 && g >= 0 && g <= 255 && b >= 0 && b <= 255,
                path + ":" + std::to_string(lineno) + ": color out of [0,255]");
        cloud.xyz.push_back(static_cast<float>(x));
        cloud.xyz.push_back(static_cast<float>(y));
        cloud.xyz.push_back(static_cast<float>(z));
        cloud.rgb.push_back(static_cast<std::uint8_t>(r));
        cloud.rgb.push_back(static_cast<std::uint8_t>(g));
        cloud.rgb.push_back(static_cast<std::uint8_t>(b));
        if (has_label) cloud.labels.push_back(static_cast<std::int32_t>(label));
    }
    check_finite(cloud, path);
    return cloud;
}

void write_cloud_ascii(const PointCloud& cloud, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    require(f != nullptr, "cannot write point cloud: " + path);
    const std::int64_t n = cloud.size();
    for (std::int64_t i = 0; i < n; ++i) {
        // %.9g keeps float32 coordinates exact through the round trip
        std::fprintf(f, "%.9g %.9g %.9g %d %d %d", cloud.xyz[3 * i], cloud.xyz[3 * i + 1],
                     cloud.xyz[3 * i + 2], cloud.rgb[3 * i], cloud.rgb[3 * i + 1],
                     cloud.rgb[3 * i + 2]);
        if (cloud.has_labels()) std::fprintf(f, " %d", cloud.labels[static_cast<size_t>(i)]);
        std::fputc('\n', f);
    }
    std::fclose(f);
}

PointCloud load_cloud_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open point cloud: " + path);
    std::string line;
    require(std::getline(in, line) && trim(line) == "ply", path + ": not a PLY file");
    require(std::getline(in, line) && trim(line) == "format binary_little_endian 1.0",
            path + ": only binary little-endian PLY is supported");

    std::int64_t count = -1;
    // property name -> (type, position in the row)
    struct Prop {
        std::string type;
        int offset;
    };
    std::vector<std::pair<std::string, Prop>> props;
    int row_bytes = 0;
    bool in_vertex = false;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t == "end_header") break;
        if (t.rfind("comment", 0) == 0) continue;
        std::istringstream ls(t);
        std::string word;
        ls >> word;
        if (word == "element") {
            std::string kind;
            std::int64_t n;
            ls >> kind >> n;
            require(kind == "vertex", path + ": unsupported PLY element '" + kind + "'");
            require(count < 0, path + ": duplicate vertex element");
            count = n;
            in_vertex = true;
        } else if (word == "property") {
            require(in_vertex, path + ": property outside the vertex element");
            std::string type, name;
            ls >> type >> name;
            int size;
            if (type == "float" || type == "float32") size = 4;
            else if (type == "uchar" || type == "uint8") size = 1;
            else if (type == "int" || type == "int32") size = 4;
            else fail(path + ": unsupported PLY property type '" + type + "'");
            props.emplace_back(name, Prop{type, row_bytes});
            row_bytes += size;
        } else {
            fail(path + ": unexpected header line '" + t + "'");
        }
    }
    require(count >= 0, path + ": missing vertex element");

    std::map<std::string, Prop> by_name;
    for (auto& [name, p] : props) {
        const bool known = name == "x" || name == "y" || name == "z" || name == "red" ||
                           name == "green" || name == "blue" || name == "label";
        require(known, path + ": unknown PLY property '" + name + "'");
        by_name[name] = p;
    }
    for (const char* n : {"x", "y", "z"}) {
        require(by_name.count(n), path + std::string(": missing PLY property '") + n + "'");
        require(by_name[n].type == "float" || by_name[n].type == "float32",
                path + std::string(": PLY property '") + n + "' must be float32");
    }
    for (const char* n : {"red", "green", "blue"}) {
        require(by_name.count(n), path + std::string(": missing PLY property '") + n + "'");
        require(by_name[n].type == "uchar" || by_name[n].type == "uint8",
                path + std::string(": PLY property '") + n + "' must be uchar");
    }
    const bool has_label = by_name.count("label") > 0;
    if (has_label)
        require(by_name["label"].type == "int" || by_name["label"].type == "int32",
                path + ": PLY property 'label' must be int32");

    PointCloud cloud;
    cloud.source_id = path;
    cloud.xyz.resize(static_cast<size_t>(3 * count));
    cloud.rgb.resize(static_cast<size_t>(3 * count));
    if (has_label) cloud.labels.resize(static_cast<size_t>(count));
    std::vector<char> row(static_cast<size_t>(row_bytes));
    for (std::int64_t i = 0; i < count; ++i) {
        in.read(row.data(), row_bytes);
        require(in.gcount() == row_bytes,
                path + ": truncated PLY payload at point " + std::to_string(i));
        auto read_f = [&](const char* n) {
            float v;
            std::memcpy(&v, row.data() + by_name[n].offset, 4);
            return v;
        };
        auto read_u8 = [&](const char* n) {
            return static_cast<std::uint8_t>(row[static_cast<size_t>(by_name[n].offset)]);
        };
        cloud.xyz[static_cast<size_t>(3 * i)] = read_f("x");
        cloud.xyz[static_cast<size_t>(3 * i + 1)] = read_f("y");
        cloud.xyz[static_cast<size_t>(3 * i + 2)] = read_f("z");
        cloud.rgb[static_cast<size_t>(3 * i)] = read_u8("red");
        cloud.rgb[static_cast<size_t>(3 * i + 1)] = read_u8("green");
        cloud.rgb[static_cast<size_t>(3 * i + 2)] = read_u8("blue");
        if (has_label) {
            std::int32_t v;
            std::memcpy(&v, row.data() + by_name["label"].offset, 4);
            cloud.labels[static_cast<size_t>(i)] = v;
        }
    }
    check_finite(cloud, path);
    return cloud;
}

void write_cloud_ply(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write point cloud: " + path);
    const std::int64_t n = cloud.size();
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << n << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (cloud.has_labels()) out << "property int label\n";
    out << "end_header\n";
    for (std::int64_t i = 0; i < n; ++i) {
        out.write(reinterpret_cast<const char*>(&cloud.xyz[3 * i]), 12);
        out.write(reinterpret_cast<const char*>(&cloud.rgb[3 * i]), 3);
        if (cloud.has_labels())
            out.write(reinterpret_cast<const char*>(&cloud.labels[static_cast<size_t>(i)]), 4);
    }
    require(out.good(), "write failed: " + path);
}

std::vector<std::vector<std::int64_t>> split_blocks(const PointCloud& cloud, double block_size,
                                                    double stride) {
    require(block_size > 0, "split_blocks: block_size must be positive");
    require(stride > 0 && stride <= block_size,
            "split_blocks: stride must lie in (0, block_size]");
    const std::int64_t n = cloud.size();
    if (n == 0) return {};
    double min_x = cloud.xyz[0], min_y = cloud.xyz[1];
    double max_x = min_x, max_y = min_y;
    for (std::int64_t i = 0; i < n; ++i) {
        min_x = std::min(min_x, static_cast<double>(cloud.xyz[3 * i]));
        max_x = std::max(max_x, static_cast<double>(cloud.xyz[3 * i]));
        min_y = std::min(min_y, static_cast<double>(cloud.xyz[3 * i + 1]));
        max_y = std::max(max_y, static_cast<double>(cloud.xyz[3 * i + 1]));
    }
    const std::int64_t nx = static_cast<std::int64_t>(std::floor((max_x - min_x) / stride)) + 1;
    const std::int64_t ny = static_cast<std::int64_t>(std::floor((max_y - min_y) / stride)) + 1;
    std::vector<std::vector<std::int64_t>> cells(static_cast<size_t>(nx * ny));
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = cloud.xyz[3 * i] - min_x;
        const double y = cloud.xyz[3 * i + 1] - min_y;
        // window w covers [w*stride, w*stride + block_size)
        const std::int64_t ix_hi = std::min(nx - 1, static_cast<std::int64_t>(std::floor(x / stride)));
        const std::int64_t iy_hi = std::min(ny - 1, static_cast<std::int64_t>(std::floor(y / stride)));
        for (std::int64_t ix = ix_hi; ix >= 0; --ix) {
            if (x >= ix * stride + block_size) break;
            for (std::int64_t iy = iy_hi; iy >= 0; --iy) {
                if (y >= iy * stride + block_size) break;
                cells[static_cast<size_t>(ix * ny + iy)].push_back(i);
            }
        }
    }
    std::vector<std::vector<std::int64_t>> out;
    for (auto& c : cells)
        if (!c.empty()) out.push_back(std::move(c));
    return out;
}

std::vector<std::int64_t> resample_to_4096(const std::vector<std::int64_t>& indices,
                                           RngStream& rng) {
    const std::int64_t n = static_cast<std::int64_t>(indices.size());
    require(n >= 1, "resample: empty block");
    if (n == kBlockPoints) return indices;
    std::vector<std::int64_t> out;
    out.reserve(static_cast<size_t>(kBlockPoints));
    if (n > kBlockPoints) {
        // partial Fisher-Yates: first kBlockPoints entries are a uniform
        // draw without replacement
        std::vector<std::int64_t> pool = indices;
        for (std::int64_t i = 0; i < kBlockPoints; ++i) {
            const std::int64_t j =
                i + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n - i)));
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            out.push_back(pool[static_cast<size_t>(i)]);
        }
    } else {
        out = indices;
        for (std::int64_t i = n; i < kBlockPoints; ++i)
            out.push_back(indices[static_cast<size_t>(rng.uniform_int(static_cast<std::uint64_t>(n)))]);
    }
    return out;
}

std::vector<std::vector<std::int64_t>> eval_chunks(const std::vector<std::int64_t>& indices,
                                                   RngStream& rng) {
    const std::int64_t n = static_cast<std::int64_t>(indices.size());
    require(n >= 1, "eval_chunks: empty block");
    std::vector<std::int64_t> perm = indices;
    for (std::int64_t i = n - 1; i > 0; --i) {
        const std::int64_t j =
            static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    const std::int64_t chunks = (n + kBlockPoints - 1) / kBlockPoints;
    std::vector<std::vector<std::int64_t>> out(static_cast<size_t>(chunks));
    for (std::int64_t c = 0; c < chunks; ++c) {
        const std::int64_t start = c * kBlockPoints;
        const std::int64_t len = std::min<std::int64_t>(kBlockPoints, n - start);
        auto& chunk = out[static_cast<size_t>(c)];
        chunk.reserve(static_cast<size_t>(kBlockPoints));
        for (std::int64_t i = 0; i < len; ++i)
            chunk.push_back(perm[static_cast<size_t>(start + i)]);
        // pad the final short chunk by cycling through it from the start
        for (std::int64_t i = len; i < kBlockPoints; ++i)
            chunk.push_back(chunk[static_cast<size_t>(i % len)]);
    }
    return out;
}

Block featurize(const PointCloud& cloud, const std::vector<std::int64_t>& indices) {
    require(static_cast<std::int64_t>(indices.size()) == kBlockPoints,
            "featurize: expected exactly " + std::to_string(kBlockPoints) + " indices, got " +
                std::to_string(indices.size()));
    const std::int64_t n = cloud.size();
    Block block;
    block.indices = indices;
    block.features.resize(static_cast<size_t>(kBlockPoints * kFeatureDim));
    block.labels.assign(static_cast<size_t>(kBlockPoints), -1);
    double cx = 0, cy = 0, cz = 0;
    for (auto idx : indices) {
        require(idx >= 0 && idx < n, "featurize: index out of range");
        cx += cloud.xyz[3 * idx];
        cy += cloud.xyz[3 * idx + 1];
        cz += cloud.xyz[3 * idx + 2];
    }
    cx /= kBlockPoints;
    cy /= kBlockPoints;
    cz /= kBlockPoints;
    for (std::int64_t i = 0; i < kBlockPoints; ++i) {
        const std::int64_t idx = indices[static_cast<size_t>(i)];
        float* f = block.features.data() + i * kFeatureDim;
        f[0] = static_cast<float>(cloud.xyz[3 * idx] - cx);
        f[1] = static_cast<float>(cloud.xyz[3 * idx + 1] - cy);
        f[2] = static_cast<float>(cloud.xyz[3 * idx + 2] - cz);
        f[3] = cloud.rgb[3 * idx] / 255.0f;
        f[4] = cloud.rgb[3 * idx + 1] / 255.0f;
        f[5] = cloud.rgb[3 * idx + 2] / 255.0f;
        f[6] = cloud.xyz[3 * idx];
        f[7] = cloud.xyz[3 * idx + 1];
        f[8] = cloud.xyz[3 * idx + 2];
        if (cloud.has_labels()) block.labels[static_cast<size_t>(i)] = cloud.labels[static_cast<size_t>(idx)];
    }
    return block;
}

}  // namespace uqcloud
