#pragma once

#include <map>
#include <string>
#include <vector>

#include "uqcloud/kvconfig.hpp"
#include "uqcloud/pointnet.hpp"
#include "uqcloud/tensor.hpp"

namespace uqcloud {

// On-disk model format: an 8-byte magic, a length-prefixed key=value
// metadata block, then the tensors in lexicographic name order, each as
// (u32 name length, name, u32 rank, u32 extents..., float32 payload).
// All integers and floats are little-endian.
inline constexpr char kCheckpointMagic[8] = {'U', 'Q', 'C', 'P', 'N', 'T', '1', '\0'};

struct NamedTensor {
    Shape shape;              // empty = rank 0 (single value)
    std::vector<float> data;
};

struct Checkpoint {
    KvConfig meta;
    std::map<std::string, NamedTensor> tensors;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of everything a forward pass needs: trainable tensors plus the
// batch-norm running statistics, with regime and class count in the metadata.
template <typename S>
Checkpoint checkpoint_from_net(SegNet<S>& net);

// Rebuilds the network that produced the checkpoint. Every stored tensor
// must match a slot of the reconstructed net, and vice versa.
template <typename S>
SegNet<S> net_from_checkpoint(const Checkpoint& ck);

}  // namespace uqcloud
