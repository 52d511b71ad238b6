#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glocalk/globalkernel.hpp"
#include "glocalk/kernelnet.hpp"

namespace glocalk {

// Versioned binary parameter file: magic, version, config hash, a segment
// table, then all values as little-endian 64-bit reals in table order.
// Segment kinds: 0=W 1=U 2=V 3=b 4=bank 5=mu.
struct CheckpointSegment {
    std::uint8_t kind = 0;
    std::uint32_t layer = 0;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<double> values;
};

struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::vector<CheckpointSegment> segments;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path); // ParseError on corruption

Checkpoint checkpoint_from_net(const KernelNet& net, std::uint64_t config_hash);
Checkpoint checkpoint_from_finetune(const KernelNet& net,
                                    const std::vector<GlobalKernelBank>& banks,
                                    const PooledSummary& mu, std::uint64_t config_hash);

// ShapeError if the segment table does not match the net exactly.
void checkpoint_into_net(const Checkpoint& ckpt, KernelNet& net);
void checkpoint_into_finetune(const Checkpoint& ckpt, KernelNet& net,
                              std::vector<GlobalKernelBank>& banks, PooledSummary& mu);

} // namespace glocalk
