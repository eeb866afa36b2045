#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "foundry/binary_catalog.hpp"
#include "foundry/graph_model.hpp"
#include "foundry/workload_gen.hpp"

namespace foundry {

// One stub node to rewrite at LOAD: the stub handle becomes the real comm
// kernel and the rank/world argument bytes get the deployment's values.
// The offsets are known exactly because the stub layer authored the
// argument layout; opaque compute kernels are never patched.
struct CommPatchEntry {
    uint32_t node_id = 0;
    KernelRef stub;
    std::string real_name;  // resolved against the archive's real comm binary at LOAD
    std::vector<uint32_t> rank_offsets;
    std::vector<uint32_t> world_offsets;
    uint8_t patch_width = 8;

    bool operator==(const CommPatchEntry&) const = default;
};

struct PatchTable {
    uint64_t world_placeholder = 1;  // value written during single-rank SAVE
    std::map<uint32_t, std::vector<CommPatchEntry>> per_graph;  // keyed by batch label

    bool empty() const { return per_graph.empty(); }
    size_t total_entries() const;

    bool operator==(const PatchTable&) const = default;
};

std::vector<uint8_t> serialize_patch_table(const PatchTable& table);
PatchTable parse_patch_table(std::span<const uint8_t> bytes);

// Rewrites every collective in the batch's op list into a dummy stub-kernel
// launch and records the patch entries. Ops marked raw are left untouched;
// the SAVE pipeline rejects them before capture.
std::vector<CommPatchEntry> lower_collectives(std::vector<PlannedOp>& ops, uint32_t stub_image,
                                              uint64_t stub_binary_hash);

// Applies the patch table for one rank of a W-rank deployment: stub
// KernelRefs become the real comm kernel, rank/world argument bytes get r
// and W. Everything else is untouched.
void instantiate_rank(std::vector<CapturedGraph>& graphs, const PatchTable& table,
                      uint64_t real_comm_hash, uint32_t rank, uint32_t world);

// Same rewrite for a single graph's entries.
void apply_rank_patches(CapturedGraph& graph, std::span<const CommPatchEntry> entries,
                        uint64_t real_comm_hash, uint32_t rank, uint32_t world);

struct UniformityReport {
    bool uniform = true;
    std::vector<std::string> divergences;

    std::string to_text() const;
};

// Asserts the cross-rank invariant: identical topology keys and identical
// parameters outside the recorded patch offsets.
UniformityReport verify_rank_uniformity(const std::vector<std::vector<CapturedGraph>>& rank_graphs,
                                        const PatchTable& table);

}  // namespace foundry
