#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "foundry/errors.hpp"
#include "foundry/hash.hpp"
#include "foundry/kernel_image.hpp"

namespace foundry {

struct Dim3 {
    uint32_t x = 1;
    uint32_t y = 1;
    uint32_t z = 1;

    bool operator==(const Dim3&) const = default;
};

// (content hash, mangled name) — the portable identity of a kernel function.
struct KernelRef {
    uint64_t binary_hash = 0;
    std::string name;

    bool operator==(const KernelRef&) const = default;
    std::string describe() const { return "(" + to_hex(binary_hash) + ", " + name + ")"; }
};

struct KernelRefHash {
    size_t operator()(const KernelRef& ref) const noexcept {
        return std::hash<std::string>{}(ref.name) ^ static_cast<size_t>(ref.binary_hash);
    }
};

// Attributes that an in-place executable update cannot change. They are
// part of the graph topology, unlike the launch parameters below.
struct KernelNodeAttrs {
    Dim3 cluster_dim{1, 1, 1};
    int32_t cluster_scheduling_policy_preference = 0;
    int32_t mem_sync_domain_map_default = 0;
    int32_t mem_sync_domain_map_remote = 0;
    bool attr_query_available = true;

    bool operator==(const KernelNodeAttrs&) const = default;
    bool is_default() const { return *this == KernelNodeAttrs{}; }
};

struct KernelNodeParams {
    Dim3 grid;
    Dim3 block;
    uint32_t shared_mem_bytes = 0;
    KernelRef kernel;
    FuncAttrs func_attrs;
    std::vector<uint8_t> arg_buffer;

    bool operator==(const KernelNodeParams&) const = default;
};

struct MemcpyParams {
    uint64_t src = 0;
    uint64_t dst = 0;
    uint64_t length = 0;

    bool operator==(const MemcpyParams&) const = default;
};

struct MemsetParams {
    uint64_t dst = 0;
    uint64_t value = 0;
    uint64_t length = 0;

    bool operator==(const MemsetParams&) const = default;
};

struct EmptyParams {
    bool operator==(const EmptyParams&) const = default;
};

enum class NodeType : uint8_t {
    Kernel = 0,
    Memcpy = 1,
    Memset = 2,
    Empty = 3,
};

std::string_view node_type_name(NodeType type);
NodeType node_type_from_name(std::string_view name);

struct GraphNode {
    uint32_t id = 0;
    NodeType type = NodeType::Empty;
    KernelNodeAttrs attrs;  // meaningful for kernel nodes only
    std::variant<KernelNodeParams, MemcpyParams, MemsetParams, EmptyParams> params = EmptyParams{};

    bool operator==(const GraphNode&) const = default;

    const KernelNodeParams& kernel_params() const { return std::get<KernelNodeParams>(params); }
    KernelNodeParams& kernel_params() { return std::get<KernelNodeParams>(params); }
};

struct GraphEdge {
    uint32_t from = 0;
    uint32_t to = 0;

    bool operator==(const GraphEdge&) const = default;
    auto operator<=>(const GraphEdge&) const = default;
};

// A captured execution graph: nodes in capture order, edges canonicalized
// to lexicographic (from, to) order, labeled with the batch size it serves.
struct CapturedGraph {
    uint32_t label = 0;
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;

    bool operator==(const CapturedGraph&) const = default;

    // Sorts and dedupes edges, assigns dense ids, checks edge validity.
    void canonicalize();
    void validate() const;
};

struct TopologyKey {
    Digest128 digest;

    bool operator==(const TopologyKey&) const = default;
    auto operator<=>(const TopologyKey&) const = default;
    std::string hex() const { return digest.hex(); }
};

struct TopologyKeyHash {
    size_t operator()(const TopologyKey& key) const noexcept {
        return Digest128Hash{}(key.digest);
    }
};

// Structural fingerprint: node count, per-node (type, kernel-node attrs),
// canonical edge list. Per-node parameters are excluded by construction.
TopologyKey topology_key(const CapturedGraph& graph);

// --- binary container ("FNDG") -------------------------------------------

struct GraphLocator {
    uint32_t label = 0;
    uint64_t offset = 0;
    uint64_t length = 0;
    uint64_t checksum = 0;

    bool operator==(const GraphLocator&) const = default;
};

std::vector<uint8_t> serialize_graphs(const std::vector<CapturedGraph>& graphs);
std::vector<CapturedGraph> parse_graphs(std::span<const uint8_t> bytes);

std::vector<GraphLocator> parse_graph_locators(std::span<const uint8_t> bytes);
// O(1) decode of a single graph record; verifies the record checksum.
CapturedGraph parse_graph_at(std::span<const uint8_t> bytes, const GraphLocator& locator);

// --- JSON form -------------------------------------------------------------

std::string serialize_graph_json(const CapturedGraph& graph);
CapturedGraph parse_graph_json(const std::string& text);

// --- diff -------------------------------------------------------------------

struct ByteRange {
    uint32_t begin = 0;
    uint32_t end = 0;  // exclusive

    bool operator==(const ByteRange&) const = default;
};

struct NodeDelta {
    uint32_t node_id = 0;
    bool kernel_changed = false;
    bool dims_changed = false;
    bool shared_mem_changed = false;
    bool memop_changed = false;
    std::vector<ByteRange> arg_byte_ranges;

    bool empty() const {
        return !kernel_changed && !dims_changed && !shared_mem_changed && !memop_changed &&
               arg_byte_ranges.empty();
    }
};

struct GraphDiff {
    bool topology_equal = true;
    bool label_equal = true;
    std::vector<NodeDelta> node_deltas;

    bool empty() const { return topology_equal && label_equal && node_deltas.empty(); }
    std::string to_text() const;
};

GraphDiff diff(const CapturedGraph& a, const CapturedGraph& b);

}  // namespace foundry
