#include "foundry/graph_model.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "foundry/io.hpp"

namespace foundry {

using nlohmann::json;

std::string_view node_type_name(NodeType type) {
    switch (type) {
        case NodeType::Kernel: return "KernelNode";
        case NodeType::Memcpy: return "MemcpyNode";
        case NodeType::Memset: return "MemsetNode";
        case NodeType::Empty: return "EmptyNode";
    }
    return "UnknownNode";
}

NodeType node_type_from_name(std::string_view name) {
    if (name == "KernelNode") return NodeType::Kernel;
    if (name == "MemcpyNode") return NodeType::Memcpy;
    if (name == "MemsetNode") return NodeType::Memset;
    if (name == "EmptyNode") return NodeType::Empty;
    throw Error(Errc::schema_violation, "unknown node type '" + std::string(name) + "'");
}

void CapturedGraph::canonicalize() {
    for (uint32_t i = 0; i < nodes.size(); ++i) {
        nodes[i].id = i;
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    validate();
}

void CapturedGraph::validate() const {
    for (uint32_t i = 0; i < nodes.size(); ++i) {
        FOUNDRY_CHECK(nodes[i].id == i, Errc::invalid_argument, "node ids must be dense");
        if (nodes[i].type == NodeType::Kernel) {
            const auto& kp = nodes[i].kernel_params();
            FOUNDRY_CHECK(!kp.arg_buffer.empty(), Errc::invalid_argument,
                          "kernel node " + std::to_string(i) + " has empty argument buffer");
            FOUNDRY_CHECK(kp.grid.x >= 1 && kp.grid.y >= 1 && kp.grid.z >= 1 &&
                              kp.block.x >= 1 && kp.block.y >= 1 && kp.block.z >= 1,
                          Errc::invalid_argument, "launch dims must be >= 1");
        }
    }
    for (size_t i = 0; i < edges.size(); ++i) {
        const GraphEdge& edge = edges[i];
        FOUNDRY_CHECK(edge.from < nodes.size() && edge.to < nodes.size(), Errc::invalid_argument,
                      "edge references missing node");
        // Nodes are stored in capture order, so dependencies point forward.
        FOUNDRY_CHECK(edge.from < edge.to, Errc::invalid_argument,
                      "edge must go from an earlier node to a later one");
        // Canonical form: lexicographic (from, to), no duplicates.
        FOUNDRY_CHECK(i == 0 || edges[i - 1] < edge, Errc::invalid_argument,
                      "edges must be in canonical order");
    }
}

TopologyKey topology_key(const CapturedGraph& graph) {
    ByteWriter w;
    w.u64(graph.nodes.size());
    for (const auto& node : graph.nodes) {
        w.u8(static_cast<uint8_t>(node.type));
        if (node.type == NodeType::Kernel) {
            w.u32(node.attrs.cluster_dim.x);
            w.u32(node.attrs.cluster_dim.y);
            w.u32(node.attrs.cluster_dim.z);
            w.i32(node.attrs.cluster_scheduling_policy_preference);
            w.i32(node.attrs.mem_sync_domain_map_default);
            w.i32(node.attrs.mem_sync_domain_map_remote);
            w.u8(node.attrs.attr_query_available ? 1 : 0);
        }
    }
    w.u64(graph.edges.size());
    for (const auto& edge : graph.edges) {
        w.u32(edge.from);
        w.u32(edge.to);
    }
    return TopologyKey{murmur3_128(w.data(), /*seed=*/0x464E4447ull)};
}

// --- binary container -------------------------------------------------------

namespace {

constexpr char kGraphMagic[5] = "FNDG";
constexpr uint16_t kGraphVersion = 1;

void encode_node(ByteWriter& w, const GraphNode& node) {
    w.u8(static_cast<uint8_t>(node.type));
    switch (node.type) {
        case NodeType::Kernel: {
            const auto& kp = node.kernel_params();
            w.u32(node.attrs.cluster_dim.x);
            w.u32(node.attrs.cluster_dim.y);
            w.u32(node.attrs.cluster_dim.z);
            w.i32(node.attrs.cluster_scheduling_policy_preference);
            w.i32(node.attrs.mem_sync_domain_map_default);
            w.i32(node.attrs.mem_sync_domain_map_remote);
            w.u8(node.attrs.attr_query_available ? 1 : 0);
            w.u32(kp.grid.x);
            w.u32(kp.grid.y);
            w.u32(kp.grid.z);
            w.u32(kp.block.x);
            w.u32(kp.block.y);
            w.u32(kp.block.z);
            w.u32(kp.shared_mem_bytes);
            w.u64(kp.kernel.binary_hash);
            w.str(kp.kernel.name);
            w.i32(kp.func_attrs.max_dynamic_shared_size_bytes);
            w.i32(kp.func_attrs.preferred_shared_memory_carveout);
            w.i32(kp.func_attrs.cluster_scheduling_policy_preference);
            w.i32(kp.func_attrs.required_cluster_width);
            w.i32(kp.func_attrs.required_cluster_height);
            w.i32(kp.func_attrs.required_cluster_depth);
            w.u32(static_cast<uint32_t>(kp.arg_buffer.size()));
            w.bytes(kp.arg_buffer);
            break;
        }
        case NodeType::Memcpy: {
            const auto& p = std::get<MemcpyParams>(node.params);
            w.u64(p.src);
            w.u64(p.dst);
            w.u64(p.length);
            break;
        }
        case NodeType::Memset: {
            const auto& p = std::get<MemsetParams>(node.params);
            w.u64(p.dst);
            w.u64(p.value);
            w.u64(p.length);
            break;
        }
        case NodeType::Empty:
            break;
    }
}

GraphNode decode_node(ByteReader& r, uint32_t id) {
    GraphNode node;
    node.id = id;
    node.type = static_cast<NodeType>(r.u8());
    switch (node.type) {
        case NodeType::Kernel: {
            node.attrs.cluster_dim.x = r.u32();
            node.attrs.cluster_dim.y = r.u32();
            node.attrs.cluster_dim.z = r.u32();
            node.attrs.cluster_scheduling_policy_preference = r.i32();
            node.attrs.mem_sync_domain_map_default = r.i32();
            node.attrs.mem_sync_domain_map_remote = r.i32();
            node.attrs.attr_query_available = r.u8() != 0;
            KernelNodeParams kp;
            kp.grid.x = r.u32();
            kp.grid.y = r.u32();
            kp.grid.z = r.u32();
            kp.block.x = r.u32();
            kp.block.y = r.u32();
            kp.block.z = r.u32();
            kp.shared_mem_bytes = r.u32();
            kp.kernel.binary_hash = r.u64();
            kp.kernel.name = r.str();
            kp.func_attrs.max_dynamic_shared_size_bytes = r.i32();
            kp.func_attrs.preferred_shared_memory_carveout = r.i32();
            kp.func_attrs.cluster_scheduling_policy_preference = r.i32();
            kp.func_attrs.required_cluster_width = r.i32();
            kp.func_attrs.required_cluster_height = r.i32();
            kp.func_attrs.required_cluster_depth = r.i32();
            const uint32_t arg_size = r.u32();
            kp.arg_buffer = r.bytes(arg_size);
            node.params = std::move(kp);
            break;
        }
        case NodeType::Memcpy: {
            MemcpyParams p;
            p.src = r.u64();
            p.dst = r.u64();
            p.length = r.u64();
            node.params = p;
            break;
        }
        case NodeType::Memset: {
            MemsetParams p;
            p.dst = r.u64();
            p.value = r.u64();
            p.length = r.u64();
            node.params = p;
            break;
        }
        case NodeType::Empty:
            node.params = EmptyParams{};
            break;
        default:
            throw Error(Errc::binary_format, "unknown node type tag");
    }
    return node;
}

std::vector<uint8_t> encode_graph_record(const CapturedGraph& graph) {
    ByteWriter w;
    w.u32(graph.label);
    w.u32(static_cast<uint32_t>(graph.nodes.size()));
    w.u32(static_cast<uint32_t>(graph.edges.size()));
    for (const auto& node : graph.nodes) {
        encode_node(w, node);
    }
    for (const auto& edge : graph.edges) {
        w.u32(edge.from);
        w.u32(edge.to);
    }
    return w.take();
}

CapturedGraph decode_graph_record(std::span<const uint8_t> record) {
    ByteReader r(record, Errc::binary_format);
    CapturedGraph graph;
    graph.label = r.u32();
    const uint32_t node_count = r.u32();
    const uint32_t edge_count = r.u32();
    graph.nodes.reserve(node_count);
    for (uint32_t i = 0; i < node_count; ++i) {
        graph.nodes.push_back(decode_node(r, i));
    }
    graph.edges.reserve(edge_count);
    for (uint32_t i = 0; i < edge_count; ++i) {
        GraphEdge edge;
        edge.from = r.u32();
        edge.to = r.u32();
        graph.edges.push_back(edge);
    }
    FOUNDRY_CHECK(r.done(), Errc::binary_format, "trailing bytes in graph record");
    graph.validate();
    return graph;
}

}  // namespace

std::vector<uint8_t> serialize_graphs(const std::vector<CapturedGraph>& graphs) {
    ByteWriter w;
    w.bytes(kGraphMagic, 4);
    w.u16(kGraphVersion);
    w.u32(static_cast<uint32_t>(graphs.size()));

    const size_t table_at = w.size();
    for (const auto& graph : graphs) {
        w.u32(graph.label);
        w.u64(0);  // offset, patched below
        w.u64(0);  // length
        w.u64(0);  // checksum
    }

    size_t entry = table_at;
    for (const auto& graph : graphs) {
        const auto record = encode_graph_record(graph);
        const uint64_t offset = w.size();
        w.patch_u64(entry + 4, offset);
        w.patch_u64(entry + 12, record.size());
        w.patch_u64(entry + 20, crc64(record));
        w.bytes(record);
        entry += 28;
    }
    return w.take();
}

std::vector<GraphLocator> parse_graph_locators(std::span<const uint8_t> bytes) {
    ByteReader r(bytes, Errc::binary_format);
    r.expect_magic(kGraphMagic);
    const uint16_t version = r.u16();
    FOUNDRY_CHECK(version == kGraphVersion, Errc::binary_format,
                  "unsupported graph container version " + std::to_string(version));
    const uint32_t count = r.u32();
    std::vector<GraphLocator> locators;
    locators.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        GraphLocator loc;
        loc.label = r.u32();
        loc.offset = r.u64();
        loc.length = r.u64();
        loc.checksum = r.u64();
        FOUNDRY_CHECK(loc.offset <= bytes.size() && loc.length <= bytes.size() - loc.offset,
                      Errc::binary_format,
                      "graph record for label " + std::to_string(loc.label) +
                          " overruns the container");
        locators.push_back(loc);
    }
    return locators;
}

CapturedGraph parse_graph_at(std::span<const uint8_t> bytes, const GraphLocator& locator) {
    auto record = bytes.subspan(locator.offset, locator.length);
    FOUNDRY_CHECK(crc64(record) == locator.checksum, Errc::binary_format,
                  "checksum failure in graph record for label " + std::to_string(locator.label));
    CapturedGraph graph = decode_graph_record(record);
    FOUNDRY_CHECK(graph.label == locator.label, Errc::binary_format,
                  "label mismatch in graph record");
    return graph;
}

std::vector<CapturedGraph> parse_graphs(std::span<const uint8_t> bytes) {
    const auto locators = parse_graph_locators(bytes);
    std::vector<CapturedGraph> graphs;
    graphs.reserve(locators.size());
    for (const auto& loc : locators) {
        graphs.push_back(parse_graph_at(bytes, loc));
    }
    return graphs;
}

// --- JSON form ---------------------------------------------------------------

namespace {

std::string hex_encode(std::span<const uint8_t> data) {
    static const char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

std::vector<uint8_t> hex_decode(const std::string& text, const std::string& path) {
    FOUNDRY_CHECK(text.size() % 2 == 0, Errc::schema_violation, path + ": odd hex length");
    std::vector<uint8_t> out(text.size() / 2);
    for (size_t i = 0; i < out.size(); ++i) {
        auto nibble = [&](char c) -> uint8_t {
            if (c >= '0' && c <= '9') return static_cast<uint8_t>(c - '0');
            if (c >= 'a' && c <= 'f') return static_cast<uint8_t>(c - 'a' + 10);
            if (c >= 'A' && c <= 'F') return static_cast<uint8_t>(c - 'A' + 10);
            throw Error(Errc::schema_violation, path + ": bad hex digit");
        };
        out[i] = static_cast<uint8_t>((nibble(text[2 * i]) << 4) | nibble(text[2 * i + 1]));
    }
    return out;
}

const json& require(const json& obj, const char* key, const std::string& path) {
    auto it = obj.find(key);
    FOUNDRY_CHECK(it != obj.end(), Errc::schema_violation, path + "." + key + ": missing");
    return *it;
}

template <typename T>
T require_num(const json& obj, const char* key, const std::string& path) {
    const json& v = require(obj, key, path);
    FOUNDRY_CHECK(v.is_number(), Errc::schema_violation, path + "." + key + ": not a number");
    return v.get<T>();
}

json node_to_json(const GraphNode& node) {
    json obj;
    obj["id"] = node.id;
    obj["type"] = node_type_name(node.type);
    json params;
    switch (node.type) {
        case NodeType::Kernel: {
            const auto& kp = node.kernel_params();
            params["blockDimX"] = kp.block.x;
            params["blockDimY"] = kp.block.y;
            params["blockDimZ"] = kp.block.z;
            params["gridDimX"] = kp.grid.x;
            params["gridDimY"] = kp.grid.y;
            params["gridDimZ"] = kp.grid.z;
            params["sharedMemBytes"] = kp.shared_mem_bytes;
            params["kernel_node_attrs"] = {
                {"attrQueryAvailable", node.attrs.attr_query_available},
                {"clusterDimX", node.attrs.cluster_dim.x},
                {"clusterDimY", node.attrs.cluster_dim.y},
                {"clusterDimZ", node.attrs.cluster_dim.z},
                {"clusterSchedulingPolicyPreference",
                 node.attrs.cluster_scheduling_policy_preference},
                {"memSyncDomainMapDefault", node.attrs.mem_sync_domain_map_default},
                {"memSyncDomainMapRemote", node.attrs.mem_sync_domain_map_remote},
            };
            params["kernelParams"] = json::array({json{
                {"index", 0},
                {"offset", 0},
                {"size", kp.arg_buffer.size()},
            }});
            params["extra"] = json::array({"CU_LAUNCH_PARAM_BUFFER_SIZE", kp.arg_buffer.size(),
                                           "CU_LAUNCH_PARAM_BUFFER_POINTER", "null",
                                           "CU_LAUNCH_PARAM_END"});
            params["extra_argBuffer_hex"] = hex_encode(kp.arg_buffer);
            params["function_name"] = kp.kernel.name;
            params["kernel_source_binary_hash"] = kp.kernel.binary_hash;
            params["func_attrs"] = {
                {"max_dynamic_shared_size_bytes", kp.func_attrs.max_dynamic_shared_size_bytes},
                {"preferred_shared_memory_carveout",
                 kp.func_attrs.preferred_shared_memory_carveout},
                {"cluster_scheduling_policy_preference",
                 kp.func_attrs.cluster_scheduling_policy_preference},
                {"required_cluster_width", kp.func_attrs.required_cluster_width},
                {"required_cluster_height", kp.func_attrs.required_cluster_height},
                {"required_cluster_depth", kp.func_attrs.required_cluster_depth},
            };
            break;
        }
        case NodeType::Memcpy: {
            const auto& p = std::get<MemcpyParams>(node.params);
            params["srcDevice"] = p.src;
            params["dstDevice"] = p.dst;
            params["WidthInBytes"] = p.length;
            break;
        }
        case NodeType::Memset: {
            const auto& p = std::get<MemsetParams>(node.params);
            params["dst"] = p.dst;
            params["value"] = p.value;
            params["WidthInBytes"] = p.length;
            break;
        }
        case NodeType::Empty:
            params = json::object();
            break;
    }
    obj["params"] = params;
    return obj;
}

GraphNode node_from_json(const json& obj, uint32_t index) {
    const std::string path = "nodes[" + std::to_string(index) + "]";
    GraphNode node;
    node.id = require_num<uint32_t>(obj, "id", path);
    const json& type = require(obj, "type", path);
    FOUNDRY_CHECK(type.is_string(), Errc::schema_violation, path + ".type: not a string");
    node.type = node_type_from_name(type.get<std::string>());
    const json& params = require(obj, "params", path);
    const std::string ppath = path + ".params";
    switch (node.type) {
        case NodeType::Kernel: {
            KernelNodeParams kp;
            kp.block.x = require_num<uint32_t>(params, "blockDimX", ppath);
            kp.block.y = require_num<uint32_t>(params, "blockDimY", ppath);
            kp.block.z = require_num<uint32_t>(params, "blockDimZ", ppath);
            kp.grid.x = require_num<uint32_t>(params, "gridDimX", ppath);
            kp.grid.y = require_num<uint32_t>(params, "gridDimY", ppath);
            kp.grid.z = require_num<uint32_t>(params, "gridDimZ", ppath);
            kp.shared_mem_bytes = require_num<uint32_t>(params, "sharedMemBytes", ppath);

            const json& attrs = require(params, "kernel_node_attrs", ppath);
            const std::string apath = ppath + ".kernel_node_attrs";
            node.attrs.attr_query_available = require(attrs, "attrQueryAvailable", apath).get<bool>();
            node.attrs.cluster_dim.x = require_num<uint32_t>(attrs, "clusterDimX", apath);
            node.attrs.cluster_dim.y = require_num<uint32_t>(attrs, "clusterDimY", apath);
            node.attrs.cluster_dim.z = require_num<uint32_t>(attrs, "clusterDimZ", apath);
            node.attrs.cluster_scheduling_policy_preference =
                require_num<int32_t>(attrs, "clusterSchedulingPolicyPreference", apath);
            node.attrs.mem_sync_domain_map_default =
                require_num<int32_t>(attrs, "memSyncDomainMapDefault", apath);
            node.attrs.mem_sync_domain_map_remote =
                require_num<int32_t>(attrs, "memSyncDomainMapRemote", apath);

            const json& kparams = require(params, "kernelParams", ppath);
            FOUNDRY_CHECK(kparams.is_array() && kparams.size() == 1, Errc::schema_violation,
                          ppath + ".kernelParams: expected exactly one buffer entry");
            const uint64_t declared =
                require_num<uint64_t>(kparams[0], "size", ppath + ".kernelParams[0]");

            const json& hex = require(params, "extra_argBuffer_hex", ppath);
            FOUNDRY_CHECK(hex.is_string(), Errc::schema_violation,
                          ppath + ".extra_argBuffer_hex: not a string");
            kp.arg_buffer = hex_decode(hex.get<std::string>(), ppath + ".extra_argBuffer_hex");
            FOUNDRY_CHECK(kp.arg_buffer.size() == declared, Errc::schema_violation,
                          ppath + ".extra_argBuffer_hex: length disagrees with kernelParams size");

            const json& fname = require(params, "function_name", ppath);
            FOUNDRY_CHECK(fname.is_string(), Errc::schema_violation,
                          ppath + ".function_name: not a string");
            kp.kernel.name = fname.get<std::string>();
            kp.kernel.binary_hash =
                require_num<uint64_t>(params, "kernel_source_binary_hash", ppath);

            const json& fattrs = require(params, "func_attrs", ppath);
            const std::string fpath = ppath + ".func_attrs";
            kp.func_attrs.max_dynamic_shared_size_bytes =
                require_num<int32_t>(fattrs, "max_dynamic_shared_size_bytes", fpath);
            kp.func_attrs.preferred_shared_memory_carveout =
                require_num<int32_t>(fattrs, "preferred_shared_memory_carveout", fpath);
            kp.func_attrs.cluster_scheduling_policy_preference =
                require_num<int32_t>(fattrs, "cluster_scheduling_policy_preference", fpath);
            kp.func_attrs.required_cluster_width =
                require_num<int32_t>(fattrs, "required_cluster_width", fpath);
            kp.func_attrs.required_cluster_height =
                require_num<int32_t>(fattrs, "required_cluster_height", fpath);
            kp.func_attrs.required_cluster_depth =
                require_num<int32_t>(fattrs, "required_cluster_depth", fpath);
            node.params = std::move(kp);
            break;
        }
        case NodeType::Memcpy: {
            MemcpyParams p;
            p.src = require_num<uint64_t>(params, "srcDevice", ppath);
            p.dst = require_num<uint64_t>(params, "dstDevice", ppath);
            p.length = require_num<uint64_t>(params, "WidthInBytes", ppath);
            node.params = p;
            break;
        }
        case NodeType::Memset: {
            MemsetParams p;
            p.dst = require_num<uint64_t>(params, "dst", ppath);
            p.value = require_num<uint64_t>(params, "value", ppath);
            p.length = require_num<uint64_t>(params, "WidthInBytes", ppath);
            node.params = p;
            break;
        }
        case NodeType::Empty:
            node.params = EmptyParams{};
            break;
    }
    return node;
}

}  // namespace

std::string serialize_graph_json(const CapturedGraph& graph) {
    json root;
    root["label"] = graph.label;
    json nodes = json::array();
    for (const auto& node : graph.nodes) {
        nodes.push_back(node_to_json(node));
    }
    root["nodes"] = std::move(nodes);
    json deps = json::array();
    for (const auto& edge : graph.edges) {
        deps.push_back(json{{"from", edge.from}, {"to", edge.to}});
    }
    root["dependencies"] = std::move(deps);
    return root.dump(2);
}

CapturedGraph parse_graph_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::schema_violation, std::string("invalid JSON: ") + e.what());
    }
    FOUNDRY_CHECK(root.is_object(), Errc::schema_violation, "root: not an object");

    CapturedGraph graph;
    graph.label = require_num<uint32_t>(root, "label", "root");
    const json& nodes = require(root, "nodes", "root");
    FOUNDRY_CHECK(nodes.is_array(), Errc::schema_violation, "root.nodes: not an array");
    uint32_t index = 0;
    for (const auto& node : nodes) {
        GraphNode parsed = node_from_json(node, index);
        FOUNDRY_CHECK(parsed.id == index, Errc::schema_violation,
                      "nodes[" + std::to_string(index) + "].id: out of capture order");
        graph.nodes.push_back(std::move(parsed));
        ++index;
    }
    const json& deps = require(root, "dependencies", "root");
    FOUNDRY_CHECK(deps.is_array(), Errc::schema_violation, "root.dependencies: not an array");
    uint32_t di = 0;
    for (const auto& dep : deps) {
        const std::string path = "dependencies[" + std::to_string(di++) + "]";
        GraphEdge edge;
        edge.from = require_num<uint32_t>(dep, "from", path);
        edge.to = require_num<uint32_t>(dep, "to", path);
        graph.edges.push_back(edge);
    }
    graph.validate();
    return graph;
}

// --- diff --------------------------------------------------------------------

namespace {

std::vector<ByteRange> differing_ranges(std::span<const uint8_t> a, std::span<const uint8_t> b) {
    std::vector<ByteRange> ranges;
    const size_t n = std::min(a.size(), b.size());
    size_t i = 0;
    while (i < n) {
        if (a[i] != b[i]) {
            size_t j = i;
            while (j < n && a[j] != b[j]) ++j;
            ranges.push_back({static_cast<uint32_t>(i), static_cast<uint32_t>(j)});
            i = j;
        } else {
            ++i;
        }
    }
    if (a.size() != b.size()) {
        ranges.push_back({static_cast<uint32_t>(n),
                          static_cast<uint32_t>(std::max(a.size(), b.size()))});
    }
    return ranges;
}

}  // namespace

GraphDiff diff(const CapturedGraph& a, const CapturedGraph& b) {
    GraphDiff report;
    report.topology_equal = topology_key(a) == topology_key(b);
    report.label_equal = a.label == b.label;

    const size_t n = std::min(a.nodes.size(), b.nodes.size());
    for (size_t i = 0; i < n; ++i) {
        const auto& na = a.nodes[i];
        const auto& nb = b.nodes[i];
        NodeDelta delta;
        delta.node_id = static_cast<uint32_t>(i);
        if (na.type != nb.type) {
            delta.memop_changed = true;  // type change already shows as topology_equal=false
        } else if (na.type == NodeType::Kernel) {
            const auto& ka = na.kernel_params();
            const auto& kb = nb.kernel_params();
            delta.kernel_changed = ka.kernel != kb.kernel || ka.func_attrs != kb.func_attrs;
            delta.dims_changed = ka.grid != kb.grid || ka.block != kb.block;
            delta.shared_mem_changed = ka.shared_mem_bytes != kb.shared_mem_bytes;
            delta.arg_byte_ranges = differing_ranges(ka.arg_buffer, kb.arg_buffer);
        } else if (na.params != nb.params) {
            delta.memop_changed = true;
        }
        if (!delta.empty()) {
            report.node_deltas.push_back(std::move(delta));
        }
    }
    return report;
}

std::string GraphDiff::to_text() const {
    std::ostringstream out;
    if (empty()) {
        out << "graphs identical\n";
        return out.str();
    }
    out << "topology: " << (topology_equal ? "equal" : "DIFFERS") << "\n";
    if (!label_equal) {
        out << "labels differ\n";
    }
    for (const auto& delta : node_deltas) {
        out << "node " << delta.node_id << ":";
        if (delta.kernel_changed) out << " kernel";
        if (delta.dims_changed) out << " dims";
        if (delta.shared_mem_changed) out << " shared-mem";
        if (delta.memop_changed) out << " memop-params";
        if (!delta.arg_byte_ranges.empty()) {
            out << " arg-bytes";
            for (const auto& range : delta.arg_byte_ranges) {
                out << " [" << range.begin << "," << range.end << ")";
            }
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace foundry
