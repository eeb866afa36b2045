#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

using namespace foundry;
namespace ft = foundry::testing;

namespace {

CapturedGraph small_kernel_graph() {
    CapturedGraph graph;
    graph.label = 4;
    for (uint32_t i = 0; i < 3; ++i) {
        GraphNode node;
        node.id = i;
        node.type = NodeType::Kernel;
        KernelNodeParams params;
        params.grid = Dim3{1 + i, 2, 1};
        params.block = Dim3{128, 1, 1};
        params.shared_mem_bytes = 1024 * i;
        params.kernel = KernelRef{0xABCDull + i, "k" + std::to_string(i)};
        params.arg_buffer.assign(64, static_cast<uint8_t>(i));
        node.params = std::move(params);
        graph.nodes.push_back(std::move(node));
        if (i > 0) graph.edges.push_back({i - 1, i});
    }
    graph.canonicalize();
    return graph;
}

}  // namespace

TEST_SUITE("graph_model") {

TEST_CASE("rewriting every argument buffer leaves the topology key unchanged") {
    const CapturedGraph graph = small_kernel_graph();
    CapturedGraph rewritten = graph;
    for (auto& node : rewritten.nodes) {
        for (auto& byte : node.kernel_params().arg_buffer) {
            byte = static_cast<uint8_t>(~byte);
        }
        node.kernel_params().grid.y += 7;
        node.kernel_params().kernel.binary_hash ^= 0x1234;
    }
    CHECK(topology_key(graph) == topology_key(rewritten));
}

TEST_CASE("a single cluster dimension change flips the topology key") {
    const CapturedGraph graph = small_kernel_graph();
    CapturedGraph changed = graph;
    changed.nodes[1].attrs.cluster_dim.x = 2;  // 1 -> 2
    CHECK(topology_key(graph) != topology_key(changed));
}

TEST_CASE("node order, node type, and edges are all part of the key") {
    const CapturedGraph graph = small_kernel_graph();
    SUBCASE("extra edge") {
        CapturedGraph changed = graph;
        changed.edges.push_back({0, 2});
        changed.canonicalize();
        CHECK(topology_key(graph) != topology_key(changed));
    }
    SUBCASE("node type change") {
        CapturedGraph changed = graph;
        changed.nodes[2].type = NodeType::Empty;
        changed.nodes[2].params = EmptyParams{};
        CHECK(topology_key(graph) != topology_key(changed));
    }
    SUBCASE("node count change") {
        CapturedGraph changed = graph;
        GraphNode extra;
        extra.id = 3;
        extra.type = NodeType::Empty;
        changed.nodes.push_back(extra);
        CHECK(topology_key(graph) != topology_key(changed));
    }
}

TEST_CASE("key equality classes match brute-force structural equality") {
    SplitMix64 rng(2024);
    for (int corpus = 0; corpus < 20; ++corpus) {
        std::vector<CapturedGraph> graphs;
        for (uint32_t i = 0; i < 24; ++i) {
            graphs.push_back(ft::random_graph(rng, i));
        }
        // Force some structural duplicates that differ only in parameters.
        for (uint32_t i = 0; i < 8; ++i) {
            CapturedGraph copy = graphs[rng.below(graphs.size())];
            copy.label = 100 + i;
            for (auto& node : copy.nodes) {
                if (node.type == NodeType::Kernel) {
                    node.kernel_params().shared_mem_bytes ^= 0x55;
                } else if (node.type == NodeType::Memcpy) {
                    std::get<MemcpyParams>(node.params).src ^= 0x1111;
                }
            }
            graphs.push_back(std::move(copy));
        }

        const auto oracle = ft::brute_force_groups(graphs);
        std::unordered_map<TopologyKey, std::vector<size_t>, TopologyKeyHash> by_key;
        for (size_t i = 0; i < graphs.size(); ++i) {
            by_key[topology_key(graphs[i])].push_back(i);
        }
        REQUIRE(by_key.size() == oracle.size());
        for (const auto& group : oracle) {
            const TopologyKey key = topology_key(graphs[group.front()]);
            CHECK(by_key.at(key) == group);
        }
    }
}

TEST_CASE("binary container round trips arbitrary graphs") {
    SplitMix64 rng(17);
    std::vector<CapturedGraph> graphs;
    for (uint32_t i = 0; i < 30; ++i) {
        graphs.push_back(ft::random_graph(rng, i + 1));
    }
    const auto bytes = serialize_graphs(graphs);
    CHECK(parse_graphs(bytes) == graphs);

    SUBCASE("serialization is a pure function of content") {
        CHECK(serialize_graphs(graphs) == bytes);
    }
    SUBCASE("random access by locator") {
        const auto locators = parse_graph_locators(bytes);
        REQUIRE(locators.size() == graphs.size());
        CHECK(parse_graph_at(bytes, locators[7]) == graphs[7]);
    }
}

TEST_CASE("corrupting one byte of a node record names the graph") {
    SplitMix64 rng(3);
    std::vector<CapturedGraph> graphs;
    for (uint32_t i = 0; i < 4; ++i) {
        graphs.push_back(ft::random_graph(rng, i + 1));
    }
    auto bytes = serialize_graphs(graphs);
    const auto locators = parse_graph_locators(bytes);
    bytes[locators[2].offset + locators[2].length / 2] ^= 0x01;
    CHECK_THROWS_WITH_AS(parse_graph_at(bytes, locators[2]),
                         doctest::Contains("label 3"), Error);
    try {
        parse_graph_at(bytes, locators[2]);
    } catch (const Error& e) {
        CHECK(e.code() == Errc::binary_format);
        CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
}

TEST_CASE("container rejects version mismatch and truncation") {
    const auto bytes = serialize_graphs({small_kernel_graph()});
    SUBCASE("version") {
        auto bad = bytes;
        bad[4] = 0x7F;
        CHECK_THROWS_WITH_AS(parse_graphs(bad), doctest::Contains("version"), Error);
    }
    SUBCASE("truncation") {
        auto bad = bytes;
        bad.resize(bad.size() / 2);
        CHECK_THROWS_AS(parse_graphs(bad), Error);
    }
}

TEST_CASE("the documented kernel-node fixture parses exactly") {
    const CapturedGraph graph = parse_graph_json(ft::reference_kernel_node_document());
    REQUIRE(graph.nodes.size() == 8);
    const GraphNode& node = graph.nodes[7];
    REQUIRE(node.type == NodeType::Kernel);
    const auto& params = node.kernel_params();
    CHECK(params.grid == Dim3{2, 62, 1});
    CHECK(params.block == Dim3{384, 1, 1});
    CHECK(params.shared_mem_bytes == 206044);
    CHECK(params.arg_buffer.size() == 1720);
    CHECK(params.kernel.name == "nvjet_tst_168x128_64x5_1x2_h_bz_TNN");
    CHECK(params.kernel.binary_hash == 6788486540864509700ull);
    CHECK(params.func_attrs.max_dynamic_shared_size_bytes == 206044);
    CHECK(params.func_attrs.preferred_shared_memory_carveout == -1);
    CHECK(node.attrs.cluster_dim == Dim3{2, 1, 1});
    CHECK(node.attrs.cluster_scheduling_policy_preference == 1);
    CHECK(node.attrs.mem_sync_domain_map_remote == 1);
    CHECK(node.attrs.attr_query_available);
    CHECK(params.arg_buffer[0] == 0x3e);
    CHECK(params.arg_buffer[1719] == 0x00);
    CHECK(params.arg_buffer[1716] == 0x1b);

    SUBCASE("the fixture survives both serialization routes") {
        CHECK(parse_graph_json(serialize_graph_json(graph)) == graph);
        CHECK(parse_graphs(serialize_graphs({graph}))[0] == graph);
    }
}

TEST_CASE("JSON and binary forms of the same graph parse equal") {
    SplitMix64 rng(23);
    for (int round = 0; round < 10; ++round) {
        const CapturedGraph graph = ft::random_graph(rng, round + 1);
        const CapturedGraph from_json = parse_graph_json(serialize_graph_json(graph));
        const CapturedGraph from_binary = parse_graphs(serialize_graphs({graph}))[0];
        CHECK(from_json == from_binary);
        CHECK(from_json == graph);
    }
}

TEST_CASE("the empty graph serializes to empty arrays") {
    CapturedGraph empty;
    empty.label = 0;
    const std::string text = serialize_graph_json(empty);
    CHECK(text.find("\"nodes\": []") != std::string::npos);
    CHECK(text.find("\"dependencies\": []") != std::string::npos);
    CHECK(parse_graph_json(text) == empty);
}

TEST_CASE("schema violations point at the failing field") {
    const std::string bad = R"({"label": 1, "nodes": [{"id": 0, "type": "KernelNode",
        "params": {"blockDimX": 1}}], "dependencies": []})";
    CHECK_THROWS_WITH_AS(parse_graph_json(bad), doctest::Contains("blockDimY"), Error);
    try {
        parse_graph_json(bad);
    } catch (const Error& e) {
        CHECK(e.code() == Errc::schema_violation);
        CHECK(std::string(e.what()).find("nodes[0].params") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_graph_json("not json"), Error);
}

TEST_CASE("diff of a graph with itself is empty") {
    const CapturedGraph graph = small_kernel_graph();
    CHECK(diff(graph, graph).empty());
    CHECK(diff(graph, graph).to_text() == "graphs identical\n");
}

TEST_CASE("diff reports parameter deltas without a topology delta") {
    const CapturedGraph graph = small_kernel_graph();
    CapturedGraph member = graph;
    member.nodes[1].kernel_params().arg_buffer[10] ^= 0xFF;
    member.nodes[1].kernel_params().arg_buffer[11] ^= 0xFF;
    member.nodes[2].kernel_params().grid.y = 9;

    const GraphDiff delta = diff(graph, member);
    CHECK(delta.topology_equal);
    REQUIRE(delta.node_deltas.size() == 2);
    CHECK(delta.node_deltas[0].node_id == 1);
    REQUIRE(delta.node_deltas[0].arg_byte_ranges.size() == 1);
    CHECK(delta.node_deltas[0].arg_byte_ranges[0] == ByteRange{10, 12});
    CHECK(delta.node_deltas[1].node_id == 2);
    CHECK(delta.node_deltas[1].dims_changed);
}

TEST_CASE("diff flags kernel and memop changes") {
    CapturedGraph a;
    a.label = 1;
    GraphNode node;
    node.id = 0;
    node.type = NodeType::Memset;
    node.params = MemsetParams{0x1000, 0, 64};
    a.nodes.push_back(node);
    CapturedGraph b = a;
    std::get<MemsetParams>(b.nodes[0].params).dst = 0x2000;
    const GraphDiff delta = diff(a, b);
    CHECK(delta.topology_equal);
    REQUIRE(delta.node_deltas.size() == 1);
    CHECK(delta.node_deltas[0].memop_changed);
}

}  // TEST_SUITE
