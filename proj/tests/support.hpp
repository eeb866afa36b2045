#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <vector>

#include "foundry/binary_catalog.hpp"
#include "foundry/det_alloc.hpp"
#include "foundry/graph_model.hpp"
#include "foundry/io.hpp"
#include "foundry/kernel_image.hpp"
#include "foundry/pipeline.hpp"
#include "foundry/rank_forge.hpp"
#include "foundry/sim_driver.hpp"
#include "foundry/workload_gen.hpp"

namespace foundry::testing {

namespace fs = std::filesystem;

// Fresh scratch directory per test, removed on destruction.
struct TempDir {
    fs::path path;

    TempDir() {
        static std::atomic<uint64_t> counter{0};
        path = fs::temp_directory_path() /
               ("foundry-test-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter.fetch_add(1)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }

    fs::path operator/(const std::string& name) const { return path / name; }
};

// Bit-by-bit CRC-64/XZ, no table: the independent oracle for the
// table-driven implementation.
inline uint64_t crc64_bitwise(std::span<const uint8_t> data) {
    constexpr uint64_t poly = 0xC96C5795D7870F42ull;  // reflected 0x42F0E1EBA9EA3693
    uint64_t crc = ~0ull;
    for (uint8_t byte : data) {
        crc ^= byte;
        for (int bit = 0; bit < 8; ++bit) {
            crc = (crc & 1) ? (crc >> 1) ^ poly : crc >> 1;
        }
    }
    return ~crc;
}

// Appends 8 crafted bytes so the whole buffer's CRC-64 equals `target`.
// CRC is linear over GF(2), so the tail solves a 64x64 bit system.
inline std::array<uint8_t, 8> forge_crc64_tail(std::span<const uint8_t> prefix,
                                               uint64_t target) {
    auto crc_with_tail = [&](uint64_t tail_bits) {
        Crc64 crc;
        crc.update(prefix.data(), prefix.size());
        uint8_t tail[8];
        std::memcpy(tail, &tail_bits, sizeof(tail));
        crc.update(tail, sizeof(tail));
        return crc.finish();
    };
    const uint64_t zero_tail = crc_with_tail(0);

    struct Row {
        uint64_t effect = 0;
        uint64_t bits = 0;
    };
    std::array<Row, 64> basis{};
    auto insert = [&](Row row) {
        while (row.effect != 0) {
            const int msb = 63 - std::countl_zero(row.effect);
            if (basis[msb].effect == 0) {
                basis[msb] = row;
                return;
            }
            row.effect ^= basis[msb].effect;
            row.bits ^= basis[msb].bits;
        }
    };
    for (int j = 0; j < 64; ++j) {
        insert(Row{crc_with_tail(1ull << j) ^ zero_tail, 1ull << j});
    }

    uint64_t remaining = target ^ zero_tail;
    uint64_t tail_bits = 0;
    while (remaining != 0) {
        const int msb = 63 - std::countl_zero(remaining);
        if (basis[msb].effect == 0) {
            throw Error(Errc::invalid_argument, "CRC tail system is singular");
        }
        remaining ^= basis[msb].effect;
        tail_bits ^= basis[msb].bits;
    }

    std::array<uint8_t, 8> tail;
    std::memcpy(tail.data(), &tail_bits, sizeof(tail_bits));
    return tail;
}

// Brute-force structural equality: the grouping oracle. Field-by-field
// comparison, independent of the topology-key digest.
inline bool structurally_equal(const CapturedGraph& a, const CapturedGraph& b) {
    if (a.nodes.size() != b.nodes.size() || a.edges.size() != b.edges.size()) return false;
    for (size_t i = 0; i < a.nodes.size(); ++i) {
        if (a.nodes[i].type != b.nodes[i].type) return false;
        if (a.nodes[i].type == NodeType::Kernel && !(a.nodes[i].attrs == b.nodes[i].attrs)) {
            return false;
        }
    }
    for (size_t i = 0; i < a.edges.size(); ++i) {
        if (!(a.edges[i] == b.edges[i])) return false;
    }
    return true;
}

// O(n^2) partition by pairwise structural equality.
inline std::vector<std::vector<size_t>> brute_force_groups(
    const std::vector<CapturedGraph>& graphs) {
    std::vector<std::vector<size_t>> groups;
    for (size_t i = 0; i < graphs.size(); ++i) {
        bool placed = false;
        for (auto& group : groups) {
            if (structurally_equal(graphs[group.front()], graphs[i])) {
                group.push_back(i);
                placed = true;
                break;
            }
        }
        if (!placed) {
            groups.push_back({i});
        }
    }
    return groups;
}

// A loadable single-kernel image for driver-level tests.
inline std::vector<uint8_t> tiny_image(const std::string& kernel, uint32_t arg_size = 64,
                                       std::vector<uint32_t> hidden = {8},
                                       bool requires_init = false, uint32_t link_tag = 1) {
    KernelImage image;
    image.link_tag = link_tag;
    image.requires_device_init = requires_init;
    KernelEntry entry;
    entry.name = kernel;
    entry.arg_buffer_size = arg_size;
    entry.hidden_offsets = std::move(hidden);
    image.entrypoints.push_back(std::move(entry));
    return encode_kernel_image(image);
}

// Runs a SAVE-shaped in-memory capture of a workload: binaries loaded,
// deterministic init, capture window, all batch sizes captured. No archive
// is written; tests reach into the parts they need.
struct CaptureHarness {
    std::unique_ptr<SimDriver> driver = std::make_unique<SimDriver>();
    DeviceContext* ctx = nullptr;
    std::unique_ptr<SaveInterceptor> interceptor;
    std::unique_ptr<VirtualRegion> region;
    std::vector<uint64_t> image_hash;
    std::vector<uint64_t> slot_addr;
    std::vector<CapturedGraph> graphs;
    std::vector<GraphHandle> handles;
    std::map<uint32_t, LaunchTrace> traces;
    PatchTable patch_table;
    MemoryEventLog log;
    GeneratedWorkload workload;

    explicit CaptureHarness(const WorkloadSpec& spec, RegionConfig config = {}) {
        workload = generate(spec);
        ctx = &driver->create_context();
        interceptor = std::make_unique<SaveInterceptor>(*ctx);
        for (const auto& image : workload.images) {
            std::vector<uint8_t> payload = image.segments.size() > 1
                                               ? interceptor->prelink(image.segments)
                                               : image.segments.front();
            interceptor->intercept_load(payload, image.variant, image.options);
            image_hash.push_back(crc64(payload));
        }
        region = std::make_unique<VirtualRegion>(*ctx, config, Phase::save);
        for (const auto& step : workload.init_plan) {
            if (step.kind == InitStep::Kind::alloc) {
                if (step.slot >= slot_addr.size()) slot_addr.resize(step.slot + 1, 0);
                slot_addr[step.slot] = region->allocate(step.size);
            } else {
                region->free(slot_addr.at(step.slot));
            }
        }
        region->begin_capture_window();
        for (uint32_t b = 1; b <= spec.batch_max; ++b) {
            const uint64_t scratch = region->allocate(workload.scratch_bytes_for(b));
            auto ops = workload.batches[b - 1];
            if (workload.comm_stub_image) {
                auto entries = lower_collectives(ops, *workload.comm_stub_image,
                                                 image_hash[*workload.comm_stub_image]);
                if (!entries.empty()) patch_table.per_graph.emplace(b, std::move(entries));
            }
            auto work = materialize(b, ops, scratch);
            auto captured = ctx->stream_capture(b, work);
            const ExecHandle exec = ctx->instantiate(captured.handle);
            traces.emplace(b, ctx->replay(exec));
            handles.push_back(captured.handle);
            graphs.push_back(std::move(captured.graph));
        }
        log = region->end_capture_window();
    }

    std::vector<WorkOp> materialize(uint32_t batch, const std::vector<PlannedOp>& ops,
                                    uint64_t scratch_addr) const {
        auto resolve = [&](const AddrSource& src) -> uint64_t {
            if (src.kind == AddrSource::Kind::scratch) return scratch_addr + src.delta;
            return slot_addr.at(src.slot) + src.delta;
        };
        std::vector<WorkOp> work;
        for (const auto& planned : ops) {
            WorkOp op;
            op.deps = planned.deps;
            if (const auto* kernel = std::get_if<PlannedKernel>(&planned.op)) {
                WorkKernelLaunch launch;
                launch.name = kernel->name;
                launch.binary_hash = image_hash.at(kernel->image);
                launch.grid = kernel->grid;
                launch.block = kernel->block;
                launch.shared_mem_bytes = kernel->shared_mem_bytes;
                launch.attrs = kernel->attrs;
                launch.arg_buffer = kernel->arg_template;
                for (const auto& write : kernel->addr_writes) {
                    const uint64_t addr = resolve(write.source);
                    std::memcpy(launch.arg_buffer.data() + write.buffer_offset, &addr,
                                sizeof(addr));
                }
                op.op = std::move(launch);
            } else if (const auto* copy = std::get_if<PlannedMemcpy>(&planned.op)) {
                op.op = WorkMemcpy{resolve(copy->src), resolve(copy->dst), copy->length};
            } else if (const auto* set = std::get_if<PlannedMemset>(&planned.op)) {
                op.op = WorkMemset{resolve(set->dst), set->value, set->length};
            } else {
                throw Error(Errc::unpatchable_comm, "raw collective in test materialization");
            }
            (void)batch;
            work.push_back(std::move(op));
        }
        return work;
    }
};

// The kernel-node JSON document with the exact field names, values, and
// 3440-hex-digit opaque argument buffer the schema pins down.
inline std::string reference_kernel_node_document() {
    std::string hex =
        "3e0000003e00000003000000eeffffffe4388ee304000000f7ffffffe4388ee3"
        "03000000fcffffff000000800100000000010203040810182028303705091119"
        "21293138060a121a222a3239070b131b232b333a0c141c242c343b0d151d252d"
        "353c0e161e262e363d0f171f272f";
    hex.resize(3432, '0');
    hex += "1b600000";

    std::string nodes = "[";
    for (int i = 0; i < 7; ++i) {
        nodes += R"({"id": )" + std::to_string(i) + R"(, "type": "EmptyNode", "params": {}},)";
    }
    nodes += R"({
        "id": 7,
        "type": "KernelNode",
        "params": {
            "blockDimX": 384, "blockDimY": 1, "blockDimZ": 1,
            "gridDimX": 2, "gridDimY": 62, "gridDimZ": 1,
            "sharedMemBytes": 206044,
            "kernel_node_attrs": {
                "attrQueryAvailable": true,
                "clusterDimX": 2, "clusterDimY": 1, "clusterDimZ": 1,
                "clusterSchedulingPolicyPreference": 1,
                "memSyncDomainMapDefault": 0,
                "memSyncDomainMapRemote": 1
            },
            "kernelParams": [{"index": 0, "offset": 0, "size": 1720}],
            "extra": ["CU_LAUNCH_PARAM_BUFFER_SIZE", 1720,
                      "CU_LAUNCH_PARAM_BUFFER_POINTER", "null", "CU_LAUNCH_PARAM_END"],
            "extra_argBuffer_hex": ")" + hex + R"(",
            "function_name": "nvjet_tst_168x128_64x5_1x2_h_bz_TNN",
            "kernel_source_binary_hash": 6788486540864509700,
            "func_attrs": {
                "max_dynamic_shared_size_bytes": 206044,
                "preferred_shared_memory_carveout": -1,
                "cluster_scheduling_policy_preference": 0,
                "required_cluster_width": 0,
                "required_cluster_height": 0,
                "required_cluster_depth": 0
            }
        }
    }])";
    std::string deps = "[";
    for (int i = 0; i < 7; ++i) {
        if (i) deps += ",";
        deps += R"({"from": )" + std::to_string(i) + R"(, "to": )" + std::to_string(i + 1) + "}";
    }
    deps += "]";
    return R"({"label": 7, "nodes": )" + nodes + R"(, "dependencies": )" + deps + "}";
}

// Random small graphs for property tests: varied node types, attrs, edges,
// and parameters (parameters never affect the topology key).
inline CapturedGraph random_graph(SplitMix64& rng, uint32_t label) {
    CapturedGraph graph;
    graph.label = label;
    const uint32_t nodes = 1 + static_cast<uint32_t>(rng.below(24));
    for (uint32_t i = 0; i < nodes; ++i) {
        GraphNode node;
        node.id = i;
        switch (rng.below(4)) {
            case 0: {
                node.type = NodeType::Kernel;
                KernelNodeParams params;
                params.grid = Dim3{1 + static_cast<uint32_t>(rng.below(4)),
                                   1 + static_cast<uint32_t>(rng.below(64)), 1};
                params.block = Dim3{32u * (1 + static_cast<uint32_t>(rng.below(8))), 1, 1};
                params.shared_mem_bytes = static_cast<uint32_t>(rng.below(1 << 16));
                params.kernel = KernelRef{rng.next(), "k" + std::to_string(rng.below(6))};
                params.arg_buffer.resize(16 + rng.below(64));
                for (auto& byte : params.arg_buffer) {
                    byte = static_cast<uint8_t>(rng.next() & 0xFF);
                }
                if (rng.below(3) == 0) {
                    node.attrs.cluster_dim = Dim3{1 + static_cast<uint32_t>(rng.below(4)),
                                                  1 + static_cast<uint32_t>(rng.below(2)), 1};
                    node.attrs.cluster_scheduling_policy_preference =
                        static_cast<int32_t>(rng.below(2));
                }
                node.params = std::move(params);
                break;
            }
            case 1:
                node.type = NodeType::Memcpy;
                node.params = MemcpyParams{rng.next(), rng.next(), rng.below(1 << 20)};
                break;
            case 2:
                node.type = NodeType::Memset;
                node.params = MemsetParams{rng.next(), rng.below(256), rng.below(1 << 20)};
                break;
            default:
                node.type = NodeType::Empty;
                node.params = EmptyParams{};
                break;
        }
        graph.nodes.push_back(std::move(node));
        if (i > 0) {
            graph.edges.push_back({static_cast<uint32_t>(rng.below(i)), i});
            if (rng.below(2) == 0 && i >= 2) {
                graph.edges.push_back({static_cast<uint32_t>(rng.below(i)), i});
            }
        }
    }
    graph.canonicalize();
    return graph;
}

}  // namespace foundry::testing
