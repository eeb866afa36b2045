#include "foundry/rank_forge.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>
#include <unordered_map>

#include "foundry/hash.hpp"
#include "foundry/io.hpp"

namespace foundry {

namespace {
constexpr char kPatchMagic[5] = "FNDP";
constexpr uint16_t kPatchVersion = 1;

// Stub argument layout, owned by the stub layer end to end.
constexpr uint32_t kStubRankOffset = 0;
constexpr uint32_t kStubWorldOffset = 8;
constexpr uint32_t kStubBufferOffset = 16;
constexpr uint32_t kStubPayloadOffset = 24;
constexpr uint32_t kStubArgBytes = 32;

void write_u64_at(std::vector<uint8_t>& buffer, uint32_t offset, uint64_t value) {
    FOUNDRY_CHECK(offset + 8 <= buffer.size(), Errc::invalid_argument,
                  "patch offset outside the argument buffer");
    std::memcpy(buffer.data() + offset, &value, sizeof(value));
}

}  // namespace

size_t PatchTable::total_entries() const {
    size_t total = 0;
    for (const auto& [label, entries] : per_graph) {
        total += entries.size();
    }
    return total;
}

std::vector<uint8_t> serialize_patch_table(const PatchTable& table) {
    ByteWriter w;
    w.bytes(kPatchMagic, 4);
    w.u16(kPatchVersion);
    w.u64(table.world_placeholder);
    w.u32(static_cast<uint32_t>(table.per_graph.size()));
    for (const auto& [label, entries] : table.per_graph) {
        w.u32(label);
        w.u32(static_cast<uint32_t>(entries.size()));
        for (const auto& entry : entries) {
            w.u32(entry.node_id);
            w.u64(entry.stub.binary_hash);
            w.str(entry.stub.name);
            w.str(entry.real_name);
            w.u32(static_cast<uint32_t>(entry.rank_offsets.size()));
            for (uint32_t off : entry.rank_offsets) w.u32(off);
            w.u32(static_cast<uint32_t>(entry.world_offsets.size()));
            for (uint32_t off : entry.world_offsets) w.u32(off);
            w.u8(entry.patch_width);
        }
    }
    return w.take();
}

PatchTable parse_patch_table(std::span<const uint8_t> bytes) {
    ByteReader r(bytes, Errc::archive_corruption);
    r.expect_magic(kPatchMagic);
    const uint16_t version = r.u16();
    FOUNDRY_CHECK(version == kPatchVersion, Errc::archive_corruption,
                  "unsupported patch table version " + std::to_string(version));
    PatchTable table;
    table.world_placeholder = r.u64();
    const uint32_t graphs = r.u32();
    for (uint32_t g = 0; g < graphs; ++g) {
        const uint32_t label = r.u32();
        const uint32_t count = r.u32();
        std::vector<CommPatchEntry> entries;
        entries.reserve(count);
        for (uint32_t i = 0; i < count; ++i) {
            CommPatchEntry entry;
            entry.node_id = r.u32();
            entry.stub.binary_hash = r.u64();
            entry.stub.name = r.str();
            entry.real_name = r.str();
            const uint32_t ranks = r.u32();
            for (uint32_t j = 0; j < ranks; ++j) entry.rank_offsets.push_back(r.u32());
            const uint32_t worlds = r.u32();
            for (uint32_t j = 0; j < worlds; ++j) entry.world_offsets.push_back(r.u32());
            entry.patch_width = r.u8();
            entries.push_back(std::move(entry));
        }
        table.per_graph.emplace(label, std::move(entries));
    }
    FOUNDRY_CHECK(r.done(), Errc::archive_corruption, "trailing bytes in patch table");
    return table;
}

std::vector<CommPatchEntry> lower_collectives(std::vector<PlannedOp>& ops, uint32_t stub_image,
                                              uint64_t stub_binary_hash) {
    std::vector<CommPatchEntry> entries;
    for (uint32_t i = 0; i < ops.size(); ++i) {
        auto* coll = std::get_if<PlannedCollective>(&ops[i].op);
        if (coll == nullptr || coll->raw) continue;

        const CollectiveKindInfo& kind = collective_kind(coll->kind);

        PlannedKernel stub;
        stub.image = stub_image;
        stub.name = std::string(kind.stub_name);
        stub.grid = Dim3{1, 1, 1};
        stub.block = Dim3{32, 1, 1};
        stub.shared_mem_bytes = 0;
        stub.arg_template.assign(kStubArgBytes, 0);
        write_u64_at(stub.arg_template, kStubRankOffset, 0);  // single SAVE rank
        write_u64_at(stub.arg_template, kStubWorldOffset, 1); // world placeholder
        write_u64_at(stub.arg_template, kStubPayloadOffset, coll->payload_bytes);
        stub.addr_writes = {{kStubBufferOffset, coll->buffer}};

        CommPatchEntry entry;
        entry.node_id = i;
        entry.stub = KernelRef{stub_binary_hash, stub.name};
        entry.real_name = std::string(kind.real_name);
        entry.rank_offsets = {kStubRankOffset};
        entry.world_offsets = {kStubWorldOffset};
        entries.push_back(std::move(entry));

        const auto deps = ops[i].deps;
        ops[i] = PlannedOp{std::move(stub), deps};
    }
    return entries;
}

void apply_rank_patches(CapturedGraph& graph, std::span<const CommPatchEntry> entries,
                        uint64_t real_comm_hash, uint32_t rank, uint32_t world) {
    for (const auto& entry : entries) {
        FOUNDRY_CHECK(entry.node_id < graph.nodes.size(), Errc::archive_corruption,
                      "patch entry references missing node");
        GraphNode& node = graph.nodes[entry.node_id];
        FOUNDRY_CHECK(node.type == NodeType::Kernel, Errc::archive_corruption,
                      "patch entry references a non-kernel node");
        auto& params = node.kernel_params();
        FOUNDRY_CHECK(params.kernel == entry.stub, Errc::archive_corruption,
                      "node " + std::to_string(entry.node_id) + " is not the recorded stub " +
                          entry.stub.describe());
        params.kernel = KernelRef{real_comm_hash, entry.real_name};
        for (uint32_t off : entry.rank_offsets) {
            write_u64_at(params.arg_buffer, off, rank);
        }
        for (uint32_t off : entry.world_offsets) {
            write_u64_at(params.arg_buffer, off, world);
        }
    }
}

void instantiate_rank(std::vector<CapturedGraph>& graphs, const PatchTable& table,
                      uint64_t real_comm_hash, uint32_t rank, uint32_t world) {
    FOUNDRY_CHECK(world >= 1 && rank < world, Errc::invalid_argument,
                  "rank " + std::to_string(rank) + " is outside world size " +
                      std::to_string(world));
    if (table.empty()) {
        return;
    }
    FOUNDRY_CHECK(real_comm_hash != 0, Errc::unresolved_kernel,
                  "archive carries comm patches but no real comm binary");

    std::unordered_map<uint32_t, CapturedGraph*> by_label;
    for (auto& graph : graphs) {
        by_label[graph.label] = &graph;
    }

    for (const auto& [label, entries] : table.per_graph) {
        auto it = by_label.find(label);
        FOUNDRY_CHECK(it != by_label.end(), Errc::archive_corruption,
                      "patch table references missing graph " + std::to_string(label));
        apply_rank_patches(*it->second, entries, real_comm_hash, rank, world);
    }
}

std::string UniformityReport::to_text() const {
    std::ostringstream out;
    if (uniform) {
        out << "rank instances uniform\n";
        return out.str();
    }
    for (const auto& line : divergences) {
        out << line << "\n";
    }
    return out.str();
}

UniformityReport verify_rank_uniformity(const std::vector<std::vector<CapturedGraph>>& rank_graphs,
                                        const PatchTable& table) {
    UniformityReport report;
    auto diverge = [&](const std::string& what) {
        report.uniform = false;
        report.divergences.push_back(what);
    };

    if (rank_graphs.size() < 2) {
        return report;
    }
    const auto& base = rank_graphs[0];
    for (size_t r = 1; r < rank_graphs.size(); ++r) {
        const auto& other = rank_graphs[r];
        if (other.size() != base.size()) {
            diverge("rank " + std::to_string(r) + " has a different graph count");
            continue;
        }
        for (size_t g = 0; g < base.size(); ++g) {
            const CapturedGraph& a = base[g];
            const CapturedGraph& b = other[g];
            if (topology_key(a) != topology_key(b)) {
                diverge("graph " + std::to_string(a.label) + ": topology differs on rank " +
                        std::to_string(r));
                continue;
            }

            // Collect the byte positions rank patching is allowed to touch.
            std::unordered_map<uint32_t, std::vector<uint32_t>> allowed;
            auto entries = table.per_graph.find(a.label);
            if (entries != table.per_graph.end()) {
                for (const auto& entry : entries->second) {
                    auto& offsets = allowed[entry.node_id];
                    offsets.insert(offsets.end(), entry.rank_offsets.begin(),
                                   entry.rank_offsets.end());
                }
            }

            const GraphDiff delta = diff(a, b);
            for (const auto& node_delta : delta.node_deltas) {
                auto allowed_it = allowed.find(node_delta.node_id);
                const std::vector<uint32_t>* offsets =
                    allowed_it == allowed.end() ? nullptr : &allowed_it->second;
                if (node_delta.kernel_changed || node_delta.dims_changed ||
                    node_delta.shared_mem_changed || node_delta.memop_changed) {
                    diverge("graph " + std::to_string(a.label) + " node " +
                            std::to_string(node_delta.node_id) +
                            ": non-argument parameters differ on rank " + std::to_string(r));
                    continue;
                }
                for (const auto& range : node_delta.arg_byte_ranges) {
                    bool covered = offsets != nullptr;
                    if (covered) {
                        for (uint32_t at = range.begin; at < range.end; ++at) {
                            bool in_patch = false;
                            for (uint32_t off : *offsets) {
                                if (at >= off && at < off + 8) {
                                    in_patch = true;
                                    break;
                                }
                            }
                            if (!in_patch) {
                                covered = false;
                                break;
                            }
                        }
                    }
                    if (!covered) {
                        diverge("graph " + std::to_string(a.label) + " node " +
                                std::to_string(node_delta.node_id) + ": bytes [" +
                                std::to_string(range.begin) + "," + std::to_string(range.end) +
                                ") differ outside patch offsets on rank " + std::to_string(r));
                    }
                }
            }
        }
    }
    return report;
}

}  // namespace foundry
