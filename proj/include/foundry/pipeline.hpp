#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "foundry/binary_catalog.hpp"
#include "foundry/det_alloc.hpp"
#include "foundry/rank_forge.hpp"
#include "foundry/templater.hpp"
#include "foundry/workload_gen.hpp"

namespace foundry {

// The portable bundle is a directory: manifest, graphs.bin, memlayout.bin,
// catalog.bin, patch.bin, binaries/<hex-hash>.bin. LOAD needs nothing else.
struct ArchivePaths {
    std::filesystem::path root;

    std::filesystem::path manifest() const { return root / "manifest"; }
    std::filesystem::path graphs() const { return root / "graphs.bin"; }
    std::filesystem::path memlayout() const { return root / "memlayout.bin"; }
    std::filesystem::path catalog() const { return root / "catalog.bin"; }
    std::filesystem::path patch_table() const { return root / "patch.bin"; }
    std::filesystem::path binaries() const { return root / "binaries"; }
    std::filesystem::path binary(uint64_t hash) const;
};

struct Manifest {
    static constexpr uint32_t kFormatVersion = 1;

    uint32_t format_version = kFormatVersion;
    uint8_t hash_algorithm = kContentHashAlgorithm;
    uint64_t workload_digest = 0;
    std::string workload_text;  // canonical spec text; makes LOAD self-contained
    RegionConfig allocator;
    uint64_t final_offset = 0;
    uint64_t kv_cache_bytes = 0;
    uint64_t comm_world_placeholder = 1;
    uint64_t comm_real_hash = 0;  // 0 for workloads without collectives
    GroupingManifest grouping;
    std::string memlayout_ref = "memlayout.bin";
    std::string catalog_ref = "catalog.bin";
    std::string patch_table_ref = "patch.bin";
    std::map<std::string, uint64_t> file_digests;  // relative path -> crc64
};

std::string serialize_manifest(const Manifest& manifest);
Manifest parse_manifest(const std::string& text);

struct SaveOptions {
    std::optional<uint64_t> base_address;  // overrides the allocator base
    bool emit_json_graphs = false;         // graphs/<b>.json next to graphs.bin
};

struct SaveResult {
    std::filesystem::path archive_dir;
    Manifest manifest;
    std::map<uint32_t, LaunchTrace> traces;  // SAVE-time self-replay, per batch
    std::vector<AllocationRecord> allocation_records;
    CounterSnapshot counters;
};

// Runs generate -> intercepted binary loads -> deterministic init -> capture
// window -> grouping -> archive write. Same spec, byte-identical archive.
SaveResult save(const WorkloadSpec& spec, const std::filesystem::path& out,
                const SaveOptions& options = {});

std::string traces_to_text(const std::map<uint32_t, LaunchTrace>& traces);

struct FaultInjection {
    bool skip_binary_restore = false;
    bool skip_device_init = false;
    int64_t base_shift_granules = 0;
    bool extra_prewindow_alloc = false;
};

struct LoadOptions {
    uint32_t rank = 0;
    uint32_t world = 1;
    bool preallocate = true;
    unsigned prepare_lanes = 4;
    FaultInjection faults;
};

// A rank's restored serving state: every archived batch size is servable.
class ServingContext {
public:
    ServingContext(ServingContext&&) = default;
    ServingContext& operator=(ServingContext&&) = default;

    LaunchTrace replay(uint32_t batch);
    std::vector<uint32_t> batches() const;
    const Manifest& manifest() const { return manifest_; }
    std::vector<AllocationRecord> allocation_records() const { return region_->records(); }
    // Context counters merged with driver-lane and SAVE-only families
    // (capture / prelink show up as zero here).
    CounterSnapshot counters() const;
    DeviceContext& context() { return *ctx_; }

private:
    friend ServingContext load(SimDriver&, const std::filesystem::path&, const LoadOptions&);
    friend ServingContext load(const std::filesystem::path&, const LoadOptions&);
    ServingContext() = default;

    std::unique_ptr<SimDriver> owned_driver_;
    SimDriver* driver_ = nullptr;
    DeviceContext* ctx_ = nullptr;
    std::unique_ptr<VirtualRegion> region_;
    std::optional<ServingSet> serving_;
    Manifest manifest_;
};

ServingContext load(const std::filesystem::path& archive, const LoadOptions& options = {});
// Multi-rank deployments share one driver; each rank gets its own context.
ServingContext load(SimDriver& driver, const std::filesystem::path& archive,
                    const LoadOptions& options = {});

struct InspectReport {
    Manifest manifest;
    uint64_t metadata_bytes = 0;
    uint64_t binary_bytes = 0;
    struct BinaryInfo {
        uint64_t hash = 0;
        uint64_t bytes = 0;
        uint32_t kernels = 0;
        bool needs_device_init = false;
        bool is_stub = false;
        bool is_comm_real = false;
    };
    std::vector<BinaryInfo> binaries;

    double template_fraction() const {
        return manifest.grouping.total_graphs == 0
                   ? 0.0
                   : static_cast<double>(manifest.grouping.template_count) /
                         manifest.grouping.total_graphs;
    }
    std::string to_text() const;
};

InspectReport inspect(const std::filesystem::path& archive);

// Dumps one archived graph as its JSON document.
std::string inspect_graph_json(const std::filesystem::path& archive, uint32_t batch);

struct ArchiveDiffReport {
    bool identical = true;
    std::vector<std::string> lines;

    std::string to_text() const;
};

ArchiveDiffReport diff_archives(const std::filesystem::path& a, const std::filesystem::path& b);

// Optional single-file archive form: an uncompressed concatenation of the
// directory tree with an index. Content-addressed binaries dedupe across
// directory archives, so the directory stays the default.
void pack_archive(const std::filesystem::path& dir, const std::filesystem::path& file);
void unpack_archive(const std::filesystem::path& file, const std::filesystem::path& dir);

struct BenchReport {
    std::string mode;
    double wall_ms = 0.0;
    uint64_t archive_bytes = 0;
    double update_served_fraction = 0.0;
    uint64_t construction_call_count = 0;  // graph-mutation + instantiate
    uint64_t update_call_count = 0;
    uint64_t capture_call_count = 0;
    CounterSnapshot counters;

    std::string to_text() const;
};

BenchReport bench(const WorkloadSpec& spec, const std::string& mode);

uint64_t directory_bytes(const std::filesystem::path& dir);

}  // namespace foundry
