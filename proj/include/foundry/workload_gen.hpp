#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "foundry/graph_model.hpp"
#include "foundry/sim_driver.hpp"

namespace foundry {

struct SplitMix64 {
    uint64_t state = 0x9E3779B97F4A7C15ull;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t below(uint64_t bound) { return bound == 0 ? 0 : next() % bound; }
};

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    SplitMix64 rng(a ^ (b * 0x9E3779B97F4A7C15ull));
    return rng.next();
}

enum class CommMode : uint8_t {
    none = 0,
    spmd = 1,
};

// A synthetic LLM-decode capture workload. The same spec and seed always
// produce the same binaries, allocation plan, and work sequences.
struct WorkloadSpec {
    uint64_t seed = 1;
    uint32_t batch_max = 8;
    uint32_t layers = 2;
    uint32_t kernels_per_layer = 3;
    std::vector<uint32_t> thresholds;  // batch sizes where the topology changes
    double hidden_offset_density = 1.0;
    CommMode comm = CommMode::none;
    uint32_t collectives_per_layer = 0;
    uint64_t kv_cache_bytes = 1ull << 20;
    uint64_t weights_bytes_per_layer = 128ull << 10;
    uint64_t io_bytes = 64ull << 10;
    uint64_t scratch_bytes_per_batch = 16ull << 10;
    bool batch1_special = false;
    bool spmd_uniform = true;
    bool emit_raw_collective = false;  // fault knob: bypasses the comm stub layer

    void validate() const;
    std::string canonical_text() const;
    uint64_t digest() const;
    static WorkloadSpec parse_text(const std::string& text);

    // Index of the kernel-variant regime serving batch size b.
    uint32_t variant_for_batch(uint32_t batch) const;

    bool operator==(const WorkloadSpec&) const = default;
};

std::vector<std::string> preset_names();
WorkloadSpec preset(const std::string& name);
// Resolves a preset name or reads a key = value spec file.
WorkloadSpec resolve_workload(const std::string& name_or_path);

// Collective building blocks the workload can emit. The stub layer owns the
// stub argument layout; the real kernels live in a separate binary that
// needs device-side init after load.
struct CollectiveKindInfo {
    std::string_view kind;
    std::string_view stub_name;
    std::string_view real_name;
};

std::span<const CollectiveKindInfo> collective_kinds();
const CollectiveKindInfo& collective_kind(std::string_view kind);

// Closed-form ground truth used as the test oracle for grouping and layout.
struct ExpectedOutcome {
    uint32_t group_count = 0;
    std::vector<uint32_t> group_sizes;  // ordered by smallest member batch
    uint64_t final_offset = 0;          // allocator offset at the end of SAVE
    uint32_t nodes_per_graph = 0;

    bool operator==(const ExpectedOutcome&) const = default;
};

ExpectedOutcome expected_outcome(const WorkloadSpec& spec);

// --- generated artifacts ---------------------------------------------------

struct ImageToLoad {
    // More than one segment means the payload must be pre-linked at SAVE.
    std::vector<std::vector<uint8_t>> segments;
    LoadVariant variant = LoadVariant::data;
    std::vector<uint8_t> options;
    bool comm_stub = false;
    bool comm_real = false;
    bool decoy = false;  // loaded during warmup but never referenced by a graph

    bool operator==(const ImageToLoad&) const = default;
};

struct InitStep {
    enum class Kind : uint8_t { alloc, release };
    Kind kind = Kind::alloc;
    uint32_t slot = 0;  // allocation slot this step creates or releases
    std::string tag;
    uint64_t size = 0;

    bool operator==(const InitStep&) const = default;
};

// Address sources a planned op can reference: a named init allocation or
// the batch's own capture-window scratch buffer.
struct AddrSource {
    enum class Kind : uint8_t { init_slot, scratch };
    Kind kind = Kind::init_slot;
    uint32_t slot = 0;
    uint64_t delta = 0;

    bool operator==(const AddrSource&) const = default;
};

struct AddrWrite {
    uint32_t buffer_offset = 0;
    AddrSource source;

    bool operator==(const AddrWrite&) const = default;
};

struct PlannedKernel {
    uint32_t image = 0;  // index into GeneratedWorkload::images
    std::string name;
    Dim3 grid;
    Dim3 block;
    uint32_t shared_mem_bytes = 0;
    KernelNodeAttrs attrs;
    std::vector<uint8_t> arg_template;  // address fields zeroed
    std::vector<AddrWrite> addr_writes;

    bool operator==(const PlannedKernel&) const = default;
};

struct PlannedMemcpy {
    AddrSource src;
    AddrSource dst;
    uint64_t length = 0;

    bool operator==(const PlannedMemcpy&) const = default;
};

struct PlannedMemset {
    AddrSource dst;
    uint64_t value = 0;
    uint64_t length = 0;

    bool operator==(const PlannedMemset&) const = default;
};

// A collective as the model code emits it. It must pass through the comm
// stub layer before capture; one reaching the driver directly is a SAVE
// error.
struct PlannedCollective {
    std::string kind;  // "allreduce" | "alltoall"
    AddrSource buffer;
    uint64_t payload_bytes = 0;
    bool raw = false;  // emitted outside the stub layer (fault injection)

    bool operator==(const PlannedCollective&) const = default;
};

struct PlannedOp {
    std::variant<PlannedKernel, PlannedMemcpy, PlannedMemset, PlannedCollective> op;
    std::vector<uint32_t> deps;

    bool operator==(const PlannedOp&) const = default;
};

struct GeneratedWorkload {
    std::vector<ImageToLoad> images;
    std::optional<uint32_t> comm_stub_image;
    std::optional<uint32_t> comm_real_image;
    std::vector<InitStep> init_plan;
    std::vector<std::vector<PlannedOp>> batches;  // batches[i] serves batch size i+1
    uint64_t scratch_bytes_for(uint32_t batch) const;
    ExpectedOutcome expected;
    WorkloadSpec spec;

    bool operator==(const GeneratedWorkload&) const = default;
};

GeneratedWorkload generate(const WorkloadSpec& spec);

// The deterministic pre-capture allocation sequence on its own; LOAD runs
// this without regenerating the capture work.
std::vector<InitStep> build_init_plan(const WorkloadSpec& spec);

}  // namespace foundry
