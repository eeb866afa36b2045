#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "foundry/graph_model.hpp"
#include "foundry/kernel_image.hpp"

namespace foundry {

enum class LoadVariant : uint8_t {
    data = 0,
    file = 1,
    with_options = 2,
};

std::string_view load_variant_name(LoadVariant variant);

using ModuleHandle = uint64_t;
using GraphHandle = uint64_t;
using ExecHandle = uint64_t;

// Work issued to a stream while it is in capture mode.
struct WorkKernelLaunch {
    std::string name;
    uint64_t binary_hash = 0;  // 0 resolves by mangled name alone
    Dim3 grid;
    Dim3 block;
    uint32_t shared_mem_bytes = 0;
    KernelNodeAttrs attrs;
    std::vector<uint8_t> arg_buffer;
};

struct WorkMemcpy {
    uint64_t src = 0;
    uint64_t dst = 0;
    uint64_t length = 0;
};

struct WorkMemset {
    uint64_t dst = 0;
    uint64_t value = 0;
    uint64_t length = 0;
};

struct WorkEmpty {};

struct WorkOp {
    std::variant<WorkKernelLaunch, WorkMemcpy, WorkMemset, WorkEmpty> op;
    // Indices of earlier ops this one depends on; empty means the previous op.
    std::vector<uint32_t> deps;
};

struct TraceRecord {
    uint32_t node_id = 0;
    NodeType type = NodeType::Empty;
    std::string kernel_name;
    Dim3 grid;
    Dim3 block;
    uint32_t shared_mem_bytes = 0;
    uint64_t arg_digest = 0;
    std::vector<uint64_t> addresses;  // resolved embedded addresses, in offset order

    bool operator==(const TraceRecord&) const = default;
};

struct LaunchTrace {
    std::vector<TraceRecord> records;

    bool operator==(const LaunchTrace&) const = default;
    std::string to_text() const;
};

// Flat key -> value counter report; keys are stable and sorted.
using CounterSnapshot = std::map<std::string, uint64_t>;

uint64_t counter_value(const CounterSnapshot& snapshot, const std::string& key);
// add_node + add_edge + set_attr
uint64_t graph_mutation_calls(const CounterSnapshot& snapshot);
// mutation + instantiate: the cost of building executables
uint64_t construction_calls(const CounterSnapshot& snapshot);
uint64_t capture_calls(const CounterSnapshot& snapshot);

class SimDriver;

class DeviceContext {
public:
    DeviceContext(const DeviceContext&) = delete;
    DeviceContext& operator=(const DeviceContext&) = delete;

    uint32_t id() const { return id_; }

    // --- module APIs (serialized per context) ---
    ModuleHandle load_module(std::span<const uint8_t> payload, LoadVariant variant,
                             std::span<const uint8_t> options = {});
    void run_device_init(ModuleHandle module);
    bool module_device_inited(ModuleHandle module) const;
    uint64_t module_content_hash(ModuleHandle module) const;

    bool kernel_resolvable(const KernelRef& ref) const;
    bool kernel_resolvable(const std::string& name) const;
    FuncAttrs kernel_func_attrs(const KernelRef& ref) const;

    // --- memory mapping (driven by the deterministic allocator) ---
    void map_range(uint64_t addr, uint64_t length);
    void unmap_range(uint64_t addr, uint64_t length);
    bool address_mapped(uint64_t addr) const;
    void count_reserve_call();
    void count_alloc_grant();

    // --- capture and graph construction ---
    struct CaptureResult {
        CapturedGraph graph;
        GraphHandle handle;
    };
    // Records the work sequence into a graph. Launches are suppressed: no
    // execution happens and no trace is emitted.
    CaptureResult stream_capture(uint32_t label, std::span<const WorkOp> work);

    GraphHandle build_graph(const CapturedGraph& desc);
    const CapturedGraph& graph_desc(GraphHandle handle) const;

    ExecHandle instantiate(GraphHandle handle);
    TopologyKey exec_topology_key(ExecHandle exec) const;
    uint64_t exec_epoch(ExecHandle exec) const;

    // In-place parameter update. The donor must have the same topology key;
    // node types, order, dependencies and kernel-node attributes all equal.
    void exec_update(ExecHandle exec, const CapturedGraph& donor);

    // Validates every embedded device address and emits the launch trace.
    LaunchTrace replay(ExecHandle exec);

    CounterSnapshot counters() const;

private:
    friend class SimDriver;
    DeviceContext(SimDriver& driver, uint32_t id) : driver_(driver), id_(id) {}

    struct ModuleRuntime {
        uint64_t content_hash = 0;
        LoadVariant variant = LoadVariant::data;
        bool requires_device_init = false;
        bool device_inited = false;
    };

    struct KernelRuntime {
        KernelEntry entry;  // hidden offsets live here and are never exposed
        uint64_t binary_hash = 0;
        ModuleHandle module = 0;
    };

    struct Exec {
        TopologyKey key;
        uint64_t epoch = 0;
        CapturedGraph params;
    };

    struct Counters {
        std::atomic<uint64_t> alloc_reserve_calls{0};
        std::atomic<uint64_t> alloc_map_calls{0};
        std::atomic<uint64_t> alloc_unmap_calls{0};
        std::atomic<uint64_t> alloc_grants{0};
        std::atomic<uint64_t> module_load_calls{0};
        std::atomic<uint64_t> module_device_init_calls{0};
        std::atomic<uint64_t> capture_begin_calls{0};
        std::atomic<uint64_t> capture_launch_calls{0};
        std::atomic<uint64_t> capture_node_records{0};
        std::atomic<uint64_t> capture_edge_records{0};
        std::atomic<uint64_t> graph_add_node_calls{0};
        std::atomic<uint64_t> graph_add_edge_calls{0};
        std::atomic<uint64_t> graph_set_attr_calls{0};
        std::atomic<uint64_t> instantiate_calls{0};
        std::atomic<uint64_t> update_calls{0};
        std::atomic<uint64_t> update_nodes_touched{0};
        std::atomic<uint64_t> replay_launch_calls{0};
    };

    const KernelRuntime* find_kernel(const KernelRef& ref) const;
    const KernelRuntime* find_kernel_by_name(const std::string& name) const;
    const KernelRuntime& resolve_or_throw(const KernelRef& ref, uint32_t node_id) const;
    void check_argument_buffer(const KernelRuntime& kernel, size_t buffer_size,
                               const std::string& where) const;

    SimDriver& driver_;
    uint32_t id_;

    mutable std::shared_mutex state_mutex_;  // modules, kernels, mapped ranges
    std::unordered_map<ModuleHandle, ModuleRuntime> modules_;
    std::unordered_map<KernelRef, KernelRuntime, KernelRefHash> kernels_;
    std::unordered_map<std::string, KernelRef> kernels_by_name_;
    std::map<uint64_t, uint64_t> mapped_;  // start -> length, non-overlapping
    uint64_t next_module_ = 1;

    mutable std::shared_mutex exec_mutex_;  // graphs and execs
    std::unordered_map<GraphHandle, CapturedGraph> graphs_;
    std::unordered_map<ExecHandle, Exec> execs_;
    uint64_t next_graph_ = 1;
    uint64_t next_exec_ = 1;

    std::atomic<bool> capturing_{false};
    Counters counters_;
};

// The simulated driver: owns contexts and the single global lane on which
// all graph-mutation, instantiate, and update calls serialize (they block,
// never error). Replay of distinct execs proceeds concurrently.
class SimDriver {
public:
    SimDriver() = default;
    SimDriver(const SimDriver&) = delete;
    SimDriver& operator=(const SimDriver&) = delete;

    DeviceContext& create_context();

    CounterSnapshot counters() const;

private:
    friend class DeviceContext;

    class LaneGuard {
    public:
        explicit LaneGuard(SimDriver& driver) : driver_(driver) {
            const uint64_t waiting = driver_.lane_waiters_.fetch_add(1);
            driver_.lane_mutex_.lock();
            driver_.lane_waiters_.fetch_sub(1);
            driver_.lane_acquisitions_.fetch_add(1);
            driver_.lane_contention_units_.fetch_add(waiting);
        }
        ~LaneGuard() { driver_.lane_mutex_.unlock(); }

    private:
        SimDriver& driver_;
    };

    std::mutex registry_mutex_;
    std::vector<std::unique_ptr<DeviceContext>> contexts_;
    uint32_t next_context_ = 0;

    std::mutex lane_mutex_;
    std::atomic<uint64_t> lane_waiters_{0};
    std::atomic<uint64_t> lane_acquisitions_{0};
    std::atomic<uint64_t> lane_contention_units_{0};
};

}  // namespace foundry
