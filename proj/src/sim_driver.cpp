#include "foundry/sim_driver.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "foundry/hash.hpp"
#include "foundry/io.hpp"

namespace foundry {

std::string_view load_variant_name(LoadVariant variant) {
    switch (variant) {
        case LoadVariant::data: return "data";
        case LoadVariant::file: return "file";
        case LoadVariant::with_options: return "with-options";
    }
    return "unknown";
}

std::string LaunchTrace::to_text() const {
    std::ostringstream out;
    for (const auto& rec : records) {
        out << "node=" << rec.node_id << " type=" << node_type_name(rec.type);
        if (rec.type == NodeType::Kernel) {
            out << " name=" << rec.kernel_name << " grid=" << rec.grid.x << "," << rec.grid.y
                << "," << rec.grid.z << " block=" << rec.block.x << "," << rec.block.y << ","
                << rec.block.z << " shmem=" << rec.shared_mem_bytes;
        }
        out << " args=" << to_hex(rec.arg_digest) << " addrs=";
        for (size_t i = 0; i < rec.addresses.size(); ++i) {
            if (i) out << ",";
            out << "0x" << to_hex(rec.addresses[i]);
        }
        out << "\n";
    }
    return out.str();
}

uint64_t counter_value(const CounterSnapshot& snapshot, const std::string& key) {
    auto it = snapshot.find(key);
    return it == snapshot.end() ? 0 : it->second;
}

uint64_t graph_mutation_calls(const CounterSnapshot& s) {
    return counter_value(s, "graph.add_node_calls") + counter_value(s, "graph.add_edge_calls") +
           counter_value(s, "graph.set_attr_calls");
}

uint64_t construction_calls(const CounterSnapshot& s) {
    return graph_mutation_calls(s) + counter_value(s, "exec.instantiate_calls");
}

uint64_t capture_calls(const CounterSnapshot& s) {
    return counter_value(s, "capture.begin_calls") + counter_value(s, "capture.launch_calls") +
           counter_value(s, "capture.node_records") + counter_value(s, "capture.edge_records");
}

// --- modules -----------------------------------------------------------------

ModuleHandle DeviceContext::load_module(std::span<const uint8_t> payload, LoadVariant variant,
                                        std::span<const uint8_t> options) {
    (void)options;  // carried for replay fidelity, not interpreted
    KernelImage image = parse_kernel_image(payload);
    FOUNDRY_CHECK(!image.relocatable, Errc::binary_format,
                  "relocatable segment must be pre-linked before loading");
    const uint64_t hash = crc64(payload);

    std::unique_lock lock(state_mutex_);
    const ModuleHandle handle = next_module_++;
    ModuleRuntime module;
    module.content_hash = hash;
    module.variant = variant;
    module.requires_device_init = image.requires_device_init;
    modules_.emplace(handle, module);

    for (auto& entry : image.entrypoints) {
        KernelRef ref{hash, entry.name};
        KernelRuntime runtime;
        runtime.entry = std::move(entry);
        runtime.binary_hash = hash;
        runtime.module = handle;
        kernels_by_name_[runtime.entry.name] = ref;
        kernels_[std::move(ref)] = std::move(runtime);
    }
    counters_.module_load_calls.fetch_add(1);
    return handle;
}

void DeviceContext::run_device_init(ModuleHandle module) {
    std::unique_lock lock(state_mutex_);
    auto it = modules_.find(module);
    FOUNDRY_CHECK(it != modules_.end(), Errc::invalid_argument, "unknown module handle");
    FOUNDRY_CHECK(it->second.requires_device_init, Errc::invalid_argument,
                  "module does not require device-side init");
    it->second.device_inited = true;
    counters_.module_device_init_calls.fetch_add(1);
}

bool DeviceContext::module_device_inited(ModuleHandle module) const {
    std::shared_lock lock(state_mutex_);
    auto it = modules_.find(module);
    FOUNDRY_CHECK(it != modules_.end(), Errc::invalid_argument, "unknown module handle");
    return it->second.device_inited;
}

uint64_t DeviceContext::module_content_hash(ModuleHandle module) const {
    std::shared_lock lock(state_mutex_);
    auto it = modules_.find(module);
    FOUNDRY_CHECK(it != modules_.end(), Errc::invalid_argument, "unknown module handle");
    return it->second.content_hash;
}

const DeviceContext::KernelRuntime* DeviceContext::find_kernel(const KernelRef& ref) const {
    auto it = kernels_.find(ref);
    return it == kernels_.end() ? nullptr : &it->second;
}

const DeviceContext::KernelRuntime* DeviceContext::find_kernel_by_name(
    const std::string& name) const {
    auto it = kernels_by_name_.find(name);
    return it == kernels_by_name_.end() ? nullptr : find_kernel(it->second);
}

const DeviceContext::KernelRuntime& DeviceContext::resolve_or_throw(const KernelRef& ref,
                                                                    uint32_t node_id) const {
    const KernelRuntime* kernel = find_kernel(ref);
    FOUNDRY_CHECK(kernel != nullptr, Errc::unresolved_kernel,
                  "node " + std::to_string(node_id) + " references " + ref.describe());
    return *kernel;
}

bool DeviceContext::kernel_resolvable(const KernelRef& ref) const {
    std::shared_lock lock(state_mutex_);
    return find_kernel(ref) != nullptr;
}

bool DeviceContext::kernel_resolvable(const std::string& name) const {
    std::shared_lock lock(state_mutex_);
    return find_kernel_by_name(name) != nullptr;
}

FuncAttrs DeviceContext::kernel_func_attrs(const KernelRef& ref) const {
    std::shared_lock lock(state_mutex_);
    const KernelRuntime* kernel = find_kernel(ref);
    FOUNDRY_CHECK(kernel != nullptr, Errc::unresolved_kernel, ref.describe());
    return kernel->entry.attrs;
}

// --- memory mapping ----------------------------------------------------------

void DeviceContext::map_range(uint64_t addr, uint64_t length) {
    FOUNDRY_CHECK(length > 0, Errc::invalid_argument, "cannot map empty range");
    std::unique_lock lock(state_mutex_);
    auto next = mapped_.lower_bound(addr);
    if (next != mapped_.end()) {
        FOUNDRY_CHECK(addr + length <= next->first, Errc::invalid_argument,
                      "mapping overlaps an existing range");
    }
    if (next != mapped_.begin()) {
        auto prev = std::prev(next);
        FOUNDRY_CHECK(prev->first + prev->second <= addr, Errc::invalid_argument,
                      "mapping overlaps an existing range");
    }
    mapped_.emplace(addr, length);
    counters_.alloc_map_calls.fetch_add(1);
}

void DeviceContext::unmap_range(uint64_t addr, uint64_t length) {
    std::unique_lock lock(state_mutex_);
    auto it = mapped_.upper_bound(addr);
    FOUNDRY_CHECK(it != mapped_.begin(), Errc::unknown_address,
                  "no mapping covers 0x" + to_hex(addr));
    --it;
    const uint64_t start = it->first;
    const uint64_t len = it->second;
    FOUNDRY_CHECK(addr >= start && addr + length <= start + len, Errc::unknown_address,
                  "range is not fully mapped at 0x" + to_hex(addr));
    mapped_.erase(it);
    if (start < addr) {
        mapped_.emplace(start, addr - start);
    }
    if (addr + length < start + len) {
        mapped_.emplace(addr + length, start + len - (addr + length));
    }
    counters_.alloc_unmap_calls.fetch_add(1);
}

bool DeviceContext::address_mapped(uint64_t addr) const {
    std::shared_lock lock(state_mutex_);
    auto it = mapped_.upper_bound(addr);
    if (it == mapped_.begin()) return false;
    --it;
    return addr < it->first + it->second;
}

void DeviceContext::count_reserve_call() {
    counters_.alloc_reserve_calls.fetch_add(1);
}

void DeviceContext::count_alloc_grant() {
    counters_.alloc_grants.fetch_add(1);
}

// --- capture -----------------------------------------------------------------

void DeviceContext::check_argument_buffer(const KernelRuntime& kernel, size_t buffer_size,
                                          const std::string& where) const {
    FOUNDRY_CHECK(buffer_size >= kernel.entry.arg_buffer_size, Errc::invalid_argument,
                  where + ": argument buffer smaller than '" + kernel.entry.name +
                      "' declares (" + std::to_string(buffer_size) + " < " +
                      std::to_string(kernel.entry.arg_buffer_size) + ")");
}

DeviceContext::CaptureResult DeviceContext::stream_capture(uint32_t label,
                                                           std::span<const WorkOp> work) {
    bool expected = false;
    FOUNDRY_CHECK(capturing_.compare_exchange_strong(expected, true), Errc::invalid_argument,
                  "context is already capturing");
    counters_.capture_begin_calls.fetch_add(1);

    CapturedGraph graph;
    graph.label = label;
    try {
        std::shared_lock lock(state_mutex_);
        for (uint32_t i = 0; i < work.size(); ++i) {
            const WorkOp& item = work[i];
            GraphNode node;
            node.id = i;
            if (const auto* launch = std::get_if<WorkKernelLaunch>(&item.op)) {
                counters_.capture_launch_calls.fetch_add(1);
                const KernelRuntime* kernel = nullptr;
                if (launch->binary_hash != 0) {
                    kernel = find_kernel(KernelRef{launch->binary_hash, launch->name});
                } else {
                    kernel = find_kernel_by_name(launch->name);
                }
                FOUNDRY_CHECK(kernel != nullptr, Errc::unresolved_kernel,
                              "capture aborted: '" + launch->name + "' is not resolvable");
                check_argument_buffer(*kernel, launch->arg_buffer.size(), "capture");
                node.type = NodeType::Kernel;
                node.attrs = launch->attrs;
                KernelNodeParams params;
                params.grid = launch->grid;
                params.block = launch->block;
                params.shared_mem_bytes = launch->shared_mem_bytes;
                params.kernel = KernelRef{kernel->binary_hash, kernel->entry.name};
                params.func_attrs = kernel->entry.attrs;
                params.arg_buffer = launch->arg_buffer;
                node.params = std::move(params);
            } else if (const auto* memcpy_op = std::get_if<WorkMemcpy>(&item.op)) {
                node.type = NodeType::Memcpy;
                node.params = MemcpyParams{memcpy_op->src, memcpy_op->dst, memcpy_op->length};
            } else if (const auto* memset_op = std::get_if<WorkMemset>(&item.op)) {
                node.type = NodeType::Memset;
                node.params = MemsetParams{memset_op->dst, memset_op->value, memset_op->length};
            } else {
                node.type = NodeType::Empty;
                node.params = EmptyParams{};
            }
            counters_.capture_node_records.fetch_add(1);
            graph.nodes.push_back(std::move(node));

            if (item.deps.empty()) {
                if (i > 0) {
                    graph.edges.push_back({i - 1, i});
                    counters_.capture_edge_records.fetch_add(1);
                }
            } else {
                for (uint32_t dep : item.deps) {
                    FOUNDRY_CHECK(dep < i, Errc::invalid_argument,
                                  "dependency must reference an earlier op");
                    graph.edges.push_back({dep, i});
                    counters_.capture_edge_records.fetch_add(1);
                }
            }
        }
    } catch (...) {
        capturing_.store(false);
        throw;
    }
    capturing_.store(false);

    graph.canonicalize();

    // End of capture materializes the recorded graph object.
    std::unique_lock lock(exec_mutex_);
    const GraphHandle handle = next_graph_++;
    graphs_.emplace(handle, graph);
    return CaptureResult{std::move(graph), handle};
}

// --- explicit construction -----------------------------------------------------

GraphHandle DeviceContext::build_graph(const CapturedGraph& desc) {
    desc.validate();
    {
        std::shared_lock lock(state_mutex_);
        for (const auto& node : desc.nodes) {
            if (node.type != NodeType::Kernel) continue;
            const auto& kp = node.kernel_params();
            const KernelRuntime& kernel = resolve_or_throw(kp.kernel, node.id);
            check_argument_buffer(kernel, kp.arg_buffer.size(), "build_graph");
        }
    }

    SimDriver::LaneGuard lane(driver_);
    for (const auto& node : desc.nodes) {
        counters_.graph_add_node_calls.fetch_add(1);
        if (node.type == NodeType::Kernel && !node.attrs.is_default()) {
            counters_.graph_set_attr_calls.fetch_add(1);
        }
    }
    counters_.graph_add_edge_calls.fetch_add(desc.edges.size());

    std::unique_lock lock(exec_mutex_);
    const GraphHandle handle = next_graph_++;
    graphs_.emplace(handle, desc);
    return handle;
}

const CapturedGraph& DeviceContext::graph_desc(GraphHandle handle) const {
    std::shared_lock lock(exec_mutex_);
    auto it = graphs_.find(handle);
    FOUNDRY_CHECK(it != graphs_.end(), Errc::invalid_argument, "unknown graph handle");
    return it->second;
}

ExecHandle DeviceContext::instantiate(GraphHandle handle) {
    SimDriver::LaneGuard lane(driver_);
    std::unique_lock lock(exec_mutex_);
    auto it = graphs_.find(handle);
    FOUNDRY_CHECK(it != graphs_.end(), Errc::invalid_argument, "unknown graph handle");
    const ExecHandle exec = next_exec_++;
    Exec state;
    state.key = topology_key(it->second);
    state.params = it->second;
    execs_.emplace(exec, std::move(state));
    counters_.instantiate_calls.fetch_add(1);
    return exec;
}

TopologyKey DeviceContext::exec_topology_key(ExecHandle exec) const {
    std::shared_lock lock(exec_mutex_);
    auto it = execs_.find(exec);
    FOUNDRY_CHECK(it != execs_.end(), Errc::invalid_argument, "unknown exec handle");
    return it->second.key;
}

uint64_t DeviceContext::exec_epoch(ExecHandle exec) const {
    std::shared_lock lock(exec_mutex_);
    auto it = execs_.find(exec);
    FOUNDRY_CHECK(it != execs_.end(), Errc::invalid_argument, "unknown exec handle");
    return it->second.epoch;
}

namespace {

bool node_params_equal(const GraphNode& a, const GraphNode& b) {
    return a.params == b.params;
}

}  // namespace

void DeviceContext::exec_update(ExecHandle exec, const CapturedGraph& donor) {
    donor.validate();
    {
        std::shared_lock lock(state_mutex_);
        for (const auto& node : donor.nodes) {
            if (node.type != NodeType::Kernel) continue;
            const auto& kp = node.kernel_params();
            const KernelRuntime& kernel = resolve_or_throw(kp.kernel, node.id);
            check_argument_buffer(kernel, kp.arg_buffer.size(), "exec_update");
        }
    }

    SimDriver::LaneGuard lane(driver_);
    std::unique_lock lock(exec_mutex_);
    auto it = execs_.find(exec);
    FOUNDRY_CHECK(it != execs_.end(), Errc::invalid_argument, "unknown exec handle");
    Exec& state = it->second;

    const TopologyKey donor_key = topology_key(donor);
    FOUNDRY_CHECK(donor_key == state.key, Errc::topology_mismatch,
                  "donor topology " + donor_key.hex() + " does not match exec topology " +
                      state.key.hex());

    uint64_t touched = 0;
    for (size_t i = 0; i < donor.nodes.size(); ++i) {
        if (!node_params_equal(state.params.nodes[i], donor.nodes[i])) {
            ++touched;
        }
    }
    state.params = donor;
    state.epoch += 1;
    counters_.update_calls.fetch_add(1);
    counters_.update_nodes_touched.fetch_add(touched);
}

// --- replay ------------------------------------------------------------------

LaunchTrace DeviceContext::replay(ExecHandle exec) {
    std::shared_lock exec_lock(exec_mutex_);
    auto it = execs_.find(exec);
    FOUNDRY_CHECK(it != execs_.end(), Errc::invalid_argument, "unknown exec handle");
    const CapturedGraph& graph = it->second.params;

    std::shared_lock state_lock(state_mutex_);
    LaunchTrace trace;
    trace.records.reserve(graph.nodes.size());

    auto check_mapped = [&](uint32_t node_id, uint32_t offset, uint64_t addr) {
        // mapped_ access is guarded by state_lock held across the replay
        auto range = mapped_.upper_bound(addr);
        const bool ok = range != mapped_.begin() &&
                        (--range, addr < range->first + range->second);
        FOUNDRY_CHECK(ok, Errc::unmapped_address,
                      "node " + std::to_string(node_id) + " offset " + std::to_string(offset) +
                          " references unmapped address 0x" + to_hex(addr));
    };

    for (const auto& node : graph.nodes) {
        TraceRecord rec;
        rec.node_id = node.id;
        rec.type = node.type;
        switch (node.type) {
            case NodeType::Kernel: {
                const auto& kp = node.kernel_params();
                const KernelRuntime& kernel = resolve_or_throw(kp.kernel, node.id);
                const auto& module = modules_.at(kernel.module);
                FOUNDRY_CHECK(!module.requires_device_init || module.device_inited,
                              Errc::device_state_uninitialized,
                              "node " + std::to_string(node.id) + " kernel '" +
                                  kernel.entry.name + "' used before device-side init");
                check_argument_buffer(kernel, kp.arg_buffer.size(), "replay");
                for (uint32_t offset : kernel.entry.hidden_offsets) {
                    uint64_t addr;
                    std::memcpy(&addr, kp.arg_buffer.data() + offset, sizeof(addr));
                    check_mapped(node.id, offset, addr);
                    rec.addresses.push_back(addr);
                }
                rec.kernel_name = kernel.entry.name;
                rec.grid = kp.grid;
                rec.block = kp.block;
                rec.shared_mem_bytes = kp.shared_mem_bytes;
                rec.arg_digest = crc64(kp.arg_buffer);
                break;
            }
            case NodeType::Memcpy: {
                const auto& p = std::get<MemcpyParams>(node.params);
                check_mapped(node.id, 0, p.src);
                check_mapped(node.id, 8, p.dst);
                rec.addresses = {p.src, p.dst};
                ByteWriter w;
                w.u64(p.src);
                w.u64(p.dst);
                w.u64(p.length);
                rec.arg_digest = crc64(w.data());
                break;
            }
            case NodeType::Memset: {
                const auto& p = std::get<MemsetParams>(node.params);
                check_mapped(node.id, 0, p.dst);
                rec.addresses = {p.dst};
                ByteWriter w;
                w.u64(p.dst);
                w.u64(p.value);
                w.u64(p.length);
                rec.arg_digest = crc64(w.data());
                break;
            }
            case NodeType::Empty:
                break;
        }
        trace.records.push_back(std::move(rec));
    }
    counters_.replay_launch_calls.fetch_add(1);
    return trace;
}

// --- counters -----------------------------------------------------------------

CounterSnapshot DeviceContext::counters() const {
    CounterSnapshot s;
    s["alloc.reserve_calls"] = counters_.alloc_reserve_calls.load();
    s["alloc.map_calls"] = counters_.alloc_map_calls.load();
    s["alloc.unmap_calls"] = counters_.alloc_unmap_calls.load();
    s["alloc.grants"] = counters_.alloc_grants.load();
    s["module.load_calls"] = counters_.module_load_calls.load();
    s["module.device_init_calls"] = counters_.module_device_init_calls.load();
    s["capture.begin_calls"] = counters_.capture_begin_calls.load();
    s["capture.launch_calls"] = counters_.capture_launch_calls.load();
    s["capture.node_records"] = counters_.capture_node_records.load();
    s["capture.edge_records"] = counters_.capture_edge_records.load();
    s["graph.add_node_calls"] = counters_.graph_add_node_calls.load();
    s["graph.add_edge_calls"] = counters_.graph_add_edge_calls.load();
    s["graph.set_attr_calls"] = counters_.graph_set_attr_calls.load();
    s["exec.instantiate_calls"] = counters_.instantiate_calls.load();
    s["exec.update_calls"] = counters_.update_calls.load();
    s["exec.update_nodes_touched"] = counters_.update_nodes_touched.load();
    s["replay.launch_calls"] = counters_.replay_launch_calls.load();
    return s;
}

DeviceContext& SimDriver::create_context() {
    std::lock_guard lock(registry_mutex_);
    contexts_.push_back(std::unique_ptr<DeviceContext>(new DeviceContext(*this, next_context_++)));
    return *contexts_.back();
}

CounterSnapshot SimDriver::counters() const {
    CounterSnapshot s;
    s["driver.lane_acquisitions"] = lane_acquisitions_.load();
    s["driver.lane_contention_units"] = lane_contention_units_.load();
    return s;
}

}  // namespace foundry
