#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "foundry/sim_driver.hpp"

namespace foundry {

// One recorded kernel binary: enough to replay the exact load call during
// LOAD and to resolve every contained kernel without a warmup execution.
struct KernelBinaryRecord {
    uint64_t hash = 0;
    LoadVariant variant = LoadVariant::data;
    std::vector<uint8_t> load_options;  // recorded verbatim
    bool needs_device_init = false;
    bool is_stub = false;
    bool is_comm_real = false;
    std::vector<std::string> entrypoints;
    std::vector<FuncAttrs> entrypoint_attrs;

    bool operator==(const KernelBinaryRecord&) const = default;
};

struct Catalog {
    std::map<uint64_t, KernelBinaryRecord> binaries;  // keyed by content hash

    bool covers(const KernelRef& ref) const;
    const KernelBinaryRecord& at(uint64_t hash) const;

    bool operator==(const Catalog&) const = default;
};

std::vector<uint8_t> serialize_catalog(const Catalog& catalog);
Catalog parse_catalog(std::span<const uint8_t> bytes);

// Builds the catalog during SAVE by wrapping every module load: the payload
// is copied, hashed, and its entrypoints enumerated before the underlying
// driver load happens.
class SaveInterceptor {
public:
    explicit SaveInterceptor(DeviceContext& ctx) : ctx_(ctx) {}

    ModuleHandle intercept_load(std::span<const uint8_t> payload, LoadVariant variant,
                                std::span<const uint8_t> options = {});

    // Pre-links relocatable segments into one loadable payload (SAVE only).
    std::vector<uint8_t> prelink(const std::vector<std::vector<uint8_t>>& segments);

    void mark_device_init(uint64_t hash);
    void mark_stub(uint64_t hash);
    void mark_comm_real(uint64_t hash);

    // Prunes unreferenced loads: keeps binaries referenced by the captured
    // graphs plus the explicitly kept hashes (comm stub/real pair).
    Catalog finalize(const std::vector<CapturedGraph>& graphs,
                     std::span<const uint64_t> extra_keep = {}) const;

    const std::vector<uint8_t>& payload(uint64_t hash) const;

    uint64_t prelink_calls() const { return prelink_calls_; }
    uint64_t linked_segments() const { return linked_segments_; }

private:
    KernelBinaryRecord& record_for(uint64_t hash, const std::string& what);

    DeviceContext& ctx_;
    std::map<uint64_t, KernelBinaryRecord> recorded_;
    std::map<uint64_t, std::vector<uint8_t>> payloads_;
    uint64_t prelink_calls_ = 0;
    uint64_t linked_segments_ = 0;
};

struct ResolutionTable {
    struct Entry {
        uint64_t binary_hash = 0;
        uint32_t entrypoint_index = 0;

        bool operator==(const Entry&) const = default;
    };

    std::unordered_map<KernelRef, Entry, KernelRefHash> entries;

    const Entry& resolve(const KernelRef& ref) const;
    bool operator==(const ResolutionTable&) const = default;
};

using PayloadFetch = std::function<std::vector<uint8_t>(uint64_t hash)>;

// Loads every cataloged binary via its recorded variant into a fresh
// context and runs device init where flagged. Binaries already present in
// the context are not reloaded, so a second restore is a no-op.
// `device_init = false` is a fault-injection knob for tests.
ResolutionTable restore_binaries(DeviceContext& ctx, const Catalog& catalog,
                                 const PayloadFetch& fetch, bool device_init = true);

}  // namespace foundry
