#include "foundry/binary_catalog.hpp"

#include <algorithm>
#include <unordered_set>

#include "foundry/hash.hpp"
#include "foundry/io.hpp"

namespace foundry {

namespace {
constexpr char kCatalogMagic[5] = "FNDC";
constexpr uint16_t kCatalogVersion = 1;
constexpr uint8_t kFlagNeedsDeviceInit = 0x01;
constexpr uint8_t kFlagStub = 0x02;
constexpr uint8_t kFlagCommReal = 0x04;
}  // namespace

bool Catalog::covers(const KernelRef& ref) const {
    auto it = binaries.find(ref.binary_hash);
    if (it == binaries.end()) return false;
    const auto& names = it->second.entrypoints;
    return std::find(names.begin(), names.end(), ref.name) != names.end();
}

const KernelBinaryRecord& Catalog::at(uint64_t hash) const {
    auto it = binaries.find(hash);
    FOUNDRY_CHECK(it != binaries.end(), Errc::archive_corruption,
                  "catalog has no binary " + to_hex(hash));
    return it->second;
}

std::vector<uint8_t> serialize_catalog(const Catalog& catalog) {
    ByteWriter w;
    w.bytes(kCatalogMagic, 4);
    w.u16(kCatalogVersion);
    w.u8(kContentHashAlgorithm);
    w.u32(static_cast<uint32_t>(catalog.binaries.size()));
    for (const auto& [hash, record] : catalog.binaries) {
        w.u64(hash);
        w.u8(static_cast<uint8_t>(record.variant));
        uint8_t flags = 0;
        if (record.needs_device_init) flags |= kFlagNeedsDeviceInit;
        if (record.is_stub) flags |= kFlagStub;
        if (record.is_comm_real) flags |= kFlagCommReal;
        w.u8(flags);
        w.u32(static_cast<uint32_t>(record.load_options.size()));
        w.bytes(record.load_options);
        w.u32(static_cast<uint32_t>(record.entrypoints.size()));
        for (size_t i = 0; i < record.entrypoints.size(); ++i) {
            w.str(record.entrypoints[i]);
            const FuncAttrs& attrs = record.entrypoint_attrs[i];
            w.i32(attrs.max_dynamic_shared_size_bytes);
            w.i32(attrs.preferred_shared_memory_carveout);
            w.i32(attrs.cluster_scheduling_policy_preference);
            w.i32(attrs.required_cluster_width);
            w.i32(attrs.required_cluster_height);
            w.i32(attrs.required_cluster_depth);
        }
    }
    return w.take();
}

Catalog parse_catalog(std::span<const uint8_t> bytes) {
    ByteReader r(bytes, Errc::archive_corruption);
    r.expect_magic(kCatalogMagic);
    const uint16_t version = r.u16();
    FOUNDRY_CHECK(version == kCatalogVersion, Errc::archive_corruption,
                  "unsupported catalog version " + std::to_string(version));
    const uint8_t algorithm = r.u8();
    FOUNDRY_CHECK(algorithm == kContentHashAlgorithm, Errc::archive_corruption,
                  "archive uses hash algorithm " + std::to_string(algorithm) +
                      ", this build implements " + std::to_string(kContentHashAlgorithm));

    Catalog catalog;
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        KernelBinaryRecord record;
        record.hash = r.u64();
        record.variant = static_cast<LoadVariant>(r.u8());
        const uint8_t flags = r.u8();
        record.needs_device_init = (flags & kFlagNeedsDeviceInit) != 0;
        record.is_stub = (flags & kFlagStub) != 0;
        record.is_comm_real = (flags & kFlagCommReal) != 0;
        const uint32_t options_size = r.u32();
        record.load_options = r.bytes(options_size);
        const uint32_t entrypoints = r.u32();
        for (uint32_t j = 0; j < entrypoints; ++j) {
            record.entrypoints.push_back(r.str());
            FuncAttrs attrs;
            attrs.max_dynamic_shared_size_bytes = r.i32();
            attrs.preferred_shared_memory_carveout = r.i32();
            attrs.cluster_scheduling_policy_preference = r.i32();
            attrs.required_cluster_width = r.i32();
            attrs.required_cluster_height = r.i32();
            attrs.required_cluster_depth = r.i32();
            record.entrypoint_attrs.push_back(attrs);
        }
        const uint64_t hash = record.hash;
        catalog.binaries.emplace(hash, std::move(record));
    }
    FOUNDRY_CHECK(r.done(), Errc::archive_corruption, "trailing bytes in catalog");
    return catalog;
}

// --- SAVE-side interception ----------------------------------------------------

ModuleHandle SaveInterceptor::intercept_load(std::span<const uint8_t> payload, LoadVariant variant,
                                             std::span<const uint8_t> options) {
    // Parse first so malformed payloads never reach the catalog.
    KernelImage image = parse_kernel_image(payload);
    const uint64_t hash = crc64(payload);

    if (!recorded_.contains(hash)) {
        KernelBinaryRecord record;
        record.hash = hash;
        record.variant = variant;
        record.load_options.assign(options.begin(), options.end());
        record.needs_device_init = image.requires_device_init;
        for (const auto& entry : image.entrypoints) {
            record.entrypoints.push_back(entry.name);
            record.entrypoint_attrs.push_back(entry.attrs);
        }
        recorded_.emplace(hash, std::move(record));
        payloads_.emplace(hash, std::vector<uint8_t>(payload.begin(), payload.end()));
    }
    return ctx_.load_module(payload, variant, options);
}

std::vector<uint8_t> SaveInterceptor::prelink(const std::vector<std::vector<uint8_t>>& segments) {
    prelink_calls_ += 1;
    linked_segments_ += segments.size();
    return link_segments(segments);
}

KernelBinaryRecord& SaveInterceptor::record_for(uint64_t hash, const std::string& what) {
    auto it = recorded_.find(hash);
    FOUNDRY_CHECK(it != recorded_.end(), Errc::invalid_argument,
                  what + ": no recorded binary " + to_hex(hash));
    return it->second;
}

void SaveInterceptor::mark_device_init(uint64_t hash) {
    record_for(hash, "mark_device_init").needs_device_init = true;
}

void SaveInterceptor::mark_stub(uint64_t hash) {
    record_for(hash, "mark_stub").is_stub = true;
}

void SaveInterceptor::mark_comm_real(uint64_t hash) {
    record_for(hash, "mark_comm_real").is_comm_real = true;
}

Catalog SaveInterceptor::finalize(const std::vector<CapturedGraph>& graphs,
                                  std::span<const uint64_t> extra_keep) const {
    std::unordered_set<uint64_t> keep(extra_keep.begin(), extra_keep.end());
    for (const auto& graph : graphs) {
        for (const auto& node : graph.nodes) {
            if (node.type != NodeType::Kernel) continue;
            const KernelRef& ref = node.kernel_params().kernel;
            auto it = recorded_.find(ref.binary_hash);
            FOUNDRY_CHECK(it != recorded_.end(), Errc::unresolved_kernel,
                          "graph " + std::to_string(graph.label) +
                              " references unrecorded binary for " + ref.describe());
            const auto& names = it->second.entrypoints;
            FOUNDRY_CHECK(std::find(names.begin(), names.end(), ref.name) != names.end(),
                          Errc::unresolved_kernel,
                          "graph " + std::to_string(graph.label) + " references " +
                              ref.describe() + " missing from its binary");
            keep.insert(ref.binary_hash);
        }
    }

    Catalog catalog;
    for (uint64_t hash : keep) {
        auto it = recorded_.find(hash);
        FOUNDRY_CHECK(it != recorded_.end(), Errc::invalid_argument,
                      "kept hash " + to_hex(hash) + " was never recorded");
        catalog.binaries.emplace(hash, it->second);
    }
    return catalog;
}

const std::vector<uint8_t>& SaveInterceptor::payload(uint64_t hash) const {
    auto it = payloads_.find(hash);
    FOUNDRY_CHECK(it != payloads_.end(), Errc::invalid_argument,
                  "no payload recorded for " + to_hex(hash));
    return it->second;
}

// --- LOAD-side restore ----------------------------------------------------------

const ResolutionTable::Entry& ResolutionTable::resolve(const KernelRef& ref) const {
    auto it = entries.find(ref);
    FOUNDRY_CHECK(it != entries.end(), Errc::unresolved_kernel, ref.describe());
    return it->second;
}

ResolutionTable restore_binaries(DeviceContext& ctx, const Catalog& catalog,
                                 const PayloadFetch& fetch, bool device_init) {
    ResolutionTable table;
    for (const auto& [hash, record] : catalog.binaries) {
        bool already_present = !record.entrypoints.empty();
        for (const auto& name : record.entrypoints) {
            if (!ctx.kernel_resolvable(KernelRef{hash, name})) {
                already_present = false;
                break;
            }
        }
        if (!already_present) {
            std::vector<uint8_t> payload = fetch(hash);
            FOUNDRY_CHECK(crc64(payload) == hash, Errc::archive_corruption,
                          "binary " + to_hex(hash) + " content does not match its hash");
            const ModuleHandle module = ctx.load_module(payload, record.variant,
                                                        record.load_options);
            if (record.needs_device_init && device_init) {
                ctx.run_device_init(module);
            }
        }
        for (uint32_t i = 0; i < record.entrypoints.size(); ++i) {
            table.entries[KernelRef{hash, record.entrypoints[i]}] =
                ResolutionTable::Entry{hash, i};
        }
    }
    return table;
}

}  // namespace foundry
