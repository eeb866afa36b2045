#include "foundry/workload_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "foundry/det_alloc.hpp"
#include "foundry/hash.hpp"
#include "foundry/io.hpp"

namespace foundry {

namespace {

constexpr uint64_t kProbeBytes = 64ull << 10;

constexpr CollectiveKindInfo kCollectiveKinds[] = {
    {"allreduce", "stub_allreduce", "nccl_ring_allreduce"},
    {"alltoall", "stub_alltoall", "nvshmem_alltoall_ll"},
};

const char* kSlotNames[] = {
    "fused_qkv_gemm", "paged_attn_decode", "silu_mul_gemm", "rmsnorm_residual",
    "moe_group_gemm", "rope_embed",        "logits_gemm",   "topk_softmax",
};

std::string kernel_name(uint32_t layer, uint32_t slot, uint32_t variant) {
    const char* base = kSlotNames[slot % (sizeof(kSlotNames) / sizeof(kSlotNames[0]))];
    return std::string(base) + "_l" + std::to_string(layer) + "_v" + std::to_string(variant);
}

// Address fields inside every generated argument buffer. All of them are
// populated from allocator grants at capture time; the per-kernel hidden
// subset is what the simulated hardware dereferences.
constexpr uint32_t kAddrFieldOffsets[] = {8, 16, 24, 32, 40};
constexpr uint32_t kArgHeaderBytes = 48;

std::vector<uint32_t> pick_hidden_offsets(const WorkloadSpec& spec, uint32_t layer,
                                          uint32_t slot) {
    std::vector<uint32_t> candidates(std::begin(kAddrFieldOffsets), std::end(kAddrFieldOffsets));
    SplitMix64 rng(mix_seed(spec.seed, 0x48494444ull + layer * 131 + slot));
    for (size_t i = candidates.size() - 1; i > 0; --i) {
        std::swap(candidates[i], candidates[rng.below(i + 1)]);
    }
    const auto want = static_cast<size_t>(std::lround(spec.hidden_offset_density * 5.0));
    const size_t count = std::clamp<size_t>(want, 1, candidates.size());
    candidates.resize(count);
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

uint32_t arg_buffer_size(uint32_t slot) { return 192 + 32 * slot; }

KernelNodeAttrs variant_attrs(uint32_t variant) {
    KernelNodeAttrs attrs;
    attrs.cluster_dim = Dim3{2 + (variant % 8), 1 + (variant / 8), 1};
    attrs.cluster_scheduling_policy_preference = static_cast<int32_t>(variant % 2);
    return attrs;
}

FuncAttrs variant_func_attrs(uint32_t slot, uint32_t variant) {
    FuncAttrs attrs;
    attrs.max_dynamic_shared_size_bytes =
        static_cast<int32_t>(32768 + 4096 * slot + 1024 * variant);
    return attrs;
}

std::vector<uint32_t> effective_thresholds(const WorkloadSpec& spec) {
    std::vector<uint32_t> thresholds = spec.thresholds;
    if (spec.batch1_special && spec.batch_max >= 2) {
        thresholds.push_back(2);
    }
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    return thresholds;
}

uint64_t round_up(uint64_t value, uint64_t granule) {
    return (value + granule - 1) / granule * granule;
}

}  // namespace

// --- spec ---------------------------------------------------------------------

void WorkloadSpec::validate() const {
    FOUNDRY_CHECK(batch_max >= 1, Errc::spec_violation, "batch_max must be >= 1");
    FOUNDRY_CHECK(layers >= 1, Errc::spec_violation, "layers must be >= 1");
    FOUNDRY_CHECK(kernels_per_layer >= 1 && kernels_per_layer <= 8, Errc::spec_violation,
                  "kernels_per_layer must be in [1, 8]");
    for (size_t i = 0; i < thresholds.size(); ++i) {
        FOUNDRY_CHECK(thresholds[i] >= 2 && thresholds[i] <= batch_max, Errc::spec_violation,
                      "thresholds must lie in [2, batch_max]");
        FOUNDRY_CHECK(i == 0 || thresholds[i] > thresholds[i - 1], Errc::spec_violation,
                      "thresholds must be strictly increasing");
    }
    FOUNDRY_CHECK(hidden_offset_density > 0.0 && hidden_offset_density <= 1.0,
                  Errc::spec_violation, "hidden_offset_density must be in (0, 1]");
    if (comm == CommMode::spmd) {
        FOUNDRY_CHECK(collectives_per_layer >= 1, Errc::spec_violation,
                      "spmd comm requires collectives_per_layer >= 1");
        FOUNDRY_CHECK(io_bytes >= 256ull * layers * collectives_per_layer,
                      Errc::spec_violation,
                      "comm staging buffer too small for the collective offsets");
        // Stage-divergent (pipeline-parallel style) workloads cannot be
        // captured on a single rank; the uniformity flag is the contract.
        FOUNDRY_CHECK(spmd_uniform, Errc::spec_violation,
                      "single-rank capture requires rank-uniform execution (spmd_uniform)");
    } else {
        FOUNDRY_CHECK(collectives_per_layer == 0, Errc::spec_violation,
                      "collectives_per_layer requires comm = spmd");
        FOUNDRY_CHECK(!emit_raw_collective, Errc::spec_violation,
                      "emit_raw_collective requires comm = spmd");
    }
    FOUNDRY_CHECK(io_bytes >= 64ull * batch_max, Errc::spec_violation,
                  "io_bytes must cover 64 bytes per batch element");
    FOUNDRY_CHECK(kv_cache_bytes >= 4096ull * kernels_per_layer, Errc::spec_violation,
                  "kv_cache_bytes too small for per-slot interior pointers");
    FOUNDRY_CHECK(scratch_bytes_per_batch >= 64, Errc::spec_violation,
                  "scratch_bytes_per_batch must be >= 64");
}

uint32_t WorkloadSpec::variant_for_batch(uint32_t batch) const {
    uint32_t variant = 0;
    for (uint32_t threshold : effective_thresholds(*this)) {
        if (batch >= threshold) ++variant;
    }
    return variant;
}

std::string WorkloadSpec::canonical_text() const {
    std::ostringstream out;
    out << "seed = " << seed << "\n";
    out << "batch_max = " << batch_max << "\n";
    out << "layers = " << layers << "\n";
    out << "kernels_per_layer = " << kernels_per_layer << "\n";
    out << "thresholds = ";
    for (size_t i = 0; i < thresholds.size(); ++i) {
        if (i) out << ",";
        out << thresholds[i];
    }
    out << "\n";
    char density[32];
    std::snprintf(density, sizeof(density), "%.6f", hidden_offset_density);
    out << "hidden_offset_density = " << density << "\n";
    out << "comm = " << (comm == CommMode::spmd ? "spmd" : "none") << "\n";
    out << "collectives_per_layer = " << collectives_per_layer << "\n";
    out << "kv_cache_bytes = " << kv_cache_bytes << "\n";
    out << "weights_bytes_per_layer = " << weights_bytes_per_layer << "\n";
    out << "io_bytes = " << io_bytes << "\n";
    out << "scratch_bytes_per_batch = " << scratch_bytes_per_batch << "\n";
    out << "batch1_special = " << (batch1_special ? 1 : 0) << "\n";
    out << "spmd_uniform = " << (spmd_uniform ? 1 : 0) << "\n";
    out << "emit_raw_collective = " << (emit_raw_collective ? 1 : 0) << "\n";
    return out.str();
}

uint64_t WorkloadSpec::digest() const {
    const std::string text = canonical_text();
    return crc64(text.data(), text.size());
}

WorkloadSpec WorkloadSpec::parse_text(const std::string& text) {
    WorkloadSpec spec;
    spec.thresholds.clear();
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto comment = line.find('#');
        if (comment != std::string::npos) line.resize(comment);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
            FOUNDRY_CHECK(blank, Errc::spec_violation, "bad spec line: " + line);
            continue;
        }
        auto trim = [](std::string s) {
            const auto begin = s.find_first_not_of(" \t\r");
            const auto end = s.find_last_not_of(" \t\r");
            return begin == std::string::npos ? std::string() : s.substr(begin, end - begin + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "seed") spec.seed = std::stoull(value);
            else if (key == "batch_max") spec.batch_max = static_cast<uint32_t>(std::stoul(value));
            else if (key == "layers") spec.layers = static_cast<uint32_t>(std::stoul(value));
            else if (key == "kernels_per_layer")
                spec.kernels_per_layer = static_cast<uint32_t>(std::stoul(value));
            else if (key == "thresholds") {
                spec.thresholds.clear();
                std::istringstream items(value);
                std::string item;
                while (std::getline(items, item, ',')) {
                    if (!item.empty()) {
                        spec.thresholds.push_back(static_cast<uint32_t>(std::stoul(item)));
                    }
                }
            } else if (key == "hidden_offset_density")
                spec.hidden_offset_density = std::stod(value);
            else if (key == "comm") {
                if (value == "none") spec.comm = CommMode::none;
                else if (value == "spmd") spec.comm = CommMode::spmd;
                else throw Error(Errc::spec_violation, "comm must be none or spmd");
            } else if (key == "collectives_per_layer")
                spec.collectives_per_layer = static_cast<uint32_t>(std::stoul(value));
            else if (key == "kv_cache_bytes") spec.kv_cache_bytes = std::stoull(value);
            else if (key == "weights_bytes_per_layer")
                spec.weights_bytes_per_layer = std::stoull(value);
            else if (key == "io_bytes") spec.io_bytes = std::stoull(value);
            else if (key == "scratch_bytes_per_batch")
                spec.scratch_bytes_per_batch = std::stoull(value);
            else if (key == "batch1_special") spec.batch1_special = std::stoul(value) != 0;
            else if (key == "spmd_uniform") spec.spmd_uniform = std::stoul(value) != 0;
            else if (key == "emit_raw_collective")
                spec.emit_raw_collective = std::stoul(value) != 0;
            else
                throw Error(Errc::spec_violation, "unknown spec key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw Error(Errc::spec_violation, "bad value for '" + key + "': " + value);
        } catch (const std::out_of_range&) {
            throw Error(Errc::spec_violation, "value out of range for '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

std::vector<std::string> preset_names() {
    return {"micro", "dense-small", "moe-spmd"};
}

WorkloadSpec preset(const std::string& name) {
    WorkloadSpec spec;
    if (name == "micro") {
        spec.seed = 7;
        spec.batch_max = 8;
        spec.layers = 2;
        spec.kernels_per_layer = 3;
        spec.thresholds = {3, 5};
        spec.hidden_offset_density = 1.0;
        spec.kv_cache_bytes = 1ull << 20;
        spec.weights_bytes_per_layer = 128ull << 10;
        spec.io_bytes = 64ull << 10;
        spec.scratch_bytes_per_batch = 16ull << 10;
    } else if (name == "dense-small") {
        spec.seed = 11;
        spec.batch_max = 512;
        spec.layers = 25;
        spec.kernels_per_layer = 4;
        spec.thresholds = {8,   16,  24,  32,  48,  64,  80,  96,  112, 128,
                           160, 192, 224, 256, 288, 320, 384, 448, 480};
        spec.hidden_offset_density = 0.6;
        spec.kv_cache_bytes = 16ull << 20;
        spec.weights_bytes_per_layer = 256ull << 10;
        spec.io_bytes = 64ull << 10;
        spec.scratch_bytes_per_batch = 4096;
    } else if (name == "moe-spmd") {
        spec.seed = 13;
        spec.batch_max = 512;
        spec.layers = 12;
        spec.kernels_per_layer = 8;
        spec.thresholds = {16, 32, 48, 64, 96, 128, 160, 192, 224, 256, 320, 384, 448, 496};
        spec.hidden_offset_density = 0.5;
        spec.comm = CommMode::spmd;
        spec.collectives_per_layer = 2;
        spec.kv_cache_bytes = 16ull << 20;
        spec.weights_bytes_per_layer = 256ull << 10;
        spec.io_bytes = 64ull << 10;
        spec.scratch_bytes_per_batch = 8192;
    } else {
        throw Error(Errc::invalid_argument, "unknown preset '" + name + "'");
    }
    spec.validate();
    return spec;
}

WorkloadSpec resolve_workload(const std::string& name_or_path) {
    for (const auto& name : preset_names()) {
        if (name == name_or_path) return preset(name);
    }
    const auto bytes = read_file(name_or_path);
    return WorkloadSpec::parse_text(std::string(bytes.begin(), bytes.end()));
}

std::span<const CollectiveKindInfo> collective_kinds() {
    return kCollectiveKinds;
}

const CollectiveKindInfo& collective_kind(std::string_view kind) {
    for (const auto& info : kCollectiveKinds) {
        if (info.kind == kind) return info;
    }
    throw Error(Errc::invalid_argument, "unknown collective kind '" + std::string(kind) + "'");
}

// --- expected outcome -----------------------------------------------------------

ExpectedOutcome expected_outcome(const WorkloadSpec& spec) {
    spec.validate();
    ExpectedOutcome out;

    std::vector<uint32_t> boundaries = effective_thresholds(spec);
    boundaries.insert(boundaries.begin(), 1);
    boundaries.push_back(spec.batch_max + 1);
    for (size_t i = 0; i + 1 < boundaries.size(); ++i) {
        out.group_sizes.push_back(boundaries[i + 1] - boundaries[i]);
    }
    out.group_count = static_cast<uint32_t>(out.group_sizes.size());

    out.nodes_per_graph = 2 + spec.layers * (spec.kernels_per_layer + spec.collectives_per_layer);

    const uint64_t granule = RegionConfig{}.granularity;
    uint64_t offset = 0;
    offset += spec.layers * round_up(spec.weights_bytes_per_layer, granule);
    offset += round_up(spec.kv_cache_bytes, granule);
    offset += round_up(spec.io_bytes, granule);
    if (spec.comm == CommMode::spmd) {
        offset += round_up(spec.io_bytes, granule);  // comm staging buffer
    }
    offset += round_up(kProbeBytes, granule);  // profiling probe (freed, never reused)
    for (uint32_t b = 1; b <= spec.batch_max; ++b) {
        offset += round_up(spec.scratch_bytes_per_batch * b, granule);
    }
    out.final_offset = offset;
    return out;
}

// --- generation -------------------------------------------------------------------

uint64_t GeneratedWorkload::scratch_bytes_for(uint32_t batch) const {
    return spec.scratch_bytes_per_batch * batch;
}

std::vector<InitStep> build_init_plan(const WorkloadSpec& spec) {
    std::vector<InitStep> plan;
    uint32_t slot = 0;
    for (uint32_t l = 0; l < spec.layers; ++l) {
        plan.push_back({InitStep::Kind::alloc, slot++, "weights_l" + std::to_string(l),
                        spec.weights_bytes_per_layer});
    }
    plan.push_back({InitStep::Kind::alloc, slot++, "kv_pool", spec.kv_cache_bytes});
    plan.push_back({InitStep::Kind::alloc, slot++, "io", spec.io_bytes});
    if (spec.comm == CommMode::spmd) {
        plan.push_back({InitStep::Kind::alloc, slot++, "comm_staging", spec.io_bytes});
    }
    const uint32_t probe_slot = slot;
    plan.push_back({InitStep::Kind::alloc, slot++, "profile_probe", kProbeBytes});
    plan.push_back({InitStep::Kind::release, probe_slot, "profile_probe", kProbeBytes});
    return plan;
}

GeneratedWorkload generate(const WorkloadSpec& spec) {
    spec.validate();

    GeneratedWorkload out;
    out.spec = spec;
    out.expected = expected_outcome(spec);
    const uint32_t variants = out.expected.group_count;

    // One image per layer holding every variant of its kernels. Layer 0 is
    // delivered as two relocatable segments so SAVE exercises pre-linking.
    for (uint32_t l = 0; l < spec.layers; ++l) {
        ImageToLoad image;
        const bool split = (l == 0 && spec.kernels_per_layer >= 2);
        const uint32_t parts = split ? 2 : 1;
        for (uint32_t part = 0; part < parts; ++part) {
            KernelImage segment;
            segment.relocatable = split;
            segment.link_tag = 1000 + l;
            for (uint32_t s = 0; s < spec.kernels_per_layer; ++s) {
                if (split && s % 2 != part) continue;
                for (uint32_t v = 0; v < variants; ++v) {
                    KernelEntry entry;
                    entry.name = kernel_name(l, s, v);
                    entry.arg_buffer_size = arg_buffer_size(s);
                    entry.hidden_offsets = pick_hidden_offsets(spec, l, s);
                    entry.attrs = variant_func_attrs(s, v);
                    segment.entrypoints.push_back(std::move(entry));
                }
            }
            image.segments.push_back(encode_kernel_image(segment));
        }
        if (l == 1) {
            image.variant = LoadVariant::with_options;
            image.options = {0x4F, 0x50, 0x54, 0x01};
        }
        out.images.push_back(std::move(image));
    }

    if (spec.comm == CommMode::spmd) {
        {
            KernelImage stub;
            stub.link_tag = 2000;
            for (const auto& kind : collective_kinds()) {
                KernelEntry entry;
                entry.name = std::string(kind.stub_name);
                entry.arg_buffer_size = 32;
                entry.hidden_offsets = {16};
                stub.entrypoints.push_back(std::move(entry));
            }
            ImageToLoad image;
            image.segments.push_back(encode_kernel_image(stub));
            image.comm_stub = true;
            out.comm_stub_image = static_cast<uint32_t>(out.images.size());
            out.images.push_back(std::move(image));
        }
        {
            KernelImage real;
            real.link_tag = 2001;
            real.requires_device_init = true;  // device-side comm state, init after load
            for (const auto& kind : collective_kinds()) {
                KernelEntry entry;
                entry.name = std::string(kind.real_name);
                entry.arg_buffer_size = 32;
                entry.hidden_offsets = {16};
                real.entrypoints.push_back(std::move(entry));
            }
            ImageToLoad image;
            image.segments.push_back(encode_kernel_image(real));
            image.variant = LoadVariant::file;
            image.comm_real = true;
            out.comm_real_image = static_cast<uint32_t>(out.images.size());
            out.images.push_back(std::move(image));
        }
    }

    {
        // Loaded during warmup, referenced by nothing; SAVE must prune it.
        KernelImage decoy;
        decoy.link_tag = 3000;
        KernelEntry entry;
        entry.name = "warmup_probe_kernel";
        entry.arg_buffer_size = 64;
        entry.hidden_offsets = {8};
        decoy.entrypoints.push_back(std::move(entry));
        ImageToLoad image;
        image.segments.push_back(encode_kernel_image(decoy));
        image.decoy = true;
        out.images.push_back(std::move(image));
    }

    out.init_plan = build_init_plan(spec);
    const uint32_t first_weights_slot = 0;
    const uint32_t kv_slot = spec.layers;
    const uint32_t io_slot = spec.layers + 1;
    const uint32_t comm_slot = spec.layers + 2;  // meaningful under spmd only

    // Per-batch capture sequences.
    for (uint32_t b = 1; b <= spec.batch_max; ++b) {
        const uint32_t v = spec.variant_for_batch(b);
        std::vector<PlannedOp> ops;

        {
            PlannedMemset zero;
            zero.dst = AddrSource{AddrSource::Kind::init_slot, io_slot, 0};
            zero.value = 0;
            zero.length = 64ull * b;
            ops.push_back(PlannedOp{zero, {}});
        }

        std::vector<uint32_t> tail = {0};
        for (uint32_t l = 0; l < spec.layers; ++l) {
            const uint32_t layer_base = static_cast<uint32_t>(ops.size());
            for (uint32_t s = 0; s < spec.kernels_per_layer; ++s) {
                PlannedKernel kernel;
                kernel.image = l;
                kernel.name = kernel_name(l, s, v);
                kernel.grid = Dim3{1 + (s % 4), (b + 7) / 8, 1};
                kernel.block = Dim3{static_cast<uint32_t>(128 * (1 + s % 3)), 1, 1};
                kernel.shared_mem_bytes = 1024 * (1 + s % 4) + 2048 * (v % 3);
                if (s == 0) {
                    kernel.attrs = variant_attrs(v);
                }
                kernel.arg_template.assign(arg_buffer_size(s), 0);
                ByteWriter batch_field;
                batch_field.u64(b);
                std::copy(batch_field.data().begin(), batch_field.data().end(),
                          kernel.arg_template.begin());
                SplitMix64 filler(mix_seed(spec.seed, 0x46494C4Cull + l * 131 + s));
                for (size_t i = kArgHeaderBytes; i < kernel.arg_template.size(); ++i) {
                    kernel.arg_template[i] = static_cast<uint8_t>(filler.next() & 0xFF);
                }
                kernel.addr_writes = {
                    {kAddrFieldOffsets[0], {AddrSource::Kind::init_slot, first_weights_slot + l, 0}},
                    {kAddrFieldOffsets[1], {AddrSource::Kind::init_slot, io_slot, 0}},
                    {kAddrFieldOffsets[2], {AddrSource::Kind::init_slot, kv_slot, 0}},
                    {kAddrFieldOffsets[3], {AddrSource::Kind::scratch, 0, 0}},
                    {kAddrFieldOffsets[4], {AddrSource::Kind::init_slot, kv_slot, 4096ull * s}},
                };
                PlannedOp op;
                op.op = std::move(kernel);
                op.deps = (s == 0) ? tail : std::vector<uint32_t>{layer_base};
                ops.push_back(std::move(op));
            }
            tail.clear();
            for (uint32_t s = 0; s < spec.kernels_per_layer; ++s) {
                tail.push_back(layer_base + s);
            }
            for (uint32_t c = 0; c < spec.collectives_per_layer; ++c) {
                const auto& kind = collective_kinds()[c % collective_kinds().size()];
                PlannedCollective coll;
                coll.kind = std::string(kind.kind);
                coll.buffer = AddrSource{AddrSource::Kind::init_slot, comm_slot,
                                         256ull * (l * spec.collectives_per_layer + c)};
                coll.payload_bytes = 32ull * b + 16ull * c;
                coll.raw = spec.emit_raw_collective && b == 1 && l == 0 && c == 0;
                PlannedOp op;
                op.op = std::move(coll);
                op.deps = tail;
                ops.push_back(op);
                tail = {static_cast<uint32_t>(ops.size()) - 1};
            }
        }

        {
            PlannedMemcpy copy_out;
            copy_out.src = AddrSource{AddrSource::Kind::scratch, 0, 0};
            copy_out.dst = AddrSource{AddrSource::Kind::init_slot, io_slot, 0};
            copy_out.length = 64ull * b;
            PlannedOp op;
            op.op = copy_out;
            op.deps = tail;
            ops.push_back(std::move(op));
        }

        out.batches.push_back(std::move(ops));
    }
    return out;
}

}  // namespace foundry
