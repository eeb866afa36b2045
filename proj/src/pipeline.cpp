#include "foundry/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "foundry/hash.hpp"
#include "foundry/io.hpp"

namespace foundry {

namespace fs = std::filesystem;
using nlohmann::json;

std::filesystem::path ArchivePaths::binary(uint64_t hash) const {
    return binaries() / (to_hex(hash) + ".bin");
}

// --- manifest -------------------------------------------------------------------

namespace {

json grouping_to_json(const GroupingManifest& grouping) {
    json groups = json::array();
    for (const auto& group : grouping.groups) {
        json locators = json::array();
        for (const auto& loc : group.locators) {
            locators.push_back(json::array({loc.label, loc.offset, loc.length, loc.checksum}));
        }
        groups.push_back(json{
            {"key", group.key.hex()},
            {"representative", group.representative},
            {"members", group.members},
            {"locators", std::move(locators)},
        });
    }
    return json{
        {"total", grouping.total_graphs},
        {"templates", grouping.template_count},
        {"groups", std::move(groups)},
    };
}

TopologyKey key_from_hex(const std::string& hex) {
    FOUNDRY_CHECK(hex.size() == 32, Errc::archive_corruption, "bad topology key literal");
    TopologyKey key;
    key.digest.hi = parse_hex_u64(hex.substr(0, 16));
    key.digest.lo = parse_hex_u64(hex.substr(16));
    return key;
}

GroupingManifest grouping_from_json(const json& obj) {
    GroupingManifest grouping;
    grouping.total_graphs = obj.at("total").get<uint32_t>();
    grouping.template_count = obj.at("templates").get<uint32_t>();
    for (const auto& group_json : obj.at("groups")) {
        TemplateGroup group;
        group.key = key_from_hex(group_json.at("key").get<std::string>());
        group.representative = group_json.at("representative").get<uint32_t>();
        group.members = group_json.at("members").get<std::vector<uint32_t>>();
        for (const auto& loc_json : group_json.at("locators")) {
            GraphLocator loc;
            loc.label = loc_json.at(0).get<uint32_t>();
            loc.offset = loc_json.at(1).get<uint64_t>();
            loc.length = loc_json.at(2).get<uint64_t>();
            loc.checksum = loc_json.at(3).get<uint64_t>();
            group.locators.push_back(loc);
        }
        grouping.groups.push_back(std::move(group));
    }
    return grouping;
}

}  // namespace

std::string serialize_manifest(const Manifest& manifest) {
    json root{
        {"format_version", manifest.format_version},
        {"hash_algorithm", manifest.hash_algorithm},
        {"workload_digest", manifest.workload_digest},
        {"workload", manifest.workload_text},
        {"allocator",
         {{"base", manifest.allocator.base},
          {"capacity", manifest.allocator.capacity},
          {"granularity", manifest.allocator.granularity},
          {"final_offset", manifest.final_offset}}},
        {"kv_cache_bytes", manifest.kv_cache_bytes},
        {"comm",
         {{"world_placeholder", manifest.comm_world_placeholder},
          {"real_binary_hash", manifest.comm_real_hash}}},
        {"grouping", grouping_to_json(manifest.grouping)},
        {"memlayout", manifest.memlayout_ref},
        {"catalog", manifest.catalog_ref},
        {"patch_table", manifest.patch_table_ref},
        {"files", manifest.file_digests},
    };
    return root.dump(2) + "\n";
}

Manifest parse_manifest(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::archive_corruption, std::string("manifest is not valid JSON: ") + e.what());
    }
    try {
        Manifest m;
        m.format_version = root.at("format_version").get<uint32_t>();
        FOUNDRY_CHECK(m.format_version == Manifest::kFormatVersion, Errc::archive_corruption,
                      "unsupported archive format version " + std::to_string(m.format_version));
        m.hash_algorithm = root.at("hash_algorithm").get<uint8_t>();
        FOUNDRY_CHECK(m.hash_algorithm == kContentHashAlgorithm, Errc::archive_corruption,
                      "archive pins hash algorithm " + std::to_string(m.hash_algorithm) +
                          ", this build implements " + std::to_string(kContentHashAlgorithm));
        m.workload_digest = root.at("workload_digest").get<uint64_t>();
        m.workload_text = root.at("workload").get<std::string>();
        const json& alloc = root.at("allocator");
        m.allocator.base = alloc.at("base").get<uint64_t>();
        m.allocator.capacity = alloc.at("capacity").get<uint64_t>();
        m.allocator.granularity = alloc.at("granularity").get<uint64_t>();
        m.final_offset = alloc.at("final_offset").get<uint64_t>();
        m.kv_cache_bytes = root.at("kv_cache_bytes").get<uint64_t>();
        m.comm_world_placeholder = root.at("comm").at("world_placeholder").get<uint64_t>();
        m.comm_real_hash = root.at("comm").at("real_binary_hash").get<uint64_t>();
        m.grouping = grouping_from_json(root.at("grouping"));
        m.memlayout_ref = root.at("memlayout").get<std::string>();
        m.catalog_ref = root.at("catalog").get<std::string>();
        m.patch_table_ref = root.at("patch_table").get<std::string>();
        m.file_digests = root.at("files").get<std::map<std::string, uint64_t>>();
        return m;
    } catch (const json::exception& e) {
        throw Error(Errc::archive_corruption, std::string("manifest field error: ") + e.what());
    }
}

// --- save ------------------------------------------------------------------------

namespace {

[[noreturn]] void rethrow_with_step(const char* step) {
    try {
        throw;
    } catch (const Error& e) {
        throw Error(e.code(), std::string(step) + ": " + e.detail());
    }
}

uint64_t resolve_source(const AddrSource& src, const std::vector<uint64_t>& slot_addr,
                        uint64_t scratch_addr) {
    switch (src.kind) {
        case AddrSource::Kind::init_slot:
            FOUNDRY_CHECK(src.slot < slot_addr.size(), Errc::invalid_argument,
                          "address source references missing init slot");
            return slot_addr[src.slot] + src.delta;
        case AddrSource::Kind::scratch:
            return scratch_addr + src.delta;
    }
    throw Error(Errc::invalid_argument, "bad address source");
}

std::vector<WorkOp> materialize_ops(uint32_t batch, const std::vector<PlannedOp>& ops,
                                    const std::vector<uint64_t>& image_hash,
                                    const std::vector<uint64_t>& slot_addr,
                                    uint64_t scratch_addr) {
    std::vector<WorkOp> work;
    work.reserve(ops.size());
    for (size_t i = 0; i < ops.size(); ++i) {
        const PlannedOp& planned = ops[i];
        WorkOp op;
        op.deps = planned.deps;
        if (const auto* kernel = std::get_if<PlannedKernel>(&planned.op)) {
            WorkKernelLaunch launch;
            launch.name = kernel->name;
            FOUNDRY_CHECK(kernel->image < image_hash.size(), Errc::invalid_argument,
                          "planned kernel references missing image");
            launch.binary_hash = image_hash[kernel->image];
            launch.grid = kernel->grid;
            launch.block = kernel->block;
            launch.shared_mem_bytes = kernel->shared_mem_bytes;
            launch.attrs = kernel->attrs;
            launch.arg_buffer = kernel->arg_template;
            for (const auto& write : kernel->addr_writes) {
                const uint64_t addr = resolve_source(write.source, slot_addr, scratch_addr);
                FOUNDRY_CHECK(write.buffer_offset + 8 <= launch.arg_buffer.size(),
                              Errc::invalid_argument, "address write outside argument buffer");
                std::memcpy(launch.arg_buffer.data() + write.buffer_offset, &addr, sizeof(addr));
            }
            op.op = std::move(launch);
        } else if (const auto* copy = std::get_if<PlannedMemcpy>(&planned.op)) {
            WorkMemcpy m;
            m.src = resolve_source(copy->src, slot_addr, scratch_addr);
            m.dst = resolve_source(copy->dst, slot_addr, scratch_addr);
            m.length = copy->length;
            op.op = m;
        } else if (const auto* set = std::get_if<PlannedMemset>(&planned.op)) {
            WorkMemset m;
            m.dst = resolve_source(set->dst, slot_addr, scratch_addr);
            m.value = set->value;
            m.length = set->length;
            op.op = m;
        } else {
            throw Error(Errc::unpatchable_comm,
                        "batch " + std::to_string(batch) + " op " + std::to_string(i) +
                            ": collective reached capture outside the comm stub layer");
        }
        work.push_back(std::move(op));
    }
    return work;
}

CounterSnapshot merge_counters(const CounterSnapshot& ctx, const CounterSnapshot& driver,
                               uint64_t prelink_calls, uint64_t linked_segments) {
    CounterSnapshot merged = ctx;
    merged.insert(driver.begin(), driver.end());
    merged["catalog.prelink_calls"] = prelink_calls;
    merged["catalog.linked_segments"] = linked_segments;
    return merged;
}

void run_init_plan(VirtualRegion& region, const std::vector<InitStep>& plan) {
    std::vector<uint64_t> slot_addr;
    for (const auto& step : plan) {
        if (step.kind == InitStep::Kind::alloc) {
            if (step.slot >= slot_addr.size()) slot_addr.resize(step.slot + 1, 0);
            slot_addr[step.slot] = region.allocate(step.size);
        } else {
            FOUNDRY_CHECK(step.slot < slot_addr.size(), Errc::invalid_argument,
                          "init plan releases an unknown slot");
            region.free(slot_addr[step.slot]);
        }
    }
}

}  // namespace

std::string traces_to_text(const std::map<uint32_t, LaunchTrace>& traces) {
    std::ostringstream out;
    for (const auto& [batch, trace] : traces) {
        out << "# batch " << batch << "\n" << trace.to_text();
    }
    return out.str();
}

SaveResult save(const WorkloadSpec& spec, const std::filesystem::path& out,
                const SaveOptions& options) {
    spec.validate();
    const GeneratedWorkload workload = generate(spec);

    if (fs::exists(out)) {
        FOUNDRY_CHECK(fs::is_directory(out) && fs::is_empty(out), Errc::invalid_argument,
                      "archive path " + out.string() + " exists and is not empty");
    }
    fs::create_directories(out);
    ArchivePaths paths{out};

    try {
        SimDriver driver;
        DeviceContext& ctx = driver.create_context();
        SaveInterceptor interceptor(ctx);

        std::vector<uint64_t> image_hash(workload.images.size(), 0);
        uint64_t stub_hash = 0;
        uint64_t real_hash = 0;
        try {
            for (size_t i = 0; i < workload.images.size(); ++i) {
                const ImageToLoad& image = workload.images[i];
                std::vector<uint8_t> payload = image.segments.size() > 1
                                                   ? interceptor.prelink(image.segments)
                                                   : image.segments.front();
                interceptor.intercept_load(payload, image.variant, image.options);
                image_hash[i] = crc64(payload);
            }
            if (workload.comm_stub_image) {
                stub_hash = image_hash[*workload.comm_stub_image];
                interceptor.mark_stub(stub_hash);
            }
            if (workload.comm_real_image) {
                real_hash = image_hash[*workload.comm_real_image];
                interceptor.mark_comm_real(real_hash);
                interceptor.mark_device_init(real_hash);
            }
        } catch (const Error&) {
            rethrow_with_step("binary interception");
        }

        RegionConfig config;
        if (options.base_address) config.base = *options.base_address;
        VirtualRegion region(ctx, config, Phase::save);

        std::vector<uint64_t> slot_addr;
        try {
            for (const auto& step : workload.init_plan) {
                if (step.kind == InitStep::Kind::alloc) {
                    if (step.slot >= slot_addr.size()) slot_addr.resize(step.slot + 1, 0);
                    slot_addr[step.slot] = region.allocate(step.size);
                } else {
                    region.free(slot_addr.at(step.slot));
                }
            }
        } catch (const Error&) {
            rethrow_with_step("init allocations");
        }

        region.begin_capture_window();
        std::vector<CapturedGraph> graphs;
        std::map<uint32_t, LaunchTrace> traces;
        PatchTable patch_table;
        try {
            for (uint32_t b = 1; b <= spec.batch_max; ++b) {
                const uint64_t scratch_addr = region.allocate(workload.scratch_bytes_for(b));
                std::vector<PlannedOp> ops = workload.batches[b - 1];
                std::vector<CommPatchEntry> entries;
                if (workload.comm_stub_image) {
                    entries = lower_collectives(ops, *workload.comm_stub_image, stub_hash);
                }
                const std::vector<WorkOp> work =
                    materialize_ops(b, ops, image_hash, slot_addr, scratch_addr);
                auto captured = ctx.stream_capture(b, work);
                // Self-replay right after capture: the reference trace LOAD
                // must match.
                const ExecHandle exec = ctx.instantiate(captured.handle);
                traces.emplace(b, ctx.replay(exec));
                graphs.push_back(std::move(captured.graph));
                if (!entries.empty()) {
                    patch_table.per_graph.emplace(b, std::move(entries));
                }
            }
        } catch (const Error&) {
            rethrow_with_step("graph capture");
        }
        const MemoryEventLog log = region.end_capture_window();

        GroupingManifest grouping;
        Catalog catalog;
        try {
            grouping = group_graphs(graphs);
            std::vector<uint64_t> keep;
            if (real_hash != 0) keep.push_back(real_hash);
            catalog = interceptor.finalize(graphs, keep);
        } catch (const Error&) {
            rethrow_with_step("grouping");
        }

        const std::vector<uint8_t> graphs_bin = serialize_graphs(graphs);
        attach_locators(grouping, parse_graph_locators(graphs_bin));

        Manifest manifest;
        manifest.workload_digest = spec.digest();
        manifest.workload_text = spec.canonical_text();
        manifest.allocator = config;
        manifest.final_offset = region.offset();
        manifest.kv_cache_bytes = spec.kv_cache_bytes;
        manifest.comm_real_hash = real_hash;
        manifest.grouping = std::move(grouping);

        const std::vector<uint8_t> memlayout_bin = serialize_event_log(log);
        const std::vector<uint8_t> catalog_bin = serialize_catalog(catalog);
        const std::vector<uint8_t> patch_bin = serialize_patch_table(patch_table);

        write_file(paths.graphs(), graphs_bin);
        write_file(paths.memlayout(), memlayout_bin);
        write_file(paths.catalog(), catalog_bin);
        write_file(paths.patch_table(), patch_bin);
        manifest.file_digests["graphs.bin"] = crc64(graphs_bin);
        manifest.file_digests["memlayout.bin"] = crc64(memlayout_bin);
        manifest.file_digests["catalog.bin"] = crc64(catalog_bin);
        manifest.file_digests["patch.bin"] = crc64(patch_bin);

        fs::create_directories(paths.binaries());
        for (const auto& [hash, record] : catalog.binaries) {
            const auto& payload = interceptor.payload(hash);
            write_file(paths.binary(hash), payload);
            manifest.file_digests["binaries/" + to_hex(hash) + ".bin"] = crc64(payload);
        }

        if (options.emit_json_graphs) {
            fs::create_directories(out / "graphs");
            for (const auto& graph : graphs) {
                write_file(out / "graphs" / (std::to_string(graph.label) + ".json"),
                           serialize_graph_json(graph));
            }
        }

        write_file(paths.manifest(), serialize_manifest(manifest));

        SaveResult result;
        result.archive_dir = out;
        result.manifest = std::move(manifest);
        result.traces = std::move(traces);
        result.allocation_records = region.records();
        result.counters = merge_counters(ctx.counters(), driver.counters(),
                                         interceptor.prelink_calls(),
                                         interceptor.linked_segments());
        return result;
    } catch (...) {
        std::error_code ec;
        fs::remove_all(out, ec);  // never leave a partial archive behind
        throw;
    }
}

// --- load ------------------------------------------------------------------------

namespace {

void verify_archive_integrity(const ArchivePaths& paths, const Manifest& manifest) {
    for (const auto& [rel, digest] : manifest.file_digests) {
        const auto bytes = read_file(paths.root / rel);
        FOUNDRY_CHECK(crc64(bytes) == digest, Errc::archive_corruption,
                      "integrity check failed for " + rel);
    }
}

void verify_init_records(const std::vector<AllocationRecord>& actual, uint64_t actual_base,
                         const MemoryEventLog& log) {
    std::vector<AllocationRecord> expected;
    for (const auto& rec : log.records) {
        if (rec.window == AllocWindow::pre_capture) expected.push_back(rec);
    }
    FOUNDRY_CHECK(actual.size() == expected.size(), Errc::layout_divergence,
                  "LOAD issued " + std::to_string(actual.size()) +
                      " pre-window allocations, SAVE recorded " +
                      std::to_string(expected.size()));
    for (size_t i = 0; i < expected.size(); ++i) {
        // Base-relative: the sequence and its layout must reproduce.
        const bool same = actual[i].sequence == expected[i].sequence &&
                          actual[i].size == expected[i].size &&
                          actual[i].length == expected[i].length &&
                          actual[i].address - actual_base ==
                              expected[i].address - log.config.base;
        FOUNDRY_CHECK(same, Errc::layout_divergence,
                      "allocation sequence diverged at record " + std::to_string(i) +
                          " (requested " + std::to_string(actual[i].size) + " bytes at 0x" +
                          to_hex(actual[i].address) + ", SAVE recorded " +
                          std::to_string(expected[i].size) + " at 0x" +
                          to_hex(expected[i].address) + ")");
    }
}

}  // namespace

ServingContext load(SimDriver& driver, const std::filesystem::path& archive,
                    const LoadOptions& options) {
    FOUNDRY_CHECK(options.world >= 1 && options.rank < options.world, Errc::invalid_argument,
                  "rank " + std::to_string(options.rank) + " is outside world size " +
                      std::to_string(options.world));
    ArchivePaths paths{archive};
    FOUNDRY_CHECK(fs::exists(paths.manifest()), Errc::archive_corruption,
                  "no manifest under " + archive.string());

    const auto manifest_bytes = read_file(paths.manifest());
    Manifest manifest =
        parse_manifest(std::string(manifest_bytes.begin(), manifest_bytes.end()));
    try {
        verify_archive_integrity(paths, manifest);
    } catch (const Error&) {
        rethrow_with_step("archive integrity");
    }

    const WorkloadSpec spec = WorkloadSpec::parse_text(manifest.workload_text);
    FOUNDRY_CHECK(spec.digest() == manifest.workload_digest, Errc::archive_corruption,
                  "embedded workload text does not match its recorded digest");

    const Catalog catalog = parse_catalog(read_file(paths.catalog()));
    const PatchTable patch_table = parse_patch_table(read_file(paths.patch_table()));
    const MemoryEventLog log = parse_event_log(read_file(paths.memlayout()));
    auto graphs_bin = std::make_shared<const std::vector<uint8_t>>(read_file(paths.graphs()));

    ServingContext sc;
    sc.driver_ = &driver;
    sc.ctx_ = &driver.create_context();
    DeviceContext& ctx = *sc.ctx_;

    if (!options.faults.skip_binary_restore) {
        try {
            restore_binaries(
                ctx, catalog,
                [&](uint64_t hash) { return read_file(paths.binary(hash)); },
                !options.faults.skip_device_init);
        } catch (const Error&) {
            rethrow_with_step("binary restore");
        }
    }

    RegionConfig config = manifest.allocator;
    config.base += static_cast<uint64_t>(options.faults.base_shift_granules) *
                   config.granularity;
    sc.region_ = std::make_unique<VirtualRegion>(ctx, config, Phase::load);
    if (options.preallocate) {
        sc.region_->preallocate(manifest.final_offset);
    }
    if (options.faults.extra_prewindow_alloc) {
        sc.region_->allocate(1);
    }

    // Preallocation made every graph-embedded address live, so template
    // construction proceeds concurrently with the foreground init.
    const uint64_t real_hash = manifest.comm_real_hash;
    const uint32_t rank = options.rank;
    const uint32_t world = options.world;
    PrepareFn prepare = [graphs_bin, &patch_table, real_hash, rank, world](
                            uint32_t label, const GraphLocator& locator) {
        CapturedGraph graph = parse_graph_at(*graphs_bin, locator);
        auto it = patch_table.per_graph.find(label);
        if (it != patch_table.per_graph.end()) {
            apply_rank_patches(graph, it->second, real_hash, rank, world);
        }
        return graph;
    };

    std::optional<ServingSet> built;
    std::exception_ptr builder_error;
    std::thread builder([&] {
        try {
            built.emplace(
                ServingSet::build(ctx, manifest.grouping, prepare, options.prepare_lanes));
        } catch (...) {
            builder_error = std::current_exception();
        }
    });

    std::exception_ptr foreground_error;
    try {
        try {
            run_init_plan(*sc.region_, build_init_plan(spec));
            verify_init_records(sc.region_->records(), config.base, log);
        } catch (const Error&) {
            rethrow_with_step("foreground init");
        }
        try {
            sc.region_->replay_capture_window(log);
        } catch (const Error&) {
            rethrow_with_step("capture-window replay");
        }
    } catch (...) {
        foreground_error = std::current_exception();
    }

    builder.join();  // completion barrier: nothing is served before this
    if (foreground_error) std::rethrow_exception(foreground_error);
    if (builder_error) {
        try {
            std::rethrow_exception(builder_error);
        } catch (const Error&) {
            rethrow_with_step("template construction");
        }
    }

    sc.serving_ = std::move(built);
    sc.manifest_ = std::move(manifest);
    return sc;
}

ServingContext load(const std::filesystem::path& archive, const LoadOptions& options) {
    auto driver = std::make_unique<SimDriver>();
    ServingContext sc = load(*driver, archive, options);
    sc.owned_driver_ = std::move(driver);
    return sc;
}

LaunchTrace ServingContext::replay(uint32_t batch) {
    const ExecHandle exec = serving_->serve(batch);
    return ctx_->replay(exec);
}

std::vector<uint32_t> ServingContext::batches() const {
    return serving_->batches();
}

CounterSnapshot ServingContext::counters() const {
    CounterSnapshot merged = ctx_->counters();
    const CounterSnapshot driver = driver_->counters();
    merged.insert(driver.begin(), driver.end());
    merged["catalog.prelink_calls"] = 0;
    merged["catalog.linked_segments"] = 0;
    return merged;
}

// --- inspect ---------------------------------------------------------------------

InspectReport inspect(const std::filesystem::path& archive) {
    ArchivePaths paths{archive};
    FOUNDRY_CHECK(fs::exists(paths.manifest()), Errc::archive_corruption,
                  "no manifest under " + archive.string());
    const auto manifest_bytes = read_file(paths.manifest());
    InspectReport report;
    report.manifest = parse_manifest(std::string(manifest_bytes.begin(), manifest_bytes.end()));

    const Catalog catalog = parse_catalog(read_file(paths.catalog()));
    report.metadata_bytes = manifest_bytes.size();
    for (const char* rel : {"graphs.bin", "memlayout.bin", "catalog.bin", "patch.bin"}) {
        report.metadata_bytes += fs::file_size(archive / rel);
    }
    for (const auto& [hash, record] : catalog.binaries) {
        InspectReport::BinaryInfo info;
        info.hash = hash;
        info.bytes = fs::file_size(paths.binary(hash));
        info.kernels = static_cast<uint32_t>(record.entrypoints.size());
        info.needs_device_init = record.needs_device_init;
        info.is_stub = record.is_stub;
        info.is_comm_real = record.is_comm_real;
        report.binary_bytes += info.bytes;
        report.binaries.push_back(info);
    }
    return report;
}

std::string InspectReport::to_text() const {
    std::ostringstream out;
    out << "archive format v" << manifest.format_version << ", hash algorithm "
        << static_cast<int>(manifest.hash_algorithm) << "\n";
    out << "workload digest " << to_hex(manifest.workload_digest) << ", kv cache "
        << manifest.kv_cache_bytes << " bytes\n";
    out << "allocator base 0x" << to_hex(manifest.allocator.base) << ", capacity "
        << manifest.allocator.capacity << ", granularity " << manifest.allocator.granularity
        << ", final offset 0x" << to_hex(manifest.final_offset) << "\n";
    out << "graphs: " << manifest.grouping.total_graphs << " captured, "
        << manifest.grouping.template_count << " templates ("
        << manifest.grouping.total_graphs - manifest.grouping.template_count
        << " served by on-demand update)\n";
    out << "group sizes:";
    for (const auto& group : manifest.grouping.groups) {
        out << " " << group.members.size();
    }
    out << "\n";
    out << "binaries: " << binaries.size() << " (" << binary_bytes << " bytes), metadata "
        << metadata_bytes << " bytes\n";
    for (const auto& info : binaries) {
        out << "  " << to_hex(info.hash) << "  " << info.bytes << " bytes, " << info.kernels
            << " kernels";
        if (info.needs_device_init) out << ", device-init";
        if (info.is_stub) out << ", comm-stub";
        if (info.is_comm_real) out << ", comm-real";
        out << "\n";
    }
    if (manifest.comm_real_hash != 0) {
        out << "comm: world placeholder " << manifest.comm_world_placeholder
            << ", real binary " << to_hex(manifest.comm_real_hash) << "\n";
    }
    return out.str();
}

std::string inspect_graph_json(const std::filesystem::path& archive, uint32_t batch) {
    ArchivePaths paths{archive};
    const auto graphs_bin = read_file(paths.graphs());
    for (const auto& loc : parse_graph_locators(graphs_bin)) {
        if (loc.label == batch) {
            return serialize_graph_json(parse_graph_at(graphs_bin, loc));
        }
    }
    throw Error(Errc::invalid_argument, "archive has no graph for batch " + std::to_string(batch));
}

// --- diff ------------------------------------------------------------------------

std::string ArchiveDiffReport::to_text() const {
    if (identical) {
        return "archives identical\n";
    }
    std::ostringstream out;
    for (const auto& line : lines) {
        out << line << "\n";
    }
    return out.str();
}

ArchiveDiffReport diff_archives(const std::filesystem::path& a, const std::filesystem::path& b) {
    ArchiveDiffReport report;
    auto note = [&](const std::string& line) {
        report.identical = false;
        report.lines.push_back(line);
    };

    ArchivePaths pa{a};
    ArchivePaths pb{b};
    const auto ma_bytes = read_file(pa.manifest());
    const auto mb_bytes = read_file(pb.manifest());
    const Manifest ma = parse_manifest(std::string(ma_bytes.begin(), ma_bytes.end()));
    const Manifest mb = parse_manifest(std::string(mb_bytes.begin(), mb_bytes.end()));

    if (ma.workload_digest != mb.workload_digest) note("workload specs differ");
    if (!(ma.allocator == mb.allocator) || ma.final_offset != mb.final_offset) {
        note("allocator layout differs");
    }
    if (ma.kv_cache_bytes != mb.kv_cache_bytes) note("kv cache size differs");
    if (ma.comm_real_hash != mb.comm_real_hash) note("comm binaries differ");

    const Catalog ca = parse_catalog(read_file(pa.catalog()));
    const Catalog cb = parse_catalog(read_file(pb.catalog()));
    for (const auto& [hash, record] : ca.binaries) {
        auto it = cb.binaries.find(hash);
        if (it == cb.binaries.end()) {
            note("binary " + to_hex(hash) + " only in " + a.string());
        } else if (!(record == it->second)) {
            note("binary " + to_hex(hash) + " metadata differs");
        }
    }
    for (const auto& [hash, record] : cb.binaries) {
        if (!ca.binaries.contains(hash)) {
            note("binary " + to_hex(hash) + " only in " + b.string());
        }
    }

    if (!(parse_patch_table(read_file(pa.patch_table())) ==
          parse_patch_table(read_file(pb.patch_table())))) {
        note("patch tables differ");
    }

    const auto ga_bytes = read_file(pa.graphs());
    const auto gb_bytes = read_file(pb.graphs());
    const auto graphs_a = parse_graphs(ga_bytes);
    const auto graphs_b = parse_graphs(gb_bytes);
    std::map<uint32_t, const CapturedGraph*> by_label;
    for (const auto& graph : graphs_b) by_label[graph.label] = &graph;
    if (graphs_a.size() != graphs_b.size()) {
        note("graph counts differ (" + std::to_string(graphs_a.size()) + " vs " +
             std::to_string(graphs_b.size()) + ")");
    }
    for (const auto& graph : graphs_a) {
        auto it = by_label.find(graph.label);
        if (it == by_label.end()) {
            note("graph " + std::to_string(graph.label) + " only in " + a.string());
            continue;
        }
        const GraphDiff delta = diff(graph, *it->second);
        if (!delta.topology_equal) {
            note("graph " + std::to_string(graph.label) + ": topology differs");
        } else if (!delta.empty()) {
            note("graph " + std::to_string(graph.label) + ": " +
                 std::to_string(delta.node_deltas.size()) + " nodes differ in parameters");
        }
    }
    return report;
}

// --- packed archive ----------------------------------------------------------------

namespace {
constexpr char kPackMagic[5] = "FNDA";
constexpr uint16_t kPackVersion = 1;
}  // namespace

void pack_archive(const std::filesystem::path& dir, const std::filesystem::path& file) {
    FOUNDRY_CHECK(fs::exists(ArchivePaths{dir}.manifest()), Errc::archive_corruption,
                  "no manifest under " + dir.string());
    std::map<std::string, std::vector<uint8_t>> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            files[fs::relative(entry.path(), dir).generic_string()] = read_file(entry.path());
        }
    }

    ByteWriter w;
    w.bytes(kPackMagic, 4);
    w.u16(kPackVersion);
    w.u32(static_cast<uint32_t>(files.size()));
    std::vector<size_t> offset_slots;
    for (const auto& [rel, bytes] : files) {
        w.str(rel);
        offset_slots.push_back(w.size());
        w.u64(0);  // offset, patched below
        w.u64(bytes.size());
        w.u64(crc64(bytes));
    }
    size_t slot = 0;
    for (const auto& [rel, bytes] : files) {
        w.patch_u64(offset_slots[slot++], w.size());
        w.bytes(bytes);
    }
    write_file(file, w.data());
}

void unpack_archive(const std::filesystem::path& file, const std::filesystem::path& dir) {
    const auto bytes = read_file(file);
    ByteReader r(bytes, Errc::archive_corruption);
    r.expect_magic(kPackMagic);
    const uint16_t version = r.u16();
    FOUNDRY_CHECK(version == kPackVersion, Errc::archive_corruption,
                  "unsupported packed archive version " + std::to_string(version));
    const uint32_t count = r.u32();
    struct Entry {
        std::string rel;
        uint64_t offset;
        uint64_t length;
        uint64_t checksum;
    };
    std::vector<Entry> entries;
    for (uint32_t i = 0; i < count; ++i) {
        Entry entry;
        entry.rel = r.str();
        entry.offset = r.u64();
        entry.length = r.u64();
        entry.checksum = r.u64();
        FOUNDRY_CHECK(entry.offset <= bytes.size() &&
                          entry.length <= bytes.size() - entry.offset,
                      Errc::archive_corruption, entry.rel + " overruns the packed archive");
        FOUNDRY_CHECK(!entry.rel.empty() && entry.rel.find("..") == std::string::npos &&
                          entry.rel.front() != '/',
                      Errc::archive_corruption, "packed entry path escapes the archive");
        entries.push_back(std::move(entry));
    }
    fs::create_directories(dir);
    for (const auto& entry : entries) {
        const auto blob =
            std::span<const uint8_t>(bytes).subspan(entry.offset, entry.length);
        FOUNDRY_CHECK(crc64(blob) == entry.checksum, Errc::archive_corruption,
                      "integrity check failed for " + entry.rel);
        const fs::path target = dir / entry.rel;
        fs::create_directories(target.parent_path());
        write_file(target, blob);
    }
}

// --- bench -----------------------------------------------------------------------

uint64_t directory_bytes(const std::filesystem::path& dir) {
    uint64_t total = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            total += entry.file_size();
        }
    }
    return total;
}

std::string BenchReport::to_text() const {
    std::ostringstream out;
    out << "mode: " << mode << "\n";
    out << "wall time: " << wall_ms << " ms\n";
    out << "archive size: " << archive_bytes << " bytes\n";
    out << "update-served fraction: " << update_served_fraction << "\n";
    out << "construction calls (graph mutation + instantiate): " << construction_call_count
        << "\n";
    out << "update calls: " << update_call_count << "\n";
    out << "capture calls: " << capture_call_count << "\n";
    for (const auto& [key, value] : counters) {
        out << "  " << key << " = " << value << "\n";
    }
    return out.str();
}

BenchReport bench(const WorkloadSpec& spec, const std::string& mode) {
    FOUNDRY_CHECK(mode == "save" || mode == "load" || mode == "naive", Errc::invalid_argument,
                  "bench mode must be save, load, or naive");

    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    const fs::path dir =
        fs::temp_directory_path() / ("foundry-bench-" + std::to_string(stamp));
    struct Cleanup {
        fs::path dir;
        ~Cleanup() {
            std::error_code ec;
            fs::remove_all(dir, ec);
        }
    } cleanup{dir};

    BenchReport report;
    report.mode = mode;
    using clock = std::chrono::steady_clock;

    if (mode == "save") {
        const auto t0 = clock::now();
        SaveResult result = save(spec, dir);
        const auto t1 = clock::now();
        report.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        report.counters = result.counters;
        report.update_served_fraction = result.manifest.grouping.update_served_fraction();
        report.capture_call_count = capture_calls(result.counters);
        report.construction_call_count = construction_calls(result.counters);
        report.update_call_count = counter_value(result.counters, "exec.update_calls");
    } else if (mode == "load") {
        SaveResult saved = save(spec, dir);
        const auto t0 = clock::now();
        ServingContext sc = load(dir);
        for (uint32_t batch : sc.batches()) {
            sc.replay(batch);  // one on-demand update per non-template member
        }
        const auto t1 = clock::now();
        report.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        report.counters = sc.counters();
        report.update_served_fraction = saved.manifest.grouping.update_served_fraction();
        report.capture_call_count = capture_calls(report.counters);
        report.construction_call_count = construction_calls(report.counters);
        report.update_call_count = counter_value(report.counters, "exec.update_calls");
    } else {
        SaveResult saved = save(spec, dir);
        ArchivePaths paths{dir};
        const auto t0 = clock::now();
        SimDriver driver;
        DeviceContext& ctx = driver.create_context();
        const Catalog catalog = parse_catalog(read_file(paths.catalog()));
        restore_binaries(ctx, catalog,
                         [&](uint64_t hash) { return read_file(paths.binary(hash)); });
        VirtualRegion region(ctx, saved.manifest.allocator, Phase::load);
        region.preallocate(saved.manifest.final_offset);
        const WorkloadSpec parsed = WorkloadSpec::parse_text(saved.manifest.workload_text);
        run_init_plan(region, build_init_plan(parsed));
        const MemoryEventLog log = parse_event_log(read_file(paths.memlayout()));
        region.replay_capture_window(log);
        const PatchTable patch_table = parse_patch_table(read_file(paths.patch_table()));
        const auto graphs_bin = read_file(paths.graphs());
        // Naive rebuild: every captured graph goes through full explicit
        // construction and instantiation, no templates.
        for (const auto& loc : parse_graph_locators(graphs_bin)) {
            CapturedGraph graph = parse_graph_at(graphs_bin, loc);
            auto it = patch_table.per_graph.find(loc.label);
            if (it != patch_table.per_graph.end()) {
                apply_rank_patches(graph, it->second, saved.manifest.comm_real_hash, 0, 1);
            }
            const GraphHandle handle = ctx.build_graph(graph);
            const ExecHandle exec = ctx.instantiate(handle);
            ctx.replay(exec);
        }
        const auto t1 = clock::now();
        report.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        report.counters = merge_counters(ctx.counters(), driver.counters(), 0, 0);
        report.update_served_fraction = 0.0;
        report.capture_call_count = capture_calls(report.counters);
        report.construction_call_count = construction_calls(report.counters);
        report.update_call_count = counter_value(report.counters, "exec.update_calls");
    }
    report.archive_bytes = directory_bytes(dir);
    return report;
}

}  // namespace foundry
