#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "foundry/io.hpp"
#include "foundry/pipeline.hpp"

namespace {

std::optional<uint64_t> base_addr_from_env() {
    const char* value = std::getenv("FOUNDRY_BASE_ADDR");
    if (value == nullptr || *value == '\0') {
        return std::nullopt;
    }
    return std::stoull(value, nullptr, 0);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAVE/LOAD materialization of simulated execution graphs"};
    app.require_subcommand(1);

    std::string workload;
    std::string out_dir;
    std::string traces_path;
    bool emit_json_graphs = false;
    auto* save_cmd = app.add_subcommand("save", "capture a workload into a portable archive");
    save_cmd->add_option("--workload", workload, "preset name or spec file")->required();
    save_cmd->add_option("--out", out_dir, "archive output directory")->required();
    save_cmd->add_option("--traces", traces_path, "write capture-time replay traces here");
    save_cmd->add_flag("--emit-json-graphs", emit_json_graphs,
                       "also write graphs/<batch>.json documents");

    std::string archive;
    uint32_t rank = 0;
    uint32_t world = 1;
    bool no_prealloc = false;
    bool replay_all = false;
    std::string load_traces_path;
    auto* load_cmd = app.add_subcommand("load", "restore a serving context from an archive");
    load_cmd->add_option("--archive", archive, "archive directory")->required();
    load_cmd->add_option("--rank", rank, "rank of this process");
    load_cmd->add_option("--world", world, "deployment world size");
    load_cmd->add_flag("--no-prealloc", no_prealloc,
                       "map each allocation individually (debug; addresses are unchanged)");
    load_cmd->add_flag("--replay-all", replay_all, "replay every archived batch size");
    load_cmd->add_option("--traces", load_traces_path,
                         "with --replay-all, write the replay traces here");

    std::string inspect_dir;
    uint32_t inspect_graph = 0;
    bool have_inspect_graph = false;
    auto* inspect_cmd = app.add_subcommand("inspect", "summarize an archive");
    inspect_cmd->add_option("archive", inspect_dir, "archive directory")->required();
    auto* graph_opt =
        inspect_cmd->add_option("--graph", inspect_graph, "dump one graph as JSON");
    graph_opt->each([&](const std::string&) { have_inspect_graph = true; });

    std::string diff_a;
    std::string diff_b;
    auto* diff_cmd = app.add_subcommand("diff", "compare two archives structurally");
    diff_cmd->add_option("a", diff_a, "first archive")->required();
    diff_cmd->add_option("b", diff_b, "second archive")->required();

    std::string bench_workload;
    std::string bench_mode = "load";
    auto* bench_cmd = app.add_subcommand("bench", "measure save/load/naive-rebuild cost");
    bench_cmd->add_option("--workload", bench_workload, "preset name or spec file")->required();
    bench_cmd->add_option("--mode", bench_mode, "save | load | naive")
        ->check(CLI::IsMember({"save", "load", "naive"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (save_cmd->parsed()) {
            foundry::WorkloadSpec spec = foundry::resolve_workload(workload);
            foundry::SaveOptions options;
            options.base_address = base_addr_from_env();
            options.emit_json_graphs = emit_json_graphs;
            foundry::SaveResult result = foundry::save(spec, out_dir, options);
            if (!traces_path.empty()) {
                foundry::write_file(traces_path, foundry::traces_to_text(result.traces));
            }
            std::cout << "archive written to " << result.archive_dir.string() << " ("
                      << foundry::directory_bytes(result.archive_dir) << " bytes, "
                      << result.manifest.grouping.total_graphs << " graphs, "
                      << result.manifest.grouping.template_count << " templates)\n";
        } else if (load_cmd->parsed()) {
            foundry::LoadOptions options;
            options.rank = rank;
            options.world = world;
            options.preallocate = !no_prealloc;
            foundry::ServingContext sc = foundry::load(archive, options);
            std::cout << "rank " << rank << "/" << world << " ready: "
                      << sc.batches().size() << " batch sizes servable\n";
            if (replay_all) {
                std::map<uint32_t, foundry::LaunchTrace> traces;
                for (uint32_t batch : sc.batches()) {
                    traces.emplace(batch, sc.replay(batch));
                }
                std::cout << "replayed " << traces.size() << " graphs\n";
                if (!load_traces_path.empty()) {
                    foundry::write_file(load_traces_path, foundry::traces_to_text(traces));
                }
            }
            const auto counters = sc.counters();
            for (const auto& [key, value] : counters) {
                std::cout << "  " << key << " = " << value << "\n";
            }
        } else if (inspect_cmd->parsed()) {
            if (have_inspect_graph) {
                std::cout << foundry::inspect_graph_json(inspect_dir, inspect_graph) << "\n";
            } else {
                std::cout << foundry::inspect(inspect_dir).to_text();
            }
        } else if (diff_cmd->parsed()) {
            const auto report = foundry::diff_archives(diff_a, diff_b);
            std::cout << report.to_text();
            return report.identical ? 0 : 1;
        } else if (bench_cmd->parsed()) {
            foundry::WorkloadSpec spec = foundry::resolve_workload(bench_workload);
            std::cout << foundry::bench(spec, bench_mode).to_text();
        }
    } catch (const foundry::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return foundry::exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
