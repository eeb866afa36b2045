#pragma once

#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "foundry/graph_model.hpp"
#include "foundry/sim_driver.hpp"

namespace foundry {

struct TemplateGroup {
    TopologyKey key;
    uint32_t representative = 0;        // smallest batch label in the group
    std::vector<uint32_t> members;      // batch labels, ascending
    std::vector<GraphLocator> locators; // parallel to members; offsets into graphs.bin

    bool operator==(const TemplateGroup&) const = default;
};

struct GroupingManifest {
    std::vector<TemplateGroup> groups;  // ordered by representative label
    uint32_t total_graphs = 0;
    uint32_t template_count = 0;

    double update_served_fraction() const {
        return total_graphs == 0
                   ? 0.0
                   : static_cast<double>(total_graphs - template_count) / total_graphs;
    }

    const TemplateGroup& group_for(uint32_t batch) const;

    bool operator==(const GroupingManifest&) const = default;
};

// Partitions graphs by topology key. The representative is the smallest
// batch size so LOAD is deterministic.
GroupingManifest group_graphs(const std::vector<CapturedGraph>& graphs);

// Fills per-member locators from a serialized container's offset table.
void attach_locators(GroupingManifest& manifest, const std::vector<GraphLocator>& locators);

// Decodes one member's parameter set: a pure read with no driver calls.
using PrepareFn = std::function<CapturedGraph(uint32_t label, const GraphLocator& locator)>;

// One instantiated template per group plus the prepared parameter sets of
// every member, specialized on demand by in-place update.
class ServingSet {
public:
    ServingSet(const ServingSet&) = delete;
    ServingSet& operator=(const ServingSet&) = delete;
    ServingSet(ServingSet&&) = default;
    ServingSet& operator=(ServingSet&&) = default;

    // Builds templates sequentially on the calling thread (one lane issues
    // all driver construction calls) while `prepare_lanes` workers decode
    // member parameter sets concurrently.
    static ServingSet build(DeviceContext& ctx, const GroupingManifest& manifest,
                            const PrepareFn& prepare, unsigned prepare_lanes = 1);

    // Returns an exec ready to replay batch b. Serving the currently
    // applied member issues no driver call; anything else costs exactly one
    // exec_update.
    ExecHandle serve(uint32_t batch);

    uint32_t applied_member(uint32_t batch_in_group) const;
    const CapturedGraph& prepared_params(uint32_t batch) const;
    std::vector<uint32_t> batches() const;
    size_t group_count() const { return slots_.size(); }

private:
    struct Slot {
        TemplateGroup group;
        ExecHandle exec = 0;
        uint32_t applied = 0;
        std::unordered_map<uint32_t, CapturedGraph> prepared;
        std::mutex mutex;
        std::condition_variable ready;
    };

    ServingSet() = default;

    Slot& slot_for(uint32_t batch);
    const Slot& slot_for(uint32_t batch) const;

    DeviceContext* ctx_ = nullptr;
    std::vector<std::unique_ptr<Slot>> slots_;
    std::unordered_map<uint32_t, size_t> slot_by_label_;
};

}  // namespace foundry
