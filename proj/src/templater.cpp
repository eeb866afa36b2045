#include "foundry/templater.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace foundry {

const TemplateGroup& GroupingManifest::group_for(uint32_t batch) const {
    for (const auto& group : groups) {
        if (std::binary_search(group.members.begin(), group.members.end(), batch)) {
            return group;
        }
    }
    throw Error(Errc::invalid_argument, "no group serves batch " + std::to_string(batch));
}

GroupingManifest group_graphs(const std::vector<CapturedGraph>& graphs) {
    std::unordered_map<TopologyKey, size_t, TopologyKeyHash> index;
    GroupingManifest manifest;
    std::vector<uint32_t> seen_labels;
    for (const auto& graph : graphs) {
        FOUNDRY_CHECK(std::find(seen_labels.begin(), seen_labels.end(), graph.label) ==
                          seen_labels.end(),
                      Errc::invalid_argument,
                      "duplicate graph label " + std::to_string(graph.label));
        seen_labels.push_back(graph.label);

        const TopologyKey key = topology_key(graph);
        auto it = index.find(key);
        if (it == index.end()) {
            index.emplace(key, manifest.groups.size());
            TemplateGroup group;
            group.key = key;
            group.members = {graph.label};
            manifest.groups.push_back(std::move(group));
        } else {
            manifest.groups[it->second].members.push_back(graph.label);
        }
    }
    for (auto& group : manifest.groups) {
        std::sort(group.members.begin(), group.members.end());
        group.representative = group.members.front();
    }
    std::sort(manifest.groups.begin(), manifest.groups.end(),
              [](const TemplateGroup& a, const TemplateGroup& b) {
                  return a.representative < b.representative;
              });
    manifest.total_graphs = static_cast<uint32_t>(graphs.size());
    manifest.template_count = static_cast<uint32_t>(manifest.groups.size());
    return manifest;
}

void attach_locators(GroupingManifest& manifest, const std::vector<GraphLocator>& locators) {
    std::unordered_map<uint32_t, GraphLocator> by_label;
    for (const auto& loc : locators) {
        by_label[loc.label] = loc;
    }
    for (auto& group : manifest.groups) {
        group.locators.clear();
        for (uint32_t member : group.members) {
            auto it = by_label.find(member);
            FOUNDRY_CHECK(it != by_label.end(), Errc::archive_corruption,
                          "container has no record for graph " + std::to_string(member));
            group.locators.push_back(it->second);
        }
    }
}

ServingSet ServingSet::build(DeviceContext& ctx, const GroupingManifest& manifest,
                             const PrepareFn& prepare, unsigned prepare_lanes) {
    ServingSet set;
    set.ctx_ = &ctx;
    for (const auto& group : manifest.groups) {
        FOUNDRY_CHECK(group.locators.size() == group.members.size(), Errc::invalid_argument,
                      "grouping manifest is missing member locators");
        auto slot = std::make_unique<Slot>();
        slot->group = group;
        set.slot_by_label_.reserve(set.slot_by_label_.size() + group.members.size());
        for (uint32_t member : group.members) {
            set.slot_by_label_[member] = set.slots_.size();
        }
        set.slots_.push_back(std::move(slot));
    }

    struct Task {
        Slot* slot;
        uint32_t label;
        const GraphLocator* locator;
    };
    std::vector<Task> tasks;
    for (auto& slot : set.slots_) {
        for (size_t i = 0; i < slot->group.members.size(); ++i) {
            tasks.push_back(Task{slot.get(), slot->group.members[i], &slot->group.locators[i]});
        }
    }

    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= tasks.size()) break;
            const Task& task = tasks[i];
            try {
                CapturedGraph params = prepare(task.label, *task.locator);
                std::lock_guard lock(task.slot->mutex);
                task.slot->prepared.emplace(task.label, std::move(params));
                task.slot->ready.notify_all();
            } catch (...) {
                {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
                failed.store(true);
                // Unblock the builder; the failure is rethrown after join.
                std::lock_guard slot_lock(task.slot->mutex);
                task.slot->ready.notify_all();
            }
        }
    };

    std::vector<std::thread> lanes;
    const unsigned lane_count = std::max(1u, prepare_lanes);
    lanes.reserve(lane_count);
    for (unsigned i = 0; i < lane_count; ++i) {
        lanes.emplace_back(worker);
    }

    // Builder lane: one template per group, strictly sequential driver work.
    try {
        for (auto& slot : set.slots_) {
            const uint32_t rep = slot->group.representative;
            std::unique_lock lock(slot->mutex);
            slot->ready.wait(lock,
                             [&] { return slot->prepared.contains(rep) || failed.load(); });
            if (!slot->prepared.contains(rep)) break;  // a prepare lane failed
            const CapturedGraph& rep_params = slot->prepared.at(rep);
            lock.unlock();
            const GraphHandle handle = ctx.build_graph(rep_params);
            slot->exec = ctx.instantiate(handle);
            slot->applied = rep;
        }
    } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(tasks.size());
    }

    for (auto& lane : lanes) {
        lane.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return set;
}

ServingSet::Slot& ServingSet::slot_for(uint32_t batch) {
    auto it = slot_by_label_.find(batch);
    FOUNDRY_CHECK(it != slot_by_label_.end(), Errc::invalid_argument,
                  "batch " + std::to_string(batch) +
                      " is not a member of any group (routing bug)");
    return *slots_[it->second];
}

const ServingSet::Slot& ServingSet::slot_for(uint32_t batch) const {
    auto it = slot_by_label_.find(batch);
    FOUNDRY_CHECK(it != slot_by_label_.end(), Errc::invalid_argument,
                  "batch " + std::to_string(batch) +
                      " is not a member of any group (routing bug)");
    return *slots_[it->second];
}

ExecHandle ServingSet::serve(uint32_t batch) {
    Slot& slot = slot_for(batch);
    if (slot.applied == batch) {
        return slot.exec;
    }
    auto it = slot.prepared.find(batch);
    FOUNDRY_CHECK(it != slot.prepared.end(), Errc::invalid_argument,
                  "no prepared parameter set for batch " + std::to_string(batch));
    ctx_->exec_update(slot.exec, it->second);
    slot.applied = batch;
    return slot.exec;
}

uint32_t ServingSet::applied_member(uint32_t batch_in_group) const {
    return slot_for(batch_in_group).applied;
}

const CapturedGraph& ServingSet::prepared_params(uint32_t batch) const {
    const Slot& slot = slot_for(batch);
    auto it = slot.prepared.find(batch);
    FOUNDRY_CHECK(it != slot.prepared.end(), Errc::invalid_argument,
                  "no prepared parameter set for batch " + std::to_string(batch));
    return it->second;
}

std::vector<uint32_t> ServingSet::batches() const {
    std::vector<uint32_t> out;
    for (const auto& slot : slots_) {
        out.insert(out.end(), slot->group.members.begin(), slot->group.members.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace foundry
