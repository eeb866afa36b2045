#include "foundry/det_alloc.hpp"

#include <algorithm>

#include "foundry/hash.hpp"
#include "foundry/io.hpp"

namespace foundry {

std::vector<AllocationRecord> MemoryEventLog::window_records() const {
    std::vector<AllocationRecord> out;
    for (const auto& rec : records) {
        if (rec.window == AllocWindow::capture_window) {
            out.push_back(rec);
        }
    }
    return out;
}

std::vector<uint8_t> serialize_event_log(const MemoryEventLog& log) {
    ByteWriter w;
    w.u64(log.config.base);
    w.u64(log.config.capacity);
    w.u64(log.config.granularity);
    w.u64(log.starting_offset);
    w.u64(log.final_offset);
    w.u64(log.records.size());
    for (const auto& rec : log.records) {
        w.u64(rec.sequence);
        w.u64(rec.size);
        w.u64(rec.address);
        w.u64(rec.length);
        w.u8(static_cast<uint8_t>(rec.window));
    }
    return w.take();
}

MemoryEventLog parse_event_log(std::span<const uint8_t> bytes) {
    ByteReader r(bytes, Errc::archive_corruption);
    MemoryEventLog log;
    log.config.base = r.u64();
    log.config.capacity = r.u64();
    log.config.granularity = r.u64();
    log.starting_offset = r.u64();
    log.final_offset = r.u64();
    const uint64_t count = r.u64();
    log.records.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        AllocationRecord rec;
        rec.sequence = r.u64();
        rec.size = r.u64();
        rec.address = r.u64();
        rec.length = r.u64();
        rec.window = static_cast<AllocWindow>(r.u8());
        log.records.push_back(rec);
    }
    FOUNDRY_CHECK(r.done(), Errc::archive_corruption, "trailing bytes in event log");
    return log;
}

VirtualRegion::VirtualRegion(DeviceContext& ctx, RegionConfig config, Phase phase)
    : ctx_(ctx), config_(config), phase_(phase) {
    FOUNDRY_CHECK(config_.capacity > 0, Errc::invalid_argument, "zero capacity region");
    FOUNDRY_CHECK(config_.granularity > 0 && (config_.granularity & (config_.granularity - 1)) == 0,
                  Errc::invalid_argument, "granularity must be a power of two");
    FOUNDRY_CHECK(config_.capacity % config_.granularity == 0, Errc::invalid_argument,
                  "capacity must be a multiple of the granularity");
    ctx_.count_reserve_call();
}

uint64_t VirtualRegion::allocate(uint64_t size) {
    FOUNDRY_CHECK(size > 0, Errc::invalid_argument, "zero-byte allocation");
    std::lock_guard lock(mutex_);
    FOUNDRY_CHECK(size <= config_.capacity, Errc::out_of_region,
                  "allocation of " + std::to_string(size) + " bytes exceeds region capacity");
    const uint64_t length =
        (size + config_.granularity - 1) / config_.granularity * config_.granularity;

    const uint64_t limit = prealloc_limit_.value_or(config_.capacity);
    FOUNDRY_CHECK(offset_ + length <= limit, Errc::out_of_region,
                  "allocation of " + std::to_string(size) + " bytes exceeds " +
                      (prealloc_limit_ ? "the preallocated range" : "region capacity"));

    const uint64_t address = config_.base + offset_;
    offset_ += length;
    if (!prealloc_limit_) {
        ctx_.map_range(address, length);
    }
    ctx_.count_alloc_grant();

    AllocationRecord rec;
    rec.sequence = records_.size();
    rec.size = size;
    rec.address = address;
    rec.length = length;
    rec.window = recording_window_ ? AllocWindow::capture_window : AllocWindow::pre_capture;
    records_.push_back(rec);
    live_.emplace_back(address, length);
    return address;
}

void VirtualRegion::free(uint64_t address) {
    std::lock_guard lock(mutex_);
    auto it = std::find_if(live_.begin(), live_.end(),
                           [&](const auto& grant) { return grant.first == address; });
    FOUNDRY_CHECK(it != live_.end(), Errc::unknown_address,
                  "free of address 0x" + to_hex(address) + " that was never granted");
    // The granule is leaked: the offset never rewinds, only the mapping goes.
    ctx_.unmap_range(it->first, it->second);
    live_.erase(it);
}

void VirtualRegion::begin_capture_window() {
    std::lock_guard lock(mutex_);
    FOUNDRY_CHECK(!recording_window_, Errc::invalid_argument, "capture window already open");
    recording_window_ = true;
    window_start_offset_ = offset_;
}

MemoryEventLog VirtualRegion::end_capture_window() {
    std::lock_guard lock(mutex_);
    FOUNDRY_CHECK(recording_window_, Errc::invalid_argument, "no capture window open");
    recording_window_ = false;
    MemoryEventLog log;
    log.config = config_;
    log.starting_offset = window_start_offset_;
    log.final_offset = offset_;
    log.records = records_;
    return log;
}

void VirtualRegion::replay_capture_window(const MemoryEventLog& log) {
    {
        std::lock_guard lock(mutex_);
        FOUNDRY_CHECK(!recording_window_, Errc::invalid_argument,
                      "cannot replay inside an open window");
        FOUNDRY_CHECK(offset_ == log.starting_offset, Errc::layout_divergence,
                      "region offset 0x" + to_hex(offset_) +
                          " does not match the recorded pre-window offset 0x" +
                          to_hex(log.starting_offset));
        // Replayed allocations carry the capture-window tag, so a LOAD
        // record list is byte-identical to the SAVE one.
        recording_window_ = true;
        window_start_offset_ = offset_;
    }
    try {
        for (const auto& rec : log.records) {
            if (rec.window != AllocWindow::capture_window) continue;
            const uint64_t granted = allocate(rec.size);
            // Compared base-relative: the base is configuration, the layout
            // is what must reproduce.
            FOUNDRY_CHECK(granted - config_.base == rec.address - log.config.base,
                          Errc::layout_divergence,
                          "window replay placed 0x" + to_hex(granted) +
                              " where the log expects 0x" + to_hex(rec.address));
        }
    } catch (...) {
        std::lock_guard lock(mutex_);
        recording_window_ = false;
        throw;
    }
    std::lock_guard lock(mutex_);
    recording_window_ = false;
    FOUNDRY_CHECK(offset_ == log.final_offset, Errc::layout_divergence,
                  "window replay ended at offset 0x" + to_hex(offset_) +
                      ", log expects 0x" + to_hex(log.final_offset));
}

void VirtualRegion::preallocate(uint64_t final_offset) {
    std::lock_guard lock(mutex_);
    FOUNDRY_CHECK(final_offset % config_.granularity == 0, Errc::invalid_argument,
                  "final offset must be granularity-aligned");
    FOUNDRY_CHECK(final_offset <= config_.capacity, Errc::out_of_region,
                  "final offset exceeds region capacity");
    FOUNDRY_CHECK(offset_ == 0 && records_.empty(), Errc::invalid_argument,
                  "preallocate must precede all allocations");
    if (final_offset > 0) {
        ctx_.map_range(config_.base, final_offset);
    }
    prealloc_limit_ = final_offset;
}

uint64_t VirtualRegion::offset() const {
    std::lock_guard lock(mutex_);
    return offset_;
}

std::vector<AllocationRecord> VirtualRegion::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

}  // namespace foundry
