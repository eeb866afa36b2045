#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "foundry/sim_driver.hpp"

namespace foundry {

enum class Phase : uint8_t {
    save = 0,
    load = 1,
};

struct RegionConfig {
    uint64_t base = 0x700000000000ull;
    uint64_t capacity = 4ull << 30;
    uint64_t granularity = 64ull << 10;

    bool operator==(const RegionConfig&) const = default;
};

enum class AllocWindow : uint8_t {
    pre_capture = 0,
    capture_window = 1,
};

struct AllocationRecord {
    uint64_t sequence = 0;
    uint64_t size = 0;     // requested
    uint64_t address = 0;  // granted
    uint64_t length = 0;   // size rounded up to the granularity
    AllocWindow window = AllocWindow::pre_capture;

    bool operator==(const AllocationRecord&) const = default;
};

struct MemoryEventLog {
    RegionConfig config;
    uint64_t starting_offset = 0;  // region offset when the window opened
    uint64_t final_offset = 0;     // region offset at end of SAVE
    std::vector<AllocationRecord> records;  // full history; window records carry the tag

    std::vector<AllocationRecord> window_records() const;

    bool operator==(const MemoryEventLog&) const = default;
};

// memlayout.bin: header (base, capacity, granularity, starting offset,
// final offset, record count) then fixed-width little-endian records.
std::vector<uint8_t> serialize_event_log(const MemoryEventLog& log);
MemoryEventLog parse_event_log(std::span<const uint8_t> bytes);

// Monotonic bump allocator over a reserved virtual-address region. Every
// grant lands immediately after the previous one, so a fixed base and a
// fixed request sequence reproduce the same layout on every run. Mappings
// are registered in the owning context, which is what replay validates.
class VirtualRegion {
public:
    VirtualRegion(DeviceContext& ctx, RegionConfig config, Phase phase);

    uint64_t allocate(uint64_t size);
    void free(uint64_t address);

    void begin_capture_window();
    MemoryEventLog end_capture_window();
    // Re-issues every logged capture-window allocation. The region offset
    // must equal the log's starting offset (same pre-window sequence).
    void replay_capture_window(const MemoryEventLog& log);

    // Maps [base, base + final_offset) in one call; later allocations only
    // verify containment and bump the offset.
    void preallocate(uint64_t final_offset);

    uint64_t offset() const;
    const RegionConfig& config() const { return config_; }
    Phase phase() const { return phase_; }
    std::vector<AllocationRecord> records() const;

private:
    DeviceContext& ctx_;
    RegionConfig config_;
    Phase phase_;

    mutable std::mutex mutex_;
    uint64_t offset_ = 0;
    bool recording_window_ = false;
    uint64_t window_start_offset_ = 0;
    std::optional<uint64_t> prealloc_limit_;
    std::vector<AllocationRecord> records_;
    std::vector<std::pair<uint64_t, uint64_t>> live_;  // granted (address, length)
};

}  // namespace foundry
