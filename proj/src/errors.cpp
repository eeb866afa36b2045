#include "foundry/errors.hpp"

namespace foundry {

std::string_view errc_name(Errc code) {
    switch (code) {
        case Errc::invalid_argument: return "invalid-argument";
        case Errc::spec_violation: return "spec-violation";
        case Errc::binary_format: return "binary-format";
        case Errc::unresolved_kernel: return "unresolved-kernel";
        case Errc::unmapped_address: return "unmapped-address";
        case Errc::topology_mismatch: return "topology-mismatch";
        case Errc::layout_divergence: return "layout-divergence";
        case Errc::archive_corruption: return "archive-corruption";
        case Errc::out_of_region: return "out-of-region";
        case Errc::unknown_address: return "unknown-address";
        case Errc::device_state_uninitialized: return "device-state-uninitialized";
        case Errc::unpatchable_comm: return "unpatchable-comm";
        case Errc::schema_violation: return "schema-violation";
    }
    return "unknown";
}

int exit_code_for(Errc code) noexcept {
    switch (code) {
        case Errc::archive_corruption:
        case Errc::binary_format:
        case Errc::schema_violation:
            return 2;
        case Errc::layout_divergence:
            return 3;
        case Errc::unresolved_kernel:
            return 4;
        case Errc::topology_mismatch:
            return 5;
        default:
            return 1;
    }
}

}  // namespace foundry
