#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace foundry {

enum class Errc {
    invalid_argument,
    spec_violation,
    binary_format,
    unresolved_kernel,
    unmapped_address,
    topology_mismatch,
    layout_divergence,
    archive_corruption,
    out_of_region,
    unknown_address,
    device_state_uninitialized,
    unpatchable_comm,
    schema_violation,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message),
          code_(code),
          detail_(message) {}

    Errc code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    Errc code_;
    std::string detail_;
};

// Process exit codes for the CLI. Anything not listed maps to 1.
int exit_code_for(Errc code) noexcept;

#define FOUNDRY_CHECK(cond, code, msg)                          \
    do {                                                        \
        if (!(cond)) {                                          \
            throw ::foundry::Error((code), (msg));              \
        }                                                       \
    } while (0)

}  // namespace foundry
