#pragma once

#include <cstdint>
#include <string_view>

namespace refnms {

inline constexpr std::string_view kVersion = "0.1.0";
// Bumped whenever the on-disk layout changes.
inline constexpr std::uint32_t kCheckpointFormat = 1;
inline constexpr std::uint32_t kDetectionFormat = 1;
inline constexpr std::uint32_t kReportFormat = 1;

}  // namespace refnms
