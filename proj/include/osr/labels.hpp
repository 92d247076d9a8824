#pragma once

namespace osr {

/// Sentinel for the K+1st "unknown" label in open-set truths and predictions.
inline constexpr int kUnknownLabel = -1;

} // namespace osr
