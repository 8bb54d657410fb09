// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "ulab/unlearn.hpp"

namespace ulab {

/// Distinct methods in order of first appearance.
std::vector<std::string> methods_in_order(std::span<const RunRecord> records);

/// "method,MU,FE,Avg" with one row per method in order of first appearance;
/// each row takes the method's last record. Avg = (MU + FE) / 2.
std::string results_table_csv(std::span<const RunRecord> records);

/// MU (x) against FE (y), one marker per record with radius proportional to
/// its epoch (epoch 0 gets a small fixed radius).
std::string trajectory_svg(std::span<const RunRecord> records);

/// MU per subtask index, one line per method.
std::string continual_svg(std::span<const RunRecord> records);

}  // namespace ulab
