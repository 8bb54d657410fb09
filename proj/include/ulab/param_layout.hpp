// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "ulab/errors.hpp"

namespace ulab {

/// Named row-major tensor inside a flat parameter vector.
struct TensorSlot {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index size() const { return rows * cols; }
};

/// Offsets of every learnable tensor in one contiguous vector. Weights, their
/// gradients and optimizer moments all share this layout.
class ParamLayout {
 public:
  const TensorSlot& add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    slots_.push_back({std::move(name), size_, rows, cols});
    size_ += rows * cols;
    return slots_.back();
  }

  const TensorSlot& at(const std::string& name) const {
    for (const auto& s : slots_) {
      if (s.name == name) return s;
    }
    throw InputError("no parameter tensor named " + name);
  }

  const std::vector<TensorSlot>& slots() const { return slots_; }
  Eigen::Index size() const { return size_; }

 private:
  std::vector<TensorSlot> slots_;
  Eigen::Index size_ = 0;
};

}  // namespace ulab
