// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fod/tensor.hpp"

namespace fod {

/// Patch grid; index i <-> (i / width, i % width).
struct GridGeometry {
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return height * width; }
  std::size_t row_of(std::size_t i) const noexcept { return i / width; }
  std::size_t col_of(std::size_t i) const noexcept { return i % width; }
  std::size_t index(std::size_t row, std::size_t col) const noexcept { return row * width + col; }
  bool operator==(const GridGeometry&) const = default;
};

struct GridPos {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const GridPos&) const = default;
};

enum class BankKind { mean, nearest, coreset, prototype, codebook };

std::string_view to_string(BankKind k);
BankKind parse_bank_kind(std::string_view s);

/// External reference features. Positions, when present, index the source grid.
struct ReferenceBank {
  BankKind kind = BankKind::mean;
  Tensor features;                              // [N_e, d_e]
  std::optional<std::vector<GridPos>> positions;  // N_e entries when present

  std::size_t size() const { return features.empty() ? 0 : features.dim(0); }
  std::size_t dim() const { return features.empty() ? 0 : features.dim(1); }
  bool has_positions() const { return positions.has_value(); }
};

}  // namespace fod
