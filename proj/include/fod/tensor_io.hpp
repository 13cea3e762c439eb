// SPDX-License-Identifier: Apache-2.0
//
// Tensor container file.
//
//   magic "FODT" | version u8 (=1) | rank u8 | extents u32 LE x rank | payload f64 LE, row-major
//
// rank = 0 introduces a named-entry table instead of a single tensor:
//
//   count u32 | count x ( name_len u32 | name bytes | rank u8 (>=1) | extents | payload )

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fod/bank.hpp"
#include "fod/tensor.hpp"

namespace fod {

inline constexpr std::uint8_t kTensorFileVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(std::string_view bytes);
std::string encode_table(const NamedTensors& entries);
NamedTensors decode_table(std::string_view bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);
void write_table(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors read_table(const std::filesystem::path& path);

/// Looks up an entry by name; throws FormatError(offset 0) when missing.
const Tensor& table_entry(const NamedTensors& t, std::string_view name);
const Tensor* find_entry(const NamedTensors& t, std::string_view name);

/// Bank as a table: "kind" (scalar code), "features", optional "positions" [N_e, 2].
NamedTensors bank_to_table(const ReferenceBank& bank);
ReferenceBank bank_from_table(const NamedTensors& t);

}  // namespace fod
