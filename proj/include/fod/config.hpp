// SPDX-License-Identifier: Apache-2.0
//
// Plain-text run configuration: one `key = value` per line, `#` starts a comment.
// Unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fod/scoring.hpp"
#include "fod/synthetic.hpp"
#include "fod/training.hpp"

namespace fod {

struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticSpec data;
  std::size_t proj_dim = 32;
  /// Feature windows twice the cell stride, overlapping neighbouring cells.
  bool patch_context = true;
  /// Standardize every feature dimension with training-set statistics before modelling.
  bool standardize = true;
  TrainConfig train;
  Criterion criterion = Criterion::recdiv;
  double smooth_sigma = 0.0;

  std::vector<Views> ablate_views{Views::patch, Views::intra, Views::inter, Views::full};
  std::vector<bool> ablate_entropy{true, false};
  std::vector<BankKind> ablate_banks{BankKind::mean, BankKind::nearest, BankKind::coreset, BankKind::prototype,
                                     BankKind::codebook};
  std::vector<Criterion> ablate_criteria{Criterion::rec, Criterion::div, Criterion::recdiv};

  /// Assigns one key; throws ConfigError for unknown keys or malformed values.
  void set(std::string_view key, std::string_view value);
  /// Every key with its current value, in a stable order, parseable by parse().
  std::string to_text() const;
  /// Seeds of the dataset, feature extractor, model training and banks, derived from `seed`.
  SyntheticSpec data_spec() const;
  std::uint64_t extractor_seed() const;
  TrainConfig train_config() const;
  std::uint64_t bank_seed(int level) const;

  void validate() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  static const std::vector<std::string>& keys();
};

std::string_view on_off(bool b);
bool parse_on_off(std::string_view s);

}  // namespace fod
