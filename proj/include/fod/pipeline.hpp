// SPDX-License-Identifier: Apache-2.0
//
// End-to-end workflow over a synthetic dataset: features, banks, training,
// scoring and evaluation, plus the on-disk artifacts of a run directory.

#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fod/config.hpp"
#include "fod/tensor_io.hpp"

namespace fod {

/// Features of every image per level (index 0 = 8x, 1 = 16x).
struct DatasetFeatures {
  std::array<std::vector<FeatureSequence>, 2> train;
  std::array<std::vector<FeatureSequence>, 2> test;
};

DatasetFeatures extract_dataset(const Dataset& ds, const RunConfig& cfg);

std::array<BankProvider, 2> build_banks(const DatasetFeatures& f, const RunConfig& cfg);

struct TrainedLevel {
  LevelModel model;
  std::vector<EpochRecord> history;
};

std::array<TrainedLevel, 2> train_models(const DatasetFeatures& f, const std::array<BankProvider, 2>& banks,
                                         const RunConfig& cfg, const EpochCallback& on_epoch = {});

/// Per-level, per-test-image Rec and Div patch scores from a single forward pass.
struct PatchScores {
  std::array<std::vector<Tensor>, 2> rec, div;
  std::array<GridGeometry, 2> geom;
};

PatchScores score_patches(const DatasetFeatures& f, const std::array<BankProvider, 2>& banks,
                          const std::array<LevelModel, 2>& models);

struct EvalResult {
  std::vector<double> image_scores;
  std::vector<AnomalyMap> maps;  // fused, optionally smoothed
  double image_auroc = 0.0;
  double pixel_auroc = 0.0;
};

EvalResult evaluate(const PatchScores& s, const Dataset& ds, Criterion criterion, double smooth_sigma);

/// `image_auroc=<f> pixel_auroc=<f>` with 6 decimals.
std::string eval_line(const EvalResult& r);

/// Complete in-memory run: generate, extract, bank, train, score, evaluate.
EvalResult run_pipeline(const RunConfig& cfg, const EpochCallback& on_epoch = {});

struct AblationRow {
  Views views;
  bool entropy;
  BankKind bank;
  Criterion criterion;
  double image_auroc;
  double pixel_auroc;
};

/// views x entropy x bank x criterion grid from the config's ablate_* lists.
/// Runs that the grid cannot distinguish (no inter branch, or no supervision) share one training.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Dataset& ds,
                                      const std::function<void(const std::string&)>& log = {});
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

// Artifacts.

NamedTensors dataset_to_table(const Dataset& ds);
Dataset dataset_from_table(const NamedTensors& t);

NamedTensors model_to_table(const LevelModel& m);
/// Overwrites every parameter of m from the table; shapes must match exactly.
void load_model_table(LevelModel& m, const NamedTensors& t);

NamedTensors provider_to_table(const BankProvider& p);
BankProvider provider_from_table(const NamedTensors& t);

/// File names inside a run directory.
namespace run_files {
inline constexpr const char* kDataset = "dataset.fodt";
std::string bank(int level);
std::string model(int level);
std::string history(int level);
inline constexpr const char* kScores = "scores.fodt";
inline constexpr const char* kImageScores = "image_scores.csv";
inline constexpr const char* kAblation = "ablation.csv";
}  // namespace run_files

}  // namespace fod
