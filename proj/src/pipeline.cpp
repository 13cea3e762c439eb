// SPDX-License-Identifier: Apache-2.0
#include "fod/pipeline.hpp"

#include <cstdio>
#include <map>
#include <ostream>

#include "fod/errors.hpp"

namespace fod {

DatasetFeatures extract_dataset(const Dataset& ds, const RunConfig& cfg) {
  if (ds.train.empty() || ds.test.empty()) throw ConfigError("dataset has no train or test images");
  const FeatureExtractor fx(ds.train[0].dim(0), cfg.proj_dim, cfg.extractor_seed(), cfg.patch_context);
  DatasetFeatures f;
  auto put = [&](const std::vector<Tensor>& images, std::array<std::vector<FeatureSequence>, 2>& out) {
    for (const auto& img : images) {
      auto levels = fx.extract(img);
      for (int l = 0; l < 2; ++l) out[l].push_back(std::move(levels[l]));
    }
  };
  put(ds.train, f.train);
  put(ds.test, f.test);
  if (cfg.standardize)
    for (int l = 0; l < 2; ++l) {
      const FeatureStandardizer st = FeatureStandardizer::fit(f.train[l]);
      for (auto& x : f.train[l]) st.apply(x);
      for (auto& x : f.test[l]) st.apply(x);
    }
  return f;
}

std::array<BankProvider, 2> build_banks(const DatasetFeatures& f, const RunConfig& cfg) {
  std::array<BankProvider, 2> out;
  for (int l = 0; l < 2; ++l) out[l] = BankProvider(make_stack(f.train[l]), cfg.train.bank, cfg.bank_seed(kLevels[l]));
  return out;
}

std::array<TrainedLevel, 2> train_models(const DatasetFeatures& f, const std::array<BankProvider, 2>& banks,
                                         const RunConfig& cfg, const EpochCallback& on_epoch) {
  const TrainConfig tc = cfg.train_config();
  std::array<TrainedLevel, 2> out;
  for (int l = 0; l < 2; ++l) {
    auto res = train_level(f.train[l], banks[l], tc, kLevels[l], on_epoch);
    out[l] = {std::move(res.model), std::move(res.history)};
  }
  return out;
}

PatchScores score_patches(const DatasetFeatures& f, const std::array<BankProvider, 2>& banks,
                          const std::array<LevelModel, 2>& models) {
  PatchScores s;
  for (int l = 0; l < 2; ++l) {
    ReferenceBank scratch;
    for (const auto& x : f.test[l]) {
      const ForwardTrace tr = forward(x, banks[l].bank_for(x, scratch), models[l]);
      s.rec[l].push_back(rec_scores(tr, x));
      s.div[l].push_back(div_scores(tr));
      s.geom[l] = x.geom;
    }
  }
  return s;
}

EvalResult evaluate(const PatchScores& s, const Dataset& ds, Criterion criterion, double smooth_sigma) {
  const std::size_t n = ds.test.size();
  if (s.rec[0].size() != n || s.rec[1].size() != n)
    throw DimensionError("evaluate: " + std::to_string(s.rec[0].size()) + " scored images for " +
                         std::to_string(n) + " test images");
  const std::size_t H = ds.masks[0].dim(0), W = ds.masks[0].dim(1);

  std::array<std::vector<AnomalyMap>, 2> level_maps;
  for (int l = 0; l < 2; ++l)
    for (std::size_t i = 0; i < n; ++i) {
      Tensor p;
      switch (criterion) {
        case Criterion::rec: p = s.rec[l][i]; break;
        case Criterion::div: p = s.div[l][i]; break;
        case Criterion::recdiv: p = combine_rec_div(s.rec[l][i], s.div[l][i]); break;
      }
      level_maps[l].push_back(to_map(p, s.geom[l], H, W, kLevels[l]));
    }
  const std::array<LevelRange, 2> ranges{level_range(level_maps[0]), level_range(level_maps[1])};

  EvalResult r;
  std::vector<double> pixels;
  std::vector<int> pixel_labels;
  pixels.reserve(n * H * W);
  pixel_labels.reserve(n * H * W);
  for (std::size_t i = 0; i < n; ++i) {
    const std::array<AnomalyMap, 2> pair{level_maps[0][i], level_maps[1][i]};
    AnomalyMap fused = smooth(fuse_levels(pair, ranges), smooth_sigma);
    r.image_scores.push_back(image_score(fused));
    for (std::size_t k = 0; k < H * W; ++k) {
      pixels.push_back(fused.values[k]);
      pixel_labels.push_back(ds.masks[i][k] > 0.5 ? 1 : 0);
    }
    r.maps.push_back(std::move(fused));
  }
  r.image_auroc = auroc(r.image_scores, ds.labels);
  r.pixel_auroc = auroc(pixels, pixel_labels);
  return r;
}

std::string eval_line(const EvalResult& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "image_auroc=%.6f pixel_auroc=%.6f", r.image_auroc, r.pixel_auroc);
  return buf;
}

EvalResult run_pipeline(const RunConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const Dataset ds = generate_dataset(cfg.data_spec());
  const DatasetFeatures f = extract_dataset(ds, cfg);
  const auto banks = build_banks(f, cfg);
  auto trained = train_models(f, banks, cfg, on_epoch);
  const PatchScores s = score_patches(f, banks, {std::move(trained[0].model), std::move(trained[1].model)});
  return evaluate(s, ds, cfg.criterion, cfg.smooth_sigma);
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const Dataset& ds,
                                      const std::function<void(const std::string&)>& log) {
  base.validate();
  const DatasetFeatures f = extract_dataset(ds, base);
  std::map<BankKind, std::array<BankProvider, 2>> banks;
  std::map<std::string, PatchScores> runs;
  std::vector<AblationRow> rows;

  for (Views views : base.ablate_views)
    for (bool entropy : base.ablate_entropy)
      for (BankKind kind : base.ablate_banks) {
        RunConfig cfg = base;
        cfg.train.model.views = views;
        cfg.train.entropy = entropy;
        cfg.train.bank.kind = kind;
        // Only settings that change the trained model get their own run.
        const std::string key = std::string(to_string(views)) + "/" +
                                (views == Views::patch ? "-" : std::string(on_off(entropy))) + "/" +
                                (has_inter_branch(views) ? std::string(to_string(kind)) : "-");
        auto it = runs.find(key);
        if (it == runs.end()) {
          if (log) log("ablate: training " + key);
          auto bit = banks.find(kind);
          if (bit == banks.end()) bit = banks.emplace(kind, build_banks(f, cfg)).first;
          auto trained = train_models(f, bit->second, cfg);
          it = runs.emplace(key, score_patches(f, bit->second,
                                               {std::move(trained[0].model), std::move(trained[1].model)}))
                   .first;
        }
        for (Criterion c : base.ablate_criteria) {
          const EvalResult r = evaluate(it->second, ds, c, base.smooth_sigma);
          rows.push_back({views, entropy, kind, c, r.image_auroc, r.pixel_auroc});
        }
      }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "views,entropy,bank,criterion,image_auroc,pixel_auroc\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.image_auroc, r.pixel_auroc);
    os << to_string(r.views) << ',' << on_off(r.entropy) << ',' << to_string(r.bank) << ','
       << to_string(r.criterion) << ',' << buf << '\n';
  }
}

// Artifacts.

namespace {

Tensor stack_tensors(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw FormatError("cannot stack an empty list", 0);
  Shape shape{xs.size()};
  shape.insert(shape.end(), xs[0].shape().begin(), xs[0].shape().end());
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  for (const auto& x : xs) {
    if (!x.same_shape(xs[0])) throw DimensionError("stack: shapes differ");
    data.insert(data.end(), x.data().begin(), x.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<Tensor> unstack(const Tensor& t) {
  if (t.rank() < 2) throw FormatError("expected a stacked tensor of rank >= 2", 0);
  const Shape inner(t.shape().begin() + 1, t.shape().end());
  const std::size_t m = shape_numel(inner);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < t.dim(0); ++i)
    out.emplace_back(inner, std::vector<double>(t.data().begin() + i * m, t.data().begin() + (i + 1) * m));
  return out;
}

Tensor ints_to_tensor(const std::vector<int>& xs) {
  Tensor t(Shape{xs.size()});
  for (std::size_t i = 0; i < xs.size(); ++i) t[i] = xs[i];
  return t;
}

}  // namespace

NamedTensors dataset_to_table(const Dataset& ds) {
  std::vector<int> kinds;
  for (auto k : ds.kinds) kinds.push_back(static_cast<int>(k));
  return {{"train", stack_tensors(ds.train)},
          {"test", stack_tensors(ds.test)},
          {"masks", stack_tensors(ds.masks)},
          {"labels", ints_to_tensor(ds.labels)},
          {"kinds", ints_to_tensor(kinds)}};
}

Dataset dataset_from_table(const NamedTensors& t) {
  Dataset ds;
  ds.train = unstack(table_entry(t, "train"));
  ds.test = unstack(table_entry(t, "test"));
  ds.masks = unstack(table_entry(t, "masks"));
  const Tensor& labels = table_entry(t, "labels");
  const Tensor& kinds = table_entry(t, "kinds");
  if (labels.numel() != ds.test.size() || kinds.numel() != ds.test.size() || ds.masks.size() != ds.test.size())
    throw FormatError("dataset tables disagree on the test-set size", 0);
  for (std::size_t i = 0; i < labels.numel(); ++i) {
    ds.labels.push_back(static_cast<int>(labels[i]));
    const int k = static_cast<int>(kinds[i]);
    if (k < 0 || k > static_cast<int>(AnomalyKind::quadrant)) throw FormatError("bad anomaly kind code", 0);
    ds.kinds.push_back(static_cast<AnomalyKind>(k));
  }
  return ds;
}

NamedTensors model_to_table(const LevelModel& m) {
  NamedTensors t;
  for (const Param* p : m.params()) t.emplace_back(p->name(), p->value());
  return t;
}

void load_model_table(LevelModel& m, const NamedTensors& t) {
  const auto params = m.params();
  if (t.size() != params.size())
    throw FormatError("checkpoint has " + std::to_string(t.size()) + " entries, model has " +
                      std::to_string(params.size()) + " parameters",
                      0);
  for (Param* p : params) {
    const Tensor& v = table_entry(t, p->name());
    if (!v.same_shape(p->value()))
      throw FormatError("checkpoint entry '" + p->name() + "' has shape " + shape_str(v.shape()) + ", expected " +
                        shape_str(p->value().shape()),
                        0);
    p->mutable_value() = v;
  }
}

NamedTensors provider_to_table(const BankProvider& p) {
  if (!p.per_query()) return bank_to_table(p.fixed());
  return {{"kind", Tensor::scalar(static_cast<double>(BankKind::nearest))},
          {"stack", p.stack().features},
          {"window", Tensor::scalar(static_cast<double>(p.window()))}};
}

BankProvider provider_from_table(const NamedTensors& t) {
  if (table_entry(t, "kind")[0] != static_cast<double>(BankKind::nearest)) return BankProvider(bank_from_table(t));
  const Tensor& stack = table_entry(t, "stack");
  if (stack.rank() != 4) throw FormatError("nearest-bank stack must be rank 4", 0);
  BankOptions opts;
  opts.kind = BankKind::nearest;
  opts.nearest_window = static_cast<std::size_t>(table_entry(t, "window")[0]);
  return BankProvider(FeatureStack{stack, GridGeometry{stack.dim(1), stack.dim(2)}}, opts, 0);
}

namespace run_files {
std::string bank(int level) { return "bank_l" + std::to_string(level) + ".fodt"; }
std::string model(int level) { return "model_l" + std::to_string(level) + ".fodt"; }
std::string history(int level) { return "history_l" + std::to_string(level) + ".csv"; }
}  // namespace run_files

}  // namespace fod
