// SPDX-License-Identifier: Apache-2.0
//
// fod: command-line workflow over a run directory.
//
//   fod gen        --out DIR          synthetic dataset        -> dataset.fodt
//   fod build-bank --out DIR          reference banks          -> bank_l8.fodt, bank_l16.fodt
//   fod train      --out DIR          per-level models         -> model_l*.fodt, history_l*.csv
//   fod score      --out DIR          patch scores             -> scores.fodt, image_scores.csv
//   fod eval       --out DIR          prints image_auroc=<f> pixel_auroc=<f>
//   fod ablate     --out DIR          views x entropy x bank x criterion -> ablation.csv
//
// Errors print one line `error: <kind>: <message>` to stderr. Usage errors exit 2, others 1.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "fod/errors.hpp"
#include "fod/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fod;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::string bank, criterion, entropy, opt;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.bank.empty()) cfg.set("bank", o.bank);
  if (!o.criterion.empty()) cfg.set("criterion", o.criterion);
  if (!o.entropy.empty()) cfg.set("entropy", o.entropy);
  if (!o.opt.empty()) cfg.set("opt", o.opt);
  cfg.validate();
  return cfg;
}

fs::path run_dir(const Options& o) {
  fs::create_directories(o.out);
  return o.out;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path p = dir / run_files::kDataset;
  if (!fs::exists(p)) throw UsageError(p.string() + " not found; run `fod gen` first");
  return dataset_from_table(read_table(p));
}

/// Loads the stored banks when they match the configured kind, otherwise builds and stores them.
std::array<BankProvider, 2> obtain_banks(const fs::path& dir, const DatasetFeatures& f, const RunConfig& cfg) {
  std::array<BankProvider, 2> banks;
  bool stored = true;
  for (int l = 0; l < 2; ++l) {
    const fs::path p = dir / run_files::bank(kLevels[l]);
    if (!fs::exists(p)) {
      stored = false;
      break;
    }
    banks[l] = provider_from_table(read_table(p));
    if (banks[l].kind() != cfg.train.bank.kind) {
      stored = false;
      break;
    }
  }
  if (stored) return banks;
  banks = build_banks(f, cfg);
  for (int l = 0; l < 2; ++l) write_table(dir / run_files::bank(kLevels[l]), provider_to_table(banks[l]));
  return banks;
}

std::array<LevelModel, 2> load_models(const fs::path& dir, const RunConfig& cfg) {
  std::array<LevelModel, 2> models;
  for (int l = 0; l < 2; ++l) {
    const fs::path p = dir / run_files::model(kLevels[l]);
    if (!fs::exists(p)) throw UsageError(p.string() + " not found; run `fod train` first");
    models[l] = init_level_model(cfg.train_config(), kLevels[l]);
    load_model_table(models[l], read_table(p));
  }
  return models;
}

NamedTensors scores_to_table(const PatchScores& s) {
  NamedTensors t;
  for (int l = 0; l < 2; ++l) {
    const std::string suffix = "_l" + std::to_string(kLevels[l]);
    t.emplace_back("geom" + suffix, Tensor::vector({static_cast<double>(s.geom[l].height),
                                                    static_cast<double>(s.geom[l].width)}));
    for (std::size_t i = 0; i < s.rec[l].size(); ++i) {
      t.emplace_back("rec" + suffix + "_" + std::to_string(i), s.rec[l][i]);
      t.emplace_back("div" + suffix + "_" + std::to_string(i), s.div[l][i]);
    }
  }
  return t;
}

PatchScores scores_from_table(const NamedTensors& t, std::size_t n) {
  PatchScores s;
  for (int l = 0; l < 2; ++l) {
    const std::string suffix = "_l" + std::to_string(kLevels[l]);
    const Tensor& g = table_entry(t, "geom" + suffix);
    s.geom[l] = {static_cast<std::size_t>(g[0]), static_cast<std::size_t>(g[1])};
    for (std::size_t i = 0; i < n; ++i) {
      s.rec[l].push_back(table_entry(t, "rec" + suffix + "_" + std::to_string(i)));
      s.div[l].push_back(table_entry(t, "div" + suffix + "_" + std::to_string(i)));
    }
  }
  return s;
}

int cmd_gen(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = run_dir(o);
  const Dataset ds = generate_dataset(cfg.data_spec());
  write_table(dir / run_files::kDataset, dataset_to_table(ds));
  std::ofstream(dir / "config.txt") << cfg.to_text();
  std::cout << "wrote " << (dir / run_files::kDataset).string() << " train=" << ds.train.size()
            << " test=" << ds.test.size() << "\n";
  return 0;
}

int cmd_build_bank(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = run_dir(o);
  const Dataset ds = load_dataset(dir);
  const auto banks = build_banks(extract_dataset(ds, cfg), cfg);
  for (int l = 0; l < 2; ++l) {
    const fs::path p = dir / run_files::bank(kLevels[l]);
    write_table(p, provider_to_table(banks[l]));
    std::cout << "wrote " << p.string() << " kind=" << to_string(banks[l].kind()) << "\n";
  }
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = run_dir(o);
  const Dataset ds = load_dataset(dir);
  const DatasetFeatures f = extract_dataset(ds, cfg);
  const auto banks = obtain_banks(dir, f, cfg);
  const auto trained = train_models(f, banks, cfg, [&](int level, const EpochRecord& r) {
    if (r.epoch == 1 || r.epoch == cfg.train.epochs || r.epoch % 10 == 0)
      std::cerr << "level " << level << " epoch " << r.epoch << " l_rec=" << r.mean.l_rec << "\n";
  });
  for (int l = 0; l < 2; ++l) {
    write_table(dir / run_files::model(kLevels[l]), model_to_table(trained[l].model));
    std::ofstream hist(dir / run_files::history(kLevels[l]), std::ios::binary);
    write_history_csv(hist, trained[l].history);
    std::cout << "wrote " << (dir / run_files::model(kLevels[l])).string()
              << " final_l_rec=" << trained[l].history.back().mean.l_rec << "\n";
  }
  return 0;
}

PatchScores compute_scores(const fs::path& dir, const Dataset& ds, const RunConfig& cfg) {
  const DatasetFeatures f = extract_dataset(ds, cfg);
  const auto banks = obtain_banks(dir, f, cfg);
  return score_patches(f, banks, load_models(dir, cfg));
}

int cmd_score(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = run_dir(o);
  const Dataset ds = load_dataset(dir);
  const PatchScores s = compute_scores(dir, ds, cfg);
  write_table(dir / run_files::kScores, scores_to_table(s));
  const EvalResult r = evaluate(s, ds, cfg.criterion, cfg.smooth_sigma);
  std::ofstream csv(dir / run_files::kImageScores, std::ios::binary);
  csv << "image,label,kind,score\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", r.image_scores[i]);
    csv << i << ',' << ds.labels[i] << ',' << to_string(ds.kinds[i]) << ',' << buf << '\n';
  }
  std::cout << "wrote " << (dir / run_files::kScores).string() << " images=" << ds.test.size() << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = run_dir(o);
  const Dataset ds = load_dataset(dir);
  const fs::path sp = dir / run_files::kScores;
  const PatchScores s =
      fs::exists(sp) ? scores_from_table(read_table(sp), ds.test.size()) : compute_scores(dir, ds, cfg);
  const EvalResult r = evaluate(s, ds, cfg.criterion, cfg.smooth_sigma);
  std::cout << "criterion=" << to_string(cfg.criterion) << " images=" << ds.test.size() << "\n";
  std::cout << eval_line(r) << std::endl;
  return 0;
}

int cmd_ablate(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = run_dir(o);
  const Dataset ds = fs::exists(dir / run_files::kDataset) ? load_dataset(dir) : generate_dataset(cfg.data_spec());
  const auto rows = run_ablation(cfg, ds, [](const std::string& msg) { std::cerr << msg << "\n"; });
  const fs::path p = dir / run_files::kAblation;
  std::ofstream csv(p, std::ios::binary);
  write_ablation_csv(csv, rows);
  std::cout << "wrote " << p.string() << " rows=" << rows.size() << "\n";
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "error: " << kind << ": " << one_line(msg) << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correlation-supervised transformer anomaly detection on synthetic textures", "fod"};
  app.require_subcommand(1, 1);
  Options o;

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
    CLI::App* sub = nullptr;
  };
  Command commands[] = {
      {"gen", "Generate the synthetic dataset", cmd_gen},
      {"build-bank", "Build the reference banks", cmd_build_bank},
      {"train", "Train the per-level models", cmd_train},
      {"score", "Score the test images", cmd_score},
      {"eval", "Print image and pixel AUROC", cmd_eval},
      {"ablate", "Run the ablation grid and write a CSV", cmd_ablate},
  };
  for (auto& c : commands) {
    c.sub = app.add_subcommand(c.name, c.help);
    c.sub->add_option("--config", o.config, "key=value config file")->check(CLI::ExistingFile);
    c.sub->add_option("--seed", o.seed, "Master seed");
    c.sub->add_option("--out", o.out, "Run directory")->capture_default_str();
    c.sub->add_option("--bank", o.bank, "mean|nearest|coreset|prototype|codebook");
    c.sub->add_option("--criterion", o.criterion, "rec|div|recdiv");
    c.sub->add_option("--entropy", o.entropy, "on|off");
    c.sub->add_option("--opt", o.opt, "two-phase|direct");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    for (const auto& c : commands)
      if (c.sub->parsed()) return c.run(o);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return fail("usage", "no command given", 2);
}
