// elx: synthetic ECG electrolyte-regression experiments on the command line.
//
// Subcommands:
//   gen-data  generate a labeled corpus (manifest + per-record signal files)
//   train     fit one model per seed on a corpus
//   eval      evaluate checkpoints on a named split and emit report CSVs
//   ood       evaluate checkpoints under SNR / masking perturbations
//
// Exit codes: 0 ok, 1 user error (bad flags, bad config, missing files),
// 2 internal error.

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include "elx/config.hpp"
#include "elx/pipeline.hpp"
#include "elx/report.hpp"
#include "elx/version.hpp"

namespace fs = std::filesystem;
using namespace elx;

namespace {

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

GeneratorConfig generator_from_config(const Config& cfg) {
  GeneratorConfig g = GeneratorConfig::defaults_for(electrolyte_from_string(cfg.get_string("corpus.electrolyte")));
  g.n_patients = static_cast<int>(cfg.get_int("corpus.patients"));
  g.seed = static_cast<std::uint64_t>(cfg.get_int("corpus.seed", static_cast<std::int64_t>(g.seed)));
  g.conc_mean = cfg.get_double("corpus.concentration_mean", g.conc_mean);
  g.conc_sd = cfg.get_double("corpus.concentration_sd", g.conc_sd);
  g.t_amp_gain = cfg.get_double("corpus.t_amp_gain", g.t_amp_gain);
  g.qt_gain = cfg.get_double("corpus.qt_gain", g.qt_gain);
  g.label_noise_sd = cfg.get_double("corpus.label_noise_sd", g.label_noise_sd);
  g.ecg_noise_lo = cfg.get_double("corpus.ecg_noise_lo", g.ecg_noise_lo);
  g.ecg_noise_hi = cfg.get_double("corpus.ecg_noise_hi", g.ecg_noise_hi);
  g.baseline_amp = cfg.get_double("corpus.baseline_amp", g.baseline_amp);
  g.powerline_amp = cfg.get_double("corpus.powerline_amp", g.powerline_amp);
  g.draws_lo = static_cast<int>(cfg.get_int("corpus.draws_lo", g.draws_lo));
  g.draws_hi = static_cast<int>(cfg.get_int("corpus.draws_hi", g.draws_hi));
  g.ecgs_per_draw_lo = static_cast<int>(cfg.get_int("corpus.ecgs_per_draw_lo", g.ecgs_per_draw_lo));
  g.ecgs_per_draw_hi = static_cast<int>(cfg.get_int("corpus.ecgs_per_draw_hi", g.ecgs_per_draw_hi));
  g.age_sd_ramp = cfg.get_int("corpus.age_sd_ramp", g.age_sd_ramp ? 1 : 0) != 0;
  return g;
}

TrainConfig train_from_config(const Config& cfg) {
  TrainConfig t;
  t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.epochs));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch", t.batch_size));
  t.lr = cfg.get_double("train.lr", t.lr);
  t.plateau_factor = cfg.get_double("train.lr_factor", t.plateau_factor);
  t.patience = static_cast<int>(cfg.get_int("train.patience", t.patience));
  t.min_lr = cfg.get_double("train.min_lr", t.min_lr);
  return t;
}

BackboneConfig backbone_from_config(const Config& cfg) {
  const std::string preset = cfg.get_string("backbone.preset", "desk");
  BackboneConfig b = preset == "small" ? BackboneConfig::small() : BackboneConfig::desk_default();
  if (cfg.has("backbone.kernel")) b.kernel = static_cast<int>(cfg.get_int("backbone.kernel"));
  if (cfg.has("backbone.dropout")) b.dropout = cfg.get_double("backbone.dropout");
  if (cfg.has("backbone.channels")) {
    b.channels.clear();
    b.downsample.clear();
    std::istringstream cs(cfg.get_string("backbone.channels"));
    std::istringstream ds(cfg.get_string("backbone.downsample"));
    for (std::string tok; std::getline(cs, tok, ',');) b.channels.push_back(std::stoi(tok));
    for (std::string tok; std::getline(ds, tok, ',');) b.downsample.push_back(std::stoi(tok));
  }
  b.validate();
  return b;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::istringstream is(csv);
  for (std::string tok; std::getline(is, tok, ',');) seeds.push_back(std::stoull(tok));
  if (seeds.empty()) throw UserError("--seeds: need at least one seed");
  return seeds;
}

std::vector<fs::path> parse_paths(const std::string& csv) {
  std::vector<fs::path> out;
  std::istringstream is(csv);
  for (std::string tok; std::getline(is, tok, ',');) out.push_back(tok);
  return out;
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::istringstream is(csv);
  for (std::string tok; std::getline(is, tok, ',');) out.push_back(std::stod(tok));
  return out;
}

int worker_count() {
  if (const char* env = std::getenv("ELX_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  const Config cfg = Config::load(config_path);
  const GeneratorConfig gen = generator_from_config(cfg);
  const GeneratedCorpus corpus = generate_dataset(gen);
  write_corpus(corpus, out_dir, cfg.hash());
  std::cout << "wrote " << corpus.records.size() << " records to " << out_dir << "\n"
            << "splits: train " << corpus.splits.train.size() << ", validation " << corpus.splits.validation.size()
            << ", random-test " << corpus.splits.random_test.size() << ", temporal-test "
            << corpus.splits.temporal_test.size() << "\n"
            << "bayes-optimal MAE (random-test): " << corpus.bayes_mae_random_test << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& head_name, int classes, const std::string& seeds_csv,
              const std::string& out_dir, const std::string& config_path) {
  const bool ridge = head_name == "ridge";
  if (!ridge && head_name != "direct" && head_name != "gaussian" && head_name != "classification" &&
      head_name != "ordinal")
    throw UserError("--head must be one of direct|gaussian|classification|ordinal|ridge");
  const bool class_head = head_name == "classification" || head_name == "ordinal";
  if (class_head && classes < 2) throw UserError("--classes k >= 2 is required for " + head_name);
  if (!class_head && classes != 0) throw UserError("--classes is only meaningful for classification/ordinal heads");

  Config cfg;
  if (!config_path.empty()) cfg = Config::load(config_path);
  const std::string hash = config_path.empty() ? "" : cfg.hash();

  const PreparedCorpus data = load_corpus(data_dir);
  fs::create_directories(out_dir);

  if (ridge) {
    const fs::path ckpt_path = fs::path(out_dir) / "ridge.ckpt";
    if (fs::exists(ckpt_path)) {
      std::cout << "skip ridge (checkpoint exists)\n";
      return 0;
    }
    const auto components = static_cast<std::size_t>(cfg.get_int("ridge.pca_components", 256));
    const double lambda = cfg.get_double("ridge.lambda", 1e-3);
    const Checkpoint ck = train_ridge(data, std::min(components, data.splits.train.size()), lambda, hash);
    save_checkpoint(ck, ckpt_path);
    std::cout << "wrote " << ckpt_path.string() << "\n";
    return 0;
  }

  const HeadKind head = head_from_string(head_name);
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_csv);
  TrainConfig base = train_from_config(cfg);
  const BackboneConfig backbone = backbone_from_config(cfg);

  // pending seeds only: reruns are resume-safe
  std::vector<std::uint64_t> pending;
  for (std::uint64_t s : seeds) {
    const fs::path p = fs::path(out_dir) / ("seed" + std::to_string(s) + ".ckpt");
    if (fs::exists(p))
      std::cout << "skip seed " << s << " (checkpoint exists)\n";
    else
      pending.push_back(s);
  }

  const int workers = std::min<int>(worker_count(), static_cast<int>(pending.size()));
  std::vector<std::string> errors(pending.size());
  auto run_seed = [&](std::size_t i) {
    try {
      TrainConfig tc = base;
      tc.seed = pending[i];
      const Checkpoint ck = train_run(data, head, class_head ? classes : 0, backbone, tc, hash);
      save_checkpoint(ck, fs::path(out_dir) / ("seed" + std::to_string(pending[i]) + ".ckpt"));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < pending.size(); ++i) run_seed(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < pending.size(); i = next.fetch_add(1)) run_seed(i);
      });
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (!errors[i].empty()) throw std::runtime_error("seed " + std::to_string(pending[i]) + ": " + errors[i]);
    std::cout << "trained seed " << pending[i] << "\n";
  }
  return 0;
}

std::vector<Checkpoint> load_checkpoints(const std::string& csv) {
  const std::vector<fs::path> paths = parse_paths(csv);
  if (paths.empty()) throw UserError("--checkpoints: need at least one checkpoint");
  std::vector<Checkpoint> out;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw UserError("checkpoint not found: " + p.string());
    out.push_back(load_checkpoint(p));
  }
  return out;
}

int cmd_eval(const std::string& ckpts_csv, const std::string& data_dir, const std::string& split,
             const std::string& out_dir) {
  if (split != "random-test" && split != "temporal-test") throw UserError("--split must be random-test or temporal-test");
  std::vector<Checkpoint> ckpts = load_checkpoints(ckpts_csv);
  const PreparedCorpus data = load_corpus(data_dir);
  const auto idx = data.split(split);
  if (idx.empty()) throw UserError("split '" + split + "' is empty in this corpus");
  fs::create_directories(out_dir);
  const std::string hash = ckpts.front().config_hash;

  const HeadKind head = ckpts.front().head;
  if (ckpts.front().ridge_weights || head == HeadKind::direct) {
    const DirectEvaluation ev = evaluate_direct_models(ckpts, data, idx);
    EvalReport rep;
    rep.split = split;
    rep.config_hash = hash;
    std::vector<double> mses, maes, nmses;
    for (const auto& m : ev.per_seed) {
      mses.push_back(m.mse);
      maes.push_back(m.mae);
      nmses.push_back(m.normalized_mse);
    }
    std::tie(rep.mse_mean, rep.mse_sd) = elx::detail::mean_sd(mses);
    std::tie(rep.mae_mean, rep.mae_sd) = elx::detail::mean_sd(maes);
    std::tie(rep.nmse_mean, rep.nmse_sd) = elx::detail::mean_sd(nmses);
    rep.target_variance = ev.target_sd * ev.target_sd;
    std::vector<double> ages;
    std::vector<int> sexes;
    for (std::size_t i : idx) {
      ages.push_back(data.meta[i].age);
      sexes.push_back(data.meta[i].sex);
    }
    rep.stratified = stratified_mae(ev.mean, ev.targets, ages, sexes);
    write_regression_csv(rep, out_dir);
    write_stratified_csv(rep, out_dir);
    std::cout << "MAE (sd): " << rep.mae_mean << " (" << rep.mae_sd << ")\n";
    return 0;
  }
  if (head == HeadKind::gaussian) {
    const EnsembleEvaluation ev = evaluate_gaussian_ensemble(ckpts, data, idx);
    EvalReport rep = build_regression_report(ev, split, hash);
    std::vector<double> ages;
    std::vector<int> sexes;
    for (std::size_t i : idx) {
      ages.push_back(data.meta[i].age);
      sexes.push_back(data.meta[i].sex);
    }
    rep.stratified = stratified_mae(ev.mean, ev.targets, ages, sexes);
    write_full_report(rep, out_dir);
    std::cout << "MAE (sd): " << rep.mae_mean << " (" << rep.mae_sd << ")\n";
    return 0;
  }
  // class-based heads: per-seed cumulative AUROCs
  std::vector<std::vector<double>> per_seed_auroc;
  std::vector<double> per_seed_macro, per_seed_mae;
  for (Checkpoint& ck : ckpts) {
    const ClassEvaluation ev = evaluate_class_model(ck, data, idx);
    per_seed_auroc.push_back(ev.roc.per_threshold);
    per_seed_macro.push_back(ev.roc.macro);
    per_seed_mae.push_back(ev.decoded_mae);
  }
  const std::size_t n_thr = per_seed_auroc.front().size();
  std::vector<double> thr_mean(n_thr), thr_sd(n_thr);
  for (std::size_t t = 0; t < n_thr; ++t) {
    std::vector<double> col;
    for (const auto& row : per_seed_auroc)
      if (std::isfinite(row[t])) col.push_back(row[t]);
    std::tie(thr_mean[t], thr_sd[t]) = elx::detail::mean_sd(col);
  }
  const auto [macro_mean, macro_sd] = elx::detail::mean_sd(per_seed_macro);
  const auto [mae_mean, mae_sd] = elx::detail::mean_sd(per_seed_mae);
  write_auroc_csv(split, hash, ckpts.front().codec.discretizer->requested_k, thr_mean, thr_sd, macro_mean, macro_sd,
                  ckpts.front().codec.discretizer->bounds, out_dir);
  {
    auto os = elx::detail::open_report(fs::path(out_dir) / ("class_mae_" + split + ".csv"), hash);
    os << "decoded_mae_mean,decoded_mae_sd\n" << mae_mean << "," << mae_sd << "\n";
  }
  std::cout << "AUmROC (sd): " << macro_mean << " (" << macro_sd << ")\n";
  return 0;
}

int cmd_ood(const std::string& ckpts_csv, const std::string& data_dir, const std::string& snr_csv,
            const std::string& mask_csv, const std::string& out_dir) {
  std::vector<Checkpoint> ckpts = load_checkpoints(ckpts_csv);
  if (ckpts.front().head != HeadKind::gaussian) throw UserError("ood requires gaussian-head checkpoints");
  const PreparedCorpus data = load_corpus(data_dir);
  const auto idx = data.split("random-test");
  if (idx.empty()) throw UserError("random-test split is empty in this corpus");
  fs::create_directories(out_dir);

  std::vector<Perturbation> perts{{}};
  for (double s : parse_doubles(snr_csv.empty() ? "10,1" : snr_csv))
    perts.push_back({Perturbation::Kind::snr, s, 99});
  for (double p : parse_doubles(mask_csv.empty() ? "0.25,0.5,0.75" : mask_csv))
    perts.push_back({Perturbation::Kind::masking, p, 99});

  std::vector<std::string> names;
  std::vector<std::array<double, 4>> rows;
  for (const Perturbation& pert : perts) {
    const PreparedCorpus view = perturbed_view(data, idx, pert);
    const EnsembleEvaluation ev = evaluate_gaussian_ensemble(ckpts, view, view.splits.random_test);
    double ag = 0, ee = 0, el = 0;
    for (std::size_t i = 0; i < ev.mean.size(); ++i) {
      ag += ev.aleatoric[i];
      ee += ev.epistemic_ensemble[i];
      el += ev.epistemic_laplace[i];
    }
    const double n = static_cast<double>(ev.mean.size());
    names.push_back(pert.name());
    rows.push_back({ev.combined.mae, ag / n, ee / n, el / n});
  }
  write_ood_csv(names, rows, ckpts.front().config_hash, out_dir);
  std::cout << "wrote " << (fs::path(out_dir) / "ood.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic ECG electrolyte regression experiments"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, head, seeds_csv = "0", ckpts_csv, split = "random-test";
  std::string snr_csv, mask_csv;
  int classes = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled corpus");
  gen->add_option("--config", config_path, "generator config file")->required();
  gen->add_option("--out", out_dir, "output corpus directory")->required();

  auto* train = app.add_subcommand("train", "train one model per seed");
  train->add_option("data", data_dir, "corpus directory (with manifest.txt)")->required();
  train->add_option("--head", head, "direct|gaussian|classification|ordinal|ridge")->required();
  train->add_option("--classes", classes, "interval count k for class-based heads");
  train->add_option("--seeds", seeds_csv, "comma-separated training seeds (default 0)");
  train->add_option("--out", out_dir, "checkpoint output directory")->required();
  train->add_option("--config", config_path, "training config file (optional)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on a split");
  eval_cmd->add_option("--checkpoints", ckpts_csv, "comma-separated checkpoint paths")->required();
  eval_cmd->add_option("--data", data_dir, "corpus directory")->required();
  eval_cmd->add_option("--split", split, "random-test|temporal-test");
  eval_cmd->add_option("--out", out_dir, "report output directory")->required();

  auto* ood = app.add_subcommand("ood", "evaluate under SNR / masking perturbations");
  ood->add_option("--checkpoints", ckpts_csv, "comma-separated gaussian checkpoints")->required();
  ood->add_option("--data", data_dir, "corpus directory")->required();
  ood->add_option("--snr", snr_csv, "comma-separated SNR levels (default 10,1)");
  ood->add_option("--mask", mask_csv, "comma-separated mask proportions (default 0.25,0.5,0.75)");
  ood->add_option("--out", out_dir, "report output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
    if (train->parsed()) return cmd_train(data_dir, head, classes, seeds_csv, out_dir, config_path);
    if (eval_cmd->parsed()) return cmd_eval(ckpts_csv, data_dir, split, out_dir);
    if (ood->parsed()) return cmd_ood(ckpts_csv, data_dir, snr_csv, mask_csv, out_dir);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
