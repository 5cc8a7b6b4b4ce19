#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "elx/metrics.hpp"
#include "elx/pipeline.hpp"
#include "elx/version.hpp"

namespace elx {

namespace detail {

inline std::pair<double, double> mean_sd(std::span<const double> v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var /= static_cast<double>(v.size());
  return {m, std::sqrt(var)};
}

/// Buffered report file, renamed into place on destruction so readers never
/// see a partial file.
class ReportFile {
 public:
  ReportFile(std::filesystem::path path, const std::string& config_hash) : path_(std::move(path)) {
    buf_ << "# " << kVersion << "\n";
    buf_ << "# config " << (config_hash.empty() ? "unhashed" : config_hash) << "\n";
  }
  ~ReportFile() {
    try {
      const std::filesystem::path tmp = path_.string() + ".tmp";
      {
        std::ofstream os(tmp);
        os << buf_.str();
      }
      std::filesystem::rename(tmp, path_);
    } catch (...) {
      // destructor must not throw; a failed report write leaves the tmp file
    }
  }
  template <typename T>
  ReportFile& operator<<(const T& v) {
    buf_ << v;
    return *this;
  }

 private:
  std::filesystem::path path_;
  std::ostringstream buf_;
};

inline ReportFile open_report(const std::filesystem::path& path, const std::string& config_hash) {
  return ReportFile(path, config_hash);
}

}  // namespace detail

/// Full metric bundle for one evaluated split.
struct EvalReport {
  std::string split;
  std::string config_hash;

  // regression (mean/sd across seeds)
  double mse_mean = 0, mse_sd = 0;
  double mae_mean = 0, mae_sd = 0;
  double nmse_mean = 0, nmse_sd = 0;
  double target_variance = 0;

  // uncertainty analyses on the combined ensemble predictions
  std::vector<std::pair<std::string, std::vector<double>>> sparsification_rows;  // name -> MAE at 25/50/75/100
  CalibrationTable calibration;
  std::vector<std::pair<std::string, std::pair<double, double>>> correlations;  // name -> (pearson, spearman)
  StratifiedReport stratified;
};

inline EvalReport build_regression_report(const EnsembleEvaluation& ev, const std::string& split,
                                          const std::string& config_hash, std::size_t calib_bins = 10) {
  EvalReport rep;
  rep.split = split;
  rep.config_hash = config_hash;
  std::vector<double> mses, maes, nmses;
  for (const auto& m : ev.per_seed) {
    mses.push_back(m.mse);
    maes.push_back(m.mae);
    nmses.push_back(m.normalized_mse);
  }
  std::tie(rep.mse_mean, rep.mse_sd) = detail::mean_sd(mses);
  std::tie(rep.mae_mean, rep.mae_sd) = detail::mean_sd(maes);
  std::tie(rep.nmse_mean, rep.nmse_sd) = detail::mean_sd(nmses);
  rep.target_variance = ev.target_sd * ev.target_sd;

  std::vector<double> abs_err(ev.mean.size());
  std::vector<double> sq_err(ev.mean.size());
  for (std::size_t i = 0; i < ev.mean.size(); ++i) {
    abs_err[i] = std::abs(ev.mean[i] - ev.targets[i]);
    sq_err[i] = abs_err[i] * abs_err[i];
  }
  std::vector<double> combined(ev.mean.size());
  for (std::size_t i = 0; i < combined.size(); ++i) combined[i] = ev.aleatoric[i] + ev.epistemic_ensemble[i];

  rep.sparsification_rows = {
      {"aleatoric_gaussian", sparsification(abs_err, ev.aleatoric)},
      {"epistemic_ensemble", sparsification(abs_err, ev.epistemic_ensemble)},
      {"epistemic_laplace", sparsification(abs_err, ev.epistemic_laplace)},
      {"aleatoric_plus_ensemble", sparsification(abs_err, combined)},
  };

  std::vector<double> sigma(ev.aleatoric.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = std::sqrt(std::max(ev.aleatoric[i], 1e-300));
  rep.calibration = calibration_bins(ev.mean, sigma, ev.targets, std::min(calib_bins, sigma.size()));

  auto corr_pair = [&sq_err](std::span<const double> var) -> std::pair<double, double> {
    return {error_variance_correlation(sq_err, var), spearman_correlation(sq_err, var)};
  };
  rep.correlations = {
      {"aleatoric_gaussian", corr_pair(ev.aleatoric)},
      {"epistemic_ensemble", corr_pair(ev.epistemic_ensemble)},
      {"epistemic_laplace", corr_pair(ev.epistemic_laplace)},
      {"aleatoric_plus_ensemble", corr_pair(combined)},
  };
  return rep;
}

inline void write_regression_csv(const EvalReport& rep, const std::filesystem::path& dir) {
  auto os = detail::open_report(dir / ("regression_" + rep.split + ".csv"), rep.config_hash);
  os << "split,mse_mean,mse_sd,mae_mean,mae_sd,target_variance,normalized_mse_mean,normalized_mse_sd\n";
  os << rep.split << "," << rep.mse_mean << "," << rep.mse_sd << "," << rep.mae_mean << "," << rep.mae_sd << ","
     << rep.target_variance << "," << rep.nmse_mean << "," << rep.nmse_sd << "\n";
}

inline void write_sparsification_csv(const EvalReport& rep, const std::filesystem::path& dir) {
  auto os = detail::open_report(dir / ("sparsification_" + rep.split + ".csv"), rep.config_hash);
  os << "uncertainty,mae_25,mae_50,mae_75,mae_100\n";
  for (const auto& [name, row] : rep.sparsification_rows) {
    os << name;
    for (double v : row) os << "," << v;
    os << "\n";
  }
}

inline void write_calibration_csv(const EvalReport& rep, const std::filesystem::path& dir) {
  auto os = detail::open_report(dir / ("calibration_" + rep.split + ".csv"), rep.config_hash);
  os << "bin,mean_predicted_sd,mean_abs_error,count\n";
  for (std::size_t b = 0; b < rep.calibration.bins.size(); ++b) {
    const auto& bin = rep.calibration.bins[b];
    os << b + 1 << "," << bin.mean_sigma << "," << bin.mean_abs_error << "," << bin.count << "\n";
  }
  os << "# coverage_2sigma," << rep.calibration.coverage_2sigma << "\n";
}

inline void write_correlation_csv(const EvalReport& rep, const std::filesystem::path& dir) {
  auto os = detail::open_report(dir / ("correlation_" + rep.split + ".csv"), rep.config_hash);
  os << "uncertainty,pearson,spearman\n";
  for (const auto& [name, pr] : rep.correlations) os << name << "," << pr.first << "," << pr.second << "\n";
}

inline void write_stratified_csv(const EvalReport& rep, const std::filesystem::path& dir) {
  auto os = detail::open_report(dir / ("stratified_" + rep.split + ".csv"), rep.config_hash);
  os << "stratum,age_lo,age_hi,count,mae,target_sd,empty\n";
  for (const auto& s : rep.stratified.age_deciles)
    os << s.name << "," << s.lo << "," << s.hi << "," << s.count << "," << s.mae << "," << s.target_sd << ","
       << (s.empty_flag ? 1 : 0) << "\n";
  for (const auto& s : rep.stratified.by_sex)
    os << s.name << ",,," << s.count << "," << s.mae << "," << s.target_sd << "," << (s.empty_flag ? 1 : 0) << "\n";
}

inline void write_auroc_csv(const std::string& split, const std::string& config_hash, int requested_k,
                            std::span<const double> threshold_means, std::span<const double> threshold_sds,
                            double macro_mean, double macro_sd, const std::vector<double>& bounds,
                            const std::filesystem::path& dir) {
  auto os = detail::open_report(dir / ("auroc_" + split + ".csv"), config_hash);
  os << "threshold,bound,auroc_mean,auroc_sd\n";
  for (std::size_t t = 0; t < threshold_means.size(); ++t) {
    std::string name = "y_le_" + std::to_string(t + 1);
    if (requested_k == 2) name = t == 0 ? "hypo" : "hyper";
    os << name << "," << bounds[t] << "," << threshold_means[t] << "," << threshold_sds[t] << "\n";
  }
  os << "macro," << "" << "," << macro_mean << "," << macro_sd << "\n";
}

inline void write_ood_csv(const std::vector<std::string>& row_names,
                          const std::vector<std::array<double, 4>>& rows,  // mae, AG, EE, EL
                          const std::string& config_hash, const std::filesystem::path& dir) {
  auto os = detail::open_report(dir / "ood.csv", config_hash);
  os << "perturbation,mae,aleatoric_gaussian,epistemic_ensemble,epistemic_laplace\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    os << row_names[i] << "," << rows[i][0] << "," << rows[i][1] << "," << rows[i][2] << "," << rows[i][3] << "\n";
}

inline void write_summary(const EvalReport& rep, const std::filesystem::path& dir) {
  auto os = detail::open_report(dir / ("summary_" + rep.split + ".txt"), rep.config_hash);
  os << "split: " << rep.split << "\n";
  os << "MSE (sd):            " << rep.mse_mean << " (" << rep.mse_sd << ")\n";
  os << "MAE (sd):            " << rep.mae_mean << " (" << rep.mae_sd << ")\n";
  os << "target variance:     " << rep.target_variance << "\n";
  os << "normalized MSE (sd): " << rep.nmse_mean << " (" << rep.nmse_sd << ")\n";
  os << "coverage @ 2 sigma:  " << rep.calibration.coverage_2sigma << "\n";
  for (const auto& [name, row] : rep.sparsification_rows) {
    os << "sparsification " << name << ":";
    for (double v : row) os << " " << v;
    os << "\n";
  }
  for (const auto& [name, pr] : rep.correlations)
    os << "corr(err^2, " << name << "): pearson " << pr.first << " spearman " << pr.second << "\n";
}

inline void write_full_report(const EvalReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_regression_csv(rep, dir);
  write_sparsification_csv(rep, dir);
  write_calibration_csv(rep, dir);
  write_correlation_csv(rep, dir);
  write_stratified_csv(rep, dir);
  write_summary(rep, dir);
}

}  // namespace elx
