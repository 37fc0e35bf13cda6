#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "selfret/toy/trainer.hpp"

namespace selfret::cli {

/// One training log as written by write_train_log_csv. rows[0] is the
/// pre-training evaluation (epoch -1).
struct RunLog {
  std::string name;
  std::filesystem::path path;
  int schema_version = 0;
  std::string config_hash;
  struct Row {
    long epoch = 0;
    std::size_t bag_size = 0;
    double mean_reward = 0.0;
    double r_at_1 = 0.0;
    double gt_loglik = 0.0;
  };
  std::vector<Row> rows;
};

/// Throws FormatError when the file is not a training log.
RunLog read_run_log(const std::filesystem::path& path);

/// Every training log below `dir`, sorted by path. Runs are named by their
/// path relative to `dir`.
std::vector<RunLog> collect_run_logs(const std::filesystem::path& dir);

struct ReportFiles {
  std::vector<std::filesystem::path> written;
};

/// Writes summary.csv, curves.csv and SVG plots of reward, R@1 and GT
/// log-likelihood per epoch, plus a two-axis R@1 / log-likelihood plot.
/// Throws PreconditionError on mixed config hashes unless `force`.
ReportFiles write_report(const std::vector<RunLog>& runs,
                         const std::filesystem::path& out_dir, bool force);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool right_axis = false;
};

/// Static SVG line plot; series flagged right_axis use a second y axis.
std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::string& y2_label,
                          const std::vector<Series>& series);

}  // namespace selfret::cli
