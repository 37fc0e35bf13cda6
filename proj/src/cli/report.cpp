#include "selfret/cli/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "selfret/error.hpp"

namespace fs = std::filesystem;

namespace selfret::cli {

namespace {

constexpr const char* kLogHeader = "epoch,bag_size,mean_reward,r_at_1_holdout,gt_loglik";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

bool looks_like_log(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  for (int i = 0; i < 2 && std::getline(in, line); ++i) {
    if (line == kLogHeader) return true;
  }
  return false;
}

}  // namespace

RunLog read_run_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  RunLog log;
  log.path = path;
  log.name = path.stem().string();
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::stringstream ss(line.substr(1));
      std::string kv;
      while (ss >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "schema_version") log.schema_version = std::atoi(value.c_str());
        if (key == "config_hash") log.config_hash = value;
      }
      continue;
    }
    if (!header) {
      if (line != kLogHeader) throw FormatError(path.string() + ": not a training log");
      header = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 5) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    }
    try {
      RunLog::Row r;
      r.epoch = std::stol(cells[0]);
      r.bag_size = std::stoul(cells[1]);
      r.mean_reward = std::stod(cells[2]);
      r.r_at_1 = std::stod(cells[3]);
      r.gt_loglik = std::stod(cells[4]);
      log.rows.push_back(r);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  if (!header) throw FormatError(path.string() + ": not a training log");
  if (log.rows.empty()) throw FormatError(path.string() + ": no rows");
  return log;
}

std::vector<RunLog> collect_run_logs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
        looks_like_log(entry.path())) {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<RunLog> logs;
  for (const auto& p : paths) {
    auto log = read_run_log(p);
    auto rel = fs::relative(p, dir);
    rel.replace_extension();
    log.name = rel.generic_string();
    logs.push_back(std::move(log));
  }
  return logs;
}

// ---------------------------------------------------------------------------

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::string& y2_label,
                          const std::vector<Series>& series) {
  const double w = 720, h = 420, left = 70, right = 70, top = 40, bottom = 60;
  const double pw = w - left - right, ph = h - top - bottom;
  Range xr, yl, yr;
  bool has_right = false;
  for (const auto& s : series) {
    for (double x : s.x) xr.add(x);
    for (double y : s.y) (s.right_axis ? yr : yl).add(y);
    has_right |= s.right_axis;
  }
  xr.settle();
  yl.settle();
  yr.settle();
  auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y, const Range& r) { return top + (1.0 - (y - r.lo) / (r.hi - r.lo)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title) << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double fy = yl.lo + (yl.hi - yl.lo) * i / 4.0;
    svg << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 18
        << "\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py(fy, yl) + 4
        << "\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
    svg << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(fy, yl)
        << "\" y2=\"" << py(fy, yl) << "\" stroke=\"#eee\"/>\n";
    if (has_right) {
      const double fr = yr.lo + (yr.hi - yr.lo) * i / 4.0;
      svg << "<text x=\"" << left + pw + 6 << "\" y=\"" << py(fr, yr) + 4 << "\">" << fmt(fr)
          << "</text>\n";
    }
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  svg << "<text transform=\"translate(18," << top + ph / 2
      << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  if (has_right) {
    svg << "<text transform=\"translate(" << w - 12 << "," << top + ph / 2
        << ") rotate(90)\" text-anchor=\"middle\">" << escape(y2_label) << "</text>\n";
  }

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const Range& r = s.right_axis ? yr : yl;
    const char* color = kPalette[i % (sizeof kPalette / sizeof *kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
        << (s.right_axis ? " stroke-dasharray=\"6 3\"" : "") << " points=\"";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (!std::isfinite(s.y[k])) continue;
      svg << fmt(px(s.x[k])) << ',' << fmt(py(s.y[k], r)) << ' ';
    }
    svg << "\"/>\n";
    const double ly = top + 14 + 16.0 * static_cast<double>(i);
    svg << "<line x1=\"" << left + 10 << "\" x2=\"" << left + 30 << "\" y1=\"" << ly
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\""
        << (s.right_axis ? " stroke-dasharray=\"6 3\"" : "") << "/>\n";
    svg << "<text x=\"" << left + 36 << "\" y=\"" << ly + 4 << "\">" << escape(s.label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

ReportFiles write_report(const std::vector<RunLog>& runs, const fs::path& out_dir,
                         bool force) {
  if (runs.empty()) throw DataError("no training logs to report");
  std::set<std::string> hashes;
  for (const auto& r : runs) hashes.insert(r.config_hash);
  if (hashes.size() > 1 && !force) {
    std::string list;
    for (const auto& h : hashes) list += (list.empty() ? "" : ", ") + (h.empty() ? "<none>" : h);
    throw PreconditionError("runs come from different configs (" + list +
                            "); pass --force to report them together");
  }
  fs::create_directories(out_dir);
  ReportFiles files;
  const std::string stamp_line = "# schema_version=1 config_hash=" +
                                 (hashes.size() == 1 ? *hashes.begin() : std::string("mixed"));

  {
    const auto p = out_dir / "summary.csv";
    std::ofstream out(p);
    out << stamp_line << '\n';
    out << "run,config_hash,epochs,initial_r_at_1,final_r_at_1,delta_r_at_1,"
           "initial_gt_loglik,final_gt_loglik,gt_loglik_change_pct,final_mean_reward\n";
    out << std::setprecision(10);
    for (const auto& r : runs) {
      const auto& a = r.rows.front();
      const auto& b = r.rows.back();
      const double pct = a.gt_loglik != 0.0
                             ? 100.0 * (b.gt_loglik - a.gt_loglik) / std::abs(a.gt_loglik)
                             : 0.0;
      out << r.name << ',' << r.config_hash << ',' << r.rows.size() - 1 << ',' << a.r_at_1
          << ',' << b.r_at_1 << ',' << b.r_at_1 - a.r_at_1 << ',' << a.gt_loglik << ','
          << b.gt_loglik << ',' << pct << ',' << b.mean_reward << '\n';
    }
    files.written.push_back(p);
  }
  {
    const auto p = out_dir / "curves.csv";
    std::ofstream out(p);
    out << stamp_line << '\n';
    out << "run,epoch,bag_size,mean_reward,r_at_1_holdout,gt_loglik\n";
    out << std::setprecision(10);
    for (const auto& r : runs) {
      for (const auto& row : r.rows) {
        out << r.name << ',' << row.epoch << ',' << row.bag_size << ',' << row.mean_reward
            << ',' << row.r_at_1 << ',' << row.gt_loglik << '\n';
      }
    }
    files.written.push_back(p);
  }

  auto per_epoch = [&](auto pick, bool include_initial) {
    std::vector<Series> out;
    for (const auto& r : runs) {
      Series s;
      s.label = r.name;
      for (const auto& row : r.rows) {
        if (row.epoch < 0 && !include_initial) continue;
        s.x.push_back(static_cast<double>(row.epoch + 1));
        s.y.push_back(pick(row));
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  auto emit = [&](const std::string& file, const std::string& svg) {
    const auto p = out_dir / file;
    std::ofstream(p) << svg;
    files.written.push_back(p);
  };
  emit("reward.svg",
       svg_line_plot("Mean training reward", "epoch", "mean reward", "",
                     per_epoch([](const RunLog::Row& r) { return r.mean_reward; }, false)));
  emit("r_at_1.svg",
       svg_line_plot("Held-out bag R@1", "epoch (0 = before fine-tuning)", "R@1", "",
                     per_epoch([](const RunLog::Row& r) { return r.r_at_1; }, true)));
  emit("gt_loglik.svg",
       svg_line_plot("Held-out GT log-likelihood", "epoch (0 = before fine-tuning)",
                     "mean log P(gt)", "",
                     per_epoch([](const RunLog::Row& r) { return r.gt_loglik; }, true)));

  std::vector<Series> both;
  for (const auto& r : runs) {
    Series a, b;
    a.label = r.name + " R@1";
    b.label = r.name + " log P(gt)";
    b.right_axis = true;
    for (const auto& row : r.rows) {
      a.x.push_back(static_cast<double>(row.epoch + 1));
      b.x.push_back(static_cast<double>(row.epoch + 1));
      a.y.push_back(row.r_at_1);
      b.y.push_back(row.gt_loglik);
    }
    both.push_back(std::move(a));
    both.push_back(std::move(b));
  }
  emit("tradeoff.svg", svg_line_plot("Retrieval vs faithfulness", "epoch", "R@1",
                                     "mean log P(gt)", both));
  return files;
}

}  // namespace selfret::cli
