#include "hippofuse/report.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace hippofuse {

using nlohmann::json;

namespace {

std::string metric_cell(const json& reports, const char* set, const char* metric) {
  if (!reports.contains(set)) return "-";
  const json& rep = reports.at(set);
  if (!rep.contains(metric) || rep.at(metric).is_null()) return "-";
  const json& m = rep.at(metric);
  const double value = m.at("value").get<double>();
  const double half =
      (m.at("ci_high").get<double>() - m.at("ci_low").get<double>()) / 2.0;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3f +- %.3f", value, half);
  return buf;
}

}  // namespace

std::string render_report_table(const std::vector<RunView>& runs) {
  const char* sets[3] = {"test0", "test1", "test2"};
  const char* metrics[3] = {"acc", "sen", "spc"};
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"run", "pair", "input mode", "roi", "cfg"};
  for (const auto* m : metrics)
    for (const auto* s : sets) header.push_back(msg(m, " ", s));
  rows.push_back(header);

  for (const auto& run : runs) {
    std::vector<std::string> row;
    row.push_back(run.label);
    const json cfg = run.summary.value("config", json::object());
    const json rj = cfg.value("run", json::object());
    const json nj = cfg.value("network", json::object());
    row.push_back(rj.value("classifier_pair",
                           run.summary.value("classifier_pair", std::string("-"))));
    row.push_back(rj.value("input_mode",
                           run.summary.value("input_mode", std::string("-"))));
    row.push_back(nj.contains("roi_size") ? std::to_string(nj.at("roi_size").get<int>())
                                          : std::string("-"));
    row.push_back(nj.value("name", std::string("-")));
    const json reports = run.summary.value("reports", json::object());
    for (const auto* m : metrics)
      for (const auto* s : sets) row.push_back(metric_cell(reports, s, m));
    rows.push_back(std::move(row));
  }

  std::vector<std::size_t> widths(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c)
      widths[c] = std::max(widths[c], row[c].size());
  std::ostringstream out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      out << std::left << std::setw(static_cast<int>(widths[c]) + 2) << rows[r][c];
    }
    out << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w + 2;
      out << std::string(total, '-') << "\n";
    }
  }
  return out.str();
}

void write_curve_csvs(const std::filesystem::path& dir,
                      const std::vector<EvalRecord>& records) {
  std::filesystem::create_directories(dir);
  const char* names[5] = {"train_loss", "val_acc", "test0_acc", "test1_acc",
                          "test2_acc"};
  for (int c = 0; c < 5; ++c) {
    std::ofstream out(dir / msg(names[c], ".csv"), std::ios::trunc);
    if (!out) throw IoError(msg("cannot write curve csv in '", dir.string(), "'"));
    out << "iteration," << names[c] << "\n";
    char line[96];
    for (const auto& r : records) {
      const double v = c == 0   ? r.train_loss
                       : c == 1 ? r.val_acc
                       : c == 2 ? r.test0_acc
                       : c == 3 ? r.test1_acc
                                : r.test2_acc;
      std::snprintf(line, sizeof(line), "%ld,%.10g\n", r.iteration, v);
      out << line;
    }
  }
}

}  // namespace hippofuse
