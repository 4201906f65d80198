#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hippofuse/harness.hpp"

namespace hippofuse {

struct RunView {
  std::string label;        // usually the run directory name
  nlohmann::json summary;   // summary.json contents
};

// Aligned text table mirroring the results-table layout: one row per run,
// nine metric cells (ACC/SEN/SPC x test0/1/2) shown as "value +- half".
std::string render_report_table(const std::vector<RunView>& runs);

// Per-curve CSVs (iteration,value) for external plotting.
void write_curve_csvs(const std::filesystem::path& dir,
                      const std::vector<EvalRecord>& records);

}  // namespace hippofuse
