// SPDX-License-Identifier: Apache-2.0
#include "ulab/report.hpp"

#include <cstdio>
#include <algorithm>
#include <map>
#include <vector>

#include "ulab/errors.hpp"

namespace ulab {

std::vector<std::string> methods_in_order(std::span<const RunRecord> records) {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  }
  return out;
}

std::string results_table_csv(std::span<const RunRecord> records) {
  if (records.empty()) throw InputError("results log is empty");
  std::map<std::string, const RunRecord*> last;
  for (const auto& r : records) last[r.method] = &r;
  std::string out = "method,MU,FE,Avg\n";
  char buf[128];
  for (const auto& m : methods_in_order(records)) {
    const auto& rep = last.at(m)->report;
    std::snprintf(buf, sizeof buf, ",%.4f,%.4f,%.4f\n", rep.MU, rep.FE, (rep.MU + rep.FE) / 2);
    out += m + buf;
  }
  return out;
}

}  // namespace ulab
