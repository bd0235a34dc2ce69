#ifndef HSICAL_REPORT_JSON_HPP_
#define HSICAL_REPORT_JSON_HPP_

#include <json.hpp>

#include "hsical/metrics.hpp"
#include "hsical/trainer.hpp"

namespace hsical {

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json(const MetricsReport& r) {
  ordered_json j;
  j["range"] = r.range.name;
  j["range_lo_nm"] = r.range.lo;
  j["range_hi_nm"] = r.range.hi;
  j["psnr_db"] = r.psnr_db;
  j["sam_deg"] = r.sam_deg;
  j["rmse_pct"] = r.rmse_pct;
  j["ergas_pct"] = r.ergas_pct;
  j["n_pixels"] = r.n_pixels;
  j["n_bands"] = r.n_bands;
  j["skipped_bands"] = r.skipped_bands;
  j["skipped_pixels"] = r.skipped_pixels;
  j["exact_match"] = r.exact_match;
  j["scale_aligned"] = r.scale_aligned;
  j["align_scale"] = r.align_scale;
  return j;
}

inline ordered_json to_json(const std::vector<MetricsReport>& reports) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr;
}

inline ordered_json to_json(const EvalTable& table) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : table.rows) {
    ordered_json j;
    j["illum"] = r.illum_label;
    j["range"] = r.range_name;
    j["n_pairs"] = r.n_pairs;
    j["psnr_db"] = r.psnr_db;
    j["sam_deg"] = r.sam_deg;
    j["rmse_pct"] = r.rmse_pct;
    j["ergas_pct"] = r.ergas_pct;
    arr.push_back(j);
  }
  return arr;
}

}  // namespace hsical

#endif  // HSICAL_REPORT_JSON_HPP_
