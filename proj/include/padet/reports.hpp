#pragma once

#include <string>
#include <vector>

#include "padet/eval.hpp"

namespace padet {

// Detections file: one record per line, `class_id score cx cy w h`.
void write_detections_file(const std::string& path, const std::vector<Detection>& dets);
std::vector<Detection> read_detections_file(const std::string& path);

// Line-oriented human-readable report plus a JSON twin.
void write_eval_report_text(const std::string& path, const EvalReport& rep);
void write_eval_report_json(const std::string& path, const EvalReport& rep);

// Columnar per-bucket series and per-batch counts, plotting-friendly.
void write_match_stats_text(const std::string& bucket_path,
                            const std::string& batch_path, const MatchStatsReport& rep);

}  // namespace padet
