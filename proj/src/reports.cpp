#include "padet/reports.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace padet {

void write_detections_file(const std::string& path, const std::vector<Detection>& dets) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  char line[256];
  for (const auto& d : dets) {
    std::snprintf(line, sizeof(line), "%d %.9g %.9g %.9g %.9g %.9g\n", d.class_id,
                  d.score, d.box.cx, d.box.cy, d.box.w, d.box.h);
    f << line;
  }
}

std::vector<Detection> read_detections_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<Detection> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    Detection d;
    if (!(ss >> d.class_id >> d.score >> d.box.cx >> d.box.cy >> d.box.w >> d.box.h)) {
      throw std::runtime_error("bad detections line: " + line);
    }
    out.push_back(d);
  }
  return out;
}

namespace {

const char* kSizeNames[3] = {"small", "medium", "large"};

}  // namespace

void write_eval_report_text(const std::string& path, const EvalReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  char line[160];
  for (size_t i = 0; i < rep.thresholds.size(); ++i) {
    std::snprintf(line, sizeof(line), "map %.2f %.6f\n", rep.thresholds[i],
                  rep.map_at[i]);
    f << line;
  }
  for (size_t c = 0; c < rep.ap_by_class.size(); ++c) {
    std::snprintf(line, sizeof(line), "ap class %zu %.6f%s\n", c, rep.ap_by_class[c],
                  rep.class_flagged[c] ? " no_gt" : "");
    f << line;
  }
  for (int b = 0; b < 3; ++b) {
    if (rep.gts_by_size[b] > 0) {
      std::snprintf(line, sizeof(line), "ap size %s %.6f gts %lld\n", kSizeNames[b],
                    rep.ap_by_size[b], static_cast<long long>(rep.gts_by_size[b]));
    } else {
      std::snprintf(line, sizeof(line), "ap size %s n/a gts 0\n", kSizeNames[b]);
    }
    f << line;
  }
  for (size_t c = 0; c < rep.counts.size(); ++c) {
    std::snprintf(line, sizeof(line), "counts class %zu tp %lld fp %lld fn %lld\n", c,
                  static_cast<long long>(rep.counts[c].tp),
                  static_cast<long long>(rep.counts[c].fp),
                  static_cast<long long>(rep.counts[c].fn));
    f << line;
  }
}

void write_eval_report_json(const std::string& path, const EvalReport& rep) {
  nlohmann::json j;
  for (size_t i = 0; i < rep.thresholds.size(); ++i) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.2f", rep.thresholds[i]);
    j["map"][key] = rep.map_at[i];
  }
  j["ap_by_class"] = rep.ap_by_class;
  j["class_no_gt"] = rep.class_flagged;
  for (int b = 0; b < 3; ++b) {
    j["ap_by_size"][kSizeNames[b]] = rep.ap_by_size[b];
    j["gts_by_size"][kSizeNames[b]] = rep.gts_by_size[b];
  }
  for (size_t c = 0; c < rep.counts.size(); ++c) {
    j["counts"].push_back({{"class", c},
                           {"tp", rep.counts[c].tp},
                           {"fp", rep.counts[c].fp},
                           {"fn", rep.counts[c].fn}});
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << j.dump(2) << "\n";
}

void write_match_stats_text(const std::string& bucket_path,
                            const std::string& batch_path, const MatchStatsReport& rep) {
  {
    std::ofstream f(bucket_path);
    if (!f) throw std::runtime_error("cannot open " + bucket_path + " for writing");
    f << "# scale_lo scale_hi gts initial adjusted initial_share adjusted_share\n";
    char line[200];
    for (size_t b = 0; b < rep.initial_counts.size(); ++b) {
      const double lo = rep.bucket_edges[b];
      const bool open = b + 1 >= rep.bucket_edges.size();
      std::snprintf(line, sizeof(line), "%g %s %lld %lld %lld %.6f %.6f\n", lo,
                    open ? "inf" : std::to_string(rep.bucket_edges[b + 1]).c_str(),
                    static_cast<long long>(rep.gts_per_bucket[b]),
                    static_cast<long long>(rep.initial_counts[b]),
                    static_cast<long long>(rep.adjusted_counts[b]),
                    rep.initial_share[b], rep.adjusted_share[b]);
      f << line;
    }
    char tail[200];
    std::snprintf(tail, sizeof(tail),
                  "# totals initial %lld adjusted %lld cov_initial %.6f cov_adjusted %.6f\n",
                  static_cast<long long>(rep.total_initial),
                  static_cast<long long>(rep.total_adjusted), rep.initial_cov,
                  rep.adjusted_cov);
    f << tail;
  }
  {
    std::ofstream f(batch_path);
    if (!f) throw std::runtime_error("cannot open " + batch_path + " for writing");
    f << "# batch initial adjusted\n";
    for (size_t i = 0; i < rep.per_batch.size(); ++i) {
      f << i << " " << rep.per_batch[i].first << " " << rep.per_batch[i].second << "\n";
    }
  }
}

}  // namespace padet
