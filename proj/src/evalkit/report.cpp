#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "llts/errors.hpp"
#include "llts/evalkit.hpp"

namespace llts {

namespace {
std::string class_label(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : "class" + std::to_string(c);
}
}  // namespace

nlohmann::json report_to_json(const EvalReport& r, const std::vector<std::string>& class_names) {
  nlohmann::json j;
  j["operating_point"] = {{"conf_threshold", r.options.conf_threshold}, {"iou_threshold", r.options.iou_threshold}};
  j["ap_interpolation"] = "101-point";
  j["iou_thresholds"] = r.thresholds;
  j["map50"] = r.map50;
  j["map50_95"] = r.map50_95;
  j["map_at"] = r.map_at;
  j["precision"] = r.prf.precision;
  j["recall"] = r.prf.recall;
  j["f1"] = r.prf.f1;
  j["tp"] = r.counts.tp;
  j["fp"] = r.counts.fp;
  j["fn"] = r.counts.fn;
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.num_classes; ++c) {
    nlohmann::json e;
    e["id"] = c;
    e["name"] = class_label(class_names, c);
    e["gt"] = r.gt_count[c];
    e["detections"] = r.det_count[c];
    nlohmann::json ap = nlohmann::json::array();
    for (const auto& v : r.ap[c]) ap.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    e["ap"] = ap;
    classes.push_back(e);
  }
  j["classes"] = classes;
  return j;
}

std::string report_table(const EvalReport& r, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "# P/R/F1 at conf >= " << r.options.conf_threshold << ", IoU >= " << r.options.iou_threshold
     << "; AP is 101-point interpolated\n";
  std::size_t w = 8;
  for (std::size_t c = 0; c < r.num_classes; ++c) w = std::max(w, class_label(class_names, c).size() + 2);
  os << std::left << std::setw(static_cast<int>(w)) << "class" << std::right << std::setw(8) << "gt"
     << std::setw(8) << "dets" << std::setw(10) << "AP50" << std::setw(10) << "AP50:95" << '\n';
  os << std::fixed << std::setprecision(4);
  for (std::size_t c = 0; c < r.num_classes; ++c) {
    os << std::left << std::setw(static_cast<int>(w)) << class_label(class_names, c) << std::right << std::setw(8)
       << r.gt_count[c] << std::setw(8) << r.det_count[c];
    if (r.ap[c][0]) {
      double s = 0;
      for (const auto& v : r.ap[c]) s += *v;
      os << std::setw(10) << *r.ap[c][0] << std::setw(10) << s / static_cast<double>(kNumIouThresholds);
    } else {
      os << std::setw(10) << "-" << std::setw(10) << "-";
    }
    os << '\n';
  }
  os << std::left << std::setw(static_cast<int>(w)) << "all" << std::right << std::setw(8) << "" << std::setw(8)
     << "" << std::setw(10) << r.map50 << std::setw(10) << r.map50_95 << '\n';
  os << "precision " << r.prf.precision << "  recall " << r.prf.recall << "  f1 " << r.prf.f1 << "  (tp "
     << r.counts.tp << ", fp " << r.counts.fp << ", fn " << r.counts.fn << ")\n";
  return os.str();
}

std::vector<Detection> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prediction file " + path.string());
  std::vector<Detection> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    Detection d;
    std::string extra;
    if (!(ls >> d.class_id)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'class_id confidence x1 y1 x2 y2'");
    }
    if (!(ls >> d.confidence >> d.box.x1 >> d.box.y1 >> d.box.x2 >> d.box.y2) || (ls >> extra))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'class_id confidence x1 y1 x2 y2'");
    out.push_back(d);
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, std::span<const Detection> dets) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write prediction file " + path.string());
  char buf[256];
  for (const Detection& d : dets) {
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %.17g %.17g\n", d.class_id, d.confidence, d.box.x1, d.box.y1,
                  d.box.x2, d.box.y2);
    os << buf;
  }
}

}  // namespace llts
