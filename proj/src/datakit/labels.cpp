#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "llts/datakit.hpp"
#include "llts/errors.hpp"

namespace llts {

namespace fs = std::filesystem;

std::vector<std::string> default_class_names() { return {"prohibitory", "mandatory", "warning"}; }

std::array<double, 3> default_class_ratios() {
  const double total = 4954.0 + 1658.0 + 1075.0;
  return {4954.0 / total, 1658.0 / total, 1075.0 / total};
}

namespace {

// Clips the box edges to [0,1]; leaves the record untouched when no edge
// crosses the border so that save/load is lossless.
bool clip_label(LabelRecord& r) {
  if (!(r.w > 0) || !(r.h > 0)) return false;
  double x1 = r.cx - r.w / 2, x2 = r.cx + r.w / 2, y1 = r.cy - r.h / 2, y2 = r.cy + r.h / 2;
  if (x1 < 0 || x2 > 1) {
    x1 = std::max(0.0, x1);
    x2 = std::min(1.0, x2);
    if (!(x2 > x1)) return false;
    r.cx = (x1 + x2) / 2;
    r.w = x2 - x1;
  }
  if (y1 < 0 || y2 > 1) {
    y1 = std::max(0.0, y1);
    y2 = std::min(1.0, y2);
    if (!(y2 > y1)) return false;
    r.cy = (y1 + y2) / 2;
    r.h = y2 - y1;
  }
  return true;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<std::string> read_class_names(const fs::path& root) {
  const fs::path p = root / "classes.txt";
  if (!fs::exists(p)) return default_class_names();
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  if (names.empty()) throw DataError(p.string() + " lists no classes");
  return names;
}

}  // namespace

LabelParse parse_labels(std::istream& in, std::size_t num_classes, const std::string& source) {
  LabelParse out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string fields[6];
    std::size_t n = 0;
    while (n < 6 && ls >> fields[n]) ++n;
    LabelRecord r;
    std::size_t used = 0;
    bool ok = n == 5;
    try {
      if (ok) {
        const long cls = std::stol(fields[0], &used);
        ok = used == fields[0].size() && cls >= 0;
        r.class_id = static_cast<int>(cls);
        double* dst[] = {&r.cx, &r.cy, &r.w, &r.h};
        for (int k = 0; ok && k < 4; ++k) {
          *dst[k] = std::stod(fields[k + 1], &used);
          ok = used == fields[k + 1].size() && std::isfinite(*dst[k]);
        }
      }
    } catch (const std::exception&) {
      ok = false;
    }
    if (ok && static_cast<std::size_t>(r.class_id) >= num_classes)
      throw DataError(source + ":" + std::to_string(lineno) + ": class id " + std::to_string(r.class_id) +
                      " outside the class table of size " + std::to_string(num_classes));
    if (ok) ok = clip_label(r);
    if (!ok) {
      ++out.malformed;
      std::fprintf(stderr, "warning: %s:%zu: skipping malformed label line\n", source.c_str(), lineno);
      continue;
    }
    out.labels.push_back(r);
  }
  return out;
}

std::string format_labels(std::span<const LabelRecord> labels) {
  std::string s;
  char buf[160];
  for (const LabelRecord& r : labels) {
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %.17g\n", r.class_id, r.cx, r.cy, r.w, r.h);
    s += buf;
  }
  return s;
}

std::vector<std::size_t> recount(const DatasetManifest& m) {
  std::vector<std::size_t> counts(m.class_names.size(), 0);
  for (const ImageEntry& e : m.images)
    for (const LabelRecord& r : e.labels) {
      if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= counts.size())
        throw DataError("label class " + std::to_string(r.class_id) + " in " + e.path + " has no class-table entry");
      ++counts[static_cast<std::size_t>(r.class_id)];
    }
  return counts;
}

DatasetManifest load_dataset(const fs::path& root) {
  const fs::path img_dir = root / "images", lbl_dir = root / "labels";
  if (!fs::is_directory(img_dir) || !fs::is_directory(lbl_dir))
    throw DataError("dataset root " + root.string() + " needs images/ and labels/ directories");
  DatasetManifest m;
  m.split = root.filename().string();
  m.class_names = read_class_names(root);
  if (fs::exists(root / "manifest.json")) {
    std::ifstream in(root / "manifest.json");
    try {
      const auto j = nlohmann::json::parse(in);
      if (j.contains("split")) m.split = j["split"].get<std::string>();
      if (j.contains("provenance")) m.provenance = j["provenance"];
    } catch (const nlohmann::json::exception& e) {
      throw DataError("unreadable manifest.json in " + root.string() + ": " + e.what());
    }
  }

  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(img_dir))
    if (de.is_regular_file() && is_image_file(de.path())) files.push_back(de.path());
  std::sort(files.begin(), files.end());

  for (const fs::path& f : files) {
    ImageEntry e;
    e.path = (fs::path("images") / f.filename()).generic_string();
    const ImageSize sz = image_size(f);
    e.width = sz.width;
    e.height = sz.height;
    const fs::path lf = lbl_dir / (f.stem().string() + ".txt");
    if (fs::exists(lf)) {
      std::ifstream in(lf);
      if (!in) throw DataError("cannot read " + lf.string());
      LabelParse p = parse_labels(in, m.class_names.size(), lf.string());
      e.labels = std::move(p.labels);
      m.malformed_lines += p.malformed;
    } else {
      ++m.missing_label_files;
    }
    m.images.push_back(std::move(e));
  }
  m.class_counts = recount(m);
  return m;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["split"] = m.split;
  j["class_names"] = m.class_names;
  j["class_counts"] = m.class_counts;
  j["malformed_lines"] = m.malformed_lines;
  j["missing_label_files"] = m.missing_label_files;
  j["provenance"] = m.provenance;
  nlohmann::json images = nlohmann::json::array();
  for (const ImageEntry& e : m.images) {
    nlohmann::json labels = nlohmann::json::array();
    for (const LabelRecord& r : e.labels) labels.push_back({r.class_id, r.cx, r.cy, r.w, r.h});
    images.push_back({{"path", e.path}, {"width", e.width}, {"height", e.height}, {"labels", labels}});
  }
  j["images"] = images;
  return j;
}

void save_dataset(const fs::path& root, const DatasetManifest& m) {
  if (recount(m) != m.class_counts) throw DataError("manifest class counts disagree with its labels");
  fs::create_directories(root / "labels");
  fs::create_directories(root / "images");
  {
    std::ofstream os(root / "classes.txt", std::ios::binary);
    for (const std::string& n : m.class_names) os << n << '\n';
  }
  for (const ImageEntry& e : m.images) {
    const fs::path lf = root / "labels" / (fs::path(e.path).stem().string() + ".txt");
    std::ofstream os(lf, std::ios::binary);
    if (!os) throw DataError("cannot write " + lf.string());
    os << format_labels(e.labels);
  }
  std::ofstream os(root / "manifest.json", std::ios::binary);
  os << manifest_to_json(m).dump(2) << '\n';
}

AnchorStats anchor_stats(const DatasetManifest& m, double bin_px, std::size_t bins) {
  if (!(bin_px > 0) || bins == 0) throw UsageError("anchor histogram needs a positive bin width and count");
  AnchorStats s;
  s.bin_px = bin_px;
  s.bins = bins;
  s.histogram.assign(bins * bins, 0);
  double sw = 0, sh = 0;
  for (const ImageEntry& e : m.images)
    for (const LabelRecord& r : e.labels) {
      const double w = r.w * static_cast<double>(e.width), h = r.h * static_cast<double>(e.height);
      sw += w;
      sh += h;
      ++s.count;
      const auto bw = std::min(bins - 1, static_cast<std::size_t>(w / bin_px));
      const auto bh = std::min(bins - 1, static_cast<std::size_t>(h / bin_px));
      ++s.histogram[bh * bins + bw];
    }
  if (s.count == 0) throw DataError("anchor statistics need at least one labelled instance");
  s.mean_w = sw / static_cast<double>(s.count);
  s.mean_h = sh / static_cast<double>(s.count);
  return s;
}

void write_anchor_csv(std::ostream& os, const AnchorStats& s) {
  os << "w_lo,w_hi,h_lo,h_hi,count\n";
  for (std::size_t bh = 0; bh < s.bins; ++bh)
    for (std::size_t bw = 0; bw < s.bins; ++bw) {
      const std::size_t c = s.histogram[bh * s.bins + bw];
      if (c == 0) continue;
      auto edges = [&](std::size_t b) {
        os << static_cast<double>(b) * s.bin_px << ',';
        if (b + 1 == s.bins)
          os << "inf";
        else
          os << static_cast<double>(b + 1) * s.bin_px;
      };
      edges(bw);
      os << ',';
      edges(bh);
      os << ',' << c << '\n';
    }
}

}  // namespace llts
