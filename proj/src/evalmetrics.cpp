#include "gsloc/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace gsloc {

PoseError pose_error(const CameraPose& estimate, const CameraPose& reference) {
  PoseError e;
  e.trans_m = (estimate.translation - reference.translation).norm();
  const Quat dq = reference.rotation.conjugate() * estimate.rotation;
  const double w = std::min(1.0, std::abs(dq.w()));
  e.rot_deg = 2.0 * std::acos(w) * 180.0 / M_PI;
  return e;
}

std::vector<double> recall_table(const std::vector<std::optional<PoseError>>& errors,
                                 const ThresholdSpec& spec) {
  if (errors.empty())
    throw std::invalid_argument("recall_table: empty error list");
  if (!spec.valid())
    throw std::invalid_argument("recall_table: thresholds not strictly increasing");
  std::vector<double> row;
  row.reserve(spec.pairs.size());
  for (const auto& [deg, m] : spec.pairs) {
    int hits = 0;
    for (const auto& e : errors)
      if (e && e->rot_deg <= deg && e->trans_m <= m) ++hits;
    row.push_back(100.0 * hits / double(errors.size()));
  }
  return row;
}

AteResult compute_ate(const std::vector<TimedPose>& estimated,
                      const std::vector<TimedPose>& reference, bool with_scale) {
  if (estimated.size() != reference.size())
    throw std::invalid_argument("compute_ate: trajectory length mismatch: " +
                                std::to_string(estimated.size()) + " vs " +
                                std::to_string(reference.size()));
  std::vector<Vec3> src, dst;
  src.reserve(estimated.size());
  dst.reserve(reference.size());
  for (const auto& p : estimated) src.push_back(p.pose.translation);
  for (const auto& p : reference) dst.push_back(p.pose.translation);

  const Sim3Transform T = umeyama_align(src, dst, with_scale);
  AteResult res;
  res.residuals.reserve(src.size());
  double sq = 0;
  for (size_t i = 0; i < src.size(); ++i) {
    const double r = (T.apply(src[i]) - dst[i]).norm();
    res.residuals.push_back(r);
    sq += r * r;
    res.max_err = std::max(res.max_err, r);
  }
  res.rmse = std::sqrt(sq / double(src.size()));
  return res;
}

double compute_psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument("compute_psnr: shape mismatch");
  if (a.empty()) throw std::invalid_argument("compute_psnr: empty image");
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string threshold_label(double deg, double m) {
  return fmt("%g", deg) + "deg_" + fmt("%g", m) + "m";
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

// Fixed palette; cycled when there are more methods than entries.
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b"};

}  // namespace

void emit_report(const EvalReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto path = [&](const char* name) {
    return (std::filesystem::path(out_dir) / name).string();
  };

  // recall.csv
  {
    std::string csv = "method";
    for (const auto& [deg, m] : report.thresholds.pairs)
      csv += "," + threshold_label(deg, m);
    csv += "\n";
    for (const auto& method : report.methods) {
      csv += method.name;
      const auto row = recall_table(method.errors, report.thresholds);
      for (const double pct : row) csv += "," + fmt("%.1f", pct);
      csv += "\n";
    }
    write_file(path("recall.csv"), csv);
  }

  // ate.csv
  {
    std::string csv = "method,rmse_m,max_m\n";
    for (const auto& [name, ate] : report.ate)
      csv += name + "," + fmt("%.6f", ate.rmse) + "," + fmt("%.6f", ate.max_err) + "\n";
    write_file(path("ate.csv"), csv);
  }

  // psnr.csv
  {
    std::string csv = "config,psnr_db\n";
    for (const auto& [name, db] : report.psnr) {
      csv += name + ",";
      csv += std::isinf(db) ? "inf" : fmt("%.3f", db);
      csv += "\n";
    }
    write_file(path("psnr.csv"), csv);
  }

  // pose_errors.svg — per-method scatter of rotation vs translation error.
  {
    const int W = 640, H = 480;
    const double ml = 60, mr = 160, mt = 30, mb = 50;
    double max_rot = 0, max_trans = 0;
    for (const auto& method : report.methods)
      for (const auto& e : method.errors) {
        if (!e) continue;
        max_rot = std::max(max_rot, e->rot_deg);
        max_trans = std::max(max_trans, e->trans_m);
      }
    if (max_rot <= 0) max_rot = 1;
    if (max_trans <= 0) max_trans = 1;
    max_rot *= 1.05;
    max_trans *= 1.05;

    const auto sx = [&](double rot) {
      return ml + (W - ml - mr) * rot / max_rot;
    };
    const auto sy = [&](double trans) {
      return H - mb - (H - mt - mb) * trans / max_trans;
    };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
           std::to_string(W) + "\" height=\"" + std::to_string(H) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // axes
    svg += "<line x1=\"" + fmt("%.1f", ml) + "\" y1=\"" + fmt("%.1f", double(H - mb)) +
           "\" x2=\"" + fmt("%.1f", double(W - mr)) + "\" y2=\"" +
           fmt("%.1f", double(H - mb)) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt("%.1f", ml) + "\" y1=\"" + fmt("%.1f", mt) +
           "\" x2=\"" + fmt("%.1f", ml) + "\" y2=\"" + fmt("%.1f", double(H - mb)) +
           "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double rot = max_rot * i / 4.0, trans = max_trans * i / 4.0;
      svg += "<text x=\"" + fmt("%.1f", sx(rot)) + "\" y=\"" +
             fmt("%.1f", double(H - mb + 18)) +
             "\" font-size=\"11\" text-anchor=\"middle\">" + fmt("%.3g", rot) +
             "</text>\n";
      svg += "<text x=\"" + fmt("%.1f", ml - 8) + "\" y=\"" +
             fmt("%.1f", sy(trans) + 4) +
             "\" font-size=\"11\" text-anchor=\"end\">" + fmt("%.3g", trans) +
             "</text>\n";
    }
    svg += "<text x=\"" + fmt("%.1f", (ml + W - mr) / 2) + "\" y=\"" +
           fmt("%.1f", double(H - 10)) +
           "\" font-size=\"13\" text-anchor=\"middle\">rotation error (deg)</text>\n";
    svg += "<text x=\"16\" y=\"" + fmt("%.1f", (mt + H - mb) / 2) +
           "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           fmt("%.1f", (mt + H - mb) / 2) +
           ")\">translation error (m)</text>\n";

    for (size_t mi = 0; mi < report.methods.size(); ++mi) {
      const char* color = kPalette[mi % (sizeof(kPalette) / sizeof(kPalette[0]))];
      for (const auto& e : report.methods[mi].errors) {
        if (!e) continue;
        svg += "<circle cx=\"" + fmt("%.2f", sx(e->rot_deg)) + "\" cy=\"" +
               fmt("%.2f", sy(e->trans_m)) + "\" r=\"3\" fill=\"" + color +
               "\" fill-opacity=\"0.6\"/>\n";
      }
      // legend
      const double ly = mt + 16 + 18.0 * double(mi);
      svg += "<circle cx=\"" + fmt("%.1f", double(W - mr + 16)) + "\" cy=\"" +
             fmt("%.1f", ly - 4) + "\" r=\"4\" fill=\"" + std::string(color) + "\"/>\n";
      svg += "<text x=\"" + fmt("%.1f", double(W - mr + 26)) + "\" y=\"" +
             fmt("%.1f", ly) + "\" font-size=\"12\">" + report.methods[mi].name +
             "</text>\n";
    }
    svg += "</svg>\n";
    write_file(path("pose_errors.svg"), svg);
  }
}

}  // namespace gsloc
