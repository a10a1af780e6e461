#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sodawide/data/dataset.hpp"
#include "sodawide/metrics.hpp"

namespace sodawide::data {

struct EvalResult {
  std::vector<ImageMetrics> images;
  MetricReport report;
};

/// Prediction file for a manifest entry: <stem>.pgm, else <stem>.swt.
inline fs::path prediction_path(const fs::path& pred_dir, const ManifestEntry& e) {
  const fs::path pgm = pred_dir / (e.stem() + ".pgm");
  if (fs::exists(pgm)) return pgm;
  const fs::path swt = pred_dir / (e.stem() + ".swt");
  if (fs::exists(swt)) return swt;
  throw DataError("missing prediction for '" + e.stem() + "': expected " + pgm.string());
}

/// Scores every manifest entry against its ground-truth mask at the mask's
/// own resolution. Predictions of another size are bilinearly resized to it.
/// Any missing prediction aborts the whole evaluation.
inline EvalResult evaluate_dataset(const fs::path& pred_dir, const DatasetManifest& m, const MetricOptions& opt = {}) {
  if (m.entries.empty()) throw DataError("manifest has no entries to evaluate");
  if (!fs::is_directory(pred_dir)) throw DataError("prediction directory " + pred_dir.string() + " does not exist");
  std::vector<fs::path> preds;
  for (const auto& e : m.entries) preds.push_back(prediction_path(pred_dir, e));

  EvalResult out;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const ManifestEntry& e = m.entries[i];
    const Tensor<double> gt = flip(load_planes<double>(e.mask), e.flip);
    if (gt.shape().c != 1) throw DataError(e.mask.string() + ": mask must have one channel");
    Tensor<double> pred = load_planes<double>(preds[i]);
    if (pred.shape().c != 1) throw DataError(preds[i].string() + ": prediction must have one channel");
    if (pred.shape().h != gt.shape().h || pred.shape().w != gt.shape().w) {
      pred = kernels::bilinear_resize_forward(pred, gt.shape().h, gt.shape().w);
    }
    out.images.push_back(evaluate_image(e.stem(), pred, gt, opt));
  }
  out.report = aggregate(out.images, opt);
  return out;
}

inline void write_eval_csv(const fs::path& path, const EvalResult& r) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "image,mae,f_max,e_max\n" << std::setprecision(17);
  for (const auto& m : r.images) os << m.name << ',' << m.mae << ',' << m.f_max << ',' << m.e_max << '\n';
}

inline nlohmann::json to_json(const MetricReport& r) {
  return nlohmann::json{{"mae", r.mae}, {"f_max", r.f_max}, {"e_max", r.e_max}, {"n_images", r.n_images}};
}

inline void write_eval_json(const fs::path& path, const MetricReport& r) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_json(r).dump(2) << '\n';
}

}  // namespace sodawide::data
