#ifndef GSLOC_DATASET_HPP_
#define GSLOC_DATASET_HPP_

#include "gsloc/augment.hpp"

namespace gsloc {

// Posed RGB-D dataset directory layout:
//   images/%06d.png  8-bit RGB
//   depth/%06d.png   16-bit, millimeters, 0 = invalid
//   trajectory.txt   timestamp tx ty tz qx qy qz qw
//   intrinsics.txt   fx fy cx cy width height
struct Dataset {
  std::vector<TrainView> views;
  std::vector<double> timestamps;
  PinholeIntrinsics intrinsics;

  std::vector<TimedPose> trajectory() const {
    std::vector<TimedPose> t(views.size());
    for (size_t i = 0; i < views.size(); ++i)
      t[i] = {timestamps[i], views[i].pose};
    return t;
  }
};

void save_intrinsics(const std::string& path, const PinholeIntrinsics& K);
PinholeIntrinsics load_intrinsics(const std::string& path);

void save_dataset(const std::string& dir, const Dataset& ds);

struct ValidationIssue {
  std::string file;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
  std::string to_string() const;
};

struct DatasetInvalid : std::runtime_error {
  ValidationReport report;
  explicit DatasetInvalid(ValidationReport r)
      : std::runtime_error(r.to_string()), report(std::move(r)) {}
};

// Itemized structural validation without loading every pixel: counts,
// parseability, intrinsics sanity, decodable images.
ValidationReport validate_dataset(const std::string& dir);

// Validates, then loads. Throws DatasetInvalid with the itemized report.
Dataset ingest_dataset(const std::string& dir);

// Reference-set directory: images/, depth/, manifest.txt with one line per
// view: index, pose (timestamp + tx ty tz qx qy qz qw), provenance
// (keyframe|rendered), source keyframe index, alpha coverage.
void save_reference_set(const std::string& dir, const ReferenceSet& set);
ReferenceSet load_reference_set(const std::string& dir);

}  // namespace gsloc

#endif
