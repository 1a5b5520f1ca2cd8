// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dat/core.hpp"
#include "dat/json_io.hpp"

namespace dat {

struct BuilderConfig {
  int n_max = 80;          ///< boxes retained per image
  double tau_conf = 0.7;   ///< minimum detector score
  int crop_size = 224;     ///< square resize target recorded for the exporter

  /// Throws kValidation on any out-of-range field.
  void validate() const;
};

struct RegionSample {
  std::string image_id;
  BoundingBox box;  ///< clamped to the image
  ClassId pseudo_label = 0;
  double detector_score = 0.0;
  int crop_size = 0;
  std::string key;  ///< region_key(image_id, rank within image)

  friend bool operator==(const RegionSample&, const RegionSample&) = default;
};

/// Pseudo-labelled region dataset built from closed-set detector output.
struct RegionDataset {
  std::vector<RegionSample> samples;
  ClassVocabulary vocabulary;
  BuilderConfig config;
  /// Background-labelled proposals, kept aside for cooperative inference.
  std::vector<DetectionRecord> background;
  std::size_t skipped_zero_area = 0;
  /// Named digests of the inputs (and config) the dataset was built from.
  std::map<std::string, std::string> provenance;
};

/// Filters by tau_conf, drops background records into the side list, clamps
/// boxes (zero-area boxes are counted and skipped), keeps the top n_max per
/// image, and orders samples by image_id, descending score, then box.
RegionDataset build_dataset(std::span<const DetectionRecord> detections, std::span<const ImageMeta> images,
                            const ClassVocabulary& vocab, const BuilderConfig& config);

struct DatasetStats {
  std::map<ClassId, std::size_t> per_class;
  std::map<std::string, std::size_t> per_image;
  std::size_t total = 0;
};

DatasetStats dataset_stats(const RegionDataset& ds);

Json builder_config_to_json(const BuilderConfig& cfg);
BuilderConfig builder_config_from_json(const Json& j, BuilderConfig defaults = {});

/// Manifest document including a "digest" field over the remaining content.
Json manifest_to_json(const RegionDataset& ds);
RegionDataset manifest_from_json(const Json& j);

}  // namespace dat
