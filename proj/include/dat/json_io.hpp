// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dat/core.hpp"
#include "dat/evaluator.hpp"

namespace dat {

using Json = nlohmann::json;

/// Reads a whole file; kInputNotFound when it cannot be opened.
std::string read_text_file(const std::filesystem::path& path);
Json read_json_file(const std::filesystem::path& path);
/// Writes `text` atomically enough for our purposes: to a sibling temp file, then renames.
void write_text_file(const std::filesystem::path& path, const std::string& text);
/// Canonical serialization: sorted keys, two-space indent, trailing newline.
std::string dump_canonical(const Json& j);

Json box_to_json(const BoundingBox& box);
BoundingBox box_from_json(const Json& j);

Json vocabulary_to_json(const ClassVocabulary& vocab);
ClassVocabulary vocabulary_from_json(const Json& j);

/// Detection records: [{"image_id","bbox","score","category"}], where
/// category is a class name or "__background__".
Json detections_to_json(const std::vector<DetectionRecord>& dets, const ClassVocabulary& vocab);
std::vector<DetectionRecord> detections_from_json(const Json& j, const ClassVocabulary& vocab);

Json images_to_json(const std::vector<ImageMeta>& images);
std::vector<ImageMeta> images_from_json(const Json& j);

/// Ground truth: detection-record shape without "score".
Json ground_truth_to_json(const std::vector<GroundTruthRecord>& gts, const ClassVocabulary& vocab);
std::vector<GroundTruthRecord> ground_truth_from_json(const Json& j, const ClassVocabulary& vocab);

Json eval_report_to_json(const EvalReport& report);

}  // namespace dat
