// SPDX-License-Identifier: Apache-2.0
#include "dat/json_io.hpp"

#include <fstream>
#include <sstream>

namespace dat {
namespace {

const Json& require(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::kParse, std::string("missing field '") + key + "'");
  }
  return j.at(key);
}

template <typename T>
T get_as(const Json& j, const char* key) {
  try {
    return require(j, key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("field '") + key + "': " + e.what());
  }
}

ClassId class_from_name(const std::string& name, const ClassVocabulary& vocab) {
  if (name == kBackgroundName) return kBackground;
  auto id = vocab.find(name);
  if (!id) throw Error(ErrorCode::kUnknownCategory, "unknown category '" + name + "'");
  return *id;
}

std::string class_name(ClassId id, const ClassVocabulary& vocab) {
  return id == kBackground ? std::string(kBackgroundName) : vocab.name(id);
}

Json optional_to_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json triple_to_json(const ApTriple& t) {
  return {{"AP", optional_to_json(t.ap)}, {"AP50", optional_to_json(t.ap50)}, {"AP75", optional_to_json(t.ap75)}};
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kInputNotFound, "input not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json_file(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string dump_canonical(const Json& j) { return j.dump(2) + "\n"; }

Json box_to_json(const BoundingBox& box) { return Json::array({box.x_min, box.y_min, box.x_max, box.y_max}); }

BoundingBox box_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::kParse, "bbox must be [x_min,y_min,x_max,y_max]");
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorCode::kParse, "bbox entries must be numbers");
  }
  return make_box(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

Json vocabulary_to_json(const ClassVocabulary& vocab) {
  Json novel = Json::array();
  for (ClassId id : vocab.novel_ids()) novel.push_back(vocab.name(id));
  return {{"names", vocab.names()}, {"novel", novel}};
}

ClassVocabulary vocabulary_from_json(const Json& j) {
  auto names = get_as<std::vector<std::string>>(j, "names");
  std::vector<std::string> novel;
  if (j.contains("novel")) novel = get_as<std::vector<std::string>>(j, "novel");
  return ClassVocabulary(std::move(names), novel);
}

Json detections_to_json(const std::vector<DetectionRecord>& dets, const ClassVocabulary& vocab) {
  Json out = Json::array();
  for (const auto& d : dets) {
    out.push_back({{"image_id", d.image_id},
                   {"bbox", box_to_json(d.box)},
                   {"score", d.score},
                   {"category", class_name(d.class_id, vocab)}});
  }
  return out;
}

std::vector<DetectionRecord> detections_from_json(const Json& j, const ClassVocabulary& vocab) {
  if (!j.is_array()) throw Error(ErrorCode::kParse, "detection file must be a JSON array");
  std::vector<DetectionRecord> out;
  out.reserve(j.size());
  for (const auto& item : j) {
    DetectionRecord d;
    d.image_id = get_as<std::string>(item, "image_id");
    d.box = box_from_json(require(item, "bbox"));
    d.score = get_as<double>(item, "score");
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw Error(ErrorCode::kValidation, "score outside [0,1] on image '" + d.image_id + "'");
    }
    d.class_id = class_from_name(get_as<std::string>(item, "category"), vocab);
    out.push_back(std::move(d));
  }
  return out;
}

Json images_to_json(const std::vector<ImageMeta>& images) {
  Json out = Json::array();
  for (const auto& m : images) {
    out.push_back({{"image_id", m.image_id}, {"width", m.width}, {"height", m.height}, {"path", m.path}});
  }
  return out;
}

std::vector<ImageMeta> images_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorCode::kParse, "image metadata file must be a JSON array");
  std::vector<ImageMeta> out;
  out.reserve(j.size());
  for (const auto& item : j) {
    ImageMeta m;
    m.image_id = get_as<std::string>(item, "image_id");
    m.width = get_as<int>(item, "width");
    m.height = get_as<int>(item, "height");
    if (item.contains("path")) m.path = get_as<std::string>(item, "path");
    if (m.width <= 0 || m.height <= 0) {
      throw Error(ErrorCode::kValidation, "image '" + m.image_id + "' has non-positive size");
    }
    out.push_back(std::move(m));
  }
  return out;
}

Json ground_truth_to_json(const std::vector<GroundTruthRecord>& gts, const ClassVocabulary& vocab) {
  Json out = Json::array();
  for (const auto& g : gts) {
    out.push_back({{"image_id", g.image_id}, {"bbox", box_to_json(g.box)}, {"category", vocab.name(g.class_id)}});
  }
  return out;
}

std::vector<GroundTruthRecord> ground_truth_from_json(const Json& j, const ClassVocabulary& vocab) {
  if (!j.is_array()) throw Error(ErrorCode::kParse, "ground-truth file must be a JSON array");
  std::vector<GroundTruthRecord> out;
  out.reserve(j.size());
  for (const auto& item : j) {
    GroundTruthRecord g;
    g.image_id = get_as<std::string>(item, "image_id");
    g.box = box_from_json(require(item, "bbox"));
    const auto name = get_as<std::string>(item, "category");
    g.class_id = class_from_name(name, vocab);
    if (g.class_id == kBackground) throw Error(ErrorCode::kUnknownCategory, "ground truth cannot be background");
    out.push_back(std::move(g));
  }
  return out;
}

Json eval_report_to_json(const EvalReport& report) {
  auto split = [](const SplitMetrics& s) {
    Json j = triple_to_json(s.metrics);
    j["classes_scored"] = s.n_classes_scored;
    j["n_gt"] = s.n_gt;
    j["n_dets"] = s.n_dets;
    return j;
  };
  Json per_class = Json::array();
  for (const auto& cm : report.per_class) {
    Json j = triple_to_json(cm.metrics);
    j["category"] = cm.name;
    j["split"] = cm.novel ? "novel" : "base";
    j["n_gt"] = cm.n_gt;
    j["n_dets"] = cm.n_dets;
    per_class.push_back(std::move(j));
  }
  return {{"novel", split(report.novel)},
          {"base", split(report.base)},
          {"all", split(report.all)},
          {"per_class", per_class}};
}

}  // namespace dat
