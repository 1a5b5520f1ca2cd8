// SPDX-License-Identifier: Apache-2.0
#include "dat/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "dat/digest.hpp"
#include "dat/json_io.hpp"
#include "dat/pipeline.hpp"

namespace dat {
namespace {

namespace fs = std::filesystem;

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_st>(err);
  auto log = std::make_shared<spdlog::logger>("dat", sink);
  log->set_pattern("[%l] %v");
  const char* env = std::getenv("DAT_LOG_LEVEL");
  log->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
  return log;
}

// ---- provenance -----------------------------------------------------------

fs::path sidecar_path(const fs::path& artifact) { return fs::path(artifact.string() + ".prov.json"); }

Json provenance_doc(const PipelineConfig& cfg, Stage stage, const Json& inputs) {
  return {{"stage", stage_name(stage)}, {"config_digest", config_digest(cfg, stage)}, {"inputs", inputs}};
}

void write_sidecar(const fs::path& artifact, const Json& prov) {
  write_text_file(sidecar_path(artifact), dump_canonical(prov));
}

/// Provenance attached to an artifact, or null when it carries none.
Json read_sidecar(const fs::path& artifact) {
  const auto p = sidecar_path(artifact);
  return fs::exists(p) ? read_json_file(p) : Json();
}

/// Refuses an upstream artifact whose recorded stage digest differs from the
/// digest the current configuration gives for that stage.
void check_upstream(const Json& prov, const PipelineConfig& cfg, const std::string& what) {
  if (!prov.is_object() || !prov.contains("stage") || !prov.contains("config_digest")) return;
  const auto name = prov.at("stage").get<std::string>();
  const auto stage = stage_from_name(name);
  if (!stage) throw Error(ErrorCode::kParse, what + " names an unknown stage '" + name + "'");
  const auto recorded = prov.at("config_digest").get<std::string>();
  const auto expected = config_digest(cfg, *stage);
  if (recorded != expected) {
    throw Error(ErrorCode::kDigestMismatch,
                what + " was produced by the '" + name + "' stage under config digest " + recorded +
                    ", but the current config gives " + expected +
                    "; rerun that stage with this config or pass the config it was built with");
  }
}

Json checkpoint_provenance(const Json& header) {
  Json prov;
  if (header.contains("stage")) prov["stage"] = header["stage"];
  if (header.contains("config_digest")) prov["config_digest"] = header["config_digest"];
  return prov;
}

Json manifest_provenance(const RegionDataset& ds) {
  Json prov;
  auto it = ds.provenance.find("stage");
  auto jt = ds.provenance.find("config_digest");
  if (it != ds.provenance.end() && jt != ds.provenance.end()) {
    prov = {{"stage", it->second}, {"config_digest", jt->second}};
  }
  return prov;
}

// ---- shared option plumbing ---------------------------------------------

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg;
  if (!c.config_path.empty()) cfg = pipeline_config_from_json(read_json_file(c.config_path));
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.sync_seed();
  }
  return cfg;
}

template <class T>
void apply(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "Override the run seed");
}

ClassVocabulary load_vocab(const std::string& path) { return vocabulary_from_json(read_json_file(path)); }

std::string file_digest(const fs::path& p) { return sha256_file(p); }

// ---- commands -------------------------------------------------------------

struct Context {
  std::ostream& out;
  std::shared_ptr<spdlog::logger> log;
};

struct SynthScenesOpts {
  Common common;
  std::string out_dir;
};

void cmd_synth_scenes(const SynthScenesOpts& o, Context& ctx) {
  const auto cfg = load_config(o.common);
  cfg.validate();
  const auto world = make_synthetic_world(cfg.synthetic, cfg.embedding);
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  write_text_file(dir / "vocab.json", dump_canonical(vocabulary_to_json(world.vocab)));
  write_text_file(dir / "train_images.json", dump_canonical(images_to_json(world.train_images)));
  write_text_file(dir / "train_detections.json",
                  dump_canonical(detections_to_json(world.train_detections, world.vocab)));
  write_text_file(dir / "train_ground_truth.json",
                  dump_canonical(ground_truth_to_json(world.train_ground_truth, world.vocab)));
  write_text_file(dir / "eval_images.json", dump_canonical(images_to_json(world.eval_images)));
  write_text_file(dir / "eval_detections.json", dump_canonical(detections_to_json(world.eval_detections, world.vocab)));
  write_text_file(dir / "eval_ground_truth.json",
                  dump_canonical(ground_truth_to_json(world.eval_ground_truth, world.vocab)));
  const auto bg = dir / "eval_background.date";
  write_embeddings(world.eval_background_features, bg);
  write_sidecar(bg, provenance_doc(cfg, Stage::kEmbeddings, {{"eval_detections", file_digest(dir / "eval_detections.json")}}));
  ctx.log->info("wrote synthetic scenes to {}", dir.string());
  ctx.out << "train images: " << world.train_images.size() << ", eval scenes: " << world.eval_images.size()
          << ", background proposals: " << world.eval_background_features.rows() << "\n";
}

struct BuildOpts {
  Common common;
  std::string detections, images, vocab, out;
  std::optional<double> tau_conf;
  std::optional<int> n_max;
  std::optional<int> crop_size;
};

void cmd_build_dataset(const BuildOpts& o, Context& ctx) {
  auto cfg = load_config(o.common);
  apply(o.tau_conf, cfg.builder.tau_conf);
  apply(o.n_max, cfg.builder.n_max);
  apply(o.crop_size, cfg.builder.crop_size);
  cfg.validate();  // before touching any input file

  const auto vocab = load_vocab(o.vocab);
  const auto dets = detections_from_json(read_json_file(o.detections), vocab);
  const auto images = images_from_json(read_json_file(o.images));
  auto ds = build_dataset(dets, images, vocab, cfg.builder);
  ds.provenance = {{"detections", file_digest(o.detections)},
                   {"images", file_digest(o.images)},
                   {"vocab", file_digest(o.vocab)},
                   {"stage", std::string(stage_name(Stage::kDataset))},
                   {"config_digest", config_digest(cfg, Stage::kDataset)}};
  const auto manifest = manifest_to_json(ds);
  write_text_file(o.out, dump_canonical(manifest));
  ctx.log->info("{} samples, {} background, {} zero-area skipped", ds.samples.size(), ds.background.size(),
                ds.skipped_zero_area);
  ctx.out << manifest.at("digest").get<std::string>() << "\n";
}

struct EmbedOpts {
  Common common;
  std::string manifest, vocab, regions_out, text_out;
};

void cmd_embed_synth(const EmbedOpts& o, Context& ctx) {
  const auto cfg = load_config(o.common);
  cfg.validate();
  if (o.manifest.empty() && o.vocab.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "embed-synth needs --manifest and/or --vocab");
  }
  if (!o.manifest.empty()) {
    if (o.regions_out.empty()) throw Error(ErrorCode::kInvalidArgument, "--manifest requires --regions-out");
    const auto ds = manifest_from_json(read_json_file(o.manifest));
    check_upstream(manifest_provenance(ds), cfg, "manifest " + o.manifest);
    const auto table = synthetic_region_embeddings(ds, cfg.embedding);
    write_embeddings(table, o.regions_out);
    write_sidecar(o.regions_out, provenance_doc(cfg, Stage::kEmbeddings, {{"manifest", file_digest(o.manifest)}}));
    ctx.out << "regions: " << table.rows() << " x " << table.dim() << "\n";
  }
  if (!o.vocab.empty()) {
    if (o.text_out.empty()) throw Error(ErrorCode::kInvalidArgument, "--vocab requires --text-out");
    const auto table = synthetic_text_embeddings(load_vocab(o.vocab), cfg.embedding, cfg.prompt_templates());
    write_embeddings(table, o.text_out);
    write_sidecar(o.text_out, provenance_doc(cfg, Stage::kEmbeddings, {{"vocab", file_digest(o.vocab)}}));
    ctx.out << "text: " << table.rows() << " x " << table.dim() << "\n";
  }
}

struct TrainOpts {
  Common common;
  std::string manifest, regions, text, out_dir;
  std::optional<double> lr0;
  std::optional<int> epochs, batch_size;
  std::optional<std::string> pairing;
};

void cmd_train(const TrainOpts& o, Context& ctx) {
  auto cfg = load_config(o.common);
  apply(o.lr0, cfg.train.lr0);
  apply(o.epochs, cfg.train.epochs);
  apply(o.batch_size, cfg.train.batch_size);
  if (o.pairing) cfg.train = train_config_from_json({{"pairing", *o.pairing}}, cfg.train);
  cfg.validate();

  const auto ds = manifest_from_json(read_json_file(o.manifest));
  check_upstream(manifest_provenance(ds), cfg, "manifest " + o.manifest);
  check_upstream(read_sidecar(o.regions), cfg, "region embeddings " + o.regions);
  check_upstream(read_sidecar(o.text), cfg, "text embeddings " + o.text);
  const auto region_emb = read_embeddings(o.regions);
  const auto text_emb = read_embeddings(o.text);

  const auto theta_pre = initial_head(region_emb.dim(), text_emb.dim());
  const auto result = train(ds, region_emb, text_emb, theta_pre.cast<double>(), cfg.train);

  const Json inputs = {{"manifest", file_digest(o.manifest)},
                       {"regions", file_digest(o.regions)},
                       {"text", file_digest(o.text)}};
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  auto header = [&](const char* role) {
    Json h = provenance_doc(cfg, Stage::kTrain, inputs);
    h["role"] = role;
    return h;
  };
  write_checkpoint(dir / "head_pre.ckpt", theta_pre, header("pre"));
  write_checkpoint(dir / "head_ft.ckpt", result.theta.cast<float>(), header("ft"));
  write_text_file(dir / "history.csv", history_to_csv(result.history));
  write_sidecar(dir / "history.csv", provenance_doc(cfg, Stage::kTrain, inputs));
  ctx.log->info("{} steps over {} samples", result.history.size(), ds.samples.size());
  if (!result.history.empty()) {
    ctx.out << "steps: " << result.history.size() << ", first loss: " << result.history.front().loss
            << ", last loss: " << result.history.back().loss << "\n";
  }
}

struct MergeOpts {
  Common common;
  std::string pre, ft, out;
  std::optional<double> alpha;
};

void cmd_merge(const MergeOpts& o, Context& ctx) {
  auto cfg = load_config(o.common);
  apply(o.alpha, cfg.merge.alpha);
  cfg.validate();
  const auto pre = read_checkpoint(o.pre);
  const auto ft = read_checkpoint(o.ft);
  check_upstream(checkpoint_provenance(pre.header), cfg, "checkpoint " + o.pre);
  check_upstream(checkpoint_provenance(ft.header), cfg, "checkpoint " + o.ft);
  const auto merged = interpolate(pre.theta, ft.theta, cfg.merge);
  Json header = provenance_doc(cfg, Stage::kMerge, {{"pre", file_digest(o.pre)}, {"ft", file_digest(o.ft)}});
  header["alpha"] = cfg.merge.alpha;
  write_checkpoint(o.out, merged, header);
  ctx.out << "merged with alpha " << cfg.merge.alpha << "\n";
}

struct InferOpts {
  Common common;
  std::string checkpoint, detections, background, text, vocab, open_set, out;
  std::optional<double> nms_iou, min_score;
};

void cmd_infer(const InferOpts& o, Context& ctx) {
  auto cfg = load_config(o.common);
  apply(o.nms_iou, cfg.fusion.nms_iou);
  apply(o.min_score, cfg.fusion.min_score);
  cfg.validate();

  const auto ckpt = read_checkpoint(o.checkpoint);
  check_upstream(checkpoint_provenance(ckpt.header), cfg, "checkpoint " + o.checkpoint);
  check_upstream(read_sidecar(o.background), cfg, "background features " + o.background);
  check_upstream(read_sidecar(o.text), cfg, "text embeddings " + o.text);
  const auto vocab = load_vocab(o.vocab);
  const auto closed = detections_from_json(read_json_file(o.detections), vocab);
  std::vector<DetectionRecord> open;
  if (!o.open_set.empty()) open = detections_from_json(read_json_file(o.open_set), vocab);
  const auto bg = read_embeddings(o.background);
  const auto text = read_embeddings(o.text);

  const auto fused =
      cooperative_inference(closed, open, bg, text, ckpt.theta, vocab, cfg.fusion, cfg.train.ln_epsilon);
  write_text_file(o.out, dump_canonical(detections_to_json(fused, vocab)));
  Json inputs = {{"checkpoint", file_digest(o.checkpoint)},
                 {"detections", file_digest(o.detections)},
                 {"background", file_digest(o.background)},
                 {"text", file_digest(o.text)},
                 {"vocab", file_digest(o.vocab)}};
  if (!o.open_set.empty()) inputs["open_set"] = file_digest(o.open_set);
  write_sidecar(o.out, provenance_doc(cfg, Stage::kInfer, inputs));
  ctx.out << "fused detections: " << fused.size() << "\n";
}

struct EvalOpts {
  Common common;
  std::string detections, ground_truth, vocab, out;
  bool table = false;
};

void cmd_eval(const EvalOpts& o, Context& ctx) {
  const auto cfg = load_config(o.common);
  cfg.validate();
  check_upstream(read_sidecar(o.detections), cfg, "detections " + o.detections);
  const auto vocab = load_vocab(o.vocab);
  const auto dets = detections_from_json(read_json_file(o.detections), vocab);
  const auto gts = ground_truth_from_json(read_json_file(o.ground_truth), vocab);
  const auto report = evaluate(dets, gts, vocab, cfg.eval);
  Json doc = eval_report_to_json(report);
  doc["provenance"] = provenance_doc(
      cfg, Stage::kEval, {{"detections", file_digest(o.detections)}, {"ground_truth", file_digest(o.ground_truth)}});
  if (!o.out.empty()) write_text_file(o.out, dump_canonical(doc));
  if (o.table) ctx.out << format_report_table(report);
}

struct AblateOpts {
  Common common;
  std::string sweep, out;
};

void cmd_ablate(const AblateOpts& o, Context& ctx) {
  const auto cfg = load_config(o.common);
  cfg.validate();
  const auto sweep = sweep_spec_from_json(read_json_file(o.sweep));
  const auto rows = run_ablation(cfg, sweep);
  const auto csv = ablation_to_csv(rows);
  write_text_file(o.out, csv);
  write_sidecar(o.out, {{"stage", "ablate"},
                        {"config", pipeline_config_to_json(cfg)},
                        {"inputs", {{"sweep", file_digest(o.sweep)}}}});
  for (const auto& r : rows) {
    if (r.status != "ok") ctx.log->warn("{}: {}", r.variant, r.status);
  }
  ctx.out << csv;
}

void emit_error(std::ostream& err, std::string_view code, const std::string& message) {
  err << Json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decoupled head adaptation toolkit for open-vocabulary detection", "dat"};
  app.require_subcommand(1);
  std::function<void(Context&)> action;

  SynthScenesOpts synth;
  auto* s = app.add_subcommand("synth-scenes", "Write a seeded synthetic world (inputs for the other commands)");
  add_common(s, synth.common);
  s->add_option("--out-dir", synth.out_dir)->required();
  s->callback([&] { action = [&](Context& c) { cmd_synth_scenes(synth, c); }; });

  BuildOpts build;
  auto* b = app.add_subcommand("build-dataset", "Build the pseudo-labelled region manifest");
  add_common(b, build.common);
  b->add_option("--detections", build.detections)->required();
  b->add_option("--images", build.images)->required();
  b->add_option("--vocab", build.vocab)->required();
  b->add_option("--out", build.out)->required();
  b->add_option("--tau-conf", build.tau_conf);
  b->add_option("--n-max", build.n_max);
  b->add_option("--crop-size", build.crop_size);
  b->callback([&] { action = [&](Context& c) { cmd_build_dataset(build, c); }; });

  EmbedOpts embed;
  auto* e = app.add_subcommand("embed-synth", "Synthetic region and text embeddings in the DATE format");
  add_common(e, embed.common);
  e->add_option("--manifest", embed.manifest);
  e->add_option("--regions-out", embed.regions_out);
  e->add_option("--vocab", embed.vocab);
  e->add_option("--text-out", embed.text_out);
  e->callback([&] { action = [&](Context& c) { cmd_embed_synth(embed, c); }; });

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "Adapt the head on region/text pairs");
  add_common(t, tr.common);
  t->add_option("--manifest", tr.manifest)->required();
  t->add_option("--regions", tr.regions)->required();
  t->add_option("--text", tr.text)->required();
  t->add_option("--out-dir", tr.out_dir)->required();
  t->add_option("--lr", tr.lr0);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--pairing", tr.pairing)->check(CLI::IsMember({"batch", "vocabulary"}));
  t->callback([&] { action = [&](Context& c) { cmd_train(tr, c); }; });

  MergeOpts mg;
  auto* m = app.add_subcommand("merge", "Interpolate pre-trained and fine-tuned heads");
  add_common(m, mg.common);
  m->add_option("--pre", mg.pre)->required();
  m->add_option("--ft", mg.ft)->required();
  m->add_option("--out", mg.out)->required();
  m->add_option("--alpha", mg.alpha);
  m->callback([&] { action = [&](Context& c) { cmd_merge(mg, c); }; });

  InferOpts inf;
  auto* i = app.add_subcommand("infer", "Relabel background proposals and fuse with detector output");
  add_common(i, inf.common);
  i->add_option("--checkpoint", inf.checkpoint)->required();
  i->add_option("--detections", inf.detections)->required();
  i->add_option("--background-features", inf.background)->required();
  i->add_option("--text", inf.text)->required();
  i->add_option("--vocab", inf.vocab)->required();
  i->add_option("--open-set", inf.open_set);
  i->add_option("--out", inf.out)->required();
  i->add_option("--nms-iou", inf.nms_iou);
  i->add_option("--min-score", inf.min_score);
  i->callback([&] { action = [&](Context& c) { cmd_infer(inf, c); }; });

  EvalOpts ev;
  auto* v = app.add_subcommand("eval", "COCO-style AP report for novel, base and all classes");
  add_common(v, ev.common);
  v->add_option("--detections", ev.detections)->required();
  v->add_option("--ground-truth", ev.ground_truth)->required();
  v->add_option("--vocab", ev.vocab)->required();
  v->add_option("--out", ev.out);
  v->add_flag("--table", ev.table, "Print a text table to stdout");
  v->callback([&] { action = [&](Context& c) { cmd_eval(ev, c); }; });

  AblateOpts ab;
  auto* a = app.add_subcommand("ablate", "Sweep dataset size, region source and alpha; write a CSV");
  add_common(a, ab.common);
  a->add_option("--sweep", ab.sweep)->required();
  a->add_option("--out", ab.out)->required();
  a->callback([&] { action = [&](Context& c) { cmd_ablate(ab, c); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    emit_error(err, to_string(ErrorCode::kInvalidArgument), e.what());
    return 2;
  }

  Context ctx{out, make_logger(err)};
  try {
    action(ctx);
  } catch (const Error& e) {
    emit_error(err, to_string(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error(err, "internal", e.what());
    return 1;
  }
  return 0;
}

}  // namespace dat
