// Copyright 2026 The HyperKD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>

#include "hyperkd/banddef.hpp"
#include "hyperkd/datastore.hpp"
#include "hyperkd/downstream.hpp"
#include "hyperkd/error.hpp"
#include "hyperkd/parallel.hpp"
#include "hyperkd/saliency.hpp"
#include "hyperkd/trainer.hpp"

namespace hyperkd::cli {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool dry_run = false;
  std::string config;
  std::string preset;
  std::vector<std::string> sets;
};

struct GenDataArgs {
  std::string out;
  std::size_t train = 16, eval = 4, bands = 32, size = 32, cell = 8, planted = 4, classes = 4;
  double amplitude = 0.08;
};

struct AlignArgs {
  std::string store, out, target_bands, overlap = "contained";
};

struct ScoreArgs {
  std::string store, out, tile, method = "gabor", mode = "salient_masked";
  double ratio = 0.75;
  std::size_t patch = 8;
};

struct PretrainArgs {
  std::string store, out;
};

struct EvalArgs {
  std::string store, checkpoint, out;
};

struct DownstreamArgs {
  std::string store, checkpoint, out, task = "classification";
  std::size_t steps = 100, batch = 4, classes = 4;
  double lr = 1e-2;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cli", "cannot write " + path.string());
  out << text;
  if (!out) throw DataError("cli", "failed writing " + path.string());
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

const HyperCube& find_tile(const TileStore& store, const std::string& id) {
  if (id.empty()) return store.tiles.front();
  return store.tile(id);
}

// ---- gen-data ---------------------------------------------------------------------

int gen_data(const Common& c, const GenDataArgs& a, std::ostream& out) {
  SceneSpec spec;
  spec.bands = anchored_band_table(a.bands);
  spec.height = spec.width = a.size;
  spec.cell = a.cell;
  spec.planted_count = a.planted;
  spec.amplitude = a.amplitude;
  spec.num_classes = a.classes;
  const std::uint64_t seed = c.seed.value_or(0);
  if (a.train == 0) throw DataError("cli", "gen-data needs at least one train tile");
  if (c.dry_run) {
    spec.seed = seed;
    gen_scene(spec);
    out << "dry run: would write " << a.train + a.eval << " tiles of " << a.bands << "x" << a.size << "x" << a.size
        << " to " << a.out << '\n';
    return kExitOk;
  }
  const TileStore store = gen_dataset(spec, seed, a.train, a.eval);
  write_store(store, a.out);
  out << "wrote " << store.tiles.size() << " tiles to " << a.out << '\n';
  return kExitOk;
}

// ---- align-bands ------------------------------------------------------------------

int align_bands(const Common& c, const AlignArgs& a, std::ostream& out) {
  const BandTable target = a.target_bands.empty() ? hls_band_table() : load_band_table(a.target_bands);
  const OverlapMode mode = a.overlap == "contained" ? OverlapMode::kContained
                           : a.overlap == "intersecting"
                               ? OverlapMode::kIntersecting
                               : throw DataError("cli", "unknown overlap mode '" + a.overlap + "'");
  const StoreManifest manifest = read_manifest(a.store);
  const AlignmentMap map = build_alignment(manifest.band_table, target, mode);
  if (c.dry_run) {
    for (std::size_t i = 0; i < map.subsets.size(); ++i) {
      out << "target band " << target[i].band_id << ": " << map.subsets[i].size() << " source bands\n";
    }
    return kExitOk;
  }
  const TileStore src = read_store(a.store);
  TileStore dst;
  for (const auto& t : src.tiles) {
    HyperCube aligned = align_cube(t, map);
    aligned.data = round_to_f32(std::move(aligned.data));
    dst.tiles.push_back(std::move(aligned));
  }
  dst.labels = src.labels;
  dst.targets = src.targets;
  if (!dst.split(Split::kTrain).empty()) dst.stats = compute_stats(dst.split(Split::kTrain));
  write_store(dst, a.out);
  out << "aligned " << dst.tiles.size() << " tiles to " << target.size() << " bands in " << a.out << '\n';
  return kExitOk;
}

// ---- score-patches ----------------------------------------------------------------

int score_patches_cmd(const Common& c, const ScoreArgs& a, std::ostream& out) {
  const saliency::Method method = saliency::parse_method(a.method);
  const saliency::MaskMode mode = saliency::parse_mask_mode(a.mode);
  if (!(a.ratio >= 0.0 && a.ratio <= 1.0)) throw DataError("cli", "--ratio must lie in [0, 1]");
  const TileStore store = read_store(a.store);
  const HyperCube& tile = find_tile(store, a.tile);
  const auto scores = saliency::score_patches(tile, method, a.patch);
  const auto mask = saliency::build_mask(scores, a.ratio, mode, c.seed.value_or(0));
  std::string csv = "patch_index,row,col,score,masked\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    csv += std::to_string(i) + ',' + std::to_string(i / scores.grid_cols) + ',' + std::to_string(i % scores.grid_cols) +
           ',' + num(scores.scores[i]) + ',' + (mask.masked[i] ? "1" : "0") + '\n';
  }
  if (c.dry_run) {
    out << "dry run: scored " << scores.size() << " patches of tile '" << tile.tile_id << "'\n";
    return kExitOk;
  }
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "scores.csv", csv);
  write_text(fs::path(a.out) / "scores.pgm", saliency::scores_to_pgm(scores));
  out << "scored " << scores.size() << " patches of tile '" << tile.tile_id << "', " << mask.masked_count()
      << " masked\n";
  return kExitOk;
}

// ---- pretrain ---------------------------------------------------------------------

trainer::TrainConfig assemble_config(const Common& c, const StoreManifest& m) {
  std::map<std::string, std::string> kv;
  if (!c.config.empty()) kv = trainer::read_key_values(c.config);
  if (!c.preset.empty()) kv["preset"] = c.preset;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw DataError("cli", "--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (c.seed) kv["seed"] = std::to_string(*c.seed);
  if (!kv.count("in_channels")) kv["in_channels"] = std::to_string(m.bands);
  if (!kv.count("image_size")) kv["image_size"] = std::to_string(m.height);
  trainer::TrainConfig cfg = trainer::TrainConfig::from_map(kv);
  cfg.validate();
  return cfg;
}

int pretrain(const Common& c, const PretrainArgs& a, std::ostream& out) {
  const StoreManifest manifest = read_manifest(a.store);
  const trainer::TrainConfig cfg = assemble_config(c, manifest);
  if (cfg.model.in_channels != manifest.bands || cfg.model.image_size != manifest.height ||
      manifest.height != manifest.width) {
    throw DataError("cli", "model input dims do not match the store");
  }
  if (!manifest.has_stats) throw DataError("cli", "store has no band statistics");
  if (c.dry_run) {
    for (const auto& [k, v] : cfg.to_map()) out << k << '=' << v << '\n';
    return kExitOk;
  }
  const TileStore store = read_store(a.store);
  const trainer::PretrainResult r = trainer::run_pretraining(cfg, store, a.out);
  out << "trained " << r.log.steps().size() << " steps (preset " << cfg.preset << ")";
  if (!r.log.epochs().empty() && r.log.epochs().back().eval) {
    const auto& e = *r.log.epochs().back().eval;
    out << ", eval psnr " << e.psnr << " dB, ssim " << e.ssim;
  }
  out << "; outputs in " << a.out << '\n';
  return kExitOk;
}

// ---- eval-recon -------------------------------------------------------------------

int eval_recon(const Common& c, const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const trainer::TrainConfig cfg = trainer::TrainConfig::from_map(ckpt.config);
  const StoreManifest manifest = read_manifest(a.store);
  if (cfg.model.in_channels != manifest.bands || cfg.model.image_size != manifest.height) {
    throw DataError("cli", "checkpoint model does not match the store dims");
  }
  if (c.dry_run) {
    out << "dry run: checkpoint step " << ckpt.state.at("global_step") << " matches store " << a.store << '\n';
    return kExitOk;
  }
  const TileStore store = read_store(a.store);
  trainer::Trainer t(cfg, store, trainer::make_teacher(cfg));
  t.restore(ckpt);
  auto tiles = store.split(Split::kEval);
  if (tiles.empty()) tiles = store.split(Split::kTrain);
  const trainer::EvalResult r = t.evaluate(tiles);
  fs::create_directories(a.out);
  r.tiles.write_tiles_csv(fs::path(a.out) / "tiles.csv");
  r.tiles.write_channels_csv(fs::path(a.out) / "channels.csv");
  write_text(fs::path(a.out) / "summary.csv", "psnr,ssim,max_channel_psnr,feature_distance\n" + num(r.psnr) + ',' +
                                                  num(r.ssim) + ',' + num(r.max_channel_psnr) + ',' +
                                                  num(r.feature_distance) + '\n');
  out << "evaluated " << tiles.size() << " tiles: psnr " << r.psnr << " dB, ssim " << r.ssim << '\n';
  return kExitOk;
}

// ---- downstream -------------------------------------------------------------------

int downstream_cmd(const Common& c, const DownstreamArgs& a, std::ostream& out) {
  downstream::HeadConfig head;
  head.task = downstream::parse_task(a.task);
  head.num_classes = a.classes;
  head.validate();
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const StoreManifest manifest = read_manifest(a.store);
  if (!manifest.has_stats) throw DataError("cli", "store has no band statistics");
  if (c.dry_run) {
    attach_head(ckpt, head, 0);
    out << "dry run: " << downstream::task_name(head.task) << " head on checkpoint " << a.checkpoint << '\n';
    return kExitOk;
  }
  const TileStore store = read_store(a.store);
  std::vector<HyperCube> norm;
  norm.reserve(store.tiles.size());
  for (const auto& t : store.tiles) norm.push_back(normalize(t, *store.stats));

  std::vector<downstream::HeadSample> train, eval;
  std::vector<const std::vector<double>*> train_targets;
  for (const auto& t : norm) {
    downstream::HeadSample s{&t, {}, {}};
    if (head.task == downstream::Task::kClassification) {
      auto it = store.labels.find(t.tile_id);
      if (it == store.labels.end()) throw DataError("cli", "tile '" + t.tile_id + "' has no label map");
      s.labels = it->second;
    } else {
      auto it = store.targets.find(t.tile_id);
      if (it == store.targets.end()) throw DataError("cli", "tile '" + t.tile_id + "' has no target map");
      s.targets = it->second;
      if (t.split == Split::kTrain) train_targets.push_back(&it->second);
    }
    (t.split == Split::kTrain ? train : eval).push_back(std::move(s));
  }
  if (train.empty()) throw DataError("cli", "store has no train tiles");
  if (eval.empty()) eval = train;
  if (head.task == downstream::Task::kRegression) {
    const downstream::TargetStats ts = downstream::compute_target_stats(train_targets);
    for (auto* set : {&train, &eval})
      for (auto& s : *set) s.targets = downstream::normalize_targets(s.targets, ts);
  }

  const std::uint64_t seed = c.seed.value_or(0);
  downstream::DownstreamModel model = downstream::attach_head(ckpt, head, seed);
  const std::uint64_t encoder_hash = model.encoder_hash();
  downstream::train_head(model, train, {a.steps, a.batch, a.lr, seed});
  if (model.encoder_hash() != encoder_hash) throw InvariantError("cli", "encoder changed during head training");
  fs::create_directories(a.out);
  if (head.task == downstream::Task::kClassification) {
    const auto r = downstream::eval_classification(model, eval);
    downstream::write_classification_csv(r, fs::path(a.out) / "results.csv");
    out << "top1 " << r.top1 << ", mIoU " << r.miou << " over " << r.confusion.total() << " pixels\n";
  } else {
    const double mae = downstream::eval_regression(model, eval);
    downstream::write_regression_csv(mae, fs::path(a.out) / "results.csv");
    out << "mae " << mae << " (normalized units)\n";
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HyperKD: cross-spectral knowledge distillation toolkit", "hyperkd"};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--seed", common.seed, "Seed for every random choice");
  app.add_option("--threads", common.threads, "Worker threads for numeric kernels")->check(CLI::PositiveNumber);
  app.add_flag("--dry-run", common.dry_run, "Validate inputs and configuration without writing anything");
  app.add_option("--config", common.config, "key=value training config file (pretrain)");
  app.add_option("--preset", common.preset,
                 "Training preset: student, base_kd, hyperkd_wavelet_visible, hyperkd_wavelet, hyperkd_gabor");
  app.add_option("--set", common.sets, "Config override key=value (repeatable)")->allow_extra_args(false);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Write a seeded synthetic tile store");
  gen->add_option("--out", gd.out, "Store directory")->required();
  gen->add_option("--train", gd.train, "Train tiles")->capture_default_str();
  gen->add_option("--eval", gd.eval, "Eval tiles")->capture_default_str();
  gen->add_option("--bands", gd.bands, "Spectral bands")->capture_default_str();
  gen->add_option("--size", gd.size, "Tile side in pixels")->capture_default_str();
  gen->add_option("--cell", gd.cell, "Layout cell side in pixels")->capture_default_str();
  gen->add_option("--planted", gd.planted, "Textured cells per tile")->capture_default_str();
  gen->add_option("--amplitude", gd.amplitude, "Texture amplitude (reflectance)")->capture_default_str();
  gen->add_option("--classes", gd.classes, "Label classes")->capture_default_str();

  AlignArgs al;
  auto* align = app.add_subcommand("align-bands", "Aggregate store bands into target bands");
  align->add_option("--store", al.store, "Source store")->required();
  align->add_option("--out", al.out, "Output store")->required();
  align->add_option("--target-bands", al.target_bands, "Band table file (default: the six HLS bands)");
  align->add_option("--overlap", al.overlap, "contained or intersecting")->capture_default_str();

  ScoreArgs sc;
  auto* score = app.add_subcommand("score-patches", "Score the patches of one tile and build a mask");
  score->add_option("--store", sc.store, "Store directory")->required();
  score->add_option("--out", sc.out, "Output directory")->required();
  score->add_option("--tile", sc.tile, "Tile id (default: first tile)");
  score->add_option("--method", sc.method, "gabor, wavelet or combined")->capture_default_str();
  score->add_option("--mode", sc.mode, "salient_masked, salient_visible or random")->capture_default_str();
  score->add_option("--ratio", sc.ratio, "Masking ratio")->capture_default_str();
  score->add_option("--patch", sc.patch, "Patch side in pixels")->capture_default_str();

  PretrainArgs pt;
  auto* pre = app.add_subcommand("pretrain", "Distillation pretraining of the student");
  pre->add_option("--store", pt.store, "Store directory")->required();
  pre->add_option("--out", pt.out, "Run directory")->required();

  EvalArgs ev;
  auto* evc = app.add_subcommand("eval-recon", "Reconstruction metrics of a checkpoint on eval tiles");
  evc->add_option("--store", ev.store, "Store directory")->required();
  evc->add_option("--checkpoint", ev.checkpoint, "Pretraining checkpoint")->required();
  evc->add_option("--out", ev.out, "Output directory")->required();

  DownstreamArgs ds;
  auto* down = app.add_subcommand("downstream", "Train and evaluate a head on the frozen encoder");
  down->add_option("--store", ds.store, "Store directory with labels or targets")->required();
  down->add_option("--checkpoint", ds.checkpoint, "Pretraining checkpoint")->required();
  down->add_option("--out", ds.out, "Output directory")->required();
  down->add_option("--task", ds.task, "classification or regression")->capture_default_str();
  down->add_option("--classes", ds.classes, "Number of classes")->capture_default_str();
  down->add_option("--steps", ds.steps, "Head training steps")->capture_default_str();
  down->add_option("--batch", ds.batch, "Head batch size")->capture_default_str();
  down->add_option("--lr", ds.lr, "Head learning rate")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    set_num_threads(common.threads);
    if (gen->parsed()) return gen_data(common, gd, out);
    if (align->parsed()) return align_bands(common, al, out);
    if (score->parsed()) return score_patches_cmd(common, sc, out);
    if (pre->parsed()) return pretrain(common, pt, out);
    if (evc->parsed()) return eval_recon(common, ev, out);
    if (down->parsed()) return downstream_cmd(common, ds, out);
    err << "error: no subcommand\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << '\n';
    return kExitData;
  } catch (const InvariantError& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace hyperkd::cli
