#include "cli/commands.hpp"

#include <CLI11.hpp>
#include <cstring>
#include <filesystem>
#include <iostream>

#include "bench/bench.hpp"
#include "cli/config.hpp"
#include "core/check.hpp"
#include "data/image_io.hpp"
#include "data/synth.hpp"
#include "metrics/metrics.hpp"
#include "model/checkpoint.hpp"
#include "sampler/sampler.hpp"
#include "train/trainer.hpp"

namespace flowvid {

namespace fs = std::filesystem;

namespace {

uint64_t mix(uint64_t seed, uint64_t salt) {
  uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ull + 0xd1b54a32d192ed03ull);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 31;
  return x;
}

NoiseSchedule schedule_from(const RunConfig& cfg) {
  return NoiseSchedule::linear(cfg.get_int("timesteps"), cfg.get_float("beta_start"),
                               cfg.get_float("beta_end"));
}

SamplerConfig sampler_config_from(const RunConfig& cfg) {
  SamplerConfig s;
  s.steps = cfg.get_int("infer_steps");
  s.speedup_steps = cfg.get_int("speedup_steps");
  s.guidance_scale = cfg.get_float("guidance_scale");
  s.use_anchor = cfg.get_bool("use_anchor");
  s.use_interpolation = cfg.get_bool("use_interpolation");
  s.use_cache = cfg.get_bool("use_cache");
  s.adapters_enabled = cfg.get_bool("adapters_enabled");
  s.seed = (uint64_t)cfg.get_long("seed");
  return s;
}

std::vector<std::string> list_sample_dirs(const std::string& root) {
  FV_CHECK(fs::is_directory(root), "not a directory: " << root);
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "clip.ten")) dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  cfg.write_resolved(out_dir + "/resolved.cfg");
  const int count = cfg.get_int("count");
  const int frames = cfg.get_int("frames");
  const int res = cfg.get_int("resolution");
  const int classes = cfg.get_int("classes");
  const uint64_t seed = (uint64_t)cfg.get_long("seed");
  const std::string kind = cfg.get_str("kind");
  FV_CHECK(kind == "br" || kind == "or", "kind must be 'br' or 'or', got '" << kind << "'");
  const bool ppm = cfg.get_bool("ppm");
  for (int i = 0; i < count; ++i) {
    Rng rng(mix(seed, (uint64_t)i));
    const int cls = i % classes;
    SceneSpec spec = make_scene(cls, frames, res, res, rng);
    ClipSample clip = generate_clip(spec);
    MaskSpec ms;
    ms.kind = kind == "br" ? MaskSpec::Kind::kBackgroundRandom : MaskSpec::Kind::kObject;
    clip.mask = generate_mask(ms, spec, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "/sample_%04d", i);
    save_sample(out_dir + name, clip, ppm);
  }
  std::cerr << "wrote " << count << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
              const std::string& init_from, const std::string& resume_from) {
  fs::create_directories(out_dir);
  cfg.write_resolved(out_dir + "/resolved.cfg");

  std::vector<ClipSample> dataset;
  for (const std::string& d : list_sample_dirs(data_dir)) dataset.push_back(load_sample(d));
  FV_CHECK(!dataset.empty(), "no samples under " << data_dir);

  ModelConfig mc = init_from.empty() && resume_from.empty()
                       ? cfg.model_config()
                       : checkpoint_config(init_from.empty() ? resume_from : init_from);
  Model model(mc, (uint64_t)cfg.get_long("init_seed"));
  if (!init_from.empty()) load_checkpoint(init_from, model.params());

  TrainConfig tc;
  tc.stage = cfg.get_int("stage");
  tc.epochs = cfg.get_int("epochs");
  tc.lr = cfg.get_float("lr");
  tc.lambda = cfg.get_float("lambda");
  tc.batch_accum = cfg.get_int("batch_accum");
  tc.micro_batch = cfg.get_int("micro_batch");
  tc.seed = (uint64_t)cfg.get_long("seed");
  tc.cond_dropout = cfg.get_float("cond_dropout");
  tc.use_anchor = cfg.get_bool("use_anchor");
  tc.adapters_enabled = cfg.get_bool("adapters_enabled");
  tc.max_steps = cfg.get_int("max_steps");
  tc.out_dir = out_dir;
  tc.resume_from = resume_from;

  NoiseSchedule sched = schedule_from(cfg);
  Trainer trainer(model, sched, tc);
  trainer.run(dataset);
  std::cerr << "training done, checkpoints under " << out_dir << "\n";
  return 0;
}

int cmd_infer(const RunConfig& cfg, const std::string& checkpoint, const std::string& input,
              const std::string& mask_path, const std::string& flow_path,
              const std::string& anchor_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  cfg.write_resolved(out_dir + "/resolved.cfg");

  ModelConfig mc = checkpoint_config(checkpoint);
  Model model(mc, (uint64_t)cfg.get_long("init_seed"));
  load_checkpoint(checkpoint, model.params());

  Tensor frames = read_ten(input);
  Tensor mask = read_ten(mask_path);

  SampleInputs in;
  in.v_m = frames;
  in.mask = mask;
  in.cond = Cond{cfg.get_int("class_id"), false};
  if (!flow_path.empty()) in.flow_source = read_flo2(flow_path);

  SamplerConfig sc = sampler_config_from(cfg);
  if (sc.use_anchor) {
    if (!anchor_path.empty()) {
      in.anchor = read_ppm(anchor_path);
    } else {
      // no external anchor given: fall back to the first input frame as-is
      in.anchor = Tensor(Shape{frames.dim(1), frames.dim(2), frames.dim(3)});
      std::memcpy(in.anchor.data(), frames.data(), in.anchor.numel() * sizeof(float));
    }
  }

  ModelPredictor pred(model.denoiser());
  ModelFlowCompleter compl_(model.flow_net());
  Sampler sampler(pred, &compl_, schedule_from(cfg));
  Tensor out = sampler.sample(sc, in);

  write_ten(out_dir + "/output.ten", out);
  for (int f = 0; f < out.dim(0); ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "/frame_%03d.ppm", f);
    write_ppm(out_dir + name, out, f);
  }
  std::cerr << "inpainted " << out.dim(0) << " frames -> " << out_dir << " ("
            << sampler.last_wall_ms() << " ms, " << sampler.stats().denoiser_frame_forwards
            << " frame forwards)\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& pred_dir, const std::string& gt_dir,
             const std::string& out_csv) {
  const fs::path outp(out_csv);
  if (outp.has_parent_path()) fs::create_directories(outp.parent_path());
  const std::string resolved =
      (outp.has_parent_path() ? outp.parent_path() / "resolved.cfg" : fs::path("resolved.cfg"))
          .string();
  cfg.write_resolved(resolved);

  EvalReport report;
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    if (!e.is_directory()) continue;
    const std::string name = e.path().filename().string();
    const std::string pred_ten = (e.path() / "output.ten").string();
    if (!fs::exists(pred_ten)) continue;
    const std::string gt_sample = gt_dir + "/" + name;
    FV_CHECK(fs::exists(gt_sample + "/clip.ten"),
             "no ground truth for '" << name << "' under " << gt_dir);
    Tensor pred = read_ten(pred_ten);
    ClipSample gt = load_sample(gt_sample);
    ClipScores s;
    s.name = name;
    s.psnr = psnr(pred, gt.frames);
    s.ssim = ssim(pred, gt.frames);
    s.e_warp = warp_error(pred, gt.flow);
    s.tc = temporal_consistency(pred);
    report.clips.push_back(s);
  }
  FV_CHECK(!report.clips.empty(), "no predictions with output.ten under " << pred_dir);
  std::sort(report.clips.begin(), report.clips.end(),
            [](const ClipScores& a, const ClipScores& b) { return a.name < b.name; });
  report.finalize();
  report.write_csv(out_csv);
  std::cerr << "eval over " << report.clips.size() << " clips: psnr " << report.aggregate.psnr
            << " ssim " << report.aggregate.ssim << " e_warp " << report.aggregate.e_warp
            << " tc " << report.aggregate.tc << " -> " << out_csv << "\n";
  return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& checkpoint, const std::string& data_dir,
              std::vector<std::string> variants, const std::vector<int>& sweep,
              const std::string& out_csv) {
  const fs::path outp(out_csv);
  if (outp.has_parent_path()) fs::create_directories(outp.parent_path());
  cfg.write_resolved(
      (outp.has_parent_path() ? outp.parent_path() / "resolved.cfg" : fs::path("resolved.cfg"))
          .string());

  ModelConfig mc = checkpoint_config(checkpoint);
  Model model(mc, (uint64_t)cfg.get_long("init_seed"));
  load_checkpoint(checkpoint, model.params());

  std::vector<ClipSample> eval_set;
  for (const std::string& d : list_sample_dirs(data_dir)) eval_set.push_back(load_sample(d));
  FV_CHECK(!eval_set.empty(), "no samples under " << data_dir);

  ModelPredictor pred(model.denoiser());
  ModelFlowCompleter compl_(model.flow_net());
  Sampler sampler(pred, &compl_, schedule_from(cfg));
  SamplerConfig base = sampler_config_from(cfg);
  const int runs = cfg.get_int("bench_runs");

  if (variants.empty()) variants = kBenchVariants;
  std::vector<BenchRow> rows = run_bench(sampler, base, variants, eval_set, runs);
  write_bench_csv(out_csv, rows);
  for (const BenchRow& r : rows)
    std::cerr << r.variant << ": " << r.wall_ms << " ms, frame forwards "
              << r.denoiser_frame_forwards << ", flow calls " << r.flow_branch_calls
              << ", kv calls " << r.kv_projection_calls << ", psnr " << r.psnr << ", speedup "
              << 100.0 * r.speedup_vs_flow_every_step << "%\n";

  if (!sweep.empty()) {
    std::vector<SweepRow> srows = sweep_speedup(sampler, base, sweep, eval_set, runs);
    const std::string sweep_csv = out_csv + ".sweep.csv";
    write_sweep_csv(sweep_csv, srows);
    for (const SweepRow& r : srows)
      std::cerr << "S=" << r.S << ": psnr " << r.psnr << " ssim " << r.ssim << " wall "
                << r.wall_ms << " ms\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  RunConfig cfg;

  CLI::App app{"flowvid: flow-guided video inpainting on synthetic clips"};
  app.require_subcommand(1);
  app.footer("config keys (file or --set key=value):\n" + cfg.help_text());

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "flat key=value config file")->expected(1);
  app.add_option("--set", overrides, "override a config key, key=value");

  auto* gen = app.add_subcommand("gen-data", "generate synthetic clips with exact flow");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  std::string gen_count, gen_kind, gen_seed;
  gen->add_option("--count", gen_count, "samples to generate");
  gen->add_option("--kind", gen_kind, "mask kind: br|or");
  gen->add_option("--seed", gen_seed, "generation seed");

  auto* train = app.add_subcommand("train", "run a training stage");
  std::string train_data, train_out, train_stage, train_init, train_resume;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint directory")->required();
  train->add_option("--stage", train_stage, "training stage 1|2");
  train->add_option("--init", train_init, "initialize weights from checkpoint");
  train->add_option("--resume", train_resume, "resume full training state from checkpoint");

  auto* infer = app.add_subcommand("infer", "inpaint a clip");
  std::string in_ckpt, in_input, in_mask, in_flow, in_anchor, in_out, in_class;
  infer->add_option("--checkpoint", in_ckpt, "trained checkpoint directory")->required();
  infer->add_option("--input", in_input, "input clip (.ten)")->required();
  infer->add_option("--mask", in_mask, "mask sequence (.ten)")->required();
  infer->add_option("--flow", in_flow, "estimated flow (.flo2), optional");
  infer->add_option("--anchor", in_anchor, "externally inpainted anchor frame (.ppm)");
  infer->add_option("--out", in_out, "output directory")->required();
  infer->add_option("--class-id", in_class, "condition class id");

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  std::string ev_pred, ev_gt, ev_out;
  eval->add_option("--pred", ev_pred, "predictions directory")->required();
  eval->add_option("--gt", ev_gt, "ground-truth dataset directory")->required();
  eval->add_option("--out", ev_out, "report csv path")->required();

  auto* bench = app.add_subcommand("bench", "efficiency variants and speed-step sweep");
  std::string b_ckpt, b_data, b_out, b_variants, b_sweep;
  bench->add_option("--checkpoint", b_ckpt, "trained checkpoint directory")->required();
  bench->add_option("--data", b_data, "eval set directory")->required();
  bench->add_option("--variants", b_variants, "comma list of variants (default: all)");
  bench->add_option("--sweep-s", b_sweep, "comma list of speed-up steps to sweep");
  bench->add_option("--out", b_out, "bench csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    cfg.apply_overrides(overrides);

    if (gen->parsed()) {
      if (!gen_count.empty()) cfg.set("count", gen_count);
      if (!gen_kind.empty()) cfg.set("kind", gen_kind);
      if (!gen_seed.empty()) cfg.set("seed", gen_seed);
      return cmd_gen_data(cfg, gen_out);
    }
    if (train->parsed()) {
      if (!train_stage.empty()) cfg.set("stage", train_stage);
      return cmd_train(cfg, train_data, train_out, train_init, train_resume);
    }
    if (infer->parsed()) {
      if (!in_class.empty()) cfg.set("class_id", in_class);
      return cmd_infer(cfg, in_ckpt, in_input, in_mask, in_flow, in_anchor, in_out);
    }
    if (eval->parsed()) return cmd_eval(cfg, ev_pred, ev_gt, ev_out);
    if (bench->parsed()) {
      std::vector<std::string> variants;
      std::stringstream vs(b_variants);
      std::string tok;
      while (std::getline(vs, tok, ','))
        if (!tok.empty()) variants.push_back(tok);
      std::vector<int> sweep;
      std::stringstream ss(b_sweep);
      while (std::getline(ss, tok, ','))
        if (!tok.empty()) sweep.push_back(std::stoi(tok));
      return cmd_bench(cfg, b_ckpt, b_data, variants, sweep, b_out);
    }
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    if (msg.find("unknown config key") != std::string::npos) {
      std::cerr << "usage error: " << msg << "\n";
      return 1;
    }
    std::cerr << "error: " << msg << "\n";
    return 2;
  }
}

}  // namespace flowvid
