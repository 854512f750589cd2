// Command-line entry point: dataset generation, training, tracking, metric
// evaluation, and the oracle self-test.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ragtrack/checkpoint.hpp"
#include "ragtrack/config.hpp"
#include "ragtrack/crm.hpp"
#include "ragtrack/metrics.hpp"
#include "ragtrack/model.hpp"
#include "ragtrack/selftest.hpp"
#include "ragtrack/synth.hpp"
#include "ragtrack/tracker.hpp"
#include "ragtrack/train.hpp"

namespace fs = std::filesystem;
using namespace ragtrack;

namespace {

TrackerConfig load_config_file(const std::string& path, std::uint64_t seed_override,
                               bool has_seed) {
  TrackerConfig cfg;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    cfg = config_from_json(buf.str());
  }
  if (has_seed) cfg.seed = seed_override;
  return cfg;
}

int cmd_gen(const SequenceSpec& base, const std::string& out, int count) {
  fs::create_directories(out);
  for (int i = 0; i < count; ++i) {
    SequenceSpec spec = base;
    spec.seed = base.seed + static_cast<std::uint64_t>(i);
    SequenceRecord rec = gen_sequence(spec);
    std::string dir = out;
    if (count > 1) {
      char name[32];
      std::snprintf(name, sizeof(name), "seq%04d", i);
      dir = (fs::path(out) / name).string();
    }
    save_sequence(dir, rec);
    std::printf("wrote %s (%d frames, seed %llu)\n", dir.c_str(),
                static_cast<int>(rec.rgb.size()),
                static_cast<unsigned long long>(spec.seed));
  }
  return 0;
}

std::vector<SequenceRecord> load_dataset(const std::string& dir) {
  std::vector<SequenceRecord> out;
  for (const std::string& d : find_sequences(dir)) {
    out.push_back(load_sequence(d));
  }
  if (out.empty()) throw std::runtime_error("no sequences found under " + dir);
  return out;
}

int cmd_train(const std::string& data, const std::string& out, const std::string& config_path,
              const TrainOptions& opts_in, std::uint64_t seed, bool has_seed, double lr,
              bool has_lr, const std::string& loss_log) {
  TrackerConfig cfg = load_config_file(config_path, seed, has_seed);
  if (has_lr) cfg.learning_rate = lr;
  cfg.validate();

  std::vector<SequenceRecord> dataset = load_dataset(data);
  RagTrackModel model(cfg);
  TrainOptions opts = opts_in;
  opts.seed = cfg.seed;

  std::vector<StepRecord> steps = train_model(model, dataset, opts);
  if (auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_checkpoint(out, model);
  if (!loss_log.empty()) {
    std::ofstream os(loss_log, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write loss log: " + loss_log);
    os << steps_to_jsonl(steps);
  }
  std::printf("trained %d steps, first loss %.4f, last loss %.4f -> %s\n",
              static_cast<int>(steps.size()), steps.empty() ? 0.0 : steps.front().total,
              steps.empty() ? 0.0 : steps.back().total, out.c_str());
  return 0;
}

int cmd_track(const std::string& ckpt, const std::string& data, const std::string& out,
              int max_frames, const std::string& provider_host, int provider_port) {
  TrackerConfig cfg = checkpoint_config(ckpt);
  RagTrackModel model(cfg);
  load_checkpoint(ckpt, model);

  SequenceRecord seq = load_sequence(data);
  std::unique_ptr<DescriptionProvider> provider;
  if (!provider_host.empty()) {
    provider = std::make_unique<HttpProvider>(provider_host, provider_port);
  } else {
    provider = std::make_unique<ScriptedProvider>(seq.descriptions);
  }

  RunLog log = run_tracker(seq, model, *provider, max_frames);
  if (!out.empty()) {
    if (auto parent = fs::path(out).parent_path(); !parent.empty()) {
      fs::create_directories(parent);
    }
    save_runlog(out, log);
  }
  std::printf("frames %d  PR %.4f  SR %.4f  NPR %.4f  MPR %.4f  MSR %.4f\n",
              static_cast<int>(log.records.size()), log.summary.pr, log.summary.sr,
              log.summary.npr, log.summary.mpr, log.summary.msr);
  return 0;
}

int cmd_eval(const std::vector<std::string>& logs, const std::string& csv, double pr_threshold,
             double npr_threshold) {
  if (logs.empty()) throw std::runtime_error("no run logs given");
  double pr = 0, sr = 0, npr = 0, mpr = 0, msr = 0;
  for (const std::string& path : logs) {
    RunLog log = load_runlog(path);
    RunSummary s = summarize(log.records, pr_threshold, npr_threshold);
    pr += s.pr;
    sr += s.sr;
    npr += s.npr;
    mpr += s.mpr;
    msr += s.msr;
  }
  const double n = static_cast<double>(logs.size());
  pr /= n;
  sr /= n;
  npr /= n;
  mpr /= n;
  msr /= n;

  std::printf("%-8s %s\n", "metric", "value");
  std::printf("%-8s %.6f\n", "PR", pr);
  std::printf("%-8s %.6f\n", "SR", sr);
  std::printf("%-8s %.6f\n", "NPR", npr);
  std::printf("%-8s %.6f\n", "MPR", mpr);
  std::printf("%-8s %.6f\n", "MSR", msr);

  if (!csv.empty()) {
    std::ofstream os(csv, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write csv: " + csv);
    os << "metric,value\n";
    char line[64];
    std::snprintf(line, sizeof(line), "PR,%.6f\n", pr);
    os << line;
    std::snprintf(line, sizeof(line), "SR,%.6f\n", sr);
    os << line;
    std::snprintf(line, sizeof(line), "NPR,%.6f\n", npr);
    os << line;
    std::snprintf(line, sizeof(line), "MPR,%.6f\n", mpr);
    os << line;
    std::snprintf(line, sizeof(line), "MSR,%.6f\n", msr);
    os << line;
  }
  return 0;
}

int cmd_selftest(bool thorough) {
  int failures = 0;
  for (const CheckResult& r : run_selftest(thorough)) {
    std::printf("[%s] %s%s%s\n", r.pass ? "ok" : "FAIL", r.name.c_str(),
                r.detail.empty() ? "" : " - ", r.detail.c_str());
    if (!r.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  ragtrack::flush_denormals();
  CLI::App app{"RGB/heat two-stream tracker with language-guided memory"};
  app.require_subcommand(1);

  // ---- gen ----
  SequenceSpec gspec;
  std::string gen_out;
  int gen_count = 1;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic paired-stream dataset");
  gen->add_option("--out", gen_out, "output directory")
      ->required()
      ->envname("RAGTRACK_OUT");
  gen->add_option("--seed", gspec.seed, "generator seed")->envname("RAGTRACK_SEED");
  gen->add_option("--len", gspec.length, "frames per sequence");
  gen->add_option("--edge", gspec.frame_edge, "frame edge in pixels");
  gen->add_option("--size", gspec.target_size, "target edge in pixels");
  gen->add_option("--color", gspec.color_name, "target color name");
  gen->add_option("--speed", gspec.speed, "target speed, px/frame");
  gen->add_option("--dir-x", gspec.dir_x, "initial motion x component");
  gen->add_option("--dir-y", gspec.dir_y, "initial motion y component");
  gen->add_option("--distractors", gspec.num_distractors, "distractor count");
  gen->add_flag("--occluder", gspec.occluder, "add a static occluder bar");
  gen->add_option("--night-start", gspec.night_start, "first low-light RGB frame (-1 off)");
  gen->add_option("--night-len", gspec.night_len, "low-light frame count");
  gen->add_flag("--alt", gspec.misaligned_alt, "emit a misaligned second annotation stream");
  gen->add_option("--alt-offset", gspec.alt_offset, "misalignment offset, px");
  gen->add_option("--count", gen_count, "number of sequences (consecutive seeds)");

  // ---- train ----
  std::string train_data, train_out, train_config, train_losslog;
  TrainOptions topts;
  std::uint64_t train_seed = 0;
  double train_lr = 0.0;
  CLI::App* train = app.add_subcommand("train", "train a model on a generated dataset");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint output path")
      ->required()
      ->envname("RAGTRACK_OUT");
  train->add_option("--config", train_config, "tracker config JSON file");
  train->add_option("--steps", topts.steps, "training steps");
  CLI::Option* seed_opt =
      train->add_option("--seed", train_seed, "seed override")->envname("RAGTRACK_SEED");
  CLI::Option* lr_opt = train->add_option("--lr", train_lr, "learning-rate override");
  bool no_augment = false;
  train->add_flag("--no-augment", no_augment, "disable augmentations");
  train->add_option("--loss-log", train_losslog, "per-step loss JSONL path");
  train->add_option("--log-every", topts.log_every, "progress print period (0 silent)");

  // ---- track ----
  std::string track_ckpt, track_data, track_out, track_host;
  int track_max = -1, track_port = 8964;
  CLI::App* track = app.add_subcommand("track", "run the tracker over one sequence");
  track->add_option("--ckpt", track_ckpt, "checkpoint path")->required();
  track->add_option("--data", track_data, "sequence directory")->required();
  track->add_option("--out", track_out, "run-log JSONL output path")->envname("RAGTRACK_OUT");
  track->add_option("--max-frames", track_max, "truncate after this many frames");
  track->add_option("--provider-host", track_host, "HTTP caption endpoint host");
  track->add_option("--provider-port", track_port, "HTTP caption endpoint port");

  // ---- eval ----
  std::vector<std::string> eval_logs;
  std::string eval_csv;
  double eval_pr = 20.0, eval_npr = 0.2;
  CLI::App* eval = app.add_subcommand("eval", "summarize run logs into the metric table");
  eval->add_option("--log", eval_logs, "run-log JSONL path (repeatable)")->required();
  eval->add_option("--csv", eval_csv, "write metric,value rows here");
  eval->add_option("--pr-threshold", eval_pr, "precision threshold, px");
  eval->add_option("--npr-threshold", eval_npr, "normalized precision threshold");

  // ---- selftest ----
  bool thorough = false;
  CLI::App* selftest = app.add_subcommand("selftest", "run the oracle suites");
  selftest->add_flag("--thorough", thorough, "full random-case budgets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(gspec, gen_out, gen_count);
    if (train->parsed()) {
      topts.augment = !no_augment;
      return cmd_train(train_data, train_out, train_config, topts, train_seed,
                       seed_opt->count() > 0, train_lr, lr_opt->count() > 0, train_losslog);
    }
    if (track->parsed()) {
      return cmd_track(track_ckpt, track_data, track_out, track_max, track_host, track_port);
    }
    if (eval->parsed()) return cmd_eval(eval_logs, eval_csv, eval_pr, eval_npr);
    if (selftest->parsed()) return cmd_selftest(thorough);
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
