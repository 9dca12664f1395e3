// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. run_cli() is separate from main() so the tests can
// drive every subcommand in-process.
#pragma once

#include <swishnet/audio.hpp>
#include <swishnet/baselines.hpp>
#include <swishnet/bench.hpp>
#include <swishnet/classifier.hpp>
#include <swishnet/dsp.hpp>
#include <swishnet/model.hpp>
#include <swishnet/segmenter.hpp>
#include <swishnet/toy_corpus.hpp>
#include <swishnet/trainer.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace swishnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

namespace fs = std::filesystem;

namespace detail {

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void print_score(std::ostream& os, const SegmentScore& s, const std::string& title,
                        const char* unit = "frames") {
  os << title << '\n';
  std::string label = std::string(unit) + " scored";
  label.resize(18, ' ');
  os << "  " << label << s.frames << '\n';
  os << "  accuracy          " << fixed(s.accuracy) << '\n';
  os << "  speech/non-speech " << fixed(s.sns_accuracy) << '\n';
  os << "  confusion (rows: truth, normalized)\n";
  os << "              noise   music  speech\n";
  for (std::size_t r = 0; r < 3; ++r) {
    os << "    " << std::left << std::setw(8) << class_name(static_cast<int>(r)) << std::right;
    for (std::size_t c = 0; c < 3; ++c) os << std::setw(8) << fixed(s.confusion[r][c], 3);
    os << '\n';
  }
  os << "  F1      noise " << fixed(s.f1[0], 3) << "  music " << fixed(s.f1[1], 3) << "  speech " << fixed(s.f1[2], 3)
     << "  mean " << fixed(s.mean_f1, 3) << '\n';
}

inline std::string probs_text(const std::vector<double>& p) {
  std::string out = "p=[";
  for (std::size_t i = 0; i < p.size(); ++i) out += (i ? ", " : "") + fixed(p[i]);
  return out + "]";
}

inline Model model_for(const std::string& arch_or_cfg, std::uint64_t seed) {
  if (arch_or_cfg == "slim") return build(presets::swishnet_slim(), seed);
  if (arch_or_cfg == "wide") return build(presets::swishnet_wide(), seed);
  if (arch_or_cfg == "snn") return build(presets::snn(), seed);
  return build(load_config(arch_or_cfg), seed);
}

inline FeatureKind kind_for(const Model& m) {
  return m.plan.arch == Arch::Snn ? FeatureKind::MfccDeltas : FeatureKind::Mfcc;
}

/// Lists <dir>/<class>/*.wav per class, sorted, relative to dir.
inline std::vector<std::vector<std::string>> scan_corpus(const fs::path& dir) {
  std::vector<std::vector<std::string>> files(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    const fs::path sub = dir / class_name(c);
    if (!fs::is_directory(sub)) throw DataError("missing class directory " + sub.string());
    for (const auto& e : fs::directory_iterator(sub)) {
      if (e.path().extension() == ".wav") files[static_cast<std::size_t>(c)].push_back(fs::relative(e.path(), dir).generic_string());
    }
    std::sort(files[static_cast<std::size_t>(c)].begin(), files[static_cast<std::size_t>(c)].end());
  }
  return files;
}

inline AudioClip load_for_classify(const fs::path& p) { return dsp::preprocess(load_wav(p)); }

}  // namespace detail

/// args excludes the program name. Returns the process exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speech / music / noise classification and segmentation", "swishnet"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "random seed")->capture_default_str(); };
  std::function<int()> action;

  // toy-corpus ---------------------------------------------------------------
  auto* toy_cmd = app.add_subcommand("toy-corpus", "write a synthetic noise/music/speech corpus");
  std::string toy_out;
  toy::CorpusOptions toy_opt;
  toy_cmd->add_option("--out", toy_out, "output directory")->required();
  toy_cmd->add_option("--files-per-class", toy_opt.files_per_class)->capture_default_str();
  toy_cmd->add_option("--min-len", toy_opt.min_seconds)->capture_default_str();
  toy_cmd->add_option("--max-len", toy_opt.max_seconds)->capture_default_str();
  add_seed(toy_cmd);
  toy_cmd->callback([&] {
    action = [&] {
      toy_opt.seed = seed;
      const auto files = toy::write_corpus(toy_out, toy_opt);
      std::size_t n = 0;
      for (const auto& f : files) n += f.size();
      out << "wrote " << n << " files to " << toy_out << '\n';
      return kExitOk;
    };
  });

  // features -----------------------------------------------------------------
  auto* feat_cmd = app.add_subcommand("features", "WAV -> feature cache");
  std::string feat_in, feat_out, feat_kind = "mfcc";
  bool feat_raw = false;
  feat_cmd->add_option("input", feat_in, "WAV file")->required();
  feat_cmd->add_option("--out", feat_out, "feature cache path")->required();
  feat_cmd->add_option("--kind", feat_kind, "mfcc | logmfb | mfcc-deltas")->capture_default_str();
  feat_cmd->add_flag("--no-preprocess", feat_raw, "skip silence trimming and loudness equalization");
  add_seed(feat_cmd);
  feat_cmd->callback([&] {
    action = [&] {
      AudioClip a = load_wav(feat_in);
      a = feat_raw ? (a.sample_rate == kWorkingRate ? a : resample(a, kWorkingRate)) : dsp::preprocess(a);
      const FeatureMatrix f = dsp::FeatureExtractor(parse_feature_kind(feat_kind))(a);
      dsp::save_feature_cache(feat_out, f);
      out << f.frames() << " frames x " << f.coeffs() << " coefficients -> " << feat_out << '\n';
      return kExitOk;
    };
  });

  // split --------------------------------------------------------------------
  auto* split_cmd = app.add_subcommand("split", "build a 65/10/25 train/val/test manifest");
  std::string split_corpus, split_out;
  split_cmd->add_option("--corpus", split_corpus, "directory with noise/ music/ speech/ subdirectories")->required();
  split_cmd->add_option("--out", split_out, "manifest path")->required();
  add_seed(split_cmd);
  split_cmd->callback([&] {
    action = [&] {
      const DatasetManifest m = split_dataset(detail::scan_corpus(split_corpus), seed);
      save_manifest(split_out, m);
      out << "train " << m.select(Split::Train).size() << "  val " << m.select(Split::Val).size() << "  test "
          << m.select(Split::Test).size() << '\n';
      return kExitOk;
    };
  });

  // train / distill ----------------------------------------------------------
  struct TrainArgs {
    std::string arch = "slim", manifest, root, out, log, init, teacher;
    double clip_len = 1.0, lr = 1e-3, min_lr = 1e-5, t0 = 10.0, t_mult = 2.0, temperature = 2.0, soft_weight = 0.9;
    std::size_t epochs = 120, batch = 32, components = 8;
  };
  TrainArgs ta;
  auto add_train_opts = [&](CLI::App* sub) {
    sub->add_option("--arch", ta.arch, "slim | wide | snn | gmm | <config file>")->capture_default_str();
    sub->add_option("--manifest", ta.manifest, "manifest path")->required();
    sub->add_option("--root", ta.root, "directory relative manifest paths resolve against");
    sub->add_option("--out", ta.out, "output weight file")->required();
    sub->add_option("--log", ta.log, "per-epoch metric log");
    sub->add_option("--init", ta.init, "warm-start weight file");
    sub->add_option("--clip-len", ta.clip_len, "clip length, seconds")->capture_default_str();
    sub->add_option("--epochs", ta.epochs)->capture_default_str();
    sub->add_option("--batch", ta.batch, "batch size at 1 s clips (frames for the SNN)")->capture_default_str();
    sub->add_option("--lr", ta.lr)->capture_default_str();
    sub->add_option("--min-lr", ta.min_lr)->capture_default_str();
    sub->add_option("--restart-period", ta.t0, "first SGDR period, epochs")->capture_default_str();
    sub->add_option("--restart-mult", ta.t_mult)->capture_default_str();
    sub->add_option("--components", ta.components, "GMM components per class")->capture_default_str();
    add_seed(sub);
  };
  auto* train_cmd = app.add_subcommand("train", "train a classifier");
  add_train_opts(train_cmd);
  auto* distill_cmd = app.add_subcommand("distill", "train a student on teacher logits");
  add_train_opts(distill_cmd);
  distill_cmd->add_option("--teacher", ta.teacher, "teacher logits file")->required();
  distill_cmd->add_option("--temperature", ta.temperature)->capture_default_str();
  distill_cmd->add_option("--soft-weight", ta.soft_weight)->capture_default_str();

  auto do_train = [&](bool distill) {
    const DatasetManifest man = load_manifest(ta.manifest);
    const fs::path root = ta.root;
    if (ta.arch == "gmm") {
      if (distill) throw ConfigError("GMMs cannot be distilled");
      const auto clips = build_clip_set(man, Split::Train, ta.clip_len, FeatureKind::MfccDeltas, root);
      GmmFitOptions g;
      g.components = ta.components;
      g.seed = seed;
      const auto models = fit_class_gmms(clips, g);
      save_gmms(models, ta.out);
      const auto test = build_clip_set(man, Split::Val, ta.clip_len, FeatureKind::MfccDeltas, root);
      if (!test.empty()) {
        const GmmClassifier clf(models);
        std::size_t ok = 0;
        for (const auto& c : test) ok += clf.predict(c.features) == c.label;
        out << "val accuracy " << detail::fixed(static_cast<double>(ok) / static_cast<double>(test.size())) << '\n';
      }
      out << "saved " << ta.out << '\n';
      return kExitOk;
    }
    Model init = ta.init.empty() ? detail::model_for(ta.arch, seed) : load(ta.init);
    const FeatureKind kind = detail::kind_for(init);
    const auto train_set = build_clip_set(man, Split::Train, ta.clip_len, kind, root);
    const auto val_set = build_clip_set(man, Split::Val, ta.clip_len, kind, root);
    TrainConfig cfg;
    cfg.clip_len_s = ta.clip_len;
    cfg.epochs = ta.epochs;
    cfg.base_batch = ta.batch;
    cfg.schedule = {ta.lr, ta.min_lr, ta.t0, ta.t_mult};
    cfg.seed = seed;
    cfg.fit_norm = ta.init.empty();
    std::optional<TeacherLogits> teacher;
    if (distill) {
      teacher = load_teacher_logits(ta.teacher);
      cfg.distill = DistillConfig{ta.temperature, ta.soft_weight};
    }
    std::ofstream log;
    if (!ta.log.empty()) {
      log.open(ta.log);
      if (!log) throw DataError("cannot write " + ta.log);
      write_metric_header(log);
    }
    cfg.on_epoch = [&](const EpochMetrics& e) {
      if (log.is_open()) write_metric_row(log, e), log.flush();
    };
    const TrainResult r = train(std::move(init), train_set, val_set, cfg, teacher ? &*teacher : nullptr);
    save(r.model, ta.out);
    const auto& last = r.log.back();
    out << "epochs " << r.log.size() << "  best " << r.best_epoch << "  batch " << r.batch_size << "  train acc "
        << detail::fixed(last.train_acc) << "  val acc " << detail::fixed(r.log[r.best_epoch - 1].val_acc) << '\n';
    out << "saved " << ta.out << " (" << r.model.n_params() << " parameters)\n";
    return kExitOk;
  };
  train_cmd->callback([&] { action = [&] { return do_train(false); }; });
  distill_cmd->callback([&] { action = [&] { return do_train(true); }; });

  // classify -----------------------------------------------------------------
  auto* cls_cmd = app.add_subcommand("classify", "classify clips, or every clip of a manifest split");
  std::string cls_model, cls_manifest, cls_root, cls_split = "test", cls_logits;
  std::vector<std::string> cls_inputs;
  double cls_clip_len = 1.0;
  cls_cmd->add_option("--model", cls_model, "weight or GMM file")->required();
  cls_cmd->add_option("inputs", cls_inputs, "WAV files");
  cls_cmd->add_option("--manifest", cls_manifest, "classify clips of a manifest split instead");
  cls_cmd->add_option("--root", cls_root);
  cls_cmd->add_option("--split", cls_split)->capture_default_str();
  cls_cmd->add_option("--clip-len", cls_clip_len)->capture_default_str();
  cls_cmd->add_option("--logits-out", cls_logits, "write clip logits (teacher file format)");
  add_seed(cls_cmd);
  cls_cmd->callback([&] {
    action = [&] {
      const auto clf = load_classifier(cls_model);
      const dsp::FeatureExtractor fx(clf->feature_kind());
      if (cls_manifest.empty()) {
        if (cls_inputs.empty()) throw CLI::ValidationError("classify", "give WAV files or --manifest");
        for (const auto& p : cls_inputs) {
          const auto probs = clf->probs(fx(detail::load_for_classify(p)));
          const int label = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
          out << (cls_inputs.size() > 1 ? p + "\t" : "") << class_name(label) << ' ' << detail::probs_text(probs) << '\n';
        }
        return kExitOk;
      }
      const auto clips = build_clip_set(load_manifest(cls_manifest), parse_split(cls_split), cls_clip_len,
                                        clf->feature_kind(), cls_root);
      if (clips.empty()) throw DataError("no clips in split " + cls_split);
      std::vector<int> pred, truth;
      TeacherLogits logits;
      const auto* net = dynamic_cast<const NetClassifier*>(clf.get());
      if (!cls_logits.empty() && !net) throw ConfigError("--logits-out needs a network model");
      for (const auto& c : clips) {
        pred.push_back(clf->predict(c.features));
        truth.push_back(c.label);
        if (!cls_logits.empty()) logits[c.id] = net->clip_logits(c.features);
      }
      if (!cls_logits.empty()) {
        std::ofstream os(cls_logits);
        if (!os) throw DataError("cannot write " + cls_logits);
        write_teacher_logits(os, logits);
      }
      detail::print_score(out, score_labels(pred, truth), cls_split + " clips (" + std::to_string(clips.size()) + ")",
                          "clips");
      return kExitOk;
    };
  });

  // synth --------------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "build artificial segmentation files from a manifest split");
  std::string synth_manifest, synth_root, synth_out, synth_split = "test";
  std::size_t synth_count = 500;
  SynthOptions synth_opt;
  synth_cmd->add_option("--manifest", synth_manifest)->required();
  synth_cmd->add_option("--root", synth_root);
  synth_cmd->add_option("--split", synth_split)->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--count", synth_count)->capture_default_str();
  synth_cmd->add_option("--min-len", synth_opt.min_total_s)->capture_default_str();
  synth_cmd->add_option("--max-len", synth_opt.max_total_s)->capture_default_str();
  synth_cmd->add_option("--silence-ratio", synth_opt.silence_ratio)->capture_default_str();
  add_seed(synth_cmd);
  synth_cmd->callback([&] {
    action = [&] {
      const SegmentPools pools = build_pools(load_manifest(synth_manifest), parse_split(synth_split), synth_root);
      fs::create_directories(synth_out);
      for (std::size_t i = 0; i < synth_count; ++i) {
        const auto r = synth_timeline(pools, seed + i, synth_opt);
        char stem[32];
        std::snprintf(stem, sizeof stem, "seg_%04zu", i);
        save_wav(fs::path(synth_out) / (std::string(stem) + ".wav"), r.audio, WavEncoding::Float32);
        save_timeline(fs::path(synth_out) / (std::string(stem) + ".tsv"), r.truth);
      }
      out << "wrote " << synth_count << " timelines to " << synth_out << '\n';
      return kExitOk;
    };
  });

  // segment ------------------------------------------------------------------
  auto* seg_cmd = app.add_subcommand("segment", "frame-wise segmentation of a recording");
  std::string seg_model, seg_in, seg_out, seg_probs;
  SegmentOptions seg_opt;
  seg_cmd->add_option("--model", seg_model)->required();
  seg_cmd->add_option("input", seg_in, "WAV file")->required();
  seg_cmd->add_option("--out", seg_out, "timeline output (stdout when omitted)");
  seg_cmd->add_option("--probs", seg_probs, "per-frame probability dump");
  seg_cmd->add_option("--window", seg_opt.window_s, "window length, seconds")->capture_default_str();
  seg_cmd->add_option("--median", seg_opt.median_len, "median filter length in frames (1 = off)")->capture_default_str();
  seg_cmd->add_option("--stride", seg_opt.stride, "classify every k-th frame")->capture_default_str();
  seg_cmd->add_option("--threads", seg_opt.threads)->capture_default_str();
  add_seed(seg_cmd);
  seg_cmd->callback([&] {
    action = [&] {
      const auto clf = load_classifier(seg_model);
      AudioClip a = load_wav(seg_in);
      if (a.sample_rate != kWorkingRate) a = resample(a, kWorkingRate);
      const SegmentRun r = segment_audio(*clf, a, seg_opt);
      const Timeline t = labels_to_timeline(r.smoothed.labels, a.size());
      if (seg_out.empty()) {
        write_timeline(out, t);
      } else {
        save_timeline(seg_out, t);
      }
      if (!seg_probs.empty()) {
        std::ofstream os(seg_probs);
        if (!os) throw DataError("cannot write " + seg_probs);
        write_prediction(os, r.smoothed);
      }
      return kExitOk;
    };
  });

  // eval ---------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "metric tables: prediction vs truth, or a model over synthetic timelines");
  std::string ev_truth, ev_pred, ev_model, ev_dir;
  SegmentOptions ev_opt;
  eval_cmd->add_option("--truth", ev_truth, "truth timeline");
  eval_cmd->add_option("--pred", ev_pred, "per-frame probability dump");
  eval_cmd->add_option("--model", ev_model, "model to run over --timelines");
  eval_cmd->add_option("--timelines", ev_dir, "directory of synth output (WAV + TSV pairs)");
  eval_cmd->add_option("--window", ev_opt.window_s)->capture_default_str();
  eval_cmd->add_option("--median", ev_opt.median_len)->capture_default_str();
  eval_cmd->add_option("--stride", ev_opt.stride)->capture_default_str();
  eval_cmd->add_option("--threads", ev_opt.threads)->capture_default_str();
  add_seed(eval_cmd);
  eval_cmd->callback([&] {
    action = [&] {
      if (!ev_truth.empty() && !ev_pred.empty()) {
        std::ifstream is(ev_pred);
        if (!is) throw DataError("cannot open " + ev_pred);
        detail::print_score(out, score(read_prediction(is), load_timeline(ev_truth)), "frame-level evaluation");
        return kExitOk;
      }
      if (ev_model.empty() || ev_dir.empty()) {
        throw CLI::ValidationError("eval", "give --truth and --pred, or --model and --timelines");
      }
      const auto clf = load_classifier(ev_model);
      std::vector<fs::path> wavs;
      for (const auto& e : fs::directory_iterator(ev_dir)) {
        if (e.path().extension() == ".wav") wavs.push_back(e.path());
      }
      std::sort(wavs.begin(), wavs.end());
      if (wavs.empty()) throw DataError("no WAV files in " + ev_dir);
      std::vector<int> raw, smooth, truth;
      for (const auto& w : wavs) {
        const Timeline t = load_timeline(fs::path(w).replace_extension(".tsv"));
        const SegmentRun r = segment_audio(*clf, load_wav(w), ev_opt);
        const auto labels = t.frame_labels();
        if (labels.size() != r.raw.size()) throw EvaluationError("frame count mismatch for " + w.string());
        raw.insert(raw.end(), r.raw.labels.begin(), r.raw.labels.end());
        smooth.insert(smooth.end(), r.smoothed.labels.begin(), r.smoothed.labels.end());
        truth.insert(truth.end(), labels.begin(), labels.end());
      }
      out << wavs.size() << " files, window " << ev_opt.window_s << " s\n";
      detail::print_score(out, score_labels(raw, truth), "unfiltered");
      detail::print_score(out, score_labels(smooth, truth), "median " + std::to_string(ev_opt.median_len));
      return kExitOk;
    };
  });

  // bench --------------------------------------------------------------------
  auto* bench_cmd = app.add_subcommand("bench", "batch-1 latency");
  std::string bench_model, bench_arch;
  BenchOptions bench_opt;
  bench_cmd->add_option("--model", bench_model, "weight or GMM file");
  bench_cmd->add_option("--arch", bench_arch, "benchmark a freshly initialized slim | wide | snn");
  bench_cmd->add_option("--clip-len", bench_opt.clip_len_s)->capture_default_str();
  bench_cmd->add_option("--iters", bench_opt.iters)->capture_default_str();
  bench_cmd->add_option("--warmup", bench_opt.warmup)->capture_default_str();
  bench_cmd->add_option("--threads", bench_opt.threads)->capture_default_str();
  add_seed(bench_cmd);
  bench_cmd->callback([&] {
    action = [&] {
      if (bench_model.empty() == bench_arch.empty()) throw CLI::ValidationError("bench", "give exactly one of --model, --arch");
      bench_opt.seed = seed;
      const std::unique_ptr<Classifier> clf =
          bench_model.empty() ? std::make_unique<NetClassifier>(detail::model_for(bench_arch, seed)) : load_classifier(bench_model);
      BenchReport r = bench_latency(*clf, bench_opt);
      if (!bench_model.empty()) r.weight_bytes = static_cast<std::size_t>(fs::file_size(bench_model));
      write_bench_report(out, r);
      return kExitOk;
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;  // --help exits 0
  }
  try {
    return action ? action() : kExitUsage;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace swishnet::cli
