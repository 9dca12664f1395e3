// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

using namespace swishnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int code = cli::run_cli(args, o, e);
  return {code, o.str(), e.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("swishnet_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0", "[cli]") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"bench", "--arch", "slim", "--bogus"}).code == 1);
  CHECK(run({"classify"}).code == 1);  // --model is required
  CHECK(run({"bench"}).code == 1);     // neither --model nor --arch
  CHECK(run({"--help"}).code == 0);
  for (const char* sub : {"toy-corpus", "features", "split", "train", "distill", "classify", "synth", "segment", "eval", "bench"}) {
    const Run r = run({sub, "--help"});
    INFO(sub);
    CHECK(r.code == 0);
    CHECK(r.out.find("--seed") != std::string::npos);
  }
}

TEST_CASE("data errors exit 2", "[cli]") {
  const fs::path dir = scratch("data_errors");
  CHECK(run({"classify", "--model", (dir / "missing.swsh").string(), "x.wav"}).code == 2);
  std::ofstream(dir / "bad.tsv") << "a.wav\tnoise\n";
  CHECK(run({"train", "--manifest", (dir / "bad.tsv").string(), "--out", (dir / "m.swsh").string()}).code == 2);
  std::ofstream(dir / "garbage.swsh") << "not a model";
  CHECK(run({"bench", "--model", (dir / "garbage.swsh").string()}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("eval reproduces the 10-frame fixture", "[cli]") {
  const fs::path dir = scratch("eval_fixture");
  const std::vector<int> truth = {kNoise, kNoise, kNoise, kMusic, kMusic, kSpeech, kSpeech, kSpeech, kSilence, kSilence};
  const std::vector<int> pred = {kNoise, kMusic, kNoise, kMusic, kSpeech, kSpeech, kSpeech, kNoise, kNoise, kMusic};
  const std::size_t n_samples = 400 + 9 * 160;  // exactly 10 frames
  save_timeline(dir / "truth.tsv", labels_to_timeline(truth, n_samples));
  REQUIRE(load_timeline(dir / "truth.tsv").frame_labels() == truth);
  SegmentPrediction p;
  for (int l : pred) {
    std::array<double, 3> row{0.1, 0.1, 0.1};
    row[static_cast<std::size_t>(l)] = 0.8;
    p.probs.push_back(row);
    p.labels.push_back(l);
  }
  std::ofstream(dir / "pred.tsv") << [&] {
    std::ostringstream s;
    write_prediction(s, p);
    return s.str();
  }();

  const Run r = run({"eval", "--truth", (dir / "truth.tsv").string(), "--pred", (dir / "pred.tsv").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("frames scored     8") != std::string::npos);
  CHECK(r.out.find("accuracy          0.6250") != std::string::npos);
  CHECK(r.out.find("speech/non-speech 0.7500") != std::string::npos);
  CHECK(r.out.find("noise      0.667   0.333   0.000") != std::string::npos);
  CHECK(r.out.find("music      0.000   0.500   0.500") != std::string::npos);
  CHECK(r.out.find("speech     0.333   0.000   0.667") != std::string::npos);
  CHECK(r.out.find("noise 0.667  music 0.500  speech 0.667  mean 0.611") != std::string::npos);

  std::ofstream(dir / "short.tsv") << "0\t0.8\t0.1\t0.1\n";
  CHECK(run({"eval", "--truth", (dir / "truth.tsv").string(), "--pred", (dir / "short.tsv").string()}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("pipeline: corpus, split, train, classify, synth, segment, bench", "[cli]") {
  const fs::path dir = scratch("pipeline");
  const std::string corpus = (dir / "corpus").string(), man = (dir / "man.tsv").string();
  const std::string model = (dir / "slim.swsh").string(), gmm = (dir / "g.swgm").string();
  REQUIRE(run({"toy-corpus", "--out", corpus, "--files-per-class", "4", "--min-len", "1.5", "--max-len", "2", "--seed", "3"}).code == 0);
  REQUIRE(run({"split", "--corpus", corpus, "--out", man, "--seed", "1"}).code == 0);
  CHECK(load_manifest(man).records.size() == 12);

  const Run tr = run({"train", "--arch", "slim", "--manifest", man, "--root", corpus, "--clip-len", "0.5", "--epochs", "2",
                      "--out", model, "--log", (dir / "log.tsv").string(), "--seed", "1"});
  REQUIRE(tr.code == 0);
  CHECK(load(model).n_params() == 5611);
  {
    std::ifstream log(dir / "log.tsv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(log, line)) rows += !line.empty() && line[0] != '#';
    CHECK(rows == 2);
  }
  REQUIRE(run({"train", "--arch", "gmm", "--components", "2", "--manifest", man, "--root", corpus, "--clip-len", "0.5",
               "--out", gmm}).code == 0);

  const Run c = run({"classify", "--model", model, corpus + "/speech/speech_000.wav"});
  REQUIRE(c.code == 0);
  CHECK(std::regex_match(c.out, std::regex(R"((noise|music|speech) p=\[\d\.\d{4}, \d\.\d{4}, \d\.\d{4}\]\n)")));
  CHECK(run({"classify", "--model", gmm, corpus + "/music/music_000.wav"}).code == 0);

  const std::string teacher = (dir / "teacher.tsv").string();
  REQUIRE(run({"classify", "--model", model, "--manifest", man, "--root", corpus, "--split", "train", "--clip-len", "0.5",
               "--logits-out", teacher}).code == 0);
  CHECK(run({"distill", "--manifest", man, "--root", corpus, "--clip-len", "0.5", "--epochs", "1", "--teacher", teacher,
             "--temperature", "4", "--out", (dir / "student.swsh").string()}).code == 0);
  std::ofstream(dir / "empty_teacher.tsv") << "";
  CHECK(run({"distill", "--manifest", man, "--root", corpus, "--clip-len", "0.5", "--epochs", "1", "--teacher",
             (dir / "empty_teacher.tsv").string(), "--out", (dir / "student2.swsh").string()}).code == 2);

  const std::string tl = (dir / "timelines").string();
  REQUIRE(run({"synth", "--manifest", man, "--root", corpus, "--count", "2", "--min-len", "20", "--max-len", "21", "--out", tl,
               "--seed", "5"}).code == 0);
  const Run s = run({"segment", "--model", model, tl + "/seg_0000.wav", "--stride", "10", "--probs", (dir / "p.tsv").string()});
  REQUIRE(s.code == 0);
  std::istringstream seg_text(s.out);
  const Timeline predicted = read_timeline(seg_text);
  CHECK(predicted.n_samples == load_wav(tl + "/seg_0000.wav").size());
  CHECK(run({"eval", "--truth", tl + "/seg_0000.tsv", "--pred", (dir / "p.tsv").string()}).code == 0);
  const Run e = run({"eval", "--model", gmm, "--timelines", tl, "--stride", "20"});
  CHECK(e.code == 0);
  CHECK(e.out.find("2 files") != std::string::npos);
  CHECK(run({"segment", "--model", model, tl + "/seg_0000.wav", "--window", "0.1"}).code == 1);

  const Run b = run({"bench", "--model", model, "--clip-len", "1.0", "--iters", "100", "--warmup", "5"});
  REQUIRE(b.code == 0);
  CHECK(b.out.find("measurements     100\n") != std::string::npos);
  CHECK(b.out.find("weight file      " + std::to_string(fs::file_size(model)) + " bytes") != std::string::npos);

  const std::string feats = (dir / "f.swft").string();
  REQUIRE(run({"features", corpus + "/noise/noise_000.wav", "--kind", "mfcc-deltas", "--out", feats}).code == 0);
  CHECK(dsp::load_feature_cache(feats).coeffs() == 60);
  fs::remove_all(dir);
}
