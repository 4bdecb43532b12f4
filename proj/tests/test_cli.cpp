#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aoes/checkpoint.hpp"
#include "aoes/io.hpp"
#include "aoes/oodstats.hpp"

using namespace aoes;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::path(AOES_TEST_TMP) / "cli";

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(const std::string& args) {
  fs::create_directories(kRoot);
  const auto out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string("\"") + AOES_CLI_PATH + "\" " + args + " >\"" + out.string() +
                          "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(out);
  r.err = read_text_file(err);
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::size_t count_lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

const std::string kModelFlags = " --dim 8 --layers 4 --max-len 48 --epochs 1 --warmup 5";

// Corpus, model, stats and threshold shared by the pipeline cases.
struct Fixture {
  fs::path corpus = kRoot / "corpus";
  fs::path model = kRoot / "model";
  fs::path stats = kRoot / "stats";
  fs::path cal = kRoot / "cal";

  Fixture() {
    if (fs::exists(cal / "threshold.json")) return;
    REQUIRE(run("--out " + q(corpus) + " synth --seed 7 --prompts 3 --essays-per-prompt 40").code == 0);
    REQUIRE(run("--out " + q(model) + " train --corpus " + q(corpus) + " --prompt-id p1" + kModelFlags)
                .code == 0);
    REQUIRE(run("--out " + q(stats) + " fit-stats --corpus " + q(corpus) + " --checkpoint " +
                q(model / "checkpoint.bin"))
                .code == 0);
    REQUIRE(run("--out " + q(cal) + " calibrate --corpus " + q(corpus) + " --checkpoint " +
                q(model / "checkpoint.bin") + " --stats " + q(stats / "stats.bin"))
                .code == 0);
  }

  std::string artifacts() const {
    return " --checkpoint " + q(model / "checkpoint.bin") + " --stats " + q(stats / "stats.bin") +
           " --threshold " + q(cal / "threshold.json");
  }
};

}  // namespace

TEST_CASE("synth twice gives identical files") {
  REQUIRE(run("--out " + q(kRoot / "s1") + " synth --seed 7 --prompts 3 --essays-per-prompt 20").code == 0);
  REQUIRE(run("--out " + q(kRoot / "s2") + " synth --seed 7 --prompts 3 --essays-per-prompt 20").code == 0);
  CHECK(read_text_file(kRoot / "s1" / "essays.jsonl") == read_text_file(kRoot / "s2" / "essays.jsonl"));
  CHECK(read_text_file(kRoot / "s1" / "prompts.json") == read_text_file(kRoot / "s2" / "prompts.json"));
  CHECK(count_lines(read_text_file(kRoot / "s1" / "essays.jsonl")) == 60);
}

TEST_CASE("usage and data errors map to exit codes") {
  auto r = run("--out " + q(kRoot / "x") + " ingest --format tsv --input " + q(kRoot / "does-not-exist.tsv"));
  CHECK(r.code == 3);
  CHECK(!r.err.empty());
  r = run("--out " + q(kRoot / "x") + " train --corpus " + q(kRoot / "s1") + " --prompt-id p1 --model bert");
  CHECK(r.code == 2);
  CHECK(!r.err.empty());
  CHECK(run("frobnicate").code == 2);
  CHECK(run("train").code == 2);
}

TEST_CASE("ingest tsv uses ASAP ranges") {
  const auto tsv = kRoot / "asap.tsv";
  write_text_file(tsv,
                  "essay_id\tessay_set\tessay\tdomain1_score\n"
                  "1\t1\tDear editor, computers help.\t8\n"
                  "2\t2\tCensorship in libraries is wrong.\t4\n"
                  "3\t1\tI think computers are bad.\t11\n");
  REQUIRE(run("--out " + q(kRoot / "asap") + " ingest --format tsv --input " + q(tsv)).code == 0);
  const auto jsonl = read_text_file(kRoot / "asap" / "essays.jsonl");
  CHECK(count_lines(jsonl) == 3);
  const auto prompts = read_text_file(kRoot / "asap" / "prompts.json");
  CHECK(prompts.find("\"score_max\": 13") != std::string::npos);
  CHECK(prompts.find("\"score_max\": 6") != std::string::npos);
}

TEST_CASE("train rerun reproduces the checkpoint") {
  Fixture f;
  const auto first = file_sha256(f.model / "checkpoint.bin");
  const auto again = kRoot / "model2";
  REQUIRE(run("--out " + q(again) + " train --corpus " + q(f.corpus) + " --prompt-id p1" + kModelFlags).code == 0);
  CHECK(file_sha256(again / "checkpoint.bin") == first);
  CHECK(read_text_file(again / "loss_trace.csv").rfind("step,lr,L_MSE,L_Topic,total\n", 0) == 0);

  const auto b2 = kRoot / "b2";
  REQUIRE(run("--out " + q(b2) + " train --corpus " + q(f.corpus) + " --prompt-id p1 --model baseline2" +
              kModelFlags)
              .code == 0);
  CHECK(load_checkpoint(b2 / "checkpoint.bin").kind == ModelKind::kBaseline2);
}

TEST_CASE("fit-stats pairs stats with the checkpoint") {
  Fixture f;
  std::string hash;
  const auto s = load_stats(f.stats / "stats.bin", &hash);
  CHECK(s.num_layers() == 4);
  CHECK(hash == file_sha256(f.model / "checkpoint.bin"));
  const auto before = file_sha256(f.stats / "stats.bin");
  REQUIRE(run("--out " + q(f.stats) + " fit-stats --corpus " + q(f.corpus) + " --checkpoint " +
              q(f.model / "checkpoint.bin"))
              .code == 0);
  CHECK(file_sha256(f.stats / "stats.bin") == before);

  // A corpus without the checkpoint's prompt is rejected.
  const auto other = kRoot / "other";
  REQUIRE(run("--out " + q(other) + " synth --seed 3 --prompts 3 --essays-per-prompt 10").code == 0);
  auto manifest = read_text_file(other / "prompts.json");
  auto essays = read_text_file(other / "essays.jsonl");
  for (auto* s2 : {&manifest, &essays}) {
    for (std::size_t pos; (pos = s2->find("\"p1\"")) != std::string::npos;) s2->replace(pos, 4, "\"q1\"");
  }
  write_text_file(other / "prompts.json", manifest);
  write_text_file(other / "essays.jsonl", essays);
  const auto r = run("--out " + q(kRoot / "bad") + " fit-stats --corpus " + q(other) + " --checkpoint " +
                     q(f.model / "checkpoint.bin"));
  CHECK(r.code == 3);
}

TEST_CASE("detect, score, perturb and eval") {
  Fixture f;
  const auto work = kRoot / "work";
  fs::create_directories(work);
  write_text_file(work / "manifest.json",
                  R"([{"kind": "babel_generate", "seed": 3}, {"kind": "repeat_sent", "seed": 4}])");
  REQUIRE(run("--out " + q(work / "adv") + " perturb --corpus " + q(f.corpus) +
              " --manifest " + q(work / "manifest.json") + " --prompt-id p1")
              .code == 0);
  const auto adv = read_text_file(work / "adv" / "adversarial.jsonl");
  CHECK(adv.find("+babel_generate") != std::string::npos);
  CHECK(adv.find("\"perturbation\":\"repeat_sent\"") != std::string::npos);

  // On-topic test essays of p1 plus the adversarial ones.
  std::ifstream in(f.corpus / "essays.jsonl");
  std::string mixed, line;
  while (std::getline(in, line)) {
    if (line.find("\"prompt_id\":\"p1\"") != std::string::npos &&
        line.find("\"split\":\"test\"") != std::string::npos) {
      mixed += line + "\n";
    }
  }
  const std::size_t n_on = count_lines(mixed);
  mixed += adv;
  write_text_file(work / "eval" / "input.jsonl", mixed);
  fs::copy_file(f.corpus / "prompts.json", work / "eval" / "prompts.json",
                fs::copy_options::overwrite_existing);
  const auto input = work / "eval" / "input.jsonl";

  REQUIRE(run("--out " + q(work) + " detect" + f.artifacts() + " --input " + q(input)).code == 0);
  const auto det = read_text_file(work / "detect.csv");
  CHECK(det.rfind("essay_id,d_total,d_layer1,d_layer2,d_layer3,d_layer4,y_h,y_t,y_s,predicted_class,final_score\n",
                  0) == 0);
  CHECK(count_lines(det) == 1 + n_on + count_lines(adv));
  std::istringstream rows(det);
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    if (line.find(",C_off,") != std::string::npos) CHECK(line.substr(line.size() - 2) == ",0");
  }

  REQUIRE(run("--out " + q(work) + " score" + f.artifacts() + " --input " + q(input)).code == 0);
  CHECK(read_text_file(work / "score.csv") == det);

  REQUIRE(run("--out " + q(work / "ev") + " eval --decisions " + q(work / "detect.csv") + " --gold " +
              q(input) + " --bins 6")
              .code == 0);
  const auto metrics = read_text_file(work / "ev" / "metrics.csv");
  CHECK(metrics.find(",all,f1,") != std::string::npos);
  CHECK(metrics.find(",p1,qwk,") != std::string::npos);
  CHECK(count_lines(read_text_file(work / "ev" / "histogram.csv")) == 7);
  CHECK(fs::exists(work / "ev" / "summary.json"));

  // Without gold scores there is no qwk row.
  std::string nogold;
  std::istringstream src(mixed);
  while (std::getline(src, line)) {
    for (std::size_t p; (p = line.find(",\"score\":")) != std::string::npos;) {
      const auto end = line.find_first_of(",}", p + 9);
      line.erase(p, end - p);
    }
    nogold += line + "\n";
  }
  write_text_file(work / "nogold" / "input.jsonl", nogold);
  fs::copy_file(f.corpus / "prompts.json", work / "nogold" / "prompts.json",
                fs::copy_options::overwrite_existing);
  REQUIRE(run("--out " + q(work / "ev2") + " eval --decisions " + q(work / "detect.csv") + " --gold " +
              q(work / "nogold" / "input.jsonl"))
              .code == 0);
  const auto m2 = read_text_file(work / "ev2" / "metrics.csv");
  CHECK(m2.find(",qwk,") == std::string::npos);
  CHECK(m2.find(",all,f1,") != std::string::npos);
}

TEST_CASE("eval on perfect decisions reports f1 1") {
  const auto dir = kRoot / "perfect";
  write_text_file(dir / "gold.jsonl",
                  "{\"id\":\"a\",\"prompt_id\":\"p\",\"text\":\"x y.\",\"score\":2,\"split\":\"test\"}\n"
                  "{\"id\":\"b\",\"prompt_id\":\"p\",\"text\":\"x z.\",\"score\":1,\"split\":\"test\"}\n"
                  "{\"id\":\"c\",\"prompt_id\":\"p\",\"text\":\"q r.\",\"split\":\"test\",\"label\":\"off_topic\"}\n");
  write_text_file(dir / "prompts.json", R"([{"id": "p", "score_min": 0, "score_max": 3, "topic_keywords": ["x"]}])");
  write_text_file(dir / "d.csv",
                  "essay_id,d_total,d_layer1,y_h,y_t,y_s,predicted_class,final_score\n"
                  "a,1,1,0.6,1,0.6,C_on,2\n"
                  "b,2,2,0.3,1,0.3,C_on,1\n"
                  "c,9,9,0.1,1,0.1,C_off,0\n");
  const auto r = run("--out " + q(dir / "out") + " eval --decisions " + q(dir / "d.csv") + " --gold " +
                     q(dir / "gold.jsonl"));
  REQUIRE(r.code == 0);
  const auto m = read_text_file(dir / "out" / "metrics.csv");
  CHECK(m.find("all,f1,1\n") != std::string::npos);
  CHECK(m.find("p,qwk,1\n") != std::string::npos);
}

TEST_CASE("empty input yields a header-only CSV") {
  Fixture f;
  const auto dir = kRoot / "empty";
  write_text_file(dir / "input.jsonl", "");
  fs::copy_file(f.corpus / "prompts.json", dir / "prompts.json", fs::copy_options::overwrite_existing);
  REQUIRE(run("--out " + q(dir) + " detect" + f.artifacts() + " --input " + q(dir / "input.jsonl")).code == 0);
  const auto csv = read_text_file(dir / "detect.csv");
  CHECK(count_lines(csv) == 1);
  CHECK(csv.rfind("essay_id,", 0) == 0);
}

TEST_CASE("corrupted or mismatched stats are refused") {
  Fixture f;
  const auto dir = kRoot / "corrupt";
  fs::create_directories(dir);
  auto bytes = read_text_file(f.stats / "stats.bin");
  bytes[bytes.size() / 2] ^= 0x01;
  write_text_file(dir / "stats.bin", bytes);
  const std::string rest = " --checkpoint " + q(f.model / "checkpoint.bin") + " --threshold " +
                           q(f.cal / "threshold.json") + " --input " + q(f.corpus / "essays.jsonl");
  auto r = run("--out " + q(dir) + " detect --stats " + q(dir / "stats.bin") + rest);
  CHECK(r.code == 3);
  CHECK(r.err.find("HashMismatch") != std::string::npos);

  // Stats fitted for a different checkpoint.
  const auto m2 = kRoot / "model_seed2";
  REQUIRE(run("--out " + q(m2) + " train --corpus " + q(f.corpus) + " --prompt-id p1 --seed 2" + kModelFlags)
              .code == 0);
  REQUIRE(run("--out " + q(m2) + " fit-stats --corpus " + q(f.corpus) + " --checkpoint " +
              q(m2 / "checkpoint.bin"))
              .code == 0);
  r = run("--out " + q(dir) + " detect --stats " + q(m2 / "stats.bin") + rest);
  CHECK(r.code == 3);
  CHECK(r.err.find("HashMismatch") != std::string::npos);
}

TEST_CASE("quantile calibration") {
  Fixture f;
  const auto dir = kRoot / "quant";
  REQUIRE(run("--out " + q(dir) + " calibrate --method quantile --quantile 0.9 --corpus " + q(f.corpus) +
              " --checkpoint " + q(f.model / "checkpoint.bin") + " --stats " + q(f.stats / "stats.bin"))
              .code == 0);
  const auto t = read_text_file(dir / "threshold.json");
  CHECK(t.find("\"quantile\"") != std::string::npos);
  CHECK(t.find(file_sha256(f.stats / "stats.bin")) != std::string::npos);
}

TEST_CASE("bench subcommand writes the report") {
  const auto dir = kRoot / "bench";
  fs::remove_all(dir);
  write_text_file(kRoot / "bench.json",
                  R"({"synth": {"essays_per_prompt": 40}, "encoder": {"d": 8, "layers": 2, "max_len": 32},
                      "train": {"epochs": 1}, "systems": ["aoes", "tfidf"], "perturbations": []})");
  const auto r = run("--out " + q(dir) + " bench --config " + q(kRoot / "bench.json"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("aoes>=tfidf") != std::string::npos);
  for (const auto& f : {"metrics.csv", "adversarial.csv", "summary.json", "manifest.json", "run_meta.json"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK(run("--out " + q(dir) + " bench --config " + q(kRoot / "bench.json") + " --calibration maybe").code == 2);
}
