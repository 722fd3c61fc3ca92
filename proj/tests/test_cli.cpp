#include "doctest.h"

#include "cli.hpp"
#include "clusterseq/core/error.hpp"
#include "clusterseq/meta.hpp"
#include "clusterseq/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace clusterseq;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

struct Workspace {
  fs::path dir = fs::temp_directory_path() / "clusterseq_test_cli";
  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string at(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("run config") {
  RunConfig c = parse_run_config(R"({"k": 4, "clusters": 3, "beta": 0.01, "no_output_softmax": true, "cache": "c.bin"})");
  CHECK(c.meta.model.shots == 4);
  CHECK(c.meta.model.clusters == 3);
  CHECK(c.meta.beta == 0.01);
  CHECK(!c.meta.model.output_softmax);
  CHECK(c.cache == "c.bin");
  CHECK(c.meta.alpha == 0.05);
  CHECK(c.effective_min_length() == 4);

  RunConfig back = parse_run_config(to_json(c));
  CHECK(to_json(back) == to_json(c));

  for (const char* bad : {R"({"bogus": 1})", R"({"k": "three"})", R"({"k": 3.5})", R"([1, 2])", R"({"k": )",
                          R"({"use_clustering": 1})", R"({"gcn_activation": "swish"})", R"({"seed": -1})"}) {
    try {
      parse_run_config(bad);
      FAIL("accepted " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::configuration);
    }
  }
  RunConfig out_of_range = parse_run_config(R"({"test_fraction": 1.5})");
  CHECK_THROWS_AS(out_of_range.validate(), Error);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), Error);
}

TEST_CASE("preprocess a toy file") {
  Workspace ws;
  std::ofstream(ws.at("toy.csv")) << "user,item,timestamp\n"
                                  << "a,x,1\na,y,2\na,z,3\n"
                                  << "b,y,1\nb,z,2\nb,x,3\nb,y,4\n"
                                  << "c,x,5\nc,z,6\nc,y,7\n"
                                  << "d,z,2\nd,x,3\nd,y,4\n"
                                  << "e,x,9\ne,y,10\ne,z,11\n";
  Result r = run({"preprocess", "--input", ws.at("toy.csv"), "--out", ws.at("p1"), "--test-fraction", "0.2"});
  REQUIRE(r.code == 0);
  const std::string stats = slurp(ws.dir / "p1" / "stats.csv");
  CHECK(stats.find("\n5,3,16,") != std::string::npos);
  CHECK(fs::exists(ws.dir / "p1" / "config.json"));

  REQUIRE(run({"preprocess", "--input", ws.at("toy.csv"), "--out", ws.at("p2"), "--test-fraction", "0.2"}).code == 0);
  CHECK(slurp(ws.dir / "p1" / "corpus.cseqd") == slurp(ws.dir / "p2" / "corpus.cseqd"));

  Result missing = run({"preprocess", "--input", ws.at("absent.csv"), "--out", ws.at("p3")});
  CHECK(missing.code != 0);
  CHECK(missing.err.rfind("error: io", 0) == 0);
  CHECK(lines(missing.err) == 1);
}

TEST_CASE("pipeline") {
  Workspace ws;
  REQUIRE(run({"generate", "--out", ws.at("gen"), "--seed", "2"}).code == 0);
  REQUIRE(run({"preprocess", "--input", ws.at("gen/interactions.csv"), "--out", ws.at("prep")}).code == 0);
  const std::string cache = ws.at("prep/corpus.cseqd");

  SUBCASE("zero epochs writes the initialization") {
    REQUIRE(run({"train", "--data", cache, "--out", ws.at("t0"), "--epochs", "0", "--seed", "7"}).code == 0);
    Corpus corpus = load_corpus(fs::path(cache));
    ModelConfig m;
    m.items = static_cast<int>(corpus.item_count());
    Rng rng(7);
    std::ostringstream init;
    save_checkpoint(initial_parameters(m, rng), init);
    CHECK(slurp(ws.dir / "t0" / "checkpoint.cseq") == init.str());
  }

  SUBCASE("train, evaluate, inspect") {
    for (const char* name : {"a", "b"}) {
      REQUIRE(run({"train", "--data", cache, "--out", ws.at(name), "--epochs", "2", "--seed", "7"}).code == 0);
    }
    CHECK(slurp(ws.dir / "a" / "checkpoint.cseq") == slurp(ws.dir / "b" / "checkpoint.cseq"));
    CHECK(lines(slurp(ws.dir / "a" / "train_log.csv")) == 3);

    const std::string ckpt = ws.at("a/checkpoint.cseq");
    Result e1 = run({"evaluate", "--data", cache, "--checkpoint", ckpt, "--out", ws.at("e1")});
    Result e2 = run({"evaluate", "--data", cache, "--checkpoint", ckpt, "--out", ws.at("e2")});
    REQUIRE(e1.code == 0);
    CHECK(e1.out == e2.out);
    CHECK(slurp(ws.dir / "e1" / "report.csv") == slurp(ws.dir / "e2" / "report.csv"));
    CHECK(e1.out.find("\"mrr\":") != std::string::npos);

    Result wrong = run({"evaluate", "--data", cache, "--checkpoint", ckpt, "--out", ws.at("e3"), "--clusters", "3"});
    CHECK(wrong.code != 0);
    CHECK(wrong.err.rfind("error: compatibility", 0) == 0);
    CHECK(lines(wrong.err) == 1);

    Result ins = run({"inspect-clusters", "--data", cache, "--checkpoint", ckpt, "--out", ws.at("i"), "--labels",
                      ws.at("gen/labels.csv")});
    REQUIRE(ins.code == 0);
    CHECK(ins.out.find("\"cluster_agreement\":") != std::string::npos);
    const Corpus corpus = load_corpus(fs::path(cache));
    CHECK(lines(slurp(ws.dir / "i" / "assignments.csv")) == corpus.user_count() + 1);
    CHECK(lines(slurp(ws.dir / "i" / "histogram.csv")) == 5);

    Result plain = run({"inspect-clusters", "--data", cache, "--checkpoint", ckpt, "--out", ws.at("j"),
                        "--no-clustering"});
    CHECK(plain.code != 0);
  }

  SUBCASE("config file and flags") {
    std::ofstream(ws.at("run.json")) << R"({"epochs": 1, "dim": 8, "cache": ")" << cache << R"("})";
    REQUIRE(run({"train", "--config", ws.at("run.json"), "--out", ws.at("c"), "--seed", "4"}).code == 0);
    RunConfig echoed = load_run_config(ws.dir / "c" / "config.json");
    CHECK(echoed.meta.model.dim == 8);
    CHECK(echoed.meta.seed == 4);
    CHECK(echoed.meta.epochs == 1);

    std::ofstream(ws.at("bad.json")) << R"({"epochs": 1, "dimension": 8})";
    Result bad = run({"train", "--config", ws.at("bad.json"), "--data", cache, "--out", ws.at("d")});
    CHECK(bad.code != 0);
    CHECK(bad.err.find("dimension") != std::string::npos);
  }
}

TEST_CASE("sweep") {
  Workspace ws;
  REQUIRE(run({"generate", "--out", ws.at("gen"), "--users", "120", "--seed", "5"}).code == 0);
  const std::string input = ws.at("gen/interactions.csv");

  Result r = run({"sweep", "--input", input, "--out", ws.at("m"), "--axis", "M", "--values", "2,4,8", "--epochs", "1"});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(ws.dir / "m" / "sweep.csv");
  CHECK(lines(csv) == 4);
  CHECK(csv.find("M,8,ok,") != std::string::npos);

  Result dup = run({"sweep", "--input", input, "--out", ws.at("d"), "--axis", "D", "--values", "4,4,2", "--epochs",
                    "1"});
  REQUIRE(dup.code == 0);
  CHECK(dup.err.find("warning: duplicate sweep value 4") != std::string::npos);
  CHECK(lines(slurp(ws.dir / "d" / "sweep.csv")) == 3);

  // K = 2 is invalid; the sweep records it and carries on
  Result k = run({"sweep", "--input", input, "--out", ws.at("k"), "--axis", "K", "--values", "2,3", "--epochs", "1"});
  REQUIRE(k.code == 0);
  const std::string kcsv = slurp(ws.dir / "k" / "sweep.csv");
  CHECK(kcsv.find("K,2,error,") != std::string::npos);
  CHECK(kcsv.find("K,3,ok,") != std::string::npos);

  CHECK(run({"sweep", "--input", input, "--out", ws.at("x"), "--axis", "Q", "--values", "1"}).code != 0);
  CHECK(run({"sweep", "--input", input, "--out", ws.at("x"), "--axis", "M", "--values", "two"}).code != 0);
}
