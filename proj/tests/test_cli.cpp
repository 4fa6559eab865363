// End-to-end tests driving the installed command-line binary through a shell,
// checking exit codes, the key<TAB>value stdout contract, and on-disk outputs.

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <motionid/features.hpp>
#include <motionid/identifier.hpp>

using namespace motionid;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::map<std::string, std::string> kv;  // parsed stdout
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "motionid_cli_io";
  fs::create_directories(dir);
  const fs::path out = dir / ("out" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      std::string(MOTIONID_CLI_PATH) + " " + args + " > " + out.string() + " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  CmdResult r;
  REQUIRE(WIFEXITED(status));
  r.exit_code = WEXITSTATUS(status);
  r.out = slurp(out);
  std::istringstream lines(r.out);
  std::string line;
  while (std::getline(lines, line)) {
    const std::size_t tab = line.find('\t');
    if (tab != std::string::npos) r.kv[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return r;
}

// Corpus and small trained models shared across the test cases; built once.
struct CliWorld {
  fs::path root;
  fs::path corpus;
  fs::path run_dir;      // selection phase only
  fs::path run_adv_dir;  // with the adversarial phase

  CliWorld() {
    root = fs::temp_directory_path() / "motionid_cli_world";
    fs::remove_all(root);
    fs::create_directories(root);
    corpus = root / "corpus";
    run_dir = root / "run";
    run_adv_dir = root / "run_adv";

    CmdResult gen = run_cli("gen-data --out " + corpus.string() +
                            " --ids 6 --vids 4 --frames 60 --contexts 2 --seed 3");
    REQUIRE(gen.exit_code == 0);

    const std::string common = " --train " + (corpus / "train.tsv").string() + " --val " +
                               (corpus / "val.tsv").string() +
                               " --compact --iters 2 --batch-identities 2 --batch-videos 2"
                               " --window 32 --val-batches 1 --seed 5";
    CmdResult tr = run_cli("train --out-dir " + run_dir.string() + common + " --epochs 1");
    REQUIRE(tr.exit_code == 0);
    CmdResult adv = run_cli("train --out-dir " + run_adv_dir.string() + common +
                            " --epochs 1 --adversarial --adv-epochs 1");
    REQUIRE(adv.exit_code == 0);
  }
};

const CliWorld& world() {
  static CliWorld w;
  return w;
}

}  // namespace

TEST_CASE("gen-data writes the corpus and reports it on stdout") {
  const CliWorld& w = world();
  CmdResult r = run_cli("gen-data --out " + (w.root / "corpus_check").string() +
                        " --ids 6 --vids 4 --frames 60 --contexts 2 --seed 3");
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.kv.at("identities") == "6");
  REQUIRE(r.kv.at("real_videos") == "24");
  REQUIRE(r.kv.at("fake_videos") == "24");
  const fs::path dir = w.root / "corpus_check";
  REQUIRE(fs::exists(dir / "train.tsv"));
  REQUIRE(fs::exists(dir / "val.tsv"));
  REQUIRE(fs::exists(dir / "test.tsv"));
  int real = 0, fake = 0;
  for (const auto& e : fs::directory_iterator(dir / "real")) (void)e, ++real;
  for (const auto& e : fs::directory_iterator(dir / "fake")) (void)e, ++fake;
  REQUIRE(real == 24);
  REQUIRE(fake == 24);
  // identical invocation reproduces the corpus byte for byte
  REQUIRE(slurp(dir / "train.tsv") == slurp(w.corpus / "train.tsv"));
  REQUIRE(slurp(dir / "real" / "id000_v000.idrf") == slurp(w.corpus / "real" / "id000_v000.idrf"));
}

TEST_CASE("usage errors exit with code 2") {
  REQUIRE(run_cli("").exit_code == 2);                       // subcommand required
  REQUIRE(run_cli("frobnicate").exit_code == 2);             // unknown subcommand
  REQUIRE(run_cli("gen-data").exit_code == 2);               // missing required --out
  REQUIRE(run_cli("gen-data --out /tmp/x --bogus").exit_code == 2);
  REQUIRE(run_cli("evaluate --threshold-sq 1.0").exit_code == 2);  // no inputs at all
}

TEST_CASE("missing files exit with code 1") {
  CmdResult r = run_cli("evaluate --scores-file /definitely/not/there.tsv");
  REQUIRE(r.exit_code == 1);
  REQUIRE(run_cli("train --train /nope.tsv --val /nope.tsv --out-dir /tmp/motionid_cli_nope")
              .exit_code == 1);
}

TEST_CASE("training writes the model, checkpoint, and log it reports") {
  const CliWorld& w = world();
  REQUIRE(fs::exists(w.run_dir / "model.idrc"));
  REQUIRE(fs::exists(w.run_dir / "checkpoint.idrc"));
  REQUIRE(fs::exists(w.run_dir / "train_log.tsv"));
  REQUIRE(fs::exists(w.run_adv_dir / "model.idrc"));
  REQUIRE(fs::exists(w.run_adv_dir / "generator.idrc"));
}

TEST_CASE("training resumes from its checkpoint") {
  const CliWorld& w = world();
  const std::string common = " --train " + (w.corpus / "train.tsv").string() + " --val " +
                             (w.corpus / "val.tsv").string() +
                             " --compact --iters 2 --batch-identities 2 --batch-videos 2"
                             " --window 32 --val-batches 1 --seed 5";
  fs::path dir = w.root / "run_resume";
  CmdResult first = run_cli("train --out-dir " + dir.string() + common + " --epochs 1");
  REQUIRE(first.exit_code == 0);
  REQUIRE(first.kv.at("resumed") == "false");
  REQUIRE(first.kv.at("epochs_phase1") == "1");

  CmdResult second = run_cli("train --out-dir " + dir.string() + common +
                             " --epochs 2 --resume");
  REQUIRE(second.exit_code == 0);
  REQUIRE(second.kv.at("resumed") == "true");
  REQUIRE(second.kv.at("epochs_phase1") == "2");
}

TEST_CASE("verify accepts a self-reference and rejects above the threshold") {
  const CliWorld& w = world();
  const fs::path model = w.run_dir / "model.idrc";

  // reference manifest: id000's first two videos
  const fs::path refs = w.root / "refs_id000.tsv";
  {
    std::ofstream f(refs, std::ios::trunc);
    f << "corpus/real/id000_v000.idrf\tid000\tv000\tctx000\n";
    f << "corpus/real/id000_v001.idrf\tid000\tv001\tctx001\n";
  }
  const std::string self = (w.corpus / "real" / "id000_v000.idrf").string();

  SECTION("distance zero against itself: genuine at any threshold") {
    CmdResult r = run_cli("verify --model " + model.string() + " --refs " + refs.string() +
                          " --test " + self + " --threshold-sq 0");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.kv.at("verdict") == "real");
    REQUIRE(std::stod(r.kv.at("distance_sq")) == 0.0);
    REQUIRE(r.kv.at("identity") == "id000");
    REQUIRE(r.kv.at("references") == "2");
  }

  SECTION("a different video is rejected when the threshold is zero") {
    CmdResult r = run_cli("verify --model " + model.string() + " --refs " + refs.string() +
                          " --test " + (w.corpus / "real" / "id000_v002.idrf").string() +
                          " --threshold-sq 0");
    REQUIRE(r.exit_code == 3);
    REQUIRE(r.kv.at("verdict") == "fake");
    REQUIRE(std::stod(r.kv.at("distance_sq")) > 0.0);
  }

  SECTION("embeddings are unit rows, so a wide threshold always accepts") {
    CmdResult r = run_cli("verify --model " + model.string() + " --refs " + refs.string() +
                          " --test " + (w.corpus / "fake" / "id000_swap000.idrf").string() +
                          " --threshold-sq 4.0");
    REQUIRE(r.exit_code == 0);
    REQUIRE(std::stod(r.kv.at("distance_sq")) <= 4.0);
  }
}

TEST_CASE("evaluate scores a pre-computed distance file") {
  const CliWorld& w = world();
  const fs::path scores = w.root / "hand_scores.tsv";
  export_distances(scores, {{"g", "a", 0.2, "real"},
                            {"g", "b", 0.4, "real"},
                            {"g", "c", 0.9, "real"},
                            {"g", "d", 0.5, "fake"},
                            {"g", "e", 1.3, "fake"},
                            {"g", "f", 1.6, "fake"}});
  CmdResult r = run_cli("evaluate --scores-file " + scores.string());
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.kv.at("n_real") == "3");
  REQUIRE(r.kv.at("n_fake") == "3");
  REQUIRE(std::stod(r.kv.at("auc")) == 8.0 / 9.0);
  REQUIRE(std::stod(r.kv.at("accuracy")) == 5.0 / 6.0);
}

TEST_CASE("evaluate runs the full manifest protocol and exports distances") {
  const CliWorld& w = world();
  const fs::path out_scores = w.root / "eval_scores.tsv";
  CmdResult r = run_cli("evaluate --model " + (w.run_dir / "model.idrc").string() +
                        " --test-manifest " + (w.corpus / "test.tsv").string() + " --out " +
                        out_scores.string());
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.kv.at("samples") == "36");  // 6 ids x (2 held-out real + 4 fakes)
  REQUIRE(r.kv.at("n_real") == "12");
  REQUIRE(r.kv.at("n_fake") == "24");
  const double acc = std::stod(r.kv.at("accuracy"));
  const double auc = std::stod(r.kv.at("auc"));
  REQUIRE(acc >= 0.0);
  REQUIRE(acc <= 1.0);
  REQUIRE(auc >= 0.0);
  REQUIRE(auc <= 1.0);
  REQUIRE(r.kv.at("scores") == out_scores.string());
  REQUIRE(load_distances(out_scores).size() == 36);
  // every distance respects the unit-row geometry
  for (const DistanceRecord& rec : load_distances(out_scores)) {
    REQUIRE(rec.distance >= 0.0);
    REQUIRE(rec.distance <= 4.0);
  }
}

TEST_CASE("stdout stays machine readable: every line is key<TAB>value") {
  const CliWorld& w = world();
  const fs::path scores = w.root / "format_scores.tsv";
  export_distances(scores, {{"g", "a", 0.3, "real"}, {"g", "b", 1.4, "fake"}});
  CmdResult r = run_cli("evaluate --scores-file " + scores.string());
  REQUIRE(r.exit_code == 0);
  std::istringstream lines(r.out);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    REQUIRE(line.find('\t') != std::string::npos);
  }
  REQUIRE(rows >= 5);
}
