// motionid: command-line front end for the identity-aware motion toolkit.
//
//   motionid gen-data   synthesize a benchmark corpus (real + fake videos)
//   motionid train      fit the embedding network (optionally adversarially)
//   motionid verify     accept/reject one claimed-identity sequence
//   motionid evaluate   score a labeled test manifest (accuracy, AUC)
//
// Output on stdout is machine-readable key<TAB>value lines; progress and
// errors go to stderr. Exit codes: 0 success (verify: genuine), 1 runtime
// failure, 2 usage error, 3 verify rejected the sequence as fake.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <motionid/identifier.hpp>
#include <motionid/synthetic.hpp>
#include <motionid/trainer.hpp>

namespace fs = std::filesystem;
using namespace motionid;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitFake = 3;

void emit(const std::string& key, const std::string& value) {
  std::cout << key << '\t' << value << '\n';
}

void emit_num(const std::string& key, double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  emit(key, buf);
}

void emit_int(const std::string& key, long long value) { emit(key, std::to_string(value)); }

EmbeddingSequence embed_record(const Model& model, const fs::path& file,
                               const std::string& identity, const std::string& video,
                               const std::string& context) {
  FeatureSequence seq = read_sequence_file(file);
  seq.identity_id = identity;
  seq.video_id = video;
  seq.context = context;
  return model_embed(model, seq);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  WorldConfig wc;
};

int cmd_gen_data(const GenDataArgs& a) {
  BenchmarkPaths paths = build_benchmark(a.out, a.wc);
  emit("out_dir", a.out);
  emit("train_manifest", paths.train_manifest.string());
  emit("val_manifest", paths.val_manifest.string());
  emit("test_manifest", paths.test_manifest.string());
  emit_int("identities", a.wc.n_ids);
  emit_int("real_videos", static_cast<long long>(a.wc.n_ids) * a.wc.vids_per_id);
  emit_int("fake_videos", static_cast<long long>(a.wc.n_ids) * 4);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string train_tsv;
  std::string val_tsv;
  std::string out_dir;
  bool compact = false;
  bool adversarial = false;
  bool resume = false;
  // overrides; applied only when the flag was passed
  int n = 0, m = 0, window = 0;
  double lr_embed = 0.0, lr_gen = 0.0, lambda_cycle = 0.0, lambda_inv = 0.0, tau = 0.0;
  int epochs = 0, adv_epochs = 0, iters = 0, val_batches = 0;
  std::uint64_t seed = 0;
  bool full_grid = false, sparse_grid = false;
  CLI::App* cmd = nullptr;
};

void save_generator(const fs::path& path, const GenConfig& cfg, const ParamSet& gen) {
  std::map<std::string, TensorPtr> t;
  t["config.gen"] = detail::pack_vector(detail::gen_config_vector(cfg));
  detail::put_params(t, "gen.", gen);
  save_tensors(path, t);
}

int cmd_train(const TrainArgs& a) {
  fs::create_directories(a.out_dir);
  const fs::path ckpt_path = fs::path(a.out_dir) / "checkpoint.idrc";
  const fs::path log_path = fs::path(a.out_dir) / "train_log.tsv";
  const fs::path model_path = fs::path(a.out_dir) / "model.idrc";
  const fs::path gen_path = fs::path(a.out_dir) / "generator.idrc";

  TrainState st;
  bool resumed = false;
  std::optional<Dataset> train_ds;
  if (a.resume && fs::exists(ckpt_path)) {
    st = load_train_state(ckpt_path);
    // the schedule may be extended on resume; everything else is pinned by
    // the checkpoint so the continued run stays bit-identical
    if (a.cmd->count("--epochs")) st.cfg.phase1_epochs = a.epochs;
    if (a.cmd->count("--adv-epochs")) st.cfg.phase2_epochs = a.adv_epochs;
    st.cfg.validate();
    if (fs::exists(log_path)) st.log = TrainLog::load(log_path);
    train_ds = Dataset::load(load_manifest(a.train_tsv), &st.stats);
    resumed = true;
  } else {
    TrainConfig cfg = a.compact ? compact_train_config() : TrainConfig{};
    if (a.cmd->count("--batch-identities")) cfg.n = a.n;
    if (a.cmd->count("--batch-videos")) cfg.m = a.m;
    if (a.cmd->count("--window")) cfg.t = a.window;
    if (a.cmd->count("--lr-embed")) cfg.lr_tid = a.lr_embed;
    if (a.cmd->count("--lr-gen")) cfg.lr_gen = a.lr_gen;
    if (a.cmd->count("--lambda-cycle")) cfg.lambda_cycle = a.lambda_cycle;
    if (a.cmd->count("--lambda-inv")) cfg.lambda_inv = a.lambda_inv;
    if (a.cmd->count("--tau")) cfg.tau = a.tau;
    if (a.cmd->count("--epochs")) cfg.phase1_epochs = a.epochs;
    if (a.cmd->count("--adv-epochs")) cfg.phase2_epochs = a.adv_epochs;
    if (a.cmd->count("--iters")) cfg.iterations_per_epoch = a.iters;
    if (a.cmd->count("--val-batches")) cfg.val_batches = a.val_batches;
    if (a.cmd->count("--seed")) cfg.seed = a.seed;
    if (a.full_grid) cfg.adv_full_grid = true;
    if (a.sparse_grid) cfg.adv_full_grid = false;
    cfg.validate();
    train_ds = Dataset::load(load_manifest(a.train_tsv));
    st = init_train_state(cfg, train_ds->stats);
  }
  Dataset val_ds = Dataset::load(load_manifest(a.val_tsv), &st.stats);

  try {
    while (st.phase == 1 && st.completed_epochs_p1 < st.cfg.phase1_epochs) {
      run_phase1_epoch(st, *train_ds, val_ds);
      save_train_state(ckpt_path, st);
      st.log.save(log_path);
      std::fprintf(stderr, "phase 1 epoch %d/%d: accuracy %.4f (best %.4f at epoch %d)\n",
                   st.completed_epochs_p1, st.cfg.phase1_epochs, st.log.vals.back().accuracy,
                   st.best_accuracy, st.best_epoch);
    }
    if (st.phase == 1 && st.best_epoch < 0)
      train_phase1(st, *train_ds, val_ds);  // zero-epoch schedule: select the initial model

    if (a.adversarial || st.phase == 2) {
      enable_phase2(st);
      save_train_state(ckpt_path, st);
      while (st.completed_epochs_p2 < st.cfg.phase2_epochs) {
        run_phase2_epoch(st, *train_ds, val_ds);
        save_train_state(ckpt_path, st);
        st.log.save(log_path);
        std::fprintf(stderr, "phase 2 epoch %d/%d: accuracy %.4f\n", st.completed_epochs_p2,
                     st.cfg.phase2_epochs, st.log.vals.back().accuracy);
      }
    }
  } catch (const DivergenceError& e) {
    Model salvage{st.cfg.tid, e.last_good, st.stats};
    save_model(model_path, salvage);
    e.log.save(log_path);
    emit("diverged", "true");
    emit("model", model_path.string());
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }

  const bool hardened = st.phase == 2;
  Model model{st.cfg.tid, hardened ? st.tid : st.best_tid, st.stats};
  save_model(model_path, model);
  save_train_state(ckpt_path, st);
  st.log.save(log_path);
  if (hardened) save_generator(gen_path, st.cfg.gen, st.gen);

  emit("resumed", resumed ? "true" : "false");
  emit_int("phase", st.phase);
  emit_int("epochs_phase1", st.completed_epochs_p1);
  emit_int("epochs_phase2", st.completed_epochs_p2);
  emit_int("best_epoch", st.best_epoch);
  emit_num("best_accuracy", st.best_accuracy);
  if (!st.log.vals.empty()) emit_num("final_accuracy", st.log.vals.back().accuracy);
  emit("model", model_path.string());
  if (hardened) emit("generator", gen_path.string());
  emit("checkpoint", ckpt_path.string());
  emit("log", log_path.string());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string model;
  std::string refs_tsv;
  std::string test_file;
  double threshold_sq = kDefaultThresholdSq;
};

int cmd_verify(const VerifyArgs& a) {
  Model model = load_model(a.model);
  DatasetManifest refs_man = load_manifest(a.refs_tsv);
  std::vector<EmbeddingSequence> refs;
  for (const ManifestRecord& rec : refs_man.records)
    refs.push_back(embed_record(model, refs_man.resolve(rec), rec.identity_id, rec.video_id,
                                rec.context));
  ReferenceSet rs = make_reference_set(std::move(refs));

  FeatureSequence test = read_sequence_file(a.test_file);
  DistanceReport rep = min_distance(model_embed(model, test), rs);
  Verdict verdict = verify(rep.distance, a.threshold_sq);

  emit("identity", rs.identity_id);
  emit_int("references", static_cast<long long>(rs.sequences.size()));
  emit_num("distance_sq", rep.distance);
  emit_num("threshold_sq", a.threshold_sq);
  emit("verdict", verdict == Verdict::kFake ? "fake" : "real");
  return verdict == Verdict::kFake ? kExitFake : kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::string test_tsv;
  std::string scores_file;  // pre-computed distances; bypasses the model
  std::string out;          // where to export distances
  bool same_context = false;
  double threshold_sq = kDefaultThresholdSq;
};

int cmd_evaluate(const EvaluateArgs& a) {
  std::vector<DistanceRecord> records;
  double mean_refs = std::numeric_limits<double>::quiet_NaN();
  if (!a.scores_file.empty()) {
    records = load_distances(a.scores_file);
  } else {
    Model model = load_model(a.model);
    TestManifest man = load_test_manifest(a.test_tsv);
    std::vector<EmbeddingSequence> embs;
    embs.reserve(man.records.size());
    for (const TestRecord& rec : man.records)
      embs.push_back(embed_record(model, man.resolve(rec), rec.identity_id, rec.video_id,
                                  rec.context));
    records = score_test_records(man, embs, !a.same_context, &mean_refs);
    if (!a.out.empty()) {
      export_distances(a.out, records);
      emit("scores", a.out);
    }
  }
  EvalReport rep = evaluate_samples(to_samples(records), a.threshold_sq);
  emit_int("samples", static_cast<long long>(records.size()));
  emit_int("n_real", rep.n_real);
  emit_int("n_fake", rep.n_fake);
  if (!std::isnan(mean_refs)) emit_num("mean_references", mean_refs);
  emit_num("threshold_sq", a.threshold_sq);
  emit_num("accuracy", rep.accuracy);
  emit_num("auc", rep.auc);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"identity-aware facial-motion verification toolkit"};
  app.require_subcommand(1);

  GenDataArgs gd;
  CLI::App* gen = app.add_subcommand("gen-data", "synthesize a benchmark corpus");
  gen->add_option("--out", gd.out, "output directory")->required();
  gen->add_option("--ids", gd.wc.n_ids, "number of identities (default 16)");
  gen->add_option("--vids", gd.wc.vids_per_id, "videos per identity (default 8)");
  gen->add_option("--frames", gd.wc.frames, "frames per video (default 200)");
  gen->add_option("--contexts", gd.wc.contexts, "number of recording contexts (default 4)");
  gen->add_option("--fps", gd.wc.fps, "frame rate (default 25)");
  gen->add_option("--seed", gd.wc.seed, "world seed (default 7)");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "fit the embedding network");
  train->add_option("--train", tr.train_tsv, "training manifest")->required();
  train->add_option("--val", tr.val_tsv, "validation manifest")->required();
  train->add_option("--out-dir", tr.out_dir, "output directory")->required();
  train->add_flag("--compact", tr.compact, "CPU-scale preset (small network, short schedule)");
  train->add_flag("--adversarial", tr.adversarial, "run the adversarial phase after selection");
  train->add_flag("--resume", tr.resume, "continue from <out-dir>/checkpoint.idrc if present");
  train->add_option("--batch-identities", tr.n, "identities per batch");
  train->add_option("--batch-videos", tr.m, "videos per identity per batch");
  train->add_option("--window", tr.window, "frames per training window");
  train->add_option("--lr-embed", tr.lr_embed, "embedding-network learning rate");
  train->add_option("--lr-gen", tr.lr_gen, "generator learning rate");
  train->add_option("--lambda-cycle", tr.lambda_cycle, "cycle-consistency weight");
  train->add_option("--lambda-inv", tr.lambda_inv, "invisibility-suppression weight");
  train->add_option("--tau", tr.tau, "similarity temperature");
  train->add_option("--epochs", tr.epochs, "phase-1 epochs");
  train->add_option("--adv-epochs", tr.adv_epochs, "phase-2 epochs");
  train->add_option("--iters", tr.iters, "iterations per epoch");
  train->add_option("--val-batches", tr.val_batches, "validation batches per scoring pass");
  train->add_option("--seed", tr.seed, "training seed");
  train->add_flag("--full-adv-grid", tr.full_grid, "every source video per identity pair");
  train->add_flag("--sparse-adv-grid", tr.sparse_grid, "one source video per identity pair");
  tr.cmd = train;

  VerifyArgs vf;
  CLI::App* verify_cmd = app.add_subcommand("verify", "check one sequence against references");
  verify_cmd->add_option("--model", vf.model, "deployment model file")->required();
  verify_cmd->add_option("--refs", vf.refs_tsv, "reference manifest (one identity)")->required();
  verify_cmd->add_option("--test", vf.test_file, "sequence file to verify")->required();
  verify_cmd->add_option("--threshold-sq", vf.threshold_sq,
                         "squared-distance decision threshold (default 1.1)");

  EvaluateArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a labeled test manifest");
  eval_cmd->add_option("--model", ev.model, "deployment model file");
  eval_cmd->add_option("--test-manifest", ev.test_tsv, "labeled test manifest");
  eval_cmd->add_option("--scores-file", ev.scores_file, "pre-computed distance file (skips embedding)");
  eval_cmd->add_option("--out", ev.out, "write per-video distances to this file");
  eval_cmd->add_flag("--same-context", ev.same_context,
                     "allow references from the test sequence's own context");
  eval_cmd->add_option("--threshold-sq", ev.threshold_sq,
                       "squared-distance decision threshold (default 1.1)");

  int rc = kExitOk;
  gen->callback([&] { rc = cmd_gen_data(gd); });
  train->callback([&] { rc = cmd_train(tr); });
  verify_cmd->callback([&] { rc = cmd_verify(vf); });
  eval_cmd->callback([&] {
    if (ev.scores_file.empty() && (ev.model.empty() || ev.test_tsv.empty()))
      throw CLI::RequiredError("evaluate needs --scores-file or both --model and --test-manifest");
    rc = cmd_evaluate(ev);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return rc;
}
