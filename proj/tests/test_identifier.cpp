#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <motionid/identifier.hpp>
#include <motionid/rng.hpp>

using namespace motionid;
namespace fs = std::filesystem;

namespace {

EmbeddingSequence make_emb(std::vector<std::vector<double>> rows, std::string identity = "",
                           std::string video = "", std::string context = "") {
  EmbeddingSequence e;
  e.dims = static_cast<int>(rows.front().size());
  for (const auto& r : rows) e.data.insert(e.data.end(), r.begin(), r.end());
  e.identity_id = std::move(identity);
  e.video_id = std::move(video);
  e.context = std::move(context);
  return e;
}

EmbeddingSequence random_unit_emb(int frames, int dims, Rng& rng) {
  EmbeddingSequence e;
  e.dims = dims;
  for (int t = 0; t < frames; ++t) {
    std::vector<double> row(static_cast<std::size_t>(dims));
    double norm = 0.0;
    for (auto& x : row) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : row) e.data.push_back(x / norm);
  }
  return e;
}

// Oracle: exhaustive minimum over every (reference, test frame, ref frame).
double brute_min_distance(const EmbeddingSequence& test,
                          const std::vector<EmbeddingSequence>& refs) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& ref : refs)
    for (int t = 0; t < test.frames(); ++t)
      for (int u = 0; u < ref.frames(); ++u) {
        double d = 0.0;
        for (int j = 0; j < test.dims; ++j) {
          const double diff = test.row(t)[j] - ref.row(u)[j];
          d += diff * diff;
        }
        best = std::min(best, d);
      }
  return best;
}

// Oracle: exhaustive pair counting, ties worth one half.
double brute_auc(const std::vector<ScoredSample>& samples) {
  double score = 0.0;
  long long pairs = 0;
  for (const auto& f : samples) {
    if (!f.is_fake) continue;
    for (const auto& r : samples) {
      if (r.is_fake) continue;
      ++pairs;
      if (f.distance > r.distance)
        score += 1.0;
      else if (f.distance == r.distance)
        score += 0.5;
    }
  }
  return score / static_cast<double>(pairs);
}

}  // namespace

// ---------------------------------------------------------------------------
// distances
// ---------------------------------------------------------------------------

TEST_CASE("sequence distance is the minimum over all frame pairs") {
  EmbeddingSequence test = make_emb({{1.0, 0.0}, {0.0, 1.0}});
  EmbeddingSequence near = make_emb({{0.0, -1.0}, {0.8, 0.6}});
  // closest pair: (1,0) vs (0.8,0.6): 0.04 + 0.36 = 0.4
  REQUIRE(sequence_pair_distance(test, near) == Catch::Approx(0.4).margin(1e-12));

  EmbeddingSequence far = make_emb({{0.0, -1.0}});
  // (0,1) vs (0,-1) -> 4; (1,0) vs (0,-1) -> 2; min = 2
  REQUIRE(sequence_pair_distance(test, far) == Catch::Approx(2.0).margin(1e-12));

  DistanceReport rep = min_distance(test, {far, near});
  REQUIRE(rep.per_reference.size() == 2);
  REQUIRE(rep.per_reference[0] == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(rep.per_reference[1] == Catch::Approx(0.4).margin(1e-12));
  REQUIRE(rep.distance == Catch::Approx(0.4).margin(1e-12));
}

TEST_CASE("adding references can only lower the distance") {
  Rng rng(21);
  EmbeddingSequence test = random_unit_emb(6, 8, rng);
  std::vector<EmbeddingSequence> refs;
  double prev = std::numeric_limits<double>::infinity();
  for (int r = 0; r < 5; ++r) {
    refs.push_back(random_unit_emb(4, 8, rng));
    const double d = min_distance(test, refs).distance;
    REQUIRE(d <= prev);
    prev = d;
  }
}

TEST_CASE("a sequence is at distance zero from itself") {
  Rng rng(5);
  EmbeddingSequence e = random_unit_emb(7, 16, rng);
  REQUIRE(min_distance(e, {e}).distance == 0.0);
}

TEST_CASE("unit-normalized rows keep squared distances within [0, 4]") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    EmbeddingSequence a = random_unit_emb(5, 12, rng);
    EmbeddingSequence b = random_unit_emb(3, 12, rng);
    const double d = sequence_pair_distance(a, b);
    REQUIRE(d >= 0.0);
    REQUIRE(d <= 4.0);
  }
}

TEST_CASE("distance matches the exhaustive oracle on random inputs") {
  Rng rng(33);
  for (int trial = 0; trial < 5; ++trial) {
    EmbeddingSequence test = random_unit_emb(4 + trial, 6, rng);
    std::vector<EmbeddingSequence> refs;
    for (int r = 0; r < 3; ++r) refs.push_back(random_unit_emb(3 + r, 6, rng));
    REQUIRE(min_distance(test, refs).distance ==
            Catch::Approx(brute_min_distance(test, refs)).margin(1e-12));
  }
}

TEST_CASE("distance computation validates its inputs") {
  Rng rng(2);
  EmbeddingSequence e = random_unit_emb(3, 4, rng);
  REQUIRE_THROWS_AS(min_distance(e, std::vector<EmbeddingSequence>{}), EmptyInputError);
  EmbeddingSequence empty;
  empty.dims = 4;
  REQUIRE_THROWS_AS(sequence_pair_distance(e, empty), EmptyInputError);
  EmbeddingSequence other_dims = random_unit_emb(3, 5, rng);
  REQUIRE_THROWS_AS(sequence_pair_distance(e, other_dims), ShapeError);
}

TEST_CASE("reference sets enforce a single identity and collect contexts") {
  Rng rng(61);
  std::vector<EmbeddingSequence> seqs;
  for (const char* ctx : {"studio", "outdoor", "studio"}) {
    seqs.push_back(random_unit_emb(3, 4, rng));
    seqs.back().identity_id = "idA";
    seqs.back().context = ctx;
  }
  ReferenceSet rs = make_reference_set(seqs);
  REQUIRE(rs.identity_id == "idA");
  REQUIRE(rs.sequences.size() == 3);
  REQUIRE(rs.contexts == std::vector<std::string>{"outdoor", "studio"});

  EmbeddingSequence probe = random_unit_emb(2, 4, rng);
  REQUIRE(min_distance(probe, rs).distance == min_distance(probe, seqs).distance);

  seqs.push_back(random_unit_emb(3, 4, rng));
  seqs.back().identity_id = "idB";
  REQUIRE_THROWS_AS(make_reference_set(seqs), IdentityMismatchError);
  REQUIRE_THROWS_AS(make_reference_set({}), EmptyInputError);
}

// ---------------------------------------------------------------------------
// verification verdicts
// ---------------------------------------------------------------------------

TEST_CASE("the verdict flips strictly above the squared threshold") {
  REQUIRE(verify(0.0) == Verdict::kReal);
  REQUIRE(verify(1.1) == Verdict::kReal);   // boundary counts as genuine
  REQUIRE(verify(1.1000001) == Verdict::kFake);
  REQUIRE(verify(1.2) == Verdict::kFake);
  REQUIRE(verify(0.5, 0.4) == Verdict::kFake);
  REQUIRE(verify(0.5, 0.5) == Verdict::kReal);
  REQUIRE_THROWS_AS(verify(-0.01), DomainError);
  REQUIRE_THROWS_AS(verify(0.5, -1.0), DomainError);
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

TEST_CASE("ranking quality and accuracy on a worked example") {
  // reals at 0.2, 0.4, 0.9; fakes at 0.5, 1.3, 1.6. Of the nine ordered
  // pairs, only (fake 0.5, real 0.9) ranks the wrong way: quality 8/9.
  // At threshold 1.1 the fake at 0.5 passes as real: accuracy 5/6.
  std::vector<ScoredSample> samples{{0.2, false}, {0.4, false}, {0.9, false},
                                    {0.5, true},  {1.3, true},  {1.6, true}};
  EvalReport rep = evaluate_samples(samples);
  REQUIRE(rep.n_real == 3);
  REQUIRE(rep.n_fake == 3);
  REQUIRE(rep.auc == 8.0 / 9.0);
  REQUIRE(rep.accuracy == 5.0 / 6.0);
}

TEST_CASE("ranking quality matches exhaustive pair counting with ties") {
  Rng rng(12);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<ScoredSample> samples;
    const int count = 10 + 3 * trial;
    for (int i = 0; i < count; ++i) {
      // coarse grid forces plenty of exact ties
      const double d = 0.1 * static_cast<double>(rng.below(12));
      samples.push_back({d, rng.below(2) == 1});
    }
    bool has_real = false, has_fake = false;
    for (const auto& s : samples) (s.is_fake ? has_fake : has_real) = true;
    if (!has_real || !has_fake) continue;
    REQUIRE(evaluate_samples(samples).auc == brute_auc(samples));
  }
}

TEST_CASE("perfect separation scores one, pure ties score one half") {
  std::vector<ScoredSample> separated{{0.1, false}, {0.2, false}, {3.0, true}, {3.5, true}};
  REQUIRE(evaluate_samples(separated).auc == 1.0);
  REQUIRE(evaluate_samples(separated).accuracy == 1.0);

  std::vector<ScoredSample> all_equal{{0.7, false}, {0.7, true}, {0.7, false}, {0.7, true}};
  REQUIRE(evaluate_samples(all_equal).auc == 0.5);
}

TEST_CASE("ranking quality is invariant under monotone rescaling of distances") {
  Rng rng(44);
  std::vector<ScoredSample> samples;
  for (int i = 0; i < 25; ++i)
    samples.push_back({0.25 * static_cast<double>(rng.below(10)), rng.below(3) == 0});
  samples.push_back({0.1, false});
  samples.push_back({2.4, true});
  const double base = evaluate_samples(samples).auc;

  std::vector<ScoredSample> affine = samples, cubed = samples;
  for (auto& s : affine) s.distance = 2.0 * s.distance + 1.0;
  for (auto& s : cubed) s.distance = s.distance * s.distance * s.distance;
  REQUIRE(evaluate_samples(affine).auc == base);
  REQUIRE(evaluate_samples(cubed).auc == base);
}

TEST_CASE("metrics need both classes") {
  REQUIRE_THROWS_AS(evaluate_samples({{0.1, false}, {0.2, false}}), EvalError);
  REQUIRE_THROWS_AS(evaluate_samples({{0.1, true}}), EvalError);
  REQUIRE_THROWS_AS(evaluate_samples({}), EvalError);
}

// ---------------------------------------------------------------------------
// score export
// ---------------------------------------------------------------------------

TEST_CASE("distance records round trip through the score file") {
  std::vector<DistanceRecord> records{
      {"id000", "v000", 1.0 / 3.0, "real"},
      {"id000", "swap000", 1.2345678901234567, "fake"},
      {"id001", "v001", 0.0, "real"},
      {"id001", "reen000", 4.0, "fake"},
      {"id002", "v002", 1e-17, "real"},
  };
  fs::path path = fs::temp_directory_path() / "motionid_scores_test.tsv";
  export_distances(path, records);
  std::vector<DistanceRecord> back = load_distances(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    REQUIRE(back[i].group == records[i].group);
    REQUIRE(back[i].video_id == records[i].video_id);
    REQUIRE(back[i].distance == records[i].distance);  // %.17g is lossless
    REQUIRE(back[i].label == records[i].label);
  }
  fs::remove(path);
}

TEST_CASE("an empty score file holds only the header") {
  fs::path path = fs::temp_directory_path() / "motionid_scores_empty.tsv";
  export_distances(path, {});
  REQUIRE(load_distances(path).empty());
  std::ifstream f(path);
  std::string line;
  REQUIRE(std::getline(f, line));
  REQUIRE(line == "group\tvideo_id\tdistance\tlabel");
  REQUIRE_FALSE(std::getline(f, line));
  fs::remove(path);
}

TEST_CASE("score files are validated on load") {
  fs::path path = fs::temp_directory_path() / "motionid_scores_bad.tsv";
  REQUIRE_THROWS_AS(load_distances(fs::temp_directory_path() / "no_such_scores.tsv"), FormatError);

  auto write = [&](const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    f << text;
  };
  write("wrong\theader\there\tnow\n");
  REQUIRE_THROWS_AS(load_distances(path), FormatError);
  write("group\tvideo_id\tdistance\tlabel\nid0\tv0\t0.5\n");
  REQUIRE_THROWS_AS(load_distances(path), FormatError);
  write("group\tvideo_id\tdistance\tlabel\nid0\tv0\tnot_a_number\treal\n");
  REQUIRE_THROWS_AS(load_distances(path), FormatError);
  write("group\tvideo_id\tdistance\tlabel\nid0\tv0\t0.5\tmaybe\n");
  REQUIRE_THROWS_AS(load_distances(path), FormatError);
  fs::remove(path);
}

TEST_CASE("score records convert to labeled samples") {
  std::vector<DistanceRecord> records{{"a", "v", 0.5, "real"}, {"a", "w", 1.5, "fake"}};
  std::vector<ScoredSample> samples = to_samples(records);
  REQUIRE(samples.size() == 2);
  REQUIRE(samples[0].distance == 0.5);
  REQUIRE_FALSE(samples[0].is_fake);
  REQUIRE(samples[1].is_fake);
}

// ---------------------------------------------------------------------------
// reference selection and manifest scoring
// ---------------------------------------------------------------------------

TEST_CASE("reference selection can hold out the test context") {
  Rng rng(3);
  std::vector<EmbeddingSequence> refs;
  refs.push_back(random_unit_emb(3, 4, rng));
  refs.back().identity_id = "idA";
  refs.back().context = "studio";
  refs.push_back(random_unit_emb(3, 4, rng));
  refs.back().identity_id = "idA";
  refs.back().context = "outdoor";
  refs.push_back(random_unit_emb(3, 4, rng));
  refs.back().identity_id = "idB";
  refs.back().context = "studio";

  auto all = select_references(refs, "idA", "studio", false);
  REQUIRE(all.size() == 2);
  auto held_out = select_references(refs, "idA", "studio", true);
  REQUIRE(held_out.size() == 1);
  REQUIRE(held_out[0].context == "outdoor");

  REQUIRE_THROWS_AS(select_references(refs, "idB", "studio", true), ProtocolError);
  REQUIRE_THROWS_AS(select_references(refs, "idC", "studio", false), EmptyInputError);
}

TEST_CASE("manifest scoring pairs each test with its claimed identity's references") {
  Rng rng(71);
  TestManifest man;
  man.records = {
      {"r0", "idA", "v0", "c1", "reference", "real", "-"},
      {"r1", "idA", "v1", "c2", "reference", "real", "-"},
      {"r2", "idB", "v0", "c1", "reference", "real", "-"},
      {"r3", "idB", "v1", "c2", "reference", "real", "-"},
      {"t0", "idA", "v2", "c1", "test", "real", "-"},
      {"t1", "idB", "v2", "c2", "test", "fake", "faceswap"},
  };
  std::vector<EmbeddingSequence> embs;
  for (const auto& r : man.records) {
    embs.push_back(random_unit_emb(4, 6, rng));
    embs.back().identity_id = r.identity_id;
    embs.back().video_id = r.video_id;
    embs.back().context = r.context;
  }

  SECTION("held-out context scoring uses only cross-context references") {
    double mean_refs = 0.0;
    auto records = score_test_records(man, embs, true, &mean_refs);
    REQUIRE(records.size() == 2);
    REQUIRE(mean_refs == 1.0);
    REQUIRE(records[0].group == "idA");
    REQUIRE(records[0].label == "real");
    REQUIRE(records[0].distance == sequence_pair_distance(embs[4], embs[1]));
    REQUIRE(records[1].group == "idB");
    REQUIRE(records[1].label == "fake");
    REQUIRE(records[1].distance == sequence_pair_distance(embs[5], embs[2]));
  }

  SECTION("unrestricted scoring uses every reference of the identity") {
    double mean_refs = 0.0;
    auto records = score_test_records(man, embs, false, &mean_refs);
    REQUIRE(mean_refs == 2.0);
    REQUIRE(records[0].distance == std::min(sequence_pair_distance(embs[4], embs[0]),
                                            sequence_pair_distance(embs[4], embs[1])));
  }

  SECTION("alignment is mandatory") {
    embs.pop_back();
    REQUIRE_THROWS_AS(score_test_records(man, embs, false), ShapeError);
  }

  SECTION("references are required") {
    TestManifest only_tests;
    only_tests.records = {{"t0", "idA", "v2", "c1", "test", "real", "-"}};
    std::vector<EmbeddingSequence> one{embs[4]};
    REQUIRE_THROWS_AS(score_test_records(only_tests, one, false), EmptyInputError);
  }

  SECTION("test records are required") {
    TestManifest only_refs;
    only_refs.records = {{"r0", "idA", "v0", "c1", "reference", "real", "-"}};
    std::vector<EmbeddingSequence> one{embs[0]};
    REQUIRE_THROWS_AS(score_test_records(only_refs, one, false), EmptyInputError);
  }
}
