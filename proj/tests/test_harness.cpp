#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <mop/harness.hpp>
#include <mop/scripted_world.hpp>

#include "support/oracles.hpp"
#include "support/worlds.hpp"

using namespace mop;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() / ("mop_harness_test_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig two_region_config() {
  ExperimentConfig cfg;
  cfg.method = Method::MoP;
  cfg.total_budget = 20;
  cfg.alpha = 0.02;
  cfg.c_min = 1;
  cfg.c_max = 4;
  cfg.demo_cap_fraction = 0.5;  // cap 6: keep every demo
  cfg.seeds = {0};
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("build_mop on the two-region world") {
  const auto w = worlds::make_two_region();
  MockClient llm(w.world);
  const MixtureArtifact artifact = build_mop(llm, w.task, two_region_config(), 0);

  REQUIRE(artifact.expert_count() == 2);
  std::set<std::string> instructions;
  for (const auto& e : artifact.experts) {
    CHECK(e.local_val_score == 1.0);
    instructions.insert(e.instruction);
  }
  CHECK(instructions ==
        std::set<std::string>{worlds::kMathInstruction, worlds::kPluralInstruction});
  CHECK(artifact.discarded_demo_ids.empty());
}

TEST_CASE("build_mop is deterministic under the mock provider") {
  const auto w = worlds::make_two_region();
  MockClient llm_a(w.world), llm_b(w.world);
  const auto a = build_mop(llm_a, w.task, two_region_config(), 7);
  const auto b = build_mop(llm_b, w.task, two_region_config(), 7);
  CHECK(a.digest() == b.digest());
}

TEST_CASE("build_mop rejects a train split smaller than C_min") {
  const auto w = worlds::make_two_region();
  ExperimentConfig cfg = two_region_config();
  cfg.c_min = static_cast<int>(w.task.train.size()) + 1;
  cfg.c_max = cfg.c_min;
  MockClient llm(w.world);
  CHECK_THROWS_AS(build_mop(llm, w.task, cfg, 0), DegenerateTask);
}

TEST_CASE("single-expert build matches a direct single-prompt evaluation") {
  const auto w = worlds::make_two_region();
  ExperimentConfig cfg = two_region_config();
  cfg.c_min = cfg.c_max = 1;
  cfg.demo_cap_fraction = 1.0;
  MockClient llm(w.world);
  const MixtureArtifact artifact = build_mop(llm, w.task, cfg, 0);
  REQUIRE(artifact.expert_count() == 1);

  const auto outcome =
      evaluate(llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults());
  // every query routes to expert 0; predictions equal a direct evaluation of
  // the same fixed prompt
  MockClient fresh(w.world);
  const auto templates = TemplateSet::defaults();
  for (std::size_t i = 0; i < w.task.test.size(); ++i) {
    CHECK(outcome.routing[i].expert_index == 0);
    const std::string prompt = assemble_prompt(templates, artifact.experts[0].instruction,
                                               artifact.experts[0].demos, w.task.test[i].input);
    CHECK(outcome.predictions[i] == fresh.complete({prompt, 0.0, 256, {}}));
  }
}

TEST_CASE("evaluate on the two-region world scores 1.0 and partitions the test set") {
  const auto w = worlds::make_two_region();
  MockClient llm(w.world);
  const MixtureArtifact artifact = build_mop(llm, w.task, two_region_config(), 0);
  const auto outcome =
      evaluate(llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults());
  CHECK(outcome.report.mean == 1.0);
  CHECK(outcome.routing.size() == w.task.test.size());

  std::vector<std::size_t> routed(artifact.expert_count(), 0);
  for (const auto& d : outcome.routing) ++routed[d.expert_index];
  std::size_t total = 0;
  for (std::size_t c : routed) total += c;
  CHECK(total == w.task.test.size());
  CHECK(routed[0] == 4);  // one region each
  CHECK(routed[1] == 4);
}

TEST_CASE("evaluate rejects a provider with a different embedding space") {
  const auto w = worlds::make_two_region();
  MockClient llm(w.world);
  MixtureArtifact artifact = build_mop(llm, w.task, two_region_config(), 0);
  artifact.embedding_model_id = "some-other-embedder";
  CHECK_THROWS_AS(
      evaluate(llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults()),
      ValidationError);
}

TEST_CASE("repeated evaluation of a saved artifact reproduces predictions byte-identically") {
  TempDir dir;
  const auto w = worlds::make_two_region();
  MockClient llm(w.world);
  const MixtureArtifact artifact = build_mop(llm, w.task, two_region_config(), 0);
  artifact.save(dir.path / "artifact.json");
  const MixtureArtifact reloaded = MixtureArtifact::load(dir.path / "artifact.json");

  MockClient llm_a(w.world), llm_b(w.world);
  const auto a = evaluate(llm_a, artifact, w.task.test, w.task.metric, TemplateSet::defaults());
  const auto b = evaluate(llm_b, reloaded, w.task.test, w.task.metric, TemplateSet::defaults());
  CHECK(a.predictions == b.predictions);
}

TEST_CASE("random routing is seeded and keeps the partition property") {
  const auto w = worlds::make_two_region();
  MockClient llm(w.world);
  const MixtureArtifact artifact = build_mop(llm, w.task, two_region_config(), 0);
  const auto a = evaluate(llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults(),
                          RoutingMode::Random, 5);
  const auto b = evaluate(llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults(),
                          RoutingMode::Random, 5);
  for (std::size_t i = 0; i < a.routing.size(); ++i)
    CHECK(a.routing[i].expert_index == b.routing[i].expert_index);
  CHECK(a.routing.size() == w.task.test.size());
}

TEST_CASE("hit ratio histogram") {
  const auto w = worlds::make_two_region();
  MockClient llm(w.world);
  const MixtureArtifact artifact = build_mop(llm, w.task, two_region_config(), 0);

  SUBCASE("only the home expert answers correctly: all mass at 1") {
    const auto histogram =
        hit_ratio(llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults());
    REQUIRE(histogram.size() == 3);  // hits in {0, 1, 2}
    CHECK(histogram[0] == 0);
    CHECK(histogram[1] == w.task.test.size());
    CHECK(histogram[2] == 0);
  }
  SUBCASE("a world where every expert answers everything: all mass at C") {
    ScriptedWorld easy = w.world;
    std::map<std::string, std::string> key;
    for (const auto& d : w.task.test) key[d.input] = d.outputs.front();
    easy.answer = [key](const ParsedPrompt& p) {
      auto it = key.find(p.query);
      return it == key.end() ? std::string("?") : it->second;
    };
    MockClient easy_llm(easy);
    const auto histogram =
        hit_ratio(easy_llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults());
    CHECK(histogram[2] == w.task.test.size());
  }
  SUBCASE("histogram sums to the test size") {
    const auto histogram =
        hit_ratio(llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults());
    std::size_t total = 0;
    for (std::size_t h : histogram) total += h;
    CHECK(total == w.task.test.size());
  }
  SUBCASE("requires at least two experts") {
    ExperimentConfig cfg = two_region_config();
    cfg.c_min = cfg.c_max = 1;
    cfg.demo_cap_fraction = 1.0;
    MockClient llm_one(w.world);
    const MixtureArtifact single = build_mop(llm_one, w.task, cfg, 0);
    CHECK_THROWS_AS(
        hit_ratio(llm_one, single, w.task.test, w.task.metric, TemplateSet::defaults()),
        ValidationError);
  }
}

TEST_CASE("APE baseline finds the globally correct instruction") {
  const auto g = worlds::make_global();
  MockClient llm(g.world);
  ExperimentConfig cfg = two_region_config();
  cfg.method = Method::APE;
  const SingleRun run = run_single(llm, g.task, cfg, 0);
  CHECK(run.test_score == 1.0);
  CHECK(run.generation_calls == 20);
}

TEST_CASE("k-centroid demos select one demo per separated blob") {
  const auto w = worlds::make_two_region();
  MockClient llm(w.world);
  const auto demos = k_centroid_demos(llm, w.task.train, 2, 3);
  REQUIRE(demos.size() == 2);
  std::set<char> regions;
  for (const auto& d : demos) regions.insert(d.id[0]);
  CHECK(regions == std::set<char>{'m', 'p'});

  // chosen ids agree with a nearest-to-centroid scan over each blob
  std::vector<std::string> inputs;
  for (const auto& d : w.task.train) inputs.push_back(d.input);
  MockClient fresh(w.world);
  const auto vecs = fresh.embed(inputs);
  std::vector<oracles::Point> points;
  for (const auto& v : vecs) points.push_back(v.values);
  const ClusterAssignment assignment = kmeans(vecs, 2, 3);
  for (int c = 0; c < 2; ++c) {
    const auto centroid = assignment.centroids[c].values;
    double best = 1e300;
    std::string best_id;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (assignment.labels[i] != c) continue;
      const double d = oracles::squared_dist(points[i], centroid);
      if (d < best) {
        best = d;
        best_id = w.task.train[i].id;
      }
    }
    CHECK((demos[c].id == best_id));
  }
}

TEST_CASE("nearest-neighbor demos return exactly cap demos, nearest first") {
  const auto w = worlds::make_two_region();
  MockClient llm(w.world);
  std::vector<std::string> inputs;
  for (const auto& d : w.task.train) inputs.push_back(d.input);
  const auto train_vecs = llm.embed(inputs);
  for (const auto& q : w.task.test) {
    const auto qvec = llm.embed({q.input})[0];
    const auto demos = nearest_neighbor_demos(w.task.train, train_vecs, qvec, 3);
    REQUIRE(demos.size() == 3);
    // all three nearest demos share the query's region
    for (const auto& d : demos) CHECK(d.id[0] == q.id[0]);
  }
}

TEST_CASE("all baselines run and respect the generation budget") {
  const auto w = worlds::make_two_region();
  for (Method method : {Method::APE, Method::APEPlusRandomDemos, Method::APEPlusKCentroids,
                        Method::APEPlusNearestNeighbor, Method::MoP,
                        Method::MoPIndependentSearch, Method::MoPJointSearch,
                        Method::MoPRbjsSameCluster}) {
    MockClient llm(w.world);
    ExperimentConfig cfg = two_region_config();
    cfg.method = method;
    const SingleRun run = run_single(llm, w.task, cfg, 0);
    CAPTURE(to_string(method));
    CHECK(run.generation_calls == cfg.total_budget);
    CHECK(run.test_score >= 0.0);
    CHECK(run.test_score <= 1.0);
  }
}

TEST_CASE("MoP outscores every baseline on the two-region world") {
  const auto w = worlds::make_two_region();
  auto score_of = [&](Method method) {
    MockClient llm(w.world);
    ExperimentConfig cfg = two_region_config();
    cfg.method = method;
    return run_single(llm, w.task, cfg, 0).test_score;
  };
  const double mop_score = score_of(Method::MoP);
  CHECK(mop_score == 1.0);
  CHECK(mop_score > score_of(Method::APE));
  CHECK(mop_score > score_of(Method::MoPIndependentSearch));
}

TEST_CASE("make_ood_split separates the blobs and keeps splits disjoint") {
  const auto w = worlds::make_two_region();
  MockClient llm(w.world);
  const TaskDataset ood = make_ood_split(llm, w.task, 3);

  const std::size_t total = w.task.train.size() + w.task.validation.size() + w.task.test.size();
  CHECK(ood.train.size() + ood.validation.size() + ood.test.size() == total);

  // the train side (train + carved validation) is one region, test the other
  std::set<char> train_regions, test_regions;
  auto region_of = [](const Demo& d) { return d.id.find('m') == 0 ? 'm' : 'p'; };
  for (const auto& d : ood.train) train_regions.insert(region_of(d));
  for (const auto& d : ood.validation) train_regions.insert(region_of(d));
  for (const auto& d : ood.test) test_regions.insert(region_of(d));
  CHECK(train_regions.size() == 1);
  CHECK(test_regions.size() == 1);
  CHECK(train_regions != test_regions);

  // validate_task already ran inside; double-check disjointness here
  std::set<std::string> ids;
  for (const auto& d : ood.train) ids.insert(d.id);
  for (const auto& d : ood.validation) ids.insert(d.id);
  for (const auto& d : ood.test) ids.insert(d.id);
  CHECK(ids.size() == total);

  // seeded carve reproduces
  MockClient llm2(w.world);
  const TaskDataset again = make_ood_split(llm2, w.task, 3);
  CHECK(again == ood);
}

TEST_CASE("make_ood_split requires at least four demos") {
  TaskDataset tiny;
  tiny.name = "tiny";
  tiny.train = {{"a", "x", {"y"}}, {"b", "z", {"w"}}};
  ScriptedWorld world;
  world.embedding_table = {{"x", {0.0}}, {"z", {1.0}}};
  MockClient llm(world);
  CHECK_THROWS_AS(make_ood_split(llm, tiny, 0), DegenerateTask);
}

namespace {

RunResult result_of(const std::string& method, const std::string& task, double mean) {
  RunResult r;
  r.method = method;
  r.task = task;
  r.per_seed_test_scores = {mean};
  r.mean = mean;
  return r;
}

}  // namespace

TEST_CASE("win_rate_matrix") {
  SUBCASE("dominant method gets 1.0 against the dominated") {
    std::vector<RunResult> results;
    for (int t = 0; t < 3; ++t) {
      results.push_back(result_of("A", "t" + std::to_string(t), 0.9));
      results.push_back(result_of("B", "t" + std::to_string(t), 0.5));
    }
    const auto m = win_rate_matrix(results, {"A", "B"}, {"t0", "t1", "t2"});
    CHECK(m.values[0][1] == 1.0);
    CHECK(m.values[1][0] == 0.0);
    CHECK(m.values[0][0] == 0.5);  // diagonal is all ties
  }
  SUBCASE("identical results give 0.5 everywhere") {
    std::vector<RunResult> results = {result_of("A", "t0", 0.7), result_of("B", "t0", 0.7)};
    const auto m = win_rate_matrix(results, {"A", "B"}, {"t0"});
    for (const auto& row : m.values)
      for (double v : row) CHECK(v == 0.5);
  }
  SUBCASE("3 methods x 5 tasks matches the hand computation") {
    // A vs B: A wins t0,t1; tie t2 (diff 0.005); B wins t3,t4
    //   -> M[A][B] = (2 + 0.5) / 5 = 0.5
    // A vs C: A wins t0..t3, C wins t4 (0.20 vs 0.895) -> 4/5 = 0.8
    // B vs C: B wins t0..t3, tie t4 (0.90 vs 0.895) -> (4 + 0.5)/5 = 0.9
    const std::vector<double> a = {0.90, 0.80, 0.700, 0.30, 0.20};
    const std::vector<double> b = {0.50, 0.60, 0.705, 0.80, 0.90};
    const std::vector<double> c = {0.10, 0.10, 0.100, 0.10, 0.895};
    std::vector<RunResult> results;
    std::vector<std::string> tasks;
    for (int t = 0; t < 5; ++t) {
      const std::string name = "t" + std::to_string(t);
      tasks.push_back(name);
      results.push_back(result_of("A", name, a[t]));
      results.push_back(result_of("B", name, b[t]));
      results.push_back(result_of("C", name, c[t]));
    }
    const auto m = win_rate_matrix(results, {"A", "B", "C"}, tasks);
    CHECK(m.values[0][1] == doctest::Approx(0.5));
    CHECK(m.values[0][2] == doctest::Approx(0.8));
    CHECK(m.values[1][2] == doctest::Approx(0.9));
    // antisymmetry
    for (std::size_t x = 0; x < 3; ++x)
      for (std::size_t y = 0; y < 3; ++y)
        CHECK(m.values[x][y] + m.values[y][x] == doctest::Approx(1.0));
  }
  SUBCASE("missing cells raise") {
    std::vector<RunResult> results = {result_of("A", "t0", 0.7)};
    CHECK_THROWS_AS(win_rate_matrix(results, {"A", "B"}, {"t0"}), MissingCell);
  }
}

TEST_CASE("multi-seed aggregation statistics") {
  const auto [mean, std_dev] = mop::detail::mean_and_population_std({1.0, 0.5});
  CHECK(mean == doctest::Approx(0.75));
  CHECK(std_dev == doctest::Approx(0.25));
}

TEST_CASE("run_experiment aggregates seeds deterministically under the mock") {
  const auto w = worlds::make_two_region();
  ExperimentConfig cfg = two_region_config();
  cfg.seeds = {0, 1, 2};
  const ClientFactory factory = [&w] { return std::make_shared<MockClient>(w.world); };
  const RunResult result = run_experiment(factory, w.task, cfg);
  REQUIRE(result.per_seed_test_scores.size() == 3);
  for (double s : result.per_seed_test_scores) CHECK(s == 1.0);
  CHECK(result.mean == 1.0);
  CHECK(result.std_dev == 0.0);
  CHECK(result.budget_used == 20);
}

TEST_CASE("report emission") {
  TempDir dir;
  std::vector<RunResult> results;
  for (const std::string& method : {"mop", "ape"})
    for (const std::string& task : {"alpha", "beta"})
      results.push_back(result_of(method, task, method == "mop" ? 0.9 : 0.4));

  const std::vector<std::string> methods = {"mop", "ape"};
  const std::vector<std::string> tasks = {"alpha", "beta"};
  report(results, methods, tasks, dir.path);

  CHECK(fs::exists(dir.path / "task_alpha.json"));
  CHECK(fs::exists(dir.path / "task_beta.json"));
  CHECK(fs::exists(dir.path / "aggregate.csv"));
  CHECK(fs::exists(dir.path / "win_rate.csv"));

  // aggregate row count = methods x tasks + header
  const std::string csv = slurp(dir.path / "aggregate.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2 * 2 + 1);

  // re-running overwrites with byte-identical files
  const std::string win_before = slurp(dir.path / "win_rate.csv");
  report(results, methods, tasks, dir.path);
  CHECK(slurp(dir.path / "aggregate.csv") == csv);
  CHECK(slurp(dir.path / "win_rate.csv") == win_before);
}

TEST_CASE("bench produces byte-identical reports across runs") {
  TempDir dir;
  const auto w = worlds::make_two_region();
  const auto task_path = dir.path / "two_region.json";
  save_task(w.task, task_path);

  BenchConfig bench_cfg;
  bench_cfg.task_paths = {task_path.string()};
  bench_cfg.methods = {Method::MoP, Method::APE};
  bench_cfg.base = two_region_config();
  bench_cfg.base.seeds = {0, 1};

  const ClientFactory factory = [&w] { return std::make_shared<MockClient>(w.world); };
  const auto out_a = dir.path / "run_a";
  const auto out_b = dir.path / "run_b";
  bench(factory, bench_cfg, out_a);
  bench(factory, bench_cfg, out_b);

  for (const char* name : {"task_two_region.json", "aggregate.csv", "win_rate.csv"}) {
    CAPTURE(name);
    CHECK(slurp(out_a / name) == slurp(out_b / name));
  }
}

TEST_CASE("cosine mode clusters by direction instead of magnitude") {
  // raw embeddings: two directions with wildly mixed magnitudes; Euclidean
  // distance on the raw vectors groups by magnitude, unit-normalized
  // distance groups by direction
  auto w = worlds::make_two_region();
  std::size_t i = 0;
  for (auto& [text, vec] : w.world.embedding_table) {
    const double magnitude = 1.0 + 7.0 * static_cast<double>(i % 5);
    const bool math_side = vec[0] > vec[1];
    vec = math_side ? std::vector<double>{magnitude, 0.02 * magnitude}
                    : std::vector<double>{0.02 * magnitude, magnitude};
    ++i;
  }
  ExperimentConfig cfg = two_region_config();
  cfg.normalize_embeddings = true;
  cfg.c_min = cfg.c_max = 2;
  MockClient llm(w.world);
  const MixtureArtifact artifact = build_mop(llm, w.task, cfg, 0);
  CHECK(artifact.normalized_embeddings);
  std::set<std::string> instructions;
  for (const auto& e : artifact.experts) instructions.insert(e.instruction);
  CHECK(instructions ==
        std::set<std::string>{worlds::kMathInstruction, worlds::kPluralInstruction});
  const auto outcome =
      evaluate(llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults());
  CHECK(outcome.report.mean == 1.0);
}

TEST_CASE("unit_normalized produces unit vectors and keeps zero vectors") {
  const EmbeddingVector v = unit_normalized(EmbeddingVector{{3.0, 4.0}, "m"});
  CHECK(v.values[0] == doctest::Approx(0.6));
  CHECK(v.values[1] == doctest::Approx(0.8));
  const EmbeddingVector zero = unit_normalized(EmbeddingVector{{0.0, 0.0}, "m"});
  CHECK(zero.values == std::vector<double>{0.0, 0.0});
}

TEST_CASE("embed_demo_outputs clusters on input+output text") {
  auto w = worlds::make_two_region();
  // replace train-input entries with concatenated input\noutput entries, so
  // the build only succeeds if the flag is honored
  for (const auto& d : w.task.train) {
    const auto vec = w.world.embedding_table.at(d.input);
    w.world.embedding_table.erase(d.input);
    w.world.embedding_table[d.input + "\n" + d.outputs.front()] = vec;
  }
  ExperimentConfig cfg = two_region_config();
  MockClient plain_llm(w.world);
  CHECK_THROWS_AS(build_mop(plain_llm, w.task, cfg, 0), MissingScriptEntry);

  cfg.embed_demo_outputs = true;
  MockClient llm(w.world);
  const MixtureArtifact artifact = build_mop(llm, w.task, cfg, 0);
  CHECK(artifact.expert_count() == 2);
  CHECK(evaluate(llm, artifact, w.task.test, w.task.metric, TemplateSet::defaults()).report.mean ==
        1.0);
}

TEST_CASE("experiment config round-trips through JSON") {
  ExperimentConfig cfg;
  cfg.method = Method::MoPJointSearch;
  cfg.total_budget = 12;
  cfg.alpha = 0.05;
  cfg.c_min = 2;
  cfg.c_max = 5;
  cfg.demo_cap_fraction = 0.2;
  cfg.seeds = {4, 5};
  cfg.routing = RoutingMode::Random;
  cfg.normalize_embeddings = true;
  const ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.method == Method::MoPJointSearch);
  CHECK(back.total_budget == 12);
  CHECK(back.alpha == 0.05);
  CHECK(back.c_min == 2);
  CHECK(back.c_max == 5);
  CHECK(back.demo_cap_fraction == 0.2);
  CHECK(back.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(back.routing == RoutingMode::Random);
  CHECK(back.normalize_embeddings);

  // rational cap fractions parse from strings
  json j = cfg.to_json();
  j["demo_cap_fraction"] = "1/5";
  CHECK(ExperimentConfig::from_json(j).demo_cap_fraction == doctest::Approx(0.2));
}
