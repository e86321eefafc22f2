// mop: build, evaluate and benchmark Mixture-of-Prompts artifacts.
//
// Subcommands: optimize, evaluate, baseline, bench, ood-split, hit-ratio,
// cache. Provider selection is shared: --provider mock reads a scripted
// world file; --provider http talks to an OpenAI-compatible endpoint with
// the API key taken from an environment variable.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <mop/http_client.hpp>
#include <mop/mop.hpp>

namespace fs = std::filesystem;

namespace {

struct ProviderOptions {
  std::string provider = "mock";
  std::string world_path;
  std::string cache_dir;
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string completion_model = "gpt-3.5-turbo-instruct";
  std::string embedding_model = "text-embedding-ada-002";

  void attach(CLI::App* cmd) {
    cmd->add_option("--provider", provider, "LLM backend: mock or http")
        ->check(CLI::IsMember({"mock", "http"}));
    cmd->add_option("--world", world_path, "Scripted world JSON (mock provider)");
    cmd->add_option("--cache-dir", cache_dir, "Response cache directory");
    cmd->add_option("--base-url", base_url, "OpenAI-compatible base URL (http provider)");
    cmd->add_option("--api-key-env", api_key_env, "Environment variable holding the API key");
    cmd->add_option("--completion-model", completion_model, "Completion model id");
    cmd->add_option("--embedding-model", embedding_model, "Embedding model id");
  }

  mop::ClientFactory factory() const {
    auto cache = cache_dir.empty() ? nullptr : std::make_shared<mop::CallCache>(cache_dir);
    if (provider == "mock") {
      if (world_path.empty())
        throw mop::ValidationError("--provider mock requires --world <file>");
      const mop::ScriptedWorld world = mop::ScriptedWorld::load(world_path);
      return [world, cache] { return std::make_shared<mop::MockClient>(world, nullptr, cache); };
    }
    mop::HttpConfig http;
    http.base_url = base_url;
    http.api_key_env = api_key_env;
    http.completion_model = completion_model;
    http.embedding_model = embedding_model;
    return [http, cache] { return std::make_shared<mop::HttpClient>(http, nullptr, cache); };
  }
};

mop::ExperimentConfig load_config(const std::string& config_path) {
  if (config_path.empty()) return {};
  std::ifstream in(config_path);
  if (!in) throw mop::IoError("cannot open config: " + config_path);
  mop::json j;
  in >> j;
  return mop::ExperimentConfig::from_json(j);
}

void write_or_print(const mop::json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw mop::IoError("cannot write: " + out_path);
  out << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-Prompts builder and evaluator"};
  app.require_subcommand(1);

  ProviderOptions provider;
  std::string config_path, task_path, artifact_path, out_path, method = "mop";
  std::string templates_dir, split = "test", audit_path;
  std::uint64_t seed = 0;
  bool seed_given = false;

  // ---- optimize ----
  auto* optimize = app.add_subcommand("optimize", "Build a mixture artifact and save it");
  provider.attach(optimize);
  optimize->add_option("--task", task_path, "Task JSON file")->required();
  optimize->add_option("--config", config_path, "Experiment config JSON");
  optimize->add_option("--method", method, "mop | mop_independent_search | ...");
  optimize->add_option("--templates", templates_dir, "Template directory");
  optimize->add_option("--seed", seed, "Build seed")->each([&](const std::string&) {
    seed_given = true;
  });
  optimize->add_option("--out", out_path, "Artifact output path (default artifact.json)");

  // ---- evaluate ----
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a saved artifact on a task split");
  provider.attach(evaluate_cmd);
  evaluate_cmd->add_option("--artifact", artifact_path, "Artifact JSON")->required();
  evaluate_cmd->add_option("--task", task_path, "Task JSON file")->required();
  evaluate_cmd->add_option("--split", split, "Split to score: test or validation")
      ->check(CLI::IsMember({"test", "validation"}));
  evaluate_cmd->add_option("--templates", templates_dir, "Template directory");
  evaluate_cmd->add_option("--audit", audit_path, "Routing audit JSON-lines output");
  evaluate_cmd->add_option("--out", out_path, "Score report output (default stdout)");

  // ---- baseline ----
  auto* baseline_cmd = app.add_subcommand("baseline", "Run a named baseline once");
  provider.attach(baseline_cmd);
  baseline_cmd->add_option("--task", task_path, "Task JSON file")->required();
  baseline_cmd->add_option("--method", method, "ape | ape_random_demos | ape_k_centroids | ...")
      ->required();
  baseline_cmd->add_option("--config", config_path, "Experiment config JSON");
  baseline_cmd->add_option("--templates", templates_dir, "Template directory");
  baseline_cmd->add_option("--seed", seed, "Run seed");
  baseline_cmd->add_option("--out", out_path, "Result output (default stdout)");

  // ---- bench ----
  std::vector<std::string> bench_tasks;
  std::vector<std::string> bench_methods;
  int job_workers = 1;
  auto* bench_cmd = app.add_subcommand("bench", "methods x tasks x seeds sweep with reports");
  provider.attach(bench_cmd);
  bench_cmd->add_option("--config", config_path, "Shared experiment config JSON");
  bench_cmd->add_option("--task", bench_tasks, "Task JSON file (repeatable)")->required();
  bench_cmd->add_option("--method", bench_methods, "Method name (repeatable)")->required();
  bench_cmd->add_option("--templates", templates_dir, "Template directory");
  bench_cmd->add_option("--workers", job_workers, "Parallel (method, task) jobs");
  bench_cmd->add_option("--out", out_path, "Report directory")->required();

  // ---- ood-split ----
  auto* ood_cmd = app.add_subcommand("ood-split", "Build an adversarial 2-means split");
  provider.attach(ood_cmd);
  ood_cmd->add_option("--task", task_path, "Task JSON file")->required();
  ood_cmd->add_option("--seed", seed, "Split seed");
  ood_cmd->add_option("--out", out_path, "Output task file")->required();

  // ---- hit-ratio ----
  auto* hit_cmd = app.add_subcommand("hit-ratio", "Demo-only hit-ratio histogram");
  provider.attach(hit_cmd);
  hit_cmd->add_option("--artifact", artifact_path, "Artifact JSON")->required();
  hit_cmd->add_option("--task", task_path, "Task JSON file")->required();
  hit_cmd->add_option("--templates", templates_dir, "Template directory");
  hit_cmd->add_option("--out", out_path, "Histogram output (default stdout)");

  // ---- cache ----
  std::string cache_action = "stats";
  auto* cache_cmd = app.add_subcommand("cache", "Inspect or clear the response cache");
  cache_cmd->add_option("action", cache_action, "stats | clear")
      ->check(CLI::IsMember({"stats", "clear"}));
  cache_cmd->add_option("--cache-dir", provider.cache_dir, "Cache directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cache_cmd) {
      mop::CallCache cache(provider.cache_dir);
      if (cache_action == "clear") cache.clear();
      const mop::CacheStats s = cache.stats();
      std::cout << mop::json{{"hits", s.hits},
                             {"misses", s.misses},
                             {"bytes_on_disk", s.bytes_on_disk}}
                       .dump(2)
                << "\n";
      return 0;
    }

    mop::ExperimentConfig cfg = load_config(config_path);
    if (!templates_dir.empty()) cfg.templates_dir = templates_dir;
    const auto make_client = provider.factory();

    if (*optimize) {
      cfg.method = mop::method_from_string(method);
      cfg.task_path = task_path;
      const mop::TaskDataset task = mop::load_task(task_path);
      auto llm = make_client();
      const std::uint64_t build_seed = seed_given || cfg.seeds.empty() ? seed : cfg.seeds.front();
      const mop::MixtureArtifact artifact = mop::build_mop(*llm, task, cfg, build_seed);
      const std::string path = out_path.empty() ? "artifact.json" : out_path;
      artifact.save(path);
      std::cout << "wrote " << path << " (" << artifact.expert_count()
                << " experts, digest " << artifact.digest().substr(0, 12) << ")\n";
      return 0;
    }

    if (*evaluate_cmd) {
      const mop::TaskDataset task = mop::load_task(task_path);
      const mop::MixtureArtifact artifact = mop::MixtureArtifact::load(artifact_path);
      const auto& items = split == "test" ? task.test : task.validation;
      auto llm = make_client();
      const mop::EvalOutcome outcome =
          mop::evaluate(*llm, artifact, items, task.metric, cfg.templates());
      if (!audit_path.empty()) {
        std::ofstream audit(audit_path, std::ios::binary | std::ios::trunc);
        for (const auto& d : outcome.routing) audit << d.to_json().dump() << "\n";
      }
      write_or_print(outcome.report.to_json(), out_path);
      return 0;
    }

    if (*baseline_cmd) {
      cfg.method = mop::method_from_string(method);
      cfg.task_path = task_path;
      const mop::TaskDataset task = mop::load_task(task_path);
      const mop::RunResult result = mop::run_baseline(make_client, task, cfg, seed);
      write_or_print(result.to_json(), out_path);
      return 0;
    }

    if (*bench_cmd) {
      mop::BenchConfig bench_cfg;
      bench_cfg.task_paths = bench_tasks;
      for (const auto& m : bench_methods)
        bench_cfg.methods.push_back(mop::method_from_string(m));
      bench_cfg.base = cfg;
      bench_cfg.job_workers = job_workers;
      const auto results = mop::bench(make_client, bench_cfg, out_path);
      std::cout << "wrote " << results.size() << " results to " << out_path << "\n";
      return 0;
    }

    if (*ood_cmd) {
      const mop::TaskDataset task = mop::load_task(task_path);
      auto llm = make_client();
      const mop::TaskDataset ood = mop::make_ood_split(*llm, task, seed);
      mop::save_task(ood, out_path);
      std::cout << "wrote " << out_path << " (train " << ood.train.size() << ", validation "
                << ood.validation.size() << ", test " << ood.test.size() << ")\n";
      return 0;
    }

    if (*hit_cmd) {
      const mop::TaskDataset task = mop::load_task(task_path);
      const mop::MixtureArtifact artifact = mop::MixtureArtifact::load(artifact_path);
      auto llm = make_client();
      const auto histogram =
          mop::hit_ratio(*llm, artifact, task.test, task.metric, cfg.templates());
      mop::json j;
      j["experts"] = artifact.expert_count();
      j["histogram"] = histogram;
      write_or_print(j, out_path);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
