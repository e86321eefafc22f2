#pragma once

/**
 * Core domain types: demos, task datasets, prompt templates, and prompt
 * assembly.
 *
 * A prompt is assembled as [instruction, (input, output, delimiter)*, query]
 * and rendered through text templates with bracket placeholders. Templates
 * ship as data files (see templates/) and have compiled-in defaults, so the
 * library works without any file I/O.
 */

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mop/errors.hpp"

namespace mop {

using json = nlohmann::json;

// ============================================================================
// Demos and task datasets
// ============================================================================

enum class Metric { ExactMatch, SetMatch, RougeL };

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::ExactMatch: return "exact_match";
    case Metric::SetMatch: return "set_match";
    case Metric::RougeL: return "rouge_l";
  }
  return "exact_match";
}

inline Metric metric_from_string(const std::string& s) {
  if (s == "exact_match") return Metric::ExactMatch;
  if (s == "set_match") return Metric::SetMatch;
  if (s == "rouge_l") return Metric::RougeL;
  throw ParseError("unknown metric: " + s);
}

/// One (input, acceptable outputs) pair; the unit of train/validation/test data.
struct Demo {
  std::string id;
  std::string input;
  std::vector<std::string> outputs;

  bool operator==(const Demo&) const = default;

  /// The answer text shown when this demo appears inside a prompt.
  const std::string& shown_output() const { return outputs.front(); }
};

struct TaskDataset {
  std::string name;
  Metric metric = Metric::ExactMatch;
  std::vector<Demo> train;
  std::vector<Demo> validation;
  std::vector<Demo> test;

  bool operator==(const TaskDataset&) const = default;
};

namespace detail {

inline void validate_split(const std::vector<Demo>& split, const std::string& split_name,
                           std::set<std::string>& seen_ids) {
  std::set<std::string> local;
  for (const auto& d : split) {
    if (d.outputs.empty())
      throw ValidationError("demo '" + d.id + "' in " + split_name + " has no outputs");
    if (!local.insert(d.id).second)
      throw ValidationError("duplicate demo id '" + d.id + "' in " + split_name);
    if (!seen_ids.insert(d.id).second)
      throw ValidationError("demo id '" + d.id + "' appears in more than one split");
  }
}

inline Demo demo_from_json(const json& j) {
  if (!j.is_object() || !j.contains("id") || !j.contains("input") || !j.contains("outputs"))
    throw ParseError("demo record must have id, input and outputs");
  Demo d;
  try {
    d.id = j.at("id").get<std::string>();
    d.input = j.at("input").get<std::string>();
    d.outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed demo record: ") + e.what());
  }
  return d;
}

inline json demo_to_json(const Demo& d) {
  return json{{"id", d.id}, {"input", d.input}, {"outputs", d.outputs}};
}

inline std::vector<Demo> split_from_json(const json& j, const char* key) {
  std::vector<Demo> out;
  if (!j.contains(key)) return out;
  if (!j.at(key).is_array()) throw ParseError(std::string(key) + " must be an array");
  for (const auto& item : j.at(key)) out.push_back(demo_from_json(item));
  return out;
}

}  // namespace detail

/// Checks all TaskDataset invariants; throws ValidationError on violation.
inline void validate_task(const TaskDataset& task) {
  std::set<std::string> seen;
  detail::validate_split(task.train, "train", seen);
  detail::validate_split(task.validation, "validation", seen);
  detail::validate_split(task.test, "test", seen);
}

inline TaskDataset task_from_json(const json& j) {
  if (!j.is_object() || !j.contains("name") || !j.contains("metric"))
    throw ParseError("task file must have name and metric");
  TaskDataset task;
  try {
    task.name = j.at("name").get<std::string>();
    task.metric = metric_from_string(j.at("metric").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed task header: ") + e.what());
  }
  task.train = detail::split_from_json(j, "train");
  task.validation = detail::split_from_json(j, "validation");
  task.test = detail::split_from_json(j, "test");
  validate_task(task);
  return task;
}

inline json task_to_json(const TaskDataset& task) {
  json splits[3];
  const std::vector<Demo>* lists[3] = {&task.train, &task.validation, &task.test};
  for (int i = 0; i < 3; ++i) {
    splits[i] = json::array();
    for (const auto& d : *lists[i]) splits[i].push_back(detail::demo_to_json(d));
  }
  return json{{"name", task.name},
              {"metric", to_string(task.metric)},
              {"train", splits[0]},
              {"validation", splits[1]},
              {"test", splits[2]}};
}

inline TaskDataset load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("task file is not valid JSON: ") + e.what());
  }
  return task_from_json(j);
}

inline void save_task(const TaskDataset& task, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write task file: " + path.string());
  out << task_to_json(task).dump(2) << "\n";
}

// ============================================================================
// Prompt templates
// ============================================================================

enum class TemplateKind { GenerateInstructions, Evaluation };

inline constexpr std::string_view kPlaceholderInstruction = "[INSTRUCTION]";
inline constexpr std::string_view kPlaceholderFullDemos = "[FULL_DEMOS]";
inline constexpr std::string_view kPlaceholderInput = "[INPUT]";
inline constexpr std::string_view kPlaceholderOutput = "[OUTPUT]";
inline constexpr std::string_view kPlaceholderComplete = "[COMPLETE]";

struct PromptTemplate {
  TemplateKind kind = TemplateKind::Evaluation;
  std::string body;
};

namespace detail {

/// Bracket tokens of the form [ABC_DEF] found in a template body.
inline std::vector<std::string> bracket_tokens(const std::string& body) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] != '[') continue;
    std::size_t j = i + 1;
    while (j < body.size() && (std::isupper(static_cast<unsigned char>(body[j])) || body[j] == '_'))
      ++j;
    if (j > i + 1 && j < body.size() && body[j] == ']') {
      tokens.push_back(body.substr(i, j - i + 1));
      i = j;
    }
  }
  return tokens;
}

/// Single-pass substitution: placeholders in the template body are expanded,
/// substituted values are never rescanned (demo text may legally contain
/// bracket tokens). Unknown placeholders throw.
inline std::string render_template(const std::string& body,
                                   const std::map<std::string_view, std::string>& values) {
  std::string out;
  out.reserve(body.size());
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '[') {
      std::size_t j = i + 1;
      while (j < body.size() &&
             (std::isupper(static_cast<unsigned char>(body[j])) || body[j] == '_'))
        ++j;
      if (j > i + 1 && j < body.size() && body[j] == ']') {
        const std::string_view token(body.data() + i, j - i + 1);
        auto it = values.find(token);
        if (it == values.end())
          throw UnknownPlaceholder("unrecognized placeholder " + std::string(token));
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(body[i++]);
  }
  return out;
}

}  // namespace detail

/// Throws UnknownPlaceholder if `body` contains a bracket token outside `allowed`.
inline void check_placeholders(const std::string& body,
                               const std::vector<std::string_view>& allowed) {
  for (const auto& token : detail::bracket_tokens(body)) {
    if (std::find(allowed.begin(), allowed.end(), token) == allowed.end())
      throw UnknownPlaceholder("unrecognized placeholder " + token);
  }
}

/// The three template scenarios: generating instructions, evaluation, and demo
/// listing, plus the delimiter emitted after every (input, output) pair.
struct TemplateSet {
  PromptTemplate generate_instructions;
  PromptTemplate evaluation;
  std::string demo_listing;
  std::string delimiter = "\n";

  static TemplateSet defaults() {
    TemplateSet t;
    t.generate_instructions = {
        TemplateKind::GenerateInstructions,
        "I gave a friend an instruction and several inputs. The friend read the "
        "instruction and wrote an output for every one of the inputs. Here are the "
        "input-output pairs:\n\n[FULL_DEMOS]\nThe instruction was[COMPLETE]"};
    t.evaluation = {TemplateKind::Evaluation,
                    "Instruction: [INSTRUCTION]\n\n[FULL_DEMOS]Input: [INPUT]\nOutput:[COMPLETE]"};
    t.demo_listing = "Input: [INPUT]\nOutput: [OUTPUT]";
    t.validate();
    return t;
  }

  /// Loads generate_instructions.txt, evaluation.txt and demo_listing.txt from
  /// a directory; missing files keep their defaults.
  static TemplateSet load_dir(const std::filesystem::path& dir) {
    TemplateSet t = defaults();
    auto read = [&](const char* name, std::string& dst) {
      const auto p = dir / name;
      if (!std::filesystem::exists(p)) return;
      std::ifstream in(p, std::ios::binary);
      if (!in) throw IoError("cannot open template: " + p.string());
      std::ostringstream ss;
      ss << in.rdbuf();
      dst = ss.str();
      // trailing newline added by editors is not part of the template
      if (!dst.empty() && dst.back() == '\n') dst.pop_back();
    };
    read("generate_instructions.txt", t.generate_instructions.body);
    read("evaluation.txt", t.evaluation.body);
    read("demo_listing.txt", t.demo_listing);
    t.validate();
    return t;
  }

  void validate() const {
    check_placeholders(generate_instructions.body,
                       {kPlaceholderFullDemos, kPlaceholderComplete});
    check_placeholders(evaluation.body, {kPlaceholderInstruction, kPlaceholderFullDemos,
                                         kPlaceholderInput, kPlaceholderComplete});
    check_placeholders(demo_listing, {kPlaceholderInput, kPlaceholderOutput});
    if (generate_instructions.body.find(kPlaceholderFullDemos) == std::string::npos)
      throw ValidationError("generate-instructions template must contain [FULL_DEMOS]");
    if (evaluation.body.find(kPlaceholderInput) == std::string::npos)
      throw ValidationError("evaluation template must contain [INPUT]");
    if (demo_listing.find(kPlaceholderInput) == std::string::npos ||
        demo_listing.find(kPlaceholderOutput) == std::string::npos)
      throw ValidationError("demo-listing template must contain [INPUT] and [OUTPUT]");
  }
};

// ============================================================================
// Prompt assembly
// ============================================================================

namespace detail {

/// Renders the demos block: each pair through the listing template, each
/// followed by the delimiter. Empty demo list renders to an empty block.
inline std::string render_demo_block(const std::vector<Demo>& demos,
                                     const std::string& listing, const std::string& delimiter) {
  std::string block;
  for (const auto& d : demos) {
    block += render_template(listing, {{kPlaceholderInput, d.input},
                                       {kPlaceholderOutput, d.shown_output()}});
    block += delimiter;
  }
  return block;
}

}  // namespace detail

/// A prompt in [instruction, demos..., query] order, not yet rendered.
struct AssembledPrompt {
  std::string instruction;
  std::vector<Demo> demos;
  std::string query;
  std::string delimiter = "\n";

  std::string render(const TemplateSet& templates) const {
    return detail::render_template(
        templates.evaluation.body,
        {{kPlaceholderInstruction, instruction},
         {kPlaceholderFullDemos,
          detail::render_demo_block(demos, templates.demo_listing, delimiter)},
         {kPlaceholderInput, query},
         {kPlaceholderComplete, ""}});
  }
};

/// Renders an evaluation prompt. Deterministic: identical inputs produce
/// byte-identical output.
inline std::string assemble_prompt(const TemplateSet& templates, const std::string& instruction,
                                   const std::vector<Demo>& demos, const std::string& query) {
  if (templates.evaluation.kind != TemplateKind::Evaluation)
    throw ValidationError("assemble_prompt requires an evaluation template");
  templates.validate();
  AssembledPrompt p{instruction, demos, query, templates.delimiter};
  return p.render(templates);
}

/// Renders the instruction-generation prompt from a demo subset.
inline std::string render_generation_prompt(const TemplateSet& templates,
                                            const std::vector<Demo>& demos) {
  templates.validate();
  return detail::render_template(
      templates.generate_instructions.body,
      {{kPlaceholderFullDemos,
        detail::render_demo_block(demos, templates.demo_listing, templates.delimiter)},
       {kPlaceholderComplete, ""}});
}

}  // namespace mop
