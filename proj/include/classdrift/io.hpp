#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "classdrift/core_types.hpp"
#include "classdrift/evaluation.hpp"
#include "classdrift/oracle_attacks.hpp"
#include "classdrift/pipeline.hpp"
#include "classdrift/synthesis.hpp"

// JSON and JSONL formats shared by the CLI and tests.  Parse failures throw
// Error{Parse}; content that parses but is invalid keeps the validator's code.
namespace classdrift::io {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);
Json parse_json(const std::string& text, const std::string& what);

// [p1, ..., pk] or {"p": [...]}
ProbabilityVector distribution_from_json(const Json& j);
OrderedJson to_json(const ProbabilityVector& p);

// {"k": int, "rows": [[...]]} or a bare array of rows.
TransitionMatrix matrix_from_json(const Json& j);
OrderedJson to_json(const TransitionMatrix& t);

// One {"id", "true_class", "reachable": [...]} object per line; blank lines
// are skipped.  "per_target_distortion" is optional.
std::vector<ReachabilityRecord> records_from_jsonl(const std::string& text);
std::string to_jsonl(const std::vector<ReachabilityRecord>& records);

// {"W": [[...]], "b": [...]}
attacks::AffineClassifier classifier_from_json(const Json& j);

// Per class, a list of {"subset": [int], "prob": real}.
attacks::SyntheticOracle oracle_from_json(const Json& j, std::uint64_t seed = 0);

// Plan fields plus a "backend" object:
//   {"type": "oracle", "table": [...]}  |  {"type": "independent", "reach": r}
//   {"type": "full"}  |  {"type": "affine", "W", "b", "attack": name}
struct PlanFile {
  evaluation::ExperimentPlan plan;
  evaluation::ExperimentBackend backend;
  bool has_seed = false;
};
PlanFile plan_from_json(const Json& j);

OrderedJson solve_report(const synthesis::Result& result, const ProbabilityVector& p,
                         const ProbabilityVector& target, int method);

OrderedJson to_json(const pipeline::AttackOutcome& outcome);
OrderedJson batch_summary(const pipeline::BatchResult& batch);
OrderedJson to_json(const attacks::AdversarialExample& ex, double db);
OrderedJson experiment_summary(const evaluation::ExperimentResult& result,
                               const evaluation::ExperimentPlan& plan);

}  // namespace classdrift::io
