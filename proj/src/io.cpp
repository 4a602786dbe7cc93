#include "classdrift/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace classdrift::io {

namespace {

// Converts nlohmann type errors into Error{Parse} naming the input.
template <typename Fn>
auto guarded(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, what + ": " + e.what());
  }
}

std::vector<double> numbers(const Json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorCode::Parse, what + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorCode::Parse, what + ": expected a number");
    out.push_back(v.get<double>());
  }
  return out;
}

DenseMatrix dense_from_rows(const Json& rows, const std::string& what) {
  if (!rows.is_array() || rows.empty()) {
    throw Error(ErrorCode::Parse, what + ": expected a non-empty array of rows");
  }
  DenseMatrix m;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto row = numbers(rows[i], what);
    if (i == 0) m = DenseMatrix(rows.size(), row.size());
    if (row.size() != m.cols) {
      throw Error(ErrorCode::DimensionMismatch, what + ": ragged rows");
    }
    std::copy(row.begin(), row.end(), m.row(i).begin());
  }
  return m;
}

ClassMask mask_of(const Json& j, std::size_t k, const std::string& what) {
  ClassMask m = 0;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw Error(ErrorCode::Parse, what + ": class must be an int");
    const auto c = v.get<long long>();
    if (c < 0 || static_cast<std::size_t>(c) >= k) {
      throw Error(ErrorCode::DimensionMismatch, what + ": class " + std::to_string(c) +
                                                    " out of range");
    }
    m |= class_bit(static_cast<std::size_t>(c));
  }
  return m;
}

OrderedJson members_json(ClassMask m) {
  OrderedJson a = OrderedJson::array();
  for (auto j : mask_members(m)) a.push_back(j);
  return a;
}

OrderedJson means_json(const evaluation::MetricMeans& m) {
  OrderedJson o;
  o["count"] = m.count;
  if (m.count == 0) return o;
  o["kl"] = m.kl;
  o["kl_floored"] = m.kl_floored;
  o["spearman"] = m.spearman ? OrderedJson(*m.spearman) : OrderedJson(nullptr);
  o["max_abs_diff"] = m.max_abs_diff;
  o["mean_abs_diff"] = m.mean_abs_diff;
  o["fooling_rate"] = m.fooling_rate;
  o["max_fooling_rate"] = m.max_fooling_rate;
  return o;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Parse, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Parse, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Parse, "failed writing " + path.string());
}

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, what + ": " + e.what());
  }
}

ProbabilityVector distribution_from_json(const Json& j) {
  const Json& arr = j.is_object() && j.contains("p") ? j.at("p") : j;
  const auto v = numbers(arr, "distribution");
  return ProbabilityVector::validate(v);
}

OrderedJson to_json(const ProbabilityVector& p) {
  return OrderedJson(std::vector<double>(p.values().begin(), p.values().end()));
}

TransitionMatrix matrix_from_json(const Json& j) {
  return guarded("matrix", [&] {
    const Json& rows = j.is_object() ? j.at("rows") : j;
    auto m = dense_from_rows(rows, "matrix");
    if (j.is_object() && j.contains("k") && j.at("k").get<std::size_t>() != m.rows) {
      throw Error(ErrorCode::DimensionMismatch, "matrix: k differs from the row count");
    }
    if (m.rows != m.cols) throw Error(ErrorCode::DimensionMismatch, "matrix must be square");
    return TransitionMatrix::validate(m);
  });
}

OrderedJson to_json(const TransitionMatrix& t) {
  OrderedJson o;
  o["k"] = t.size();
  o["rows"] = t.rows();
  return o;
}

std::vector<ReachabilityRecord> records_from_jsonl(const std::string& text) {
  std::vector<ReachabilityRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "records line " + std::to_string(line_no);
    const auto j = parse_json(line, where);
    out.push_back(guarded(where, [&] {
      ReachabilityRecord r;
      r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      r.true_class = j.at("true_class").get<std::size_t>();
      if (r.true_class >= kMaxClasses) {
        throw Error(ErrorCode::DimensionMismatch, where + ": class out of range");
      }
      const ClassMask m = mask_of(j.at("reachable"), kMaxClasses, where);
      r.reachable = ReachableSet(m | class_bit(r.true_class), r.true_class);
      if (j.contains("per_target_distortion")) {
        r.per_target_distortion = numbers(j.at("per_target_distortion"), where);
      }
      return r;
    }));
  }
  return out;
}

std::string to_jsonl(const std::vector<ReachabilityRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    OrderedJson o;
    o["id"] = r.id;
    o["true_class"] = r.true_class;
    o["reachable"] = members_json(r.reachable.mask());
    if (r.per_target_distortion) o["per_target_distortion"] = *r.per_target_distortion;
    out += o.dump() + '\n';
  }
  return out;
}

attacks::AffineClassifier classifier_from_json(const Json& j) {
  return guarded("classifier", [&] {
    auto w = dense_from_rows(j.at("W"), "classifier W");
    return attacks::AffineClassifier(std::move(w), numbers(j.at("b"), "classifier b"));
  });
}

attacks::SyntheticOracle oracle_from_json(const Json& j, std::uint64_t seed) {
  return guarded("oracle", [&] {
    const Json& classes = j.is_object() ? j.at("classes") : j;
    if (!classes.is_array()) throw Error(ErrorCode::Parse, "oracle: expected a list per class");
    const std::size_t k = classes.size();
    std::vector<SubsetDistribution> table(k);
    for (std::size_t i = 0; i < k; ++i) {
      for (const auto& entry : classes[i]) {
        const auto m = mask_of(entry.at("subset"), k, "oracle");
        table[i][m | class_bit(i)] += entry.at("prob").get<double>();
      }
    }
    return attacks::SyntheticOracle(std::move(table), seed);
  });
}

PlanFile plan_from_json(const Json& j) {
  return guarded("plan", [&] {
    PlanFile pf;
    auto& plan = pf.plan;
    const auto& b = j.at("backend");
    const auto type = b.at("type").get<std::string>();
    if (type == "oracle") {
      pf.backend.oracle = oracle_from_json(b.at("table"));
    } else if (type == "independent") {
      pf.backend.oracle = attacks::SyntheticOracle::independent(
          j.at("k").get<std::size_t>(), b.at("reach").get<double>());
    } else if (type == "full") {
      pf.backend.oracle = attacks::SyntheticOracle::full(j.at("k").get<std::size_t>());
    } else if (type == "affine") {
      pf.backend.classifier = classifier_from_json(b);
      pf.backend.attack = attacks::parse_attack(b.value("attack", "deepfool"));
    } else {
      throw Error(ErrorCode::Parse, "plan: unknown backend type '" + type + "'");
    }
    plan.k = j.value("k", pf.backend.classes());
    plan.epsilons = numbers(j.at("epsilons"), "plan epsilons");
    plan.n_targets = j.value("n_targets", plan.n_targets);
    plan.n_repeats = j.value("n_repeats", plan.n_repeats);
    plan.folds = j.value("folds", plan.folds);
    if (j.contains("samples_per_class")) {
      plan.samples_per_class = j.at("samples_per_class").get<std::vector<std::size_t>>();
    }
    for (const auto& m : j.at("methods")) {
      plan.methods.push_back(evaluation::MethodVariant::parse(
          m.is_string() ? m.get<std::string>() : std::to_string(m.get<int>())));
    }
    if (j.contains("seed")) {
      plan.seed = j.at("seed").get<std::uint64_t>();
      pf.has_seed = true;
    }
    plan.xi = j.value("xi", plan.xi);
    const auto fb = j.value("fallback", std::string("stay"));
    if (fb == "uniform") {
      plan.fallback = pipeline::Fallback::UniformReachable;
    } else if (fb != "stay") {
      throw Error(ErrorCode::Parse, "plan: fallback must be 'stay' or 'uniform'");
    }
    return pf;
  });
}

OrderedJson solve_report(const synthesis::Result& result, const ProbabilityVector& p,
                         const ProbabilityVector& target, int method) {
  OrderedJson o;
  o["method"] = method;
  o["status"] = synthesis::to_string(result.status);
  o["objective"] = result.ok() ? OrderedJson(result.objective) : OrderedJson(nullptr);
  o["lp_vars"] = result.lp_vars;
  o["lp_constraints"] = result.lp_constraints;
  o["wall_ms"] = result.wall_ms;
  if (result.ok()) {
    const auto v = synthesis::verify_matrix(result.value(), p, target);
    o["max_residual"] = v.max_residual;
    o["max_row_deviation"] = v.max_row_deviation;
    o["min_entry"] = v.min_entry;
    o["diagonal_mass"] = v.diagonal_mass;
  }
  if (method == 3 && result.ok()) o["cap"] = result.cap;
  return o;
}

OrderedJson to_json(const pipeline::AttackOutcome& outcome) {
  OrderedJson o;
  o["id"] = outcome.id;
  o["true_class"] = outcome.true_class;
  o["reachable"] = members_json(outcome.reachable.mask());
  o["target"] = outcome.target;
  o["predicted"] = outcome.predicted;
  o["fooled"] = outcome.fooled;
  o["distortion"] = outcome.distortion ? OrderedJson(*outcome.distortion) : OrderedJson(nullptr);
  return o;
}

OrderedJson batch_summary(const pipeline::BatchResult& batch) {
  OrderedJson o;
  o["n"] = batch.outcomes.size();
  o["empirical"] = batch.empirical;
  o["fooling_rate"] = batch.fooling_rate;
  o["max_fooling_rate"] = batch.max_fooling_rate;
  return o;
}

OrderedJson to_json(const attacks::AdversarialExample& ex, double db) {
  OrderedJson o;
  o["x"] = ex.x;
  o["x_adv"] = ex.x_adv;
  o["v"] = ex.v;
  o["target"] = ex.target;
  o["predicted"] = ex.predicted;
  o["success"] = ex.success;
  o["distortion"] = ex.distortion;
  o["distortion_db"] = std::isfinite(db) ? OrderedJson(db) : OrderedJson(nullptr);
  o["iterations"] = ex.iterations;
  return o;
}

OrderedJson experiment_summary(const evaluation::ExperimentResult& result,
                               const evaluation::ExperimentPlan& plan) {
  OrderedJson o;
  o["k"] = plan.k;
  o["seed"] = plan.seed;
  o["n_targets"] = plan.n_targets;
  o["n_repeats"] = plan.n_repeats;
  o["folds"] = plan.folds;
  OrderedJson cells = OrderedJson::array();
  for (const auto& c : result.cells) {
    OrderedJson cell;
    cell["method"] = c.method.method;
    cell["variant"] = c.method.variant();
    cell["n_per_class"] = c.n_per_class;
    cell["epsilon"] = c.epsilon;
    cell["trials"] = c.trials;
    cell["successful_trials"] = c.successful_trials;
    cell["success_pct"] = c.success_pct;
    cell["folds_total"] = c.folds_total;
    cell["folds_optimal"] = c.folds_optimal;
    cell["lp_vars"] = c.lp_vars;
    cell["per_trial_discard"] = means_json(c.per_trial);
    cell["per_fold_discard"] = means_json(c.per_fold);
    cells.push_back(std::move(cell));
  }
  o["cells"] = std::move(cells);
  return o;
}

}  // namespace classdrift::io
