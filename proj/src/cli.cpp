#include "classdrift/cli.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "classdrift/evaluation.hpp"
#include "classdrift/io.hpp"
#include "classdrift/pipeline.hpp"
#include "classdrift/random.hpp"
#include "classdrift/synthesis.hpp"

namespace classdrift::cli {

namespace {

namespace fs = std::filesystem;
using io::Json;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::string format = "json";
  std::size_t jobs = 1;

  std::uint64_t resolved_seed() const {
    if (seed) return *seed;
    if (const char* env = std::getenv("CLASSDRIFT_SEED"); env && *env) {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used);
        if (used == std::strlen(env)) return v;
      } catch (const std::exception&) {
      }
      throw Error(ErrorCode::Parse, "CLASSDRIFT_SEED is not an unsigned integer");
    }
    return 0;
  }
};

Json load_json(const std::string& path) { return io::parse_json(io::read_file(path), path); }

// Writes `text` to output_dir/name, or to `out` when no directory was given.
void emit(const Globals& g, const std::string& name, const std::string& text,
          std::ostream& out) {
  if (g.output_dir.empty()) {
    out << text;
  } else {
    io::write_file(fs::path(g.output_dir) / name, text);
  }
}

std::string matrix_csv(const TransitionMatrix& t) {
  std::ostringstream s;
  s.precision(17);
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = 0; j < t.size(); ++j) s << (j ? "," : "") << t(i, j);
    s << '\n';
  }
  return s.str();
}

std::vector<double> parse_vector(const std::string& text) {
  std::string body = text;
  if (!body.empty() && body.front() == '[') {
    const auto j = io::parse_json(body, "--input");
    return j.get<std::vector<double>>();
  }
  std::vector<double> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw Error(ErrorCode::Parse, "--input: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw Error(ErrorCode::Parse, "--input is empty");
  return out;
}

pipeline::Fallback parse_fallback(const std::string& s) {
  if (s == "stay") return pipeline::Fallback::StayPut;
  if (s == "uniform") return pipeline::Fallback::UniformReachable;
  throw Error(ErrorCode::Parse, "--fallback must be 'stay' or 'uniform'");
}

struct SynthesizeArgs {
  int method = 1;
  std::string variant = "default";
  std::string initial, target, stats, route = "auto";
  double xi = 0.01;
};

int cmd_synthesize(const Globals& g, const SynthesizeArgs& a, std::ostream& out) {
  const auto target = io::distribution_from_json(load_json(a.target));
  const auto p = a.initial.empty() ? ProbabilityVector::uniform(target.size())
                                   : io::distribution_from_json(load_json(a.initial));
  const auto label =
      std::to_string(a.method) + (a.variant == "default" ? "" : ":" + a.variant);
  const auto mv = evaluation::MethodVariant::parse(label);
  auto cfg = mv.config(a.xi);
  if (a.route == "direct") {
    cfg.method4_route = synthesis::Method4Route::Direct;
  } else if (a.route == "projected") {
    cfg.method4_route = synthesis::Method4Route::Projected;
  } else if (a.route != "auto") {
    throw Error(ErrorCode::Parse, "--route must be auto, direct or projected");
  }

  synthesis::Result res;
  if (a.method == 1) {
    res = synthesis::method1(p, target, cfg);
  } else {
    if (a.stats.empty()) {
      throw Error(ErrorCode::Malformed, "method " + std::to_string(a.method) + " needs --stats");
    }
    const auto records = io::records_from_jsonl(io::read_file(a.stats));
    const auto stats = stats_from_records(records, ClassSet::numbered(p.size()));
    if (a.method == 2) res = synthesis::method2(p, target, stats, cfg);
    if (a.method == 3) res = synthesis::method3(p, target, stats, cfg);
    if (a.method == 4) res = synthesis::method4(p, target, stats, cfg);
  }

  const auto report = io::solve_report(res, p, target, a.method);
  if (g.output_dir.empty()) {
    if (g.format == "csv") {
      if (res.ok()) out << matrix_csv(res.value());
    } else {
      io::OrderedJson o;
      o["matrix"] = res.ok() ? io::to_json(res.value()) : io::OrderedJson(nullptr);
      o["report"] = report;
      out << o.dump(2) << '\n';
    }
  } else {
    if (res.ok()) {
      emit(g, g.format == "csv" ? "matrix.csv" : "matrix.json",
           g.format == "csv" ? matrix_csv(res.value()) : io::to_json(res.value()).dump(2) + "\n",
           out);
    }
    emit(g, "report.json", report.dump(2) + "\n", out);
  }
  return res.ok() ? kExitOk : kExitInfeasible;
}

struct SimulateArgs {
  std::string matrix, oracle, affine, inputs, initial;
  std::string attack = "deepfool";
  std::string fallback = "stay";
  double epsilon = 0.0;
  long long n = -1;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a, std::ostream& out) {
  const auto t = io::matrix_from_json(load_json(a.matrix));
  const std::uint64_t seed = g.resolved_seed();
  if (a.oracle.empty() == a.affine.empty()) {
    throw Error(ErrorCode::Malformed, "give exactly one of --oracle and --affine");
  }

  std::optional<attacks::SyntheticOracle> oracle;
  std::optional<attacks::AffineClassifier> clf;
  pipeline::Backend backend;
  std::vector<pipeline::Sample> samples;
  if (!a.oracle.empty()) {
    oracle = io::oracle_from_json(load_json(a.oracle), seed);
    backend = pipeline::OracleBackend{&*oracle};
    if (a.n < 0) throw Error(ErrorCode::Malformed, "--n is required with --oracle");
    const auto p = a.initial.empty() ? ProbabilityVector::uniform(t.size())
                                     : io::distribution_from_json(load_json(a.initial));
    if (p.size() != t.size()) {
      throw Error(ErrorCode::DimensionMismatch, "--initial and --matrix disagree on k");
    }
    samples = pipeline::oracle_samples(p, static_cast<std::size_t>(a.n), seed);
  } else {
    clf = io::classifier_from_json(load_json(a.affine));
    const auto kind = attacks::parse_attack(a.attack);
    backend = pipeline::ClassifierBackend{&*clf, kind,
                                          attacks::AttackBudget::for_attack(kind, a.epsilon), {}};
    if (!a.inputs.empty()) {
      std::istringstream in(io::read_file(a.inputs));
      std::string line;
      while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = io::parse_json(line, a.inputs);
        pipeline::Sample s;
        s.x = j.at("x").get<std::vector<double>>();
        s.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>()
                                                       : j["id"].dump())
                                : std::to_string(samples.size());
        s.true_class = j.contains("true_class") ? j["true_class"].get<std::size_t>()
                                                : clf->predict(s.x);
        samples.push_back(std::move(s));
      }
      if (a.n >= 0 && static_cast<std::size_t>(a.n) < samples.size()) samples.resize(a.n);
    } else {
      if (a.n < 0) throw Error(ErrorCode::Malformed, "--n or --inputs is required");
      RandomStream rng(seed, "inputs");
      for (long long i = 0; i < a.n; ++i) {
        pipeline::Sample s;
        s.id = std::to_string(i);
        s.x.resize(clf->dims());
        for (double& v : s.x) v = rng.uniform();
        s.true_class = clf->predict(s.x);
        samples.push_back(std::move(s));
      }
    }
  }
  if (samples.empty()) throw Error(ErrorCode::Malformed, "no samples to simulate");

  const pipeline::PipelineRun run{t, seed, parse_fallback(a.fallback)};
  const auto batch = pipeline::run_batch(samples, run, backend, g.jobs);

  std::string jsonl;
  for (const auto& o : batch.outcomes) jsonl += io::to_json(o).dump() + '\n';
  auto summary = io::batch_summary(batch);
  summary["seed"] = seed;
  if (!g.output_dir.empty()) {
    emit(g, "outcomes.jsonl", jsonl, out);
    emit(g, "summary.json", summary.dump(2) + "\n", out);
  } else if (g.format == "csv") {
    out << "class,empirical\n";
    for (std::size_t j = 0; j < batch.empirical.size(); ++j) {
      out << j << ',' << io::Json(batch.empirical[j]).dump() << '\n';
    }
  } else {
    out << summary.dump(2) << '\n';
  }
  return kExitOk;
}

struct ExperimentArgs {
  std::string plan;
  bool timing = false;
  bool quiet = false;
};

int cmd_experiment(const Globals& g, const ExperimentArgs& a, std::ostream& out,
                   std::ostream& err) {
  auto pf = io::plan_from_json(load_json(a.plan));
  if (g.seed || !pf.has_seed) pf.plan.seed = g.resolved_seed();
  evaluation::ExperimentOptions opts;
  opts.jobs = g.jobs;
  opts.timing = a.timing;
  if (!a.quiet) opts.progress = [&err](const std::string& msg) { err << msg << '\n'; };
  const auto result = evaluation::run_experiment(pf.plan, pf.backend, opts);

  std::ostringstream csv;
  evaluation::write_csv(csv, result);
  const auto summary = io::experiment_summary(result, pf.plan).dump(2) + "\n";
  if (!g.output_dir.empty()) {
    emit(g, "results.csv", csv.str(), out);
    emit(g, "summary.json", summary, out);
  } else {
    out << csv.str();
  }
  return kExitOk;
}

struct DemoArgs {
  std::string classifier, input, attack = "deepfool";
  std::size_t target = 0;
  double epsilon = 0.0;
  double overshoot = 1.02;
  double alpha = 0.0;
};

int cmd_attack_demo(const DemoArgs& a, std::ostream& out) {
  const auto clf = io::classifier_from_json(load_json(a.classifier));
  const auto x = parse_vector(a.input);
  const auto kind = attacks::parse_attack(a.attack);
  attacks::AttackOptions opts;
  opts.overshoot = a.overshoot;
  opts.pgd_alpha = a.alpha;
  const auto ex =
      attacks::run_attack(kind, clf, x, a.target, attacks::AttackBudget::for_attack(kind, a.epsilon),
                          opts);
  double db = std::numeric_limits<double>::quiet_NaN();
  try {
    db = evaluation::db_distortion(x, ex.v);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AllZero) throw;
  }
  auto o = io::to_json(ex, db);
  o["attack"] = std::string(attacks::to_string(kind));
  o["norm"] = std::string(attacks::to_string(attacks::default_norm(kind)));
  o["epsilon"] = a.epsilon;
  out << o.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transition-matrix synthesis for class-distribution attacks", "classdrift"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value,
                                  "Master seed (falls back to CLASSDRIFT_SEED, then 0)");
  app.add_option("--output-dir", g.output_dir, "Write result files here instead of stdout");
  app.add_option("--format", g.format, "Output format")
      ->check(CLI::IsMember({"json", "csv"}));
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);

  SynthesizeArgs sa;
  auto* syn = app.add_subcommand("synthesize", "Build a transition matrix with one method");
  syn->add_option("--method", sa.method, "1, 2, 3 or 4")->required()->check(CLI::Range(1, 4));
  syn->add_option("--variant", sa.variant,
                  "default, strict (method 2), no-laplace, no-zero or both joined by '+'");
  syn->add_option("--initial", sa.initial, "Initial distribution JSON (default uniform)");
  syn->add_option("--target", sa.target, "Target distribution JSON")->required();
  syn->add_option("--stats", sa.stats, "Reachability records JSONL (methods 2-4)");
  syn->add_option("--xi", sa.xi, "Cap on off-diagonal floors");
  syn->add_option("--route", sa.route, "Method 4 route: auto, direct or projected");

  SimulateArgs si;
  auto* sim = app.add_subcommand("simulate", "Run the attack pipeline with a fixed matrix");
  sim->add_option("--matrix", si.matrix, "Transition matrix JSON")->required();
  sim->add_option("--oracle", si.oracle, "Synthetic oracle JSON");
  sim->add_option("--affine", si.affine, "Affine classifier JSON");
  sim->add_option("--inputs", si.inputs, "Inputs JSONL for the classifier backend");
  sim->add_option("--initial", si.initial, "Class distribution of oracle samples");
  sim->add_option("--attack", si.attack, "deepfool, fgsm, pgd or cw");
  sim->add_option("--epsilon", si.epsilon, "Distortion budget")->check(CLI::NonNegativeNumber);
  sim->add_option("--n", si.n, "Number of samples");
  sim->add_option("--fallback", si.fallback, "Zero-mass rows: stay or uniform");

  ExperimentArgs ea;
  auto* exp = app.add_subcommand("experiment", "Run a cross-validated sweep");
  exp->add_option("--plan", ea.plan, "Plan JSON")->required();
  exp->add_flag("--timing", ea.timing, "Record wall times (not reproducible)");
  exp->add_flag("--quiet", ea.quiet, "No progress log");

  DemoArgs da;
  auto* demo = app.add_subcommand("attack-demo", "Run one targeted attack");
  demo->add_option("--classifier", da.classifier, "Affine classifier JSON")->required();
  demo->add_option("--input", da.input, "Input vector, e.g. 1,0 or [1,0]")->required();
  demo->add_option("--target", da.target, "Target class")->required();
  demo->add_option("--attack", da.attack, "deepfool, fgsm, pgd or cw");
  demo->add_option("--epsilon", da.epsilon, "Distortion budget")
      ->required()
      ->check(CLI::NonNegativeNumber);
  demo->add_option("--overshoot", da.overshoot, "DeepFool overshoot factor");
  demo->add_option("--alpha", da.alpha, "PGD step (default epsilon/4)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitError;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (*syn) return cmd_synthesize(g, sa, out);
    if (*sim) return cmd_simulate(g, si, out);
    if (*exp) return cmd_experiment(g, ea, out, err);
    if (*demo) return cmd_attack_demo(da, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace classdrift::cli
