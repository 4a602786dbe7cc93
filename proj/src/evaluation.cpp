#include "classdrift/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <thread>

#include "classdrift/random.hpp"

namespace classdrift::evaluation {

namespace {

void check_lengths(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(ErrorCode::DimensionMismatch, "distributions differ in length");
  }
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = rank;
    i = j + 1;
  }
  return ranks;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < jobs; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void accumulate(MetricMeans& m, const MetricReport& r, std::size_t& spearman_n) {
  ++m.count;
  m.kl += r.kl;
  m.kl_floored += r.kl_floored ? 1 : 0;
  if (r.spearman) {
    m.spearman = m.spearman.value_or(0.0) + *r.spearman;
    ++spearman_n;
  }
  m.max_abs_diff += r.max_abs_diff;
  m.mean_abs_diff += r.mean_abs_diff;
  m.fooling_rate += r.fooling_rate;
  m.max_fooling_rate += r.max_fooling_rate;
}

void finish_means(MetricMeans& m, std::size_t spearman_n) {
  if (m.count == 0) return;
  const double n = static_cast<double>(m.count);
  m.kl /= n;
  m.max_abs_diff /= n;
  m.mean_abs_diff /= n;
  m.fooling_rate /= n;
  m.max_fooling_rate /= n;
  if (m.spearman) *m.spearman /= static_cast<double>(spearman_n);
}

// One input of the sample pool: its class and, for the classifier backend,
// the point in input space.
struct PoolItem {
  std::size_t true_class = 0;
  std::vector<double> x;
};

struct Pool {
  std::vector<PoolItem> items;              // class-major
  std::vector<std::size_t> fold;            // per item
};

Pool build_pool(const ExperimentPlan& plan, const ExperimentBackend& backend,
                std::size_t n_per_class, std::uint64_t seed) {
  const std::size_t k = plan.k;
  const std::size_t per_class = n_per_class * plan.folds;
  Pool pool;
  if (backend.classifier) {
    const auto& clf = *backend.classifier;
    std::vector<std::vector<std::vector<double>>> buckets(k);
    RandomStream rng(seed, "inputs");
    const std::size_t limit = backend.draws_per_input * per_class * k;
    std::size_t filled = 0;
    for (std::size_t draw = 0; draw < limit && filled < k; ++draw) {
      std::vector<double> x(clf.dims());
      for (double& v : x) v = rng.uniform();
      auto& bucket = buckets[clf.predict(x)];
      if (bucket.size() >= per_class) continue;
      bucket.push_back(std::move(x));
      if (bucket.size() == per_class) ++filled;
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (buckets[c].size() < per_class) {
        throw Error(ErrorCode::PlanInfeasible,
                    "class " + std::to_string(c) + " yielded only " +
                        std::to_string(buckets[c].size()) + " of " +
                        std::to_string(per_class) + " inputs");
      }
      for (auto& x : buckets[c]) pool.items.push_back({c, std::move(x)});
    }
  } else {
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t s = 0; s < per_class; ++s) pool.items.push_back({c, {}});
    }
  }
  // Stratified folds: shuffle each class, then cut into equal blocks.
  pool.fold.resize(pool.items.size());
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> order(per_class);
    std::iota(order.begin(), order.end(), 0);
    RandomStream rng(seed, "folds", c);
    for (std::size_t i = per_class; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t pos = 0; pos < per_class; ++pos) {
      pool.fold[c * per_class + order[pos]] = pos / n_per_class;
    }
  }
  return pool;
}

std::vector<ReachableSet> reach_pool(const Pool& pool, const ExperimentBackend& backend,
                                     double epsilon, std::uint64_t seed, std::size_t jobs) {
  std::vector<ReachableSet> out(pool.items.size(), ReachableSet::only_source(0));
  if (backend.oracle) {
    for (std::size_t s = 0; s < pool.items.size(); ++s) {
      RandomStream rng(seed, "reach", s);
      out[s] = backend.oracle->sample(pool.items[s].true_class, rng.uniform());
    }
    return out;
  }
  const auto budget = attacks::AttackBudget::for_attack(backend.attack, epsilon);
  parallel_for(pool.items.size(), jobs, [&](std::size_t s) {
    const auto& item = pool.items[s];
    out[s] = attacks::probe_classifier(*backend.classifier, item.x, item.true_class,
                                       backend.attack, budget, backend.options)
                 .reachable;
  });
  return out;
}

}  // namespace

KlResult kl_divergence(std::span<const double> p, std::span<const double> q) {
  check_lengths(p, q);
  KlResult out;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    double qj = q[j];
    if (qj <= 0.0) {
      qj = kKlFloor;
      out.floored = true;
    }
    out.value += p[j] * std::log(p[j] / qj);
  }
  return out;
}

double spearman(std::span<const double> p, std::span<const double> q) {
  check_lengths(p, q);
  const auto rp = average_ranks(p);
  const auto rq = average_ranks(q);
  const double n = static_cast<double>(p.size());
  const double mp = std::accumulate(rp.begin(), rp.end(), 0.0) / n;
  const double mq = std::accumulate(rq.begin(), rq.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) {
    sxy += (rp[i] - mp) * (rq[i] - mq);
    sxx += (rp[i] - mp) * (rp[i] - mp);
    syy += (rq[i] - mq) * (rq[i] - mq);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error(ErrorCode::DegenerateRanks, "all entries tied; rank correlation undefined");
  }
  return sxy / std::sqrt(sxx * syy);
}

AbsDiffs abs_diffs(std::span<const double> p, std::span<const double> q) {
  check_lengths(p, q);
  AbsDiffs out;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double d = std::abs(p[j] - q[j]);
    out.max = std::max(out.max, d);
    out.mean += d;
  }
  if (!p.empty()) out.mean /= static_cast<double>(p.size());
  return out;
}

double db_distortion(std::span<const double> x, std::span<const double> v) {
  auto peak_db = [](std::span<const double> s, const char* what) {
    double peak = 0.0;
    for (double e : s) peak = std::max(peak, std::abs(e));
    if (peak == 0.0) throw Error(ErrorCode::AllZero, std::string(what) + " is all zero");
    return 20.0 * std::log10(peak);
  };
  return peak_db(v, "perturbation") - peak_db(x, "signal");
}

std::vector<double> expected_distribution(const TransitionMatrix& t,
                                          const ReachabilityStats& stats,
                                          const ProbabilityVector& p,
                                          pipeline::Fallback fallback) {
  const std::size_t k = t.size();
  if (k > kMaxClasses) throw Error(ErrorCode::SubsetOverflow, "too many classes");
  if (stats.k != k || p.size() != k || stats.subset_table.size() != k) {
    throw Error(ErrorCode::DimensionMismatch, "matrix, stats and distribution disagree on k");
  }
  std::vector<double> out(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    if (p[i] == 0.0) continue;
    for (const auto& [mask, prob] : stats.subset_table[i]) {
      if (prob <= 0.0) continue;
      const auto row = pipeline::renormalize_row(t.row(i), ReachableSet(mask, i), fallback);
      for (std::size_t j = 0; j < k; ++j) out[j] += p[i] * prob * row[j];
    }
  }
  return out;
}

std::vector<ProbabilityVector> sample_dirichlet_targets(std::size_t k, std::size_t n,
                                                        std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::Malformed, "at least two classes are required");
  std::vector<ProbabilityVector> out;
  out.reserve(n);
  std::vector<double> w(k);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng(seed, "dirichlet", i);
    for (double& x : w) x = rng.exponential();
    out.push_back(ProbabilityVector::renormalize(w));
  }
  return out;
}

MetricReport compare(const ProbabilityVector& target, std::span<const double> induced,
                     double fooling_rate, double max_fooling_rate) {
  MetricReport r;
  const auto kl = kl_divergence(target.values(), induced);
  r.kl = kl.value;
  r.kl_floored = kl.floored;
  try {
    r.spearman = spearman(target.values(), induced);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateRanks) throw;
  }
  const auto d = abs_diffs(target.values(), induced);
  r.max_abs_diff = d.max;
  r.mean_abs_diff = d.mean;
  r.fooling_rate = fooling_rate;
  r.max_fooling_rate = max_fooling_rate;
  return r;
}

MethodVariant MethodVariant::parse(std::string_view text) {
  auto fail = [&] {
    return Error(ErrorCode::Parse, "unknown method '" + std::string(text) + "'");
  };
  if (text.empty() || text[0] < '1' || text[0] > '4') throw fail();
  MethodVariant m;
  m.method = text[0] - '0';
  if (text.size() == 1) return m;
  if (text[1] != ':') throw fail();
  std::string_view rest = text.substr(2);
  while (!rest.empty()) {
    const auto plus = rest.find('+');
    const auto flag = rest.substr(0, plus);
    if (m.method == 2 && flag == "strict") {
      m.strict = true;
    } else if (m.method == 4 && flag == "no-laplace") {
      m.laplace = false;
    } else if (m.method == 4 && flag == "no-zero") {
      m.zero_singleton = false;
    } else {
      throw fail();
    }
    rest = plus == std::string_view::npos ? std::string_view{} : rest.substr(plus + 1);
  }
  return m;
}

std::string MethodVariant::variant() const {
  std::string v;
  auto add = [&](const char* flag) {
    if (!v.empty()) v += '+';
    v += flag;
  };
  if (strict) add("strict");
  if (!laplace) add("no-laplace");
  if (!zero_singleton) add("no-zero");
  return v.empty() ? "default" : v;
}

std::string MethodVariant::label() const {
  const auto v = variant();
  return std::to_string(method) + (v == "default" ? "" : ":" + v);
}

synthesis::Config MethodVariant::config(double xi) const {
  synthesis::Config cfg;
  cfg.xi = xi;
  cfg.method2_relax_eta = !strict;
  cfg.method4_laplace = laplace;
  cfg.method4_zero_singleton = zero_singleton;
  return cfg;
}

synthesis::Result MethodVariant::run(const ProbabilityVector& p,
                                     const ProbabilityVector& target,
                                     const ReachabilityStats& stats, double xi) const {
  const auto cfg = config(xi);
  switch (method) {
    case 1: return synthesis::method1(p, target, cfg);
    case 2: return synthesis::method2(p, target, stats, cfg);
    case 3: return synthesis::method3(p, target, stats, cfg);
    case 4: return synthesis::method4(p, target, stats, cfg);
  }
  throw Error(ErrorCode::Malformed, "method must be 1, 2, 3 or 4");
}

void ExperimentPlan::validate() const {
  if (k < 2 || k > kMaxClasses) {
    throw Error(ErrorCode::Malformed, "k must lie in [2, 16]");
  }
  if (epsilons.empty()) throw Error(ErrorCode::Malformed, "plan lists no epsilons");
  for (double e : epsilons) {
    if (!(e >= 0.0)) {
      throw Error(ErrorCode::Malformed, "epsilon must be non-negative, got " + number(e));
    }
  }
  if (n_targets == 0 || n_repeats == 0) {
    throw Error(ErrorCode::Malformed, "n_targets and n_repeats must be positive");
  }
  if (folds < 2) throw Error(ErrorCode::PlanInfeasible, "cross-validation needs two folds");
  if (samples_per_class.empty()) {
    throw Error(ErrorCode::Malformed, "plan lists no samples_per_class");
  }
  for (auto n : samples_per_class) {
    if (n == 0) throw Error(ErrorCode::PlanInfeasible, "samples_per_class must be positive");
  }
  if (methods.empty()) throw Error(ErrorCode::Malformed, "plan lists no methods");
  for (const auto& m : methods) {
    if (m.method < 1 || m.method > 4) throw Error(ErrorCode::Malformed, "bad method");
  }
  synthesis::Config cfg;
  cfg.xi = xi;
  cfg.validate(k);
}

std::size_t ExperimentBackend::classes() const {
  if (oracle.has_value() == classifier.has_value()) {
    throw Error(ErrorCode::Malformed, "experiment needs exactly one backend");
  }
  return oracle ? oracle->classes() : classifier->classes();
}

ExperimentResult run_experiment(const ExperimentPlan& plan, const ExperimentBackend& backend,
                                const ExperimentOptions& options) {
  plan.validate();
  if (backend.classes() != plan.k) {
    throw Error(ErrorCode::DimensionMismatch, "plan k differs from the backend's class count");
  }
  const std::size_t k = plan.k;
  const std::size_t n_methods = plan.methods.size();
  const std::size_t folds = plan.folds;
  const auto targets =
      sample_dirichlet_targets(k, plan.n_targets, derive_seed(plan.seed, "targets"));
  const auto uniform = ProbabilityVector::uniform(k);

  ExperimentResult result;
  result.timing = options.timing;

  for (std::size_t n_per_class : plan.samples_per_class) {
    // rows[e][m][t][r][f]
    const std::size_t per_eps = n_methods * plan.n_targets * plan.n_repeats * folds;
    std::vector<TrialRow> block(plan.epsilons.size() * per_eps);
    auto slot = [&](std::size_t e, std::size_t m, std::size_t t, std::size_t r,
                    std::size_t f) -> TrialRow& {
      return block[(((e * n_methods + m) * plan.n_targets + t) * plan.n_repeats + r) * folds +
                   f];
    };

    for (std::size_t r = 0; r < plan.n_repeats; ++r) {
      const auto pool_seed =
          derive_seed(derive_seed(plan.seed, "pool", n_per_class), "repeat", r);
      const auto pool = build_pool(plan, backend, n_per_class, pool_seed);

      for (std::size_t e = 0; e < plan.epsilons.size(); ++e) {
        const double eps = plan.epsilons[e];
        if (options.progress) {
          options.progress("N=" + std::to_string(n_per_class) + " repeat " +
                           std::to_string(r + 1) + "/" + std::to_string(plan.n_repeats) +
                           " epsilon=" + number(eps));
        }
        const auto reach = reach_pool(pool, backend, eps, pool_seed, options.jobs);

        // Stats of each training fold.
        std::vector<ReachabilityStats> train(folds);
        std::vector<double> max_fool(folds, 0.0);
        for (std::size_t f = 0; f < folds; ++f) {
          std::vector<std::map<ClassMask, std::size_t>> counts(k);
          std::size_t eval_n = 0, eval_foolable = 0;
          for (std::size_t s = 0; s < pool.items.size(); ++s) {
            if (pool.fold[s] == f) {
              ++counts[pool.items[s].true_class][reach[s].mask()];
            } else {
              ++eval_n;
              eval_foolable += reach[s].can_fool() ? 1 : 0;
            }
          }
          train[f] = stats_from_subset_counts(k, counts);
          max_fool[f] = static_cast<double>(eval_foolable) / static_cast<double>(eval_n);
        }

        parallel_for(plan.n_targets, options.jobs, [&](std::size_t t) {
          const auto& target = targets[t];
          for (std::size_t f = 0; f < folds; ++f) {
            const auto eval_seed = derive_seed(
                derive_seed(derive_seed(pool_seed, "eval", e), "target", t), "fold", f);
            for (std::size_t m = 0; m < n_methods; ++m) {
              auto& row = slot(e, m, t, r, f);
              row.method = plan.methods[m];
              row.n_per_class = n_per_class;
              row.epsilon = eps;
              row.target_id = t;
              row.repeat = r;
              row.fold = f;
              const auto res = plan.methods[m].run(uniform, target, train[f], plan.xi);
              row.lp_vars = res.lp_vars;
              row.wall_ms = options.timing ? res.wall_ms : 0.0;
              row.optimal = res.ok();
              if (!row.optimal) continue;

              const auto& matrix = res.value();
              std::vector<double> induced(k, 0.0);
              std::size_t eval_n = 0, fooled = 0;
              for (std::size_t s = 0; s < pool.items.size(); ++s) {
                if (pool.fold[s] == f) continue;
                const std::size_t cls = pool.items[s].true_class;
                const auto probs = pipeline::renormalize_row(matrix.row(cls), reach[s],
                                                             plan.fallback);
                RandomStream rng(eval_seed, "target", s);
                const std::size_t chosen = pipeline::sample_index(probs, rng.uniform());
                induced[chosen] += 1.0;
                fooled += chosen != cls ? 1 : 0;
                ++eval_n;
              }
              for (double& v : induced) v /= static_cast<double>(eval_n);
              row.metrics = compare(target, induced,
                                    static_cast<double>(fooled) / static_cast<double>(eval_n),
                                    max_fool[f]);
            }
          }
        });
      }
    }

    // Aggregate each (epsilon, method) cell.
    for (std::size_t e = 0; e < plan.epsilons.size(); ++e) {
      for (std::size_t m = 0; m < n_methods; ++m) {
        CellSummary cell;
        cell.method = plan.methods[m];
        cell.n_per_class = n_per_class;
        cell.epsilon = plan.epsilons[e];
        std::size_t sp_trial = 0, sp_fold = 0, lp_n = 0;
        for (std::size_t t = 0; t < plan.n_targets; ++t) {
          for (std::size_t r = 0; r < plan.n_repeats; ++r) {
            ++cell.trials;
            bool all = true;
            for (std::size_t f = 0; f < folds; ++f) {
              const auto& row = slot(e, m, t, r, f);
              result.rows.push_back(row);
              ++cell.folds_total;
              if (!row.optimal) {
                all = false;
                continue;
              }
              ++cell.folds_optimal;
              accumulate(cell.per_fold, *row.metrics, sp_fold);
              cell.lp_vars += static_cast<double>(row.lp_vars);
              ++lp_n;
            }
            if (!all) continue;
            ++cell.successful_trials;
            for (std::size_t f = 0; f < folds; ++f) {
              accumulate(cell.per_trial, *slot(e, m, t, r, f).metrics, sp_trial);
            }
          }
        }
        finish_means(cell.per_trial, sp_trial);
        finish_means(cell.per_fold, sp_fold);
        if (lp_n > 0) cell.lp_vars /= static_cast<double>(lp_n);
        cell.success_pct =
            100.0 * static_cast<double>(cell.successful_trials) / static_cast<double>(cell.trials);
        result.cells.push_back(std::move(cell));
      }
    }
  }
  return result;
}

void write_csv(std::ostream& out, const ExperimentResult& result) {
  out << kCsvHeader << '\n';
  std::size_t next = 0;
  for (const auto& cell : result.cells) {
    const std::size_t folds_in_cell = cell.folds_total;
    double wall = 0.0;
    for (std::size_t i = 0; i < folds_in_cell; ++i) {
      const auto& row = result.rows[next + i];
      wall += row.wall_ms;
      out << row.method.method << ',' << row.method.variant() << ',' << number(row.epsilon)
          << ',' << row.target_id << ',' << row.repeat << ',' << row.fold << ','
          << (row.optimal ? "optimal" : "infeasible") << ',';
      if (row.metrics) {
        const auto& mr = *row.metrics;
        out << number(mr.kl) << ',' << (mr.spearman ? number(*mr.spearman) : "") << ','
            << number(mr.max_abs_diff) << ',' << number(mr.mean_abs_diff) << ','
            << number(mr.fooling_rate) << ',' << number(mr.max_fooling_rate);
      } else {
        out << ",,,,,";
      }
      out << ',' << row.lp_vars << ',' << (result.timing ? number(row.wall_ms) : "") << ','
          << row.n_per_class << ",\n";
    }
    next += folds_in_cell;

    const auto& mm = cell.per_trial;
    out << cell.method.method << ',' << cell.method.variant() << ',' << number(cell.epsilon)
        << ",all,all,all,aggregate,";
    if (mm.count > 0) {
      out << number(mm.kl) << ',' << (mm.spearman ? number(*mm.spearman) : "") << ','
          << number(mm.max_abs_diff) << ',' << number(mm.mean_abs_diff) << ','
          << number(mm.fooling_rate) << ',' << number(mm.max_fooling_rate);
    } else {
      out << ",,,,,";
    }
    out << ',' << number(cell.lp_vars) << ','
        << (result.timing && folds_in_cell > 0
                ? number(wall / static_cast<double>(folds_in_cell))
                : "")
        << ',' << cell.n_per_class << ',' << number(cell.success_pct) << '\n';
  }
}

}  // namespace classdrift::evaluation
