#include "classdrift/pipeline.hpp"

#include <algorithm>
#include <thread>

#include "classdrift/random.hpp"

namespace classdrift::pipeline {

std::vector<double> renormalize_row(std::span<const double> row, const ReachableSet& reachable,
                                    Fallback fallback) {
  const std::size_t k = row.size();
  if (reachable.source() >= k || (reachable.mask() & ~full_mask(k)) != 0) {
    throw Error(ErrorCode::DimensionMismatch, "reachable set does not fit the row");
  }
  std::vector<double> out(k, 0.0);
  double mass = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    if (reachable.contains(j)) mass += row[j];
  }
  if (mass > 0.0) {
    for (std::size_t j = 0; j < k; ++j) {
      if (reachable.contains(j)) out[j] = row[j] / mass;
    }
  } else if (fallback == Fallback::StayPut) {
    out[reachable.source()] = 1.0;
  } else {
    const double share = 1.0 / static_cast<double>(reachable.count());
    for (std::size_t j : reachable.members()) out[j] = share;
  }
  return out;
}

std::size_t sample_index(std::span<const double> probs, double u) {
  double acc = 0.0;
  std::size_t last = probs.size();
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    acc += probs[j];
    last = j;
    if (u < acc) return j;
  }
  if (last == probs.size()) throw Error(ErrorCode::AllZero, "nothing to sample from");
  return last;
}

std::size_t backend_classes(const Backend& backend) {
  return std::visit(
      [](const auto& b) -> std::size_t {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, OracleBackend>) {
          if (!b.oracle) throw Error(ErrorCode::Malformed, "oracle backend without an oracle");
          return b.oracle->classes();
        } else {
          if (!b.classifier) throw Error(ErrorCode::Malformed, "classifier backend is empty");
          return b.classifier->classes();
        }
      },
      backend);
}

AttackOutcome attack_one(const Sample& sample, std::size_t index, const PipelineRun& run,
                         const Backend& backend) {
  const std::size_t k = run.matrix.size();
  if (backend_classes(backend) != k) {
    throw Error(ErrorCode::DimensionMismatch, "transition matrix and backend disagree on k");
  }
  if (sample.true_class >= k) {
    throw Error(ErrorCode::DimensionMismatch, "sample class out of range");
  }
  AttackOutcome out;
  out.id = sample.id;
  out.true_class = sample.true_class;

  std::optional<attacks::Probe> probe;
  if (const auto* oracle = std::get_if<OracleBackend>(&backend)) {
    RandomStream reach(run.seed, "reach", index);
    out.reachable = oracle->oracle->sample(sample.true_class, reach.uniform());
  } else {
    const auto& cb = std::get<ClassifierBackend>(backend);
    if (cb.classifier->predict(sample.x) != sample.true_class) {
      throw Error(ErrorCode::Malformed,
                  "sample " + sample.id + " is not classified as its true class");
    }
    probe = attacks::probe_classifier(*cb.classifier, sample.x, sample.true_class, cb.attack,
                                      cb.budget, cb.options);
    out.reachable = probe->reachable;
  }

  const auto row = renormalize_row(run.matrix.row(sample.true_class), out.reachable,
                                   run.fallback);
  RandomStream pick(run.seed, "target", index);
  out.target = sample_index(row, pick.uniform());

  if (!probe) {
    out.predicted = out.target;
  } else if (out.target == sample.true_class) {
    out.predicted = sample.true_class;
    out.distortion = 0.0;
    out.x_adv = sample.x;
  } else {
    const auto& ex = probe->examples[out.target];
    if (!ex || ex->predicted != out.target) {
      throw Error(ErrorCode::BackendFailure,
                  "attack on sample " + sample.id + " lost its successful perturbation");
    }
    out.predicted = ex->predicted;
    out.distortion = ex->distortion;
    out.x_adv = ex->x_adv;
  }
  out.fooled = out.predicted != sample.true_class;
  return out;
}

BatchResult run_batch(const std::vector<Sample>& samples, const PipelineRun& run,
                      const Backend& backend, std::size_t jobs) {
  const std::size_t k = run.matrix.size();
  if (backend_classes(backend) != k) {
    throw Error(ErrorCode::DimensionMismatch, "transition matrix and backend disagree on k");
  }
  BatchResult result;
  result.outcomes.resize(samples.size());
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, samples.size()));

  std::vector<std::exception_ptr> errors(jobs);
  auto work = [&](std::size_t worker) {
    try {
      for (std::size_t i = worker; i < samples.size(); i += jobs) {
        result.outcomes[i] = attack_one(samples[i], i, run, backend);
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < jobs; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  result.empirical.assign(k, 0.0);
  if (samples.empty()) return result;
  std::size_t fooled = 0;
  std::size_t foolable = 0;
  for (const auto& o : result.outcomes) {
    result.empirical[o.predicted] += 1.0;
    fooled += o.fooled ? 1 : 0;
    foolable += o.reachable.can_fool() ? 1 : 0;
  }
  const double n = static_cast<double>(samples.size());
  for (double& v : result.empirical) v /= n;
  result.fooling_rate = static_cast<double>(fooled) / n;
  result.max_fooling_rate = static_cast<double>(foolable) / n;
  return result;
}

std::vector<Sample> oracle_samples(const ProbabilityVector& p, std::size_t n,
                                   std::uint64_t seed) {
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng(seed, "class", i);
    out[i].id = std::to_string(i);
    out[i].true_class = sample_index(p.values(), rng.uniform());
  }
  return out;
}

}  // namespace classdrift::pipeline
