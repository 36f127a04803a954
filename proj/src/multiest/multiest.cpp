#include "fehd/multiest.hpp"

#include <algorithm>
#include <map>

#include "fehd/error.hpp"

namespace fehd::multi {

std::size_t MultiResult::n_failed() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const Entry& e) { return !e.fit; }));
}

namespace {

struct Job {
  std::size_t entry;
  std::optional<est::Prepared> prepared;
  est::FitOptions opt;
};

// Demeans the union of the target columns of every job in one call.
est::DemeanCache pooled_demean(const std::vector<Job*>& jobs, const demean::Options& opt,
                               std::vector<std::string>& names) {
  std::map<std::string, const std::vector<double>*> source;
  for (const auto* j : jobs)
    for (const auto& nm : est::linear_targets(*j->prepared))
      if (source.emplace(nm, &est::raw_column(*j->prepared, nm)).second) names.push_back(nm);
  const auto& first = *jobs.front()->prepared;
  est::DemeanCache cache;
  if (first.fe.empty()) {
    for (const auto& nm : names) cache.columns[nm] = *source.at(nm);
    return cache;
  }
  demean::FeStructure fs(first.fe, first.weights);
  std::vector<std::span<const double>> spans;
  for (const auto& nm : names) spans.emplace_back(*source.at(nm));
  auto res = demean::demean(fs, std::span<const std::span<const double>>(spans), opt);
  for (std::size_t c = 0; c < names.size(); ++c) {
    cache.columns[names[c]] = std::move(res.residuals[c]);
    cache.info[names[c]] = res.info[c];
  }
  cache.iterations = res.max_iterations();
  cache.sweeps = res.max_sweeps();
  cache.converged = res.all_converged();
  return cache;
}

}  // namespace

MultiResult run_multi(const formula::FormulaSpec& spec, const data::Dataset& ds,
                      const MultiOptions& opt) {
  const auto models = formula::expand_models(spec);
  std::vector<std::optional<std::string>> samples;
  if (opt.split) {
    if (!ds.has(*opt.split)) throw invalid_argument("split variable '" + *opt.split + "' is not in the data");
    if (opt.fsplit) samples.emplace_back(std::nullopt);
    for (auto& lvl : data::split_levels(ds, *opt.split, opt.fit.subset)) samples.emplace_back(std::move(lvl));
  } else {
    samples.emplace_back(std::nullopt);
  }

  MultiResult out;
  std::vector<Job> jobs;
  est::PrepareCache prep_cache;
  for (const auto& m : models)
    for (const auto& s : samples) {
      Entry e;
      e.model = m;
      est::FitOptions fo = opt.fit;
      if (s) {
        fo.split = data::SplitLevel{*opt.split, *s};
        e.model.provenance.sample_label = *s;
      } else if (opt.split) {
        e.model.provenance.sample_label = kFullSampleLabel;
      }
      Job job{out.entries.size(), std::nullopt, fo};
      try {
        job.prepared = est::prepare(ds, e.model, fo, &prep_cache);
        job.prepared->sample_label = e.model.provenance.sample_label;
      } catch (const Error& ex) {
        e.error = ex.what();
        e.error_kind = ex.kind();
      } catch (const std::exception& ex) {
        e.error = ex.what();
      }
      out.entries.push_back(std::move(e));
      jobs.push_back(std::move(job));
    }

  // Pool OLS models by sample, FE structure and weights.
  std::map<std::string, std::vector<Job*>> groups;
  std::vector<Job*> singles;
  for (auto& j : jobs) {
    if (!j.prepared) continue;
    if (opt.pool && j.opt.family == est::Family::Ols)
      groups[est::pooling_key(*j.prepared, j.opt)].push_back(&j);
    else
      singles.push_back(&j);
  }

  auto run = [&](Job& j, const est::DemeanCache* cache) {
    auto& e = out.entries[j.entry];
    try {
      e.fit = est::fit_prepared(*j.prepared, j.opt, cache);
    } catch (const Error& ex) {
      e.error = ex.what();
      e.error_kind = ex.kind();
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
  };

  // Process groups in entry order of their first member for stable batches.
  std::vector<std::vector<Job*>*> ordered;
  for (auto& [key, g] : groups) ordered.push_back(&g);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->front()->entry < b->front()->entry; });
  for (auto* g : ordered) {
    PoolBatch batch;
    std::optional<est::DemeanCache> cache;
    try {
      cache = pooled_demean(*g, opt.fit.demean, batch.columns);
    } catch (const std::exception& ex) {
      for (auto* j : *g) out.entries[j->entry].error = ex.what();
      continue;
    }
    batch.iterations = cache->iterations;
    for (auto* j : *g) {
      batch.entries.push_back(j->entry);
      run(*j, &*cache);
      j->prepared.reset();
    }
    out.batches.push_back(std::move(batch));
  }
  for (auto* j : singles) {
    run(*j, nullptr);
    j->prepared.reset();
  }

  if (!out.entries.empty() && out.n_failed() == out.entries.size()) {
    const auto& first = out.entries[0];
    if (out.entries.size() == 1) throw Error(first.error_kind, first.error);
    throw Error(first.error_kind, "every estimation failed; first error: " + first.error);
  }
  return out;
}

}  // namespace fehd::multi
