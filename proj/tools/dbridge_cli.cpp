#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dbridge/dbridge.hpp"

namespace {

using namespace dbridge;
namespace fs = std::filesystem;

constexpr std::uint64_t kDefaultSeed = 20120817;
constexpr const char* kVersion = "1.0.0";
constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

struct Common {
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = default_thread_count();
  std::string out = "dbridge-out";
};

struct ModelOptions {
  std::string spec_file;
  std::string name;
  double theta = kUnset, sigma = kUnset, kappa = kUnset, mu = kUnset;
};

struct ProblemOptions {
  double a = 0.0, b = 0.0, delta = 1.0;
  std::size_t steps = 100;
  std::string scheme = "euler";
};

/// What a command reports back to main: a summary written as summary.json and
/// timings written to timing.json (kept apart so artifacts stay reproducible).
struct Outcome {
  Json summary = Json::object();
  Json timing = Json::object();
};

using Command = std::function<Outcome(const Common&)>;

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "root random seed");
  app->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  app->add_option("--out", c.out, "output directory");
}

void add_model(CLI::App* app, ModelOptions& m) {
  app->add_option("--model-spec", m.spec_file, "JSON model specification file");
  app->add_option("--model", m.name, "built-in model: ou, hyperbolic or cir");
  app->add_option("--theta", m.theta, "ou / hyperbolic drift parameter");
  app->add_option("--sigma", m.sigma, "diffusion parameter");
  app->add_option("--kappa", m.kappa, "cir mean-reversion rate");
  app->add_option("--mu", m.mu, "cir long-run mean");
}

void add_problem(CLI::App* app, ProblemOptions& p) {
  app->add_option("--a", p.a, "start value");
  app->add_option("--b", p.b, "end value");
  app->add_option("--delta", p.delta, "interval length");
  app->add_option("--steps", p.steps, "grid steps N");
  app->add_option("--scheme", p.scheme, "euler or milstein");
}

ModelSpec resolve_model(const ModelOptions& m) {
  if (!m.spec_file.empty()) {
    if (!m.name.empty()) throw UsageError("give either --model-spec or --model, not both");
    return parse_model_spec(read_json(m.spec_file));
  }
  if (m.name.empty()) throw UsageError("--model or --model-spec is required");
  ModelSpec s;
  s.name = m.name;
  const std::pair<const char*, double> params[] = {
      {"theta", m.theta}, {"sigma", m.sigma}, {"kappa", m.kappa}, {"mu", m.mu}};
  for (const auto& [k, v] : params)
    if (!std::isnan(v)) s.parameters[k] = v;
  return s;
}

BridgeProblem make_problem(const ProblemOptions& p) {
  return BridgeProblem{p.a, p.b, p.delta, p.steps, parse_scheme(p.scheme)};
}

Json problem_json(const BridgeProblem& p) {
  return {{"a", p.a}, {"b", p.b}, {"delta", p.horizon}, {"steps", p.steps}, {"scheme", to_string(p.scheme)}};
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Values of each path at the grid times nearest to `times`, one column per time.
void write_marginals(const fs::path& file, std::span<const GridPath> paths, std::span<const double> times) {
  if (times.empty()) return;
  auto out = open_output(file);
  out << "sample_id";
  for (double t : times) out << ",t=" << format_double(t);
  out << '\n';
  std::vector<std::size_t> idx;
  for (double t : times) idx.push_back(grid_index(paths.front(), t));
  for (std::size_t j = 0; j < paths.size(); ++j) {
    out << j;
    for (std::size_t i : idx) out << ',' << format_double(paths[j].values[i]);
    out << '\n';
  }
  finish(out, file);
}

std::string csv_quote(const std::string& text) {
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + '"';
}

template <class Fn>
auto with_model(const ModelSpec& spec, Fn&& fn) {
  return std::visit(std::forward<Fn>(fn), make_model(spec));
}

// ---------------------------------------------------------------------------

Command setup_simulate(CLI::App& app) {
  auto* sub = app.add_subcommand("simulate", "simulate unconditioned paths");
  auto common = std::make_shared<Common>();
  auto model = std::make_shared<ModelOptions>();
  auto x0 = std::make_shared<double>(0.0);
  auto p = std::make_shared<ProblemOptions>();
  auto samples = std::make_shared<std::size_t>(1);
  add_common(sub, *common);
  add_model(sub, *model);
  sub->add_option("--x0", *x0, "initial value")->required();
  sub->add_option("--delta", p->delta, "time horizon");
  sub->add_option("--steps", p->steps, "grid steps");
  sub->add_option("--scheme", p->scheme, "euler or milstein");
  sub->add_option("--samples", *samples, "number of paths");
  return [=](const Common&) {
    const ModelSpec spec = resolve_model(*model);
    const Scheme scheme = parse_scheme(p->scheme);
    const RandomStream root(common->seed);
    const auto start = std::chrono::steady_clock::now();
    std::vector<GridPath> paths(*samples);
    with_model(spec, [&](const auto& m) {
      parallel_for(*samples, common->threads, [&](std::size_t i) {
        RandomStream r = root.substream(i);
        paths[i] = simulate_path(m, *x0, p->delta, p->steps, scheme, r);
      });
    });
    Outcome o;
    o.timing["sampling_seconds"] = seconds_since(start);
    const auto files = write_paths(common->out, "path", paths);
    o.summary = {{"model", to_json(spec)}, {"samples", *samples}, {"files", files}};
    return o;
  };
}

Command setup_bridge_approx(CLI::App& app) {
  auto* sub = app.add_subcommand("bridge-approx", "approximate bridges by coupling forward and backward paths");
  auto common = std::make_shared<Common>();
  auto model = std::make_shared<ModelOptions>();
  auto p = std::make_shared<ProblemOptions>();
  auto samples = std::make_shared<std::size_t>(100);
  auto max_attempts = std::make_shared<std::size_t>(kDefaultMaxAttempts);
  auto at = std::make_shared<std::vector<double>>();
  add_common(sub, *common);
  add_model(sub, *model);
  add_problem(sub, *p);
  sub->add_option("--samples", *samples, "number of bridges");
  sub->add_option("--max-attempts", *max_attempts, "proposal budget per bridge");
  sub->add_option("--at", *at, "also write the bridge values at these times to marginals.csv");
  return [=](const Common&) {
    const ModelSpec spec = resolve_model(*model);
    const BridgeProblem problem = make_problem(*p);
    const auto start = std::chrono::steady_clock::now();
    const auto draws = with_model(spec, [&](const auto& m) {
      return sample_bridges_approx(m, problem, *samples, RandomStream(common->seed), *max_attempts, common->threads);
    });
    Outcome o;
    o.timing["sampling_seconds"] = seconds_since(start);
    std::vector<GridPath> paths;
    std::size_t attempts = 0, aborts = 0;
    for (const auto& d : draws) {
      paths.push_back(d.path);
      attempts += d.attempts;
      aborts += d.boundary_aborts;
    }
    const auto files = write_paths(common->out, "bridge", paths);
    write_marginals(fs::path(common->out) / "marginals.csv", paths, *at);
    const double prob = attempts ? static_cast<double>(attempts - draws.size()) / static_cast<double>(attempts) : 0.0;
    o.summary = {{"model", to_json(spec)},
                 {"problem", problem_json(problem)},
                 {"samples", draws.size()},
                 {"attempts", attempts},
                 {"rejections", attempts - draws.size()},
                 {"boundary_aborts", aborts},
                 {"rejection_probability", prob},
                 {"rejection_std_error", std::sqrt(prob * (1.0 - prob) / static_cast<double>(attempts))},
                 {"files", files}};
    return o;
  };
}

struct MhOptions {
  std::size_t n_t = 10;
  std::size_t burn_in = 5000;
  std::size_t thin = 1;
  std::size_t max_attempts = kDefaultMaxAttempts;
  std::string hitter = "invariant";
};

void add_mh(CLI::App* sub, MhOptions& mh) {
  sub->add_option("--hitter-start", mh.hitter, "initial law of the hitting diffusions: invariant or transition");
  sub->add_option("--n-t,--nt", mh.n_t, "hitting counts per pseudo-marginal estimate");
  sub->add_option("--burn-in,--burnin", mh.burn_in, "discarded initial iterations");
  sub->add_option("--thin", mh.thin, "keep every thin-th state");
  sub->add_option("--max-attempts", mh.max_attempts, "proposal budget per proposal bridge");
}

MhConfig make_mh(const MhOptions& o, std::size_t retained) {
  MhConfig c;
  c.n_t = o.n_t;
  c.burn_in = o.burn_in;
  c.thin = o.thin;
  c.iterations = o.burn_in + retained * o.thin;
  c.max_attempts = o.max_attempts;
  c.hitter = parse_hitter_start(o.hitter);
  return c;
}

Command setup_bridge_exact(CLI::App& app) {
  auto* sub = app.add_subcommand("bridge-exact", "exact bridges by pseudo-marginal Metropolis-Hastings");
  auto common = std::make_shared<Common>();
  auto model = std::make_shared<ModelOptions>();
  auto p = std::make_shared<ProblemOptions>();
  auto mh = std::make_shared<MhOptions>();
  auto samples = std::make_shared<std::size_t>(1000);
  auto at = std::make_shared<std::vector<double>>();
  add_common(sub, *common);
  add_model(sub, *model);
  add_problem(sub, *p);
  add_mh(sub, *mh);
  auto iters = std::make_shared<std::size_t>(0);
  auto* samples_opt = sub->add_option("--samples", *samples, "retained states after burn-in");
  sub->add_option("--iters", *iters, "total iterations including burn-in")->excludes(samples_opt);
  sub->add_option("--at", *at, "also write the bridge values at these times to marginals.csv");
  return [=](const Common&) {
    const ModelSpec spec = resolve_model(*model);
    const BridgeProblem problem = make_problem(*p);
    MhConfig config = make_mh(*mh, *samples);
    if (*iters > 0) config.iterations = *iters;
    const auto start = std::chrono::steady_clock::now();
    MhResult r = with_model(spec, [&](const auto& m) {
      return mh_exact_bridge(m, problem, config, RandomStream(common->seed));
    });
    Outcome o;
    o.timing["sampling_seconds"] = seconds_since(start);
    std::vector<GridPath> paths;
    for (auto& s : r.states) paths.push_back(std::move(s.bridge));
    const fs::path dir(common->out);
    const auto files = write_paths(dir, "bridge", paths);
    write_marginals(dir / "marginals.csv", paths, *at);
    write_values_csv(dir / "rho_trace.csv", "rho_hat", r.rho_trace);
    o.summary = {{"model", to_json(spec)},
                 {"problem", problem_json(problem)},
                 {"samples", paths.size()},
                 {"iterations", config.iterations},
                 {"acceptance_rate", r.acceptance_rate},
                 {"mean_rho_hat", r.mean_rho_hat},
                 {"capped_iterations", r.capped_iterations},
                 {"files", files}};
    return o;
  };
}

Command setup_oracle_ou(CLI::App& app) {
  auto* sub = app.add_subcommand("oracle-ou", "exact Ornstein-Uhlenbeck bridges from the Gaussian law");
  auto common = std::make_shared<Common>();
  auto model = std::make_shared<ModelOptions>();
  auto p = std::make_shared<ProblemOptions>();
  auto samples = std::make_shared<std::size_t>(100);
  auto at = std::make_shared<std::vector<double>>();
  add_common(sub, *common);
  add_model(sub, *model);
  add_problem(sub, *p);
  sub->add_option("--samples", *samples, "number of bridges");
  sub->add_option("--at", *at, "also write the bridge values at these times to marginals.csv");
  return [=](const Common&) {
    const ModelSpec spec = resolve_model(*model);
    const AnyModel any = make_model(spec);
    if (!std::holds_alternative<OrnsteinUhlenbeck>(any)) throw UsageError("oracle-ou needs --model ou");
    const OuParams params(std::get<OrnsteinUhlenbeck>(any));
    const RandomStream root(common->seed);
    const auto start = std::chrono::steady_clock::now();
    std::vector<GridPath> paths(*samples);
    parallel_for(*samples, common->threads, [&](std::size_t i) {
      RandomStream r = root.substream(i);
      paths[i] = sample_ou_bridge_exact(params, p->a, p->b, p->delta, p->steps, r);
    });
    Outcome o;
    o.timing["sampling_seconds"] = seconds_since(start);
    const fs::path dir(common->out);
    const auto files = write_paths(dir, "bridge", paths);
    write_marginals(dir / "marginals.csv", paths, *at);
    o.summary = {{"model", to_json(spec)},
                 {"problem", problem_json(make_problem(*p))},
                 {"samples", paths.size()},
                 {"files", files}};
    return o;
  };
}

ExactBridgeSource exact_source(const std::string& kind, const AnyModel& any, const MhOptions& mh) {
  if (kind == "oracle") {
    if (!std::holds_alternative<OrnsteinUhlenbeck>(any))
      throw UsageError("the oracle bridge source needs an ou model; use --source mh");
    return ou_oracle_source(OuParams(std::get<OrnsteinUhlenbeck>(any)));
  }
  if (kind == "mh") {
    const MhConfig config = make_mh(mh, 0);
    return std::visit([&](const auto& m) { return mh_source(m, config); }, any);
  }
  throw UsageError("unknown bridge source '" + kind + "' (expected oracle or mh)");
}

Command setup_estimate_pi(CLI::App& app) {
  auto* sub = app.add_subcommand("estimate-pi", "probability that an exact bridge is missed");
  auto common = std::make_shared<Common>();
  auto model = std::make_shared<ModelOptions>();
  auto p = std::make_shared<ProblemOptions>();
  auto mh = std::make_shared<MhOptions>();
  auto bridges = std::make_shared<std::size_t>(10000);
  auto source = std::make_shared<std::string>("oracle");
  add_common(sub, *common);
  add_model(sub, *model);
  add_problem(sub, *p);
  add_mh(sub, *mh);
  sub->add_option("--bridges", *bridges, "number of exact bridges");
  sub->add_option("--source", *source, "exact bridge source: oracle (ou only) or mh");
  return [=](const Common&) {
    const ModelSpec spec = resolve_model(*model);
    const AnyModel any = make_model(spec);
    const BridgeProblem problem = make_problem(*p);
    const ExactBridgeSource src = exact_source(*source, any, *mh);
    RandomStream rng(common->seed);
    const auto start = std::chrono::steady_clock::now();
    const double q = std::visit(
        [&](const auto& m) { return estimate_one_minus_pi(m, problem, *bridges, src, rng); }, any);
    Outcome o;
    o.timing["sampling_seconds"] = seconds_since(start);
    o.summary = {{"model", to_json(spec)},
                 {"problem", problem_json(problem)},
                 {"bridges", *bridges},
                 {"source", *source},
                 {"one_minus_pi", q},
                 {"std_error", std::sqrt(q * (1.0 - q) / static_cast<double>(*bridges))}};
    return o;
  };
}

Command setup_compare(CLI::App& app) {
  auto* sub = app.add_subcommand("compare", "two-sample KS test and Q-Q data");
  auto common = std::make_shared<Common>();
  auto x = std::make_shared<std::string>();
  auto y = std::make_shared<std::string>();
  auto x_col = std::make_shared<std::string>();
  auto y_col = std::make_shared<std::string>();
  auto quantiles = std::make_shared<std::size_t>(100);
  add_common(sub, *common);
  sub->add_option("--x", *x, "first sample CSV")->required();
  sub->add_option("--y", *y, "second sample CSV")->required();
  sub->add_option("--x-column", *x_col, "column of the first CSV (default: last)");
  sub->add_option("--y-column", *y_col, "column of the second CSV (default: last)");
  sub->add_option("--quantiles", *quantiles, "number of Q-Q points");
  return [=](const Common&) {
    const SampleSet xs(read_sample_csv(*x, *x_col), *x);
    const SampleSet ys(read_sample_csv(*y, *y_col), *y);
    const KsResult ks = ks_two_sample(xs, ys);
    const auto qq = qq_data(xs.values, ys.values, *quantiles);
    const fs::path dir(common->out);
    auto out = open_output(dir / "qq.csv");
    out << "level,x_quantile,y_quantile\n";
    for (std::size_t i = 0; i < qq.size(); ++i)
      out << format_double((static_cast<double>(i) + 0.5) / static_cast<double>(qq.size())) << ','
          << format_double(qq[i].first) << ',' << format_double(qq[i].second) << '\n';
    finish(out, dir / "qq.csv");
    Outcome o;
    o.summary = {{"n_x", xs.values.size()},      {"n_y", ys.values.size()},
                 {"ks_statistic", ks.statistic}, {"p_value", ks.p_value},
                 {"mean_x", mean(xs.values)},    {"mean_y", mean(ys.values)}};
    return o;
  };
}

// Benchmark spec:
// {"model": {...}, "defaults": {...}, "pi_source": {...}, "max_attempts": n,
//  "jobs": [{"label": "...", "a": 0, "b": 0, "delta": 1, "steps": 100, ...}]}
BenchmarkJob parse_job(const Json& defaults, const Json& j, std::size_t index) {
  Json merged = defaults.is_object() ? defaults : Json::object();
  if (!j.is_object()) throw UsageError("benchmark job " + std::to_string(index) + " is not an object");
  // Either grid key in a job replaces both grid defaults.
  for (const Json* level : {static_cast<const Json*>(&merged), &j})
    if (level->contains("steps") && level->contains("steps_per_unit_time"))
      throw UsageError("give either 'steps' or 'steps_per_unit_time', not both");
  if (j.contains("steps") || j.contains("steps_per_unit_time")) {
    merged.erase("steps");
    merged.erase("steps_per_unit_time");
  }
  for (const auto& [k, v] : j.items()) merged[k] = v;
  auto num = [&](const char* key, double fallback) {
    if (!merged.contains(key)) return fallback;
    if (!merged[key].is_number()) throw UsageError(std::string("benchmark field '") + key + "' must be a number");
    return merged[key].get<double>();
  };
  auto count = [&](const char* key, std::size_t fallback) {
    const double v = num(key, static_cast<double>(fallback));
    if (!(v >= 0.0) || v != std::floor(v)) throw UsageError(std::string("'") + key + "' must be a count");
    return static_cast<std::size_t>(v);
  };
  BenchmarkJob job;
  job.problem.a = num("a", 0.0);
  job.problem.b = num("b", 0.0);
  job.problem.horizon = num("delta", 1.0);
  if (merged.contains("steps")) {
    job.problem.steps = count("steps", 100);
  } else {
    job.problem.steps = steps_for(job.problem.horizon, num("steps_per_unit_time", kStepsPerUnitTime));
  }
  job.problem.scheme = parse_scheme(merged.value("scheme", std::string("euler")));
  job.acceptances = count("acceptances", 10000);
  job.pi_bridges = count("pi_bridges", 0);
  job.label = merged.value("label", std::string("job") + std::to_string(index));
  return job;
}

Command setup_benchmark(CLI::App& app) {
  auto* sub = app.add_subcommand("benchmark", "rejection-rate and timing table from a job spec");
  auto common = std::make_shared<Common>();
  auto spec_file = std::make_shared<std::string>();
  add_common(sub, *common);
  sub->add_option("--spec", *spec_file, "benchmark spec JSON")->required();
  return [=](const Common&) {
    const Json spec = read_json(*spec_file);
    if (!spec.is_object() || !spec.contains("model") || !spec.contains("jobs") || !spec["jobs"].is_array())
      throw UsageError("benchmark spec needs 'model' and a 'jobs' array");
    const ModelSpec mspec = parse_model_spec(spec["model"]);
    const AnyModel any = make_model(mspec);
    std::vector<BenchmarkJob> jobs;
    const Json defaults = spec.value("defaults", Json::object());
    for (std::size_t i = 0; i < spec["jobs"].size(); ++i) jobs.push_back(parse_job(defaults, spec["jobs"][i], i));
    ExactBridgeSource src;
    std::string source_kind = "none";
    if (spec.contains("pi_source")) {
      const Json& ps = spec["pi_source"];
      MhOptions mh;
      mh.n_t = ps.value("n_t", mh.n_t);
      mh.burn_in = ps.value("burn_in", mh.burn_in);
      mh.thin = ps.value("thin", mh.thin);
      mh.hitter = ps.value("hitter_start", mh.hitter);
      source_kind = ps.value("kind", std::string("oracle"));
      src = exact_source(source_kind, any, mh);
    }
    const std::size_t max_attempts = spec.value("max_attempts", kDefaultMaxAttempts);
    const auto rows = std::visit(
        [&](const auto& m) {
          return benchmark_table(m, std::span<const BenchmarkJob>(jobs), RandomStream(common->seed), src,
                                 max_attempts);
        },
        any);
    const fs::path dir(common->out);
    auto out = open_output(dir / "table.csv");
    out << "label,a,b,delta,steps,acceptances,attempts,rejections,boundary_aborts,rejection_prob,rejection_se,"
           "one_minus_pi,one_minus_pi_se,error\n";
    Outcome o;
    Json timing_rows = Json::array();
    std::size_t failed = 0;
    for (const auto& r : rows) {
      out << csv_quote(r.label) << ',' << format_double(r.problem.a) << ',' << format_double(r.problem.b) << ','
          << format_double(r.problem.horizon) << ',' << r.problem.steps << ',' << r.acceptances << ','
          << r.attempts << ',' << r.rejections << ',' << r.boundary_aborts << ','
          << format_double(r.rejection_prob) << ',' << format_double(r.rejection_se) << ','
          << (r.one_minus_pi ? format_double(*r.one_minus_pi) : "") << ','
          << (r.one_minus_pi_se ? format_double(*r.one_minus_pi_se) : "") << ',' << csv_quote(r.error) << '\n';
      timing_rows.push_back({{"label", r.label}, {"delta", r.problem.horizon}, {"seconds", r.seconds}});
      if (!r.error.empty()) ++failed;
    }
    finish(out, dir / "table.csv");
    auto tout = open_output(dir / "timing.csv");
    tout << "label,delta,seconds\n";
    for (const auto& r : rows)
      tout << csv_quote(r.label) << ',' << format_double(r.problem.horizon) << ',' << format_double(r.seconds) << '\n';
    finish(tout, dir / "timing.csv");
    o.timing["rows"] = timing_rows;
    o.summary = {{"model", to_json(mspec)}, {"rows", rows.size()}, {"failed_rows", failed}, {"pi_source", source_kind}};
    return o;
  };
}

// ---------------------------------------------------------------------------
// Inference commands

using AnyFamily = std::variant<OuFamily, HyperbolicFamily, CirFamily>;

AnyFamily make_family(const std::string& name, double reference) {
  const bool has_ref = !std::isnan(reference);
  if (name == "ou") return OuFamily{has_ref ? reference : 0.0};
  if (name == "hyperbolic") return HyperbolicFamily{has_ref ? reference : 0.0};
  if (name == "cir") {
    if (has_ref && !(reference > 0.0)) throw UsageError("cir reference point must be positive");
    return CirFamily{has_ref ? reference : 1.0};
  }
  throw UsageError("unknown model family '" + name + "' (expected ou, hyperbolic or cir)");
}

struct FamilyOptions {
  std::string family;
  std::string data;
  double reference = kUnset;
  std::string sampler = "exact";
  double steps_per_unit = kStepsPerUnitTime;
  std::size_t n_t = 1;
  std::size_t burn_in = 200;
  std::size_t max_attempts = kDefaultMaxAttempts;
  std::string hitter = "invariant";
};

void add_family(CLI::App* sub, FamilyOptions& f) {
  sub->add_option("--model-family", f.family, "ou, hyperbolic or cir")->required();
  sub->add_option("--data", f.data, "observations CSV with columns t,x")->required();
  sub->add_option("--reference-point", f.reference, "base point x* of the transform");
  sub->add_option("--sampler", f.sampler, "bridge sampler: exact or approximate");
  sub->add_option("--steps-per-unit", f.steps_per_unit, "bridge grid steps per unit time");
  sub->add_option("--n-t", f.n_t, "hitting counts per pseudo-marginal estimate");
  sub->add_option("--burn-in", f.burn_in, "MH burn-in per interval");
  sub->add_option("--max-attempts", f.max_attempts, "proposal budget per bridge");
  sub->add_option("--hitter-start", f.hitter, "initial law of the hitting diffusions: invariant or transition");
}

BridgeConfig make_bridge_config(const FamilyOptions& f) {
  BridgeConfig c;
  if (f.sampler == "exact") {
    c.sampler = BridgeSampler::exact_mh;
  } else if (f.sampler == "approximate") {
    c.sampler = BridgeSampler::approximate;
  } else {
    throw UsageError("unknown sampler '" + f.sampler + "' (expected exact or approximate)");
  }
  if (!(f.steps_per_unit > 0.0)) throw UsageError("--steps-per-unit must be positive");
  c.steps_per_unit_time = f.steps_per_unit;
  c.mh.n_t = f.n_t;
  c.mh.burn_in = f.burn_in;
  c.mh.hitter = parse_hitter_start(f.hitter);
  c.max_attempts = f.max_attempts;
  return c;
}

std::vector<double> json_vector(const Json& j, const char* what) {
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array()) throw UsageError(std::string(what) + " must be a number or an array of numbers");
  std::vector<double> v;
  for (const auto& e : j) {
    if (!e.is_number()) throw UsageError(std::string(what) + " must contain numbers only");
    v.push_back(e.get<double>());
  }
  return v;
}

/// --init accepts inline JSON or a JSON file: {"alpha": [...], "beta": [...]}.
ParamVector parse_init(const std::string& text) {
  Json j;
  if (!text.empty() && text.front() == '{') {
    try {
      j = Json::parse(text);
    } catch (const Json::exception& e) {
      throw UsageError(std::string("malformed --init JSON: ") + e.what());
    }
  } else {
    j = read_json(text);
  }
  if (!j.is_object() || !j.contains("alpha") || !j.contains("beta"))
    throw UsageError("--init needs an object with 'alpha' and 'beta'");
  return {json_vector(j["alpha"], "alpha"), json_vector(j["beta"], "beta")};
}

Json params_json(const ParamVector& p) { return {{"alpha", p.alpha}, {"beta", p.beta}}; }

Command setup_em_fit(CLI::App& app) {
  auto* sub = app.add_subcommand("em-fit", "Monte Carlo EM estimation from discrete observations");
  auto common = std::make_shared<Common>();
  auto fam = std::make_shared<FamilyOptions>();
  auto init = std::make_shared<std::string>();
  auto cfg = std::make_shared<EmConfig>();
  auto m_step = std::make_shared<std::string>("profile");
  add_common(sub, *common);
  add_family(sub, *fam);
  sub->add_option("--init", *init, "initial parameters as JSON or a JSON file")->required();
  sub->add_option("--bridges", cfg->bridges_per_interval, "bridges per interval and iteration");
  sub->add_option("--final-bridges", cfg->final_bridges, "bridges for the final iteration (0 skips it)");
  sub->add_option("--iters", cfg->max_iter, "maximum EM iterations");
  sub->add_option("--tol", cfg->tol, "stop when no parameter moves more than this");
  sub->add_option("--m-step", *m_step, "profile or simplex");
  sub->add_flag("--fix-beta", cfg->fix_beta, "keep the diffusion parameters at their initial values");
  return [=](const Common&) {
    const AnyFamily family = make_family(fam->family, fam->reference);
    const DiscreteSample data = read_data_csv(fam->data);
    const ParamVector start = parse_init(*init);
    EmConfig config = *cfg;
    config.bridge = make_bridge_config(*fam);
    config.threads = common->threads;
    if (*m_step == "profile") {
      config.m_step = MStep::profile;
    } else if (*m_step == "simplex") {
      config.m_step = MStep::simplex;
    } else {
      throw UsageError("unknown --m-step '" + *m_step + "' (expected profile or simplex)");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const EmResult r = std::visit(
        [&](const auto& f) { return em_fit(f, data, start, config, RandomStream(common->seed)); }, family);
    Outcome o;
    o.timing["total_seconds"] = seconds_since(t0);
    Json trace = Json::array(), times = Json::array();
    for (std::size_t i = 0; i < r.trace.iterations.size(); ++i) {
      const EmIteration& it = r.trace.iterations[i];
      trace.push_back({{"iteration", i},
                       {"params", params_json(it.params)},
                       {"q_before", it.q_before},
                       {"q_after", it.q_after},
                       {"q_std_error", it.q_std_error},
                       {"bridges", it.bridges},
                       {"stagnant", it.stagnant}});
      times.push_back(it.seconds);
    }
    o.timing["iteration_seconds"] = times;
    o.summary = {{"estimate", params_json(r.estimate)},
                 {"trace", trace},
                 {"diagnostics",
                  {{"converged", r.trace.converged},
                   {"stagnation_warning", r.trace.stagnation_warning},
                   {"iterations", r.trace.iterations.size()},
                   {"observations", data.size()}}}};
    write_json(fs::path(common->out) / "result.json", o.summary);
    return o;
  };
}

Command setup_posterior(CLI::App& app) {
  auto* sub = app.add_subcommand("posterior", "conjugate normal posterior of the drift parameters");
  auto common = std::make_shared<Common>();
  auto fam = std::make_shared<FamilyOptions>();
  auto beta = std::make_shared<std::vector<double>>();
  auto alpha = std::make_shared<std::vector<double>>();
  auto prior_mean = std::make_shared<std::vector<double>>();
  auto prior_cov = std::make_shared<std::vector<double>>();
  auto bridges = std::make_shared<std::size_t>(1);
  add_common(sub, *common);
  add_family(sub, *fam);
  sub->add_option("--beta", *beta, "diffusion parameters (held fixed)")->required();
  sub->add_option("--alpha", *alpha, "drift parameters used to simulate bridges (default: prior mean)");
  sub->add_option("--prior-mean", *prior_mean, "prior mean of alpha")->required();
  sub->add_option("--prior-cov", *prior_cov, "prior covariance, row-major")->required();
  sub->add_option("--bridges", *bridges, "bridges per interval (1 gives the single-draw statistics)");
  return [=](const Common&) {
    const AnyFamily family = make_family(fam->family, fam->reference);
    const DiscreteSample data = read_data_csv(fam->data);
    const auto k = static_cast<Eigen::Index>(prior_mean->size());
    if (prior_cov->size() != prior_mean->size() * prior_mean->size())
      throw UsageError("--prior-cov needs k*k values for k = " + std::to_string(k));
    const ParamVector ref{alpha->empty() ? *prior_mean : *alpha, *beta};
    const BridgeConfig bc = make_bridge_config(*fam);
    const auto t0 = std::chrono::steady_clock::now();
    const ExpFamStatistics st = std::visit(
        [&](const auto& f) {
          check_params(f, ref);
          const BridgeSet set = simulate_em_bridges(f, ref, data, *bridges, bc, RandomStream(common->seed),
                                                    common->threads);
          return expfam_statistics(f, *beta, set, data, *beta, common->threads);
        },
        family);
    const Eigen::Map<const Eigen::VectorXd> m0(prior_mean->data(), k);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> c0(
        prior_cov->data(), k, k);
    const Posterior post = conjugate_posterior(m0, c0, st.H, st.B);
    Outcome o;
    o.timing["total_seconds"] = seconds_since(t0);
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    auto mat = [](const Eigen::MatrixXd& m) {
      Json rows = Json::array();
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
        rows.push_back(r);
      }
      return rows;
    };
    o.summary = {{"mean", vec(post.mean)}, {"cov", mat(post.cov)}, {"H", vec(st.H)},
                 {"B", mat(st.B)},         {"beta", *beta},         {"bridges_per_interval", *bridges}};
    write_json(fs::path(common->out) / "posterior.json", o.summary);
    return o;
  };
}

Command setup_spectral_bound(CLI::App& app) {
  auto* sub = app.add_subcommand("spectral-bound", "lower bound on the spectral gap");
  auto common = std::make_shared<Common>();
  auto model = std::make_shared<ModelOptions>();
  auto lower = std::make_shared<double>(kUnset);
  auto upper = std::make_shared<double>(kUnset);
  auto points = std::make_shared<std::size_t>(401);
  auto tail = std::make_shared<double>(1e-6);
  add_common(sub, *common);
  add_model(sub, *model);
  sub->add_option("--lower", *lower, "lowest grid point (default: speed-measure truncation)");
  sub->add_option("--upper", *upper, "highest grid point (default: speed-measure truncation)");
  sub->add_option("--points", *points, "grid points")->check(CLI::Range(std::size_t{3}, std::size_t{1} << 20));
  sub->add_option("--tail-tolerance", *tail, "largest invariant mass allowed outside the grid");
  return [=](const Common&) {
    const ModelSpec spec = resolve_model(*model);
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    with_model(spec, [&](const auto& m) {
      using M = std::decay_t<decltype(m)>;
      double lo = *lower, hi = *upper;
      if (std::isnan(lo) || std::isnan(hi)) {
        const SpeedMeasure<M> speed(m);
        if (std::isnan(lo)) lo = speed.lower_bound();
        if (std::isnan(hi)) hi = speed.upper_bound();
      }
      if (!(lo < hi)) throw UsageError("--lower must be below --upper");
      std::vector<double> grid(*points);
      for (std::size_t i = 0; i < grid.size(); ++i)
        grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
      const SpectralGapBound b = spectral_gap_lower_bound(m, grid, *tail);
      const fs::path dir(common->out);
      auto out = open_output(dir / "profile.csv");
      out << "x,scale,phi,psi,c1,c0\n";
      for (std::size_t i = 0; i < b.grid.size(); ++i)
        out << format_double(b.grid[i]) << ',' << format_double(b.scale[i]) << ',' << format_double(b.phi[i]) << ','
            << format_double(b.psi[i]) << ',' << format_double(b.c1[i]) << ',' << format_double(b.c0[i]) << '\n';
      finish(out, dir / "profile.csv");
      o.summary = {{"model", to_json(spec)}, {"bound", b.bound}, {"grid_lower", lo}, {"grid_upper", hi},
                   {"points", grid.size()}};
    });
    o.timing["total_seconds"] = seconds_since(t0);
    return o;
  };
}

// ---------------------------------------------------------------------------

Json option_values(const CLI::App* sub) {
  Json j = Json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_name();
    // Outputs do not depend on the thread count, and the manifest sits in --out.
    if (name.empty() || name == "--help" || name == "--threads" || name == "--out") continue;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      j[name] = res.size() == 1 ? Json(res.front()) : Json(res);
    } else if (opt->get_default_str() != "nan") {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion bridge simulation and simulation-based inference"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::map<std::string, Command> commands;
  for (auto setup : {setup_simulate, setup_bridge_approx, setup_bridge_exact, setup_oracle_ou, setup_estimate_pi,
                     setup_compare, setup_benchmark, setup_em_fit, setup_posterior, setup_spectral_bound}) {
    Command c = setup(app);
    commands.emplace(app.get_subcommands({}).back()->get_name(), std::move(c));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  CLI::App* sub = app.get_subcommands().front();
  const Json options = option_values(sub);
  try {
    Common common;
    common.seed = sub->get_option("--seed")->as<std::uint64_t>();
    common.out = sub->get_option("--out")->as<std::string>();
    const auto start = std::chrono::steady_clock::now();
    Outcome o = commands.at(sub->get_name())(common);
    const fs::path dir(common.out);
    write_json(dir / "summary.json", o.summary);
    write_json(dir / "manifest.json", {{"tool", "dbridge"},
                                       {"version", kVersion},
                                       {"command", sub->get_name()},
                                       {"seed", common.seed},
                                       {"options", options}});
    o.timing["wall_seconds"] = seconds_since(start);
    write_json(dir / "timing.json", o.timing);
    std::cout << o.summary.dump(2) << '\n';
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::numeric);
  }
}
