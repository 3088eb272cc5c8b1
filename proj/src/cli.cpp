#include "otafl/cli.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <map>
#include <utility>

#include <json.hpp>

#include "otafl/bounds.hpp"
#include "otafl/errors.hpp"
#include "otafl/io.hpp"
#include "otafl/trainer.hpp"

namespace otafl {

namespace {

using nlohmann::json;

json jnum(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double jget(const json& j, double fallback) {
  return j.is_null() ? fallback : j.get<double>();
}

std::unique_ptr<TrainingTask> build_task(const ExperimentConfig& cfg, RandomStream& root) {
  if (cfg.task == "ridge")
    return make_ridge_task(root, cfg.devices, cfg.samples_per_device, cfg.dim,
                           cfg.data_noise_std, cfg.ridge_coeff, cfg.w_true_scale);
  if (cfg.task == "nonconvex")
    return make_nonconvex_task(root, cfg.devices, cfg.samples_per_device, cfg.dim, cfg.hidden,
                               cfg.classes, cfg.data_skew);
  if (cfg.task == "idx") {
    Dataset data = load_idx_dataset(cfg.idx_images, cfg.idx_labels);
    DataPartition part = partition_data(root, data, cfg.devices, cfg.data_skew);
    return std::make_unique<SmoothNetTask>(std::move(data), std::move(part), cfg.hidden);
  }
  throw ConfigError("unknown task '" + cfg.task + "'");
}

EtaSchedule schedule_for(const ExperimentConfig& cfg) {
  return cfg.case_no == 1 ? EtaSchedule::power_law(cfg.p) : EtaSchedule::constant(cfg.eta);
}

std::string run_dir(const ExperimentConfig& cfg) {
  return cfg.resolved_out() + "/" + cfg.resolved_run_name();
}

std::string trace_name(const std::string& strategy, std::uint64_t seed) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "trace_%s_seed%" PRIu64 ".csv", strategy.c_str(), seed);
  return buf;
}

// Drops the trailing zeros %g would keep ("0.050000" -> "0.05").
std::string compact_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

ExperimentBundle prepare_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  ExperimentBundle bundle;
  bundle.seed = seed;
  RandomStream root(seed);

  bundle.task = build_task(cfg, root);
  bundle.task->set_theta_threshold(cfg.theta_th);
  const int model_dim = bundle.task->dim();

  RandomStream chan_stream = root.derive(StreamPurpose::kChannel);
  bundle.chan = draw_channels(chan_stream, cfg.devices, cfg.channel_mean, cfg.sigma2, model_dim);
  bundle.b_max = cfg.resolved_b_max();

  if (cfg.init == "zero") {
    bundle.w1.assign(static_cast<std::size_t>(model_dim), 0.0);
  } else {
    RandomStream init_stream = root.derive(StreamPurpose::kInit);
    bundle.w1 = gaussian_vector(init_stream, static_cast<std::size_t>(model_dim),
                                cfg.w0_scale * cfg.w0_scale / model_dim);
  }

  const EtaSchedule sched = schedule_for(cfg);
  bundle.calibration =
      calibrate_constants(*bundle.task, bundle.w1, sched, cfg.warmup_rounds,
                          root.derive(StreamPurpose::kCalibrate),
                          /*estimate_smoothness=*/cfg.task != "ridge");

  if (cfg.delta_f) {
    bundle.delta_f_est = *cfg.delta_f;
  } else if (bundle.task->optimum()) {
    bundle.delta_f_est = bundle.task->loss(bundle.w1) - bundle.task->optimum()->f_star;
  } else {
    // Losses are non-negative, so F(w^1) upper-bounds any achievable decrease.
    bundle.delta_f_est = bundle.task->loss(bundle.w1);
  }

  const TaskConstants& c = bundle.task->constants();
  if (cfg.case_no == 1) {
    bundle.plan = plan_case1(bundle.chan, bundle.b_max, c.L, cfg.p, bundle.delta_f_est,
                             cfg.rate_tol);
  } else {
    Case2Target target;
    if (cfg.s_target)
      target.s = *cfg.s_target;
    else if (cfg.eps)
      target.eps = *cfg.eps;
    else
      target.s = 0.995;  // dimensionless default; an absolute eps cannot track problem scale
    bundle.plan = plan_case2(bundle.chan, bundle.b_max, c, cfg.eta, target, cfg.rate_tol);
  }
  return bundle;
}

BoundInputs bound_inputs(const ExperimentBundle& bundle) {
  const TaskConstants& c = bundle.task->constants();
  BoundInputs in;
  in.a = bundle.plan.a;
  in.b = bundle.plan.b;
  in.h = bundle.chan.h;
  in.sigma2 = bundle.chan.sigma2;
  in.dim = bundle.chan.dim;
  in.eta = bundle.plan.eta;
  in.L = c.L;
  in.M = c.M;
  in.G = c.G;
  in.theta_th = c.theta_th;
  return in;
}

AmplificationPlan replan_case2(const ExperimentConfig& cfg, const ExperimentBundle& bundle,
                               double eps_target) {
  Case2Target target;
  target.eps = eps_target;
  return plan_case2(bundle.chan, bundle.plan.artifacts, bundle.b_max,
                    bundle.task->constants(), cfg.eta, target);
}

AmplificationPlan capped_baseline_plan(const AmplificationPlan& plan,
                                       const ChannelRealization& chan, const Vec& b_max) {
  if (b_max.size() != chan.h.size())
    throw InvalidArgument("baseline plan: cap/channel device mismatch");
  AmplificationPlan base = plan;
  base.b = b_max;
  base.b_max = b_max;
  // The baseline transmits at the caps with the product a * sum_k b_k matched
  // to the optimized plan, so both spend the same nominal amplification budget.
  double sum_b_opt = 0.0, sum_b_cap = 0.0;
  double sig_cap = 0.0, quad = 0.0;
  for (std::size_t k = 0; k < b_max.size(); ++k) {
    sum_b_opt += plan.b[k];
    sum_b_cap += b_max[k];
    const double hb = chan.h[k] * b_max[k];
    sig_cap += hb;
    quad += 4.0 * hb * hb;
  }
  if (!(sig_cap > 0.0)) throw InvalidArgument("baseline plan: zero signal sum at the caps");
  base.a = plan.a * sum_b_opt / sum_b_cap;
  base.artifacts.b_star = b_max;
  base.artifacts.Z = (quad + chan.dim * chan.sigma2) / (sig_cap * sig_cap);
  base.artifacts.r_star = std::sqrt(quad + chan.dim * chan.sigma2) / sig_cap;
  return base;
}

int cmd_optimize(const ExperimentConfig& cfg, bool with_oracle) {
  const ExperimentBundle bundle = prepare_experiment(cfg, cfg.seed0);
  const TaskConstants& c = bundle.task->constants();
  const SolverArtifacts& art = bundle.plan.artifacts;

  std::printf("task          %s (devices %d, dim %d)\n", bundle.task->name().c_str(),
              bundle.task->devices(), bundle.task->dim());
  std::printf("constants     L %.6g  M %.6g  G %.6g  theta_th %.6g\n", c.L, c.M, c.G,
              c.theta_th);
  std::printf("decrease est  %.6g\n", bundle.delta_f_est);
  std::printf("Z             %.12g  (r_star %.12g)\n", art.Z, art.r_star);
  std::printf("solver        %d bisection steps, %d inner iterations\n",
              art.bisection_iterations, art.inner_iterations);
  std::printf("residuals     gap %.3e  stationarity %.3e\n", art.residuals.gap_at_opt,
              art.residuals.stationarity);
  if (art.S) std::printf("S             %.12g\n", *art.S);
  if (art.s) std::printf("s             %.12g\n", *art.s);
  if (art.q_max) std::printf("q_max         %.12g\n", *art.q_max);
  if (art.eps) std::printf("eps           %.12g\n", *art.eps);
  std::printf("a             %.12g\n", bundle.plan.a);
  std::printf("signal sum    %.12g\n", bundle.plan.signal_sum(bundle.chan));

  const std::string dir = run_dir(cfg);
  ensure_directory(dir);
  char name[64];
  std::snprintf(name, sizeof name, "plan_seed%" PRIu64 ".json", bundle.seed);
  write_text_file(dir + "/" + name, bundle.plan.to_json() + "\n");
  std::printf("plan written  %s/%s\n", dir.c_str(), name);

  if (with_oracle) {
    if (cfg.devices > 4)
      throw ConfigError("oracle comparison enumerates a dense grid; needs devices <= 4");
    const double zg = oracle_Z(bundle.chan, bundle.b_max, cfg.oracle_grid);
    const double rel = std::fabs(art.Z - zg) / std::max(std::fabs(zg), 1e-300);
    std::printf("oracle Z      %.12g  (grid %d, rel diff %.3e)\n", zg, cfg.oracle_grid, rel);
  }
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  const auto seeds = cfg.seed_list();
  std::vector<ExperimentBundle> bundles;
  bundles.reserve(seeds.size());
  for (const auto s : seeds) bundles.push_back(prepare_experiment(cfg, s));

  std::vector<std::function<RunTrace()>> jobs;
  for (const auto& strat_name : cfg.strategies) {
    for (std::size_t bi = 0; bi < bundles.size(); ++bi) {
      jobs.push_back([&cfg, &bundles, bi, strat_name]() {
        const ExperimentBundle& b = bundles[bi];
        const AggregationStrategy st = parse_strategy(strat_name, b.task->constants().G);
        RunOptions opts;
        opts.redraw_channels = cfg.channel_redraw;
        opts.redraw_mean = cfg.channel_mean;
        RunTrace tr = run_rounds(*b.task, b.chan, b.plan, st, cfg.rounds, b.seed, b.w1, opts);
        tr.fingerprint = cfg.fingerprint();
        return tr;
      });
    }
  }
  const auto outcomes = sweep(jobs, cfg.workers);

  const std::string dir = run_dir(cfg);
  ensure_directory(dir);

  json meta;
  meta["fingerprint"] = cfg.fingerprint();
  meta["config"] = cfg.canonical();
  meta["case"] = cfg.case_no;
  meta["task"] = cfg.task;
  meta["rounds"] = cfg.rounds;
  meta["strategies"] = cfg.strategies;
  meta["seeds"] = seeds;
  json runs = json::array();

  int failures = 0;
  for (std::size_t bi = 0; bi < bundles.size(); ++bi) {
    const ExperimentBundle& b = bundles[bi];
    const TaskConstants& c = b.task->constants();
    json run;
    run["seed"] = b.seed;
    run["channel"] = json::parse(b.chan.to_json());
    run["plan"] = json::parse(b.plan.to_json());
    run["constants"] = {{"L", c.L}, {"M", c.M}, {"G", c.G}, {"theta_th", c.theta_th}};
    run["calibration"] = {{"max_device_grad_norm", b.calibration.max_device_grad_norm},
                          {"gradient_bound", b.calibration.gradient_bound},
                          {"smoothness", b.calibration.smoothness},
                          {"pairs_sampled", b.calibration.pairs_sampled}};
    run["delta_f_est"] = b.delta_f_est;
    if (b.task->optimum()) {
      const Vec d = sub(b.w1, b.task->optimum()->w_star);
      run["f_star"] = jnum(b.task->optimum()->f_star);
      run["w1_dist2"] = jnum(dot(d, d));
    } else {
      run["f_star"] = nullptr;
      run["w1_dist2"] = nullptr;
    }
    run["traces"] = json::object();
    run["device_grad_max"] = json::object();
    run["breaches"] = json::object();
    runs.push_back(std::move(run));
  }

  for (std::size_t si = 0; si < cfg.strategies.size(); ++si) {
    const std::string& strat = cfg.strategies[si];
    std::vector<const RunTrace*> ok;
    for (std::size_t bi = 0; bi < bundles.size(); ++bi) {
      const SweepOutcome& out = outcomes[si * bundles.size() + bi];
      if (!out.trace) {
        std::fprintf(stderr, "run failed (strategy %s, seed %" PRIu64 "): %s\n", strat.c_str(),
                     bundles[bi].seed, out.error.c_str());
        ++failures;
        continue;
      }
      const RunTrace& tr = *out.trace;
      const std::string fname = trace_name(strat, tr.master_seed);
      write_text_file(dir + "/" + fname, tr.to_csv());
      runs[bi]["traces"][strat] = fname;
      runs[bi]["device_grad_max"][strat] = tr.device_grad_max;
      runs[bi]["breaches"][strat] = tr.breaches.size();
      ok.push_back(&tr);
    }
    if (!ok.empty()) {
      write_text_file(dir + "/means_" + strat + ".csv", mean_trace_csv(ok));
      double loss_sum = 0.0, last_min = 0.0, last_gap = 0.0;
      std::size_t breaches = 0;
      bool any_gap = false;
      for (const RunTrace* tr : ok) {
        loss_sum += tr->final_loss();
        last_min += tr->rows.back().min_grad_norm;
        if (std::isfinite(tr->rows.back().gap)) {
          last_gap += tr->rows.back().gap;
          any_gap = true;
        }
        breaches += tr->breaches.size();
      }
      const double n = static_cast<double>(ok.size());
      std::printf("%-16s %zu/%zu runs  mean final loss %.6g  mean final min||g|| %.6g",
                  strat.c_str(), ok.size(), bundles.size(), loss_sum / n, last_min / n);
      if (any_gap) std::printf("  mean final gap %.6g", last_gap / n);
      std::printf("  breaches %zu\n", breaches);
    }
  }

  meta["runs"] = std::move(runs);
  write_text_file(dir + "/runmeta.json", meta.dump(2) + "\n");
  std::printf("traces in     %s\n", dir.c_str());
  return failures == 0 ? 0 : 2;
}

int cmd_bounds(const ExperimentConfig& cfg, const std::string& trace_dir) {
  const std::string dir = trace_dir.empty() ? run_dir(cfg) : trace_dir;
  const json meta = json::parse(read_text_file(dir + "/runmeta.json"));

  if (meta.at("fingerprint").get<std::string>() != cfg.fingerprint()) {
    std::fprintf(stderr,
                 "fingerprint mismatch: %s holds traces from a different experiment "
                 "configuration (found %s, expected %s)\n",
                 dir.c_str(), meta.at("fingerprint").get<std::string>().c_str(),
                 cfg.fingerprint().c_str());
    return 1;
  }
  const int case_no = meta.at("case").get<int>();
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  std::vector<SeedTrajectory> seed_runs;
  for (const json& run : meta.at("runs")) {
    if (!run.at("traces").contains("normalized")) continue;
    const RunTrace tr =
        RunTrace::from_csv(read_text_file(dir + "/" + run["traces"]["normalized"].get<std::string>()));
    SeedTrajectory st;
    st.trace = tr.view();
    if (run.at("device_grad_max").contains("normalized"))
      st.trace.device_grad_max = run["device_grad_max"]["normalized"].get<std::vector<double>>();
    st.trace.f_star = jget(run.at("f_star"), kNaN);

    const json& plan = run.at("plan");
    const json& chan = run.at("channel");
    const json& cons = run.at("constants");
    BoundInputs in;
    in.a = plan.at("a").get<double>();
    in.b = plan.at("b").get<Vec>();
    in.h = chan.at("h").get<Vec>();
    in.sigma2 = chan.at("sigma2").get<double>();
    in.dim = chan.at("dim").get<int>();
    const json& eta = plan.at("eta");
    in.eta = eta.at("kind").get<std::string>() == "power_law"
                 ? EtaSchedule::power_law(eta.at("p").get<double>())
                 : EtaSchedule::constant(eta.at("eta").get<double>());
    in.L = cons.at("L").get<double>();
    in.M = cons.at("M").get<double>();
    in.G = cons.at("G").get<double>();
    in.theta_th = cons.at("theta_th").get<double>();
    in.w1_dist2 = jget(run.at("w1_dist2"), kNaN);
    st.inputs = in;
    seed_runs.push_back(std::move(st));
  }
  if (seed_runs.empty())
    throw ConfigError("no traces for the normalized strategy in " + dir +
                      "; bound checks apply to normalized-gradient runs");

  const BoundReport rep =
      case_no == 1 ? verify_grad_norm_bound(seed_runs) : verify_gap_bound(seed_runs);
  write_text_file(dir + "/bound_report.json", rep.to_json() + "\n");
  write_text_file(dir + "/bound_report.csv", rep.to_csv());

  std::printf("check         %s over %d seeds, %zu prefixes\n", rep.check.c_str(), rep.seeds,
              rep.rows.size());
  std::printf("theta used    %.6g   G used %.6g\n", rep.theta_used, rep.g_used);
  if (!rep.rows.empty()) {
    const BoundCheckRow& last = rep.rows.back();
    std::printf("final prefix  T %d  measured %.6g  bound %.6g  margin %.6g\n", last.T,
                last.measured, last.bound, last.margin);
  }
  if (std::isfinite(rep.fitted_rate))
    std::printf("decay rate    fitted %.6g  reference log(q_max) %.6g\n", rep.fitted_rate,
                rep.reference_rate);
  std::printf("violations    %d averaged (authoritative), %d per-seed (indicative)\n",
              rep.violations, rep.per_seed_violations);
  std::printf("report in     %s/bound_report.json\n", dir.c_str());
  return rep.violations > 0 ? 3 : 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::vector<double>& eps_targets) {
  if (cfg.case_no != 2)
    throw ConfigError("sweep varies the constant-step bias target; set case = 2");
  if (eps_targets.empty()) throw ConfigError("sweep needs at least one eps target");

  const auto seeds = cfg.seed_list();
  std::vector<ExperimentBundle> bundles;
  bundles.reserve(seeds.size());
  for (const auto s : seeds) bundles.push_back(prepare_experiment(cfg, s));

  std::vector<std::vector<AmplificationPlan>> plans(eps_targets.size());
  for (std::size_t ei = 0; ei < eps_targets.size(); ++ei)
    for (const auto& b : bundles) plans[ei].push_back(replan_case2(cfg, b, eps_targets[ei]));

  std::vector<std::function<RunTrace()>> jobs;
  for (std::size_t ei = 0; ei < eps_targets.size(); ++ei) {
    for (std::size_t bi = 0; bi < bundles.size(); ++bi) {
      jobs.push_back([&cfg, &bundles, &plans, ei, bi]() {
        const ExperimentBundle& b = bundles[bi];
        const AggregationStrategy st = parse_strategy("normalized");
        RunOptions opts;
        opts.redraw_channels = cfg.channel_redraw;
        opts.redraw_mean = cfg.channel_mean;
        RunTrace tr =
            run_rounds(*b.task, b.chan, plans[ei][bi], st, cfg.rounds, b.seed, b.w1, opts);
        tr.fingerprint = cfg.fingerprint();
        return tr;
      });
    }
  }
  const auto outcomes = sweep(jobs, cfg.workers);

  const std::string dir = run_dir(cfg);
  ensure_directory(dir);
  const int probe = std::min(100, cfg.rounds);

  json summary;
  summary["fingerprint"] = cfg.fingerprint();
  summary["probe_round"] = probe;
  json entries = json::array();
  int failures = 0;

  std::printf("%-10s %-12s %-12s %-14s %-14s\n", "eps", "s", "q_max", "gap@probe", "gap@final");
  for (std::size_t ei = 0; ei < eps_targets.size(); ++ei) {
    std::vector<const RunTrace*> ok;
    for (std::size_t bi = 0; bi < bundles.size(); ++bi) {
      const SweepOutcome& out = outcomes[ei * bundles.size() + bi];
      if (!out.trace) {
        std::fprintf(stderr, "run failed (eps %g, seed %" PRIu64 "): %s\n", eps_targets[ei],
                     bundles[bi].seed, out.error.c_str());
        ++failures;
        continue;
      }
      ok.push_back(&*out.trace);
    }
    if (ok.empty()) continue;

    double gp = 0.0, gf = 0.0;
    for (const RunTrace* tr : ok) {
      gp += tr->rows[static_cast<std::size_t>(probe) - 1].gap;
      gf += tr->rows.back().gap;
    }
    gp /= static_cast<double>(ok.size());
    gf /= static_cast<double>(ok.size());

    const SolverArtifacts& art = plans[ei][0].artifacts;
    const std::string label = compact_double(eps_targets[ei]);
    write_text_file(dir + "/means_eps" + label + ".csv", mean_trace_csv(ok));

    json e;
    e["eps"] = eps_targets[ei];
    e["s"] = art.s ? json(*art.s) : json(nullptr);
    e["q_max"] = art.q_max ? json(*art.q_max) : json(nullptr);
    e["a"] = plans[ei][0].a;
    e["runs"] = ok.size();
    e["mean_gap_probe"] = jnum(gp);
    e["mean_gap_final"] = jnum(gf);
    entries.push_back(std::move(e));

    std::printf("%-10s %-12.6g %-12.6g %-14.6g %-14.6g\n", label.c_str(),
                art.s ? *art.s : 0.0, art.q_max ? *art.q_max : 0.0, gp, gf);
  }
  summary["targets"] = std::move(entries);
  write_text_file(dir + "/sweep_summary.json", summary.dump(2) + "\n");
  std::printf("summary in    %s/sweep_summary.json\n", dir.c_str());
  return failures == 0 ? 0 : 2;
}

int cmd_oracle(const ExperimentConfig& cfg, int grid_points) {
  if (cfg.devices > 4)
    throw ConfigError("oracle comparison enumerates a dense grid; needs devices <= 4");
  const int grid = grid_points > 0 ? grid_points : cfg.oracle_grid;
  const ExperimentBundle bundle = prepare_experiment(cfg, cfg.seed0);
  const double zs = bundle.plan.artifacts.Z;
  const double zg = oracle_Z(bundle.chan, bundle.b_max, grid);
  const double zg2 = oracle_Z(bundle.chan, bundle.b_max, 2 * grid + 1);
  const double rel = std::fabs(zs - zg) / std::max(std::fabs(zg), 1e-300);

  std::printf("solver Z      %.12g\n", zs);
  std::printf("oracle Z      %.12g  (grid %d)\n", zg, grid);
  std::printf("oracle Z      %.12g  (grid %d)\n", zg2, 2 * grid + 1);
  std::printf("rel diff      %.3e\n", rel);
  if (zg2 > zg * (1.0 + 1e-12))
    std::printf("warning: refined grid increased the oracle value\n");
  return 0;
}

}  // namespace otafl
