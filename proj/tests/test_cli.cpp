#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "otafl/cli.hpp"
#include "otafl/errors.hpp"
#include "otafl/io.hpp"
#include "otafl/trainer.hpp"

using namespace otafl;
using nlohmann::json;

namespace {

std::string fresh_dir(const std::string& leaf) {
  const auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// Desk-scale constant-step experiment with a strong channel, used by the
// subcommand round-trip tests.
ExperimentConfig desk_case2() {
  return parse_config(
      "case = 2\n"
      "task = ridge\n"
      "devices = 6\n"
      "dim = 8\n"
      "samples_per_device = 40\n"
      "data_noise_std = 0.02\n"
      "ridge_coeff = 0.05\n"
      "w_true_scale = 0.2\n"
      "channel_mean = 1.0\n"
      "sigma2 = 0.0001\n"
      "b_max = 2.0\n"
      "theta_th = 1.0\n"
      "eta = 0.05\n"
      "rounds = 80\n"
      "seeds = 3\n"
      "warmup_rounds = 10\n"
      "s = 0.9\n"
      "workers = 2\n");
}

}  // namespace

TEST_CASE("prepare_experiment is a pure function of config and seed") {
  const ExperimentConfig cfg = parse_config(
      "case = 1\ndevices = 5\ndim = 8\nsamples_per_device = 12\nwarmup_rounds = 5\n"
      "channel_mean = 0.5\nsigma2 = 0.001\n");
  const ExperimentBundle one = prepare_experiment(cfg, 9);
  const ExperimentBundle two = prepare_experiment(cfg, 9);

  CHECK(one.chan.h == two.chan.h);
  CHECK(one.w1 == two.w1);
  CHECK(one.plan.a == two.plan.a);
  CHECK(one.plan.b == two.plan.b);
  CHECK(one.calibration.gradient_bound == two.calibration.gradient_bound);
  CHECK(one.delta_f_est == two.delta_f_est);

  const ExperimentBundle other = prepare_experiment(cfg, 10);
  CHECK(other.chan.h != one.chan.h);
  CHECK(other.w1 != one.w1);

  // The bundle is drawn before any aggregation strategy enters the picture.
  ExperimentConfig swapped = cfg;
  swapped.strategies = {"standardized", "ideal"};
  const ExperimentBundle same = prepare_experiment(swapped, 9);
  CHECK(same.chan.h == one.chan.h);
  CHECK(same.w1 == one.w1);
  CHECK(same.plan.a == one.plan.a);

  // Ridge knows its optimum, so the decrease estimate is the true initial gap.
  REQUIRE(one.task->optimum().has_value());
  CHECK(one.delta_f_est ==
        doctest::Approx(one.task->loss(one.w1) - one.task->optimum()->f_star).epsilon(1e-12));
}

TEST_CASE("bound_inputs mirrors the bundle design") {
  const ExperimentConfig cfg = parse_config(
      "case = 1\ndevices = 4\ndim = 6\nsamples_per_device = 10\nwarmup_rounds = 5\n"
      "channel_mean = 0.8\nsigma2 = 0.01\np = 0.6\n");
  const ExperimentBundle bundle = prepare_experiment(cfg, 3);
  const BoundInputs in = bound_inputs(bundle);

  CHECK(in.a == bundle.plan.a);
  CHECK(in.b == bundle.plan.b);
  CHECK(in.h == bundle.chan.h);
  CHECK(in.sigma2 == bundle.chan.sigma2);
  CHECK(in.dim == bundle.chan.dim);
  CHECK(in.eta.at(16) == doctest::Approx(std::pow(16.0, -0.6)).epsilon(1e-15));
  const TaskConstants& c = bundle.task->constants();
  CHECK(in.L == c.L);
  CHECK(in.M == c.M);
  CHECK(in.G == c.G);
  CHECK(in.theta_th == c.theta_th);
  // Trajectory-specific fields stay at their defaults.
  CHECK(in.T == 1);
  CHECK(in.delta_f == 0.0);
  CHECK(in.w1_dist2 == 0.0);

  const ExperimentConfig c2 = desk_case2();
  const ExperimentBundle b2 = prepare_experiment(c2, 1);
  CHECK(bound_inputs(b2).eta.at(7) == c2.eta);
}

TEST_CASE("capped baseline spends the optimized amplification budget at the caps") {
  const ExperimentConfig cfg = parse_config(
      "case = 1\ndevices = 4\ndim = 6\nsamples_per_device = 10\nwarmup_rounds = 5\n"
      "channel_mean = 1.0\nsigma2 = 0.05\nb_max = 1.0, 2.5, 0.7, 1.8\n");
  const ExperimentBundle bundle = prepare_experiment(cfg, 17);
  const AmplificationPlan base = capped_baseline_plan(bundle.plan, bundle.chan, bundle.b_max);

  CHECK(base.b == bundle.b_max);
  double sum_opt = 0.0, sum_cap = 0.0;
  for (std::size_t k = 0; k < bundle.b_max.size(); ++k) {
    sum_opt += bundle.plan.b[k];
    sum_cap += bundle.b_max[k];
  }
  CHECK(base.a * sum_cap == doctest::Approx(bundle.plan.a * sum_opt).epsilon(1e-12));
  CHECK(base.eta.at(4) == bundle.plan.eta.at(4));
  // Transmitting at the caps can only worsen the noise-variance ratio.
  CHECK(base.artifacts.Z >= bundle.plan.artifacts.Z * (1.0 - 1e-9));
}

TEST_CASE("replan_case2 shares the solved design across bias targets") {
  const ExperimentConfig cfg = desk_case2();
  const ExperimentBundle bundle = prepare_experiment(cfg, 2);
  const double floor =
      case2_qmax_zero_floor(bundle.plan.artifacts, bundle.task->constants());
  REQUIRE(floor > 0.0);

  const AmplificationPlan lo = replan_case2(cfg, bundle, 0.2 * floor);
  const AmplificationPlan hi = replan_case2(cfg, bundle, 0.6 * floor);

  CHECK(lo.b == bundle.plan.b);
  CHECK(hi.b == bundle.plan.b);
  CHECK(lo.artifacts.r_star == bundle.plan.artifacts.r_star);
  CHECK(hi.artifacts.Z == bundle.plan.artifacts.Z);

  REQUIRE(lo.artifacts.eps.has_value());
  REQUIRE(hi.artifacts.s.has_value());
  CHECK(*lo.artifacts.eps == doctest::Approx(0.2 * floor).epsilon(1e-12));
  CHECK(*lo.artifacts.s == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(*hi.artifacts.s == doctest::Approx(0.4).epsilon(1e-9));
  // Smaller residual bias needs a larger contraction factor and a gentler a.
  CHECK(*lo.artifacts.s > *hi.artifacts.s);
  CHECK(lo.a < hi.a);
}

TEST_CASE("the default constant-step experiment closes most of the initial gap") {
  const ExperimentConfig cfg = parse_config("case = 2\n");
  double first = 0.0, last = 0.0;
  int n = 0;
  for (const auto seed : cfg.seed_list()) {
    const ExperimentBundle b = prepare_experiment(cfg, seed);
    const AggregationStrategy st =
        parse_strategy("normalized", b.task->constants().G);
    const RunTrace tr = run_rounds(*b.task, b.chan, b.plan, st, cfg.rounds, seed, b.w1);
    first += tr.rows.front().gap;
    last += tr.rows.back().gap;
    ++n;
  }
  first /= n;
  last /= n;
  CHECK(std::isfinite(first));
  CHECK(last <= first / 10.0);
}

TEST_CASE("optimize, train, bounds, and sweep round-trip through files") {
  ExperimentConfig cfg = desk_case2();
  cfg.out = fresh_dir("otafl_cli_case2_a");

  SUBCASE("optimize writes a positive design") {
    REQUIRE(cmd_optimize(cfg, /*with_oracle=*/false) == 0);
    const json plan = json::parse(
        read_text_file(cfg.out + "/case2_ridge/plan_seed1.json"));
    CHECK(plan.at("a").get<double>() > 0.0);
    CHECK(plan.at("artifacts").at("Z").get<double>() > 0.0);
    CHECK(plan.at("artifacts").at("q_max").get<double>() == doctest::Approx(0.9));

    // The dense-grid comparison is gated on a small device count.
    ExperimentConfig small = cfg;
    small.devices = 3;
    CHECK(cmd_optimize(small, /*with_oracle=*/true) == 0);
    CHECK_THROWS_AS(cmd_optimize(cfg, /*with_oracle=*/true), ConfigError);
  }

  SUBCASE("train emits per-seed traces, means, and metadata; reruns are byte-identical") {
    REQUIRE(cmd_train(cfg) == 0);
    const std::string dir = cfg.out + "/case2_ridge";
    const std::string meta_text = read_text_file(dir + "/runmeta.json");
    const json meta = json::parse(meta_text);
    CHECK(meta.at("fingerprint").get<std::string>() == cfg.fingerprint());
    CHECK(meta.at("runs").size() == 3);
    const std::string trace_text = read_text_file(dir + "/trace_normalized_seed2.csv");
    CHECK(RunTrace::from_csv(trace_text).rows.size() == 81);
    const std::string means_text = read_text_file(dir + "/means_normalized.csv");
    CHECK(means_text.rfind("t,loss,", 0) == 0);

    ExperimentConfig again = cfg;
    again.out = fresh_dir("otafl_cli_case2_b");
    REQUIRE(cmd_train(again) == 0);
    const std::string dir2 = again.out + "/case2_ridge";
    CHECK(read_text_file(dir2 + "/runmeta.json") == meta_text);
    CHECK(read_text_file(dir2 + "/trace_normalized_seed2.csv") == trace_text);
    CHECK(read_text_file(dir2 + "/means_normalized.csv") == means_text);

    SUBCASE("bounds accepts the matching run") {
      REQUIRE(cmd_bounds(cfg, "") == 0);
      const std::string csv = read_text_file(dir + "/bound_report.csv");
      CHECK(csv.rfind("T,measured,bound,margin\n", 0) == 0);
      const json rep = json::parse(read_text_file(dir + "/bound_report.json"));
      CHECK(rep.at("check").get<std::string>() == "gap");
      CHECK(rep.at("violations").get<int>() == 0);
      CHECK(rep.at("seeds").get<int>() == 3);
    }

    SUBCASE("bounds refuses traces from a different experiment") {
      ExperimentConfig other = cfg;
      other.rounds = 81;
      CHECK(cmd_bounds(other, dir) == 1);
    }

    SUBCASE("bounds flags a tampered loss column") {
      // Scale every loss by 10: the recomputed gap then towers over the bound.
      std::string tampered;
      std::size_t pos = trace_text.find('\n') + 1;
      tampered = trace_text.substr(0, pos);
      while (pos < trace_text.size()) {
        std::size_t eol = trace_text.find('\n', pos);
        std::string line = trace_text.substr(pos, eol - pos);
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = line.find(',', c1 + 1);
        const double loss = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", loss * 10.0);
        tampered += line.substr(0, c1 + 1) + buf + line.substr(c2) + "\n";
        pos = eol + 1;
      }
      for (const char* seed : {"1", "2", "3"})
        write_text_file(dir + "/trace_normalized_seed" + std::string(seed) + ".csv", tampered);
      CHECK(cmd_bounds(cfg, dir) == 3);
    }
  }

  SUBCASE("sweep writes one mean curve per bias target") {
    const ExperimentBundle probe = prepare_experiment(cfg, 1);
    const double floor =
        case2_qmax_zero_floor(probe.plan.artifacts, probe.task->constants());
    // Per-seed constants differ slightly; stay well below every floor.
    const std::vector<double> targets = {0.1 * floor, 0.4 * floor};
    REQUIRE(cmd_sweep(cfg, targets) == 0);

    const std::string dir = cfg.out + "/case2_ridge";
    const json summary = json::parse(read_text_file(dir + "/sweep_summary.json"));
    REQUIRE(summary.at("targets").size() == 2);
    const json& first = summary["targets"][0];
    const json& second = summary["targets"][1];
    CHECK(first.at("eps").get<double>() == doctest::Approx(targets[0]));
    // A smaller bias target forces a contraction factor closer to one.
    CHECK(first.at("s").get<double>() > second.at("s").get<double>());
    for (const double t : targets) {
      char label[64];
      std::snprintf(label, sizeof label, "%g", t);
      CHECK(std::filesystem::exists(dir + "/means_eps" + std::string(label) + ".csv"));
    }
  }
}
