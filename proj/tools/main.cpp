#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvb/acceptance.hpp"
#include "mvb/parallel.hpp"
#include "mvb/scenario.hpp"

namespace {

struct CommonArgs {
  std::string config;
  long long seed = -1;
  long long particles = 0;
  long long steps = 0;
  std::string out;
  int threads = 0;
};

void add_common(CLI::App* sub, CommonArgs& c) {
  sub->add_option("--config", c.config, "json scenario config path");
  sub->add_option("--seed", c.seed, "override the config seed");
  sub->add_option("--particles", c.particles, "override the particle count");
  sub->add_option("--steps", c.steps, "override the step count");
  sub->add_option("--out", c.out, "csv output path");
  sub->add_option("--threads", c.threads, "worker cap (results do not depend on it)");
}

mvb::ScenarioConfig resolve(const CommonArgs& c) {
  mvb::ScenarioConfig cfg;
  if (!c.config.empty()) cfg = mvb::load_config(c.config);
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  if (c.particles > 0) cfg.particles = static_cast<std::size_t>(c.particles);
  if (c.steps > 0) cfg.n_steps = static_cast<std::size_t>(c.steps);
  if (!c.out.empty()) cfg.output = c.out;
  if (c.threads > 0) mvb::set_max_threads(c.threads);
  return cfg;
}

int run_with_methods(const CommonArgs& c, const std::vector<std::string>& methods) {
  mvb::ScenarioConfig cfg = resolve(c);
  if (!methods.empty()) cfg.methods = methods;
  mvb::ScenarioRun run = mvb::run_scenario(cfg);
  std::cout << mvb::to_csv(run.rows);
  if (!run.agreement) {
    std::cerr << "estimates disagree beyond 3 combined std errors\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"monte carlo measure-derivative estimators for mckean-vlasov dynamics"};
  app.set_version_flag("--version", "0.1.0");
  app.require_subcommand(1);

  CommonArgs c;
  std::string axis = "dt";
  std::vector<double> values;
  double reference = std::numeric_limits<double>::quiet_NaN();

  CLI::App* sim = app.add_subcommand("simulate", "terminal statistics of the particle system");
  add_common(sim, c);
  CLI::App* bis = app.add_subcommand("bismut", "stochastic-integral weight estimator");
  add_common(bis, c);
  CLI::App* deg = app.add_subcommand("degenerate", "estimator for the two-block degenerate system");
  add_common(deg, c);
  CLI::App* ora = app.add_subcommand("oracle", "finite-difference and pathwise reference estimates");
  add_common(ora, c);
  CLI::App* tvc = app.add_subcommand("tv", "terminal-law histogram distance and its bound");
  add_common(tvc, c);
  CLI::App* swp = app.add_subcommand("sweep", "convergence sweep along dt, N or epsilon");
  add_common(swp, c);
  swp->add_option("--axis", axis, "dt | N | epsilon")->required();
  swp->add_option("--values", values, "sweep values, at least 3, monotone")
      ->required()
      ->delimiter(',');
  swp->add_option("--reference", reference, "limit value for the dt axis");
  CLI::App* acc = app.add_subcommand("accept", "run the acceptance suite");
  add_common(acc, c);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run_with_methods(c, {"simulate"});
    if (bis->parsed()) return run_with_methods(c, {"bismut"});
    if (deg->parsed()) return run_with_methods(c, {"degenerate"});
    if (ora->parsed()) {
      mvb::ScenarioConfig cfg = resolve(c);
      mvb::BuiltModel bm = mvb::make_model(cfg.model);
      mvb::TestFunction f = mvb::make_test_function(cfg.f, bm.model->dim());
      bool square = bm.model->noise_dim() == bm.model->dim();
      cfg.methods = (f.has_grad() && square)
                        ? std::vector<std::string>{"finite_diff", "pathwise"}
                        : std::vector<std::string>{"finite_diff"};
      mvb::ScenarioRun run = mvb::run_scenario(cfg);
      std::cout << mvb::to_csv(run.rows);
      return run.agreement ? 0 : 1;
    }
    if (tvc->parsed()) {
      mvb::ScenarioConfig cfg = resolve(c);
      std::vector<mvb::ResultRow> rows = mvb::run_tv_comparison(cfg);
      std::cout << mvb::to_csv(rows);
      return rows.at(0).value <= rows.at(1).value ? 0 : 1;
    }
    if (swp->parsed()) {
      mvb::ScenarioConfig cfg = resolve(c);
      mvb::SweepResult s = mvb::convergence_sweep(cfg, axis, values, reference);
      std::cout << mvb::to_csv(s.rows);
      std::cout << "# axis " << axis << " slope " << s.slope << "\n";
      if (!cfg.output.empty()) mvb::write_csv(cfg.output, s.rows);
      return 0;
    }
    if (acc->parsed()) {
      if (c.threads > 0)
        std::cerr << "note: the suite fixes its own worker caps for the determinism check\n";
      mvb::AcceptanceReport rep = mvb::run_all(std::cout);
      std::cout << (rep.all_passed ? "acceptance: all criteria passed"
                                   : "acceptance: FAILURES present")
                << "\n";
      if (!c.out.empty()) mvb::write_csv(c.out, rep.rows);
      return rep.all_passed ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
