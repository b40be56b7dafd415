/*
 Copyright 2026 The spock-cpp Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include "spock/cp.hpp"
#include "spock/model.hpp"
#include "spock/splitting.hpp"
#include "spock/supermann.hpp"
#include "spock/types.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace spock
{

  enum class SolverChoice
  {
    Cp,
    Spock,
    Both,
  };

  inline std::string to_string(SolverChoice s)
  {
    switch (s)
    {
    case SolverChoice::Cp:
      return "cp";
    case SolverChoice::Spock:
      return "spock";
    case SolverChoice::Both:
      return "both";
    }
    return "?";
  }

  inline SolverChoice parse_solver_choice(const std::string &s)
  {
    if (s == "cp")
      return SolverChoice::Cp;
    if (s == "spock")
      return SolverChoice::Spock;
    if (s == "both")
      return SolverChoice::Both;
    throw ValidationError("unknown solver '" + s + "' (expected cp, spock or both)");
  }

  /// Experiment description for the server benchmark.
  struct BenchConfig
  {
    Index n_x = 5;
    Index n_u = 5;
    Index d = 2;
    Index horizon = 7;
    /// Empty means (0.3, 0.7) for d = 2 and uniform otherwise.
    std::vector<double> branch_probs;
    double risk_level = 0.95;
    double eps_abs = 1e-5;
    double eps_rel = 1e-5;
    SolverChoice solver = SolverChoice::Both;
    SupermannParams supermann;
    Index cp_max_iters = 100000;
    Index spock_max_iters = 10000;
    Index mpc_steps = 20;
    bool warm_start = true;
    std::uint64_t seed = 1;
    Index realizations = 15;
    std::vector<Index> horizons;
    double time_budget_s = 150.0;
    std::filesystem::path out_dir = "out";

    /// Closed-loop experiment defaults: N = 10, n_x = n_u = 20, eps = 1e-3.
    static BenchConfig mpc_defaults()
    {
      BenchConfig c;
      c.horizon = 10;
      c.n_x = c.n_u = 20;
      c.eps_abs = c.eps_rel = 1e-3;
      return c;
    }

    std::vector<double> resolved_branch_probs() const
    {
      if (!branch_probs.empty())
        return branch_probs;
      if (d == 2)
        return {0.3, 0.7};
      return std::vector<double>(static_cast<std::size_t>(std::max<Index>(d, 1)), 1.0 / static_cast<double>(d));
    }

    void validate() const
    {
      if (n_x < 1)
        throw ValidationError("n_x must be >= 1");
      if (n_u != n_x)
        throw ValidationError("the server benchmark has B = I, so n_u must equal n_x");
      if (d < 1)
        throw ValidationError("d must be >= 1");
      if (horizon < 1)
        throw ValidationError("horizon must be >= 1");
      const auto probs = resolved_branch_probs();
      if (static_cast<Index>(probs.size()) != d)
        throw ValidationError("branch_probs has " + std::to_string(probs.size()) + " entries but d = " +
                              std::to_string(d));
      detail::check_distribution(probs, false, "branch_probs");
      if (!(risk_level >= 0.0 && risk_level <= 1.0))
        throw ValidationError("risk level must lie in [0, 1]");
      if (!(eps_abs > 0.0) || !(eps_rel > 0.0))
        throw ValidationError("tolerances must be positive");
      if (cp_max_iters < 0 || spock_max_iters < 0)
        throw ValidationError("iteration limits must be nonnegative");
      supermann.validate();
      if (mpc_steps < 1)
        throw ValidationError("mpc steps must be >= 1");
      if (realizations < 1)
        throw ValidationError("realizations must be >= 1");
      for (std::size_t k = 1; k < horizons.size(); ++k)
        if (horizons[k] <= horizons[k - 1])
          throw ValidationError("horizons must be strictly ascending");
      for (Index n : horizons)
        if (n < 1)
          throw ValidationError("horizons must be >= 1");
      if (!(time_budget_s > 0.0))
        throw ValidationError("time budget must be positive");
    }
  };

  /// Owns a problem instance together with its CP operator.
  class BenchInstance
  {
  public:
    explicit BenchInstance(const BenchConfig &cfg)
        : cfg_(cfg),
          problem_(build_server_benchmark(cfg.n_x, cfg.d, cfg.horizon, cfg.resolved_branch_probs(), cfg.risk_level))
    {
      norm_ = estimate_operator_norm(LinearOperator(problem_), 1e-10);
      op_.emplace(problem_, default_step_size(norm_));
    }

    BenchInstance(const BenchInstance &) = delete;
    BenchInstance &operator=(const BenchInstance &) = delete;

    const Raocp &problem() const { return problem_; }
    CpOperator &op() { return *op_; }
    double operator_norm() const { return norm_; }

    SolveResult solve(SolverChoice which, const std::optional<PrimalDual> &warm = std::nullopt)
    {
      if (which == SolverChoice::Cp)
      {
        CpSettings s;
        s.eps_abs = cfg_.eps_abs;
        s.eps_rel = cfg_.eps_rel;
        s.max_iters = cfg_.cp_max_iters;
        return solve_cp(*op_, s, warm);
      }
      if (which == SolverChoice::Spock)
      {
        SpockSettings s;
        s.eps_abs = cfg_.eps_abs;
        s.eps_rel = cfg_.eps_rel;
        s.max_iters = cfg_.spock_max_iters;
        s.params = cfg_.supermann;
        return solve_spock(*op_, s, warm);
      }
      throw ValidationError("solve: pick a single solver");
    }

  private:
    BenchConfig cfg_;
    Raocp problem_;
    double norm_ = 0.0;
    std::optional<CpOperator> op_;
  };

  inline std::vector<SolverChoice> selected_solvers(SolverChoice s)
  {
    if (s == SolverChoice::Both)
      return {SolverChoice::Cp, SolverChoice::Spock};
    return {s};
  }

  // ---- CSV emission -------------------------------------------------------

  namespace detail
  {
    inline std::ofstream open_csv(const std::filesystem::path &path, const char *header)
    {
      if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
      std::ofstream os(path);
      if (!os)
        throw InternalError("cannot open " + path.string() + " for writing");
      os.precision(std::numeric_limits<double>::max_digits10);
      os << header << '\n';
      return os;
    }
  } // namespace detail

  inline void write_residual_csv(const std::filesystem::path &path, const SolveReport &rep)
  {
    auto os = detail::open_csv(path, "iter,l_calls,xi");
    for (const auto &h : rep.history)
      os << h.iter << ',' << h.l_calls << ',' << h.xi << '\n';
  }

  inline void write_trace_csv(const std::filesystem::path &path, const SolveReport &rep)
  {
    auto os = detail::open_csv(path, "k,type,tau,omega,omega_tilde,xi,l_calls");
    for (const auto &t : rep.trace)
      os << t.k << ',' << to_string(t.kind) << ',' << t.tau << ',' << t.omega << ',' << t.omega_tilde << ',' << t.xi
         << ',' << t.l_calls << '\n';
  }

  struct SummaryRow
  {
    std::string solver;
    Index horizon = 0;
    Index n_x = 0;
    Index iterations = 0;
    Index l_calls = 0;
    double wall_ms = 0.0;
    SolveStatus status = SolveStatus::MaxIterations;
    double s0 = 0.0;
  };

  inline void write_summary_csv(const std::filesystem::path &path, const std::vector<SummaryRow> &rows)
  {
    auto os = detail::open_csv(path, "solver,N,nx,iters,l_calls,wall_ms,status");
    for (const auto &r : rows)
      os << r.solver << ',' << r.horizon << ',' << r.n_x << ',' << r.iterations << ',' << r.l_calls << ','
         << r.wall_ms << ',' << to_string(r.status) << '\n';
  }

  // ---- open loop ----------------------------------------------------------

  struct OpenLoopRun
  {
    SolverChoice solver = SolverChoice::Cp;
    SolveResult result;
    SummaryRow summary;
  };

  inline std::string run_tag(SolverChoice s, Index horizon, Index n_x)
  {
    return to_string(s) + "_N" + std::to_string(horizon) + "_nx" + std::to_string(n_x);
  }

  inline SummaryRow make_summary(SolverChoice s, const BenchConfig &cfg, const SolveResult &res)
  {
    return {to_string(s), cfg.horizon, cfg.n_x, res.report.iterations, res.report.l_calls,
            res.report.wall_ms, res.report.status, res.solution.z.size() > 0 ? res.solution.z[0] : 0.0};
  }

  /// Solves the benchmark with each selected solver. With `write_files`,
  /// emits residuals_<tag>.csv per solver, spock trace files and summary.csv.
  inline std::vector<OpenLoopRun> run_open_loop(const BenchConfig &cfg, bool write_files = true)
  {
    cfg.validate();
    BenchInstance inst(cfg);
    std::vector<OpenLoopRun> runs;
    std::vector<SummaryRow> rows;
    for (SolverChoice s : selected_solvers(cfg.solver))
    {
      OpenLoopRun run{s, inst.solve(s), {}};
      run.summary = make_summary(s, cfg, run.result);
      rows.push_back(run.summary);
      if (write_files)
      {
        const std::string tag = run_tag(s, cfg.horizon, cfg.n_x);
        write_residual_csv(cfg.out_dir / ("residuals_" + tag + ".csv"), run.result.report);
        if (s == SolverChoice::Spock)
          write_trace_csv(cfg.out_dir / ("trace_" + tag + ".csv"), run.result.report);
      }
      runs.push_back(std::move(run));
    }
    if (write_files)
      write_summary_csv(cfg.out_dir / "summary.csv", rows);
    return runs;
  }

  // ---- horizon sweep ------------------------------------------------------

  /// Runs each solver over ascending horizons. A solver is not run beyond the
  /// first horizon whose solve exceeds the per-solve time budget.
  inline std::vector<SummaryRow> run_horizon_sweep(const BenchConfig &cfg, const std::vector<Index> &horizons,
                                                   bool write_files = true)
  {
    BenchConfig base = cfg;
    base.horizons = horizons;
    base.validate();
    if (horizons.empty())
      throw ValidationError("sweep needs at least one horizon");

    std::vector<SummaryRow> rows;
    for (SolverChoice s : selected_solvers(cfg.solver))
    {
      for (Index n : horizons)
      {
        BenchConfig c = base;
        c.horizon = n;
        BenchInstance inst(c);
        const SolveResult res = inst.solve(s);
        rows.push_back(make_summary(s, c, res));
        if (write_files)
          write_residual_csv(c.out_dir / ("residuals_" + run_tag(s, n, c.n_x) + ".csv"), res.report);
        if (res.report.wall_ms > 1000.0 * c.time_budget_s)
          break;
      }
    }
    if (write_files)
      write_summary_csv(base.out_dir / "sweep_summary.csv", rows);
    return rows;
  }

  // ---- closed-loop MPC ----------------------------------------------------

  struct MpcStep
  {
    Index step = 0;
    Index event = 0;
    Vector state;
    Vector input;
    Index iterations = 0;
    Index l_calls = 0;
    double wall_ms = 0.0;
    bool warm = false;
    SolveStatus status = SolveStatus::MaxIterations;
  };

  struct MpcTrace
  {
    Index realization = 0;
    bool warm_start = false;
    std::vector<MpcStep> steps;
    /// State after the last applied input.
    Vector final_state;
  };

  inline std::uint64_t realization_seed(std::uint64_t seed, Index realization)
  {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(realization)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  }

  /// Closed-loop simulation on a single problem instance. The disturbance
  /// sequence depends only on (seed, realization), so warm and cold runs see
  /// the same events.
  inline MpcTrace run_mpc_realization(BenchInstance &inst, const BenchConfig &cfg, SolverChoice solver,
                                      bool warm_start, Index realization)
  {
    const Raocp &p = inst.problem();
    const PrimalLayout lay(p);
    std::mt19937_64 rng(realization_seed(cfg.seed, realization));
    const auto probs = cfg.resolved_branch_probs();
    std::discrete_distribution<Index> event_dist(probs.begin(), probs.end());

    MpcTrace trace;
    trace.realization = realization;
    trace.warm_start = warm_start;
    Vector x = p.initial_state;
    std::optional<PrimalDual> warm;
    for (Index t = 1; t <= cfg.mpc_steps; ++t)
    {
      inst.op().prox().set_initial_state(x);
      const bool use_warm = warm_start && warm.has_value();
      SolveResult res = inst.solve(solver, use_warm ? warm : std::nullopt);

      MpcStep st;
      st.step = t;
      st.state = x;
      st.input = res.solution.z.segment(lay.u(0), p.n_u);
      st.iterations = res.report.iterations;
      st.l_calls = res.report.l_calls;
      st.wall_ms = res.report.wall_ms;
      st.warm = use_warm;
      st.status = res.report.status;
      st.event = event_dist(rng);

      x = p.dynamics.A[st.event] * x + p.dynamics.B[st.event] * st.input;
      trace.steps.push_back(std::move(st));
      warm = std::move(res.solution);
    }
    inst.op().prox().set_initial_state(p.initial_state);
    trace.final_state = x;
    return trace;
  }

  inline void write_mpc_csv(const std::filesystem::path &path, const MpcTrace &trace)
  {
    auto os = detail::open_csv(path, "step,event,iters,l_calls,wall_ms,warm,x_norm,u_norm");
    for (const auto &s : trace.steps)
      os << s.step << ',' << s.event << ',' << s.iterations << ',' << s.l_calls << ',' << s.wall_ms << ','
         << (s.warm ? 1 : 0) << ',' << s.state.norm() << ',' << s.input.norm() << '\n';
  }

  /// Runs `cfg.realizations` closed-loop simulations with the first selected
  /// solver (spock when both are selected) and writes mpc_<warm|cold>_r<k>.csv.
  inline std::vector<MpcTrace> run_mpc(const BenchConfig &cfg, bool write_files = true)
  {
    cfg.validate();
    const SolverChoice solver = cfg.solver == SolverChoice::Both ? SolverChoice::Spock : cfg.solver;
    BenchInstance inst(cfg);
    std::vector<MpcTrace> traces;
    for (Index r = 0; r < cfg.realizations; ++r)
    {
      MpcTrace tr = run_mpc_realization(inst, cfg, solver, cfg.warm_start, r);
      if (write_files)
      {
        const std::string name =
            std::string("mpc_") + (cfg.warm_start ? "warm" : "cold") + "_r" + std::to_string(r) + ".csv";
        write_mpc_csv(cfg.out_dir / name, tr);
      }
      traces.push_back(std::move(tr));
    }
    return traces;
  }

} // namespace spock
