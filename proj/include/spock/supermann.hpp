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

#include "spock/anderson.hpp"
#include "spock/cp.hpp"
#include "spock/types.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>

namespace spock
{

  enum class RhoVariant
  {
    /// rho = |r~|_M^2 - 2 alpha <r~, v~ - v>_M
    Paper,
    /// rho = |r~|_M^2 - <r~, v~ - v>_M (hyperplane projection for firmly nonexpansive T)
    Classic,
  };

  inline std::string to_string(RhoVariant v) { return v == RhoVariant::Paper ? "paper" : "classic"; }

  inline RhoVariant parse_rho_variant(const std::string &s)
  {
    if (s == "paper")
      return RhoVariant::Paper;
    if (s == "classic")
      return RhoVariant::Classic;
    throw ValidationError("unknown rho variant '" + s + "' (expected paper or classic)");
  }

  struct SupermannParams
  {
    double c0 = 0.99;
    double c1 = 0.99;
    double c2 = 0.99;
    double beta = 0.5;
    double sigma = 0.1;
    double lambda = 1.0;
    Index max_backtracks = 40;
    /// Anderson memory m; the buffers hold m - 1 difference pairs. m = 1 gives d = -r.
    Index memory = 3;
    RhoVariant rho_variant = RhoVariant::Paper;
    /// Clear the Anderson buffers after K2 and fallback steps.
    bool reset_on_safeguard = true;

    void validate() const
    {
      const auto in_unit = [](double x) { return x >= 0.0 && x < 1.0; };
      const auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };
      if (!in_unit(c0) || !in_unit(c1) || !in_unit(c2))
        throw ValidationError("SupermannParams: c0, c1, c2 must lie in [0, 1)");
      if (!open_unit(beta) || !open_unit(sigma))
        throw ValidationError("SupermannParams: beta and sigma must lie in (0, 1)");
      if (!(lambda > 0.0 && lambda < 2.0))
        throw ValidationError("SupermannParams: lambda must lie in (0, 2)");
      if (max_backtracks < 1)
        throw ValidationError("SupermannParams: max_backtracks must be >= 1");
      if (memory < 1)
        throw ValidationError("SupermannParams: memory must be >= 1");
    }
  };

  struct SpockSettings
  {
    double eps_abs = 1e-5;
    double eps_rel = 1e-5;
    Index max_iters = 10000;
    SupermannParams params;
  };

  /**
   * SuperMann iteration around the CP operator T with Anderson directions.
   *
   * Each outer iteration tries, in order: a blind K0 step v + d when the
   * residual M-norm dropped below c0 times the last K0 norm; then a line
   * search over tau = 1, beta, beta^2, ... accepting an educated K1 step
   * v + tau d on sufficient residual decrease, or a K2 step that projects v
   * onto the hyperplane defined by the trial point. After max_backtracks
   * failed trials a plain step v <- T v is taken and recorded as a fallback.
   *
   * The residual of an accepted K1 trial is reused as the next residual.
   */
  inline SolveResult solve_spock(CpOperator &op, const SpockSettings &settings,
                                 const std::optional<PrimalDual> &warm_start = std::nullopt)
  {
    const SupermannParams &par = settings.params;
    par.validate();
    if (!(settings.eps_abs > 0.0) || !(settings.eps_rel > 0.0))
      throw ValidationError("solve_spock: tolerances must be positive");
    const auto start = std::chrono::steady_clock::now();
    op.reset_counters();
    const double alpha = op.alpha();
    const double rho_factor = par.rho_variant == RhoVariant::Paper ? 2.0 * alpha : 1.0;

    SolveReport rep;
    rep.rho_variant = to_string(par.rho_variant);
    const auto calls = [&] { return op.l_calls_operator() + op.l_calls_residual(); };

    Vector v = initial_point(op, warm_start);
    Vector tv(op.size()), v_trial(op.size()), tv_trial(op.size()), step(op.size());
    Vector v_prev(op.size()), r_prev(op.size());
    ResidualState res(op), trial(op);
    AndersonBuffers aa(op.size(), par.memory);

    res.evaluate(op, v, tv);
    rep.min_radicand = res.radicand;
    const double xi0 = res.xi;
    const double tol = std::max(settings.eps_abs, settings.eps_rel * xi0);
    double zeta = res.omega;
    double omega_safe = zeta;
    bool have_prev = false;

    for (Index k = 0;; ++k)
    {
      rep.history.push_back({k, calls(), res.xi});
      rep.final_xi = res.xi;
      if (res.xi <= tol)
      {
        rep.status = SolveStatus::Converged;
        rep.iterations = k;
        break;
      }
      if (k >= settings.max_iters)
      {
        rep.status = SolveStatus::MaxIterations;
        rep.iterations = k;
        break;
      }

      if (have_prev)
        aa.push(v - v_prev, res.r - r_prev);
      v_prev = v;
      r_prev = res.r;
      have_prev = true;
      const Vector d = aa.direction(res.r);
      const double omega = res.omega;

      const double nan = std::numeric_limits<double>::quiet_NaN();
      TraceEntry entry{k, UpdateKind::K0, 1.0, omega, nan, nan, res.xi, 0};
      if (omega <= par.c0 * zeta)
      {
        v += d;
        zeta = omega;
        res.evaluate(op, v, tv);
        ++rep.k0_updates;
      }
      else
      {
        double tau = 1.0;
        for (Index bt = 0;; ++bt)
        {
          v_trial = v + tau * d;
          trial.evaluate(op, v_trial, tv_trial);
          rep.min_radicand = std::min(rep.min_radicand, trial.radicand);
          const double omega_t = trial.omega;
          entry.tau = tau;
          entry.omega_tilde = omega_t;

          if ((omega <= omega_safe && omega_t <= par.c1 * omega) || omega_t == 0.0)
          {
            v.swap(v_trial);
            tv.swap(tv_trial);
            std::swap(res, trial);
            omega_safe = omega_t + std::pow(par.c2, static_cast<double>(k));
            entry.kind = UpdateKind::K1;
            ++rep.k1_updates;
            break;
          }

          step = v_trial - v;
          const double rho = omega_t * omega_t - rho_factor * trial.m_inner(op, step);
          entry.rho = rho;
          if (rho >= par.sigma * omega_t * omega)
          {
            v -= (par.lambda * rho / (omega_t * omega_t)) * trial.r;
            res.evaluate(op, v, tv);
            entry.kind = UpdateKind::K2;
            ++rep.k2_updates;
            break;
          }

          ++rep.backtracks;
          if (bt + 1 >= par.max_backtracks)
          {
            v -= res.r; // v <- T v
            res.evaluate(op, v, tv);
            entry.kind = UpdateKind::Fallback;
            ++rep.fallback_updates;
            break;
          }
          tau *= par.beta;
        }
        if (par.reset_on_safeguard && (entry.kind == UpdateKind::K2 || entry.kind == UpdateKind::Fallback))
          aa.reset();
      }
      rep.min_radicand = std::min(rep.min_radicand, res.radicand);
      entry.l_calls = calls();
      rep.trace.push_back(entry);
    }

    rep.l_calls_operator = op.l_calls_operator();
    rep.l_calls_residual = op.l_calls_residual();
    rep.l_calls = calls();
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return {{v.head(op.nz()), v.tail(op.neta())}, std::move(rep)};
  }

} // namespace spock
