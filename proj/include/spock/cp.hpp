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

#include "spock/model.hpp"
#include "spock/prox.hpp"
#include "spock/splitting.hpp"
#include "spock/types.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace spock
{

  enum class SolveStatus
  {
    Converged,
    MaxIterations,
    NormEstimateFailed,
  };

  inline std::string to_string(SolveStatus s)
  {
    switch (s)
    {
    case SolveStatus::Converged:
      return "converged";
    case SolveStatus::MaxIterations:
      return "max-iters";
    case SolveStatus::NormEstimateFailed:
      return "not-converged-norm-estimate";
    }
    return "unknown";
  }

  enum class UpdateKind
  {
    K0,
    K1,
    K2,
    Fallback,
  };

  inline std::string to_string(UpdateKind k)
  {
    switch (k)
    {
    case UpdateKind::K0:
      return "K0";
    case UpdateKind::K1:
      return "K1";
    case UpdateKind::K2:
      return "K2";
    case UpdateKind::Fallback:
      return "fallback";
    }
    return "unknown";
  }

  struct HistoryEntry
  {
    Index iter;
    Index l_calls;
    double xi;
  };

  /// One SPOCK outer iteration.
  struct TraceEntry
  {
    Index k;
    UpdateKind kind;
    double tau;
    double omega;
    double omega_tilde; // NaN for K0
    double rho;         // last line-search rho; NaN when not computed
    double xi;
    Index l_calls;
  };

  struct SolveReport
  {
    SolveStatus status = SolveStatus::MaxIterations;
    Index iterations = 0;
    /// Every application of L or L*, split by purpose.
    Index l_calls = 0;
    Index l_calls_operator = 0;
    Index l_calls_residual = 0;
    double final_xi = 0.0;
    double wall_ms = 0.0;
    std::vector<HistoryEntry> history;

    // SuperMann bookkeeping (zero for vanilla CP)
    Index k0_updates = 0;
    Index k1_updates = 0;
    Index k2_updates = 0;
    Index fallback_updates = 0;
    Index backtracks = 0;
    double min_radicand = 0.0;
    std::string rho_variant;
    std::vector<TraceEntry> trace;
  };

  /// Primal and dual iterates.
  struct PrimalDual
  {
    Vector z;
    Vector eta;
  };

  struct SolveResult
  {
    PrimalDual solution;
    SolveReport report;
  };

  /// sqrt(r' M r) with M = [I, -alpha L*; -alpha L, I], given L* r_eta and L r_z.
  inline double m_norm(double alpha, const Eigen::Ref<const Vector> &r_z, const Eigen::Ref<const Vector> &r_eta,
                       const Eigen::Ref<const Vector> &Ladj_r_eta, const Eigen::Ref<const Vector> &L_r_z,
                       double *radicand_out = nullptr)
  {
    const double radicand = r_z.squaredNorm() - alpha * r_z.dot(Ladj_r_eta) + r_eta.squaredNorm() -
                            alpha * r_eta.dot(L_r_z);
    if (radicand_out)
      *radicand_out = radicand;
    if (radicand < -1e-14)
      throw InternalError("m_norm: negative radicand " + std::to_string(radicand) + "; step size too large");
    return std::sqrt(std::max(radicand, 0.0));
  }

  /**
   * The Chambolle-Pock operator
   *
   *   z+   = prox_{alpha f}(z - alpha L* eta)
   *   eta+ = prox_{alpha g*}(eta + alpha L (2 z+ - z))
   *
   * on the stacked vector v = (z, eta), with L-call accounting.
   */
  class CpOperator
  {
  public:
    CpOperator(const Raocp &p, double alpha, ProxOptions opts = {})
        : L_(p), prox_(p, opts), alpha_(alpha), nz_(L_.primal().size()), neta_(L_.image().size()),
          zt_(nz_), lw_(neta_), w_(nz_)
    {
      if (!(alpha > 0.0))
        throw ValidationError("CpOperator: step size must be positive");
    }

    const Raocp &problem() const { return L_.problem(); }
    const LinearOperator &L() const { return L_; }
    ProxOracles &prox() { return prox_; }
    double alpha() const { return alpha_; }
    Index nz() const { return nz_; }
    Index neta() const { return neta_; }
    Index size() const { return nz_ + neta_; }

    Index l_calls_operator() const { return calls_operator_; }
    Index l_calls_residual() const { return calls_residual_; }
    void reset_counters() { calls_operator_ = calls_residual_ = 0; }

    void apply_T(const Eigen::Ref<const Vector> &v, Eigen::Ref<Vector> out)
    {
      const auto z = v.head(nz_);
      const auto eta = v.tail(neta_);
      auto zp = out.head(nz_);
      auto etap = out.tail(neta_);

      L_.apply_adjoint(eta, zt_);
      zp = z - alpha_ * zt_;
      prox_.prox_f(alpha_, zp);

      w_ = 2.0 * zp - z;
      L_.apply(w_, lw_);
      etap = eta + alpha_ * lw_;
      prox_.prox_g_conj(alpha_, etap);
      calls_operator_ += 2;
    }

    /// (z+, eta+) = T(z, eta)
    PrimalDual apply_T_split(const Vector &z, const Vector &eta)
    {
      Vector v(size()), tv(size());
      v << z, eta;
      apply_T(v, tv);
      return {tv.head(nz_), tv.tail(neta_)};
    }

    /// L* r_eta and L r_z for a residual r = (r_z, r_eta).
    void residual_products(const Eigen::Ref<const Vector> &r, Eigen::Ref<Vector> Ladj_r_eta, Eigen::Ref<Vector> L_r_z)
    {
      L_.apply_adjoint(r.tail(neta_), Ladj_r_eta);
      L_.apply(r.head(nz_), L_r_z);
      calls_residual_ += 2;
    }

  private:
    LinearOperator L_;
    ProxOracles prox_;
    double alpha_;
    Index nz_, neta_;
    Vector zt_, lw_, w_;
    Index calls_operator_ = 0;
    Index calls_residual_ = 0;
  };

  struct ResidualErrors
  {
    Vector xi_p;
    Vector xi_d;
    double xi;
  };

  /// xi_p = r_z / alpha - L* r_eta,  xi_d = r_eta / alpha - L r_z,  xi = max of their sup-norms.
  inline ResidualErrors residual_and_errors(double alpha, const Eigen::Ref<const Vector> &r_z,
                                            const Eigen::Ref<const Vector> &r_eta,
                                            const Eigen::Ref<const Vector> &Ladj_r_eta,
                                            const Eigen::Ref<const Vector> &L_r_z)
  {
    ResidualErrors e;
    e.xi_p = r_z / alpha - Ladj_r_eta;
    e.xi_d = r_eta / alpha - L_r_z;
    const double np = e.xi_p.size() ? e.xi_p.lpNorm<Eigen::Infinity>() : 0.0;
    const double nd = e.xi_d.size() ? e.xi_d.lpNorm<Eigen::Infinity>() : 0.0;
    e.xi = std::max(np, nd);
    return e;
  }

  inline double sup_norm_xi(double alpha, const Eigen::Ref<const Vector> &r_z, const Eigen::Ref<const Vector> &r_eta,
                            const Eigen::Ref<const Vector> &Ladj_r_eta, const Eigen::Ref<const Vector> &L_r_z)
  {
    double xi = 0.0;
    for (Index k = 0; k < r_z.size(); ++k)
      xi = std::max(xi, std::abs(r_z[k] / alpha - Ladj_r_eta[k]));
    for (Index k = 0; k < r_eta.size(); ++k)
      xi = std::max(xi, std::abs(r_eta[k] / alpha - L_r_z[k]));
    return xi;
  }

  /// Residual of the current point and its derived quantities.
  struct ResidualState
  {
    Vector r;
    Vector Ladj_r_eta;
    Vector L_r_z;
    double xi = 0.0;
    double omega = 0.0;
    double radicand = 0.0;

    explicit ResidualState(const CpOperator &op) : r(op.size()), Ladj_r_eta(op.nz()), L_r_z(op.neta()) {}

    /// r = v - T v (T v is written to `tv`); also fills xi and the M-norm.
    void evaluate(CpOperator &op, const Vector &v, Vector &tv)
    {
      op.apply_T(v, tv);
      r = v - tv;
      op.residual_products(r, Ladj_r_eta, L_r_z);
      const auto rz = r.head(op.nz());
      const auto re = r.tail(op.neta());
      xi = sup_norm_xi(op.alpha(), rz, re, Ladj_r_eta, L_r_z);
      omega = m_norm(op.alpha(), rz, re, Ladj_r_eta, L_r_z, &radicand);
    }

    /// <M r, w> for a stacked direction w.
    double m_inner(const CpOperator &op, const Vector &w) const
    {
      const auto rz = r.head(op.nz());
      const auto re = r.tail(op.neta());
      return rz.dot(w.head(op.nz())) - op.alpha() * Ladj_r_eta.dot(w.head(op.nz())) + re.dot(w.tail(op.neta())) -
             op.alpha() * L_r_z.dot(w.tail(op.neta()));
    }
  };

  struct CpSettings
  {
    double eps_abs = 1e-5;
    double eps_rel = 1e-5;
    Index max_iters = 100000;
    /// Evaluate the termination test every `check_stride` iterations.
    Index check_stride = 1;
  };

  inline Vector stack(const PrimalDual &pd)
  {
    Vector v(pd.z.size() + pd.eta.size());
    v << pd.z, pd.eta;
    return v;
  }

  inline Vector initial_point(const CpOperator &op, const std::optional<PrimalDual> &warm_start)
  {
    if (!warm_start)
      return Vector::Zero(op.size());
    if (warm_start->z.size() != op.nz() || warm_start->eta.size() != op.neta())
      throw ValidationError("warm start has wrong dimensions");
    return stack(*warm_start);
  }

  /// Vanilla CP iteration v <- T v until xi <= max(eps_abs, eps_rel xi_0).
  inline SolveResult solve_cp(CpOperator &op, const CpSettings &settings,
                              const std::optional<PrimalDual> &warm_start = std::nullopt)
  {
    if (!(settings.eps_abs > 0.0) || !(settings.eps_rel > 0.0))
      throw ValidationError("solve_cp: tolerances must be positive");
    if (settings.check_stride < 1)
      throw ValidationError("solve_cp: check stride must be >= 1");
    const auto start = std::chrono::steady_clock::now();
    op.reset_counters();

    SolveReport rep;
    Vector v = initial_point(op, warm_start);
    Vector tv(op.size());
    ResidualState res(op);
    double xi0 = 0.0;
    for (Index k = 0;; ++k)
    {
      const bool check = (k % settings.check_stride) == 0;
      if (check)
      {
        res.evaluate(op, v, tv);
        if (k == 0)
        {
          xi0 = res.xi;
          rep.min_radicand = res.radicand;
        }
        rep.min_radicand = std::min(rep.min_radicand, res.radicand);
        rep.history.push_back({k, op.l_calls_operator() + op.l_calls_residual(), res.xi});
        rep.final_xi = res.xi;
        if (res.xi <= std::max(settings.eps_abs, settings.eps_rel * xi0))
        {
          rep.status = SolveStatus::Converged;
          rep.iterations = k;
          break;
        }
      }
      else
      {
        op.apply_T(v, tv);
      }
      if (k >= settings.max_iters)
      {
        rep.status = SolveStatus::MaxIterations;
        rep.iterations = k;
        break;
      }
      v.swap(tv);
    }

    rep.l_calls_operator = op.l_calls_operator();
    rep.l_calls_residual = op.l_calls_residual();
    rep.l_calls = rep.l_calls_operator + rep.l_calls_residual;
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return {{v.head(op.nz()), v.tail(op.neta())}, std::move(rep)};
  }

} // namespace spock
