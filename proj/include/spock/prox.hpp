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
#include "spock/risk.hpp"
#include "spock/splitting.hpp"
#include "spock/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <map>
#include <memory>
#include <vector>

namespace spock
{

  /**
   * Offline factorization for the projection onto the dynamics subspace S1.
   *
   * P^j = I at the leaves, then backwards over the stages
   *   R~^i = I + sum B'P B,  K^i = -(R~^i)^-1 sum B'P A,
   *   Abar = A + B K^i,      P^i = I + K'K + sum Abar' P Abar,
   * where the sums run over the children of i.
   */
  struct DpCache
  {
    std::vector<Matrix> K;                    // nonleaf, n_u x n_x
    std::vector<Eigen::LLT<Matrix>> R_tilde;  // nonleaf
    std::vector<Matrix> A_bar;                // nodes >= 1 (entry 0 empty)
    std::vector<Matrix> P;                    // all nodes
    std::vector<Matrix> PB;                   // nodes >= 1: P^i B^i
  };

  inline DpCache dp_offline(const Raocp &p)
  {
    const ScenarioTree &tree = p.tree;
    const Index nx = p.n_x, nu = p.n_u;
    DpCache c;
    c.K.resize(tree.num_nonleaf());
    c.R_tilde.resize(tree.num_nonleaf());
    c.A_bar.resize(tree.num_nodes());
    c.P.resize(tree.num_nodes());
    c.PB.resize(tree.num_nodes());
    for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
      c.P[j] = Matrix::Identity(nx, nx);

    Matrix R_tilde(nu, nu), BPA(nu, nx);
    for (Index t = tree.horizon() - 1; t >= 0; --t)
    {
      const NodeRange stage = tree.nodes(t);
      for (Index i = stage.begin; i < stage.end; ++i)
      {
        const NodeRange ch = tree.children_of(i);
        R_tilde.setIdentity();
        BPA.setZero();
        for (Index k = ch.begin; k < ch.end; ++k)
        {
          c.PB[k].noalias() = c.P[k] * p.B(k);
          R_tilde.noalias() += p.B(k).transpose() * c.PB[k];
          BPA.noalias() += c.PB[k].transpose() * p.A(k);
        }
        c.R_tilde[i].compute(0.5 * (R_tilde + R_tilde.transpose()));
        if (c.R_tilde[i].info() != Eigen::Success)
          throw InternalError("dp_offline: Cholesky factorization failed at node " + std::to_string(i));
        c.K[i] = -c.R_tilde[i].solve(BPA);

        Matrix P = Matrix::Identity(nx, nx);
        P.noalias() += c.K[i].transpose() * c.K[i];
        for (Index k = ch.begin; k < ch.end; ++k)
        {
          c.A_bar[k] = p.A(k);
          c.A_bar[k].noalias() += p.B(k) * c.K[i];
          P.noalias() += c.A_bar[k].transpose() * (c.P[k] * c.A_bar[k]);
        }
        c.P[i] = 0.5 * (P + P.transpose());
        // P >= I by construction, so this detects only numerical breakdown.
        if (Eigen::LLT<Matrix>(c.P[i]).info() != Eigen::Success)
          throw InternalError("dp_offline: cost-to-go matrix lost definiteness at node " + std::to_string(i));
      }
    }
    return c;
  }

  /// Scratch storage for project_s1; sized once per problem.
  struct DpWorkspace
  {
    Matrix q; // n_x x num_nodes
    Matrix d; // n_u x num_nonleaf
    Vector rhs;

    explicit DpWorkspace(const Raocp &p)
        : q(p.n_x, p.tree.num_nodes()), d(p.n_u, p.tree.num_nonleaf()), rhs(p.n_u) {}
  };

  /**
   * Projects the (x, u) part of z onto S1 = {x^0 = x_init, x+ = A x + B u}.
   * `z1` is the contiguous z1 segment (states of all nodes, then nonleaf inputs).
   */
  template <typename Derived>
  void project_s1_inplace(const Raocp &p, const DpCache &cache, const Vector &x_init,
                          Eigen::MatrixBase<Derived> &z1, DpWorkspace &ws)
  {
    const ScenarioTree &tree = p.tree;
    const Index nx = p.n_x, nu = p.n_u;
    const Index u_off = tree.num_nodes() * nx;
    const auto xbar = [&](Index i) { return z1.segment(i * nx, nx); };
    const auto ubar = [&](Index i) { return z1.segment(u_off + i * nu, nu); };

    for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
      ws.q.col(j) = -xbar(j);
    for (Index t = tree.horizon() - 1; t >= 0; --t)
    {
      const NodeRange stage = tree.nodes(t);
      for (Index i = stage.begin; i < stage.end; ++i)
      {
        const NodeRange ch = tree.children_of(i);
        ws.rhs = ubar(i);
        for (Index k = ch.begin; k < ch.end; ++k)
          ws.rhs.noalias() -= p.B(k).transpose() * ws.q.col(k);
        cache.R_tilde[i].solveInPlace(ws.rhs);
        ws.d.col(i) = ws.rhs;
        if (t == 0)
          continue; // q at the root is never read
        auto qi = ws.q.col(i);
        ws.rhs -= ubar(i);
        qi.noalias() = cache.K[i].transpose() * ws.rhs;
        qi -= xbar(i);
        for (Index k = ch.begin; k < ch.end; ++k)
        {
          auto qk = ws.q.col(k);
          qk.noalias() += cache.PB[k] * ws.d.col(i);
          qi.noalias() += cache.A_bar[k].transpose() * qk;
        }
      }
    }

    z1.segment(0, nx) = x_init;
    for (Index t = 0; t < tree.horizon(); ++t)
    {
      const NodeRange stage = tree.nodes(t);
      for (Index i = stage.begin; i < stage.end; ++i)
      {
        auto ui = z1.segment(u_off + i * nu, nu);
        ui = ws.d.col(i);
        ui.noalias() += cache.K[i] * z1.segment(i * nx, nx);
        const NodeRange ch = tree.children_of(i);
        for (Index k = ch.begin; k < ch.end; ++k)
        {
          auto xk = z1.segment(k * nx, nx);
          xk.noalias() = p.A(k) * z1.segment(i * nx, nx);
          xk.noalias() += p.B(k) * z1.segment(u_off + i * nu, nu);
        }
      }
    }
  }

  /// Convenience overload on a full primal vector.
  inline Vector project_s1(const Raocp &p, const DpCache &cache, const Vector &z)
  {
    const PrimalLayout lay(p);
    Vector out = z;
    DpWorkspace ws(p);
    auto z1 = out.segment(lay.z1_offset(), lay.z1_size());
    project_s1_inplace(p, cache, p.initial_state, z1, ws);
    return out;
  }

  /**
   * Projectors onto ker M^i, M^i = [E' -I -I; F' 0 0], acting on (y^i, tau^[i], s^[i]).
   * Each stores an orthonormal basis of the row space of M^i, so
   * proj(v) = v - Q Q' v. Rank deficiency is handled by the pivoted QR rank.
   */
  class KernelProjectors
  {
  public:
    KernelProjectors() = default;
    explicit KernelProjectors(const Raocp &p)
    {
      std::map<const RiskConicRep *, std::shared_ptr<const Matrix>> shared;
      basis_.resize(p.tree.num_nonleaf());
      for (Index i = 0; i < p.tree.num_nonleaf(); ++i)
      {
        const RiskConicRep *rep = p.risk[i].get();
        auto it = shared.find(rep);
        if (it == shared.end())
          it = shared.emplace(rep, std::make_shared<const Matrix>(row_space_basis(kernel_matrix(*rep)))).first;
        basis_[i] = it->second;
      }
    }

    static Matrix kernel_matrix(const RiskConicRep &r)
    {
      const Index n = r.n, ny = r.dim();
      Matrix M = Matrix::Zero(n + r.n_nu, ny + 2 * n);
      M.topLeftCorner(n, ny) = r.E.transpose();
      M.block(0, ny, n, n) = -Matrix::Identity(n, n);
      M.block(0, ny + n, n, n) = -Matrix::Identity(n, n);
      if (r.n_nu > 0)
        M.bottomLeftCorner(r.n_nu, ny) = r.F.transpose();
      return M;
    }

    static Matrix row_space_basis(const Matrix &M)
    {
      Eigen::ColPivHouseholderQR<Matrix> qr(M.transpose());
      qr.setThreshold(1e-12);
      const Index rank = qr.rank();
      Matrix Q = qr.householderQ();
      return Q.leftCols(rank);
    }

    const Matrix &basis(Index i) const { return *basis_[i]; }

    /// In-place projection of one stacked (y, tau^[i], s^[i]) vector.
    template <typename Derived>
    void project(Index i, Eigen::MatrixBase<Derived> &v) const
    {
      const Matrix &Q = *basis_[i];
      v.noalias() -= Q * (Q.transpose() * v);
    }

  private:
    std::vector<std::shared_ptr<const Matrix>> basis_;
  };

  inline KernelProjectors build_kernel_projectors(const Raocp &p) { return KernelProjectors(p); }

  /// Projects the z2 part (y, tau, s for nodes >= 1) of a full primal vector onto S2.
  template <typename Derived>
  void project_s2_inplace(const Raocp &p, const PrimalLayout &lay, const KernelProjectors &proj,
                          Eigen::MatrixBase<Derived> &z, Vector &scratch)
  {
    const ScenarioTree &tree = p.tree;
    for (Index i = 0; i < tree.num_nonleaf(); ++i)
    {
      const NodeRange ch = tree.children_of(i);
      const Index ny = lay.y_dim(i), n = ch.size();
      scratch.resize(ny + 2 * n);
      scratch.head(ny) = z.segment(lay.y(i), ny);
      scratch.segment(ny, n) = z.segment(lay.tau(ch.begin), n);
      scratch.tail(n) = z.segment(lay.s(ch.begin), n);
      proj.project(i, scratch);
      z.segment(lay.y(i), ny) = scratch.head(ny);
      z.segment(lay.tau(ch.begin), n) = scratch.segment(ny, n);
      z.segment(lay.s(ch.begin), n) = scratch.tail(n);
    }
  }

  inline Vector project_s2(const Raocp &p, const KernelProjectors &proj, const Vector &z)
  {
    const PrimalLayout lay(p);
    Vector out = z, scratch;
    project_s2_inplace(p, lay, proj, out, scratch);
    return out;
  }

  namespace detail
  {
    // SOC + a with a = (0, ..., 1/2, -1/2).
    template <typename Derived>
    void project_translated_soc(Eigen::MatrixBase<Derived> &&v)
    {
      const Index n = v.size();
      v[n - 2] -= 0.5;
      v[n - 1] += 0.5;
      project_soc_inplace(v);
      v[n - 2] += 0.5;
      v[n - 1] -= 0.5;
    }
  } // namespace detail

  /// Blockwise projection onto S3 in the image layout.
  template <typename Derived>
  void project_s3_inplace(const Raocp &p, const ImageLayout &lay, Eigen::MatrixBase<Derived> &eta)
  {
    const ScenarioTree &tree = p.tree;
    for (Index i = 0; i < tree.num_nonleaf(); ++i)
    {
      auto y = eta.segment(lay.nonleaf_y(i), lay.nonleaf_y_dim(i));
      project_dual_cone_inplace(p.risk_at(i).cone, y);
      double &scalar = eta[lay.nonleaf_scalar(i)];
      scalar = std::max(scalar, 0.0);
      p.constraint(i).project_inplace(eta.segment(lay.nonleaf_c(i), lay.nonleaf_c_dim(i)));
    }
    for (Index i = 1; i < tree.num_nodes(); ++i)
      detail::project_translated_soc(eta.segment(lay.node(i), lay.node_dim()));
    for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
    {
      p.terminal_set(j).project_inplace(eta.segment(lay.leaf_c(j), lay.leaf_c_dim(j)));
      detail::project_translated_soc(eta.segment(lay.leaf_soc(j), lay.leaf_soc_dim()));
    }
  }

  inline Vector project_s3(const Raocp &p, const Vector &eta)
  {
    const ImageLayout lay(p);
    Vector out = eta;
    project_s3_inplace(p, lay, out);
    return out;
  }

  struct ProxOptions
  {
    /// Use eta - proj(eta / alpha) instead of eta - alpha proj(eta / alpha).
    bool paper_literal_prox = false;
  };

  /**
   * Proximal oracles of f(z) = s0 + indicator(S1) + indicator(S2) and of g*,
   * the conjugate of the indicator of S3. Owns the offline caches and the
   * online scratch storage; not thread-safe.
   */
  class ProxOracles
  {
  public:
    ProxOracles(const Raocp &p, ProxOptions opts = {})
        : p_(&p), primal_(p), image_(p), cache_(dp_offline(p)), kernels_(p), ws_(p),
          initial_state_(p.initial_state), opts_(opts) {}

    const DpCache &dp_cache() const { return cache_; }
    const KernelProjectors &kernels() const { return kernels_; }
    const Vector &initial_state() const { return initial_state_; }
    void set_initial_state(const Vector &x)
    {
      if (x.size() != p_->n_x)
        throw ValidationError("set_initial_state: wrong state dimension");
      initial_state_ = x;
    }
    const ProxOptions &options() const { return opts_; }

    /// z <- prox_{alpha f}(z)
    template <typename Derived>
    void prox_f(double alpha, Eigen::MatrixBase<Derived> &z)
    {
      z[0] -= alpha;
      auto z1 = z.segment(primal_.z1_offset(), primal_.z1_size());
      project_s1_inplace(*p_, cache_, initial_state_, z1, ws_);
      project_s2_inplace(*p_, primal_, kernels_, z, scratch_);
    }

    /// eta <- prox_{alpha g*}(eta), by the extended Moreau decomposition.
    template <typename Derived>
    void prox_g_conj(double alpha, Eigen::MatrixBase<Derived> &eta)
    {
      proj_.resize(eta.size());
      proj_ = eta / alpha;
      project_s3_inplace(*p_, image_, proj_);
      if (opts_.paper_literal_prox)
        eta -= proj_;
      else
        eta -= alpha * proj_;
    }

  private:
    const Raocp *p_;
    PrimalLayout primal_;
    ImageLayout image_;
    DpCache cache_;
    KernelProjectors kernels_;
    DpWorkspace ws_;
    Vector initial_state_;
    ProxOptions opts_;
    Vector scratch_, proj_;
  };

  inline Vector prox_f(const Raocp &p, double alpha, const Vector &z)
  {
    if (!(alpha > 0.0))
      throw ValidationError("prox_f: step must be positive");
    ProxOracles oracles(p);
    Vector out = z;
    oracles.prox_f(alpha, out);
    return out;
  }

  inline Vector prox_g_conj(const Raocp &p, double alpha, const Vector &eta, ProxOptions opts = {})
  {
    if (!(alpha > 0.0))
      throw ValidationError("prox_g_conj: step must be positive");
    ProxOracles oracles(p, opts);
    Vector out = eta;
    oracles.prox_g_conj(alpha, out);
    return out;
  }

} // namespace spock
