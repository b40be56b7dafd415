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

#include "spock/risk.hpp"
#include "spock/tree.hpp"
#include "spock/types.hpp"

#include <Eigen/Eigenvalues>

#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace spock
{

  /// Symmetric PSD square root via eigendecomposition; tiny negative eigenvalues are clipped.
  inline Matrix symmetric_sqrt(const Matrix &Q)
  {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (Q + Q.transpose()));
    const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
  }

  /// Per-event system matrices: x+ = A(w) x + B(w) u.
  struct Dynamics
  {
    std::vector<Matrix> A;
    std::vector<Matrix> B;

    Index num_events() const { return static_cast<Index>(A.size()); }
  };

  struct StageCost
  {
    Matrix Q;
    Matrix R;
    Matrix Q_sqrt;
    Matrix R_sqrt;

    static StageCost make(Matrix Q, Matrix R)
    {
      StageCost c{std::move(Q), std::move(R), {}, {}};
      c.Q_sqrt = symmetric_sqrt(c.Q);
      c.R_sqrt = symmetric_sqrt(c.R);
      return c;
    }
  };

  struct TerminalCost
  {
    Matrix Q;
    Matrix Q_sqrt;

    static TerminalCost make(Matrix Q)
    {
      TerminalCost c{std::move(Q), {}};
      c.Q_sqrt = symmetric_sqrt(c.Q);
      return c;
    }
  };

  struct Box
  {
    Vector lower;
    Vector upper;
  };

  /// {c : |c|_inf <= radius}
  struct InfinityBall
  {
    double radius;
  };

  struct Unconstrained
  {
  };

  /**
   * Gamma_x x + Gamma_u u in C. Terminal sets leave `gamma_u` with zero
   * columns. The image dimension is gamma_x.rows().
   */
  struct ConstraintSet
  {
    std::variant<Box, InfinityBall, Unconstrained> set;
    Matrix gamma_x;
    Matrix gamma_u;

    Index dim() const { return gamma_x.rows(); }

    template <typename Derived>
    void project_inplace(Eigen::MatrixBase<Derived> &c) const
    {
      std::visit(
          [&](const auto &s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Box>)
              c = c.cwiseMax(s.lower).cwiseMin(s.upper);
            else if constexpr (std::is_same_v<S, InfinityBall>)
              c = c.cwiseMax(-s.radius).cwiseMin(s.radius);
          },
          set);
    }

    template <typename Derived>
    void project_inplace(Eigen::MatrixBase<Derived> &&c) const { project_inplace(c); }

    /// Stage box l <= (x, u) <= h realized with identity selectors.
    static ConstraintSet state_input_box(const Vector &x_lower, const Vector &x_upper,
                                         const Vector &u_lower, const Vector &u_upper)
    {
      const Index nx = x_lower.size(), nu = u_lower.size();
      ConstraintSet c;
      Box box;
      box.lower.resize(nx + nu);
      box.upper.resize(nx + nu);
      box.lower << x_lower, u_lower;
      box.upper << x_upper, u_upper;
      c.set = std::move(box);
      c.gamma_x.setZero(nx + nu, nx);
      c.gamma_x.topRows(nx).setIdentity();
      c.gamma_u.setZero(nx + nu, nu);
      c.gamma_u.bottomRows(nu).setIdentity();
      return c;
    }

    static ConstraintSet state_box(const Vector &x_lower, const Vector &x_upper)
    {
      ConstraintSet c;
      c.set = Box{x_lower, x_upper};
      c.gamma_x = Matrix::Identity(x_lower.size(), x_lower.size());
      c.gamma_u.resize(x_lower.size(), 0);
      return c;
    }

    /// No constraint; the image has dimension zero.
    static ConstraintSet none(Index nx, Index nu)
    {
      ConstraintSet c;
      c.set = Unconstrained{};
      c.gamma_x.resize(0, nx);
      c.gamma_u.resize(0, nu);
      return c;
    }
  };

  /**
   * A risk-averse optimal control problem on a scenario tree.
   *
   * Indexing:
   *  - dynamics of node i >= 1 are dynamics.A/B[tree.event_of(i)]
   *  - stage_cost[i] for i >= 1 weights (x, u) of anc(i); entry 0 is unused
   *  - stage_constraint[i] and risk[i] for nonleaf i
   *  - terminal_cost[k] and terminal_constraint[k] for leaf num_nonleaf() + k
   */
  struct Raocp
  {
    ScenarioTree tree;
    Index n_x = 0;
    Index n_u = 0;
    Dynamics dynamics;
    std::vector<std::shared_ptr<const StageCost>> stage_cost;
    std::vector<std::shared_ptr<const TerminalCost>> terminal_cost;
    std::vector<std::shared_ptr<const ConstraintSet>> stage_constraint;
    std::vector<std::shared_ptr<const ConstraintSet>> terminal_constraint;
    std::vector<std::shared_ptr<const RiskConicRep>> risk;
    Vector initial_state;

    const Matrix &A(Index i) const { return dynamics.A[tree.event_of(i)]; }
    const Matrix &B(Index i) const { return dynamics.B[tree.event_of(i)]; }
    const StageCost &cost(Index i) const { return *stage_cost[i]; }
    const TerminalCost &terminal(Index j) const { return *terminal_cost[j - tree.num_nonleaf()]; }
    const ConstraintSet &constraint(Index i) const { return *stage_constraint[i]; }
    const ConstraintSet &terminal_set(Index j) const { return *terminal_constraint[j - tree.num_nonleaf()]; }
    const RiskConicRep &risk_at(Index i) const { return *risk[i]; }
  };

  /// Raocp with the same cost, constraints and AV@R level at every node.
  inline Raocp build_uniform_raocp(ScenarioTree tree, Dynamics dynamics, const StageCost &cost,
                                   const TerminalCost &terminal, const ConstraintSet &stage_set,
                                   const ConstraintSet &terminal_set, double risk_level,
                                   Vector initial_state)
  {
    Raocp p{std::move(tree), 0, 0, std::move(dynamics), {}, {}, {}, {}, {}, std::move(initial_state)};
    p.n_x = p.dynamics.A.front().rows();
    p.n_u = p.dynamics.B.front().cols();
    const auto stage = std::make_shared<const StageCost>(cost);
    const auto term = std::make_shared<const TerminalCost>(terminal);
    const auto cset = std::make_shared<const ConstraintSet>(stage_set);
    const auto tset = std::make_shared<const ConstraintSet>(terminal_set);
    p.stage_cost.assign(p.tree.num_nodes(), stage);
    p.terminal_cost.assign(p.tree.num_leaves(), term);
    p.stage_constraint.assign(p.tree.num_nonleaf(), cset);
    p.terminal_constraint.assign(p.tree.num_leaves(), tset);
    p.risk.resize(p.tree.num_nonleaf());
    // Nodes sharing a conditional distribution (up to rounding in the
    // division by the parent probability) share one representation.
    std::vector<std::pair<Vector, std::shared_ptr<const RiskConicRep>>> pool;
    for (Index i = 0; i < p.tree.num_nonleaf(); ++i)
    {
      const Vector pi = p.tree.conditional_probabilities(i);
      std::shared_ptr<const RiskConicRep> rep;
      for (const auto &[key, r] : pool)
        if (key.size() == pi.size() && (key - pi).cwiseAbs().maxCoeff() <= 1e-13)
          rep = r;
      if (!rep)
      {
        rep = std::make_shared<const RiskConicRep>(build_avar(risk_level, pi));
        pool.emplace_back(pi, rep);
      }
      p.risk[i] = rep;
    }
    return p;
  }

  /// Tridiagonal server-temperature model with events w = 1..d (zero-based here).
  inline Dynamics server_dynamics(Index n_x, Index d)
  {
    Dynamics dyn;
    for (Index e = 0; e < d; ++e)
    {
      Matrix A = Matrix::Zero(n_x, n_x);
      for (Index j = 0; j < n_x; ++j)
      {
        A(j, j) = 1.0 + (static_cast<double>(e) / static_cast<double>(d)) *
                            (1.0 + static_cast<double>(j) / static_cast<double>(n_x));
        if (j > 0)
          A(j, j - 1) = A(j - 1, j) = 0.01;
      }
      dyn.A.push_back(std::move(A));
      dyn.B.push_back(Matrix::Identity(n_x, n_x));
    }
    return dyn;
  }

  /**
   * Data-center benchmark: Q = Q_N = I, R = 10 I, |x|_inf <= 1, |u|_inf <= 1.5,
   * AV@R_a at every nonleaf node and x0 = 0.1 * 1.
   */
  inline Raocp build_server_benchmark(Index n_x, Index d, Index horizon, const std::vector<double> &branch_probs,
                                      double a)
  {
    if (n_x < 1 || d < 1)
      throw ValidationError("build_server_benchmark: n_x and d must be >= 1");
    if (static_cast<Index>(branch_probs.size()) != d)
      throw ValidationError("build_server_benchmark: need one branch probability per event");
    ScenarioTree tree = ScenarioTree::build_from_iid(branch_probs, horizon);
    const Vector ones_x = Vector::Ones(n_x);
    const auto stage_set = ConstraintSet::state_input_box(-ones_x, ones_x, -1.5 * ones_x, 1.5 * ones_x);
    const auto terminal_set = ConstraintSet::state_box(-ones_x, ones_x);
    return build_uniform_raocp(std::move(tree), server_dynamics(n_x, d),
                               StageCost::make(Matrix::Identity(n_x, n_x), 10.0 * Matrix::Identity(n_x, n_x)),
                               TerminalCost::make(Matrix::Identity(n_x, n_x)), stage_set, terminal_set, a,
                               Vector::Constant(n_x, 0.1));
  }

  namespace detail
  {
    inline void check_psd(const Matrix &Q, const Matrix &Q_sqrt, const std::string &where,
                          std::vector<std::string> &out)
    {
      if (Q.rows() != Q.cols())
      {
        out.push_back("cost not square at " + where);
        return;
      }
      if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        out.push_back("cost not symmetric at " + where);
      Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (Q + Q.transpose()), Eigen::EigenvaluesOnly);
      if (eig.eigenvalues().minCoeff() < -1e-10)
        out.push_back("cost not PSD at " + where);
      else if (Q_sqrt.rows() != Q.rows() || Q_sqrt.cols() != Q.cols() ||
               (Q_sqrt * Q_sqrt - Q).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, Q.cwiseAbs().maxCoeff()))
        out.push_back("cost square root inconsistent at " + where);
    }

    inline void check_constraint(const ConstraintSet &c, Index nx, Index nu, bool terminal,
                                 const std::string &where, std::vector<std::string> &out)
    {
      if (c.gamma_x.cols() != nx || c.gamma_u.cols() != (terminal ? 0 : nu) || c.gamma_u.rows() != c.gamma_x.rows())
        out.push_back("constraint matrices have wrong shape at " + where);
      if (const auto *box = std::get_if<Box>(&c.set))
      {
        if (box->lower.size() != c.dim() || box->upper.size() != c.dim())
          out.push_back("box bounds have wrong size at " + where);
        else if ((box->lower.array() > box->upper.array()).any())
          out.push_back("box lower bound exceeds upper bound at " + where);
      }
      else if (const auto *ball = std::get_if<InfinityBall>(&c.set))
      {
        if (!(ball->radius >= 0.0))
          out.push_back("negative ball radius at " + where);
      }
    }
  } // namespace detail

  /// Structured diagnostics; an empty list means the instance is valid.
  inline std::vector<std::string> validate(const Raocp &p)
  {
    std::vector<std::string> out;
    const ScenarioTree &tree = p.tree;
    const auto node = [](Index i) { return "node " + std::to_string(i); };

    if (p.n_x < 1 || p.n_u < 1)
      out.push_back("state and input dimensions must be >= 1");
    if (p.initial_state.size() != p.n_x)
      out.push_back("initial state has wrong size");
    if (p.dynamics.num_events() < tree.num_events() || p.dynamics.B.size() != p.dynamics.A.size())
      out.push_back("dynamics do not cover every event of the tree");
    for (std::size_t e = 0; e < p.dynamics.A.size() && e < p.dynamics.B.size(); ++e)
      if (p.dynamics.A[e].rows() != p.n_x || p.dynamics.A[e].cols() != p.n_x || p.dynamics.B[e].rows() != p.n_x ||
          p.dynamics.B[e].cols() != p.n_u)
        out.push_back("dynamics matrices have wrong shape for event " + std::to_string(e));

    if (static_cast<Index>(p.stage_cost.size()) != tree.num_nodes() ||
        static_cast<Index>(p.terminal_cost.size()) != tree.num_leaves() ||
        static_cast<Index>(p.stage_constraint.size()) != tree.num_nonleaf() ||
        static_cast<Index>(p.terminal_constraint.size()) != tree.num_leaves() ||
        static_cast<Index>(p.risk.size()) != tree.num_nonleaf())
    {
      out.push_back("per-node arrays are not sized to the tree");
      return out;
    }

    for (Index i = 1; i < tree.num_nodes(); ++i)
    {
      if (!p.stage_cost[i])
      {
        out.push_back("missing stage cost at " + node(i));
        continue;
      }
      const StageCost &c = *p.stage_cost[i];
      if (c.Q.rows() != p.n_x || c.R.rows() != p.n_u)
        out.push_back("stage cost has wrong size at " + node(i));
      detail::check_psd(c.Q, c.Q_sqrt, node(i), out);
      detail::check_psd(c.R, c.R_sqrt, node(i), out);
    }
    for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
    {
      const auto &c = p.terminal_cost[j - tree.num_nonleaf()];
      const auto &s = p.terminal_constraint[j - tree.num_nonleaf()];
      if (!c || !s)
      {
        out.push_back("missing terminal data at " + node(j));
        continue;
      }
      if (c->Q.rows() != p.n_x)
        out.push_back("terminal cost has wrong size at " + node(j));
      detail::check_psd(c->Q, c->Q_sqrt, node(j), out);
      detail::check_constraint(*s, p.n_x, p.n_u, true, node(j), out);
    }
    for (Index i = 0; i < tree.num_nonleaf(); ++i)
    {
      if (!p.stage_constraint[i] || !p.risk[i])
      {
        out.push_back("missing constraint or risk data at " + node(i));
        continue;
      }
      detail::check_constraint(*p.stage_constraint[i], p.n_x, p.n_u, false, node(i), out);
      const RiskConicRep &r = *p.risk[i];
      if (r.n != tree.num_children(i) || r.E.cols() != r.n)
        out.push_back("risk measure sized for " + std::to_string(r.n) + " outcomes but " + node(i) + " has " +
                      std::to_string(tree.num_children(i)) + " children");
      if (r.E.rows() != r.dim() || r.F.rows() != r.dim() || r.F.cols() != r.n_nu || r.cone.dim() != r.dim())
        out.push_back("risk representation has inconsistent dimensions at " + node(i));
    }
    return out;
  }

} // namespace spock
