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

// Independent dense reference implementations used by the unit and
// acceptance tests. None of these call into the library's fast paths
// except for layout offsets.

#pragma once

#include "spock/spock.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace spock::oracle
{

  // ---- random data --------------------------------------------------------

  inline Vector random_vector(std::mt19937_64 &rng, Index n, double scale = 1.0)
  {
    std::normal_distribution<double> g(0.0, scale);
    Vector v(n);
    for (Index k = 0; k < n; ++k)
      v[k] = g(rng);
    return v;
  }

  inline Matrix random_matrix(std::mt19937_64 &rng, Index r, Index c, double scale = 1.0)
  {
    std::normal_distribution<double> g(0.0, scale);
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j)
        m(i, j) = g(rng);
    return m;
  }

  inline Matrix random_psd(std::mt19937_64 &rng, Index n, double shift = 0.1)
  {
    const Matrix g = random_matrix(rng, n, n);
    return g * g.transpose() + shift * Matrix::Identity(n, n);
  }

  inline std::vector<double> random_distribution(std::mt19937_64 &rng, Index n)
  {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    std::vector<double> p(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (auto &v : p)
      sum += (v = u(rng));
    for (auto &v : p)
      v /= sum;
    // absorb rounding into the last entry so the sum is 1 to machine precision
    double head = 0.0;
    for (std::size_t k = 0; k + 1 < p.size(); ++k)
      head += p[k];
    p.back() = 1.0 - head;
    return p;
  }

  // ---- small problem instances -----------------------------------------------

  /// Random instance with dense per-event dynamics and random PSD costs.
  inline Raocp random_problem(std::mt19937_64 &rng, Index n_x, Index n_u, Index d, Index horizon, double a = 0.7,
                              bool constrained = true)
  {
    const auto probs = random_distribution(rng, d);
    ScenarioTree tree = ScenarioTree::build_from_iid(probs, horizon);
    Dynamics dyn;
    for (Index e = 0; e < d; ++e)
    {
      dyn.A.push_back(random_matrix(rng, n_x, n_x, 0.5));
      dyn.B.push_back(random_matrix(rng, n_x, n_u, 0.5));
    }
    const StageCost cost = StageCost::make(random_psd(rng, n_x), random_psd(rng, n_u));
    const TerminalCost term = TerminalCost::make(random_psd(rng, n_x));
    const Vector ox = Vector::Ones(n_x), ou = Vector::Ones(n_u);
    const ConstraintSet stage = constrained ? ConstraintSet::state_input_box(-2 * ox, 2 * ox, -ou, ou)
                                            : ConstraintSet::none(n_x, n_u);
    const ConstraintSet terminal =
        constrained ? ConstraintSet::state_box(-2 * ox, 2 * ox) : ConstraintSet::none(n_x, 0);
    return build_uniform_raocp(std::move(tree), std::move(dyn), cost, term, stage, terminal, a,
                               random_vector(rng, n_x, 0.5));
  }

  /// Random instance on a random Markov tree (nonuniform branching).
  inline Raocp random_markov_problem(std::mt19937_64 &rng, Index n_x, Index n_u, Index d, Index horizon)
  {
    Matrix P(d, d);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Index r = 0; r < d; ++r)
    {
      for (Index c = 0; c < d; ++c)
        P(r, c) = u(rng) < 0.35 && c != r ? 0.0 : u(rng) + 0.1;
      P.row(r) /= P.row(r).sum();
      P(r, d - 1) = 1.0 - P.row(r).head(d - 1).sum();
    }
    const auto init = random_distribution(rng, d);
    ScenarioTree tree = ScenarioTree::build_from_markov(P, init, horizon);
    Dynamics dyn;
    for (Index e = 0; e < d; ++e)
    {
      dyn.A.push_back(random_matrix(rng, n_x, n_x, 0.5));
      dyn.B.push_back(random_matrix(rng, n_x, n_u, 0.5));
    }
    const StageCost cost = StageCost::make(random_psd(rng, n_x), random_psd(rng, n_u));
    const TerminalCost term = TerminalCost::make(random_psd(rng, n_x));
    const Vector ox = Vector::Ones(n_x), ou = Vector::Ones(n_u);
    return build_uniform_raocp(std::move(tree), std::move(dyn), cost, term,
                               ConstraintSet::state_input_box(-2 * ox, 2 * ox, -ou, ou),
                               ConstraintSet::state_box(-2 * ox, 2 * ox), 0.6, random_vector(rng, n_x, 0.5));
  }

  /// The "tiny fixture": N = 2, n_x = n_u = 2, d = 2 server benchmark.
  inline Raocp tiny_problem() { return build_server_benchmark(2, 2, 2, {0.3, 0.7}, 0.95); }

  // ---- dense L and M ------------------------------------------------------

  /// Dense L assembled entry by entry from the block description of eta.
  inline Matrix dense_L(const Raocp &p)
  {
    const PrimalLayout zl(p);
    const ImageLayout el(p);
    const ScenarioTree &tree = p.tree;
    const Index nx = p.n_x, nu = p.n_u;
    Matrix L = Matrix::Zero(el.size(), zl.size());
    for (Index i = 0; i < tree.num_nonleaf(); ++i)
    {
      const RiskConicRep &r = p.risk_at(i);
      const ConstraintSet &c = p.constraint(i);
      for (Index k = 0; k < r.dim(); ++k)
      {
        L(el.nonleaf_y(i) + k, zl.y(i) + k) = 1.0;
        L(el.nonleaf_scalar(i), zl.y(i) + k) = -r.b[k];
      }
      L(el.nonleaf_scalar(i), zl.s(i)) = 1.0;
      L.block(el.nonleaf_c(i), zl.x(i), c.dim(), nx) = c.gamma_x;
      L.block(el.nonleaf_c(i), zl.u(i), c.dim(), nu) = c.gamma_u;
    }
    for (Index i = 1; i < tree.num_nodes(); ++i)
    {
      const Index a = tree.ancestor_of(i);
      L.block(el.node(i), zl.x(a), nx, nx) = p.cost(i).Q_sqrt;
      L.block(el.node(i) + nx, zl.u(a), nu, nu) = p.cost(i).R_sqrt;
      L(el.node(i) + nx + nu, zl.tau(i)) = 0.5;
      L(el.node(i) + nx + nu + 1, zl.tau(i)) = 0.5;
    }
    for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
    {
      const ConstraintSet &c = p.terminal_set(j);
      L.block(el.leaf_c(j), zl.x(j), c.dim(), nx) = c.gamma_x;
      L.block(el.leaf_soc(j), zl.x(j), nx, nx) = p.terminal(j).Q_sqrt;
      L(el.leaf_soc(j) + nx, zl.s(j)) = 0.5;
      L(el.leaf_soc(j) + nx + 1, zl.s(j)) = 0.5;
    }
    return L;
  }

  inline Matrix dense_M(double alpha, const Matrix &L)
  {
    const Index nz = L.cols(), ne = L.rows();
    Matrix M = Matrix::Identity(nz + ne, nz + ne);
    M.topRightCorner(nz, ne) = -alpha * L.transpose();
    M.bottomLeftCorner(ne, nz) = -alpha * L;
    return M;
  }

  inline double spectral_norm(const Matrix &A) { return Eigen::JacobiSVD<Matrix>(A).singularValues()[0]; }

  // ---- S1: equality-constrained least squares ---------------------------------

  /// Dynamics constraints C w = e on the contiguous (x, u) segment w.
  inline void dynamics_constraints(const Raocp &p, const Vector &x_init, Matrix &C, Vector &e)
  {
    const ScenarioTree &tree = p.tree;
    const Index nx = p.n_x, nu = p.n_u;
    const Index n = tree.num_nodes() * nx + tree.num_nonleaf() * nu;
    const Index u0 = tree.num_nodes() * nx;
    C = Matrix::Zero(tree.num_nodes() * nx, n);
    e = Vector::Zero(tree.num_nodes() * nx);
    C.topLeftCorner(nx, nx).setIdentity();
    e.head(nx) = x_init;
    for (Index i = 1; i < tree.num_nodes(); ++i)
    {
      const Index a = tree.ancestor_of(i);
      const Index row = i * nx;
      C.block(row, i * nx, nx, nx) = Matrix::Identity(nx, nx);
      C.block(row, a * nx, nx, nx) = -p.A(i);
      C.block(row, u0 + a * nu, nx, nu) = -p.B(i);
    }
  }

  /// argmin |w - wbar|^2 subject to the dynamics, via the KKT system.
  inline Vector project_s1_dense(const Raocp &p, const Vector &x_init, const Vector &wbar)
  {
    Matrix C;
    Vector e;
    dynamics_constraints(p, x_init, C, e);
    const Index n = C.cols(), m = C.rows();
    Matrix K = Matrix::Zero(n + m, n + m);
    K.topLeftCorner(n, n).setIdentity();
    K.topRightCorner(n, m) = C.transpose();
    K.bottomLeftCorner(m, n) = C;
    Vector rhs(n + m);
    rhs << wbar, e;
    const Vector sol = K.fullPivLu().solve(rhs);
    return sol.head(n);
  }

  // ---- S2: pseudoinverse ----------------------------------------------------

  inline Matrix kernel_matrix_dense(const RiskConicRep &r)
  {
    const Index n = r.n, ny = r.dim();
    Matrix M = Matrix::Zero(n + r.n_nu, ny + 2 * n);
    for (Index row = 0; row < n; ++row)
    {
      for (Index k = 0; k < ny; ++k)
        M(row, k) = r.E(k, row);
      M(row, ny + row) = -1.0;
      M(row, ny + n + row) = -1.0;
    }
    for (Index row = 0; row < r.n_nu; ++row)
      for (Index k = 0; k < ny; ++k)
        M(n + row, k) = r.F(k, row);
    return M;
  }

  inline Matrix pinv(const Matrix &M, double rtol = 1e-12)
  {
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector &s = svd.singularValues();
    const double cut = rtol * (s.size() ? s[0] : 0.0);
    Matrix Sinv = Matrix::Zero(M.cols(), M.rows());
    for (Index k = 0; k < s.size(); ++k)
      if (s[k] > cut)
        Sinv(k, k) = 1.0 / s[k];
    return svd.matrixV() * Sinv * svd.matrixU().transpose();
  }

  inline Vector project_kernel_dense(const Matrix &M, const Vector &v) { return v - pinv(M) * (M * v); }

  // ---- SOC: nearest point by direct search -------------------------------------

  /// Nearest point of {(v, t) : |v| <= t} found by a multiresolution grid over
  /// the boundary points (v, |v|). Supports total dimension 2 and 3.
  inline Vector nearest_soc_point(const Vector &x)
  {
    const Index d = x.size();
    if (d != 2 && d != 3)
      throw std::invalid_argument("nearest_soc_point: dimension 2 or 3 only");
    if (x.head(d - 1).norm() <= x[d - 1])
      return x;
    const Index m = d - 1;
    const auto point = [&](const Vector &v) {
      Vector p(d);
      p << v, v.norm();
      return p;
    };
    Vector center = Vector::Zero(m), best = Vector::Zero(m);
    double width = 2.0 * x.norm() + 1.0;
    const int n = 41;
    for (int level = 0; level < 40; ++level)
    {
      double best_dist = std::numeric_limits<double>::infinity();
      Vector v(m);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < (m == 2 ? n : 1); ++b)
        {
          v[0] = center[0] + width * (2.0 * a / (n - 1) - 1.0);
          if (m == 2)
            v[1] = center[1] + width * (2.0 * b / (n - 1) - 1.0);
          const double dist = (point(v) - x).norm();
          if (dist < best_dist)
          {
            best_dist = dist;
            best = v;
          }
        }
      center = best;
      width /= 4.0;
    }
    return point(best);
  }

  // ---- projections onto S3 by an augmented Lagrangian method -------------------

  /// A constraint h(s) <= 0 on a subvector, with its gradient.
  struct InequalityConstraint
  {
    std::function<double(const Vector &)> h;
    std::function<Vector(const Vector &)> grad;
  };

  /// argmin 1/2|s - c|^2 s.t. h_k(s) <= 0 and s[eq] = 0, by the augmented
  /// Lagrangian method. Inner problems are solved by damped Newton steps on
  /// a finite-difference Hessian of the exact gradient; the outer loop stops
  /// once the KKT conditions hold to near machine precision.
  inline Vector project_by_augmented_lagrangian(const Vector &c, const std::vector<InequalityConstraint> &ineq,
                                                const std::vector<Index> &zero_coords = {})
  {
    const Index n = c.size();
    const std::size_t m = ineq.size();
    std::vector<bool> free(static_cast<std::size_t>(n), true);
    for (Index k : zero_coords)
      free[k] = false;
    Vector s = c;
    for (Index k : zero_coords)
      s[k] = 0.0;
    std::vector<double> lam(m, 0.0);
    double rho = 1.0;
    const double scale = 1.0 + c.norm();

    const auto merit = [&](const Vector &x) {
      double f = 0.5 * (x - c).squaredNorm();
      for (std::size_t k = 0; k < m; ++k)
      {
        const double t = std::max(0.0, lam[k] + rho * ineq[k].h(x));
        f += (t * t - lam[k] * lam[k]) / (2.0 * rho);
      }
      return f;
    };
    const auto gradient = [&](const Vector &x) {
      Vector g = x - c;
      for (std::size_t k = 0; k < m; ++k)
      {
        const double t = std::max(0.0, lam[k] + rho * ineq[k].h(x));
        if (t > 0.0)
          g += t * ineq[k].grad(x);
      }
      for (Index k : zero_coords)
        g[k] = 0.0;
      return g;
    };

    for (int outer = 0; outer < 200; ++outer)
    {
      for (int inner = 0; inner < 100; ++inner)
      {
        const Vector g = gradient(s);
        if (g.norm() <= 1e-14 * scale)
          break;
        Matrix H = Matrix::Identity(n, n);
        const double fd = 1e-7 * (1.0 + s.norm());
        for (Index j = 0; j < n; ++j)
        {
          if (!free[j])
            continue;
          Vector sp = s, sm = s;
          sp[j] += fd;
          sm[j] -= fd;
          H.col(j) = (gradient(sp) - gradient(sm)) / (2.0 * fd);
          for (Index k : zero_coords)
            H(k, j) = 0.0;
        }
        for (Index k : zero_coords)
        {
          H.row(k).setZero();
          H.col(k).setZero();
          H(k, k) = 1.0;
        }
        H = 0.5 * (H + H.transpose());
        Vector d = -H.ldlt().solve(g);
        if (!d.allFinite() || d.dot(g) >= 0.0)
          d = -g;
        const double f0 = merit(s);
        double t = 1.0;
        while (merit(s + t * d) > f0 + 1e-4 * t * d.dot(g) && t > 1e-12)
          t *= 0.5;
        s += t * d;
      }
      double viol = 0.0, change = 0.0;
      for (std::size_t k = 0; k < m; ++k)
      {
        const double h = ineq[k].h(s);
        const double next = std::max(0.0, lam[k] + rho * h);
        change = std::max(change, std::abs(next - lam[k]));
        lam[k] = next;
        viol = std::max(viol, h);
      }
      if (viol <= 1e-13 * scale && change <= 1e-12 * scale)
        break;
      rho = std::min(rho * 4.0, 1e3);
    }
    return s;
  }

  /// Constraints describing S3 in the image layout (bounds, orthants, translated SOCs).
  inline void s3_constraints(const Raocp &p, std::vector<InequalityConstraint> &ineq, std::vector<Index> &zeros)
  {
    const ImageLayout lay(p);
    const ScenarioTree &tree = p.tree;
    const auto lower = [](Index k, double l) {
      return InequalityConstraint{[k, l](const Vector &s) { return l - s[k]; },
                                  [k](const Vector &s) {
                                    Vector g = Vector::Zero(s.size());
                                    g[k] = -1.0;
                                    return g;
                                  }};
    };
    const auto upper = [](Index k, double u) {
      return InequalityConstraint{[k, u](const Vector &s) { return s[k] - u; },
                                  [k](const Vector &s) {
                                    Vector g = Vector::Zero(s.size());
                                    g[k] = 1.0;
                                    return g;
                                  }};
    };
    // |w| <= t on block [off, off + dim) after translation by a = (0, .., 1/2, -1/2)
    const auto soc = [](Index off, Index dim) {
      const auto shifted = [off, dim](const Vector &s) {
        Vector w = s.segment(off, dim);
        w[dim - 2] -= 0.5;
        w[dim - 1] += 0.5;
        return w;
      };
      return InequalityConstraint{[shifted, dim](const Vector &s) {
                                    const Vector w = shifted(s);
                                    return std::sqrt(w.head(dim - 1).squaredNorm() + 1e-300) - w[dim - 1];
                                  },
                                  [shifted, off, dim](const Vector &s) {
                                    const Vector w = shifted(s);
                                    const double nv = std::sqrt(w.head(dim - 1).squaredNorm() + 1e-300);
                                    Vector g = Vector::Zero(s.size());
                                    g.segment(off, dim - 1) = w.head(dim - 1) / nv;
                                    g[off + dim - 1] = -1.0;
                                    return g;
                                  }};
    };
    const auto add_box = [&](const ConstraintSet &cs, Index off) {
      if (const auto *b = std::get_if<Box>(&cs.set))
        for (Index k = 0; k < cs.dim(); ++k)
        {
          ineq.push_back(lower(off + k, b->lower[k]));
          ineq.push_back(upper(off + k, b->upper[k]));
        }
      if (const auto *r = std::get_if<InfinityBall>(&cs.set))
        for (Index k = 0; k < cs.dim(); ++k)
        {
          ineq.push_back(lower(off + k, -r->radius));
          ineq.push_back(upper(off + k, r->radius));
        }
    };
    for (Index i = 0; i < tree.num_nonleaf(); ++i)
    {
      Index off = lay.nonleaf_y(i);
      for (const auto &blk : p.risk_at(i).cone.blocks())
      {
        // dual cone of each block
        for (Index k = 0; k < blk.dim; ++k)
        {
          if (blk.kind == ConeKind::NonnegativeOrthant)
            ineq.push_back(lower(off + k, 0.0));
          if (blk.kind == ConeKind::Free)
            zeros.push_back(off + k);
        }
        if (blk.kind == ConeKind::SecondOrderCone)
          throw std::invalid_argument("s3_constraints: SOC risk blocks not covered");
        off += blk.dim;
      }
      ineq.push_back(lower(lay.nonleaf_scalar(i), 0.0));
      add_box(p.constraint(i), lay.nonleaf_c(i));
    }
    for (Index i = 1; i < tree.num_nodes(); ++i)
      ineq.push_back(soc(lay.node(i), lay.node_dim()));
    for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
    {
      add_box(p.terminal_set(j), lay.leaf_c(j));
      ineq.push_back(soc(lay.leaf_soc(j), lay.leaf_soc_dim()));
    }
  }

  inline Vector project_s3_augmented_lagrangian(const Raocp &p, const Vector &c)
  {
    std::vector<InequalityConstraint> ineq;
    std::vector<Index> zeros;
    s3_constraints(p, ineq, zeros);
    return project_by_augmented_lagrangian(c, ineq, zeros);
  }

  // ---- risk: LP vertex enumeration ---------------------------------------------

  /// max mu'Z over {mu : b - E mu in K} for K = R+^k x {0}^l (n_nu = 0), by
  /// enumerating the vertices of the polytope.
  inline double risk_by_vertex_enumeration(const RiskConicRep &r, const Vector &Z)
  {
    const Index n = r.n;
    std::vector<Index> ineq_rows, eq_rows;
    Index off = 0;
    for (const auto &blk : r.cone.blocks())
    {
      for (Index k = 0; k < blk.dim; ++k)
        (blk.kind == ConeKind::Zero ? eq_rows : ineq_rows).push_back(off + k);
      off += blk.dim;
    }
    const auto feasible = [&](const Vector &mu) {
      const Vector slack = r.b - r.E * mu;
      for (Index k : ineq_rows)
        if (slack[k] < -1e-10)
          return false;
      for (Index k : eq_rows)
        if (std::abs(slack[k]) > 1e-10)
          return false;
      return true;
    };
    const Index need = n - static_cast<Index>(eq_rows.size());
    double best = -std::numeric_limits<double>::infinity();
    std::vector<bool> pick(ineq_rows.size(), false);
    std::fill(pick.begin(), pick.begin() + std::max<Index>(need, 0), true);
    do
    {
      Matrix A(n, n);
      Vector rhs(n);
      Index row = 0;
      for (Index k : eq_rows)
      {
        A.row(row) = r.E.row(k);
        rhs[row++] = r.b[k];
      }
      for (std::size_t k = 0; k < ineq_rows.size(); ++k)
        if (pick[k])
        {
          A.row(row) = r.E.row(ineq_rows[k]);
          rhs[row++] = r.b[ineq_rows[k]];
        }
      Eigen::FullPivLU<Matrix> lu(A);
      if (lu.rank() < n)
        continue;
      const Vector mu = lu.solve(rhs);
      if (feasible(mu))
        best = std::max(best, mu.dot(Z));
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return best;
  }

  // ---- nested objective for one-stage problems -----------------------------------

  /// min over u in [u_lo, u_hi] of rho[ x'Qx + u'Ru + x1(w)'QN x1(w) ] for a
  /// scalar N = 1 problem, by nested grid refinement. Infeasible u (state bounds)
  /// is rejected.
  inline double one_stage_value_by_grid(const Raocp &p, double u_lo, double u_hi, double x_bound)
  {
    const ScenarioTree &tree = p.tree;
    const double x0 = p.initial_state[0];
    const auto value = [&](double u) {
      Vector Z(tree.num_children(0));
      for (Index k = 0; k < Z.size(); ++k)
      {
        const Index c = tree.children_of(0).begin + k;
        const double x1 = p.A(c)(0, 0) * x0 + p.B(c)(0, 0) * u;
        if (std::abs(x1) > x_bound)
          return std::numeric_limits<double>::infinity();
        Z[k] = p.cost(c).Q(0, 0) * x0 * x0 + p.cost(c).R(0, 0) * u * u + p.terminal(c).Q(0, 0) * x1 * x1;
      }
      return risk_by_vertex_enumeration(p.risk_at(0), Z);
    };
    double lo = u_lo, hi = u_hi, best_u = lo, best = std::numeric_limits<double>::infinity();
    for (int level = 0; level < 40; ++level)
    {
      const int n = 201;
      for (int k = 0; k < n; ++k)
      {
        const double u = lo + (hi - lo) * k / (n - 1);
        const double v = value(u);
        if (v < best)
        {
          best = v;
          best_u = u;
        }
      }
      const double w = (hi - lo) / 20.0;
      lo = std::max(u_lo, best_u - w);
      hi = std::min(u_hi, best_u + w);
    }
    return best;
  }

} // namespace spock::oracle
