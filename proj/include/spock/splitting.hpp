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
#include "spock/types.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <random>
#include <vector>

namespace spock
{

  /**
   * Flat layout of the primal vector z = (s0, z1, z2).
   *
   * Order: s0 | x (all nodes) | u (nonleaf) | y (nonleaf) | tau (nodes >= 1) | s (nodes >= 1).
   * Children of a node are contiguous, so tau^[i] and s^[i] are contiguous segments.
   */
  class PrimalLayout
  {
  public:
    PrimalLayout() = default;
    explicit PrimalLayout(const Raocp &p) : n_x_(p.n_x), n_u_(p.n_u)
    {
      const ScenarioTree &tree = p.tree;
      x_off_ = 1;
      u_off_ = x_off_ + tree.num_nodes() * n_x_;
      y_off_ = u_off_ + tree.num_nonleaf() * n_u_;
      Index off = y_off_;
      y_offsets_.resize(tree.num_nonleaf());
      y_dims_.resize(tree.num_nonleaf());
      for (Index i = 0; i < tree.num_nonleaf(); ++i)
      {
        y_offsets_[i] = off;
        y_dims_[i] = p.risk_at(i).dim();
        off += y_dims_[i];
      }
      tau_off_ = off;
      s_off_ = tau_off_ + tree.num_nodes() - 1;
      size_ = s_off_ + tree.num_nodes() - 1;
    }

    Index size() const { return size_; }
    Index n_x() const { return n_x_; }
    Index n_u() const { return n_u_; }

    Index x(Index i) const { return x_off_ + i * n_x_; }
    Index u(Index i) const { return u_off_ + i * n_u_; }
    Index y(Index i) const { return y_offsets_[i]; }
    Index y_dim(Index i) const { return y_dims_[i]; }
    Index tau(Index i) const { return tau_off_ + i - 1; }
    Index s(Index i) const { return i == 0 ? 0 : s_off_ + i - 1; }

    /// Contiguous (x, u) part, z1.
    Index z1_offset() const { return x_off_; }
    Index z1_size() const { return y_off_ - x_off_; }
    Index u_offset() const { return u_off_; }
    /// Contiguous (y, tau, s) part, z2 (without s0).
    Index z2_offset() const { return y_off_; }
    Index z2_size() const { return size_ - y_off_; }

  private:
    Index n_x_ = 0, n_u_ = 0;
    Index x_off_ = 0, u_off_ = 0, y_off_ = 0, tau_off_ = 0, s_off_ = 0, size_ = 0;
    std::vector<Index> y_offsets_, y_dims_;
  };

  /**
   * Flat layout of eta = L z:
   *  nonleaf blocks (y^i, s^i - b' y^i, Gx x^i + Gu u^i), level order, then
   *  node blocks (Q^1/2 x^anc, R^1/2 u^anc, tau/2, tau/2) for nodes >= 1, then
   *  leaf blocks (GN x^j, Q_N^1/2 x^j, s^j/2, s^j/2).
   */
  class ImageLayout
  {
  public:
    ImageLayout() = default;
    explicit ImageLayout(const Raocp &p) : n_x_(p.n_x), n_u_(p.n_u)
    {
      const ScenarioTree &tree = p.tree;
      Index off = 0;
      nonleaf_.resize(tree.num_nonleaf());
      y_dims_.resize(tree.num_nonleaf());
      c_dims_.resize(tree.num_nonleaf());
      for (Index i = 0; i < tree.num_nonleaf(); ++i)
      {
        nonleaf_[i] = off;
        y_dims_[i] = p.risk_at(i).dim();
        c_dims_[i] = p.constraint(i).dim();
        off += y_dims_[i] + 1 + c_dims_[i];
      }
      node_.resize(tree.num_nodes());
      node_[0] = -1;
      for (Index i = 1; i < tree.num_nodes(); ++i)
      {
        node_[i] = off;
        off += n_x_ + n_u_ + 2;
      }
      leaf_.resize(tree.num_leaves());
      leaf_c_dims_.resize(tree.num_leaves());
      for (Index k = 0; k < tree.num_leaves(); ++k)
      {
        leaf_[k] = off;
        leaf_c_dims_[k] = p.terminal_set(tree.num_nonleaf() + k).dim();
        off += leaf_c_dims_[k] + n_x_ + 2;
      }
      num_nonleaf_ = tree.num_nonleaf();
      size_ = off;
    }

    Index size() const { return size_; }

    // nonleaf block
    Index nonleaf_y(Index i) const { return nonleaf_[i]; }
    Index nonleaf_y_dim(Index i) const { return y_dims_[i]; }
    Index nonleaf_scalar(Index i) const { return nonleaf_[i] + y_dims_[i]; }
    Index nonleaf_c(Index i) const { return nonleaf_[i] + y_dims_[i] + 1; }
    Index nonleaf_c_dim(Index i) const { return c_dims_[i]; }
    // node block (i >= 1), dimension n_x + n_u + 2
    Index node(Index i) const { return node_[i]; }
    Index node_dim() const { return n_x_ + n_u_ + 2; }
    // leaf block
    Index leaf_c(Index j) const { return leaf_[j - num_nonleaf_]; }
    Index leaf_c_dim(Index j) const { return leaf_c_dims_[j - num_nonleaf_]; }
    Index leaf_soc(Index j) const { return leaf_c(j) + leaf_c_dim(j); }
    Index leaf_soc_dim() const { return n_x_ + 2; }

  private:
    Index n_x_ = 0, n_u_ = 0, num_nonleaf_ = 0, size_ = 0;
    std::vector<Index> nonleaf_, y_dims_, c_dims_, node_, leaf_, leaf_c_dims_;
  };

  /// Structured (per-node) view of a primal vector, for inspection and serialization.
  struct PrimalParts
  {
    double s0 = 0.0;
    std::vector<Vector> x, u, y;
    std::vector<double> tau, s; // index k holds node k + 1
  };

  inline PrimalParts unflatten(const PrimalLayout &lay, const Raocp &p, const Vector &z)
  {
    const ScenarioTree &tree = p.tree;
    PrimalParts out;
    out.s0 = z[0];
    for (Index i = 0; i < tree.num_nodes(); ++i)
      out.x.push_back(z.segment(lay.x(i), p.n_x));
    for (Index i = 0; i < tree.num_nonleaf(); ++i)
    {
      out.u.push_back(z.segment(lay.u(i), p.n_u));
      out.y.push_back(z.segment(lay.y(i), lay.y_dim(i)));
    }
    for (Index i = 1; i < tree.num_nodes(); ++i)
    {
      out.tau.push_back(z[lay.tau(i)]);
      out.s.push_back(z[lay.s(i)]);
    }
    return out;
  }

  inline Vector flatten(const PrimalLayout &lay, const PrimalParts &parts)
  {
    Vector z(lay.size());
    z[0] = parts.s0;
    for (std::size_t i = 0; i < parts.x.size(); ++i)
      z.segment(lay.x(static_cast<Index>(i)), lay.n_x()) = parts.x[i];
    for (std::size_t i = 0; i < parts.u.size(); ++i)
    {
      z.segment(lay.u(static_cast<Index>(i)), lay.n_u()) = parts.u[i];
      z.segment(lay.y(static_cast<Index>(i)), lay.y_dim(static_cast<Index>(i))) = parts.y[i];
    }
    for (std::size_t k = 0; k < parts.tau.size(); ++k)
    {
      z[lay.tau(static_cast<Index>(k) + 1)] = parts.tau[k];
      z[lay.s(static_cast<Index>(k) + 1)] = parts.s[k];
    }
    return z;
  }

  /// Structured view of an image vector.
  struct ImageParts
  {
    struct Nonleaf
    {
      Vector y;
      double scalar;
      Vector c;
    };
    struct Node
    {
      Vector soc; // (Q^1/2 x, R^1/2 u, tau/2, tau/2)
    };
    struct Leaf
    {
      Vector c;
      Vector soc; // (Q_N^1/2 x, s/2, s/2)
    };
    std::vector<Nonleaf> nonleaf;
    std::vector<Node> node; // index k holds node k + 1
    std::vector<Leaf> leaf;
  };

  inline ImageParts unflatten(const ImageLayout &lay, const Raocp &p, const Vector &eta)
  {
    const ScenarioTree &tree = p.tree;
    ImageParts out;
    for (Index i = 0; i < tree.num_nonleaf(); ++i)
      out.nonleaf.push_back({eta.segment(lay.nonleaf_y(i), lay.nonleaf_y_dim(i)), eta[lay.nonleaf_scalar(i)],
                             eta.segment(lay.nonleaf_c(i), lay.nonleaf_c_dim(i))});
    for (Index i = 1; i < tree.num_nodes(); ++i)
      out.node.push_back({eta.segment(lay.node(i), lay.node_dim())});
    for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
      out.leaf.push_back({eta.segment(lay.leaf_c(j), lay.leaf_c_dim(j)), eta.segment(lay.leaf_soc(j), lay.leaf_soc_dim())});
    return out;
  }

  inline Vector flatten(const ImageLayout &lay, const Raocp &p, const ImageParts &parts)
  {
    const ScenarioTree &tree = p.tree;
    Vector eta(lay.size());
    for (Index i = 0; i < tree.num_nonleaf(); ++i)
    {
      const auto &b = parts.nonleaf[i];
      eta.segment(lay.nonleaf_y(i), lay.nonleaf_y_dim(i)) = b.y;
      eta[lay.nonleaf_scalar(i)] = b.scalar;
      eta.segment(lay.nonleaf_c(i), lay.nonleaf_c_dim(i)) = b.c;
    }
    for (Index i = 1; i < tree.num_nodes(); ++i)
      eta.segment(lay.node(i), lay.node_dim()) = parts.node[i - 1].soc;
    for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
    {
      const auto &b = parts.leaf[j - tree.num_nonleaf()];
      eta.segment(lay.leaf_c(j), lay.leaf_c_dim(j)) = b.c;
      eta.segment(lay.leaf_soc(j), lay.leaf_soc_dim()) = b.soc;
    }
    return eta;
  }

  /**
   * The linear operator L of the splitting and its adjoint.
   *
   * Holds a reference to the problem; the problem must outlive the operator.
   */
  class LinearOperator
  {
  public:
    explicit LinearOperator(const Raocp &p) : p_(&p), primal_(p), image_(p) {}

    const Raocp &problem() const { return *p_; }
    const PrimalLayout &primal() const { return primal_; }
    const ImageLayout &image() const { return image_; }

    void apply(const Eigen::Ref<const Vector> &z, Eigen::Ref<Vector> eta) const
    {
      check_size(z.size(), primal_.size(), "apply_L");
      check_size(eta.size(), image_.size(), "apply_L");
      const Raocp &p = *p_;
      const ScenarioTree &tree = p.tree;
      const Index nx = p.n_x, nu = p.n_u;

      for (Index i = 0; i < tree.num_nonleaf(); ++i)
      {
        const RiskConicRep &risk = p.risk_at(i);
        const ConstraintSet &cs = p.constraint(i);
        const auto y = z.segment(primal_.y(i), primal_.y_dim(i));
        eta.segment(image_.nonleaf_y(i), image_.nonleaf_y_dim(i)) = y;
        eta[image_.nonleaf_scalar(i)] = z[primal_.s(i)] - risk.b.dot(y);
        if (cs.dim() > 0)
        {
          auto c = eta.segment(image_.nonleaf_c(i), cs.dim());
          c.noalias() = cs.gamma_x * z.segment(primal_.x(i), nx);
          c.noalias() += cs.gamma_u * z.segment(primal_.u(i), nu);
        }
      }
      for (Index i = 1; i < tree.num_nodes(); ++i)
      {
        const StageCost &cost = p.cost(i);
        const Index a = tree.ancestor_of(i);
        auto blk = eta.segment(image_.node(i), image_.node_dim());
        blk.head(nx).noalias() = cost.Q_sqrt * z.segment(primal_.x(a), nx);
        blk.segment(nx, nu).noalias() = cost.R_sqrt * z.segment(primal_.u(a), nu);
        blk[nx + nu] = blk[nx + nu + 1] = 0.5 * z[primal_.tau(i)];
      }
      for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
      {
        const ConstraintSet &cs = p.terminal_set(j);
        const auto xj = z.segment(primal_.x(j), nx);
        if (cs.dim() > 0)
          eta.segment(image_.leaf_c(j), cs.dim()).noalias() = cs.gamma_x * xj;
        auto soc = eta.segment(image_.leaf_soc(j), image_.leaf_soc_dim());
        soc.head(nx).noalias() = p.terminal(j).Q_sqrt * xj;
        soc[nx] = soc[nx + 1] = 0.5 * z[primal_.s(j)];
      }
    }

    /// Gathers per node, so every primal slot is written by exactly one node.
    void apply_adjoint(const Eigen::Ref<const Vector> &eta, Eigen::Ref<Vector> z) const
    {
      check_size(eta.size(), image_.size(), "apply_L_adjoint");
      check_size(z.size(), primal_.size(), "apply_L_adjoint");
      const Raocp &p = *p_;
      const ScenarioTree &tree = p.tree;
      const Index nx = p.n_x, nu = p.n_u;

      for (Index i = 0; i < tree.num_nonleaf(); ++i)
      {
        const RiskConicRep &risk = p.risk_at(i);
        const ConstraintSet &cs = p.constraint(i);
        const double scalar = eta[image_.nonleaf_scalar(i)];
        z.segment(primal_.y(i), primal_.y_dim(i)) =
            eta.segment(image_.nonleaf_y(i), image_.nonleaf_y_dim(i)) - scalar * risk.b;
        z[primal_.s(i)] = scalar;

        auto x = z.segment(primal_.x(i), nx);
        auto u = z.segment(primal_.u(i), nu);
        if (cs.dim() > 0)
        {
          const auto c = eta.segment(image_.nonleaf_c(i), cs.dim());
          x.noalias() = cs.gamma_x.transpose() * c;
          u.noalias() = cs.gamma_u.transpose() * c;
        }
        else
        {
          x.setZero();
          u.setZero();
        }
        const NodeRange ch = tree.children_of(i);
        for (Index c = ch.begin; c < ch.end; ++c)
        {
          const StageCost &cost = p.cost(c);
          const auto blk = eta.segment(image_.node(c), image_.node_dim());
          x.noalias() += cost.Q_sqrt.transpose() * blk.head(nx);
          u.noalias() += cost.R_sqrt.transpose() * blk.segment(nx, nu);
          z[primal_.tau(c)] = 0.5 * (blk[nx + nu] + blk[nx + nu + 1]);
        }
      }
      for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
      {
        const ConstraintSet &cs = p.terminal_set(j);
        auto x = z.segment(primal_.x(j), nx);
        const auto soc = eta.segment(image_.leaf_soc(j), image_.leaf_soc_dim());
        x.noalias() = p.terminal(j).Q_sqrt.transpose() * soc.head(nx);
        if (cs.dim() > 0)
          x.noalias() += cs.gamma_x.transpose() * eta.segment(image_.leaf_c(j), cs.dim());
        z[primal_.s(j)] = 0.5 * (soc[nx] + soc[nx + 1]);
      }
    }

    Vector apply(const Vector &z) const
    {
      Vector eta(image_.size());
      apply(z, eta);
      return eta;
    }

    Vector apply_adjoint(const Vector &eta) const
    {
      Vector z(primal_.size());
      apply_adjoint(eta, z);
      return z;
    }

  private:
    static void check_size(Index got, Index want, const char *what)
    {
      if (got != want)
        throw ValidationError(std::string(what) + ": size mismatch (" + std::to_string(got) + " vs " +
                              std::to_string(want) + ")");
    }

    const Raocp *p_;
    PrimalLayout primal_;
    ImageLayout image_;
  };

  inline Vector apply_L(const Raocp &p, const Vector &z) { return LinearOperator(p).apply(z); }
  inline Vector apply_L_adjoint(const Raocp &p, const Vector &eta) { return LinearOperator(p).apply_adjoint(eta); }

  /// Power iteration on L*L from a fixed seed; returns the raw estimate of |L|.
  inline double estimate_operator_norm(const LinearOperator &L, double tol, Index max_iters = 10000)
  {
    if (!(tol > 0.0))
      throw ValidationError("estimate_operator_norm: tolerance must be positive");
    std::mt19937_64 rng(0x5eedULL);
    std::normal_distribution<double> normal;
    Vector v(L.primal().size());
    for (Index k = 0; k < v.size(); ++k)
      v[k] = normal(rng);
    v.normalize();
    Vector Lv(L.image().size()), w(L.primal().size());
    double lambda = 0.0;
    for (Index it = 0; it < max_iters; ++it)
    {
      L.apply(v, Lv);
      L.apply_adjoint(Lv, w);
      const double next = v.dot(w);
      const double wn = w.norm();
      if (wn == 0.0)
        return 0.0;
      v = w / wn;
      if (it > 0 && std::abs(next - lambda) <= tol * std::abs(next))
        return std::sqrt(next);
      lambda = next;
    }
    throw InternalError("estimate_operator_norm: power iteration did not converge");
  }

  inline double estimate_operator_norm(const Raocp &p, double tol)
  {
    return estimate_operator_norm(LinearOperator(p), tol);
  }

  /// Step size alpha = factor / ((1 + margin) |L|).
  inline double default_step_size(double norm_estimate, double factor = 0.99, double margin = 0.01)
  {
    if (!(norm_estimate > 0.0))
      throw ValidationError("default_step_size: operator norm must be positive");
    return factor / ((1.0 + margin) * norm_estimate);
  }

  /**
   * |L| as the largest norm over the per-node blocks that L splits into
   * after a column permutation. Exact up to the SVD accuracy.
   */
  inline double blockwise_operator_norm(const Raocp &p)
  {
    const ScenarioTree &tree = p.tree;
    const Index nx = p.n_x, nu = p.n_u;
    double best = 0.0;
    for (Index i = 0; i < tree.num_nonleaf(); ++i)
    {
      const RiskConicRep &risk = p.risk_at(i);
      const ConstraintSet &cs = p.constraint(i);
      const Index ny = risk.dim(), nc = cs.dim(), nch = tree.num_children(i);
      const Index cx = 0, cu = nx, cy = nx + nu, cs0 = cy + ny, ct = cs0 + 1;
      Matrix G = Matrix::Zero(ny + 1 + nc + nch * (nx + nu + 2), ct + nch);
      G.block(0, cy, ny, ny).setIdentity();
      G(ny, cs0) = 1.0;
      G.block(ny, cy, 1, ny) = -risk.b.transpose();
      G.block(ny + 1, cx, nc, nx) = cs.gamma_x;
      G.block(ny + 1, cu, nc, nu) = cs.gamma_u;
      Index row = ny + 1 + nc;
      const NodeRange ch = tree.children_of(i);
      for (Index k = 0; k < nch; ++k)
      {
        const StageCost &cost = p.cost(ch.begin + k);
        G.block(row, cx, nx, nx) = cost.Q_sqrt;
        G.block(row + nx, cu, nu, nu) = cost.R_sqrt;
        G(row + nx + nu, ct + k) = 0.5;
        G(row + nx + nu + 1, ct + k) = 0.5;
        row += nx + nu + 2;
      }
      best = std::max(best, Eigen::JacobiSVD<Matrix>(G).singularValues()[0]);
    }
    for (Index j = tree.num_nonleaf(); j < tree.num_nodes(); ++j)
    {
      const ConstraintSet &cs = p.terminal_set(j);
      Matrix G = Matrix::Zero(cs.dim() + nx + 2, nx + 1);
      G.topLeftCorner(cs.dim(), nx) = cs.gamma_x;
      G.block(cs.dim(), 0, nx, nx) = p.terminal(j).Q_sqrt;
      G(cs.dim() + nx, nx) = 0.5;
      G(cs.dim() + nx + 1, nx) = 0.5;
      best = std::max(best, Eigen::JacobiSVD<Matrix>(G).singularValues()[0]);
    }
    return best;
  }

} // namespace spock
