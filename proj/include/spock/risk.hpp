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

#include "spock/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

namespace spock
{

  enum class ConeKind
  {
    NonnegativeOrthant,
    Zero,
    Free,
    SecondOrderCone, // radius last
  };

  struct ConeBlock
  {
    ConeKind kind;
    Index dim;
  };

  /// Cartesian product of elementary cones.
  class ConeDescriptor
  {
  public:
    ConeDescriptor() = default;
    explicit ConeDescriptor(std::vector<ConeBlock> blocks) : blocks_(std::move(blocks))
    {
      for (const auto &b : blocks_)
      {
        if (b.dim < 1)
          throw ValidationError("ConeDescriptor: block dimension must be >= 1");
        if (b.kind == ConeKind::SecondOrderCone && b.dim < 2)
          throw ValidationError("ConeDescriptor: second-order cone needs dimension >= 2");
      }
    }

    const std::vector<ConeBlock> &blocks() const { return blocks_; }

    Index dim() const
    {
      Index n = 0;
      for (const auto &b : blocks_)
        n += b.dim;
      return n;
    }

    ConeDescriptor dual() const
    {
      std::vector<ConeBlock> out = blocks_;
      for (auto &b : out)
      {
        if (b.kind == ConeKind::Zero)
          b.kind = ConeKind::Free;
        else if (b.kind == ConeKind::Free)
          b.kind = ConeKind::Zero;
      }
      return ConeDescriptor(std::move(out));
    }

    bool operator==(const ConeDescriptor &other) const
    {
      if (blocks_.size() != other.blocks_.size())
        return false;
      for (std::size_t k = 0; k < blocks_.size(); ++k)
        if (blocks_[k].kind != other.blocks_[k].kind || blocks_[k].dim != other.blocks_[k].dim)
          return false;
      return true;
    }

  private:
    std::vector<ConeBlock> blocks_;
  };

  /// In-place Euclidean projection onto the second-order cone {(v, t) : |v| <= t}.
  template <typename Derived>
  void project_soc_inplace(Eigen::MatrixBase<Derived> &&x)
  {
    const Index n = x.size() - 1;
    const double t = x[n];
    const double nv = x.head(n).norm();
    if (nv <= t)
      return;
    if (nv <= -t)
    {
      x.setZero();
      return;
    }
    const double scale = 0.5 * (nv + t);
    x.head(n) *= scale / nv;
    x[n] = scale;
  }

  template <typename Derived>
  void project_soc_inplace(Eigen::MatrixBase<Derived> &x)
  {
    project_soc_inplace(std::move(x));
  }

  inline Vector project_soc(const Vector &x)
  {
    if (x.size() < 2)
      throw ValidationError("project_soc: dimension must be >= 2");
    Vector out = x;
    project_soc_inplace(out);
    return out;
  }

  /// In-place projection onto `cone` (not its dual).
  template <typename Derived>
  void project_cone_inplace(const ConeDescriptor &cone, Eigen::MatrixBase<Derived> &x)
  {
    Index off = 0;
    for (const auto &b : cone.blocks())
    {
      auto seg = x.segment(off, b.dim);
      switch (b.kind)
      {
      case ConeKind::NonnegativeOrthant:
        seg = seg.cwiseMax(0.0);
        break;
      case ConeKind::Zero:
        seg.setZero();
        break;
      case ConeKind::Free:
        break;
      case ConeKind::SecondOrderCone:
        project_soc_inplace(seg);
        break;
      }
      off += b.dim;
    }
  }

  /// Projection onto the dual cone K* of `cone`.
  template <typename Derived>
  void project_dual_cone_inplace(const ConeDescriptor &cone, Eigen::MatrixBase<Derived> &x)
  {
    Index off = 0;
    for (const auto &b : cone.blocks())
    {
      auto seg = x.segment(off, b.dim);
      switch (b.kind)
      {
      case ConeKind::NonnegativeOrthant:
        seg = seg.cwiseMax(0.0);
        break;
      case ConeKind::Zero: // dual is the whole space
        break;
      case ConeKind::Free:
        seg.setZero();
        break;
      case ConeKind::SecondOrderCone:
        project_soc_inplace(seg);
        break;
      }
      off += b.dim;
    }
  }

  inline Vector project_dual_cone(const ConeDescriptor &cone, const Vector &y)
  {
    if (y.size() != cone.dim())
    {
      std::ostringstream os;
      os << "project_dual_cone: vector has size " << y.size() << ", cone has dimension " << cone.dim();
      throw ValidationError(os.str());
    }
    Vector out = y;
    project_dual_cone_inplace(cone, out);
    return out;
  }

  /**
   * Conic representation of a coherent risk measure:
   *
   *   rho[Z] = max { mu' Z : b - E mu - F nu in K }.
   *
   * At runtime only the dual variable y in K* is used, coupled through
   * E' y = Z and F' y = 0.
   */
  struct RiskConicRep
  {
    struct AvarParameters
    {
      double a;
      Vector pi;
    };

    Index n = 0;
    Index n_nu = 0;
    Matrix E;
    Matrix F;
    Vector b;
    ConeDescriptor cone;
    /// Set by build_avar; enables closed-form evaluation.
    std::optional<AvarParameters> avar;

    Index dim() const { return b.size(); }
  };

  /// AV@R_a with reference probabilities pi. a = 1 gives the expectation, a = 0 the maximum.
  inline RiskConicRep build_avar(double a, const Vector &pi)
  {
    if (!(a >= 0.0 && a <= 1.0))
      throw ValidationError("build_avar: risk level must lie in [0, 1]");
    const Index n = pi.size();
    if (n < 1)
      throw ValidationError("build_avar: empty probability vector");
    if ((pi.array() <= 0.0).any() || !pi.allFinite())
      throw ValidationError("build_avar: probabilities must be positive");
    if (std::abs(pi.sum() - 1.0) > 1e-12)
      throw ValidationError("build_avar: probabilities must sum to 1");

    RiskConicRep rep;
    rep.n = n;
    rep.n_nu = 0;
    rep.E.setZero(2 * n + 1, n);
    rep.E.topRows(n).diagonal().setConstant(a);
    rep.E.middleRows(n, n).diagonal().setConstant(-1.0);
    rep.E.row(2 * n).setOnes();
    rep.F.resize(2 * n + 1, 0);
    rep.b.setZero(2 * n + 1);
    rep.b.head(n) = pi;
    rep.b[2 * n] = 1.0;
    rep.cone = ConeDescriptor({{ConeKind::NonnegativeOrthant, 2 * n}, {ConeKind::Zero, 1}});
    rep.avar = RiskConicRep::AvarParameters{a, pi};
    return rep;
  }

  /// rho[Z] for an AV@R representation, by greedy allocation of mass to the largest costs.
  inline double evaluate_risk(const RiskConicRep &rep, const Vector &Z)
  {
    if (!rep.avar)
      throw ValidationError("evaluate_risk: closed form only available for AV@R representations");
    if (Z.size() != rep.n)
      throw ValidationError("evaluate_risk: cost vector size mismatch");
    const auto &[a, pi] = *rep.avar;
    if (a == 0.0)
      return Z.maxCoeff();

    std::vector<Index> order(static_cast<std::size_t>(rep.n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index l, Index r) { return Z[l] > Z[r]; });
    double remaining = 1.0;
    double value = 0.0;
    for (Index k : order)
    {
      const double mu = std::min(pi[k] / a, remaining);
      value += mu * Z[k];
      remaining -= mu;
      if (remaining <= 0.0)
        break;
    }
    return value;
  }

} // namespace spock
