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

#include <Eigen/Jacobi>
#include <Eigen/QR>

#include <cmath>

namespace spock
{

  /**
   * Anderson acceleration with rolling difference buffers.
   *
   * Keeps at most m - 1 column pairs (iterate differences, residual
   * differences) and a thin QR factorization of the residual-difference
   * matrix that is updated on every push: Gram-Schmidt for the appended
   * column, Givens rotations when the oldest column is dropped. Columns are
   * stored oldest first; the least-squares solution does not depend on the
   * column order.
   */
  class AndersonBuffers
  {
  public:
    static constexpr double kRankTolerance = 1e-12;
    static constexpr double kOrthogonalityTolerance = 1e-8;

    AndersonBuffers(Index dim, Index memory)
        : dim_(dim), max_cols_(memory > 0 ? memory - 1 : 0), dP_(dim, max_cols_), dR_(dim, max_cols_),
          Q_(dim, max_cols_), R_(max_cols_, max_cols_)
    {
      if (memory < 1)
        throw ValidationError("AndersonBuffers: memory must be >= 1");
    }

    Index dim() const { return dim_; }
    Index memory() const { return max_cols_ + 1; }
    Index columns() const { return cols_; }
    Index refactorizations() const { return refactorizations_; }

    void reset()
    {
      cols_ = 0;
      qr_ok_ = true;
    }

    void push(const Eigen::Ref<const Vector> &v_diff, const Eigen::Ref<const Vector> &c_diff)
    {
      if (v_diff.size() != dim_ || c_diff.size() != dim_)
        throw ValidationError("AndersonBuffers::push: dimension mismatch");
      if (max_cols_ == 0)
        return;
      if (cols_ == max_cols_)
        drop_oldest();
      dP_.col(cols_) = v_diff;
      dR_.col(cols_) = c_diff;
      ++cols_;
      if (qr_ok_)
        append_to_qr(cols_ - 1);
      else
        refactor();
#ifndef NDEBUG
      if (qr_ok_)
      {
        const double err = (Q_.leftCols(cols_) * R_.topLeftCorner(cols_, cols_).triangularView<Eigen::Upper>() -
                            dR_.leftCols(cols_))
                               .norm();
        if (err > 1e-10 * std::max(1.0, dR_.leftCols(cols_).norm()))
          throw InternalError("AndersonBuffers: QR factorization drifted from the buffer");
      }
#endif
    }

    /// Minimizer of |M^R gamma - c| (minimum norm when M^R is rank deficient).
    Vector gamma(const Eigen::Ref<const Vector> &c) const
    {
      if (cols_ == 0)
        return Vector(0);
      if (qr_ok_)
      {
        Vector g = Q_.leftCols(cols_).transpose() * c;
        R_.topLeftCorner(cols_, cols_).triangularView<Eigen::Upper>().solveInPlace(g);
        return g;
      }
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
      cod.setThreshold(kRankTolerance);
      cod.compute(dR_.leftCols(cols_));
      return cod.solve(c);
    }

    /// d = -c - (M^P - M^R) gamma; d = -c with empty buffers.
    Vector direction(const Eigen::Ref<const Vector> &c) const
    {
      Vector d = -c;
      if (cols_ == 0)
        return d;
      const Vector g = gamma(c);
      d.noalias() -= dP_.leftCols(cols_) * g;
      d.noalias() += dR_.leftCols(cols_) * g;
      return d;
    }

    /// Iterate differences, newest column first.
    Matrix iterate_differences() const { return dP_.leftCols(cols_).rowwise().reverse(); }
    /// Residual differences, newest column first.
    Matrix residual_differences() const { return dR_.leftCols(cols_).rowwise().reverse(); }

    /// Thin QR of the residual differences in storage (oldest first) order.
    bool qr_valid() const { return qr_ok_; }
    Matrix q_factor() const { return Q_.leftCols(cols_); }
    Matrix r_factor() const { return R_.topLeftCorner(cols_, cols_).triangularView<Eigen::Upper>(); }
    Matrix stored_residual_differences() const { return dR_.leftCols(cols_); }

  private:
    // Orthogonalizes column k against columns 0..k-1 (two passes of MGS).
    void append_to_qr(Index k)
    {
      auto w = Q_.col(k);
      w = dR_.col(k);
      R_.col(k).setZero();
      for (int pass = 0; pass < 2; ++pass)
        for (Index j = 0; j < k; ++j)
        {
          const double h = Q_.col(j).dot(w);
          R_(j, k) += h;
          w -= h * Q_.col(j);
        }
      const double rkk = w.norm();
      const double scale = dR_.leftCols(k + 1).norm();
      if (!(rkk > kRankTolerance * scale))
      {
        qr_ok_ = false;
        return;
      }
      R_(k, k) = rkk;
      w /= rkk;
    }

    void refactor()
    {
      ++refactorizations_;
      qr_ok_ = true;
      for (Index k = 0; k < cols_ && qr_ok_; ++k)
        append_to_qr(k);
    }

    void drop_oldest()
    {
      const Index k = cols_;
      for (Index j = 0; j + 1 < k; ++j)
      {
        dP_.col(j) = dP_.col(j + 1);
        dR_.col(j) = dR_.col(j + 1);
      }
      --cols_;
      if (!qr_ok_ || cols_ == 0)
      {
        refactor();
        return;
      }
      // Remove the first column of R; restore triangularity with Givens rotations.
      Matrix H = R_.block(0, 1, k, k - 1);
      auto Q = Q_.leftCols(k);
      for (Index j = 0; j + 1 < k; ++j)
      {
        Eigen::JacobiRotation<double> G;
        G.makeGivens(H(j, j), H(j + 1, j));
        H.applyOnTheLeft(j, j + 1, G.adjoint());
        Q.applyOnTheRight(j, j + 1, G);
        H(j + 1, j) = 0.0;
      }
      R_.topLeftCorner(k - 1, k - 1) = H.topRows(k - 1);
      const auto Qk = Q_.leftCols(cols_);
      const double loss = (Qk.transpose() * Qk - Matrix::Identity(cols_, cols_)).cwiseAbs().maxCoeff();
      if (loss > kOrthogonalityTolerance)
        refactor();
    }

    Index dim_;
    Index max_cols_;
    Index cols_ = 0;
    bool qr_ok_ = true;
    Index refactorizations_ = 0;
    Matrix dP_, dR_, Q_, R_;
  };

} // namespace spock
