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

#include "spock/supermann.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace spock;

namespace
{
  struct Fixture
  {
    Raocp p;
    double alpha;
    explicit Fixture(Raocp problem)
        : p(std::move(problem)), alpha(default_step_size(estimate_operator_norm(p, 1e-10))) {}
  };

  SpockSettings tight(double eps, SupermannParams params = {})
  {
    SpockSettings s;
    s.eps_abs = s.eps_rel = eps;
    s.params = params;
    return s;
  }
} // namespace

TEST(SupermannParams, Validation)
{
  SupermannParams ok;
  EXPECT_NO_THROW(ok.validate());
  const auto bad = [](auto mutate) {
    SupermannParams p;
    mutate(p);
    EXPECT_THROW(p.validate(), ValidationError);
  };
  bad([](SupermannParams &p) { p.c0 = 1.0; });
  bad([](SupermannParams &p) { p.c1 = -0.1; });
  bad([](SupermannParams &p) { p.c2 = 1.5; });
  bad([](SupermannParams &p) { p.beta = 0.0; });
  bad([](SupermannParams &p) { p.sigma = 1.0; });
  bad([](SupermannParams &p) { p.lambda = 2.0; });
  bad([](SupermannParams &p) { p.max_backtracks = 0; });
  bad([](SupermannParams &p) { p.memory = 0; });
  EXPECT_EQ(parse_rho_variant("paper"), RhoVariant::Paper);
  EXPECT_EQ(parse_rho_variant("classic"), RhoVariant::Classic);
  EXPECT_THROW(parse_rho_variant("other"), ValidationError);
}

TEST(SolveSpock, AgreesWithChambollePock)
{
  const Fixture f(oracle::tiny_problem());
  CpOperator op(f.p, f.alpha);
  CpSettings cs;
  cs.eps_abs = cs.eps_rel = 1e-8;
  const SolveResult cp = solve_cp(op, cs);
  const SolveResult sp = solve_spock(op, tight(1e-8));
  ASSERT_EQ(cp.report.status, SolveStatus::Converged);
  ASSERT_EQ(sp.report.status, SolveStatus::Converged);
  EXPECT_NEAR(sp.solution.z[0], cp.solution.z[0], 1e-5);
  EXPECT_LE((sp.solution.z - cp.solution.z).lpNorm<Eigen::Infinity>(), 1e-4);
}

TEST(SolveSpock, SameTerminationContractAsChambollePock)
{
  const Fixture f(oracle::tiny_problem());
  CpOperator op(f.p, f.alpha);
  const SolveReport cp = solve_cp(op, CpSettings{}).report;
  const SolveReport sp = solve_spock(op, SpockSettings{}).report;
  ASSERT_EQ(sp.status, SolveStatus::Converged);
  EXPECT_DOUBLE_EQ(sp.history.front().xi, cp.history.front().xi);
  const double xi0 = sp.history.front().xi;
  EXPECT_LE(sp.final_xi, std::max(1e-5, 1e-5 * xi0));
  for (std::size_t k = 0; k + 1 < sp.history.size(); ++k)
    EXPECT_GT(sp.history[k].xi, std::max(1e-5, 1e-5 * xi0));
  EXPECT_EQ(sp.rho_variant, "paper");
}

TEST(SolveSpock, TraceAndCallAccounting)
{
  std::mt19937_64 rng(71);
  const Fixture f(oracle::random_problem(rng, 3, 2, 2, 3));
  CpOperator op(f.p, f.alpha);
  const SolveReport r = solve_spock(op, tight(1e-7)).report;
  ASSERT_EQ(r.status, SolveStatus::Converged);
  ASSERT_EQ(static_cast<Index>(r.trace.size()), r.iterations);
  EXPECT_EQ(r.k0_updates + r.k1_updates + r.k2_updates + r.fallback_updates, r.iterations);
  // every residual evaluation applies T once and forms L* r, L r once
  EXPECT_EQ(r.l_calls_operator, r.l_calls_residual);
  EXPECT_EQ(r.l_calls, r.l_calls_operator + r.l_calls_residual);
  EXPECT_EQ(r.l_calls % 4, 0);
  Index last = 0;
  for (const TraceEntry &e : r.trace)
  {
    EXPECT_GE(e.l_calls, last);
    last = e.l_calls;
    EXPECT_GT(e.tau, 0.0);
    EXPECT_LE(e.tau, 1.0);
  }
  EXPECT_EQ(last, r.l_calls);
  EXPECT_GE(r.min_radicand, 0.0);
}

TEST(SolveSpock, SafeguardInvariantsHoldInTrace)
{
  std::mt19937_64 rng(72);
  std::vector<Fixture> fixtures;
  for (int inst = 0; inst < 3; ++inst)
    fixtures.emplace_back(oracle::random_problem(rng, 2, 2, 2, 3));
  for (RhoVariant variant : {RhoVariant::Paper, RhoVariant::Classic})
    for (const Fixture &f : fixtures)
    {
      CpOperator op(f.p, f.alpha);
      SupermannParams par;
      par.rho_variant = variant;
      const SolveReport r = solve_spock(op, tight(1e-6, par)).report;
      EXPECT_EQ(r.status, SolveStatus::Converged);
      double zeta = 0.0;
      bool first_k0 = true;
      for (const TraceEntry &e : r.trace)
      {
        if (e.kind == UpdateKind::K2)
        {
          EXPECT_GE(e.rho, par.sigma * e.omega_tilde * e.omega);
        }
        if (e.kind == UpdateKind::K1)
        {
          EXPECT_LE(e.omega_tilde, par.c1 * e.omega);
        }
        if (e.kind == UpdateKind::K0)
        {
          // the K0 reference norm only shrinks
          if (!first_k0)
          {
            EXPECT_LE(e.omega, par.c0 * zeta);
          }
          zeta = e.omega;
          first_k0 = false;
          EXPECT_TRUE(std::isnan(e.omega_tilde));
        }
      }
    }
}

TEST(SolveSpock, MemoryOneWithoutBlindStepsConverges)
{
  const Fixture f(oracle::tiny_problem());
  CpOperator op(f.p, f.alpha);
  SupermannParams par;
  par.memory = 1;
  par.c0 = 0.0;
  const SolveResult r = solve_spock(op, tight(1e-7, par));
  EXPECT_EQ(r.report.status, SolveStatus::Converged);
  EXPECT_EQ(r.report.k0_updates, 0);
  CpSettings cs;
  cs.eps_abs = cs.eps_rel = 1e-7;
  EXPECT_NEAR(r.solution.z[0], solve_cp(op, cs).solution.z[0], 1e-4);
}

TEST(SolveSpock, HyperplaneStepsAreFejerMonotone)
{
  // With c0 = c1 = 0 every accepted step is K2 or a plain T step, and for the
  // classic rho both move towards every fixed point in the M norm.
  const Fixture f(oracle::tiny_problem());
  CpOperator op(f.p, f.alpha);
  CpSettings cs;
  cs.eps_abs = cs.eps_rel = 1e-12;
  const Vector vstar = stack(solve_cp(op, cs).solution);
  const Matrix M = oracle::dense_M(f.alpha, oracle::dense_L(f.p));
  const auto dist = [&](const Vector &v) { return std::sqrt((v - vstar).dot(M * (v - vstar))); };

  SupermannParams par;
  par.c0 = 0.0;
  par.c1 = 0.0;
  par.rho_variant = RhoVariant::Classic;
  SpockSettings s = tight(1e-14, par);
  std::optional<PrimalDual> warm;
  double prev = dist(Vector::Zero(op.size()));
  Index k2 = 0;
  for (int k = 0; k < 60; ++k)
  {
    s.max_iters = 1;
    const SolveResult r = solve_spock(op, s, warm);
    k2 += r.report.k2_updates;
    EXPECT_EQ(r.report.k0_updates + r.report.k1_updates, 0);
    const double d = dist(stack(r.solution));
    EXPECT_LE(d, prev + 1e-9) << "step " << k;
    prev = d;
    warm = r.solution;
  }
  EXPECT_GT(k2, 0);
}

TEST(SolveSpock, WarmStartAndIterationCap)
{
  const Fixture f(oracle::tiny_problem());
  CpOperator op(f.p, f.alpha);
  const SolveResult cold = solve_spock(op, SpockSettings{});
  const SolveResult warm = solve_spock(op, SpockSettings{}, cold.solution);
  EXPECT_LE(warm.report.iterations, 2);
  SpockSettings capped;
  capped.max_iters = 2;
  const SolveReport r = solve_spock(op, capped).report;
  EXPECT_EQ(r.status, SolveStatus::MaxIterations);
  EXPECT_EQ(r.iterations, 2);
  capped.eps_rel = 0.0;
  EXPECT_THROW(solve_spock(op, capped), ValidationError);
}

TEST(SolveSpock, UsesFewerOperatorCallsThanPlainIteration)
{
  const Fixture f(build_server_benchmark(3, 2, 4, {0.3, 0.7}, 0.95));
  CpOperator op(f.p, f.alpha);
  const SolveReport cp = solve_cp(op, CpSettings{}).report;
  const SolveReport sp = solve_spock(op, SpockSettings{}).report;
  ASSERT_EQ(cp.status, SolveStatus::Converged);
  ASSERT_EQ(sp.status, SolveStatus::Converged);
  EXPECT_LT(sp.l_calls, cp.l_calls);
}
