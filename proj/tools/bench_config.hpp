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

#include "spock/bench.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

namespace spock::tools
{

  using nlohmann::json;

  namespace detail
  {
    template <typename T>
    void read(const json &j, const char *key, T &out)
    {
      if (!j.contains(key))
        return;
      try
      {
        out = j.at(key).get<T>();
      }
      catch (const json::exception &e)
      {
        throw ValidationError(std::string("config key '") + key + "': " + e.what());
      }
    }

    inline void reject_unknown(const json &j, const std::set<std::string> &known, const std::string &where)
    {
      for (const auto &[key, value] : j.items())
        if (!known.count(key))
          throw ValidationError("unknown config key '" + where + key + "'");
    }
  } // namespace detail

  inline SupermannParams supermann_from_json(const json &j, SupermannParams p = {})
  {
    if (!j.is_object())
      throw ValidationError("config key 'supermann' must be an object");
    detail::reject_unknown(j,
                           {"c0", "c1", "c2", "beta", "sigma", "lambda", "max_backtracks", "memory", "rho_variant",
                            "reset_on_safeguard"},
                           "supermann.");
    detail::read(j, "c0", p.c0);
    detail::read(j, "c1", p.c1);
    detail::read(j, "c2", p.c2);
    detail::read(j, "beta", p.beta);
    detail::read(j, "sigma", p.sigma);
    detail::read(j, "lambda", p.lambda);
    detail::read(j, "max_backtracks", p.max_backtracks);
    detail::read(j, "memory", p.memory);
    detail::read(j, "reset_on_safeguard", p.reset_on_safeguard);
    if (j.contains("rho_variant"))
    {
      std::string v;
      detail::read(j, "rho_variant", v);
      p.rho_variant = parse_rho_variant(v);
    }
    return p;
  }

  /// Fields missing from `j` keep their values from `c`.
  inline BenchConfig config_from_json(const json &j, BenchConfig c = {})
  {
    if (!j.is_object())
      throw ValidationError("config root must be a JSON object");
    detail::reject_unknown(j,
                           {"n_x", "n_u", "d", "horizon", "branch_probs", "risk_level", "eps_abs", "eps_rel",
                            "solver", "supermann", "cp_max_iters", "spock_max_iters", "mpc_steps", "warm_start",
                            "seed", "realizations", "horizons", "time_budget_s", "out_dir"},
                           "");
    detail::read(j, "n_x", c.n_x);
    c.n_u = c.n_x;
    detail::read(j, "n_u", c.n_u);
    detail::read(j, "d", c.d);
    detail::read(j, "horizon", c.horizon);
    detail::read(j, "branch_probs", c.branch_probs);
    detail::read(j, "risk_level", c.risk_level);
    detail::read(j, "eps_abs", c.eps_abs);
    detail::read(j, "eps_rel", c.eps_rel);
    if (j.contains("solver"))
    {
      std::string s;
      detail::read(j, "solver", s);
      c.solver = parse_solver_choice(s);
    }
    if (j.contains("supermann"))
      c.supermann = supermann_from_json(j.at("supermann"), c.supermann);
    detail::read(j, "cp_max_iters", c.cp_max_iters);
    detail::read(j, "spock_max_iters", c.spock_max_iters);
    detail::read(j, "mpc_steps", c.mpc_steps);
    detail::read(j, "warm_start", c.warm_start);
    detail::read(j, "seed", c.seed);
    detail::read(j, "realizations", c.realizations);
    detail::read(j, "horizons", c.horizons);
    detail::read(j, "time_budget_s", c.time_budget_s);
    if (j.contains("out_dir"))
    {
      std::string dir;
      detail::read(j, "out_dir", dir);
      c.out_dir = dir;
    }
    return c;
  }

  inline BenchConfig load_config(const std::filesystem::path &path, BenchConfig base = {})
  {
    std::ifstream is(path);
    if (!is)
      throw ValidationError("cannot read config file " + path.string());
    json j;
    try
    {
      j = json::parse(is);
    }
    catch (const json::parse_error &e)
    {
      throw ValidationError("config file " + path.string() + ": " + e.what());
    }
    return config_from_json(j, std::move(base));
  }

} // namespace spock::tools
