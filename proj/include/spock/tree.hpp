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

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

namespace spock
{

  /// Half-open range of node ids.
  struct NodeRange
  {
    Index begin = 0;
    Index end = 0;

    Index size() const { return end - begin; }
    bool contains(Index i) const { return i >= begin && i < end; }
  };

  /**
   * Scenario tree with dense level-order node ids.
   *
   * All nodes of stage t precede those of stage t+1, and the children of a
   * node occupy a contiguous id range. Leaves are exactly the nodes of stage
   * N, so nonleaf ids are [0, num_nonleaf()) and leaf ids are
   * [num_nonleaf(), num_nodes()). Immutable after construction.
   */
  class ScenarioTree
  {
  public:
    static constexpr double kProbabilityTolerance = 1e-12;

    /// Full d-ary tree where every branching follows the same distribution.
    static ScenarioTree build_from_iid(std::span<const double> branch_probs, Index horizon);

    /// Tree of a Markov chain whose event at the root is distributed as
    /// `initial_probs`, so stage-1 events follow initial' * transition and later
    /// events follow the rows of `transition`. Zero-probability branches are pruned.
    static ScenarioTree build_from_markov(const Matrix &transition,
                                          std::span<const double> initial_probs,
                                          Index horizon);

    Index num_nodes() const { return static_cast<Index>(stage_.size()); }
    Index horizon() const { return static_cast<Index>(stage_begin_.size()) - 2; }
    Index num_events() const { return num_events_; }
    Index num_nonleaf() const { return stage_begin_[horizon()]; }
    Index num_leaves() const { return num_nodes() - num_nonleaf(); }

    Index stage_of(Index i) const { return stage_[i]; }
    /// -1 for the root.
    Index ancestor_of(Index i) const { return ancestor_[i]; }
    NodeRange children_of(Index i) const { return {first_child_[i], first_child_[i] + num_children_[i]}; }
    Index num_children(Index i) const { return num_children_[i]; }
    double probability_of(Index i) const { return probability_[i]; }
    /// Zero-based event index of the branch leading into node i; -1 for the root.
    Index event_of(Index i) const { return event_[i]; }

    NodeRange nodes(Index t) const { return {stage_begin_[t], stage_begin_[t + 1]}; }
    /// Union of stages t1..t2 inclusive (contiguous by construction).
    NodeRange nodes(Index t1, Index t2) const { return {stage_begin_[t1], stage_begin_[t2 + 1]}; }
    NodeRange leaves() const { return nodes(horizon()); }
    NodeRange nonleaf() const { return {0, num_nonleaf()}; }

    bool is_leaf(Index i) const { return i >= num_nonleaf(); }

    /// Conditional probabilities of the children of nonleaf node i.
    Vector conditional_probabilities(Index i) const
    {
      const NodeRange ch = children_of(i);
      Vector pi(ch.size());
      for (Index k = 0; k < ch.size(); ++k)
        pi[k] = probability_[ch.begin + k] / probability_[i];
      return pi;
    }

  private:
    ScenarioTree() = default;

    Index add_node(Index stage, Index anc, Index event, double prob)
    {
      const Index id = num_nodes();
      stage_.push_back(stage);
      ancestor_.push_back(anc);
      first_child_.push_back(0);
      num_children_.push_back(0);
      probability_.push_back(prob);
      event_.push_back(event);
      return id;
    }

    // Appends one stage below the current deepest stage.
    // `branch(parent)` returns the (event, conditional probability) pairs.
    template <typename Branch>
    void grow_stage(Index stage, Branch &&branch)
    {
      const NodeRange parents = {stage_begin_[stage - 1], num_nodes()};
      for (Index p = parents.begin; p < parents.end; ++p)
      {
        first_child_[p] = num_nodes();
        for (const auto &[w, q] : branch(p))
          add_node(stage, p, w, probability_[p] * q);
        num_children_[p] = num_nodes() - first_child_[p];
      }
      stage_begin_.push_back(num_nodes());
    }

    std::vector<Index> stage_;
    std::vector<Index> ancestor_;
    std::vector<Index> first_child_;
    std::vector<Index> num_children_;
    std::vector<double> probability_;
    std::vector<Index> event_;
    std::vector<Index> stage_begin_;
    Index num_events_ = 0;
  };

  namespace detail
  {
    inline void check_distribution(std::span<const double> p, bool allow_zero, const char *what)
    {
      if (p.empty())
        throw ValidationError(std::string(what) + ": empty probability vector");
      double sum = 0.0;
      for (double v : p)
      {
        if (!std::isfinite(v) || v < 0.0 || (!allow_zero && v == 0.0))
        {
          std::ostringstream os;
          os << what << ": invalid probability entry " << v;
          throw ValidationError(os.str());
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > ScenarioTree::kProbabilityTolerance)
      {
        std::ostringstream os;
        os.precision(17);
        os << what << ": probabilities sum to " << sum << ", expected 1";
        throw ValidationError(os.str());
      }
    }
  } // namespace detail

  inline ScenarioTree ScenarioTree::build_from_iid(std::span<const double> branch_probs, Index horizon)
  {
    if (horizon < 1)
      throw ValidationError("build_from_iid: horizon must be >= 1");
    detail::check_distribution(branch_probs, false, "build_from_iid");

    ScenarioTree tree;
    tree.num_events_ = static_cast<Index>(branch_probs.size());
    tree.stage_begin_ = {0};
    tree.add_node(0, -1, -1, 1.0);
    tree.stage_begin_.push_back(1);

    std::vector<std::pair<Index, double>> branches;
    for (Index w = 0; w < tree.num_events_; ++w)
      branches.emplace_back(w, branch_probs[w]);
    for (Index t = 1; t <= horizon; ++t)
      tree.grow_stage(t, [&](Index) -> const auto & { return branches; });
    return tree;
  }

  inline ScenarioTree ScenarioTree::build_from_markov(const Matrix &transition,
                                                      std::span<const double> initial_probs,
                                                      Index horizon)
  {
    if (horizon < 1)
      throw ValidationError("build_from_markov: horizon must be >= 1");
    const Index d = transition.rows();
    if (d < 1 || transition.cols() != d)
      throw ValidationError("build_from_markov: transition matrix must be square and nonempty");
    if (static_cast<Index>(initial_probs.size()) != d)
      throw ValidationError("build_from_markov: initial distribution size mismatch");
    detail::check_distribution(initial_probs, true, "build_from_markov (initial)");
    for (Index w = 0; w < d; ++w)
    {
      std::vector<double> row(static_cast<std::size_t>(d));
      for (Index k = 0; k < d; ++k)
        row[k] = transition(w, k);
      detail::check_distribution(row, true, "build_from_markov (transition row)");
    }

    ScenarioTree tree;
    tree.num_events_ = d;
    tree.stage_begin_ = {0};
    tree.add_node(0, -1, -1, 1.0);
    tree.stage_begin_.push_back(1);

    Vector first(d);
    for (Index w = 0; w < d; ++w)
    {
      first[w] = 0.0;
      for (Index k = 0; k < d; ++k)
        first[w] += initial_probs[k] * transition(k, w);
    }

    std::vector<std::pair<Index, double>> branches;
    tree.grow_stage(1, [&](Index) -> const auto & {
      branches.clear();
      for (Index w = 0; w < d; ++w)
        if (first[w] > 0.0)
          branches.emplace_back(w, first[w]);
      return branches;
    });
    for (Index t = 2; t <= horizon; ++t)
      tree.grow_stage(t, [&](Index p) -> const auto & {
        branches.clear();
        const Index from = tree.event_[p];
        for (Index w = 0; w < d; ++w)
          if (transition(from, w) > 0.0)
            branches.emplace_back(w, transition(from, w));
        return branches;
      });
    return tree;
  }

} // namespace spock
