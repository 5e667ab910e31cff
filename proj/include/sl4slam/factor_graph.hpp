#pragma once

// Pose graph over absolute submap transforms H_k, solved by Levenberg-Marquardt
// on the group with right-multiplicative updates H <- H Exp(delta). Templated
// on the group so the SL(4) backend and the Sim(3) baseline share one solver.
//
// Between factor residual: e = Log(H_i^-1 H_j M^-1), M the measured H^i_j.
// Its exact Jacobians under H <- H Exp(d) are
//   de/dd_i = -Jl^-1(e),   de/dd_j = Jr^-1(e) Ad_M,
// which reduce to -I and Ad_{H_i^-1 H_j} at a consistent configuration.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "sl4slam/errors.hpp"
#include "sl4slam/lie_traits.hpp"

namespace sl4slam {

using VariableId = std::size_t;

template <MatrixLieGroup G>
using GraphValues = std::map<VariableId, G>;

template <MatrixLieGroup G>
struct BetweenFactor {
  using Jacobian = typename LieGroupTraits<G>::Jacobian;
  VariableId i = 0;
  VariableId j = 0;
  G measured;
  Jacobian information = Jacobian::Identity();
};

/// Anchors a variable; residual Log(anchor^-1 H_i).
template <MatrixLieGroup G>
struct PriorFactor {
  using Jacobian = typename LieGroupTraits<G>::Jacobian;
  VariableId i = 0;
  G anchor;
  Jacobian information = Jacobian::Identity();
};

inline constexpr double kGaugePriorWeight = 1e6;

namespace detail {

template <class J>
void check_information(const J& info) {
  if ((info - info.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw InvalidFactor("information matrix is not symmetric");
  if (Eigen::LLT<J>(info).info() != Eigen::Success)
    throw InvalidFactor("information matrix is not positive definite");
}

}  // namespace detail

template <MatrixLieGroup G>
class FactorGraph {
 public:
  using Traits = LieGroupTraits<G>;
  using Jacobian = typename Traits::Jacobian;

  void add_between(VariableId i, VariableId j, const G& measured,
                   const Jacobian& information = Jacobian::Identity()) {
    if (i == j) throw InvalidFactor("between factor connects a variable to itself");
    detail::check_information(information);
    between_.push_back({i, j, measured, information});
  }

  void add_prior(VariableId i, const G& anchor,
                 const Jacobian& information = kGaugePriorWeight * Jacobian::Identity()) {
    detail::check_information(information);
    priors_.push_back({i, anchor, information});
  }

  const std::vector<BetweenFactor<G>>& between() const { return between_; }
  const std::vector<PriorFactor<G>>& priors() const { return priors_; }

 private:
  std::vector<BetweenFactor<G>> between_;
  std::vector<PriorFactor<G>> priors_;
};

namespace detail {

template <MatrixLieGroup G>
const G& value_of(const GraphValues<G>& v, VariableId id) {
  auto it = v.find(id);
  if (it == v.end()) throw MissingValue("no value for variable " + std::to_string(id));
  return it->second;
}

}  // namespace detail

template <MatrixLieGroup G>
typename LieGroupTraits<G>::Tangent residual(const BetweenFactor<G>& f, const GraphValues<G>& v) {
  using T = LieGroupTraits<G>;
  const G& hi = detail::value_of(v, f.i);
  const G& hj = detail::value_of(v, f.j);
  return T::log(T::compose(T::compose(T::inverse(hi), hj), T::inverse(f.measured)));
}

template <MatrixLieGroup G>
typename LieGroupTraits<G>::Tangent residual(const PriorFactor<G>& f, const GraphValues<G>& v) {
  using T = LieGroupTraits<G>;
  return T::log(T::compose(T::inverse(f.anchor), detail::value_of(v, f.i)));
}

template <MatrixLieGroup G>
struct BetweenLinearization {
  typename LieGroupTraits<G>::Jacobian j_i;
  typename LieGroupTraits<G>::Jacobian j_j;
  typename LieGroupTraits<G>::Tangent e;
};

template <MatrixLieGroup G>
BetweenLinearization<G> linearize(const BetweenFactor<G>& f, const GraphValues<G>& v) {
  using T = LieGroupTraits<G>;
  BetweenLinearization<G> lin;
  lin.e = residual(f, v);
  lin.j_i = -left_jacobian_inverse<G>(lin.e);
  lin.j_j = right_jacobian_inverse<G>(lin.e) * T::adjoint(f.measured);
  return lin;
}

template <MatrixLieGroup G>
double total_cost(const FactorGraph<G>& graph, const GraphValues<G>& v) {
  double cost = 0.0;
  for (const auto& f : graph.between()) {
    const auto e = residual(f, v);
    cost += e.dot(f.information * e);
  }
  for (const auto& f : graph.priors()) {
    const auto e = residual(f, v);
    cost += e.dot(f.information * e);
  }
  return cost;
}

struct LmConfig {
  int max_iters = 100;
  double lambda_init = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double rel_tol = 1e-8;
  double abs_tol = 1e-16;
  /// Re-project variables onto the group this often (iterations).
  int renormalize_every = 10;
};

enum class LmStatus { Converged, NonConvergence, Stalled };

inline const char* to_string(LmStatus s) {
  switch (s) {
    case LmStatus::Converged: return "converged";
    case LmStatus::NonConvergence: return "non_convergence";
    case LmStatus::Stalled: return "stalled";
  }
  return "?";
}

struct LmStep {
  int iteration = 0;
  double cost = 0.0;    ///< cost after the step if accepted, trial cost otherwise
  double lambda = 0.0;  ///< damping used for the step
  bool accepted = false;
};

struct OptimizationReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  LmStatus status = LmStatus::Converged;
  std::vector<LmStep> history;
};

template <MatrixLieGroup G>
struct OptimizationResult {
  GraphValues<G> values;
  OptimizationReport report;
};

namespace detail {

template <MatrixLieGroup G>
GraphValues<G> retract(const GraphValues<G>& v, const Eigen::VectorXd& delta,
                       const std::map<VariableId, Eigen::Index>& offset) {
  using T = LieGroupTraits<G>;
  GraphValues<G> out;
  for (const auto& [id, g] : v) {
    const typename T::Tangent d = delta.segment<T::kDof>(offset.at(id));
    out.emplace(id, T::compose(g, T::exp(d)));
  }
  return out;
}

}  // namespace detail

template <MatrixLieGroup G>
OptimizationResult<G> optimize_lm(const FactorGraph<G>& graph, const GraphValues<G>& init,
                                  const LmConfig& config = {}) {
  using T = LieGroupTraits<G>;
  constexpr int kDof = T::kDof;
  using Jac = typename T::Jacobian;

  if (graph.priors().empty())
    throw SingularNormalEquations("no prior factor; the gauge is unconstrained");
  for (const auto& f : graph.between()) {
    detail::value_of(init, f.i);
    detail::value_of(init, f.j);
  }
  for (const auto& f : graph.priors()) detail::value_of(init, f.i);

  std::map<VariableId, Eigen::Index> offset;
  Eigen::Index dim = 0;
  for (const auto& [id, g] : init) {
    offset[id] = dim;
    dim += kDof;
  }

  OptimizationResult<G> result{init, {}};
  GraphValues<G>& values = result.values;
  OptimizationReport& report = result.report;
  double cost = total_cost(graph, values);
  report.initial_cost = cost;
  report.final_cost = cost;
  double lambda = config.lambda_init;

  if (cost < config.abs_tol) return result;

  Eigen::MatrixXd hess(dim, dim);
  Eigen::VectorXd grad(dim);
  bool converged = false;
  bool stalled = false;
  bool checked_rank = false;
  while (report.iterations < config.max_iters && !converged && !stalled) {
    // Normal equations J^T W J delta = -J^T W e.
    hess.setZero();
    grad.setZero();
    for (const auto& f : graph.between()) {
      const auto lin = linearize(f, values);
      const Eigen::Index oi = offset[f.i], oj = offset[f.j];
      const Jac wi = f.information * lin.j_i;
      const Jac wj = f.information * lin.j_j;
      hess.block<kDof, kDof>(oi, oi) += lin.j_i.transpose() * wi;
      hess.block<kDof, kDof>(oj, oj) += lin.j_j.transpose() * wj;
      hess.block<kDof, kDof>(oi, oj) += lin.j_i.transpose() * wj;
      hess.block<kDof, kDof>(oj, oi) += lin.j_j.transpose() * wi;
      grad.segment<kDof>(oi) += wi.transpose() * lin.e;
      grad.segment<kDof>(oj) += wj.transpose() * lin.e;
    }
    for (const auto& f : graph.priors()) {
      const auto e = residual(f, values);
      const Jac j = right_jacobian_inverse<G>(e);
      const Jac w = f.information * j;
      const Eigen::Index oi = offset[f.i];
      hess.block<kDof, kDof>(oi, oi) += j.transpose() * w;
      grad.segment<kDof>(oi) += w.transpose() * e;
    }
    if (!checked_rank) {
      // Unconstrained directions (e.g. a component without a prior) show up
      // as a rank-deficient undamped system.
      const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
                                     hess, Eigen::EigenvaluesOnly).eigenvalues();
      if (!(ev(0) > 1e-12 * ev(dim - 1)))
        throw SingularNormalEquations("normal equations are rank deficient");
      checked_rank = true;
    }

    // Inner loop: raise lambda until a step decreases the cost.
    while (true) {
      ++report.iterations;
      Eigen::MatrixXd damped = hess;
      damped.diagonal() += lambda * hess.diagonal();
      const Eigen::VectorXd delta = damped.ldlt().solve(-grad);
      LmStep step{report.iterations, 0.0, lambda, false};
      double trial_cost = std::numeric_limits<double>::infinity();
      GraphValues<G> trial;
      if (delta.allFinite()) {
        try {
          trial = detail::retract(values, delta, offset);
          trial_cost = total_cost(graph, trial);
        } catch (const LogDomainError&) {
        }
      }
      step.cost = trial_cost;
      if (trial_cost < cost) {
        step.accepted = true;
        report.history.push_back(step);
        const double decrease = cost - trial_cost;
        values = std::move(trial);
        if (config.renormalize_every > 0 && report.iterations % config.renormalize_every == 0)
          for (auto& [id, g] : values) g = T::renormalize(g);
        cost = total_cost(graph, values);
        lambda = std::max(lambda / config.lambda_down, 1e-15);
        converged = cost < config.abs_tol || decrease / (cost + decrease) < config.rel_tol;
        break;
      }
      report.history.push_back(step);
      lambda *= config.lambda_up;
      if (lambda > 1e16) {
        stalled = true;
        break;
      }
      if (report.iterations >= config.max_iters) break;
    }
  }

  // Leave every variable exactly on the group.
  for (auto& [id, g] : values) g = T::renormalize(g);
  report.final_cost = total_cost(graph, values);
  if (converged)
    report.status = LmStatus::Converged;
  else if (stalled)
    report.status = report.final_cost < config.abs_tol ? LmStatus::Converged : LmStatus::Stalled;
  else
    report.status = LmStatus::NonConvergence;
  return result;
}

/// Line-oriented dump: one line per node, between factor and prior.
template <MatrixLieGroup G>
void write_graph_dump(std::ostream& os, const FactorGraph<G>& graph, const GraphValues<G>& v) {
  using T = LieGroupTraits<G>;
  os << "# group " << T::kName << "\n";
  for (const auto& [id, g] : v) {
    const Mat4 m = T::matrix(g);
    os << "node " << id << " det " << m.determinant();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) os << ' ' << m(r, c);
    os << "\n";
  }
  for (const auto& f : graph.between()) {
    os << "between " << f.i << ' ' << f.j << " residual_norm ";
    try {
      os << residual(f, v).norm();
    } catch (const LogDomainError&) {
      os << "log_domain_error";
    }
    os << "\n";
  }
  for (const auto& f : graph.priors()) os << "prior " << f.i << " residual_norm " << residual(f, v).norm() << "\n";
}

}  // namespace sl4slam
