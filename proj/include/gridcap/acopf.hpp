#pragma once

// Nonlinear AC optimal power flow on the energized island.
//
// Decision vector: [theta (bus), V (bus), Pg (gen), Qg (gen), s (sheddable bus)]
// with per-unit powers on the system base. The slack angle is a fixed
// variable at 0. Power balance at bus i is written as
//
//   generation - demand - flow = 0
//
// with PV units folded into the demand as negative loads and shunt
// capacitors carried in the admittance diagonal.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "gridcap/errors.hpp"
#include "gridcap/grid_model.hpp"
#include "gridcap/nlp/interior_point.hpp"

namespace gridcap {

enum class Objective { Economic, OptimalLoadDelivery };
enum class OpfStatus { Optimal, MaxIterations, Infeasible };

inline const char* to_string(OpfStatus s) {
  switch (s) {
    case OpfStatus::Optimal: return "Optimal";
    case OpfStatus::MaxIterations: return "MaxIterations";
    case OpfStatus::Infeasible: return "Infeasible";
  }
  return "?";
}

struct ObjectiveOptions {
  double voll_rate = 1000.0;  // $/MWh
  double eps_pg = 1e-3;       // weight on total generation, fraction of cost scale
  double eps_loss = 1e-4;     // weight on losses, fraction of cost scale
};

struct SolverOptions {
  double feas_tol = 1e-6;
  double kkt_tol = 1e-6;
  double comp_tol = 1e-6;
  int max_iter = 500;
  bool verbose = false;

  /// Termination tolerance handed to the interior-point iteration.
  double internal_tol() const { return 1e-3 * std::min({feas_tol, kkt_tol, comp_tol}); }
};

/// One timestep of the AC-OPF. Per-bus vectors follow the network's bus order.
struct OpfProblem {
  std::shared_ptr<const Network> network;
  Eigen::VectorXd p_d;    // true load, p.u.
  Eigen::VectorXd q_d;    // p.u.
  Eigen::VectorXd p_inj;  // PV injection, p.u.
  Eigen::VectorXd q_inj;  // p.u.
  Eigen::VectorXd v_min;
  Eigen::VectorXd v_max;
  double dt = 1.0;  // hours
  Objective objective = Objective::Economic;
  ObjectiveOptions objective_options;
  SolverOptions solver;

  /// Problem with no demand or injection and the network's voltage limits.
  static OpfProblem for_network(std::shared_ptr<const Network> net) {
    OpfProblem p;
    const auto n = static_cast<Eigen::Index>(net->bus_count());
    p.p_d = p.q_d = p.p_inj = p.q_inj = Eigen::VectorXd::Zero(n);
    p.v_min.resize(n);
    p.v_max.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p.v_min(i) = net->buses()[static_cast<std::size_t>(i)].v_min;
      p.v_max(i) = net->buses()[static_cast<std::size_t>(i)].v_max;
    }
    p.network = std::move(net);
    return p;
  }

  /// Sets the demand at one bus in MW / Mvar.
  OpfProblem& set_demand(BusId bus, double p_mw, double q_mvar) {
    const auto k = static_cast<Eigen::Index>(network->index_of(bus));
    p_d(k) = p_mw / network->s_base();
    q_d(k) = q_mvar / network->s_base();
    return *this;
  }

  void check() const {
    if (!network) throw ModelError("OPF problem has no network");
    const auto n = static_cast<Eigen::Index>(network->bus_count());
    for (const auto* v : {&p_d, &q_d, &p_inj, &q_inj, &v_min, &v_max}) {
      if (v->size() != n)
        throw ModelError(fmt::format("OPF problem vector has length {}, network has {} buses", v->size(), n));
    }
    if (!(dt > 0.0)) throw ModelError("dt must be positive");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(v_min(i) > 0.0 && v_min(i) <= v_max(i)))
        throw ModelError(fmt::format("bus {}: voltage bounds [{}, {}] invalid",
                                     to_int(network->buses()[static_cast<std::size_t>(i)].id), v_min(i), v_max(i)));
    }
  }
};

/// Primal operating point on the energized buses.
struct PrimalPoint {
  Eigen::VectorXd v;         // p.u., per energized bus
  Eigen::VectorXd theta;     // rad
  Eigen::VectorXd p_g;       // MW per generator
  Eigen::VectorXd q_g;       // Mvar per generator
  Eigen::VectorXd shed;      // fraction in [0, 1] per energized bus
};

struct OpfSolution {
  OpfStatus status = OpfStatus::MaxIterations;
  Objective objective = Objective::Economic;
  std::vector<BusId> buses;  // energized buses, order of per-bus vectors
  double s_base = 1.0;

  Eigen::VectorXd p_g, q_g;          // MW, Mvar
  Eigen::VectorXd v, theta, shed;    // per bus
  // Multipliers in $ per p.u.; see the *_per_mw accessors for $/MW, $/Mvar.
  Eigen::VectorXd lambda_p, lambda_q;
  Eigen::VectorXd mu_vmax, mu_vmin;  // $ per p.u. voltage
  Eigen::VectorXd mu_pg_max, mu_pg_min, mu_qg_max, mu_qg_min;
  Eigen::VectorXd mu_shed_max, mu_shed_min;
  bool has_multipliers = false;

  Eigen::VectorXd mismatch;  // per bus max(|dP|, |dQ|), p.u.
  double generation_cost = 0.0;     // $
  double shed_penalty = 0.0;        // $
  double objective_value = 0.0;     // generation_cost + shed_penalty
  double augmented_objective = 0.0; // minimized value incl. scalarization terms
  int iterations = 0;
  int restorations = 0;

  double max_mismatch() const { return mismatch.size() ? mismatch.maxCoeff() : 0.0; }
  double mean_mismatch() const { return mismatch.size() ? mismatch.mean() : 0.0; }
  Eigen::VectorXd lambda_p_per_mw() const { return lambda_p / s_base; }
  Eigen::VectorXd lambda_q_per_mvar() const { return lambda_q / s_base; }

  PrimalPoint primal() const { return {v, theta, p_g, q_g, shed}; }
};

namespace detail {

/// P_i, Q_i flows out of each bus for the polar power-flow equations.
template <typename Scalar>
void bus_injections(const Eigen::MatrixXd& G, const Eigen::MatrixXd& B, const Scalar* v, const Scalar* th,
                    Scalar* p, Scalar* q) {
  using std::cos;
  using std::sin;
  const Eigen::Index n = G.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar pi(0.0), qi(0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double g = G(i, j), b = B(i, j);
      if (g == 0.0 && b == 0.0) continue;
      const Scalar t = th[i] - th[j];
      const Scalar c = cos(t), s = sin(t);
      pi += v[i] * v[j] * (g * c + b * s);
      qi += v[i] * v[j] * (g * s - b * c);
    }
    p[i] = pi;
    q[i] = qi;
  }
}

}  // namespace detail

/// NLP adapter consumed by the interior-point solver.
class AcopfNlp {
 public:
  explicit AcopfNlp(const OpfProblem& prob) : prob_(prob) {
    prob.check();
    const Network& net = *prob.network;
    s_base_ = net.s_base();
    buses_ = net.energized();
    ne_ = static_cast<Eigen::Index>(buses_.size());
    std::vector<Eigen::Index> local(net.bus_count(), -1);
    for (Eigen::Index k = 0; k < ne_; ++k) local[buses_[static_cast<std::size_t>(k)]] = k;
    const AdmittanceMatrix y = build_admittance(net);
    G_.resize(ne_, ne_);
    B_.resize(ne_, ne_);
    for (Eigen::Index a = 0; a < ne_; ++a) {
      for (Eigen::Index b = 0; b < ne_; ++b) {
        const auto ia = static_cast<Eigen::Index>(buses_[static_cast<std::size_t>(a)]);
        const auto ib = static_cast<Eigen::Index>(buses_[static_cast<std::size_t>(b)]);
        G_(a, b) = y.g(ia, ib);
        B_(a, b) = y.b(ia, ib);
      }
    }
    slack_ = local[net.slack_index()];
    for (const auto& g : net.generators()) gen_bus_.push_back(local[net.index_of(g.bus)]);
    ng_ = static_cast<Eigen::Index>(gen_bus_.size());

    pd_.resize(ne_);
    qd_.resize(ne_);
    pinj_.resize(ne_);
    qinj_.resize(ne_);
    for (Eigen::Index k = 0; k < ne_; ++k) {
      const auto i = static_cast<Eigen::Index>(buses_[static_cast<std::size_t>(k)]);
      pd_(k) = prob.p_d(i);
      qd_(k) = prob.q_d(i);
      pinj_(k) = prob.p_inj(i);
      qinj_(k) = prob.q_inj(i);
    }
    shed_bus_.clear();
    shed_var_.assign(static_cast<std::size_t>(ne_), -1);
    if (prob.objective == Objective::OptimalLoadDelivery) {
      for (Eigen::Index k = 0; k < ne_; ++k) {
        if (pd_(k) > 0.0) {
          shed_var_[static_cast<std::size_t>(k)] = static_cast<Eigen::Index>(shed_bus_.size());
          shed_bus_.push_back(k);
        }
      }
    }
    ns_ = static_cast<Eigen::Index>(shed_bus_.size());

    double mean_marginal = 0.0, max_marginal = 0.0;
    for (const auto& g : net.generators()) {
      mean_marginal += g.cost.marginal(0.5 * (g.p_min + g.p_max));
      max_marginal = std::max(max_marginal, std::abs(g.cost.marginal(g.p_max)));
    }
    mean_marginal /= static_cast<double>(std::max<Eigen::Index>(1, ng_));
    cost_scale_ = mean_marginal > 0.0 ? mean_marginal : 1.0;
    obj_scale_ = 1.0 / std::max(1.0, prob.dt * s_base_ * max_marginal);
  }

  // --- layout
  Eigen::Index bus_count() const { return ne_; }
  Eigen::Index gen_count() const { return ng_; }
  Eigen::Index shed_count() const { return ns_; }
  Eigen::Index theta_at(Eigen::Index k) const { return k; }
  Eigen::Index v_at(Eigen::Index k) const { return ne_ + k; }
  Eigen::Index pg_at(Eigen::Index g) const { return 2 * ne_ + g; }
  Eigen::Index qg_at(Eigen::Index g) const { return 2 * ne_ + ng_ + g; }
  Eigen::Index s_at(Eigen::Index j) const { return 2 * ne_ + 2 * ng_ + j; }
  /// Shed variable for a local bus, or -1.
  Eigen::Index shed_var_of_bus(Eigen::Index k) const { return shed_var_[static_cast<std::size_t>(k)]; }
  const std::vector<std::size_t>& network_buses() const { return buses_; }
  double objective_scale() const { return obj_scale_; }
  double cost_scale() const { return cost_scale_; }
  double s_base() const { return s_base_; }
  const OpfProblem& problem() const { return prob_; }

  // --- SmoothNlp
  Eigen::Index num_variables() const { return 2 * ne_ + 2 * ng_ + ns_; }
  Eigen::Index num_constraints() const { return 2 * ne_; }

  Eigen::VectorXd lower_bounds() const {
    Eigen::VectorXd l(num_variables());
    fill_bounds(l, true);
    return l;
  }
  Eigen::VectorXd upper_bounds() const {
    Eigen::VectorXd u(num_variables());
    fill_bounds(u, false);
    return u;
  }

  template <typename Scalar>
  Scalar objective_generic(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) const {
    const Network& net = *prob_.network;
    const ObjectiveOptions& oo = prob_.objective_options;
    Scalar gen(0.0), total_pg(0.0);
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& cost = net.generators()[static_cast<std::size_t>(g)].cost;
      const Scalar p = s_base_ * x(pg_at(g));
      gen += (cost.c2 * p + cost.c1) * p + cost.c0;
      total_pg += p;
    }
    Scalar net_load(0.0), shed_mw(0.0);
    for (Eigen::Index k = 0; k < ne_; ++k) {
      Scalar served = Scalar(pd_(k));
      if (auto j = shed_var_of_bus(k); j >= 0) {
        served = pd_(k) * (1.0 - x(s_at(j)));
        shed_mw += s_base_ * pd_(k) * x(s_at(j));
      }
      net_load += s_base_ * (served - pinj_(k));
    }
    const Scalar losses = total_pg - net_load;
    Scalar f = gen + cost_scale_ * (oo.eps_pg * total_pg + oo.eps_loss * losses);
    if (prob_.objective == Objective::OptimalLoadDelivery) f += oo.voll_rate * shed_mw;
    return prob_.dt * f;
  }

  double objective(const Eigen::VectorXd& x) const { return objective_generic<double>(x); }

  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const {
    const Network& net = *prob_.network;
    const ObjectiveOptions& oo = prob_.objective_options;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(num_variables());
    const double lin = cost_scale_ * (oo.eps_pg + oo.eps_loss);
    for (Eigen::Index i = 0; i < ng_; ++i) {
      const auto& cost = net.generators()[static_cast<std::size_t>(i)].cost;
      g(pg_at(i)) = prob_.dt * s_base_ * (cost.marginal(s_base_ * x(pg_at(i))) + lin);
    }
    for (Eigen::Index j = 0; j < ns_; ++j) {
      const Eigen::Index k = shed_bus_[static_cast<std::size_t>(j)];
      double d = cost_scale_ * oo.eps_loss * s_base_ * pd_(k);
      if (prob_.objective == Objective::OptimalLoadDelivery) d += oo.voll_rate * s_base_ * pd_(k);
      g(s_at(j)) = prob_.dt * d;
    }
    return g;
  }

  template <typename Scalar>
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> constraints_generic(
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) const {
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    Vec v = x.segment(ne_, ne_);
    Vec th = x.segment(0, ne_);
    Vec p(ne_), q(ne_);
    detail::bus_injections<Scalar>(G_, B_, v.data(), th.data(), p.data(), q.data());
    Vec c(2 * ne_);
    for (Eigen::Index k = 0; k < ne_; ++k) {
      Scalar scale(1.0);
      if (auto j = shed_var_of_bus(k); j >= 0) scale = 1.0 - x(s_at(j));
      c(k) = -pd_(k) * scale + pinj_(k) - p(k);
      c(ne_ + k) = -qd_(k) * scale + qinj_(k) - q(k);
    }
    for (Eigen::Index g = 0; g < ng_; ++g) {
      c(gen_bus_[static_cast<std::size_t>(g)]) += x(pg_at(g));
      c(ne_ + gen_bus_[static_cast<std::size_t>(g)]) += x(qg_at(g));
    }
    return c;
  }

  Eigen::VectorXd constraints(const Eigen::VectorXd& x) const { return constraints_generic<double>(x); }

  Eigen::MatrixXd constraint_jacobian(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(num_constraints(), num_variables());
    const Eigen::VectorXd v = x.segment(ne_, ne_);
    const Eigen::VectorXd th = x.segment(0, ne_);
    Eigen::VectorXd p(ne_), q(ne_);
    detail::bus_injections<double>(G_, B_, v.data(), th.data(), p.data(), q.data());
    for (Eigen::Index i = 0; i < ne_; ++i) {
      for (Eigen::Index j = 0; j < ne_; ++j) {
        if (i == j) continue;
        const double g = G_(i, j), b = B_(i, j);
        if (g == 0.0 && b == 0.0) continue;
        const double t = th(i) - th(j), c = std::cos(t), s = std::sin(t);
        // minus sign: flows enter the balance with a negative sign
        J(i, theta_at(j)) = -v(i) * v(j) * (g * s - b * c);
        J(i, v_at(j)) = -v(i) * (g * c + b * s);
        J(ne_ + i, theta_at(j)) = v(i) * v(j) * (g * c + b * s);
        J(ne_ + i, v_at(j)) = -v(i) * (g * s - b * c);
      }
      const double gii = G_(i, i), bii = B_(i, i);
      J(i, theta_at(i)) = q(i) + bii * v(i) * v(i);
      J(i, v_at(i)) = -(p(i) / v(i) + gii * v(i));
      J(ne_ + i, theta_at(i)) = -(p(i) - gii * v(i) * v(i));
      J(ne_ + i, v_at(i)) = -(q(i) / v(i) - bii * v(i));
    }
    for (Eigen::Index g = 0; g < ng_; ++g) {
      J(gen_bus_[static_cast<std::size_t>(g)], pg_at(g)) = 1.0;
      J(ne_ + gen_bus_[static_cast<std::size_t>(g)], qg_at(g)) = 1.0;
    }
    for (Eigen::Index jv = 0; jv < ns_; ++jv) {
      const Eigen::Index k = shed_bus_[static_cast<std::size_t>(jv)];
      J(k, s_at(jv)) = pd_(k);
      J(ne_ + k, s_at(jv)) = qd_(k);
    }
    return J;
  }

  Eigen::MatrixXd lagrangian_hessian(const Eigen::VectorXd& x, double obj_factor, const Eigen::VectorXd& y) const {
    const Index nv = num_variables();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nv, nv);
    const Network& net = *prob_.network;
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& cost = net.generators()[static_cast<std::size_t>(g)].cost;
      H(pg_at(g), pg_at(g)) = obj_factor * prob_.dt * 2.0 * cost.c2 * s_base_ * s_base_;
    }
    auto add = [&H](Eigen::Index r, Eigen::Index c, double val) {
      if (r == c) {
        H(r, r) += val;
      } else {
        H(r, c) += val;
        H(c, r) += val;
      }
    };
    const Eigen::VectorXd v = x.segment(ne_, ne_);
    const Eigen::VectorXd th = x.segment(0, ne_);
    for (Eigen::Index i = 0; i < ne_; ++i) {
      // constraint carries -P_i and -Q_i
      const double a = -y(i), bq = -y(ne_ + i);
      add(v_at(i), v_at(i), 2.0 * a * G_(i, i) - 2.0 * bq * B_(i, i));
      for (Eigen::Index j = 0; j < ne_; ++j) {
        if (i == j) continue;
        const double g = G_(i, j), b = B_(i, j);
        if (g == 0.0 && b == 0.0) continue;
        const double t = th(i) - th(j), c = std::cos(t), s = std::sin(t);
        const double h = a * (g * c + b * s) + bq * (g * s - b * c);
        const double h1 = a * (-g * s + b * c) + bq * (g * c + b * s);
        const double h2 = -h;
        const double vv = v(i) * v(j);
        add(theta_at(i), theta_at(i), vv * h2);
        add(theta_at(j), theta_at(j), vv * h2);
        add(theta_at(i), theta_at(j), -vv * h2);
        add(v_at(i), v_at(j), h);
        add(v_at(i), theta_at(i), v(j) * h1);
        add(v_at(i), theta_at(j), -v(j) * h1);
        add(v_at(j), theta_at(i), v(i) * h1);
        add(v_at(j), theta_at(j), -v(i) * h1);
      }
    }
    return H;
  }

  /// Flat start: V = 1 (clipped to bounds), theta = 0, generation at mid range.
  Eigen::VectorXd flat_start() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(num_variables());
    const Network& net = *prob_.network;
    for (Eigen::Index k = 0; k < ne_; ++k) {
      const auto i = static_cast<Eigen::Index>(buses_[static_cast<std::size_t>(k)]);
      x(v_at(k)) = std::clamp(1.0, prob_.v_min(i), prob_.v_max(i));
    }
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& gen = net.generators()[static_cast<std::size_t>(g)];
      x(pg_at(g)) = 0.5 * (gen.p_min + gen.p_max) / s_base_;
      x(qg_at(g)) = 0.5 * (gen.q_min + gen.q_max) / s_base_;
    }
    return x;
  }

  Eigen::VectorXd pack(const PrimalPoint& pt) const {
    if (pt.v.size() != ne_ || pt.theta.size() != ne_ || pt.p_g.size() != ng_ || pt.q_g.size() != ng_)
      throw ModelError("primal point dimensions do not match the network");
    Eigen::VectorXd x = Eigen::VectorXd::Zero(num_variables());
    x.segment(0, ne_) = pt.theta;
    x.segment(ne_, ne_) = pt.v;
    x.segment(2 * ne_, ng_) = pt.p_g / s_base_;
    x.segment(2 * ne_ + ng_, ng_) = pt.q_g / s_base_;
    for (Eigen::Index j = 0; j < ns_; ++j) {
      const Eigen::Index k = shed_bus_[static_cast<std::size_t>(j)];
      x(s_at(j)) = pt.shed.size() == ne_ ? pt.shed(k) : 0.0;
    }
    return x;
  }

  PrimalPoint unpack(const Eigen::VectorXd& x) const {
    PrimalPoint pt;
    pt.theta = x.segment(0, ne_);
    pt.v = x.segment(ne_, ne_);
    pt.p_g = x.segment(2 * ne_, ng_) * s_base_;
    pt.q_g = x.segment(2 * ne_ + ng_, ng_) * s_base_;
    pt.shed = Eigen::VectorXd::Zero(ne_);
    for (Eigen::Index j = 0; j < ns_; ++j) pt.shed(shed_bus_[static_cast<std::size_t>(j)]) = x(s_at(j));
    return pt;
  }

 private:
  using Index = Eigen::Index;

  void fill_bounds(Eigen::VectorXd& out, bool lower) const {
    const double inf = std::numeric_limits<double>::infinity();
    const Network& net = *prob_.network;
    for (Eigen::Index k = 0; k < ne_; ++k) {
      out(theta_at(k)) = k == slack_ ? 0.0 : (lower ? -inf : inf);
      const auto i = static_cast<Eigen::Index>(buses_[static_cast<std::size_t>(k)]);
      out(v_at(k)) = lower ? prob_.v_min(i) : prob_.v_max(i);
    }
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& gen = net.generators()[static_cast<std::size_t>(g)];
      out(pg_at(g)) = (lower ? gen.p_min : gen.p_max) / s_base_;
      out(qg_at(g)) = (lower ? gen.q_min : gen.q_max) / s_base_;
    }
    for (Eigen::Index j = 0; j < ns_; ++j) out(s_at(j)) = lower ? 0.0 : 1.0;
  }

  const OpfProblem& prob_;
  double s_base_ = 1.0;
  std::vector<std::size_t> buses_;
  Eigen::Index ne_ = 0, ng_ = 0, ns_ = 0, slack_ = 0;
  Eigen::MatrixXd G_, B_;
  std::vector<Eigen::Index> gen_bus_;
  std::vector<Eigen::Index> shed_bus_;
  std::vector<Eigen::Index> shed_var_;
  Eigen::VectorXd pd_, qd_, pinj_, qinj_;
  double cost_scale_ = 1.0;
  double obj_scale_ = 1.0;
};

/// Per-bus (dP, dQ) balance residuals in p.u. at the given point.
struct BusResiduals {
  Eigen::VectorXd dp;
  Eigen::VectorXd dq;
};

inline BusResiduals residuals(const PrimalPoint& state, const OpfProblem& problem) {
  AcopfNlp nlp(problem);
  const Eigen::VectorXd c = nlp.constraints(nlp.pack(state));
  const auto n = nlp.bus_count();
  return {c.head(n), c.tail(n)};
}

/// dt * sum_i C_i(p_i), plus the shed penalty when the objective is OLD.
/// `shed` is per energized bus and may be empty.
inline double objective_cost(const Eigen::VectorXd& p_g_mw, const OpfProblem& problem,
                             const Eigen::VectorXd& shed = {}) {
  const Network& net = *problem.network;
  if (p_g_mw.size() != static_cast<Eigen::Index>(net.generators().size()))
    throw ModelError("generator dispatch has wrong length");
  double cost = 0.0;
  for (std::size_t g = 0; g < net.generators().size(); ++g)
    cost += net.generators()[g].cost(p_g_mw(static_cast<Eigen::Index>(g)));
  cost *= problem.dt;
  if (problem.objective == Objective::OptimalLoadDelivery && shed.size() > 0) {
    const auto& energized = net.energized();
    for (std::size_t k = 0; k < energized.size(); ++k) {
      const double pd_mw = problem.p_d(static_cast<Eigen::Index>(energized[k])) * net.s_base();
      cost += problem.objective_options.voll_rate * shed(static_cast<Eigen::Index>(k)) * pd_mw * problem.dt;
    }
  }
  return cost;
}

namespace detail {

inline OpfSolution build_solution(const AcopfNlp& nlp, const nlp::IpmResult& r, OpfStatus status) {
  const OpfProblem& prob = nlp.problem();
  const Network& net = *prob.network;
  OpfSolution sol;
  sol.status = status;
  sol.objective = prob.objective;
  sol.s_base = net.s_base();
  for (auto i : nlp.network_buses()) sol.buses.push_back(net.buses()[i].id);
  const PrimalPoint pt = nlp.unpack(r.x);
  sol.v = pt.v;
  sol.theta = pt.theta;
  sol.p_g = pt.p_g;
  sol.q_g = pt.q_g;
  sol.shed = pt.shed;

  const auto ne = nlp.bus_count(), ng = nlp.gen_count();
  sol.lambda_p = r.lambda.head(ne);
  sol.lambda_q = r.lambda.tail(ne);
  sol.mu_vmax.resize(ne);
  sol.mu_vmin.resize(ne);
  sol.mu_shed_max = Eigen::VectorXd::Zero(ne);
  sol.mu_shed_min = Eigen::VectorXd::Zero(ne);
  for (Eigen::Index k = 0; k < ne; ++k) {
    sol.mu_vmax(k) = r.z_upper(nlp.v_at(k));
    sol.mu_vmin(k) = r.z_lower(nlp.v_at(k));
    if (auto j = nlp.shed_var_of_bus(k); j >= 0) {
      sol.mu_shed_max(k) = r.z_upper(nlp.s_at(j));
      sol.mu_shed_min(k) = r.z_lower(nlp.s_at(j));
    }
  }
  sol.mu_pg_max.resize(ng);
  sol.mu_pg_min.resize(ng);
  sol.mu_qg_max.resize(ng);
  sol.mu_qg_min.resize(ng);
  for (Eigen::Index g = 0; g < ng; ++g) {
    sol.mu_pg_max(g) = r.z_upper(nlp.pg_at(g));
    sol.mu_pg_min(g) = r.z_lower(nlp.pg_at(g));
    sol.mu_qg_max(g) = r.z_upper(nlp.qg_at(g));
    sol.mu_qg_min(g) = r.z_lower(nlp.qg_at(g));
  }
  sol.has_multipliers = true;

  const Eigen::VectorXd c = nlp.constraints(r.x);
  sol.mismatch = c.head(ne).cwiseAbs().cwiseMax(c.tail(ne).cwiseAbs());

  sol.generation_cost = objective_cost(pt.p_g, OpfProblem{prob.network, prob.p_d, prob.q_d, prob.p_inj, prob.q_inj,
                                                          prob.v_min, prob.v_max, prob.dt, Objective::Economic,
                                                          prob.objective_options, prob.solver});
  sol.objective_value = objective_cost(pt.p_g, prob, pt.shed);
  sol.shed_penalty = sol.objective_value - sol.generation_cost;
  sol.augmented_objective = nlp.objective(r.x);
  sol.iterations = r.iterations;
  sol.restorations = r.restorations;
  return sol;
}

}  // namespace detail

/// Solves one AC-OPF. A warm start seeds the primal point and the balance
/// multipliers; bound multipliers restart from the barrier center.
inline OpfSolution solve(const OpfProblem& problem, const OpfSolution* warm_start = nullptr) {
  AcopfNlp nlp(problem);
  Eigen::VectorXd x0 = nlp.flat_start();
  std::optional<Eigen::VectorXd> lambda0;
  if (warm_start) {
    if (warm_start->v.size() != nlp.bus_count() || warm_start->p_g.size() != nlp.gen_count())
      throw ModelError("warm start dimensions do not match the problem");
    x0 = nlp.pack(warm_start->primal());
    if (warm_start->has_multipliers && warm_start->status == OpfStatus::Optimal &&
        warm_start->lambda_p.size() == nlp.bus_count()) {
      Eigen::VectorXd lam(2 * nlp.bus_count());
      lam << warm_start->lambda_p, warm_start->lambda_q;
      lambda0 = lam;
    }
  }
  nlp::IpmOptions opt;
  opt.tol = problem.solver.internal_tol();
  opt.max_iter = problem.solver.max_iter;
  opt.obj_scale = nlp.objective_scale();
  opt.verbose = problem.solver.verbose;
  const nlp::IpmResult r = nlp::solve_interior_point(nlp, x0, opt, lambda0);

  OpfStatus status = OpfStatus::MaxIterations;
  if (r.status == nlp::IpmStatus::Optimal) status = OpfStatus::Optimal;
  else if (r.status == nlp::IpmStatus::Infeasible) status = OpfStatus::Infeasible;
  OpfSolution sol = detail::build_solution(nlp, r, status);
  if (sol.status == OpfStatus::Optimal && sol.max_mismatch() > problem.solver.feas_tol)
    sol.status = OpfStatus::MaxIterations;
  return sol;
}

// ---------------------------------------------------------------------------
// KKT verification
// ---------------------------------------------------------------------------

struct KktReport {
  double stationarity = 0.0;     // scaled inf-norm of the Lagrangian gradient
  double feasibility = 0.0;      // inf-norm of the balance residuals, p.u.
  double complementarity = 0.0;  // scaled max |mu * slack|
  double min_multiplier = 0.0;   // most negative bound multiplier, $/p.u.
  std::vector<std::string> violations;

  bool nonnegative(double floor = -1e-9) const { return min_multiplier >= floor; }
  bool satisfied(const SolverOptions& tol) const {
    return stationarity <= tol.kkt_tol && feasibility <= tol.feas_tol && complementarity <= tol.comp_tol &&
           nonnegative();
  }
};

/// Recomputes stationarity, feasibility and complementarity from the reported
/// solution alone. Derivatives come from complex-step differentiation of the
/// model equations, not from the analytic Jacobian the solver used.
/// Stationarity and complementarity are reported in the objective scaling
/// (1 / max(1, dt * s_base * max marginal cost)) with stationarity further
/// divided by the usual multiplier-size factor s_d = max(100, mean |y|) / 100.
inline KktReport kkt_report(const OpfSolution& sol, const OpfProblem& problem) {
  AcopfNlp nlp(problem);
  KktReport rep;
  if (!sol.has_multipliers) {
    rep.violations.emplace_back("solution carries no multipliers");
    return rep;
  }
  using Cx = std::complex<double>;
  using CVec = Eigen::Matrix<Cx, Eigen::Dynamic, 1>;
  const Eigen::VectorXd x = nlp.pack(sol.primal());
  const auto nv = nlp.num_variables(), m = nlp.num_constraints();
  const double h = 1e-30;
  Eigen::VectorXd grad(nv);
  Eigen::MatrixXd jac(m, nv);
  for (Eigen::Index k = 0; k < nv; ++k) {
    CVec xc = x.cast<Cx>();
    xc(k) += Cx(0.0, h);
    grad(k) = nlp.objective_generic<Cx>(xc).imag() / h;
    jac.col(k) = nlp.constraints_generic<Cx>(xc).imag() / h;
  }
  const auto ne = nlp.bus_count(), ng = nlp.gen_count();
  Eigen::VectorXd lam(m);
  lam << sol.lambda_p, sol.lambda_q;
  Eigen::VectorXd zl = Eigen::VectorXd::Zero(nv), zu = Eigen::VectorXd::Zero(nv);
  for (Eigen::Index k = 0; k < ne; ++k) {
    zl(nlp.v_at(k)) = sol.mu_vmin(k);
    zu(nlp.v_at(k)) = sol.mu_vmax(k);
    if (auto j = nlp.shed_var_of_bus(k); j >= 0) {
      zl(nlp.s_at(j)) = sol.mu_shed_min(k);
      zu(nlp.s_at(j)) = sol.mu_shed_max(k);
    }
  }
  for (Eigen::Index g = 0; g < ng; ++g) {
    zl(nlp.pg_at(g)) = sol.mu_pg_min(g);
    zu(nlp.pg_at(g)) = sol.mu_pg_max(g);
    zl(nlp.qg_at(g)) = sol.mu_qg_min(g);
    zu(nlp.qg_at(g)) = sol.mu_qg_max(g);
  }
  const Eigen::VectorXd l = nlp.lower_bounds(), u = nlp.upper_bounds();
  Eigen::VectorXd r = grad + jac.transpose() * lam - zl + zu;
  // The slack angle is a reference, not a decision: its row is unconstrained.
  for (Eigen::Index k = 0; k < ne; ++k) {
    if (l(nlp.theta_at(k)) == u(nlp.theta_at(k))) r(nlp.theta_at(k)) = 0.0;
  }
  const double sf = nlp.objective_scale();
  double zsum = 0.0;
  Eigen::Index nb = 0;
  double comp = 0.0;
  rep.min_multiplier = 0.0;
  for (Eigen::Index k = 0; k < nv; ++k) {
    rep.min_multiplier = std::min({rep.min_multiplier, zl(k), zu(k)});
    if (std::isfinite(l(k)) && l(k) != u(k)) {
      comp = std::max(comp, std::abs(zl(k) * (x(k) - l(k))));
      zsum += std::abs(zl(k));
      ++nb;
    }
    if (std::isfinite(u(k)) && l(k) != u(k)) {
      comp = std::max(comp, std::abs(zu(k) * (u(k) - x(k))));
      zsum += std::abs(zu(k));
      ++nb;
    }
  }
  const double ysum = sf * (lam.cwiseAbs().sum() + zsum);
  const double sd = std::max(100.0, ysum / static_cast<double>(std::max<Eigen::Index>(1, m + nb))) / 100.0;
  rep.stationarity = sf * r.cwiseAbs().maxCoeff() / sd;
  rep.feasibility = nlp.constraints(x).cwiseAbs().maxCoeff();
  rep.complementarity = sf * comp;

  const SolverOptions& tol = problem.solver;
  if (rep.stationarity > tol.kkt_tol)
    rep.violations.push_back(fmt::format("stationarity {:.3e} > {:.1e}", rep.stationarity, tol.kkt_tol));
  if (rep.feasibility > tol.feas_tol)
    rep.violations.push_back(fmt::format("feasibility {:.3e} > {:.1e}", rep.feasibility, tol.feas_tol));
  if (rep.complementarity > tol.comp_tol)
    rep.violations.push_back(fmt::format("complementarity {:.3e} > {:.1e}", rep.complementarity, tol.comp_tol));
  if (!rep.nonnegative())
    rep.violations.push_back(fmt::format("negative bound multiplier {:.3e}", rep.min_multiplier));
  return rep;
}

}  // namespace gridcap
