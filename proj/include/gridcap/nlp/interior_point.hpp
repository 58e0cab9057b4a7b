#pragma once

// Primal-dual interior-point method for
//
//   min f(x)  s.t.  c(x) = 0,  l <= x <= u
//
// Logarithmic barrier on the bounds, Newton steps on the perturbed KKT
// system with inertia correction, fraction-to-boundary step rule, l1 merit
// line search with a second-order correction, and a Gauss-Newton
// feasibility-restoration phase that doubles as the infeasibility detector.
//
// Multiplier convention: L = f + lambda^T c - z_L^T (x - l) + z_U^T (x - u),
// z_L, z_U >= 0.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <limits>
#include <optional>
#include <tuple>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

namespace gridcap::nlp {

template <typename P>
concept SmoothNlp = requires(const P& p, const Eigen::VectorXd& x, const Eigen::VectorXd& y, double s) {
  { p.num_variables() } -> std::convertible_to<Eigen::Index>;
  { p.num_constraints() } -> std::convertible_to<Eigen::Index>;
  { p.lower_bounds() } -> std::convertible_to<Eigen::VectorXd>;
  { p.upper_bounds() } -> std::convertible_to<Eigen::VectorXd>;
  { p.objective(x) } -> std::convertible_to<double>;
  { p.objective_gradient(x) } -> std::convertible_to<Eigen::VectorXd>;
  { p.constraints(x) } -> std::convertible_to<Eigen::VectorXd>;
  { p.constraint_jacobian(x) } -> std::convertible_to<Eigen::MatrixXd>;
  // s * Hess f + sum_i y_i Hess c_i
  { p.lagrangian_hessian(x, s, y) } -> std::convertible_to<Eigen::MatrixXd>;
};

enum class IpmStatus { Optimal, MaxIterations, Infeasible };

struct IpmOptions {
  double tol = 1e-9;             // overall scaled NLP error at termination
  int max_iter = 500;            // main + restoration iterations
  double obj_scale = 1.0;        // objective multiplier used internally
  double mu_init = 0.1;
  double kappa_eps = 10.0;
  double kappa_mu = 0.2;
  double theta_mu = 1.5;
  double tau_min = 0.99;
  double bound_push = 1e-2;
  double bound_frac = 1e-2;
  double infeasible_violation = 1e-4;  // restoration stall threshold, ||c||_inf
  int restoration_stall_iters = 20;
  int max_restorations = 8;
  bool verbose = false;
};

struct IpmResult {
  IpmStatus status = IpmStatus::MaxIterations;
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;   // equality multipliers, unscaled objective units
  Eigen::VectorXd z_lower;  // bound multipliers, unscaled objective units
  Eigen::VectorXd z_upper;
  double objective = 0.0;
  double stationarity = 0.0;  // scaled, divided by s_d
  double primal_infeasibility = 0.0;
  double complementarity = 0.0;  // scaled
  int iterations = 0;
  int restoration_iterations = 0;
  int restorations = 0;
};

namespace detail {

/// Symmetric indefinite solve through a full eigendecomposition; dense
/// problems here are small and the spectrum gives the inertia directly.
/// The matrix is first equilibrated as D K D (Ruiz), which preserves inertia
/// and keeps barrier terms near active bounds from swamping small eigenvalues.
class EigenKkt {
 public:
  void factor(const Eigen::MatrixXd& k) {
    d_ = Eigen::VectorXd::Ones(k.rows());
    Eigen::MatrixXd ks = k;
    for (int pass = 0; pass < 8; ++pass) {
      Eigen::VectorXd r = ks.cwiseAbs().rowwise().maxCoeff();
      bool done = true;
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        r(i) = r(i) > 0.0 ? 1.0 / std::sqrt(r(i)) : 1.0;
        if (std::abs(r(i) - 1.0) > 1e-2) done = false;
      }
      ks = r.asDiagonal() * ks * r.asDiagonal();
      d_.array() *= r.array();
      if (done) break;
    }
    es_.compute(ks);
    const auto& ev = es_.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    const double eps = 1e-13 * scale;
    pos_ = neg_ = zero_ = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (ev(i) > eps) ++pos_;
      else if (ev(i) < -eps) ++neg_;
      else ++zero_;
    }
  }
  Eigen::Index positive() const { return pos_; }
  Eigen::Index negative() const { return neg_; }
  Eigen::Index zero() const { return zero_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    const auto& v = es_.eigenvectors();
    Eigen::VectorXd w = v.transpose() * d_.cwiseProduct(rhs);
    w.array() /= es_.eigenvalues().array();
    return d_.cwiseProduct(v * w);
  }

 private:
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_;
  Eigen::VectorXd d_;
  Eigen::Index pos_ = 0, neg_ = 0, zero_ = 0;
};

template <SmoothNlp Problem>
class InteriorPoint {
 public:
  InteriorPoint(const Problem& prob, const IpmOptions& opt) : prob_(prob), opt_(opt) {
    n_ = prob.num_variables();
    m_ = prob.num_constraints();
    l_ = prob.lower_bounds();
    u_ = prob.upper_bounds();
    has_l_.assign(static_cast<std::size_t>(n_), false);
    has_u_.assign(static_cast<std::size_t>(n_), false);
    for (Eigen::Index i = 0; i < n_; ++i) {
      const double width = u_(i) - l_(i);
      if (std::isfinite(l_(i)) && std::isfinite(u_(i)) && width <= 1e-12 * std::max(1.0, std::abs(l_(i)))) {
        fixed_.push_back(i);
        continue;
      }
      free_.push_back(i);
      has_l_[static_cast<std::size_t>(i)] = std::isfinite(l_(i));
      has_u_[static_cast<std::size_t>(i)] = std::isfinite(u_(i));
    }
    nf_ = static_cast<Eigen::Index>(free_.size());
  }

  IpmResult run(Eigen::VectorXd x0, const std::optional<Eigen::VectorXd>& lambda0) {
    x_ = std::move(x0);
    for (auto i : fixed_) x_(i) = 0.5 * (l_(i) + u_(i));
    push_interior();
    mu_ = opt_.mu_init;
    tau_ = std::max(opt_.tau_min, 1.0 - mu_);
    zl_ = Eigen::VectorXd::Zero(n_);
    zu_ = Eigen::VectorXd::Zero(n_);
    for (auto i : free_) {
      if (lo(i)) zl_(i) = 1.0;
      if (up(i)) zu_(i) = 1.0;
    }
    evaluate();
    if (lambda0 && lambda0->size() == m_) {
      lam_ = *lambda0 * opt_.obj_scale;
    } else {
      lam_ = least_squares_multipliers();
    }
    nu_ = 1.0;

    IpmResult res;
    best_x_ = x_;
    best_theta_ = theta_inf();
    best_err_ = std::numeric_limits<double>::infinity();
    int restorations = 0;
    IpmStatus status = IpmStatus::MaxIterations;

    while (iter_ < opt_.max_iter) {
      const double err0 = nlp_error(0.0);
      track_best(err0);
      if (opt_.verbose)
        std::fprintf(stderr, "ipm %3d  f=%.10e  theta=%.3e  err=%.3e  mu=%.2e\n", iter_, f_ / opt_.obj_scale,
                     theta_inf(), err0, mu_);
      if (err0 <= opt_.tol) {
        status = IpmStatus::Optimal;
        break;
      }
      const double mu_min = opt_.tol / 10.0;
      while (mu_ > mu_min && nlp_error(mu_) <= opt_.kappa_eps * mu_) {
        mu_ = std::max(mu_min, std::min(opt_.kappa_mu * mu_, std::pow(mu_, opt_.theta_mu)));
        tau_ = std::max(opt_.tau_min, 1.0 - mu_);
        nu_ = 1.0;
      }
      ++iter_;
      if (!newton_step()) {
        if (theta_inf() <= 1e-2 * opt_.tol) {
          // Feasible but no acceptable step: drop the barrier and keep going.
          mu_ = std::max(mu_min, opt_.kappa_mu * mu_);
          continue;
        }
        ++restorations;
        const int rc = restore();
        if (rc == kRestorationInfeasible) {
          status = IpmStatus::Infeasible;
          break;
        }
        if (rc == kRestorationOutOfIterations) break;
        if (restorations > opt_.max_restorations) {
          if (theta_inf() > opt_.infeasible_violation) status = IpmStatus::Infeasible;
          break;
        }
      }
    }

    if (status == IpmStatus::MaxIterations) {
      x_ = best_x_;
      evaluate();
    }
    res.status = status;
    finish(res);
    res.restorations = restorations;
    return res;
  }

 private:
  static constexpr int kRestorationOk = 0;
  static constexpr int kRestorationInfeasible = 1;
  static constexpr int kRestorationOutOfIterations = 2;

  bool lo(Eigen::Index i) const { return has_l_[static_cast<std::size_t>(i)]; }
  bool up(Eigen::Index i) const { return has_u_[static_cast<std::size_t>(i)]; }

  void push_interior() {
    for (auto i : free_) {
      const double k1 = opt_.bound_push, k2 = opt_.bound_frac;
      if (lo(i) && up(i)) {
        const double pl = std::min(k1 * std::max(1.0, std::abs(l_(i))), k2 * (u_(i) - l_(i)));
        const double pu = std::min(k1 * std::max(1.0, std::abs(u_(i))), k2 * (u_(i) - l_(i)));
        x_(i) = std::clamp(x_(i), l_(i) + pl, u_(i) - pu);
      } else if (lo(i)) {
        x_(i) = std::max(x_(i), l_(i) + k1 * std::max(1.0, std::abs(l_(i))));
      } else if (up(i)) {
        x_(i) = std::min(x_(i), u_(i) - k1 * std::max(1.0, std::abs(u_(i))));
      }
    }
  }

  void evaluate() {
    f_ = opt_.obj_scale * prob_.objective(x_);
    g_ = opt_.obj_scale * prob_.objective_gradient(x_);
    c_ = prob_.constraints(x_);
    jac_ = prob_.constraint_jacobian(x_);
  }

  double theta_inf() const { return m_ == 0 ? 0.0 : c_.cwiseAbs().maxCoeff(); }

  Eigen::VectorXd free_part(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(nf_);
    for (Eigen::Index k = 0; k < nf_; ++k) out(k) = v(free_[static_cast<std::size_t>(k)]);
    return out;
  }

  Eigen::MatrixXd free_jacobian() const {
    Eigen::MatrixXd out(m_, nf_);
    for (Eigen::Index k = 0; k < nf_; ++k) out.col(k) = jac_.col(free_[static_cast<std::size_t>(k)]);
    return out;
  }

  /// Gradient of the Lagrangian over the free variables.
  Eigen::VectorXd lagrangian_gradient() const {
    Eigen::VectorXd r = g_ + jac_.transpose() * lam_ - zl_ + zu_;
    return free_part(r);
  }

  double nlp_error(double mu) const {
    const double smax = 100.0;
    double zsum = 0.0;
    Eigen::Index nb = 0;
    double comp = 0.0;
    for (auto i : free_) {
      if (lo(i)) {
        zsum += zl_(i);
        ++nb;
        comp = std::max(comp, std::abs((x_(i) - l_(i)) * zl_(i) - mu));
      }
      if (up(i)) {
        zsum += zu_(i);
        ++nb;
        comp = std::max(comp, std::abs((u_(i) - x_(i)) * zu_(i) - mu));
      }
    }
    const double lsum = lam_.cwiseAbs().sum();
    const double sd = std::max(smax, (lsum + zsum) / static_cast<double>(std::max<Eigen::Index>(1, m_ + nb))) / smax;
    const double sc = std::max(smax, zsum / static_cast<double>(std::max<Eigen::Index>(1, nb))) / smax;
    const double stat = nf_ == 0 ? 0.0 : lagrangian_gradient().cwiseAbs().maxCoeff();
    return std::max({stat / sd, theta_inf(), comp / sc});
  }

  void track_best(double err0) {
    const double th = theta_inf();
    const double feas = 1e-6;
    bool better;
    if (th <= feas && best_theta_ <= feas) better = err0 < best_err_;
    else better = th < best_theta_;
    if (better) {
      best_theta_ = th;
      best_err_ = err0;
      best_x_ = x_;
    }
  }

  double barrier_value(const Eigen::VectorXd& x, double f) const {
    double phi = f;
    for (auto i : free_) {
      if (lo(i)) {
        const double s = x(i) - l_(i);
        if (s <= 0.0) return std::numeric_limits<double>::infinity();
        phi -= mu_ * std::log(s);
      }
      if (up(i)) {
        const double s = u_(i) - x(i);
        if (s <= 0.0) return std::numeric_limits<double>::infinity();
        phi -= mu_ * std::log(s);
      }
    }
    return phi;
  }

  Eigen::VectorXd barrier_gradient() const {
    Eigen::VectorXd gb = free_part(g_);
    for (Eigen::Index k = 0; k < nf_; ++k) {
      const auto i = free_[static_cast<std::size_t>(k)];
      if (lo(i)) gb(k) -= mu_ / (x_(i) - l_(i));
      if (up(i)) gb(k) += mu_ / (u_(i) - x_(i));
    }
    return gb;
  }

  /// Largest step in (0, 1] keeping slacks above (1 - tau) of their value.
  double max_primal_step(const Eigen::VectorXd& dxf, double tau) const {
    double alpha = 1.0;
    for (Eigen::Index k = 0; k < nf_; ++k) {
      const auto i = free_[static_cast<std::size_t>(k)];
      if (lo(i) && dxf(k) < 0.0) alpha = std::min(alpha, -tau * (x_(i) - l_(i)) / dxf(k));
      if (up(i) && dxf(k) > 0.0) alpha = std::min(alpha, tau * (u_(i) - x_(i)) / dxf(k));
    }
    return alpha;
  }

  Eigen::VectorXd expand(const Eigen::VectorXd& dxf) const {
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(n_);
    for (Eigen::Index k = 0; k < nf_; ++k) dx(free_[static_cast<std::size_t>(k)]) = dxf(k);
    return dx;
  }

  Eigen::VectorXd least_squares_multipliers() const {
    if (m_ == 0) return Eigen::VectorXd::Zero(0);
    const Eigen::MatrixXd jf = free_jacobian();
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(nf_ + m_, nf_ + m_);
    k.topLeftCorner(nf_, nf_).setIdentity();
    k.topRightCorner(nf_, m_) = jf.transpose();
    k.bottomLeftCorner(m_, nf_) = jf;
    k.bottomRightCorner(m_, m_) = -1e-10 * Eigen::MatrixXd::Identity(m_, m_);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf_ + m_);
    rhs.head(nf_) = -free_part(g_ - zl_ + zu_);
    EigenKkt kkt;
    kkt.factor(k);
    Eigen::VectorXd lam = kkt.solve(rhs).tail(m_);
    if (!lam.allFinite() || lam.cwiseAbs().maxCoeff() > 1e3) lam.setZero();
    return lam;
  }

  /// One Newton iteration with line search; false when no acceptable step.
  bool newton_step() {
    const Eigen::MatrixXd jf = free_jacobian();
    const Eigen::MatrixXd hfull = prob_.lagrangian_hessian(x_, opt_.obj_scale, lam_);
    Eigen::MatrixXd h(nf_, nf_);
    for (Eigen::Index a = 0; a < nf_; ++a)
      for (Eigen::Index b = 0; b < nf_; ++b)
        h(a, b) = hfull(free_[static_cast<std::size_t>(a)], free_[static_cast<std::size_t>(b)]);
    Eigen::VectorXd sigma = Eigen::VectorXd::Zero(nf_);
    for (Eigen::Index k = 0; k < nf_; ++k) {
      const auto i = free_[static_cast<std::size_t>(k)];
      if (lo(i)) sigma(k) += zl_(i) / (x_(i) - l_(i));
      if (up(i)) sigma(k) += zu_(i) / (u_(i) - x_(i));
    }
    Eigen::MatrixXd w = h;
    w.diagonal() += sigma;

    const Eigen::Index dim = nf_ + m_;
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(dim, dim);
    k.topRightCorner(nf_, m_) = jf.transpose();
    k.bottomLeftCorner(m_, nf_) = jf;
    double delta_w = 0.0, delta_c = 0.0;
    EigenKkt kkt;
    for (int attempt = 0;; ++attempt) {
      k.topLeftCorner(nf_, nf_) = w;
      k.topLeftCorner(nf_, nf_).diagonal().array() += delta_w;
      k.bottomRightCorner(m_, m_) = -delta_c * Eigen::MatrixXd::Identity(m_, m_);
      kkt.factor(k);
      if (kkt.positive() == nf_ && kkt.negative() == m_) break;
      if (kkt.zero() > 0 && delta_c == 0.0) delta_c = 1e-8 * std::pow(mu_, 0.25);
      if (kkt.positive() != nf_ || kkt.negative() != m_) {
        if (delta_w == 0.0) delta_w = last_delta_w_ == 0.0 ? 1e-4 : std::max(1e-20, last_delta_w_ / 3.0);
        else delta_w *= last_delta_w_ == 0.0 ? 100.0 : 8.0;
      }
      if (delta_w > 1e40 || attempt > 200) return false;
    }
    if (delta_w > 0.0) last_delta_w_ = delta_w;

    const Eigen::VectorXd gb = barrier_gradient();
    Eigen::VectorXd rhs(dim);
    rhs.head(nf_) = -(gb + jf.transpose() * lam_);
    rhs.tail(m_) = -c_;
    const Eigen::VectorXd sol = kkt.solve(rhs);
    if (!sol.allFinite()) return false;
    const Eigen::VectorXd dxf = sol.head(nf_);
    const Eigen::VectorXd dlam = sol.tail(m_);

    Eigen::VectorXd dzl = Eigen::VectorXd::Zero(n_), dzu = Eigen::VectorXd::Zero(n_);
    for (Eigen::Index kf = 0; kf < nf_; ++kf) {
      const auto i = free_[static_cast<std::size_t>(kf)];
      if (lo(i)) {
        const double s = x_(i) - l_(i);
        dzl(i) = mu_ / s - zl_(i) - zl_(i) / s * dxf(kf);
      }
      if (up(i)) {
        const double s = u_(i) - x_(i);
        dzu(i) = mu_ / s - zu_(i) + zu_(i) / s * dxf(kf);
      }
    }

    const double alpha_max = max_primal_step(dxf, tau_);
    double alpha_z = 1.0;
    for (auto i : free_) {
      if (lo(i) && dzl(i) < 0.0) alpha_z = std::min(alpha_z, -tau_ * zl_(i) / dzl(i));
      if (up(i) && dzu(i) < 0.0) alpha_z = std::min(alpha_z, -tau_ * zu_(i) / dzu(i));
    }

    // l1 merit penalty
    const double c1 = c_.cwiseAbs().sum();
    const double gdx = gb.dot(dxf);
    const double curv = std::max(0.0, dxf.dot(w * dxf));
    double nu_req = m_ == 0 ? 0.0 : (dlam + lam_).cwiseAbs().maxCoeff() + 1.0;
    if (c1 > 1e-14) nu_req = std::max(nu_req, (gdx + 0.5 * curv) / (0.5 * c1));
    nu_ = std::max(nu_, nu_req);
    const double dphi = gdx - nu_ * c1;
    const double phi0 = barrier_value(x_, f_) + nu_ * c1;

    const bool tiny = [&] {
      for (Eigen::Index kf = 0; kf < nf_; ++kf) {
        const auto i = free_[static_cast<std::size_t>(kf)];
        if (std::abs(dxf(kf)) / (1.0 + std::abs(x_(i))) > 10.0 * std::numeric_limits<double>::epsilon())
          return false;
      }
      return true;
    }();

    const double eta = 1e-4;
    const double alpha_min = 1e-12;
    double alpha = alpha_max;
    bool accepted = false;
    Eigen::VectorXd x_new;
    for (int ls = 0; alpha >= alpha_min; ++ls) {
      Eigen::VectorXd xt = x_ + expand(alpha * dxf);
      const double ft = opt_.obj_scale * prob_.objective(xt);
      const Eigen::VectorXd ct = prob_.constraints(xt);
      const double phit = barrier_value(xt, ft) + nu_ * ct.cwiseAbs().sum();
      const double slackness = 10.0 * std::numeric_limits<double>::epsilon() * std::abs(phi0);
      if (tiny || phit <= phi0 + eta * alpha * dphi + slackness) {
        x_new = std::move(xt);
        accepted = true;
        break;
      }
      if (ls == 0 && m_ > 0 && ct.cwiseAbs().maxCoeff() >= theta_inf()) {
        // second-order correction
        Eigen::VectorXd rhs2(dim);
        rhs2.head(nf_) = rhs.head(nf_);
        rhs2.tail(m_) = -(alpha * c_ + ct);
        const Eigen::VectorXd sol2 = kkt.solve(rhs2);
        const Eigen::VectorXd dsoc = sol2.head(nf_);
        const double asoc = max_primal_step(dsoc, tau_);
        Eigen::VectorXd xs = x_ + expand(asoc * dsoc);
        const double fs = opt_.obj_scale * prob_.objective(xs);
        const double phis = barrier_value(xs, fs) + nu_ * prob_.constraints(xs).cwiseAbs().sum();
        if (sol2.allFinite() && phis <= phi0 + eta * asoc * dphi + slackness) {
          x_new = std::move(xs);
          alpha = asoc;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    // A vanishing step means the merit has stalled, not that progress was made.
    if (accepted && !tiny && alpha < 1e-8) accepted = false;
    if (!accepted) {
      // Near a KKT point the l1 merit can reject good steps through penalty
      // growth and roundoff. Keep the full step if it cuts the barrier error.
      if (theta_inf() > 1e-5) return false;
      const double e0 = nlp_error(mu_);
      const auto saved = std::tuple{x_, lam_, zl_, zu_, f_, g_, c_, jac_};
      x_ += expand(alpha_max * dxf);
      lam_ += dlam;
      zl_ += alpha_z * dzl;
      zu_ += alpha_z * dzu;
      evaluate();
      if (nlp_error(mu_) < 0.9 * e0) {
        safeguard_duals();
        return true;
      }
      std::tie(x_, lam_, zl_, zu_, f_, g_, c_, jac_) = saved;
      return false;
    }

    x_ = std::move(x_new);
    lam_ += alpha * dlam;
    zl_ += alpha_z * dzl;
    zu_ += alpha_z * dzu;
    evaluate();
    safeguard_duals();
    return true;
  }

  void safeguard_duals() {
    const double kappa = 1e10;
    for (auto i : free_) {
      if (lo(i)) {
        const double s = x_(i) - l_(i);
        zl_(i) = std::clamp(zl_(i), mu_ / (kappa * s), kappa * mu_ / s);
      }
      if (up(i)) {
        const double s = u_(i) - x_(i);
        zu_(i) = std::clamp(zu_(i), mu_ / (kappa * s), kappa * mu_ / s);
      }
    }
  }

  /// Minimizes ||c||^2 / 2 plus a bound barrier with regularized Gauss-Newton steps.
  int restore() {
    const double theta0 = theta_inf();
    double mu_r = std::max(mu_, 1e-4);
    int stall = 0;
    for (int k = 0;; ++k) {
      if (iter_ >= opt_.max_iter) return kRestorationOutOfIterations;
      const double theta = theta_inf();
      if (k > 0 && theta <= 0.5 * theta0) break;
      if (stall >= opt_.restoration_stall_iters) {
        if (theta > opt_.infeasible_violation) return kRestorationInfeasible;
        break;
      }
      ++iter_;
      ++restoration_iters_;
      const Eigen::MatrixXd jf = free_jacobian();
      Eigen::MatrixXd hr = jf.transpose() * jf;
      Eigen::VectorXd gr = jf.transpose() * c_;
      const double zeta = std::min(1e-2, std::max(1e-10, theta));
      hr.diagonal().array() += zeta;
      for (Eigen::Index kf = 0; kf < nf_; ++kf) {
        const auto i = free_[static_cast<std::size_t>(kf)];
        if (lo(i)) {
          const double s = x_(i) - l_(i);
          hr(kf, kf) += mu_r / (s * s);
          gr(kf) -= mu_r / s;
        }
        if (up(i)) {
          const double s = u_(i) - x_(i);
          hr(kf, kf) += mu_r / (s * s);
          gr(kf) += mu_r / s;
        }
      }
      const Eigen::VectorXd dxf = hr.ldlt().solve(-gr);
      auto psi = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& c) {
        double v = 0.5 * c.squaredNorm();
        for (auto i : free_) {
          if (lo(i)) {
            if (x(i) - l_(i) <= 0.0) return std::numeric_limits<double>::infinity();
            v -= mu_r * std::log(x(i) - l_(i));
          }
          if (up(i)) {
            if (u_(i) - x(i) <= 0.0) return std::numeric_limits<double>::infinity();
            v -= mu_r * std::log(u_(i) - x(i));
          }
        }
        return v;
      };
      const double psi0 = psi(x_, c_);
      const double slope = gr.dot(dxf);
      double alpha = max_primal_step(dxf, std::max(opt_.tau_min, 1.0 - mu_r));
      bool moved = false;
      while (alpha > 1e-12 && dxf.allFinite()) {
        Eigen::VectorXd xt = x_ + expand(alpha * dxf);
        Eigen::VectorXd ct = prob_.constraints(xt);
        if (psi(xt, ct) <= psi0 + 1e-4 * alpha * slope) {
          x_ = std::move(xt);
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (moved) evaluate();
      const double theta_new = theta_inf();
      if (opt_.verbose)
        std::fprintf(stderr, "rst %3d  theta=%.3e  mu_r=%.2e  alpha=%.2e\n", iter_, theta_new, mu_r, alpha);
      if (!moved || theta_new > 0.99 * theta) ++stall;
      else stall = 0;
      mu_r = std::max(1e-12, 0.5 * mu_r);
    }
    // back to the main phase from a centered point
    for (auto i : free_) {
      if (lo(i)) zl_(i) = mu_ / (x_(i) - l_(i));
      if (up(i)) zu_(i) = mu_ / (u_(i) - x_(i));
    }
    lam_ = least_squares_multipliers();
    nu_ = 1.0;
    return kRestorationOk;
  }

  void finish(IpmResult& res) {
    // Fixed variables carry the reduced gradient as their bound multiplier.
    const Eigen::VectorXd r = g_ + jac_.transpose() * lam_;
    for (auto i : fixed_) {
      zl_(i) = std::max(r(i), 0.0);
      zu_(i) = std::max(-r(i), 0.0);
    }
    res.x = x_;
    res.lambda = lam_ / opt_.obj_scale;
    res.z_lower = zl_ / opt_.obj_scale;
    res.z_upper = zu_ / opt_.obj_scale;
    res.objective = f_ / opt_.obj_scale;
    res.primal_infeasibility = theta_inf();
    res.iterations = iter_;
    res.restoration_iterations = restoration_iters_;
    double comp = 0.0;
    for (auto i : free_) {
      if (lo(i)) comp = std::max(comp, std::abs((x_(i) - l_(i)) * zl_(i)));
      if (up(i)) comp = std::max(comp, std::abs((u_(i) - x_(i)) * zu_(i)));
    }
    res.complementarity = comp;
    res.stationarity = nf_ == 0 ? 0.0 : lagrangian_gradient().cwiseAbs().maxCoeff();
  }

  const Problem& prob_;
  IpmOptions opt_;
  Eigen::Index n_ = 0, m_ = 0, nf_ = 0;
  Eigen::VectorXd l_, u_;
  std::vector<Eigen::Index> free_, fixed_;
  std::vector<bool> has_l_, has_u_;

  Eigen::VectorXd x_, lam_, zl_, zu_;
  double f_ = 0.0;
  Eigen::VectorXd g_, c_;
  Eigen::MatrixXd jac_;
  double mu_ = 0.1, tau_ = 0.99, nu_ = 1.0;
  double last_delta_w_ = 0.0;
  int iter_ = 0;
  int restoration_iters_ = 0;

  Eigen::VectorXd best_x_;
  double best_theta_ = 0.0, best_err_ = 0.0;
};

}  // namespace detail

/// Solves the NLP from x0. lambda0, when given, seeds the equality
/// multipliers (unscaled units); bound multipliers always restart centered.
template <SmoothNlp Problem>
IpmResult solve_interior_point(const Problem& prob, Eigen::VectorXd x0, const IpmOptions& opt = {},
                               const std::optional<Eigen::VectorXd>& lambda0 = std::nullopt) {
  detail::InteriorPoint<Problem> ipm(prob, opt);
  return ipm.run(std::move(x0), lambda0);
}

}  // namespace gridcap::nlp
