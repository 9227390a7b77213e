#include "htmpc/box_qp.hpp"

#include <cmath>

#include "htmpc/kernels.hpp"

namespace htmpc {

namespace {

struct Spectrum {
  double lmax, lmin;
};

Spectrum spectrum_of(const Eigen::MatrixXd& H) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  require_numeric(es.info() == Eigen::Success, "eigensolve failed");
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  require_numeric(lmin > 0.0, "H is not positive definite");
  return {lmax, lmin};
}

SolveReport run_descent(const BoxQp& qp, const Eigen::VectorXd& u0, const SolveOptions& opts,
                        bool accelerated) {
  qp.validate();
  require(u0.size() == qp.nu(), "u0 must have nu entries");
  require(opts.max_iter >= 1 && opts.tol >= 0.0, "bad solver options");

  const auto& k = kernels::active();
  const std::size_t n = static_cast<std::size_t>(qp.nu());

  const Spectrum sp = spectrum_of(qp.H);
  const double kappa = sp.lmax / sp.lmin;

  SolveReport rep;
  rep.method = accelerated ? "apgd" : "pgd";
  rep.lambda_max = sp.lmax;
  rep.lambda_min = sp.lmin;
  rep.kappa = kappa;
  rep.alpha = opts.alpha.value_or(1.0 / sp.lmax);
  rep.beta = accelerated
                 ? opts.beta.value_or((std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0))
                 : 0.0;
  require(rep.alpha > 0.0 && rep.beta >= 0.0, "alpha must be > 0 and beta >= 0");

  Eigen::VectorXd u = project_box(u0, qp.lo, qp.hi);
  Eigen::VectorXd y = u;
  Eigen::VectorXd t(qp.nu()), z(qp.nu()), u_next(qp.nu()), u_fp(qp.nu());

  if (opts.record_iterates) rep.iterates.push_back(u);
  rep.residuals.reserve(64);

  for (int it = 0; it < opts.max_iter; ++it) {
    k.affine(qp.H.data(), n, n, y.data(), qp.q.data(), t.data());  // t = H y + q
    k.scaled_sum(1.0, y.data(), -rep.alpha, t.data(), z.data(), n);
    k.clamp_vec(z.data(), qp.lo.data(), qp.hi.data(), u_next.data(), n);

    const double res = std::sqrt(k.diff_norm2(u_next.data(), u.data(), n));
    require_numeric(std::isfinite(res) && u_next.allFinite(),
                    "non-finite iterate (bad stepsize override?)");

    if (rep.beta == 0.0) {
      y = u_next;
    } else {
      k.extrapolate(u_next.data(), u.data(), rep.beta, y.data(), n);
    }
    u = u_next;

    rep.residuals.push_back(res);
    if (opts.record_iterates) rep.iterates.push_back(u);
    rep.iters = it + 1;
    if (res <= opts.tol) {
      if (rep.beta > 0.0) {
        // With momentum the u-step can stall at a turning point while u is
        // still far from optimal. Only stop once u itself reproduces under
        // the projected-gradient map, which is what the residual means when
        // beta = 0.
        k.affine(qp.H.data(), n, n, u.data(), qp.q.data(), t.data());
        k.scaled_sum(1.0, u.data(), -rep.alpha, t.data(), z.data(), n);
        k.clamp_vec(z.data(), qp.lo.data(), qp.hi.data(), u_fp.data(), n);
        if (std::sqrt(k.diff_norm2(u_fp.data(), u.data(), n)) > opts.tol) continue;
      }
      rep.converged = true;
      break;
    }
  }
  rep.u = u;
  return rep;
}

}  // namespace

void BoxQp::validate() const {
  const int n = nu();
  require(n > 0, "empty QP");
  require(H.rows() == n && H.cols() == n, "H must be nu x nu");
  require(lo.size() == n && hi.size() == n, "bounds must have nu entries");
  require((lo.array() < hi.array()).all(), "bounds must satisfy lo < hi");
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  require((H - H.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, "H must be symmetric");
  require(H.allFinite() && q.allFinite(), "H and q must be finite");
}

Eigen::VectorXd project_box(const Eigen::VectorXd& v, const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi) {
  require(v.size() == lo.size() && v.size() == hi.size(), "projection size mismatch");
  Eigen::VectorXd out(v.size());
  kernels::active().clamp_vec(v.data(), lo.data(), hi.data(), out.data(),
                              static_cast<std::size_t>(v.size()));
  return out;
}

SolveReport pgd(const BoxQp& qp, const Eigen::VectorXd& u0, const SolveOptions& opts) {
  return run_descent(qp, u0, opts, false);
}

SolveReport apgd(const BoxQp& qp, const Eigen::VectorXd& u0, const SolveOptions& opts) {
  return run_descent(qp, u0, opts, true);
}

Eigen::VectorXd active_set_oracle(const BoxQp& qp) {
  qp.validate();
  const int n = qp.nu();
  require(n <= 12, "active-set enumeration limited to nu <= 12");

  const double scale = 1.0 + qp.q.cwiseAbs().maxCoeff() + qp.H.cwiseAbs().maxCoeff();
  const double tol = 1e-9 * scale;

  long long total = 1;
  for (int i = 0; i < n; ++i) total *= 3;

  std::vector<int> state(n);  // 0 = at lo, 1 = at hi, 2 = free
  std::vector<int> free_idx;
  free_idx.reserve(n);
  Eigen::VectorXd u(n), g(n);

  for (long long code = 0; code < total; ++code) {
    long long c = code;
    for (int i = n - 1; i >= 0; --i) {
      state[i] = static_cast<int>(c % 3);
      c /= 3;
    }

    free_idx.clear();
    for (int i = 0; i < n; ++i) {
      if (state[i] == 2) {
        free_idx.push_back(i);
      } else {
        u(i) = state[i] == 0 ? qp.lo(i) : qp.hi(i);
      }
    }

    if (!free_idx.empty()) {
      const int f = static_cast<int>(free_idx.size());
      Eigen::MatrixXd Hff(f, f);
      Eigen::VectorXd rhs(f);
      for (int a = 0; a < f; ++a) {
        rhs(a) = -qp.q(free_idx[a]);
        for (int b = 0; b < f; ++b) Hff(a, b) = qp.H(free_idx[a], free_idx[b]);
        for (int i = 0; i < n; ++i) {
          if (state[i] != 2) rhs(a) -= qp.H(free_idx[a], i) * u(i);
        }
      }
      const Eigen::VectorXd uf = Hff.ldlt().solve(rhs);
      bool interior = true;
      for (int a = 0; a < f; ++a) {
        if (!(qp.lo(free_idx[a]) < uf(a) && uf(a) < qp.hi(free_idx[a]))) {
          interior = false;
          break;
        }
      }
      if (!interior) continue;
      for (int a = 0; a < f; ++a) u(free_idx[a]) = uf(a);
    }

    g = qp.H * u + qp.q;
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      switch (state[i]) {
        case 0: ok = g(i) >= -tol; break;   // multiplier at lower bound
        case 1: ok = g(i) <= tol; break;    // multiplier at upper bound
        default: ok = std::abs(g(i)) <= tol; break;
      }
    }
    if (ok) return u;
  }
  throw NumericError("active-set enumeration found no KKT point (tolerance too tight?)");
}

ConvergenceCert convergence_cert(const SolveReport& report, const Eigen::VectorXd& u_star,
                                 double kappa, bool accelerated) {
  require(!report.iterates.empty(), "report has no recorded iterates");
  require(kappa >= 1.0, "kappa must be >= 1");

  std::vector<double> log_err;
  log_err.reserve(report.iterates.size());
  for (const auto& u : report.iterates) {
    const double e = (u - u_star).norm();
    if (e <= 1e-12) break;  // converged tail would poison the fit
    log_err.push_back(std::log(e));
  }
  require(log_err.size() >= 10, "need at least 10 iterates with error > 1e-12");

  const std::size_t n = log_err.size();
  double sk = 0, se = 0, skk = 0, ske = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double k = static_cast<double>(i);
    sk += k;
    se += log_err[i];
    skk += k * k;
    ske += k * log_err[i];
  }
  const double denom = n * skk - sk * sk;
  const double slope = (n * ske - sk * se) / denom;
  const double intercept = (se - slope * sk) / n;

  double ss_res = 0, ss_tot = 0;
  const double mean = se / n;
  for (std::size_t i = 0; i < n; ++i) {
    const double fit = intercept + slope * static_cast<double>(i);
    ss_res += (log_err[i] - fit) * (log_err[i] - fit);
    ss_tot += (log_err[i] - mean) * (log_err[i] - mean);
  }

  ConvergenceCert cert;
  cert.points = static_cast<int>(n);
  cert.r2 = ss_tot > 1e-300 ? 1.0 - ss_res / ss_tot : 0.0;
  cert.rate = std::exp(slope);
  cert.theory_rate = accelerated ? 1.0 - 1.0 / std::sqrt(kappa) : 1.0 - 1.0 / kappa;
  cert.pass = cert.r2 >= 0.95 && slope < 0.0;
  return cert;
}

}  // namespace htmpc
