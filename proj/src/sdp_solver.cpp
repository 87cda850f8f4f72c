#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <limits>
#include <sstream>

#include "eatkit/error.hpp"
#include "eatkit/sdp.hpp"

namespace eatkit {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct BlockEntry {
  int row;
  int col;
  double value;
};

// Constraint matrices regrouped by block: per block, the constraints that
// touch it and their entries.
struct BlockIndex {
  struct Item {
    int constraint;
    std::vector<BlockEntry> entries;
  };
  std::vector<std::vector<Item>> per_block;
};

BlockIndex index_constraints(const StandardSdp& sdp) {
  BlockIndex idx;
  idx.per_block.resize(sdp.block_sizes.size());
  for (int i = 0; i < sdp.constraints(); ++i) {
    std::vector<std::vector<BlockEntry>> by_block(sdp.block_sizes.size());
    for (const auto& e : sdp.a[static_cast<std::size_t>(i)])
      by_block[static_cast<std::size_t>(e.block)].push_back({e.row, e.col, e.value});
    for (std::size_t b = 0; b < by_block.size(); ++b)
      if (!by_block[b].empty()) idx.per_block[b].push_back({i, std::move(by_block[b])});
  }
  return idx;
}

BlockMatrices zeros_like(const std::vector<int>& sizes) {
  BlockMatrices out;
  for (int n : sizes) out.push_back(MatrixXd::Zero(n, n));
  return out;
}

BlockMatrices scaled_identity(const std::vector<int>& sizes, double v) {
  BlockMatrices out;
  for (int n : sizes) out.push_back(v * MatrixXd::Identity(n, n));
  return out;
}

void add_sparse(BlockMatrices& m, const SparseSym& a, double scale) {
  for (const auto& e : a) {
    auto& blk = m[static_cast<std::size_t>(e.block)];
    blk(e.row, e.col) += scale * e.value;
    if (e.row != e.col) blk(e.col, e.row) += scale * e.value;
  }
}

double inner_blocks(const BlockMatrices& a, const BlockMatrices& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].cwiseProduct(b[i]).sum();
  return s;
}

double frob(const BlockMatrices& a) {
  double s = 0.0;
  for (const auto& m : a) s += m.squaredNorm();
  return std::sqrt(s);
}

double sparse_frob(const SparseSym& a) {
  double s = 0.0;
  for (const auto& e : a) s += (e.row == e.col ? 1.0 : 2.0) * e.value * e.value;
  return std::sqrt(s);
}

double inner_entries(const std::vector<BlockEntry>& entries, const MatrixXd& g) {
  double s = 0.0;
  for (const auto& e : entries) s += e.row == e.col ? e.value * g(e.row, e.row) : e.value * (g(e.row, e.col) + g(e.col, e.row));
  return s;
}

// Largest alpha with X + alpha * dX psd (infinity if dX is psd).
double max_step(const MatrixXd& x, const MatrixXd& dx) {
  Eigen::LLT<MatrixXd> llt(x);
  if (llt.info() != Eigen::Success) return 0.0;
  MatrixXd q = llt.matrixL().solve(dx);
  q = llt.matrixL().solve(q.transpose()).transpose();
  q = 0.5 * (q + q.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(q, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  return lmin >= 0.0 ? std::numeric_limits<double>::infinity() : -1.0 / lmin;
}

double max_step(const BlockMatrices& x, const BlockMatrices& dx) {
  double a = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) a = std::min(a, max_step(x[i], dx[i]));
  return a;
}

class Ipm {
 public:
  Ipm(const StandardSdp& sdp, const SolverSettings& settings)
      : sdp_(sdp), settings_(settings), index_(index_constraints(sdp)), m_(sdp.constraints()) {
    c_ = zeros_like(sdp.block_sizes);
    add_sparse(c_, sdp.c, 1.0);
    n_total_ = 0;
    for (int n : sdp.block_sizes) n_total_ += n;
    norm_b_ = sdp.b.norm();
    norm_c_ = frob(c_);
  }

  StandardSolution run() {
    const auto start = std::chrono::steady_clock::now();
    StandardSolution sol;
    initial_point();
    double prev_primal_res = 0.0;
    int stall = 0;
    for (int iter = 0;; ++iter) {
      sol.iterations = iter;
      evaluate(sol);
      if (settings_.verbose) {
        std::fprintf(stderr, "%3d pobj %+.10e dobj %+.10e gap %.2e pres %.2e dres %.2e |X| %.2e |y| %.2e\n", iter,
                     sol.primal_objective, sol.dual_objective, sol.relative_gap, sol.primal_residual,
                     sol.dual_residual, frob(x_), y_.norm());
      }
      const bool converged = sol.primal_residual < settings_.feasibility_tol &&
                             sol.dual_residual < settings_.feasibility_tol && sol.relative_gap < settings_.gap_tol;
      if (converged) {
        sol.status = SolveStatus::optimal;
        break;
      }
      if (const auto why = infeasibility(); !why.empty()) {
        sol.status = SolveStatus::infeasible;
        sol.message = why;
        break;
      }
      remember_best(sol);
      if (iter >= settings_.max_iterations) {
        finish_unconverged(sol, "iteration limit reached");
        break;
      }
      double step = 0.0;
      if (!newton_step(step)) {
        finish_unconverged(sol, "Schur complement or step computation failed");
        break;
      }
      // stalls show up as vanishing steps without residual progress
      stall = (step < 1e-6 || std::abs(prev_primal_res - sol.primal_residual) < 1e-14) && step < 1e-3 ? stall + 1 : 0;
      prev_primal_res = sol.primal_residual;
      if (stall >= 5) {
        finish_unconverged(sol, "step length collapsed");
        break;
      }
    }
    sol.y = y_;
    sol.x = x_;
    sol.s = s_;
    sol.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return sol;
  }

 private:
  // Late iterations near an ill-posed optimum can drift away from a better
  // earlier point; an unconverged run reports the best one seen.
  static double merit(const StandardSolution& sol, const SolverSettings& st) {
    return std::max({sol.primal_residual / st.feasibility_tol, sol.dual_residual / st.feasibility_tol,
                     sol.relative_gap / st.gap_tol});
  }

  void remember_best(const StandardSolution& sol) {
    const double m = merit(sol, settings_);
    if (!std::isfinite(m) || m >= best_merit_) return;
    best_merit_ = m;
    best_x_ = x_;
    best_s_ = s_;
    best_y_ = y_;
  }

  void finish_unconverged(StandardSolution& sol, const std::string& why) {
    evaluate(sol);
    if (!best_x_.empty() && !(merit(sol, settings_) < best_merit_)) {
      x_ = best_x_;
      s_ = best_s_;
      y_ = best_y_;
      evaluate(sol);
    }
    const bool near = sol.primal_residual < settings_.near_feasibility_tol &&
                      sol.dual_residual < settings_.near_feasibility_tol && sol.relative_gap < settings_.near_gap_tol;
    sol.status = near ? SolveStatus::near_optimal : SolveStatus::numerical_failure;
    sol.message = why;
  }

  void initial_point() {
    double max_a = 0.0;
    double xi = 10.0;
    for (int i = 0; i < m_; ++i) {
      const double na = sparse_frob(sdp_.a[static_cast<std::size_t>(i)]);
      max_a = std::max(max_a, na);
      xi = std::max(xi, (1.0 + std::abs(sdp_.b(i))) / (1.0 + na));
    }
    const double sqrt_n = std::sqrt(static_cast<double>(n_total_));
    xi = std::max(xi, sqrt_n);
    const double eta = std::max({10.0, sqrt_n, norm_c_, max_a});
    x_ = scaled_identity(sdp_.block_sizes, xi);
    s_ = scaled_identity(sdp_.block_sizes, eta);
    y_ = VectorXd::Zero(m_);
    scale_x_ = xi;
    scale_y_ = eta;
  }

  VectorXd apply_a(const BlockMatrices& x) const {
    VectorXd out = VectorXd::Zero(m_);
    for (std::size_t b = 0; b < index_.per_block.size(); ++b)
      for (const auto& item : index_.per_block[b]) out(item.constraint) += inner_entries(item.entries, x[b]);
    return out;
  }

  BlockMatrices apply_at(const VectorXd& y) const {
    auto out = zeros_like(sdp_.block_sizes);
    for (int i = 0; i < m_; ++i)
      if (y(i) != 0.0) add_sparse(out, sdp_.a[static_cast<std::size_t>(i)], y(i));
    return out;
  }

  BlockMatrices dual_residual_matrix() const {
    auto rd = apply_at(y_);
    for (std::size_t b = 0; b < rd.size(); ++b) rd[b] = c_[b] - s_[b] - rd[b];
    return rd;
  }

  void evaluate(StandardSolution& sol) const {
    const VectorXd rp = sdp_.b - apply_a(x_);
    sol.primal_residual = rp.norm() / (1.0 + norm_b_);
    sol.dual_residual = frob(dual_residual_matrix()) / (1.0 + norm_c_);
    sol.primal_objective = inner_blocks(c_, x_);
    sol.dual_objective = sdp_.b.dot(y_);
    sol.relative_gap = std::abs(sol.primal_objective - sol.dual_objective) /
                       (1.0 + std::abs(sol.primal_objective) + std::abs(sol.dual_objective));
  }

  std::string infeasibility() const {
    const double nx = frob(x_);
    const double ny = y_.norm();
    const double pobj = inner_blocks(c_, x_);
    const double dobj = sdp_.b.dot(y_);
    if (nx > 1e10 * scale_x_ && pobj / nx < -1e-8 * (1.0 + norm_c_)) {
      return "dual constraints infeasible (primal objective unbounded below)";
    }
    if (ny > 1e10 * std::max(1.0, scale_y_) && dobj / ny > 1e-8 * (1.0 + norm_b_)) {
      return "primal constraints infeasible (dual objective unbounded above)";
    }
    return {};
  }

  bool newton_step(double& step_out) {
    const std::size_t nb = sdp_.block_sizes.size();
    BlockMatrices sinv(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      Eigen::LLT<MatrixXd> llt(s_[b]);
      if (llt.info() != Eigen::Success) return false;
      sinv[b] = llt.solve(MatrixXd::Identity(s_[b].rows(), s_[b].cols()));
      sinv[b] = 0.5 * (sinv[b] + sinv[b].transpose());
    }

    // Schur complement M_ij = <A_i, X A_j S^-1>
    MatrixXd schur = MatrixXd::Zero(m_, m_);
    for (std::size_t b = 0; b < nb; ++b) {
      const auto& items = index_.per_block[b];
      const MatrixXd& x = x_[b];
      const MatrixXd& si = sinv[b];
      const auto n = x.rows();
      MatrixXd g(n, n);
      for (const auto& item_j : items) {
        const auto& ent = item_j.entries;
        if (2 * static_cast<Eigen::Index>(ent.size()) < n) {
          g.setZero();
          for (const auto& e : ent) {
            g.noalias() += e.value * x.col(e.row) * si.row(e.col);
            if (e.row != e.col) g.noalias() += e.value * x.col(e.col) * si.row(e.row);
          }
        } else {
          MatrixXd t = MatrixXd::Zero(n, n);
          for (const auto& e : ent) {
            t.row(e.row) += e.value * si.row(e.col);
            if (e.row != e.col) t.row(e.col) += e.value * si.row(e.row);
          }
          g.noalias() = x * t;
        }
        for (const auto& item_i : items) schur(item_i.constraint, item_j.constraint) += inner_entries(item_i.entries, g);
      }
    }
    schur = 0.5 * (schur + schur.transpose());

    Eigen::LLT<MatrixXd> chol(schur);
    Eigen::LDLT<MatrixXd> ldlt;
    bool use_ldlt = false;
    if (chol.info() != Eigen::Success) {
      ldlt.compute(schur);
      if (ldlt.info() != Eigen::Success) return false;
      use_ldlt = true;
    }
    auto schur_solve = [&](const VectorXd& rhs) -> VectorXd { return use_ldlt ? VectorXd(ldlt.solve(rhs)) : VectorXd(chol.solve(rhs)); };

    const VectorXd rp = sdp_.b - apply_a(x_);
    const BlockMatrices rd = dual_residual_matrix();
    const double mu = inner_blocks(x_, s_) / static_cast<double>(n_total_);

    // Solves for the search direction given the complementarity target R.
    auto direction = [&](const BlockMatrices& r, VectorXd& dy, BlockMatrices& dx, BlockMatrices& ds) -> bool {
      BlockMatrices k(nb);
      for (std::size_t b = 0; b < nb; ++b) k[b] = (r[b] - x_[b] * rd[b]) * sinv[b];
      const VectorXd rhs = rp - apply_a(k);
      dy = schur_solve(rhs);
      if (!dy.allFinite()) return false;
      auto complete = [&] {
        ds = apply_at(dy);
        dx.resize(nb);
        for (std::size_t b = 0; b < nb; ++b) {
          ds[b] = rd[b] - ds[b];
          MatrixXd t = (r[b] - x_[b] * ds[b]) * sinv[b];
          dx[b] = 0.5 * (t + t.transpose());
        }
      };
      complete();
      // Refinement against the exact operator: an ill-conditioned Schur
      // complement otherwise leaves A(dX) visibly off the primal residual.
      for (int round = 0; round < 2; ++round) {
        const VectorXd err = rp - apply_a(dx);
        if (err.norm() <= 1e-14 * (1.0 + rp.norm())) break;
        const VectorXd corr = schur_solve(err);
        if (!corr.allFinite()) break;
        dy += corr;
        complete();
      }
      return true;
    };

    BlockMatrices r(nb);
    for (std::size_t b = 0; b < nb; ++b) r[b] = -x_[b] * s_[b];
    VectorXd dy_a;
    BlockMatrices dx_a;
    BlockMatrices ds_a;
    if (!direction(r, dy_a, dx_a, ds_a)) return false;
    const double ap_a = std::min(1.0, max_step(x_, dx_a));
    const double ad_a = std::min(1.0, max_step(s_, ds_a));
    double mu_aff = 0.0;
    for (std::size_t b = 0; b < nb; ++b)
      mu_aff += (x_[b] + ap_a * dx_a[b]).cwiseProduct(s_[b] + ad_a * ds_a[b]).sum();
    mu_aff /= static_cast<double>(n_total_);
    const double sigma = std::clamp(std::pow(std::max(mu_aff, 0.0) / mu, 3.0), 0.0, 1.0);

    for (std::size_t b = 0; b < nb; ++b) {
      const auto n = x_[b].rows();
      r[b] = sigma * mu * MatrixXd::Identity(n, n) - x_[b] * s_[b] - dx_a[b] * ds_a[b];
    }
    VectorXd dy;
    BlockMatrices dx;
    BlockMatrices ds;
    if (!direction(r, dy, dx, ds)) return false;

    const double tau = std::max(0.9, 1.0 - 10.0 * mu / (1.0 + std::abs(inner_blocks(c_, x_))));
    const double ap = std::min(1.0, std::min(0.95, tau) * max_step(x_, dx));
    const double ad = std::min(1.0, std::min(0.95, tau) * max_step(s_, ds));
    for (std::size_t b = 0; b < nb; ++b) {
      x_[b] += ap * dx[b];
      s_[b] += ad * ds[b];
      x_[b] = 0.5 * (x_[b] + x_[b].transpose());
      s_[b] = 0.5 * (s_[b] + s_[b].transpose());
    }
    y_ += ad * dy;
    step_out = std::min(ap, ad);
    return true;
  }

  const StandardSdp& sdp_;
  SolverSettings settings_;
  BlockIndex index_;
  int m_;
  int n_total_ = 0;
  double norm_b_ = 0.0;
  double norm_c_ = 0.0;
  double scale_x_ = 1.0;
  double scale_y_ = 1.0;
  BlockMatrices c_;
  BlockMatrices x_;
  BlockMatrices s_;
  VectorXd y_;
  double best_merit_ = std::numeric_limits<double>::infinity();
  BlockMatrices best_x_;
  BlockMatrices best_s_;
  VectorXd best_y_;
};

}  // namespace

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal:
      return "optimal";
    case SolveStatus::near_optimal:
      return "near-optimal";
    case SolveStatus::infeasible:
      return "infeasible";
    case SolveStatus::numerical_failure:
      return "numerical-failure";
  }
  return "unknown";
}

void StandardSdp::check() const {
  if (b.size() != constraints()) {
    throw validation_error("sdp.dimension", "right-hand side length differs from the number of constraints");
  }
  auto check_entries = [&](const SparseSym& m, const std::string& what) {
    for (const auto& e : m) {
      if (e.block < 0 || e.block >= static_cast<int>(block_sizes.size())) {
        throw validation_error("sdp.dimension", what + ": block index out of range");
      }
      const int n = block_sizes[static_cast<std::size_t>(e.block)];
      if (e.row < 0 || e.col < e.row || e.col >= n) {
        throw validation_error("sdp.dimension", what + ": entry outside the upper triangle of its block");
      }
    }
  };
  for (int n : block_sizes)
    if (n < 1) throw validation_error("sdp.dimension", "block sizes must be positive");
  check_entries(c, "objective");
  for (std::size_t i = 0; i < a.size(); ++i) check_entries(a[i], "constraint " + std::to_string(i));
}

double inner(const SparseSym& a, const BlockMatrices& x) {
  double s = 0.0;
  for (const auto& e : a) {
    const auto& m = x[static_cast<std::size_t>(e.block)];
    s += e.row == e.col ? e.value * m(e.row, e.row) : e.value * (m(e.row, e.col) + m(e.col, e.row));
  }
  return s;
}

StandardSolution solve_standard(const StandardSdp& sdp, const SolverSettings& settings) {
  sdp.check();
  if (sdp.constraints() == 0) {
    // Nothing to optimize over: feasible iff C is psd.
    StandardSolution sol;
    BlockMatrices c = zeros_like(sdp.block_sizes);
    add_sparse(c, sdp.c, 1.0);
    sol.y = Eigen::VectorXd::Zero(0);
    sol.s = c;
    sol.x = zeros_like(sdp.block_sizes);
    bool psd = true;
    for (const auto& m : c) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
      psd = psd && es.eigenvalues().minCoeff() >= -settings.feasibility_tol;
    }
    sol.status = psd ? SolveStatus::optimal : SolveStatus::infeasible;
    return sol;
  }
  return Ipm(sdp, settings).run();
}

}  // namespace eatkit
