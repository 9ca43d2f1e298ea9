#include "flowsync/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "flowsync/errors.hpp"

namespace flowsync {

const char* to_string(GateAction a) {
    switch (a) {
        case GateAction::TopOnly: return "top";
        case GateAction::BottomOnly: return "bottom";
        case GateAction::Both: return "both";
    }
    return "?";
}

void validate(const SolverConfig& cfg) {
    if (!(cfg.p_inlet > cfg.p_front)) throw ConfigError("solver.p_inlet must exceed solver.p_front");
    if (!(cfg.sor_omega > 0.0 && cfg.sor_omega < 2.0))
        throw ConfigError("solver.sor_omega must be in (0,2)");
    if (!(cfg.sor_tol > 0.0)) throw ConfigError("solver.sor_tol must be > 0");
    if (cfg.sor_max_iters < 1) throw ConfigError("solver.sor_max_iters must be >= 1");
    if (cfg.substeps_per_action < 1) throw ConfigError("solver.substeps_per_action must be >= 1");
    if (!(cfg.cfl > 0.0 && cfg.cfl <= 1.0)) throw ConfigError("solver.cfl must be in (0,1]");
}

namespace {

// Harmonic mean; commutative bit-for-bit, which keeps mirrored face
// couplings identical.
inline double face_k(double a, double b) { return 2.0 * a * b / (a + b); }

enum CellClass : uint8_t { kUnfilled = 0, kUnknown = 1, kFixed = 2 };

// Assembled 5-point system over the full grid. Non-unknown cells carry
// identity rows (diag=1, b=x) so solver loops need no index remapping.
// Coefficient and scratch vectors are padded by one grid row at each end so
// neighbour loads x[i +/- cols] need no bounds checks: out-of-domain faces
// carry zero couplings, and padding entries stay a finite 0.
struct System {
    int rows = 0, cols = 0;
    int pad = 0;  // index offset of cell (0,0)
    std::vector<uint8_t> cls;
    std::vector<int> unk;  // padded indices of unknown cells
    std::vector<double> diag, offn, offs, offw, offe, b, x;
    std::vector<double> r, z, p, ap;  // solver scratch

    size_t cells() const { return cls.size(); }
    void resize(size_t m, int cols_) {
        pad = cols_;
        cls.assign(m, kUnfilled);
        unk.clear();
        for (auto* v : {&diag, &offn, &offs, &offw, &offe, &b, &x, &r, &z, &p, &ap})
            v->assign(m + 2 * static_cast<size_t>(pad), 0.0);
    }
    size_t pidx(size_t cell_index) const { return cell_index + pad; }
};

thread_local System g_sys;

inline bool is_vent_row(const std::vector<int>& vent_rows, int r) {
    for (int v : vent_rows)
        if (v == r) return true;
    return false;
}

// Classification + coefficients. Every per-cell sum groups the N/S pair
// before the W/E pair so that mirrored cells accumulate bitwise-equal
// values (FP addition is commutative).
void assemble(const PermeabilityField& field, const FlowState& state, const SolverConfig& cfg,
              const std::vector<int>& vent_rows, System& sys) {
    const int R = state.fill.rows, C = state.fill.cols;
    sys.rows = R;
    sys.cols = C;
    sys.resize(static_cast<size_t>(R) * C, C);

    for (int r = 0; r < R; ++r) {
        const bool gate_row = (r == 0 && state.top_gate_open) ||
                              (r == R - 1 && state.bottom_gate_open);
        const bool vent_row = is_vent_row(vent_rows, r);
        for (int c = 0; c < C; ++c) {
            const size_t i = state.fill.index(r, c);
            if (!state.saturated(r, c)) continue;  // stays kUnfilled
            if (gate_row) {
                sys.cls[i] = kFixed;
                sys.x[sys.pidx(i)] = cfg.p_inlet;
            } else if (vent_row) {
                sys.cls[i] = kFixed;
                sys.x[sys.pidx(i)] = cfg.p_front;
            } else {
                sys.cls[i] = kUnknown;
            }
        }
    }

    for (size_t i = 0; i < sys.cells(); ++i) {
        if (sys.cls[i] != kUnknown) {
            sys.diag[sys.pidx(i)] = 1.0;
            sys.b[sys.pidx(i)] = sys.x[sys.pidx(i)];
        }
    }

    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < C; ++c) {
            const size_t i = state.fill.index(r, c);
            if (sys.cls[i] != kUnknown) continue;
            const size_t pi = sys.pidx(i);
            const double ki = field.k.at(r, c);
            double d[4] = {0, 0, 0, 0};  // N,S,W,E coupling strengths
            double bc[4] = {0, 0, 0, 0};
            const int dr[4] = {-1, 1, 0, 0};
            const int dc[4] = {0, 0, -1, 1};
            for (int dir = 0; dir < 4; ++dir) {
                const int nr = r + dr[dir], nc = c + dc[dir];
                if (!state.fill.in_bounds(nr, nc)) continue;  // wall or closed gate
                const double w = face_k(ki, field.k.at(nr, nc));
                const size_t j = state.fill.index(nr, nc);
                switch (sys.cls[j]) {
                    case kUnfilled:  // moving front: Dirichlet p_front
                        d[dir] = w;
                        bc[dir] = w * cfg.p_front;
                        break;
                    case kFixed:
                        d[dir] = w;
                        bc[dir] = w * sys.x[sys.pidx(j)];
                        break;
                    case kUnknown:
                        d[dir] = w;
                        switch (dir) {
                            case 0: sys.offn[pi] = w; break;
                            case 1: sys.offs[pi] = w; break;
                            case 2: sys.offw[pi] = w; break;
                            case 3: sys.offe[pi] = w; break;
                        }
                        break;
                }
            }
            sys.diag[pi] = (d[0] + d[1]) + (d[2] + d[3]);
            sys.b[pi] = (bc[0] + bc[1]) + (bc[2] + bc[3]);
            if (sys.diag[pi] == 0.0) {  // isolated saturated cell: nothing flows
                sys.diag[pi] = 1.0;
                sys.b[pi] = cfg.p_front;
            }
            // Warm start from the previous pressure. Cells that just
            // saturated carry no previous value; seed them with the mean of
            // their saturated neighbours' old pressures (grouped N/S then
            // W/E so mirrored cells seed identically).
            double x0 = state.pressure.at(r, c);
            if (x0 == 0.0) {
                double sum[4] = {0, 0, 0, 0};
                int cnt = 0;
                for (int dir = 0; dir < 4; ++dir) {
                    const int nr = r + dr[dir], nc = c + dc[dir];
                    if (!state.fill.in_bounds(nr, nc) || !state.saturated(nr, nc)) continue;
                    sum[dir] = state.pressure.at(nr, nc);
                    ++cnt;
                }
                if (cnt > 0) x0 = ((sum[0] + sum[1]) + (sum[2] + sum[3])) / cnt;
            }
            sys.x[pi] = x0;
            sys.unk.push_back(static_cast<int>(pi));
        }
    }
}

// One row of A x, with the mirror-safe accumulation order. Out-of-domain
// neighbour couplings are zero, so the padded loads contribute exact zeros.
inline double apply_row(const System& sys, const std::vector<double>& x, int i) {
    const int C = sys.cols;
    return sys.diag[i] * x[i] - ((sys.offn[i] * x[i - C] + sys.offs[i] * x[i + C]) +
                                 (sys.offw[i] * x[i - 1] + sys.offe[i] * x[i + 1]));
}

// r = b - A x over unknowns; returns max |r|.
double compute_residual(System& sys) {
    double m = 0.0;
    for (int i : sys.unk) {
        sys.r[i] = sys.b[i] - apply_row(sys, sys.x, i);
        m = std::max(m, std::abs(sys.r[i]));
    }
    return m;
}

// Jacobi-preconditioned conjugate gradients, converged when the residual
// max-norm drops to tol. Scalar reductions are global, so mirror-symmetric
// systems produce bitwise mirror-symmetric iterates.
void solve_pcg(System& sys, double tol, int max_iters) {
    if (compute_residual(sys) <= tol) return;

    double rz = 0.0;
    for (int i : sys.unk) {
        sys.z[i] = sys.r[i] / sys.diag[i];
        sys.p[i] = sys.z[i];
        rz += sys.r[i] * sys.z[i];
    }

    double res = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        double pap = 0.0;
        for (int i : sys.unk) {
            sys.ap[i] = apply_row(sys, sys.p, i);
            pap += sys.p[i] * sys.ap[i];
        }
        if (pap == 0.0) break;  // r = 0 on unknowns
        const double alpha = rz / pap;
        res = 0.0;
        double rz_new = 0.0;
        for (int i : sys.unk) {
            sys.x[i] += alpha * sys.p[i];
            sys.r[i] -= alpha * sys.ap[i];
            res = std::max(res, std::abs(sys.r[i]));
            sys.z[i] = sys.r[i] / sys.diag[i];
            rz_new += sys.r[i] * sys.z[i];
        }
        if (res <= tol) {
            res = compute_residual(sys);  // recurrence drift check
            if (res <= tol) return;
            double rz_restart = 0.0;
            for (int i : sys.unk) {
                sys.z[i] = sys.r[i] / sys.diag[i];
                sys.p[i] = sys.z[i];
                rz_restart += sys.r[i] * sys.z[i];
            }
            rz = rz_restart;
            continue;
        }
        const double beta = rz_new / rz;
        for (int i : sys.unk) sys.p[i] = sys.z[i] + beta * sys.p[i];
        rz = rz_new;
    }
    res = compute_residual(sys);
    if (res > tol) throw SolverError("pressure solve did not converge", res);
}

void write_back(const System& sys, const FlowState& state_in, FlowState& state,
                const SolverConfig& cfg) {
    const int R = sys.rows, C = sys.cols;
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            const size_t i = static_cast<size_t>(r) * C + c;
            state.pressure.at(r, c) = sys.cls[i] == kUnfilled ? 0.0 : sys.x[sys.pidx(i)];
        }
    // Open gate rows display the inlet pressure even before any resin
    // arrives; flux math never reads unfilled cells' stored pressure.
    if (state_in.top_gate_open)
        for (int c = 0; c < C; ++c) state.pressure.at(0, c) = cfg.p_inlet;
    if (state_in.bottom_gate_open)
        for (int c = 0; c < C; ++c) state.pressure.at(R - 1, c) = cfg.p_inlet;
    for (double v : state.pressure.data)
        if (!std::isfinite(v)) throw SolverError("non-finite pressure", v);
}

void check_gates(const FlowState& state) {
    if (!state.top_gate_open && !state.bottom_gate_open)
        throw UsageError("cannot advance flow with both gates closed");
}

}  // namespace

bool solve_pressure(const PermeabilityField& field, FlowState& state, const SolverConfig& cfg,
                    const std::vector<int>& vent_rows) {
    check_gates(state);
    if (state.pressure_fresh) return false;
    System& sys = g_sys;
    assemble(field, state, cfg, vent_rows, sys);
    solve_pcg(sys, cfg.sor_tol, cfg.sor_max_iters);
    write_back(sys, state, state, cfg);
    state.pressure_fresh = true;
    return true;
}

void solve_pressure_sor(const PermeabilityField& field, FlowState& state, const SolverConfig& cfg,
                        const std::vector<int>& vent_rows) {
    check_gates(state);
    System& sys = g_sys;
    assemble(field, state, cfg, vent_rows, sys);
    const int C = sys.cols;
    double res = 0.0;
    for (int it = 0; it < cfg.sor_max_iters; ++it) {
        for (int i : sys.unk) {
            const double gs = (sys.b[i] + sys.offn[i] * sys.x[i - C] +
                               sys.offs[i] * sys.x[i + C] + sys.offw[i] * sys.x[i - 1] +
                               sys.offe[i] * sys.x[i + 1]) /
                              sys.diag[i];
            sys.x[i] = (1.0 - cfg.sor_omega) * sys.x[i] + cfg.sor_omega * gs;
        }
        res = compute_residual(sys);
        if (res <= cfg.sor_tol) {
            write_back(sys, state, state, cfg);
            state.pressure_fresh = true;
            return;
        }
    }
    throw SolverError("pressure solve did not converge", res);
}

namespace {

struct ActiveCell {
    int r, c;
    double rate;
};

struct RateSet {
    std::vector<ActiveCell> active;  // unfilled cells with positive inflow
    double inlet_rate = 0.0;
    double vent_rate = 0.0;
    double max_rate = 0.0;
};

thread_local RateSet g_rates;

// Deposition, inlet, and vent rates for the current (pressure, saturation,
// gate) configuration. Effective pressure of any non-saturated cell is
// p_front, matching the front condition used in the matrix.
void compute_rates(const PermeabilityField& field, const FlowState& state,
                   const SolverConfig& cfg, const std::vector<int>& vent_rows, RateSet& out) {
    out.active.clear();
    out.inlet_rate = 0.0;
    out.vent_rate = 0.0;
    out.max_rate = 0.0;

    const int R = state.fill.rows, C = state.fill.cols;
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};

    auto eff_p = [&](int r, int c) {
        return state.saturated(r, c) ? state.pressure.at(r, c) : cfg.p_front;
    };

    for (int r = 0; r < R; ++r) {
        const bool gate_row = (r == 0 && state.top_gate_open) ||
                              (r == R - 1 && state.bottom_gate_open);
        const bool vent_row = is_vent_row(vent_rows, r);
        for (int c = 0; c < C; ++c) {
            const double ki = field.k.at(r, c);
            if (!state.saturated(r, c)) {
                double q[4] = {0, 0, 0, 0};
                for (int dir = 0; dir < 4; ++dir) {
                    const int nr = r + dr[dir], nc = c + dc[dir];
                    if (!state.fill.in_bounds(nr, nc)) continue;
                    if (!state.saturated(nr, nc)) continue;
                    const double w = face_k(ki, field.k.at(nr, nc));
                    const double dp = state.pressure.at(nr, nc) - cfg.p_front;
                    if (dp > 0.0) q[dir] = w * dp;
                }
                double rate = (q[0] + q[1]) + (q[2] + q[3]);
                if (gate_row) {
                    const double inj = ki * (cfg.p_inlet - cfg.p_front);
                    rate += inj;
                    out.inlet_rate += inj;
                }
                if (rate > 0.0) {
                    out.active.push_back({r, c, rate});
                    out.max_rate = std::max(out.max_rate, rate);
                }
            } else {
                if (gate_row) {
                    // Net outflow from the inlet manifold through this cell.
                    double q = 0.0;
                    for (int dir = 0; dir < 4; ++dir) {
                        const int nr = r + dr[dir], nc = c + dc[dir];
                        if (!state.fill.in_bounds(nr, nc)) continue;
                        const double w = face_k(ki, field.k.at(nr, nc));
                        q += w * (cfg.p_inlet - eff_p(nr, nc));
                    }
                    out.inlet_rate += q;
                } else if (vent_row) {
                    double q = 0.0;
                    for (int dir = 0; dir < 4; ++dir) {
                        const int nr = r + dr[dir], nc = c + dc[dir];
                        if (!state.fill.in_bounds(nr, nc)) continue;
                        const double w = face_k(ki, field.k.at(nr, nc));
                        q += w * (eff_p(nr, nc) - cfg.p_front);
                    }
                    out.vent_rate += q;
                }
            }
        }
    }
}

}  // namespace

SubstepReport advance_fill(const PermeabilityField& field, FlowState& state,
                           const SolverConfig& cfg, const std::vector<int>& vent_rows) {
    check_gates(state);
    SubstepReport rep;
    if (!state.pressure_fresh) rep.pressure_solves += solve_pressure(field, state, cfg, vent_rows);

    RateSet& rates = g_rates;
    compute_rates(field, state, cfg, vent_rows, rates);

    double remaining = 1.0;
    while (remaining > 0.0) {
        if (rates.active.empty() || rates.max_rate <= 0.0) break;  // fixed point

        double dt = remaining;
        dt = std::min(dt, cfg.cfl / rates.max_rate);
        for (const ActiveCell& a : rates.active)
            dt = std::min(dt, (1.0 - state.fill.at(a.r, a.c)) / a.rate);

        int snapped = 0;
        for (const ActiveCell& a : rates.active) {
            const double old = state.fill.at(a.r, a.c);
            double nf = old + a.rate * dt;
            if (nf >= 1.0 - 1e-12) {
                nf = 1.0;
                ++snapped;
            }
            state.fill.at(a.r, a.c) = nf;
            rep.deposited += nf - old;
        }
        rep.inlet_influx += rates.inlet_rate * dt;
        rep.vent_outflux += rates.vent_rate * dt;
        remaining -= dt;

        if (snapped > 0) {
            rep.saturation_events += snapped;
            state.pressure_fresh = false;
            if (remaining > 0.0) {
                rep.pressure_solves += solve_pressure(field, state, cfg, vent_rows);
                compute_rates(field, state, cfg, vent_rows, rates);
            }
        }
    }
    state.sim_time += 1.0;
    return rep;
}

SubstepReport sim_step(const PermeabilityField& field, FlowState& state, GateAction action,
                       const SolverConfig& cfg, const std::vector<int>& vent_rows) {
    const bool top = action == GateAction::TopOnly || action == GateAction::Both;
    const bool bottom = action == GateAction::BottomOnly || action == GateAction::Both;
    if (top != state.top_gate_open || bottom != state.bottom_gate_open) {
        state.top_gate_open = top;
        state.bottom_gate_open = bottom;
        state.pressure_fresh = false;
    }
    SubstepReport total;
    for (int s = 0; s < cfg.substeps_per_action; ++s) {
        total.pressure_solves += solve_pressure(field, state, cfg, vent_rows);
        total += advance_fill(field, state, cfg, vent_rows);
    }
    return total;
}

}  // namespace flowsync
