#pragma once

#include <vector>

#include "flowsync/field.hpp"
#include "flowsync/grid.hpp"

namespace flowsync {

enum class GateAction { TopOnly = 0, BottomOnly = 1, Both = 2 };

const char* to_string(GateAction a);

struct SolverConfig {
    double p_inlet = 1.0;
    double p_front = 0.0;
    double sor_omega = 1.7;
    double sor_tol = 1e-6;
    int sor_max_iters = 20000;
    // Nominal fill time units integrated per control step; default pinned by
    // the `calibrate` command so a full episode spans roughly 60-80 steps.
    int substeps_per_action = 3;
    double cfl = 0.9;
};

// Throws ConfigError naming the offending field.
void validate(const SolverConfig& cfg);

struct FlowState {
    Grid<double> fill;      // fill fraction in [0,1]; 1.0 exactly = saturated
    Grid<double> pressure;  // last solved pressure; 0 on unfilled cells
    bool top_gate_open = false;
    bool bottom_gate_open = false;
    double sim_time = 0.0;  // accumulated fill sub-steps
    // The pressure field depends only on the saturated set and gate flags;
    // ops keep this flag in sync. Set to false after editing fill by hand.
    bool pressure_fresh = false;

    FlowState() = default;
    FlowState(int rows, int cols)
        : fill(rows, cols, 0.0), pressure(rows, cols, 0.0) {}

    bool saturated(int r, int c) const { return fill.at(r, c) >= 1.0; }
};

struct SubstepReport {
    double deposited = 0.0;     // total fill volume added
    double inlet_influx = 0.0;  // volume injected through open gates
    double vent_outflux = 0.0;  // volume discarded through saturated vent cells
    int saturation_events = 0;  // cells that reached fill = 1
    int pressure_solves = 0;

    SubstepReport& operator+=(const SubstepReport& o) {
        deposited += o.deposited;
        inlet_influx += o.inlet_influx;
        vent_outflux += o.vent_outflux;
        saturation_events += o.saturation_events;
        pressure_solves += o.pressure_solves;
        return *this;
    }
};

// Quasi-static Darcy pressure on the saturated region: conjugate gradients
// with Jacobi preconditioning on the 5-point system with harmonic-mean face
// permeabilities. Dirichlet values: p_inlet on open gate rows, p_front on
// saturated vent-row cells and across the front (every unfilled neighbour).
// Closed gate edges and side walls are no-flux. Cheap no-op when the state
// is already fresh; returns whether a solve actually ran.
// Throws SolverError (with the final residual) if sor_max_iters is reached.
bool solve_pressure(const PermeabilityField& field, FlowState& state, const SolverConfig& cfg,
                    const std::vector<int>& vent_rows = {});

// Same system solved with classic successive over-relaxation; kept as an
// independent cross-check of the production solver. Always solves.
void solve_pressure_sor(const PermeabilityField& field, FlowState& state,
                        const SolverConfig& cfg, const std::vector<int>& vent_rows = {});

// Integrates exactly one nominal time unit of fill advance. The pressure is
// re-solved whenever a cell saturates, and deposition between saturation
// events is applied in increments of at most `cfl` fill fraction per cell.
// Requires/maintains a fresh pressure field.
SubstepReport advance_fill(const PermeabilityField& field, FlowState& state,
                           const SolverConfig& cfg, const std::vector<int>& vent_rows = {});

// Applies the gate action, then runs substeps_per_action fill sub-steps.
SubstepReport sim_step(const PermeabilityField& field, FlowState& state, GateAction action,
                       const SolverConfig& cfg, const std::vector<int>& vent_rows = {});

}  // namespace flowsync
