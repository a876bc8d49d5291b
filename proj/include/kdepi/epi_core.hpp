#pragma once

// Deterministic forward simulation of SEIR host communities and of linear
// mixtures of communities.
//
// Each community follows
//
//   dS/dt = alpha*N - beta*S*I/N - mu*S
//   dE/dt = beta*S*I/N - (sigma + mu)*E
//   dI/dt = sigma*E - (gamma + mu)*I
//   dR/dt = gamma*I - mu*R
//
// integrated with forward Euler. beta is stored normalized by the community
// population so one coefficient grid applies to communities of any size.
// Daily incidence is the E -> I flow, sigma*E.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kdepi/errors.hpp"

namespace kdepi {

struct CompartmentState {
    double s = 0.0;
    double e = 0.0;
    double i = 0.0;
    double r = 0.0;
    int t = 0;  // day index

    double total() const { return s + e + i + r; }

    bool finite() const {
        return std::isfinite(s) && std::isfinite(e) && std::isfinite(i) && std::isfinite(r);
    }

    friend bool operator==(const CompartmentState&, const CompartmentState&) = default;
};

struct CommunityParams {
    double population = 0.0;  // N_i, persons
    CompartmentState initial;
    double beta = 0.0;   // normalized transmission rate, 1/day
    double sigma = 0.0;  // latent -> infectious, 1/day
    double gamma = 0.0;  // recovery, 1/day
    double alpha = 0.0;  // birth, 1/day
    double mu = 0.0;     // death, 1/day

    // Throws InvalidStateError when the boundary condition or rate
    // constraints do not hold.
    void validate() const {
        if (!(population > 0.0) || !std::isfinite(population))
            throw InvalidStateError("community population must be positive and finite");
        if (!initial.finite() || initial.s < 0.0 || initial.e < 0.0 || initial.i < 0.0 ||
            initial.r < 0.0)
            throw InvalidStateError("initial compartments must be finite and non-negative");
        if (std::abs(initial.total() - population) > 1e-9 * population)
            throw InvalidStateError("initial compartments must sum to the community population");
        for (double rate : {beta, alpha, mu}) {
            if (!(rate >= 0.0) || !std::isfinite(rate))
                throw InvalidStateError("rates must be finite and non-negative");
        }
        if (!(sigma > 0.0) || !std::isfinite(sigma) || !(gamma > 0.0) || !std::isfinite(gamma))
            throw InvalidStateError("sigma and gamma must be positive and finite");
    }

    friend bool operator==(const CommunityParams&, const CommunityParams&) = default;
};

// Build parameters whose susceptible count is the remainder of the population.
inline CommunityParams make_community(double population, double exposed, double infectious,
                                      double recovered, double beta, double sigma, double gamma) {
    CommunityParams p;
    p.population = population;
    p.initial = {population - exposed - infectious - recovered, exposed, infectious, recovered, 0};
    p.beta = beta;
    p.sigma = sigma;
    p.gamma = gamma;
    return p;
}

struct Trajectory {
    std::vector<CompartmentState> states;  // horizon + 1 entries, states[0] is the initial state
    std::vector<double> incidence;         // horizon entries, persons/day

    std::size_t horizon() const { return incidence.size(); }
};

namespace detail {

// One Euler update without validation; every simulation path goes through
// here so that all of them agree bitwise.
inline CompartmentState euler_update(const CompartmentState& x, const CommunityParams& p,
                                     double dt) {
    const double n = p.population;
    const double infection = p.beta * x.s * x.i / n;
    const double ds = p.alpha * n - infection - p.mu * x.s;
    const double de = infection - (p.sigma + p.mu) * x.e;
    const double di = p.sigma * x.e - (p.gamma + p.mu) * x.i;
    const double dr = p.gamma * x.i - p.mu * x.r;
    CompartmentState y;
    y.s = std::fmax(x.s + dt * ds, 0.0);
    y.e = std::fmax(x.e + dt * de, 0.0);
    y.i = std::fmax(x.i + dt * di, 0.0);
    y.r = std::fmax(x.r + dt * dr, 0.0);
    y.t = x.t + 1;
    return y;
}

inline int substeps_per_day(double dt) {
    if (!(dt > 0.0) || dt > 1.0) throw ConfigError("dt must lie in (0, 1] days");
    const double k = 1.0 / dt;
    const double rounded = std::round(k);
    if (std::abs(k - rounded) > 1e-9 * rounded)
        throw ConfigError("dt must divide one day into a whole number of steps");
    return static_cast<int>(rounded);
}

// Advances one day; returns the E -> I flow accumulated over the day.
inline double advance_day(CompartmentState& x, const CommunityParams& p, double dt, int substeps) {
    if (substeps == 1) {
        const double flow = p.sigma * x.e;
        x = euler_update(x, p, 1.0);
        return flow;
    }
    const int day = x.t;
    double flow = 0.0;
    for (int k = 0; k < substeps; ++k) {
        flow += p.sigma * x.e * dt;
        x = euler_update(x, p, dt);
    }
    x.t = day + 1;
    return flow;
}

}  // namespace detail

// One forward-Euler step of size dt. Compartments are clamped at zero from
// below, which only triggers when a rate times dt exceeds one.
inline CompartmentState step_community(const CompartmentState& state, const CommunityParams& params,
                                       double dt = 1.0) {
    if (!state.finite()) throw InvalidStateError("non-finite compartment state");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
    return detail::euler_update(state, params, dt);
}

inline Trajectory simulate_community(const CommunityParams& params, int horizon, double dt = 1.0) {
    if (horizon < 1) throw ConfigError("horizon must be at least one day");
    params.validate();
    const int substeps = detail::substeps_per_day(dt);
    Trajectory traj;
    traj.states.reserve(static_cast<std::size_t>(horizon) + 1);
    traj.incidence.reserve(static_cast<std::size_t>(horizon));
    CompartmentState x = params.initial;
    x.t = 0;
    traj.states.push_back(x);
    for (int day = 0; day < horizon; ++day) {
        traj.incidence.push_back(detail::advance_day(x, params, dt, substeps));
        if (!x.finite()) throw InvalidStateError("simulation produced a non-finite state");
        traj.states.push_back(x);
    }
    return traj;
}

// Per-day elementwise sum of the component community trajectories.
inline Trajectory simulate_mixture(std::span<const CommunityParams> communities, int horizon,
                                   double dt = 1.0) {
    if (communities.empty()) throw ConfigError("scenario key has no communities");
    if (horizon < 1) throw ConfigError("horizon must be at least one day");
    Trajectory total;
    total.states.resize(static_cast<std::size_t>(horizon) + 1);
    total.incidence.assign(static_cast<std::size_t>(horizon), 0.0);
    for (std::size_t t = 0; t < total.states.size(); ++t) total.states[t].t = static_cast<int>(t);
    for (const auto& community : communities) {
        const Trajectory part = simulate_community(community, horizon, dt);
        for (std::size_t t = 0; t < total.states.size(); ++t) {
            total.states[t].s += part.states[t].s;
            total.states[t].e += part.states[t].e;
            total.states[t].i += part.states[t].i;
            total.states[t].r += part.states[t].r;
        }
        for (std::size_t t = 0; t < total.incidence.size(); ++t) total.incidence[t] += part.incidence[t];
    }
    return total;
}

// Aggregate incidence only, written into `out` (size = horizon). Bitwise equal
// to simulate_mixture(...).incidence but without storing compartment states;
// this is the hot path of the scenario sweep.
inline void mixture_incidence(std::span<const CommunityParams> communities, std::span<double> out,
                              double dt = 1.0) {
    if (communities.empty()) throw ConfigError("scenario key has no communities");
    if (out.empty()) throw ConfigError("horizon must be at least one day");
    const int substeps = detail::substeps_per_day(dt);
    for (double& v : out) v = 0.0;
    for (const auto& community : communities) {
        community.validate();
        CompartmentState x = community.initial;
        x.t = 0;
        for (double& v : out) v += detail::advance_day(x, community, dt, substeps);
        if (!x.finite()) throw InvalidStateError("simulation produced a non-finite state");
    }
}

inline std::vector<double> mixture_incidence(std::span<const CommunityParams> communities, int horizon,
                                             double dt = 1.0) {
    if (horizon < 1) throw ConfigError("horizon must be at least one day");
    std::vector<double> out(static_cast<std::size_t>(horizon));
    mixture_incidence(communities, std::span<double>(out), dt);
    return out;
}

}  // namespace kdepi
