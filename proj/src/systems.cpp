#include "modlanet/systems.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "modlanet/threads.hpp"

#include <json.hpp>

namespace modlanet::systems {

using autodiff::Graph;
using autodiff::NodeId;
using json = nlohmann::json;

SystemSpec SystemSpec::pendulum(int n, double g) {
    SystemSpec s;
    s.kind = SystemKind::PendulumChain;
    s.n = n;
    s.masses.assign(static_cast<std::size_t>(n), 1.0);
    s.lengths.assign(static_cast<std::size_t>(n), 1.0);
    s.g = g;
    return s;
}

SystemSpec SystemSpec::bodies(int n, double G) {
    SystemSpec s;
    s.kind = SystemKind::GravityBodies;
    s.n = n;
    s.masses.assign(static_cast<std::size_t>(n), 1.0);
    s.G = G;
    return s;
}

void SystemSpec::validate() const {
    if (n < 1) throw std::invalid_argument("SystemSpec: n must be >= 1");
    if (masses.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("SystemSpec: masses size mismatch");
    for (double m : masses)
        if (!(m > 0.0)) throw std::invalid_argument("SystemSpec: masses must be > 0");
    if (kind == SystemKind::PendulumChain) {
        if (lengths.size() != static_cast<std::size_t>(n))
            throw std::invalid_argument("SystemSpec: lengths size mismatch");
        for (double l : lengths)
            if (!(l > 0.0)) throw std::invalid_argument("SystemSpec: lengths must be > 0");
    }
}

std::string SystemSpec::kind_name() const {
    return kind == SystemKind::PendulumChain ? "pend" : "body";
}

SystemKind kind_from_name(const std::string& name) {
    if (name == "pend") return SystemKind::PendulumChain;
    if (name == "body") return SystemKind::GravityBodies;
    throw std::invalid_argument("unknown system kind: " + name);
}

namespace {

// c_j = sum of masses at or below joint j; the coefficient every chain
// term carries after collapsing the per-bob double sum.
Vec cumulative_masses(const SystemSpec& spec) {
    Vec c(static_cast<std::size_t>(spec.n), 0.0);
    double acc = 0.0;
    for (int j = spec.n - 1; j >= 0; --j) {
        acc += spec.masses[static_cast<std::size_t>(j)];
        c[static_cast<std::size_t>(j)] = acc;
    }
    return c;
}

}  // namespace

NodeId analytic_lagrangian(Graph& g, const SystemSpec& spec, std::span<const NodeId> q,
                           std::span<const NodeId> qd) {
    spec.validate();
    const auto n = static_cast<std::size_t>(spec.n);
    if (q.size() != static_cast<std::size_t>(spec.q_dim()) || qd.size() != q.size())
        throw std::invalid_argument("analytic_lagrangian: state dimension mismatch");

    std::vector<NodeId> terms;
    if (spec.kind == SystemKind::PendulumChain) {
        const Vec c = cumulative_masses(spec);
        for (std::size_t j = 0; j < n; ++j) {
            const double lj = spec.lengths[j];
            terms.push_back(g.mul(g.constant(0.5 * c[j] * lj * lj), g.pow_int(qd[j], 2)));
            terms.push_back(g.mul(g.constant(c[j] * spec.g * lj), g.cos(q[j])));
        }
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = j + 1; k < n; ++k) {
                const NodeId cosd = g.cos(g.sub(q[j], q[k]));
                const NodeId vv = g.mul(qd[j], qd[k]);
                terms.push_back(
                    g.mul(g.constant(c[k] * spec.lengths[j] * spec.lengths[k]), g.mul(vv, cosd)));
            }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const NodeId sq = g.add(g.pow_int(qd[2 * i], 2), g.pow_int(qd[2 * i + 1], 2));
            terms.push_back(g.mul(g.constant(0.5 * spec.masses[i]), sq));
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const NodeId dx = g.sub(q[2 * i], q[2 * j]);
                const NodeId dy = g.sub(q[2 * i + 1], q[2 * j + 1]);
                const NodeId r = g.sqrt_pos(g.add(g.pow_int(dx, 2), g.pow_int(dy, 2)));
                terms.push_back(
                    g.mul(g.constant(spec.G * spec.masses[i] * spec.masses[j]), g.recip(r)));
            }
    }
    return g.sum(terms);
}

OracleDynamics::OracleDynamics(const SystemSpec& spec)
    : spec_(spec),
      compiled_(
          static_cast<std::size_t>(spec.q_dim()),
          [&spec](Graph& g, std::span<const NodeId> q, std::span<const NodeId> qd) {
              return analytic_lagrangian(g, spec, q, qd);
          },
          autodiff::EulerLagrangeConfig{0.0}) {}

bool OracleDynamics::accel(std::span<const double> q, std::span<const double> qd,
                           std::span<double> out) {
    return compiled_.accel(q, qd, out);
}

integrators::OdeFn OracleDynamics::ode() {
    const auto dim = static_cast<std::size_t>(spec_.q_dim());
    return [this, dim](double, const Vec& z, Vec& dz) {
        dz.resize(2 * dim);
        std::copy(z.begin() + static_cast<std::ptrdiff_t>(dim), z.end(), dz.begin());
        return accel(std::span<const double>(z.data(), dim),
                     std::span<const double>(z.data() + dim, dim),
                     std::span<double>(dz.data() + dim, dim));
    };
}

Vec oracle_accel(const SystemSpec& spec, const State& state) {
    return autodiff::euler_lagrange_accel(
        [&spec](Graph& g, std::span<const NodeId> q, std::span<const NodeId> qd) {
            return analytic_lagrangian(g, spec, q, qd);
        },
        state.q, state.qd, autodiff::EulerLagrangeConfig{0.0});
}

Vec newtonian_accel(const SystemSpec& spec, const State& state) {
    spec.validate();
    const auto n = static_cast<std::size_t>(spec.n);
    if (spec.kind == SystemKind::GravityBodies) {
        Vec a(2 * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double dx = state.q[2 * j] - state.q[2 * i];
                const double dy = state.q[2 * j + 1] - state.q[2 * i + 1];
                const double r2 = dx * dx + dy * dy;
                if (r2 == 0.0) throw std::domain_error("newtonian_accel: coincident bodies");
                const double inv_r3 = 1.0 / (r2 * std::sqrt(r2));
                a[2 * i] += spec.G * spec.masses[j] * dx * inv_r3;
                a[2 * i + 1] += spec.G * spec.masses[j] * dy * inv_r3;
            }
        return a;
    }
    // Chain equations of motion, assembled by hand:
    //   M[j][k] = c_max(j,k) l_j l_k cos(th_j - th_k)
    //   b[j]    = -c_j g l_j sin th_j - sum_{k!=j} c_max(j,k) l_j l_k th_k'^2 sin(th_j - th_k)
    const Vec c = cumulative_masses(spec);
    linalg::Mat M(n);
    Vec b(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double lj = spec.lengths[j];
        M(j, j) = c[j] * lj * lj;
        b[j] = -c[j] * spec.g * lj * std::sin(state.q[j]);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == j) continue;
            const double cm = c[std::max(j, k)];
            const double diff = state.q[j] - state.q[k];
            M(j, k) = cm * lj * spec.lengths[k] * std::cos(diff);
            b[j] -= cm * lj * spec.lengths[k] * state.qd[k] * state.qd[k] * std::sin(diff);
        }
    }
    Vec a(n, 0.0);
    if (!linalg::full_pivot_solve(M, b, a))
        throw std::runtime_error("newtonian_accel: singular chain mass matrix");
    return a;
}

double total_energy(const SystemSpec& spec, const State& state) {
    spec.validate();
    const auto n = static_cast<std::size_t>(spec.n);
    if (spec.kind == SystemKind::PendulumChain) {
        const Vec c = cumulative_masses(spec);
        double T = 0.0, U = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double lj = spec.lengths[j];
            T += 0.5 * c[j] * lj * lj * state.qd[j] * state.qd[j];
            U -= c[j] * spec.g * lj * std::cos(state.q[j]);
            for (std::size_t k = j + 1; k < n; ++k)
                T += c[k] * lj * spec.lengths[k] * state.qd[j] * state.qd[k] *
                     std::cos(state.q[j] - state.q[k]);
        }
        return T + U;
    }
    double T = 0.0, U = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        T += 0.5 * spec.masses[i] *
             (state.qd[2 * i] * state.qd[2 * i] + state.qd[2 * i + 1] * state.qd[2 * i + 1]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = state.q[2 * i] - state.q[2 * j];
            const double dy = state.q[2 * i + 1] - state.q[2 * j + 1];
            const double r = std::sqrt(dx * dx + dy * dy);
            if (r == 0.0) throw std::domain_error("total_energy: coincident bodies");
            U -= spec.G * spec.masses[i] * spec.masses[j] / r;
        }
    return T + U;
}

std::vector<std::array<double, 2>> pendulum_positions(const SystemSpec& spec, const Vec& q) {
    std::vector<std::array<double, 2>> pos(static_cast<std::size_t>(spec.n));
    double x = 0.0, y = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        x += spec.lengths[i] * std::sin(q[i]);
        y -= spec.lengths[i] * std::cos(q[i]);
        pos[i] = {x, y};
    }
    return pos;
}

State sample_initial_state(const SystemSpec& spec, Rng& rng) {
    spec.validate();
    const auto n = static_cast<std::size_t>(spec.n);
    State s;
    if (spec.kind == SystemKind::PendulumChain) {
        s.q.resize(n);
        s.qd.resize(n);
        for (auto& v : s.q) v = rng.uniform(-std::numbers::pi, std::numbers::pi);
        for (auto& v : s.qd) v = rng.uniform(-2.0, 2.0);
        return s;
    }
    s.q.resize(2 * n);
    s.qd.resize(2 * n);
    constexpr double min_sep = 0.8;
    double total_mass = 0.0;
    for (double m : spec.masses) total_mass += m;
    for (;;) {
        for (std::size_t i = 0; i < n; ++i) {
            const double r = rng.uniform(0.9, 1.2);
            const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            s.q[2 * i] = r * std::cos(phi);
            s.q[2 * i + 1] = r * std::sin(phi);
        }
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i)
            for (std::size_t j = i + 1; j < n && ok; ++j) {
                const double dx = s.q[2 * i] - s.q[2 * j];
                const double dy = s.q[2 * i + 1] - s.q[2 * j + 1];
                ok = dx * dx + dy * dy >= min_sep * min_sep;
            }
        if (ok) break;
    }
    double cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cx += spec.masses[i] * s.q[2 * i];
        cy += spec.masses[i] * s.q[2 * i + 1];
    }
    cx /= total_mass;
    cy /= total_mass;
    for (std::size_t i = 0; i < n; ++i) {
        s.q[2 * i] -= cx;
        s.q[2 * i + 1] -= cy;
    }
    // Near-circular speed: a ring of n bodies of the mean mass in rigid
    // rotation at radius r needs v^2 = (G m / 4r) sum_k 1/sin(pi k / n).
    // The 1.3 factor biases the swarm toward orbits that pass wide of each
    // other (and lets some bodies escape) instead of collapsing inward.
    double ring = 0.0;
    for (std::size_t k = 1; k < n; ++k)
        ring += 1.0 / std::sin(std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    const double mean_mass = total_mass / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = s.q[2 * i], y = s.q[2 * i + 1];
        const double r = std::sqrt(x * x + y * y);
        const double v =
            r > 0.0 ? 1.3 * std::sqrt(spec.G * mean_mass * ring / (4.0 * r)) : 0.0;
        const double scale = 1.0 + rng.uniform(-0.1, 0.1);
        s.qd[2 * i] = -v * scale * y / (r > 0.0 ? r : 1.0);
        s.qd[2 * i + 1] = v * scale * x / (r > 0.0 ? r : 1.0);
    }
    double px = 0.0, py = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        px += spec.masses[i] * s.qd[2 * i];
        py += spec.masses[i] * s.qd[2 * i + 1];
    }
    px /= total_mass;
    py /= total_mass;
    for (std::size_t i = 0; i < n; ++i) {
        s.qd[2 * i] -= px;
        s.qd[2 * i + 1] -= py;
    }
    return s;
}

namespace {

// Chain dynamics are exactly 2pi-periodic in every angle, so recorded
// samples use the canonical representative in (-pi, pi]; chaotic
// trajectories otherwise accumulate unbounded multi-revolution angles.
double wrap_pi(double th) {
    th = std::remainder(th, 2.0 * std::numbers::pi);
    if (th <= -std::numbers::pi) th += 2.0 * std::numbers::pi;
    return th;
}

// Supervision targets must stay at learnable magnitudes: a recorded close
// pass puts a 1/r^2 spike into q̈ that would dominate every mean-loss
// statistic downstream, so such trajectories are regenerated like
// integrator failures. Escaping (unbound) trajectories pass the screen.
constexpr double kMinBodySeparation = 0.2;

bool bodies_too_close(const SystemSpec& spec, std::span<const double> z) {
    const auto n = static_cast<std::size_t>(spec.n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = z[2 * i] - z[2 * j];
            const double dy = z[2 * i + 1] - z[2 * j + 1];
            if (dx * dx + dy * dy < kMinBodySeparation * kMinBodySeparation) return true;
        }
    return false;
}

}  // namespace

Dataset generate_dataset(const SystemSpec& spec, int n_traj, double t_g, int steps_per_s,
                         std::uint64_t seed, int threads) {
    spec.validate();
    if (!(t_g > 0.0)) throw std::invalid_argument("generate_dataset: t_g must be > 0");
    if (steps_per_s < 1) throw std::invalid_argument("generate_dataset: steps_per_s must be >= 1");
    if (n_traj < 0) throw std::invalid_argument("generate_dataset: n_traj must be >= 0");

    Dataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.t_g = t_g;
    ds.steps_per_s = steps_per_s;
    ds.n_traj = n_traj;

    const auto dim = static_cast<std::size_t>(spec.q_dim());
    const auto per_traj = static_cast<std::size_t>(std::llround(t_g * steps_per_s));
    std::vector<double> grid(per_traj + 1);
    for (std::size_t i = 0; i < grid.size(); ++i)
        grid[i] = static_cast<double>(i) / static_cast<double>(steps_per_s);

    integrators::IntegratorConfig icfg;
    icfg.method = integrators::Method::Dopri5Adaptive;
    icfg.rtol = 1e-9;
    icfg.atol = 1e-9;

    std::vector<std::vector<Sample>> per_traj_samples(static_cast<std::size_t>(n_traj));
    std::vector<int> resample_counts(static_cast<std::size_t>(n_traj), 0);
    std::vector<std::string> errors(static_cast<std::size_t>(std::max(threads, 1)));

    parallel_chunks(n_traj, threads, [&](std::int64_t first, std::int64_t last, int worker) {
        try {
            OracleDynamics oracle(spec);
            const auto f = oracle.ode();
            for (std::int64_t traj = first; traj < last; ++traj) {
                constexpr int max_attempts = 20;
                bool done = false;
                for (int attempt = 0; attempt < max_attempts && !done; ++attempt) {
                    Rng rng = Rng::stream(seed, (static_cast<std::uint64_t>(traj) << 8) |
                                                    static_cast<std::uint64_t>(attempt));
                    const State z0 = sample_initial_state(spec, rng);
                    Vec z(2 * dim);
                    std::copy(z0.q.begin(), z0.q.end(), z.begin());
                    std::copy(z0.qd.begin(), z0.qd.end(),
                              z.begin() + static_cast<std::ptrdiff_t>(dim));
                    const auto result = integrators::integrate(f, z, grid, icfg);
                    if (result.failed) {
                        ++resample_counts[static_cast<std::size_t>(traj)];
                        continue;
                    }
                    if (spec.kind == SystemKind::GravityBodies) {
                        bool close = false;
                        for (const auto& zs : result.states)
                            if (bodies_too_close(spec, zs)) {
                                close = true;
                                break;
                            }
                        if (close) {
                            ++resample_counts[static_cast<std::size_t>(traj)];
                            continue;
                        }
                    }
                    auto& out = per_traj_samples[static_cast<std::size_t>(traj)];
                    out.clear();
                    out.reserve(per_traj);
                    bool traj_ok = true;
                    for (std::size_t i = 0; i < per_traj && traj_ok; ++i) {
                        Sample smp;
                        smp.t = result.times[i];
                        smp.state.q.assign(result.states[i].begin(),
                                           result.states[i].begin() +
                                               static_cast<std::ptrdiff_t>(dim));
                        smp.state.qd.assign(result.states[i].begin() +
                                                static_cast<std::ptrdiff_t>(dim),
                                            result.states[i].end());
                        if (spec.kind == SystemKind::PendulumChain)
                            for (auto& th : smp.state.q) th = wrap_pi(th);
                        smp.qddot.resize(dim);
                        traj_ok = oracle.accel(smp.state.q, smp.state.qd, smp.qddot);
                        out.push_back(std::move(smp));
                    }
                    if (!traj_ok) {
                        ++resample_counts[static_cast<std::size_t>(traj)];
                        continue;
                    }
                    done = true;
                }
                if (!done)
                    throw std::runtime_error("generate_dataset: trajectory " +
                                             std::to_string(traj) +
                                             " failed beyond the resample budget");
            }
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(worker)] = e.what();
        }
    });
    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error(e);

    for (int r : resample_counts) ds.resampled += r;
    ds.samples.reserve(static_cast<std::size_t>(n_traj) * per_traj);
    for (auto& traj : per_traj_samples)
        for (auto& smp : traj) ds.samples.push_back(std::move(smp));

    Rng shuffle_rng = Rng::stream(seed, 0xDA7A5E7ULL);
    shuffle_rng.shuffle(ds.samples);
    return ds;
}

namespace {

json spec_to_json(const SystemSpec& spec) {
    json j;
    j["system"] = spec.kind_name();
    j["n"] = spec.n;
    j["masses"] = spec.masses;
    if (spec.kind == SystemKind::PendulumChain) {
        j["lengths"] = spec.lengths;
        j["g"] = spec.g;
    } else {
        j["G"] = spec.G;
    }
    return j;
}

SystemSpec spec_from_json(const json& j) {
    SystemSpec spec;
    spec.kind = kind_from_name(j.at("system").get<std::string>());
    spec.n = j.at("n").get<int>();
    spec.masses = j.at("masses").get<Vec>();
    if (spec.kind == SystemKind::PendulumChain) {
        spec.lengths = j.at("lengths").get<Vec>();
        spec.g = j.at("g").get<double>();
    } else {
        spec.G = j.at("G").get<double>();
    }
    spec.validate();
    return spec;
}

}  // namespace

std::string spec_to_json_string(const SystemSpec& spec) { return spec_to_json(spec).dump(); }

SystemSpec spec_from_json_string(const std::string& text) {
    return spec_from_json(json::parse(text));
}

void save_dataset(const Dataset& ds, const std::string& path, const std::string& config_echo) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    json header = spec_to_json(ds.spec);
    header["seed"] = ds.seed;
    header["t_g"] = ds.t_g;
    header["steps_per_s"] = ds.steps_per_s;
    header["n_traj"] = ds.n_traj;
    header["samples"] = ds.samples.size();
    header["resampled"] = ds.resampled;
    if (!config_echo.empty()) header["config"] = json::parse(config_echo);
    out << header.dump() << '\n';
    const std::string kind = ds.spec.kind_name();
    for (const auto& smp : ds.samples) {
        json line;
        line["system"] = kind;
        line["n"] = ds.spec.n;
        line["t"] = smp.t;
        line["q"] = smp.state.q;
        line["qdot"] = smp.state.qd;
        line["qddot"] = smp.qddot;
        out << line.dump() << '\n';
    }
    if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_dataset: empty file " + path);
    const json header = json::parse(line);
    Dataset ds;
    ds.spec = spec_from_json(header);
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.t_g = header.at("t_g").get<double>();
    ds.steps_per_s = header.at("steps_per_s").get<int>();
    ds.n_traj = header.at("n_traj").get<int>();
    ds.resampled = header.value("resampled", 0);
    const auto dim = static_cast<std::size_t>(ds.spec.q_dim());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        Sample smp;
        smp.t = j.at("t").get<double>();
        smp.state.q = j.at("q").get<Vec>();
        smp.state.qd = j.at("qdot").get<Vec>();
        smp.qddot = j.at("qddot").get<Vec>();
        if (smp.state.q.size() != dim || smp.state.qd.size() != dim || smp.qddot.size() != dim)
            throw std::runtime_error("load_dataset: sample dimension mismatch in " + path);
        ds.samples.push_back(std::move(smp));
    }
    return ds;
}

}  // namespace modlanet::systems
