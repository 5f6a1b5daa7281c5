#include "gwf/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace gwf {

void Dataset::validate() const {
    geometry.validate();
    if (channel_names.empty()) throw DataError("Dataset: no channels");
    for (const auto& t : trajectories) {
        if (static_cast<int>(t.fields.size()) != steps())
            throw DataError("Dataset: trajectories disagree on step count");
        for (const Tensor& f : t.fields)
            if (f.shape() != Shape{points(), channels()})
                throw DataError("Dataset: field shape " + shape_str(f.shape()) +
                                " does not match (" + std::to_string(points()) + "," +
                                std::to_string(channels()) + ")");
    }
    for (int id : train_ids)
        if (id < 0 || id >= static_cast<int>(trajectories.size()))
            throw DataError("Dataset: train id out of range");
    for (int id : test_ids)
        if (id < 0 || id >= static_cast<int>(trajectories.size()))
            throw DataError("Dataset: test id out of range");
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct Centerline {
    PointCloud cloud;
    std::vector<int> pred;                // upstream node, -1 at the inflow head
    std::vector<std::vector<int>> succ;   // downstream nodes
    double ds = 0.0;                      // uniform arc spacing
};

Centerline make_tube(int n) {
    Centerline c;
    const double length = 10.0;  // cm
    const double turns = 1.5;
    const double radius = 1.2;
    const double pitch = 4.0;
    c.ds = length / (n - 1);
    c.cloud.arc_length.resize(static_cast<size_t>(n));
    c.pred.assign(static_cast<size_t>(n), -1);
    c.succ.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / (n - 1);
        const double ang = 2.0 * std::numbers::pi * turns * t;
        c.cloud.coords.push_back({radius * std::cos(ang), radius * std::sin(ang), pitch * t});
        c.cloud.arc_length[static_cast<size_t>(i)] = t * length;
        if (i > 0) {
            c.pred[static_cast<size_t>(i)] = i - 1;
            c.succ[static_cast<size_t>(i - 1)].push_back(i);
        }
    }
    return c;
}

Centerline make_bifurcation(int n) {
    // parent segment along z, two straight daughter branches; the junction
    // node feeds both branch heads
    Centerline c;
    const int n_parent = n / 2;
    const int n_branch = (n - n_parent) / 2;
    const int n_total = n_parent + 2 * n_branch;
    const double seg = 5.0;  // cm per section
    c.ds = seg / std::max(n_parent - 1, 1);
    c.pred.assign(static_cast<size_t>(n_total), -1);
    c.succ.resize(static_cast<size_t>(n_total));
    c.cloud.arc_length.resize(static_cast<size_t>(n_total));
    for (int i = 0; i < n_parent; ++i) {
        const double t = static_cast<double>(i) / std::max(n_parent - 1, 1);
        c.cloud.coords.push_back({0.0, 0.0, seg * t});
        c.cloud.arc_length[static_cast<size_t>(i)] = seg * t;
        if (i > 0) {
            c.pred[static_cast<size_t>(i)] = i - 1;
            c.succ[static_cast<size_t>(i - 1)].push_back(i);
        }
    }
    const int junction = n_parent - 1;
    for (int b = 0; b < 2; ++b) {
        const double dx = b == 0 ? 0.6 : -0.6;
        for (int i = 0; i < n_branch; ++i) {
            const int idx = n_parent + b * n_branch + i;
            const double t = static_cast<double>(i + 1) / n_branch;
            c.cloud.coords.push_back({dx * seg * t, 0.25 * seg * t, seg + 0.8 * seg * t});
            c.cloud.arc_length[static_cast<size_t>(idx)] = seg + seg * t;
            const int up = i == 0 ? junction : idx - 1;
            c.pred[static_cast<size_t>(idx)] = up;
            c.succ[static_cast<size_t>(up)].push_back(idx);
        }
    }
    return c;
}

}  // namespace

void advect_diffuse_step(std::vector<double>& u, const std::vector<int>& pred,
                         const std::vector<std::vector<int>>& succ, double ds,
                         double advection, double diffusion, double dt,
                         double inflow_value, bool periodic) {
    const int n = static_cast<int>(u.size());
    // CFL bound for the explicit upwind + central-diffusion update
    double dt_max = 1e300;
    if (advection > 0.0) dt_max = std::min(dt_max, 0.9 * ds / advection);
    if (diffusion > 0.0) dt_max = std::min(dt_max, 0.45 * ds * ds / diffusion);
    const int substeps = std::max(1, static_cast<int>(std::ceil(dt / dt_max)));
    if (substeps > 100000)
        throw NumericError("advect_diffuse_step: CFL sub-stepping exploded (" +
                           std::to_string(substeps) + " sub-steps)");
    const double h = dt / substeps;
    std::vector<double> next(u.size());
    for (int s = 0; s < substeps; ++s) {
        for (int i = 0; i < n; ++i) {
            int up = pred[static_cast<size_t>(i)];
            if (up < 0 && periodic) up = n - 1;
            double adv = 0.0;
            if (up >= 0)
                adv = -advection * (u[static_cast<size_t>(i)] - u[static_cast<size_t>(up)]) / ds;
            double lap = 0.0;
            if (diffusion > 0.0) {
                double acc = 0.0;
                int cnt = 0;
                if (up >= 0) {
                    acc += u[static_cast<size_t>(up)] - u[static_cast<size_t>(i)];
                    ++cnt;
                }
                for (int dn : succ[static_cast<size_t>(i)]) {
                    acc += u[static_cast<size_t>(dn)] - u[static_cast<size_t>(i)];
                    ++cnt;
                }
                if (periodic && succ[static_cast<size_t>(i)].empty()) {
                    acc += u[0] - u[static_cast<size_t>(i)];  // wrap tail -> head
                    ++cnt;
                }
                if (cnt > 0) lap = diffusion * acc / (ds * ds);
            }
            next[static_cast<size_t>(i)] = u[static_cast<size_t>(i)] + h * (adv + lap);
        }
        if (!periodic) next[0] = inflow_value;
        u.swap(next);
    }
}

Dataset gen_synthetic(const SynthConfig& cfg) {
    if (cfg.n_points < 16) throw ShapeError("gen_synthetic: need at least 16 points");
    if (cfg.n_steps < 2) throw ShapeError("gen_synthetic: need at least 2 steps");
    if (cfg.n_trajectories < 1) throw ShapeError("gen_synthetic: need trajectories");
    if (cfg.train_count < 0 || cfg.train_count > cfg.n_trajectories)
        throw ShapeError("gen_synthetic: train_count out of range");

    Centerline line = cfg.kind == VesselKind::Tube ? make_tube(cfg.n_points)
                                                   : make_bifurcation(cfg.n_points);
    const int n = static_cast<int>(line.cloud.size());

    Dataset ds;
    ds.geometry = line.cloud;
    ds.dt = cfg.dt;
    ds.channel_names = {"pressure", "flow"};

    const double cycle = cfg.pulse_period;
    // inflow parameters on a seeded low-discrepancy sequence so any subset of
    // trajectories covers the (amplitude, phase) space evenly
    Rng jitter_rng(cfg.seed * 1000003ULL + 17);
    const double j0 = jitter_rng.uniform(0.0, 1.0);
    const double j1 = jitter_rng.uniform(0.0, 1.0);
    const double j2 = jitter_rng.uniform(0.0, 1.0);
    auto frac = [](double x) { return x - std::floor(x); };
    for (int traj = 0; traj < cfg.n_trajectories; ++traj) {
        Rng rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(traj));
        const double t = static_cast<double>(traj);
        const double amp_p = 0.8 * (0.7 + 0.6 * frac(0.8191725134 * t + j0));
        const double amp_q = 0.6 * (0.7 + 0.6 * frac(0.6710436067 * t + j1));
        const double phase = 2.0 * std::numbers::pi * frac(0.5497004779 * t + j2);

        auto inflow_p = [&](double t) {
            return 1.0 + amp_p * std::sin(2.0 * std::numbers::pi * t / cycle + phase);
        };
        auto inflow_q = [&](double t) {
            return 0.5 + amp_q * std::sin(2.0 * std::numbers::pi * t / cycle + phase + 0.9);
        };

        std::vector<double> p(static_cast<size_t>(n)), q(static_cast<size_t>(n));
        if (cfg.periodic) {
            // travelling bump initial condition, no inflow forcing
            const double s0 = rng.uniform(0.2, 0.8);
            for (int i = 0; i < n; ++i) {
                const double s = static_cast<double>(i) / n;
                const double d = s - s0;
                p[static_cast<size_t>(i)] = std::exp(-80.0 * d * d);
                q[static_cast<size_t>(i)] = 0.5 * std::exp(-80.0 * d * d);
            }
        } else {
            // spin-up: fill the vessel by running one full cycle before recording
            for (int i = 0; i < n; ++i) {
                p[static_cast<size_t>(i)] = inflow_p(0.0);
                q[static_cast<size_t>(i)] = inflow_q(0.0);
            }
            const int warm = static_cast<int>(std::ceil(cycle / cfg.dt));
            for (int w = 0; w < warm; ++w) {
                const double t = (w - warm) * cfg.dt;  // recording starts at t = 0
                advect_diffuse_step(p, line.pred, line.succ, line.ds, cfg.advection,
                                    cfg.diffusion, cfg.dt, inflow_p(t), false);
                advect_diffuse_step(q, line.pred, line.succ, line.ds, cfg.advection,
                                    cfg.diffusion, cfg.dt, inflow_q(t), false);
            }
        }

        Trajectory tr;
        for (int step = 0; step < cfg.n_steps; ++step) {
            std::vector<double> vals(static_cast<size_t>(n) * 2);
            for (int i = 0; i < n; ++i) {
                vals[static_cast<size_t>(i) * 2] = p[static_cast<size_t>(i)];
                vals[static_cast<size_t>(i) * 2 + 1] = q[static_cast<size_t>(i)];
            }
            tr.fields.emplace_back(Shape{n, 2}, std::move(vals));
            if (step + 1 < cfg.n_steps) {
                const double t = step * cfg.dt;
                advect_diffuse_step(p, line.pred, line.succ, line.ds, cfg.advection,
                                    cfg.diffusion, cfg.dt,
                                    cfg.periodic ? 0.0 : inflow_p(t), cfg.periodic);
                advect_diffuse_step(q, line.pred, line.succ, line.ds, cfg.advection,
                                    cfg.diffusion, cfg.dt,
                                    cfg.periodic ? 0.0 : inflow_q(t), cfg.periodic);
            }
        }
        ds.trajectories.push_back(std::move(tr));
    }

    for (int i = 0; i < cfg.n_trajectories; ++i)
        (i < cfg.train_count ? ds.train_ids : ds.test_ids).push_back(i);
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// On-disk layout
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& dir) {
    ds.validate();
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["points"] = ds.points();
    manifest["steps"] = ds.steps();
    manifest["dt"] = ds.dt;
    manifest["channels"] = ds.channel_names;
    manifest["trajectories"] = ds.trajectories.size();
    manifest["splits"] = {{"train", ds.train_ids}, {"test", ds.test_ids}};
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw DataError("save_dataset: cannot write manifest in '" + dir + "'");
    mf << manifest.dump(2) << "\n";

    write_pointcloud_csv(ds.geometry, dir + "/geometry.csv");

    for (size_t t = 0; t < ds.trajectories.size(); ++t) {
        const std::string tdir = dir + "/traj_" + std::to_string(t);
        fs::create_directories(tdir);
        for (size_t s = 0; s < ds.trajectories[t].fields.size(); ++s) {
            const Tensor& f = ds.trajectories[t].fields[s];
            std::ofstream os(tdir + "/step_" + std::to_string(s) + ".csv");
            os << "point_id";
            for (const auto& c : ds.channel_names) os << ',' << c;
            os << '\n';
            os.precision(17);
            for (int i = 0; i < ds.points(); ++i) {
                os << i;
                for (int c = 0; c < ds.channels(); ++c) os << ',' << f.at(i * ds.channels() + c);
                os << '\n';
            }
            if (!os) throw DataError("save_dataset: write failed in '" + tdir + "'");
        }
    }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw DataError("load_dataset: missing '" + dir + "/manifest.json'");
    nlohmann::json manifest;
    mf >> manifest;

    Dataset ds;
    const int points = manifest.at("points").get<int>();
    const int steps = manifest.at("steps").get<int>();
    const size_t n_traj = manifest.at("trajectories").get<size_t>();
    ds.dt = manifest.at("dt").get<double>();
    ds.channel_names = manifest.at("channels").get<std::vector<std::string>>();
    ds.train_ids = manifest.at("splits").at("train").get<std::vector<int>>();
    ds.test_ids = manifest.at("splits").at("test").get<std::vector<int>>();

    ds.geometry = read_pointcloud_csv(dir + "/geometry.csv");
    if (ds.points() != points)
        throw DataError("load_dataset: geometry.csv has " + std::to_string(ds.points()) +
                        " rows, manifest declares " + std::to_string(points));

    const int C = ds.channels();
    for (size_t t = 0; t < n_traj; ++t) {
        Trajectory tr;
        for (int s = 0; s < steps; ++s) {
            const std::string path =
                dir + "/traj_" + std::to_string(t) + "/step_" + std::to_string(s) + ".csv";
            std::ifstream is(path);
            if (!is) throw DataError("load_dataset: missing '" + path + "'");
            std::string line;
            std::getline(is, line);  // header
            std::vector<double> vals(static_cast<size_t>(points) * C);
            int rows = 0;
            while (std::getline(is, line)) {
                if (line.empty()) continue;
                std::istringstream ls(line);
                int pid;
                char comma;
                if (!(ls >> pid)) throw DataError("load_dataset: parse error in '" + path + "'");
                if (pid != rows)
                    throw DataError("load_dataset: unexpected point id " +
                                    std::to_string(pid) + " in '" + path + "'");
                for (int c = 0; c < C; ++c) {
                    double v;
                    if (!(ls >> comma >> v))
                        throw DataError("load_dataset: missing channel value in '" + path + "'");
                    vals[static_cast<size_t>(rows) * C + c] = v;
                }
                ++rows;
            }
            if (rows != points)
                throw DataError("load_dataset: '" + path + "' has " + std::to_string(rows) +
                                " rows, manifest declares " + std::to_string(points));
            tr.fields.emplace_back(Shape{points, C}, std::move(vals));
        }
        ds.trajectories.push_back(std::move(tr));
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

NormStats compute_norm_stats(const Dataset& ds, const std::vector<int>& traj_ids,
                             const std::vector<int>& channels) {
    NormStats st;
    st.mean.assign(channels.size(), 0.0);
    st.stdev.assign(channels.size(), 0.0);
    std::int64_t count = 0;
    for (int id : traj_ids)
        for (const Tensor& f : ds.trajectories[static_cast<size_t>(id)].fields) {
            for (int i = 0; i < ds.points(); ++i)
                for (size_t c = 0; c < channels.size(); ++c)
                    st.mean[c] += f.at(i * ds.channels() + channels[c]);
            count += ds.points();
        }
    if (count == 0) throw DataError("compute_norm_stats: empty selection");
    for (auto& m : st.mean) m /= static_cast<double>(count);
    for (int id : traj_ids)
        for (const Tensor& f : ds.trajectories[static_cast<size_t>(id)].fields)
            for (int i = 0; i < ds.points(); ++i)
                for (size_t c = 0; c < channels.size(); ++c) {
                    const double d = f.at(i * ds.channels() + channels[c]) - st.mean[c];
                    st.stdev[c] += d * d;
                }
    for (auto& s : st.stdev) {
        s = std::sqrt(s / static_cast<double>(count));
        if (!(s > 0.0)) throw DataError("compute_norm_stats: zero-variance channel");
    }
    return st;
}

Tensor normalize_field(const Tensor& field, const NormStats& stats) {
    const int C = static_cast<int>(stats.mean.size());
    if (field.rank() != 2 || field.dim(1) != C)
        throw ShapeError("normalize_field: field " + shape_str(field.shape()) +
                         " does not match " + std::to_string(C) + " channels");
    Tensor out(field.shape());
    for (int i = 0; i < field.dim(0); ++i)
        for (int c = 0; c < C; ++c)
            out.data()[i * C + c] =
                (field.at(i * C + c) - stats.mean[static_cast<size_t>(c)]) /
                stats.stdev[static_cast<size_t>(c)];
    return out;
}

Tensor denormalize_field(const Tensor& field, const NormStats& stats) {
    const int C = static_cast<int>(stats.mean.size());
    if (field.rank() != 2 || field.dim(1) != C)
        throw ShapeError("denormalize_field: field " + shape_str(field.shape()) +
                         " does not match " + std::to_string(C) + " channels");
    Tensor out(field.shape());
    for (int i = 0; i < field.dim(0); ++i)
        for (int c = 0; c < C; ++c)
            out.data()[i * C + c] =
                field.at(i * C + c) * stats.stdev[static_cast<size_t>(c)] +
                stats.mean[static_cast<size_t>(c)];
    return out;
}

Tensor select_channels(const Tensor& field, const std::vector<int>& channels) {
    if (field.rank() != 2) throw ShapeError("select_channels: need (N, C)");
    const int C = field.dim(1);
    for (int c : channels)
        if (c < 0 || c >= C)
            throw ShapeError("select_channels: channel " + std::to_string(c) +
                             " out of range");
    Tensor out({field.dim(0), static_cast<int>(channels.size())});
    for (int i = 0; i < field.dim(0); ++i)
        for (size_t j = 0; j < channels.size(); ++j)
            out.data()[i * static_cast<int>(channels.size()) + static_cast<int>(j)] =
                field.at(i * C + channels[j]);
    return out;
}

}  // namespace gwf
