#pragma once

#include <string>
#include <vector>

#include "gwf/geometry.hpp"
#include "gwf/tensor.hpp"
#include "gwf/waveformer.hpp"

namespace gwf {

struct Trajectory {
    std::vector<Tensor> fields;  // per step, (N, channels), physical units
};

struct Dataset {
    PointCloud geometry;
    double dt = 0.0;  // seconds
    std::vector<std::string> channel_names;
    std::vector<Trajectory> trajectories;
    std::vector<int> train_ids, test_ids;

    int points() const { return static_cast<int>(geometry.size()); }
    int steps() const {
        return trajectories.empty() ? 0
                                    : static_cast<int>(trajectories[0].fields.size());
    }
    int channels() const { return static_cast<int>(channel_names.size()); }
    void validate() const;
};

enum class VesselKind { Tube, Bifurcation };

struct SynthConfig {
    VesselKind kind = VesselKind::Tube;
    int n_points = 64;
    int n_steps = 40;
    int n_trajectories = 32;
    int train_count = 27;  // remainder is the test split
    double dt = 0.05;      // seconds between stored steps
    double advection = 2.5;   // cm/s along the centerline
    double diffusion = 0.02;  // cm^2/s
    double pulse_period = 1.6;  // seconds per inflow cycle
    bool periodic = false;    // periodic arc (conservation studies); no inflow
    std::uint64_t seed = 0;
};

/// Synthetic vessel dataset: a 3-D centerline (helical tube or Y-junction)
/// carrying a pressure-like and a flow-like channel evolved by explicit
/// upwind advection-diffusion along arc length, driven by a pulsatile inflow
/// whose amplitude and phase vary per trajectory. The stepper doubles as the
/// ground-truth oracle; it sub-steps automatically to satisfy its CFL bound.
Dataset gen_synthetic(const SynthConfig& cfg);

/// Single oracle step on raw values (exposed for conservation and
/// method-of-characteristics tests). pred[i] is the upstream node of i
/// (-1 for an inflow head). Advances by dt with automatic sub-stepping.
void advect_diffuse_step(std::vector<double>& u, const std::vector<int>& pred,
                         const std::vector<std::vector<int>>& succ, double ds,
                         double advection, double diffusion, double dt,
                         double inflow_value, bool periodic);

// On-disk layout: manifest.json, geometry.csv, traj_{i}/step_{t}.csv
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

NormStats compute_norm_stats(const Dataset& ds, const std::vector<int>& traj_ids,
                             const std::vector<int>& channels);
/// (x - mean) / std per channel; field (N, C) with C == stats size.
Tensor normalize_field(const Tensor& field, const NormStats& stats);
Tensor denormalize_field(const Tensor& field, const NormStats& stats);

/// Plain copy of selected columns (data preparation; no gradient).
Tensor select_channels(const Tensor& field, const std::vector<int>& channels);

}  // namespace gwf
