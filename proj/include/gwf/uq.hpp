#pragma once

#include <string>
#include <vector>

#include "gwf/waveformer.hpp"

namespace gwf {

struct EnsembleSpec {
    int size = 100;
    double alpha = 0.01;  // noise std as a fraction of the initial condition's std
    std::uint64_t seed = 0;
};

struct ProbeSpec {
    int point_id = 0;
    int time_step = 0;  // 1-based prediction step
    int channel = 0;
};

struct ProbePdf {
    ProbeSpec probe;
    std::vector<double> bin_left, bin_right, density;
};

struct FieldStats {
    std::vector<Tensor> mean;   // per prediction step, (N, C), physical units
    std::vector<Tensor> stdev;  // same shape, nonnegative
    std::vector<ProbePdf> pdfs;
    int excluded_members = 0;
};

/// u0 + eta with eta ~ N(0, (alpha * std_c(u0))^2) i.i.d. per point, std
/// taken per channel over the points. A constant channel gets zero noise
/// and a warning. Deterministic per (spec.seed, member_index).
Tensor perturb_initial(const Tensor& u0, const EnsembleSpec& spec,
                       std::uint64_t member_index,
                       std::vector<std::string>* warnings = nullptr);

/// Monte Carlo propagation: `size` progressive roll-outs from independently
/// perturbed copies of u0 (physical units), pointwise mean/std across the
/// ensemble and 30-bin probe histograms. Members with non-finite output are
/// excluded and counted; all members diverging is an error.
FieldStats ensemble_run(const GeoWaveformer& model, const Tensor& u0_physical,
                        const EnsembleSpec& spec, int horizon,
                        const std::vector<ProbeSpec>& probes = {},
                        std::vector<std::string>* warnings = nullptr);

/// "12@t20" or "12@t20:c1" -> probe at point 12, prediction step 20, channel.
ProbeSpec parse_probe(const std::string& text);

}  // namespace gwf
