#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "gwf/data.hpp"
#include "gwf/waveformer.hpp"

namespace gwf {

struct TrainConfig {
    double lr0 = 1e-3;          // initial learning rate (1e-4..1e-3 regime)
    double decay_factor = 0.6;  // multiplicative decay
    int decay_every = 5;        // epochs between decays
    int epochs = 100;
    int batch = 1;              // trajectories per optimizer step
    int window = 10;            // k
    int rollout = 20;           // n
    bool teacher_forcing = false;
    std::uint64_t seed = 0;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m, v;  // parallel to the store's tensors

    void init(const ParamStore& store);
};

/// Bias-corrected Adam update from the accumulated grads; throws
/// NumericError naming the parameter on a non-finite gradient.
void adam_step(ParamStore& store, AdamState& state, double lr);

/// lr0 * decay^floor(epoch / decay_every)
double lr_at(int epoch, const TrainConfig& cfg);

/// ||pred - truth||^2 / ||truth||^2 over the whole sequence (raw ratio;
/// multiply by 100 for the reported percentage).
double relative_mse(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth);
/// Differentiable scalar version of the same ratio.
Tensor relative_mse_loss(const std::vector<Tensor>& pred,
                         const std::vector<Tensor>& truth);

struct EpochRecord {
    int epoch;
    double train_rel_mse_pct;  // physical units
    double val_rel_mse_pct;
    double lr;
};

struct FitReport {
    std::vector<EpochRecord> history;
    double final_train_pct = 0.0;
    double final_val_pct = 0.0;
};

/// Algorithm: per trajectory, roll out `cfg.rollout` steps from the first
/// `cfg.window` fields (predictions feed back through the encoder unless
/// teacher forcing is on), accumulate the relative-MSE loss over the horizon
/// in normalized space, backpropagate through the whole roll-out and take
/// one Adam step per trajectory. Records train/validation metrics per epoch
/// in physical units. `channels` selects the dataset channels the model
/// learns (the model's field_channels must match).
FitReport fit(GeoWaveformer& model, const Dataset& data, const std::vector<int>& channels,
              const TrainConfig& cfg, std::ostream* log = nullptr);

/// epoch,train_rel_mse_pct,val_rel_mse_pct,lr
void write_loss_history_csv(const FitReport& report, const std::string& path);

/// Two-column train/test error table ("Data set,Train error,Test error").
std::string eval_table(const std::string& dataset_name, double train_pct,
                       double test_pct);

/// Held-out metric of an already-trained model (physical units, percent).
double evaluate_split(const GeoWaveformer& model, const Dataset& data,
                      const std::vector<int>& channels, const std::vector<int>& traj_ids,
                      int window, int rollout);

}  // namespace gwf
