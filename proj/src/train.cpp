#include "gwf/train.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "gwf/rollout.hpp"

namespace gwf {

void AdamState::init(const ParamStore& store) {
    step = 0;
    m.clear();
    v.clear();
    for (const auto& [name, t] : store.items()) {
        m.emplace_back(static_cast<size_t>(t.size()), 0.0);
        v.emplace_back(static_cast<size_t>(t.size()), 0.0);
    }
}

void adam_step(ParamStore& store, AdamState& state, double lr) {
    if (state.m.size() != store.tensor_count())
        throw ShapeError("adam_step: state not initialized for this store");
    std::string offender;
    if (!store.grads_finite(&offender))
        throw NumericError("adam_step: non-finite gradient in parameter '" + offender + "'");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step));
    size_t ti = 0;
    for (auto& [name, t] : store.items()) {
        auto& m = state.m[ti];
        auto& v = state.v[ti];
        const auto& g = t.grad();
        for (std::int64_t i = 0; i < t.size(); ++i) {
            const double gi = g[static_cast<size_t>(i)];
            m[static_cast<size_t>(i)] =
                state.cfg.beta1 * m[static_cast<size_t>(i)] + (1.0 - state.cfg.beta1) * gi;
            v[static_cast<size_t>(i)] =
                state.cfg.beta2 * v[static_cast<size_t>(i)] + (1.0 - state.cfg.beta2) * gi * gi;
            const double mhat = m[static_cast<size_t>(i)] / bc1;
            const double vhat = v[static_cast<size_t>(i)] / bc2;
            t.data()[i] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
        ++ti;
    }
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ShapeError("lr_at: epoch must be >= 0");
    return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

double relative_mse(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw ShapeError("relative_mse: sequence lengths differ");
    double num = 0.0, den = 0.0;
    for (size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].shape() != truth[s].shape())
            throw ShapeError("relative_mse: shape mismatch " + shape_str(pred[s].shape()) +
                             " vs " + shape_str(truth[s].shape()));
        for (std::int64_t i = 0; i < pred[s].size(); ++i) {
            const double d = pred[s].at(i) - truth[s].at(i);
            num += d * d;
            den += truth[s].at(i) * truth[s].at(i);
        }
    }
    if (den == 0.0) throw NumericError("relative_mse: zero-norm truth sequence");
    return num / den;
}

Tensor relative_mse_loss(const std::vector<Tensor>& pred,
                         const std::vector<Tensor>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw ShapeError("relative_mse_loss: sequence lengths differ");
    Tensor num, den;
    for (size_t s = 0; s < pred.size(); ++s) {
        Tensor n = sum_squares(sub(pred[s], truth[s]));
        Tensor d = sum_squares(truth[s]);
        num = s == 0 ? n : add(num, n);
        den = s == 0 ? d : add(den, d);
    }
    if (den.item() == 0.0) throw NumericError("relative_mse_loss: zero-norm truth");
    return div(num, den);
}

namespace {

std::vector<std::vector<Tensor>> normalized_trajectories(const Dataset& data,
                                                         const std::vector<int>& channels,
                                                         const NormStats& norm) {
    std::vector<std::vector<Tensor>> out;
    out.reserve(data.trajectories.size());
    for (const auto& tr : data.trajectories) {
        std::vector<Tensor> fields;
        fields.reserve(tr.fields.size());
        for (const Tensor& f : tr.fields)
            fields.push_back(normalize_field(select_channels(f, channels), norm));
        out.push_back(std::move(fields));
    }
    return out;
}

// physical-space percentage over one trajectory horizon
double physical_pct(const std::vector<Tensor>& pred_norm,
                    const std::vector<Tensor>& truth_phys, const NormStats& norm) {
    std::vector<Tensor> pred_phys;
    pred_phys.reserve(pred_norm.size());
    for (const Tensor& p : pred_norm) pred_phys.push_back(denormalize_field(p, norm));
    return 100.0 * relative_mse(pred_phys, truth_phys);
}

}  // namespace

double evaluate_split(const GeoWaveformer& model, const Dataset& data,
                      const std::vector<int>& channels, const std::vector<int>& traj_ids,
                      int window, int rollout) {
    NoGradGuard ng;
    double acc = 0.0;
    for (int id : traj_ids) {
        const auto& tr = data.trajectories.at(static_cast<size_t>(id));
        std::vector<Tensor> win, truth;
        for (int i = 0; i < window; ++i)
            win.push_back(normalize_field(
                select_channels(tr.fields[static_cast<size_t>(i)], channels), model.norm()));
        for (int i = window; i < window + rollout; ++i)
            truth.push_back(select_channels(tr.fields.at(static_cast<size_t>(i)), channels));
        auto preds = predict_steps(model, win, rollout);
        acc += physical_pct(preds, truth, model.norm());
    }
    return traj_ids.empty() ? 0.0 : acc / static_cast<double>(traj_ids.size());
}

FitReport fit(GeoWaveformer& model, const Dataset& data, const std::vector<int>& channels,
              const TrainConfig& cfg, std::ostream* log) {
    data.validate();
    if (static_cast<int>(channels.size()) != model.config().field_channels)
        throw ShapeError("fit: model expects " +
                         std::to_string(model.config().field_channels) +
                         " field channels, got " + std::to_string(channels.size()));
    if (cfg.window != model.config().window)
        throw ShapeError("fit: config window " + std::to_string(cfg.window) +
                         " does not match model window " +
                         std::to_string(model.config().window));
    if (data.steps() < cfg.window + cfg.rollout)
        throw DataError("fit: trajectories have " + std::to_string(data.steps()) +
                        " steps, need window + rollout = " +
                        std::to_string(cfg.window + cfg.rollout));
    if (data.train_ids.empty()) throw DataError("fit: empty training split");

    model.norm() = compute_norm_stats(data, data.train_ids, channels);
    auto norm_traj = normalized_trajectories(data, channels, model.norm());

    AdamState adam;
    adam.init(model.params());

    FitReport report;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        double train_pct_acc = 0.0;
        for (int id : data.train_ids) {
            const auto& fields = norm_traj[static_cast<size_t>(id)];
            std::vector<Tensor> window(fields.begin(), fields.begin() + cfg.window);
            std::vector<Tensor> preds;
            if (cfg.teacher_forcing) {
                auto session = model.begin_session();
                for (int i = 0; i < cfg.rollout; ++i) {
                    std::vector<Tensor> win(fields.begin() + i,
                                            fields.begin() + i + cfg.window);
                    preds.push_back(model.predict_next(win, session));
                }
            } else {
                preds = predict_steps(model, window, cfg.rollout);
            }
            std::vector<Tensor> truth(fields.begin() + cfg.window,
                                      fields.begin() + cfg.window + cfg.rollout);
            Tensor loss = relative_mse_loss(preds, truth);
            if (!loss.all_finite())
                throw NumericError("fit: loss diverged at epoch " + std::to_string(epoch) +
                                   ", trajectory " + std::to_string(id));
            model.params().zero_grad();
            backward(loss);
            adam_step(model.params(), adam, lr);

            train_pct_acc += physical_pct(
                preds, [&] {
                    std::vector<Tensor> t;
                    for (int i = cfg.window; i < cfg.window + cfg.rollout; ++i)
                        t.push_back(select_channels(
                            data.trajectories[static_cast<size_t>(id)].fields[static_cast<size_t>(i)],
                            channels));
                    return t;
                }(), model.norm());
        }
        const double train_pct = train_pct_acc / static_cast<double>(data.train_ids.size());
        const double val_pct = evaluate_split(model, data, channels, data.test_ids,
                                              cfg.window, cfg.rollout);
        report.history.push_back({epoch, train_pct, val_pct, lr});
        if (log)
            (*log) << "epoch " << epoch << " lr " << lr << " train% " << train_pct
                   << " val% " << val_pct << "\n";
    }
    report.final_train_pct = report.history.empty() ? 0.0 : report.history.back().train_rel_mse_pct;
    report.final_val_pct = report.history.empty() ? 0.0 : report.history.back().val_rel_mse_pct;
    return report;
}

std::string eval_table(const std::string& dataset_name, double train_pct,
                       double test_pct) {
    std::ostringstream os;
    os << "Data set,Train error,Test error\n";
    os.precision(4);
    os << dataset_name << ',' << train_pct << "%," << test_pct << "%\n";
    return os.str();
}

void write_loss_history_csv(const FitReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("write_loss_history_csv: cannot open '" + path + "'");
    os << "epoch,train_rel_mse_pct,val_rel_mse_pct,lr\n";
    os.precision(12);
    for (const auto& r : report.history)
        os << r.epoch << ',' << r.train_rel_mse_pct << ',' << r.val_rel_mse_pct << ','
           << r.lr << '\n';
}

}  // namespace gwf
