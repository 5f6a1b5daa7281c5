#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gwf/data.hpp"
#include "gwf/rollout.hpp"
#include "gwf/train.hpp"
#include "gwf/uq.hpp"

namespace fs = std::filesystem;
using namespace gwf;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::uint64_t seed_override(std::uint64_t configured) {
    if (const char* env = std::getenv("GWF_SEED")) return std::strtoull(env, nullptr, 10);
    return configured;
}

std::vector<int> parse_channels(const std::string& text, int available) {
    std::vector<int> out;
    if (text == "all") {
        for (int c = 0; c < available; ++c) out.push_back(c);
        return out;
    }
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

void write_predictions(const Dataset& data, const std::vector<int>& channels,
                       const std::vector<Tensor>& preds_physical, int first_step,
                       const std::string& dir, int traj_id) {
    fs::create_directories(dir + "/pred_traj_" + std::to_string(traj_id));
    for (size_t s = 0; s < preds_physical.size(); ++s) {
        std::ofstream os(dir + "/pred_traj_" + std::to_string(traj_id) + "/step_" +
                         std::to_string(first_step + static_cast<int>(s)) + ".csv");
        os << "point_id";
        for (int c : channels) os << ',' << data.channel_names[static_cast<size_t>(c)];
        os << '\n';
        os.precision(17);
        const Tensor& f = preds_physical[s];
        for (int i = 0; i < f.dim(0); ++i) {
            os << i;
            for (int c = 0; c < f.dim(1); ++c) os << ',' << f.at(i * f.dim(1) + c);
            os << '\n';
        }
    }
}

int run(int argc, char** argv) {
    CLI::App app{"geometry-adaptive waveformer: surrogate dynamics on vascular point clouds"};
    app.require_subcommand(1);

    // ---- gen-data ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic vessel dataset");
    std::string kind = "tube", gen_out;
    SynthConfig scfg;
    gen->add_option("--kind", kind, "vessel kind: tube or bifurcation")
        ->check(CLI::IsMember({"tube", "bifurcation"}));
    gen->add_option("--points", scfg.n_points, "centerline point count (default 64)");
    gen->add_option("--steps", scfg.n_steps, "time steps per trajectory (default 40)");
    gen->add_option("--trajs", scfg.n_trajectories, "trajectory count (default 32)");
    gen->add_option("--train-count", scfg.train_count,
                    "trajectories in the training split (default 27, rest test)");
    gen->add_option("--dt", scfg.dt, "seconds between steps (default 0.05)");
    gen->add_option("--advection", scfg.advection, "advection speed cm/s (default 2.5)");
    gen->add_option("--diffusion", scfg.diffusion, "diffusion cm^2/s (default 0.02)");
    gen->add_option("--period", scfg.pulse_period, "inflow pulse period s (default 1.6)");
    gen->add_option("--seed", scfg.seed, "generator seed");
    gen->add_option("--out", gen_out, "output dataset directory")->required();

    // ---- train -------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    std::string train_data, train_out, train_channels = "0", wavelet_mode = "symmetric";
    TrainConfig tcfg;  // ADAM, lr0 1e-3 decaying 0.6 every 5 epochs, 100 epochs, batch 1
    WaveformerConfig wcfg;
    int grid_res = 8;
    int ckpt_bits = 64;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "checkpoint path prefix")->required();
    train->add_option("--lr", tcfg.lr0, "initial ADAM learning rate (default 1e-3)");
    train->add_option("--epochs", tcfg.epochs,
                      "training epochs (default 100; lr decays by 0.6 every 5)");
    train->add_option("--k", tcfg.window, "input window length k (default 10)");
    train->add_option("--n", tcfg.rollout, "training roll-out horizon n (default 20)");
    train->add_option("--channel", train_channels,
                      "dataset channels to learn, e.g. '0', '0,1' or 'all' (default 0; "
                      "one model per field by default)");
    train->add_option("--grid", grid_res, "latent grid resolution per axis (default 8)");
    train->add_option("--wavelet", wcfg.wavelet_order,
                      "Daubechies order db1..db10 (default 4)");
    train->add_option("--levels", wcfg.wavelet_levels, "wavelet levels (default 1)");
    train->add_option("--wavelet-mode", wavelet_mode, "symmetric or periodic")
        ->check(CLI::IsMember({"symmetric", "periodic"}));
    train->add_option("--lift", wcfg.lift_width, "lift width of P (default 16)");
    train->add_option("--token", wcfg.attention.token_dim,
                      "transformer token dim (default 128)");
    train->add_option("--heads", wcfg.attention.num_heads, "attention heads (default 4)");
    train->add_option("--ff", wcfg.attention.ff_dim, "feed-forward width (default 256)");
    train->add_option("--width1", wcfg.graph.width1,
                      "first graph kernel layer width (default 64)");
    train->add_option("--width2", wcfg.graph.width2,
                      "second graph kernel layer width / latent channels (default 32)");
    train->add_option("--kernel-hidden", wcfg.graph.kernel_hidden,
                      "kernel net hidden width (default 32)");
    train->add_option("--cap", wcfg.graph.cap, "neighbor cap M per ball (default 32)");
    train->add_option("--cloud-radius-factor", wcfg.graph.cloud_radius_factor,
                      "encoder ball radius as multiple of mean point spacing (default 2.5)");
    train->add_flag("--reduce", wcfg.use_reduction,
                    "use the reduced 2-D latent variant (reduction/expansion blocks)");
    train->add_flag("--teacher-forcing", tcfg.teacher_forcing,
                    "teacher-forcing ablation instead of roll-out training");
    train->add_option("--seed", wcfg.seed, "model init seed");
    train->add_option("--precision", ckpt_bits, "checkpoint precision, 32 or 64")
        ->check(CLI::IsMember({32, 64}));

    // ---- predict -----------------------------------------------------------
    auto* predict = app.add_subcommand("predict", "autoregressive prediction");
    std::string pred_model, pred_data, pred_mode = "window", pred_out;
    int pred_horizon = 20, pred_traj = -1;
    predict->add_option("--model", pred_model, "model path prefix")->required();
    predict->add_option("--data", pred_data, "dataset directory")->required();
    predict
        ->add_option("--mode", pred_mode,
                     "window (from u_{0:k}) or progressive (from u_0 only)")
        ->check(CLI::IsMember({"window", "progressive"}));
    predict->add_option("--horizon", pred_horizon, "steps to predict (default 20)");
    predict->add_option("--traj", pred_traj, "trajectory id (default: first test id)");
    predict->add_option("--out", pred_out, "output directory")->required();

    // ---- uq ----------------------------------------------------------------
    auto* uq = app.add_subcommand("uq", "Monte Carlo initial-condition uncertainty");
    std::string uq_model, uq_data, uq_probes, uq_out;
    EnsembleSpec espec;  // alpha 0.01 = 1% of the initial condition's std, 100 members
    int uq_horizon = 20, uq_traj = -1;
    uq->add_option("--model", uq_model, "model path prefix")->required();
    uq->add_option("--data", uq_data, "dataset directory")->required();
    uq->add_option("--alpha", espec.alpha,
                   "noise std as a fraction of the initial-condition std (default 0.01)");
    uq->add_option("--ensemble", espec.size, "ensemble size (default 100)");
    uq->add_option("--horizon", uq_horizon, "prediction horizon (default 20)");
    uq->add_option("--probes", uq_probes,
                   "comma-separated probes '<point>@t<step>[:c<channel>]'");
    uq->add_option("--traj", uq_traj,
                   "trajectory id providing u_0 (default: first test id)");
    uq->add_option("--seed", espec.seed, "ensemble seed");
    uq->add_option("--out", uq_out, "output directory")->required();

    // ---- eval --------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "train/test relative MSE table");
    std::string eval_model, eval_data, eval_out;
    int eval_horizon = 20;
    eval->add_option("--model", eval_model, "model path prefix")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--horizon", eval_horizon, "evaluation horizon (default 20)");
    eval->add_option("--out", eval_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitUsage;
    }

    if (gen->parsed()) {
        scfg.kind = kind == "tube" ? VesselKind::Tube : VesselKind::Bifurcation;
        scfg.seed = seed_override(scfg.seed);
        Dataset ds = gen_synthetic(scfg);
        save_dataset(ds, gen_out);
        std::cout << "wrote " << ds.trajectories.size() << " trajectories ("
                  << ds.train_ids.size() << " train / " << ds.test_ids.size()
                  << " test), " << ds.points() << " points, " << ds.steps()
                  << " steps to " << gen_out << "\n";
        return 0;
    }

    if (train->parsed()) {
        Dataset data = load_dataset(train_data);
        wcfg.dataset_channels = parse_channels(train_channels, data.channels());
        wcfg.field_channels = static_cast<int>(wcfg.dataset_channels.size());
        wcfg.window = tcfg.window;
        wcfg.grid_resolution = {grid_res, grid_res, grid_res};
        wcfg.wavelet_mode = wavelet_mode == "periodic" ? BoundaryMode::Periodic
                                                       : BoundaryMode::Symmetric;
        wcfg.seed = seed_override(wcfg.seed);
        wcfg.graph.seed = wcfg.seed;
        tcfg.seed = wcfg.seed;
        GeoWaveformer model(data.geometry, wcfg);
        std::cout << "training on " << data.train_ids.size() << " trajectories, "
                  << model.params().scalar_count() << " parameters\n";
        FitReport report = fit(model, data, wcfg.dataset_channels, tcfg, &std::cout);
        model.save(train_out, ckpt_bits);
        write_loss_history_csv(report, train_out + "_loss_history.csv");
        std::cout << "final train " << report.final_train_pct << "% / test "
                  << report.final_val_pct << "% relative MSE\n"
                  << "checkpoint: " << train_out << ".gwf\n";
        return 0;
    }

    if (predict->parsed()) {
        Dataset data = load_dataset(pred_data);
        GeoWaveformer model = GeoWaveformer::load(pred_model, data.geometry);
        const auto& channels = model.config().dataset_channels;
        const int k = model.config().window;
        const int traj = pred_traj >= 0 ? pred_traj
                         : data.test_ids.empty() ? 0
                                                 : data.test_ids.front();
        const auto& tr = data.trajectories.at(static_cast<size_t>(traj));

        NoGradGuard ng;
        std::vector<Tensor> preds_norm;
        int first_step;
        if (pred_mode == "window") {
            if (data.steps() < k)
                throw DataError("predict: trajectory shorter than the model window");
            std::vector<Tensor> window;
            for (int i = 0; i < k; ++i)
                window.push_back(normalize_field(
                    select_channels(tr.fields[static_cast<size_t>(i)], channels),
                    model.norm()));
            preds_norm = predict_steps(model, window, pred_horizon);
            first_step = k;
        } else {
            Tensor u0 = normalize_field(select_channels(tr.fields.at(0), channels),
                                        model.norm());
            preds_norm = progressive_predict(model, u0, pred_horizon);
            first_step = 1;
        }
        std::vector<Tensor> preds;
        for (const Tensor& p : preds_norm)
            preds.push_back(denormalize_field(p, model.norm()));
        fs::create_directories(pred_out);
        write_predictions(data, channels, preds, first_step, pred_out, traj);

        // per-step relative MSE where ground truth exists
        std::ofstream es(pred_out + "/pred_errors.csv");
        es << "step,rel_mse_pct\n";
        es.precision(12);
        for (size_t s = 0; s < preds.size(); ++s) {
            const int step = first_step + static_cast<int>(s);
            if (step >= data.steps()) break;
            Tensor truth = select_channels(tr.fields[static_cast<size_t>(step)], channels);
            es << step << ',' << 100.0 * relative_mse({preds[s]}, {truth}) << '\n';
        }
        std::cout << "wrote " << preds.size() << " predicted steps to " << pred_out << "\n";
        return 0;
    }

    if (uq->parsed()) {
        Dataset data = load_dataset(uq_data);
        GeoWaveformer model = GeoWaveformer::load(uq_model, data.geometry);
        const auto& channels = model.config().dataset_channels;
        const int traj = uq_traj >= 0 ? uq_traj
                         : data.test_ids.empty() ? 0
                                                 : data.test_ids.front();
        Tensor u0 = select_channels(
            data.trajectories.at(static_cast<size_t>(traj)).fields.at(0), channels);

        std::vector<ProbeSpec> probes;
        if (!uq_probes.empty()) {
            std::istringstream is(uq_probes);
            std::string tok;
            while (std::getline(is, tok, ',')) probes.push_back(parse_probe(tok));
        }
        espec.seed = seed_override(espec.seed);
        std::vector<std::string> warnings;
        FieldStats stats = ensemble_run(model, u0, espec, uq_horizon, probes, &warnings);
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        if (stats.excluded_members > 0)
            std::cerr << "warning: " << stats.excluded_members
                      << " ensemble members diverged and were excluded\n";

        fs::create_directories(uq_out);
        const int C = static_cast<int>(channels.size());
        for (int s = 0; s < uq_horizon; ++s) {
            std::ofstream os(uq_out + "/uq_step_" + std::to_string(s + 1) + ".csv");
            os << "point_id";
            if (C == 1) {
                os << ",mean,std";
            } else {
                for (int c : channels)
                    os << ",mean_" << data.channel_names[static_cast<size_t>(c)] << ",std_"
                       << data.channel_names[static_cast<size_t>(c)];
            }
            os << '\n';
            os.precision(12);
            for (int i = 0; i < u0.dim(0); ++i) {
                os << i;
                for (int c = 0; c < C; ++c)
                    os << ',' << stats.mean[static_cast<size_t>(s)].at(i * C + c) << ','
                       << stats.stdev[static_cast<size_t>(s)].at(i * C + c);
                os << '\n';
            }
        }
        for (const auto& pdf : stats.pdfs) {
            std::ofstream os(uq_out + "/pdf_point" + std::to_string(pdf.probe.point_id) +
                             "_t" + std::to_string(pdf.probe.time_step) + "_c" +
                             std::to_string(pdf.probe.channel) + ".csv");
            os << "bin_left,bin_right,density\n";
            os.precision(12);
            for (size_t b = 0; b < pdf.density.size(); ++b)
                os << pdf.bin_left[b] << ',' << pdf.bin_right[b] << ','
                   << pdf.density[b] << '\n';
        }
        std::cout << "wrote ensemble statistics ("
                  << espec.size - stats.excluded_members << " members) to " << uq_out
                  << "\n";
        return 0;
    }

    if (eval->parsed()) {
        Dataset data = load_dataset(eval_data);
        GeoWaveformer model = GeoWaveformer::load(eval_model, data.geometry);
        const auto& channels = model.config().dataset_channels;
        const int k = model.config().window;
        const double train_pct =
            evaluate_split(model, data, channels, data.train_ids, k, eval_horizon);
        const double test_pct =
            evaluate_split(model, data, channels, data.test_ids, k, eval_horizon);

        const std::string table =
            eval_table(fs::path(eval_data).filename().string(), train_pct, test_pct);
        fs::create_directories(eval_out);
        std::ofstream os(eval_out + "/eval.csv");
        os << table;
        std::cout << table;
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
