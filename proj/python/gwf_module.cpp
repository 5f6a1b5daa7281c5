#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gwf/data.hpp"
#include "gwf/rollout.hpp"
#include "gwf/train.hpp"
#include "gwf/uq.hpp"
#include "gwf/wavelet.hpp"

namespace py = pybind11;
using namespace gwf;

namespace {

std::vector<Vec3> to_points(const py::array_t<double>& arr) {
    auto buf = arr.unchecked<2>();
    if (buf.shape(1) != 3) throw ShapeError("points array must be (N, 3)");
    std::vector<Vec3> out(static_cast<size_t>(buf.shape(0)));
    for (py::ssize_t i = 0; i < buf.shape(0); ++i)
        out[static_cast<size_t>(i)] = {buf(i, 0), buf(i, 1), buf(i, 2)};
    return out;
}

PointCloud to_cloud(const py::array_t<double>& arr) {
    PointCloud c;
    c.coords = to_points(arr);
    return c;
}

py::array_t<double> field_to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

BoundaryMode mode_of(const std::string& name) {
    if (name == "symmetric") return BoundaryMode::Symmetric;
    if (name == "periodic") return BoundaryMode::Periodic;
    throw ShapeError("mode must be 'symmetric' or 'periodic'");
}

}  // namespace

PYBIND11_MODULE(_gwf, m) {
    m.doc() = "geometry-adaptive waveformer core: wavelet transforms, geometry "
              "kernels, training and roll-out on vascular point clouds";
    m.attr("__version__") = "0.1.0";

    py::register_exception<ShapeError>(m, "GwfShapeError", PyExc_ValueError);
    py::register_exception<DataError>(m, "GwfDataError", PyExc_IOError);
    py::register_exception<NumericError>(m, "GwfNumericError", PyExc_ArithmeticError);

    py::class_<WaveletFilter>(m, "WaveletFilter")
        .def_readonly("order", &WaveletFilter::order)
        .def_readonly("dec_lo", &WaveletFilter::dec_lo)
        .def_readonly("dec_hi", &WaveletFilter::dec_hi)
        .def_readonly("rec_lo", &WaveletFilter::rec_lo)
        .def_readonly("rec_hi", &WaveletFilter::rec_hi);
    m.def("filter_bank", &filter_bank, py::arg("order"),
          "Daubechies filter pair db1..db10");

    py::class_<DwtPlan>(m, "DwtPlan")
        .def(py::init([](std::vector<int> shape, int order, int levels,
                         const std::string& mode) {
                 return DwtPlan(std::move(shape), filter_bank(order), levels,
                                mode_of(mode));
             }),
             py::arg("shape"), py::arg("order") = 4, py::arg("levels") = 1,
             py::arg("mode") = "symmetric")
        .def_property_readonly("coeff_size", &DwtPlan::coeff_size)
        .def_property_readonly("input_size", &DwtPlan::input_size)
        .def("forward",
             [](const DwtPlan& plan, py::array_t<double, py::array::c_style |
                                                             py::array::forcecast> x) {
                 if (x.size() != plan.input_size())
                     throw ShapeError("field size does not match the plan");
                 py::array_t<double> out(std::vector<py::ssize_t>{plan.coeff_size()});
                 plan.forward(x.data(), out.mutable_data());
                 return out;
             },
             py::arg("field"), "separable dyadic decomposition (flat coefficients)")
        .def("inverse",
             [](const DwtPlan& plan, py::array_t<double, py::array::c_style |
                                                             py::array::forcecast> c) {
                 if (c.size() != plan.coeff_size())
                     throw ShapeError("coefficient size does not match the plan");
                 std::vector<py::ssize_t> shape(plan.spatial_shape().begin(),
                                                plan.spatial_shape().end());
                 py::array_t<double> out(shape);
                 plan.inverse(c.data(), out.mutable_data());
                 return out;
             },
             py::arg("coeffs"), "perfect reconstruction back to the field");

    m.def(
        "distance_features",
        [](py::array_t<double> queries, py::array_t<double> cloud) {
            PointCloud c = to_cloud(cloud);
            auto d = distance_features(to_points(queries), c);
            return py::array_t<double>(
                std::vector<py::ssize_t>{static_cast<py::ssize_t>(d.values.size())},
                d.values.data());
        },
        py::arg("queries"), py::arg("cloud"),
        "unsigned distance from each query to the nearest cloud point");

    m.def(
        "riemann_weights",
        [](py::array_t<double> points, int k) {
            PointCloud c = to_cloud(points);
            auto w = riemann_weights(c, k);
            return py::array_t<double>(
                std::vector<py::ssize_t>{static_cast<py::ssize_t>(w.mu.size())},
                w.mu.data());
        },
        py::arg("points"), py::arg("k_density") = 4,
        "inverse local-density quadrature weights");

    m.def(
        "ball_neighbors",
        [](py::array_t<double> queries, py::array_t<double> targets, double r, int cap,
           std::uint64_t seed) {
            auto ns = ball_neighbors(to_points(queries), to_points(targets), r, cap, seed);
            py::list lists;
            for (const auto& l : ns.lists) {
                py::array_t<int> idx(
                    std::vector<py::ssize_t>{static_cast<py::ssize_t>(l.size())});
                for (size_t i = 0; i < l.size(); ++i) idx.mutable_data()[i] = l[i].target;
                lists.append(idx);
            }
            return lists;
        },
        py::arg("queries"), py::arg("targets"), py::arg("radius"), py::arg("cap") = 32,
        py::arg("seed") = 0, "closed-ball neighbor indices per query");

    m.def(
        "relative_mse",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> pred,
           py::array_t<double, py::array::c_style | py::array::forcecast> truth) {
            if (pred.size() != truth.size())
                throw ShapeError("relative_mse: size mismatch");
            Tensor p({static_cast<int>(pred.size())},
                     std::vector<double>(pred.data(), pred.data() + pred.size()));
            Tensor t({static_cast<int>(truth.size())},
                     std::vector<double>(truth.data(), truth.data() + truth.size()));
            return relative_mse({p}, {t});
        },
        py::arg("pred"), py::arg("truth"),
        "||pred - truth||^2 / ||truth||^2 (multiply by 100 for percent)");

    m.def(
        "generate_dataset",
        [](const std::string& out_dir, const std::string& kind, int points, int steps,
           int trajs, int train_count, std::uint64_t seed) {
            SynthConfig cfg;
            cfg.kind = kind == "bifurcation" ? VesselKind::Bifurcation : VesselKind::Tube;
            cfg.n_points = points;
            cfg.n_steps = steps;
            cfg.n_trajectories = trajs;
            cfg.train_count = train_count;
            cfg.seed = seed;
            save_dataset(gen_synthetic(cfg), out_dir);
        },
        py::arg("out_dir"), py::arg("kind") = "tube", py::arg("points") = 64,
        py::arg("steps") = 40, py::arg("trajs") = 32, py::arg("train_count") = 27,
        py::arg("seed") = 0, "synthetic vessel dataset on disk");

    m.def(
        "train",
        [](const std::string& data_dir, const std::string& out_prefix, int epochs,
           int k, int n, int grid, int wavelet, int token, int lift, int width1,
           int width2, double lr, std::uint64_t seed) {
            Dataset data = load_dataset(data_dir);
            WaveformerConfig cfg;
            cfg.grid_resolution = {grid, grid, grid};
            cfg.graph.width1 = width1;
            cfg.graph.width2 = width2;
            cfg.graph.kernel_hidden = std::max(8, width1);
            cfg.graph.cap = 16;
            cfg.graph.cloud_radius_factor = 6.0;
            cfg.graph.seed = seed;
            cfg.field_channels = 1;
            cfg.dataset_channels = {0};
            cfg.window = k;
            cfg.lift_width = lift;
            cfg.lift_hidden = 2 * lift;
            cfg.attention.token_dim = token;
            cfg.attention.num_heads = 4;
            cfg.attention.ff_dim = 2 * token;
            cfg.wavelet_order = wavelet;
            cfg.seed = seed;
            GeoWaveformer model(data.geometry, cfg);
            TrainConfig tcfg;
            tcfg.lr0 = lr;
            tcfg.epochs = epochs;
            tcfg.window = k;
            tcfg.rollout = n;
            tcfg.seed = seed;
            FitReport rep = fit(model, data, cfg.dataset_channels, tcfg);
            model.save(out_prefix);
            write_loss_history_csv(rep, out_prefix + "_loss_history.csv");
            py::dict out;
            out["train_rel_mse_pct"] = rep.final_train_pct;
            out["val_rel_mse_pct"] = rep.final_val_pct;
            return out;
        },
        py::arg("data_dir"), py::arg("out_prefix"), py::arg("epochs") = 2,
        py::arg("k") = 4, py::arg("n") = 3, py::arg("grid") = 4, py::arg("wavelet") = 1,
        py::arg("token") = 16, py::arg("lift") = 6, py::arg("width1") = 8,
        py::arg("width2") = 6, py::arg("lr") = 1e-3, py::arg("seed") = 0,
        "train a model on channel 0 of a dataset directory");

    m.def(
        "predict",
        [](const std::string& model_prefix, const std::string& data_dir,
           const std::string& mode, int horizon, int traj) {
            Dataset data = load_dataset(data_dir);
            GeoWaveformer model = GeoWaveformer::load(model_prefix, data.geometry);
            const auto& channels = model.config().dataset_channels;
            const int k = model.config().window;
            const int id = traj >= 0 ? traj
                           : data.test_ids.empty() ? 0
                                                   : data.test_ids.front();
            const auto& tr = data.trajectories.at(static_cast<size_t>(id));
            NoGradGuard ng;
            std::vector<Tensor> preds;
            if (mode == "window") {
                std::vector<Tensor> window;
                for (int i = 0; i < k; ++i)
                    window.push_back(normalize_field(
                        select_channels(tr.fields.at(static_cast<size_t>(i)), channels),
                        model.norm()));
                preds = predict_steps(model, window, horizon);
            } else {
                Tensor u0 = normalize_field(select_channels(tr.fields.at(0), channels),
                                            model.norm());
                preds = progressive_predict(model, u0, horizon);
            }
            py::array_t<double> out({static_cast<py::ssize_t>(preds.size()),
                                     static_cast<py::ssize_t>(preds[0].dim(0)),
                                     static_cast<py::ssize_t>(preds[0].dim(1))});
            for (size_t s = 0; s < preds.size(); ++s) {
                Tensor phys = denormalize_field(preds[s], model.norm());
                std::copy(phys.data(), phys.data() + phys.size(),
                          out.mutable_data() + static_cast<py::ssize_t>(s) * phys.size());
            }
            return out;
        },
        py::arg("model_prefix"), py::arg("data_dir"), py::arg("mode") = "window",
        py::arg("horizon") = 5, py::arg("traj") = -1,
        "autoregressive prediction, physical units, shape (horizon, N, C)");

    m.def(
        "ensemble",
        [](const std::string& model_prefix, const std::string& data_dir, double alpha,
           int size, int horizon, int traj, std::uint64_t seed) {
            Dataset data = load_dataset(data_dir);
            GeoWaveformer model = GeoWaveformer::load(model_prefix, data.geometry);
            const auto& channels = model.config().dataset_channels;
            const int id = traj >= 0 ? traj
                           : data.test_ids.empty() ? 0
                                                   : data.test_ids.front();
            Tensor u0 = select_channels(
                data.trajectories.at(static_cast<size_t>(id)).fields.at(0), channels);
            EnsembleSpec spec;
            spec.alpha = alpha;
            spec.size = size;
            spec.seed = seed;
            FieldStats st = ensemble_run(model, u0, spec, horizon);
            py::list means, stds;
            for (int s = 0; s < horizon; ++s) {
                means.append(field_to_numpy(st.mean[static_cast<size_t>(s)]));
                stds.append(field_to_numpy(st.stdev[static_cast<size_t>(s)]));
            }
            return py::make_tuple(means, stds);
        },
        py::arg("model_prefix"), py::arg("data_dir"), py::arg("alpha") = 0.01,
        py::arg("size") = 100, py::arg("horizon") = 5, py::arg("traj") = -1,
        py::arg("seed") = 0,
        "Monte Carlo mean/std fields per prediction step (physical units)");
}
