#include "gwf/uq.hpp"

#include <algorithm>
#include <cmath>

#include "gwf/data.hpp"
#include "gwf/rollout.hpp"

namespace gwf {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

Tensor perturb_initial(const Tensor& u0, const EnsembleSpec& spec,
                       std::uint64_t member_index, std::vector<std::string>* warnings) {
    if (spec.alpha < 0.0) throw ShapeError("perturb_initial: alpha must be >= 0");
    if (u0.rank() != 2) throw ShapeError("perturb_initial: field must be (N, C)");
    const int n = u0.dim(0), C = u0.dim(1);
    if (spec.alpha == 0.0) return Tensor(u0.shape(), u0.values());

    // per-channel std over points
    std::vector<double> sigma(static_cast<size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += u0.at(i * C + c);
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = u0.at(i * C + c) - mean;
            var += d * d;
        }
        sigma[static_cast<size_t>(c)] = std::sqrt(var / n);
        if (sigma[static_cast<size_t>(c)] == 0.0 && warnings)
            warnings->push_back("perturb_initial: channel " + std::to_string(c) +
                                " is constant; no noise added");
    }

    Rng rng(mix64(spec.seed ^ mix64(member_index + 1)));
    Tensor out(u0.shape());
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < C; ++c)
            out.data()[i * C + c] =
                u0.at(i * C + c) +
                rng.normal(0.0, spec.alpha * sigma[static_cast<size_t>(c)]);
    return out;
}

FieldStats ensemble_run(const GeoWaveformer& model, const Tensor& u0_physical,
                        const EnsembleSpec& spec, int horizon,
                        const std::vector<ProbeSpec>& probes,
                        std::vector<std::string>* warnings) {
    if (spec.size < 1) throw ShapeError("ensemble_run: ensemble size must be >= 1");
    if (horizon < 1) throw ShapeError("ensemble_run: horizon must be >= 1");
    if (spec.size == 1 && warnings)
        warnings->push_back("ensemble_run: single member, std is zero by definition");
    for (const auto& p : probes) {
        if (p.point_id < 0 || p.point_id >= u0_physical.dim(0))
            throw ShapeError("ensemble_run: probe point out of range");
        if (p.time_step < 1 || p.time_step > horizon)
            throw ShapeError("ensemble_run: probe time step out of range");
        if (p.channel < 0 || p.channel >= u0_physical.dim(1))
            throw ShapeError("ensemble_run: probe channel out of range");
    }

    NoGradGuard ng;
    const int n = u0_physical.dim(0), C = u0_physical.dim(1);
    const std::int64_t per_step = static_cast<std::int64_t>(n) * C;

    // shifted accumulation anchored on the first accepted member so that a
    // degenerate (alpha = 0) ensemble yields exactly zero std
    std::vector<std::vector<double>> anchor(static_cast<size_t>(horizon));
    std::vector<std::vector<double>> sum_d(static_cast<size_t>(horizon)),
        sum_d2(static_cast<size_t>(horizon));
    std::vector<std::vector<double>> probe_samples(probes.size());

    int accepted = 0, excluded = 0;
    for (int member = 0; member < spec.size; ++member) {
        Tensor u0 = perturb_initial(u0_physical, spec, static_cast<std::uint64_t>(member),
                                    member == 0 ? warnings : nullptr);
        std::vector<Tensor> preds;
        try {
            preds = progressive_predict(model, normalize_field(u0, model.norm()), horizon);
        } catch (const NumericError&) {
            ++excluded;
            continue;
        }
        bool finite = true;
        for (const Tensor& p : preds) finite = finite && p.all_finite();
        if (!finite) {
            ++excluded;
            continue;
        }
        for (int s = 0; s < horizon; ++s) {
            Tensor phys = denormalize_field(preds[static_cast<size_t>(s)], model.norm());
            auto& a = anchor[static_cast<size_t>(s)];
            auto& d1 = sum_d[static_cast<size_t>(s)];
            auto& d2 = sum_d2[static_cast<size_t>(s)];
            if (accepted == 0) {
                a.assign(phys.data(), phys.data() + per_step);
                d1.assign(static_cast<size_t>(per_step), 0.0);
                d2.assign(static_cast<size_t>(per_step), 0.0);
            } else {
                for (std::int64_t i = 0; i < per_step; ++i) {
                    const double d = phys.at(i) - a[static_cast<size_t>(i)];
                    d1[static_cast<size_t>(i)] += d;
                    d2[static_cast<size_t>(i)] += d * d;
                }
            }
            for (size_t pi = 0; pi < probes.size(); ++pi)
                if (probes[pi].time_step == s + 1)
                    probe_samples[pi].push_back(
                        phys.at(static_cast<std::int64_t>(probes[pi].point_id) * C +
                                probes[pi].channel));
        }
        ++accepted;
    }
    if (accepted == 0)
        throw NumericError("ensemble_run: every ensemble member diverged (" +
                           std::to_string(excluded) + " excluded)");

    FieldStats stats;
    stats.excluded_members = excluded;
    const double E = static_cast<double>(accepted);
    for (int s = 0; s < horizon; ++s) {
        Tensor mean({n, C}), sd({n, C});
        const auto& a = anchor[static_cast<size_t>(s)];
        const auto& d1 = sum_d[static_cast<size_t>(s)];
        const auto& d2 = sum_d2[static_cast<size_t>(s)];
        for (std::int64_t i = 0; i < per_step; ++i) {
            const double md = d1[static_cast<size_t>(i)] / E;
            mean.data()[i] = a[static_cast<size_t>(i)] + md;
            const double var = std::max(0.0, d2[static_cast<size_t>(i)] / E - md * md);
            sd.data()[i] = std::sqrt(var);
        }
        stats.mean.push_back(std::move(mean));
        stats.stdev.push_back(std::move(sd));
    }

    constexpr int kBins = 30;
    for (size_t pi = 0; pi < probes.size(); ++pi) {
        const auto& samples = probe_samples[pi];
        ProbePdf pdf;
        pdf.probe = probes[pi];
        if (samples.empty()) {
            stats.pdfs.push_back(std::move(pdf));
            continue;
        }
        double lo = *std::min_element(samples.begin(), samples.end());
        double hi = *std::max_element(samples.begin(), samples.end());
        if (lo == hi) {
            lo -= 0.5;
            hi += 0.5;
        }
        const double w = (hi - lo) / kBins;
        std::vector<int> counts(kBins, 0);
        for (double v : samples) {
            int b = static_cast<int>((v - lo) / w);
            b = std::clamp(b, 0, kBins - 1);
            ++counts[static_cast<size_t>(b)];
        }
        for (int b = 0; b < kBins; ++b) {
            pdf.bin_left.push_back(lo + b * w);
            pdf.bin_right.push_back(lo + (b + 1) * w);
            pdf.density.push_back(static_cast<double>(counts[static_cast<size_t>(b)]) /
                                  (static_cast<double>(samples.size()) * w));
        }
        stats.pdfs.push_back(std::move(pdf));
    }
    return stats;
}

ProbeSpec parse_probe(const std::string& text) {
    // "12@t20" or "12@t20:c1"
    ProbeSpec p;
    const auto at = text.find("@t");
    if (at == std::string::npos)
        throw DataError("parse_probe: expected '<point>@t<step>[:c<channel>]', got '" +
                        text + "'");
    try {
        p.point_id = std::stoi(text.substr(0, at));
        std::string rest = text.substr(at + 2);
        const auto colon = rest.find(":c");
        if (colon != std::string::npos) {
            p.channel = std::stoi(rest.substr(colon + 2));
            rest = rest.substr(0, colon);
        }
        p.time_step = std::stoi(rest);
    } catch (const std::exception&) {
        throw DataError("parse_probe: cannot parse '" + text + "'");
    }
    return p;
}

}  // namespace gwf
